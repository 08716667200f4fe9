//! Line notation: a SMILES subset parsed into an ordered stream of atom and
//! non-atom tokens that stays aligned with the molecular graph.
//!
//! Implicit hydrogens are expanded into explicit atoms. Each one is emitted
//! as an atom token with text `"H"` directly after its heavy atom and is
//! skipped on serialization, so `serialize(parse(s)) == s` always holds.
//! The organic subset never spells a bare `H`, which keeps the symbol
//! unambiguous in token streams.

mod kekule;
mod parser;
mod writer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::Molecule;

pub use parser::{parse_smiles, parse_smiles_with, ParseOptions};
pub use writer::write_smiles;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LineError {
    #[error("unbalanced parenthesis at offset {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unclosed ring bond \"{label}\" at offset {offset}")]
    UnclosedRing { label: String, offset: usize },
    #[error("unknown symbol {symbol:?} at offset {offset}")]
    UnknownSymbol { symbol: String, offset: usize },
    #[error("valence overflow on atom at offset {offset}: bond order sum {bond_sum} exceeds {max}")]
    ValenceOverflow {
        offset: usize,
        bond_sum: u32,
        max: u32,
    },
    #[error("cannot kekulize aromatic system containing the atom at offset {offset}")]
    Kekulization { offset: usize },
    #[error("unsupported feature {what} at offset {offset}")]
    Unsupported { what: String, offset: usize },
    #[error("misplaced bond symbol at offset {offset}")]
    DanglingBond { offset: usize },
    #[error("invalid ring closure at offset {offset}: {reason}")]
    InvalidRingClosure { offset: usize, reason: String },
    #[error("'.' at offset {offset}: multi-fragment input is not supported")]
    MultiFragment { offset: usize },
    #[error("line notation and molecule are misaligned: {0}")]
    Misaligned(String),
    #[error("cannot write line notation: {0}")]
    Unwritable(String),
}

impl LineError {
    /// Byte offset into the source text, when the error is positional.
    pub fn offset(&self) -> Option<usize> {
        match self {
            LineError::UnbalancedParenthesis { offset }
            | LineError::UnclosedRing { offset, .. }
            | LineError::UnknownSymbol { offset, .. }
            | LineError::ValenceOverflow { offset, .. }
            | LineError::Kekulization { offset }
            | LineError::Unsupported { offset, .. }
            | LineError::DanglingBond { offset }
            | LineError::InvalidRingClosure { offset, .. }
            | LineError::MultiFragment { offset } => Some(*offset),
            LineError::Misaligned(_) | LineError::Unwritable(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Atom,
    NonAtom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineToken {
    pub kind: TokenKind,
    pub text: String,
    /// Set exactly for atom tokens; the k-th atom token carries index k.
    pub atom_index: Option<usize>,
    /// Expanded hydrogen that does not appear in the source text.
    pub implicit: bool,
}

impl LineToken {
    pub fn atom(text: impl Into<String>, index: usize) -> Self {
        Self {
            kind: TokenKind::Atom,
            text: text.into(),
            atom_index: Some(index),
            implicit: false,
        }
    }

    pub fn implicit_hydrogen(index: usize) -> Self {
        Self {
            kind: TokenKind::Atom,
            text: IMPLICIT_H.to_string(),
            atom_index: Some(index),
            implicit: true,
        }
    }

    pub fn non_atom(text: impl Into<String>) -> Self {
        Self {
            kind: TokenKind::NonAtom,
            text: text.into(),
            atom_index: None,
            implicit: false,
        }
    }

    pub fn is_atom(&self) -> bool {
        self.kind == TokenKind::Atom
    }
}

/// Symbol used for expanded hydrogens in token streams.
pub const IMPLICIT_H: &str = "H";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSequence {
    tokens: Vec<LineToken>,
    source_text: String,
}

impl LineSequence {
    /// Builds a sequence from tokens, checking atom-index alignment.
    pub fn from_tokens(tokens: Vec<LineToken>) -> Result<Self, LineError> {
        let mut next = 0;
        for (pos, tok) in tokens.iter().enumerate() {
            match (tok.kind, tok.atom_index) {
                (TokenKind::Atom, Some(k)) if k == next => next += 1,
                (TokenKind::NonAtom, None) if !tok.implicit => {}
                _ => {
                    return Err(LineError::Misaligned(format!(
                        "token {pos} ({:?}) breaks the atom-index order",
                        tok.text
                    )))
                }
            }
        }
        let source_text = serialize_tokens(&tokens);
        Ok(Self {
            tokens,
            source_text,
        })
    }

    pub fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            source_text: String::new(),
        }
    }

    pub fn tokens(&self) -> &[LineToken] {
        &self.tokens
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn atom_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_atom()).count()
    }

    pub fn atom_tokens(&self) -> impl Iterator<Item = &LineToken> {
        self.tokens.iter().filter(|t| t.is_atom())
    }
}

fn serialize_tokens(tokens: &[LineToken]) -> String {
    tokens
        .iter()
        .filter(|t| !t.implicit)
        .map(|t| t.text.as_str())
        .collect()
}

/// Concatenates the text of every token that appears in the source string.
pub fn serialize(seq: &LineSequence) -> String {
    serialize_tokens(&seq.tokens)
}

/// Element carried by an atom token: organic-subset symbol, aromatic
/// lower-case symbol, bracket expression, or an expanded hydrogen.
pub fn token_element(text: &str) -> Option<u8> {
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .unwrap_or(text);
    let letters: String = inner.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    parser::element_prefix(&letters).map(|(z, _, _)| z)
}

/// Maps line-notation positions to molecule atom indices: position `k` is
/// atom `order[k]` of the molecule it was computed for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomOrder(Vec<usize>);

impl AtomOrder {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn from_vec(order: Vec<usize>) -> Result<Self, LineError> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(LineError::Misaligned(format!(
                    "mapping is not a permutation of 0..{n}"
                )));
            }
        }
        Ok(Self(order))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(k, &i)| k == i)
    }

    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.0.len()];
        for (k, &i) in self.0.iter().enumerate() {
            inv[i] = k;
        }
        inv
    }

    /// The molecule relabeled into line-notation order.
    pub fn apply(&self, mol: &Molecule) -> Molecule {
        if self.is_identity() {
            mol.clone()
        } else {
            mol.permuted(&self.0)
        }
    }
}

/// Reads a whitespace-separated list of 0-based atom indices, one per
/// line-notation atom position.
pub fn parse_mapping(text: &str) -> Result<AtomOrder, LineError> {
    let order = text
        .split_whitespace()
        .map(|f| {
            f.parse::<usize>()
                .map_err(|_| LineError::Misaligned(format!("bad mapping entry {f:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    AtomOrder::from_vec(order)
}

/// Permutation from molecule atom indices to line-notation positions.
///
/// Without an explicit mapping the molecule must already be in token order
/// (the case for parser output). Element symbols are checked either way.
pub fn canonical_atom_order(
    mol: &Molecule,
    seq: &LineSequence,
    mapping: Option<&AtomOrder>,
) -> Result<AtomOrder, LineError> {
    let n = mol.atom_count();
    if seq.atom_count() != n {
        return Err(LineError::Misaligned(format!(
            "{} atom tokens for {n} atoms",
            seq.atom_count()
        )));
    }
    let order = match mapping {
        Some(m) if m.len() != n => {
            return Err(LineError::Misaligned(format!(
                "mapping has {} entries for {n} atoms",
                m.len()
            )))
        }
        Some(m) => m.clone(),
        None => AtomOrder::identity(n),
    };
    for (pos, tok) in seq.atom_tokens().enumerate() {
        let atom = &mol.atoms()[order.0[pos]];
        if token_element(&tok.text) != Some(atom.atomic_number()) {
            return Err(LineError::Misaligned(format!(
                "position {pos} is {:?} but atom {} is {}",
                tok.text,
                order.0[pos],
                atom.symbol()
            )));
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{read_molblock, Atom, Bond, BondOrder};

    #[test]
    fn serialize_round_trips() {
        for s in ["CC(=O)O", "C1CC1", "c1ccccc1", "[NH4+]", "C%12CC%12"] {
            let (_, seq) = parse_smiles(s).unwrap();
            assert_eq!(serialize(&seq), s);
            assert_eq!(seq.source_text(), s);
        }
    }

    #[test]
    fn serialize_empty() {
        assert_eq!(serialize(&LineSequence::empty()), "");
        let (mol, seq) = parse_smiles("").unwrap();
        assert_eq!(mol.atom_count(), 0);
        assert_eq!(serialize(&seq), "");
    }

    #[test]
    fn token_elements() {
        assert_eq!(token_element("Cl"), Some(17));
        assert_eq!(token_element("c"), Some(6));
        assert_eq!(token_element("[NH4+]"), Some(7));
        assert_eq!(token_element("[se]"), Some(34));
        assert_eq!(token_element("H"), Some(1));
        assert_eq!(token_element("("), None);
    }

    #[test]
    fn parser_output_is_identity_ordered() {
        let (mol, seq) = parse_smiles("CCO").unwrap();
        let order = canonical_atom_order(&mol, &seq, None).unwrap();
        assert!(order.is_identity());
        assert_eq!(order.len(), 9);
    }

    #[test]
    fn explicit_mapping_is_applied() {
        // MOL file lists O first, then the two carbons (heavy atoms only)
        let text = "\n\n\n  3  2  0  0  0  0  0  0  0  0999 V2000\n    2.0000    0.0000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0\n    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0\n    1.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0\n  1  3  1  0\n  2  3  1  0\nM  END\n";
        let mol = read_molblock(text).unwrap();
        let (_, seq) = parse_smiles_with(
            "CCO",
            ParseOptions {
                expand_hydrogens: false,
            },
        )
        .unwrap();
        let mapping = parse_mapping("1 2 0").unwrap();
        let order = canonical_atom_order(&mol, &seq, Some(&mapping)).unwrap();
        assert_eq!(order.as_slice(), &[1, 2, 0]);
        let ordered = order.apply(&mol);
        assert_eq!(ordered.atoms()[2].symbol(), "O");
        assert_eq!(ordered.coords().unwrap()[2].x, 2.0);
        assert!(ordered.bond_between(0, 1).is_some());
        assert!(ordered.bond_between(1, 2).is_some());

        // without the mapping, element check fails
        assert!(canonical_atom_order(&mol, &seq, None).is_err());
    }

    #[test]
    fn mismatched_counts_rejected() {
        let mol = Molecule::new(
            vec![Atom::new(6).unwrap(), Atom::new(6).unwrap()],
            vec![Bond::new(0, 1, BondOrder::Single)],
            None,
        )
        .unwrap();
        let (_, seq) = parse_smiles("CCO").unwrap();
        assert!(matches!(
            canonical_atom_order(&mol, &seq, None),
            Err(LineError::Misaligned(_))
        ));
    }

    #[test]
    fn mapping_must_be_permutation() {
        assert!(parse_mapping("0 0 1").is_err());
        assert!(parse_mapping("0 3 1").is_err());
        assert!(parse_mapping("0 x").is_err());
    }
}
