//! Structure-aware vocabulary: every atom token is paired with its
//! structural code, non-atom tokens carry the reserved code -1.
//!
//! Id layout: `atom_index * K + code` for atoms, then non-atom symbols,
//! then the condition characters `0-9 . -`, then BOS, EOS, PAD.
//!
//! Text format, one molecule per line:
//!
//! ```text
//! line  ::= [ "cond=" scalar ] { ws field }
//! field ::= symbol ":" code
//! code  ::= "-1" | digit { digit }
//! ```
//!
//! The symbol is everything before the last `:` of the field.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{molecule_descriptors, DescriptorError};
use crate::frames::{decode_molecule, FrameError, SphericalCoord};
use crate::lineno::{parse_smiles, AtomOrder, LineError, LineSequence, IMPLICIT_H};
use crate::molgraph::Molecule;
use crate::vq::{Quantizer, VqError};

/// Code carried by non-atom tokens.
pub const NON_ATOM_CODE: i64 = -1;
pub const CONDITION_ALPHABET: [char; 12] = ['0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '.', '-'];
pub const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "<pad>"];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("duplicate symbol {0:?}")]
    DuplicateSymbol(String),
    #[error("{0} symbol set is empty")]
    EmptySymbols(&'static str),
    #[error("structural vocabulary size must be at least 1")]
    ZeroCodes,
    #[error("symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(String),
    #[error("code {code} out of range for K = {k}")]
    CodeOutOfRange { code: i64, k: usize },
    #[error("id {id} is outside a vocabulary of {size}")]
    OutOfVocabulary { id: usize, size: usize },
    #[error("condition value {0} is not finite")]
    NonFiniteCondition(f64),
    #[error("{codes} codes for {atoms} atom tokens")]
    CodeCountMismatch { codes: usize, atoms: usize },
    #[error("malformed token stream: {0}")]
    Malformed(String),
    #[error(transparent)]
    Line(#[from] LineError),
    #[error(transparent)]
    Quantizer(#[from] VqError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// One `(symbol, code)` entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructToken {
    pub symbol: String,
    /// In `[0, K)` for atoms, [`NON_ATOM_CODE`] otherwise.
    pub code: i64,
}

impl StructToken {
    pub fn is_atom(&self) -> bool {
        self.code != NON_ATOM_CODE
    }
}

impl fmt::Display for StructToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.symbol, self.code)
    }
}

/// A line-notation token stream with one structural code per atom.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructSequence {
    pub entries: Vec<StructToken>,
}

impl StructSequence {
    /// Pairs atom tokens with `codes` in order.
    pub fn from_line(seq: &LineSequence, codes: &[usize]) -> Result<Self, VocabError> {
        if codes.len() != seq.atom_count() {
            return Err(VocabError::CodeCountMismatch {
                codes: codes.len(),
                atoms: seq.atom_count(),
            });
        }
        let entries = seq
            .tokens()
            .iter()
            .map(|t| StructToken {
                symbol: t.text.clone(),
                code: t.atom_index.map_or(NON_ATOM_CODE, |k| codes[k] as i64),
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn atom_codes(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.is_atom())
            .map(|e| e.code as usize)
            .collect()
    }

    /// Source line notation, skipping expanded hydrogens.
    pub fn line_text(&self) -> String {
        self.entries
            .iter()
            .filter(|e| !(e.is_atom() && e.symbol == IMPLICIT_H))
            .map(|e| e.symbol.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VocabToken {
    Atom { symbol: String, code: usize },
    NonAtom(String),
    Condition(char),
    Bos,
    Eos,
    Pad,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    atom_symbols: Vec<String>,
    structural_size: usize,
    non_atom_symbols: Vec<String>,
    atom_ids: HashMap<String, usize>,
    non_atom_ids: HashMap<String, usize>,
}

fn index_symbols(
    symbols: &[String],
    what: &'static str,
) -> Result<HashMap<String, usize>, VocabError> {
    if symbols.is_empty() {
        return Err(VocabError::EmptySymbols(what));
    }
    let mut map = HashMap::with_capacity(symbols.len());
    for (i, s) in symbols.iter().enumerate() {
        if map.insert(s.clone(), i).is_some() {
            return Err(VocabError::DuplicateSymbol(s.clone()));
        }
    }
    Ok(map)
}

/// Builds the expanded vocabulary. Symbol order is kept as given.
pub fn build_vocab(
    atom_symbols: &[String],
    structural_size: usize,
    non_atom_symbols: &[String],
) -> Result<Vocab, VocabError> {
    if structural_size == 0 {
        return Err(VocabError::ZeroCodes);
    }
    let atom_ids = index_symbols(atom_symbols, "atom")?;
    let non_atom_ids = index_symbols(non_atom_symbols, "non-atom")?;
    if let Some(s) = atom_symbols.iter().find(|s| non_atom_ids.contains_key(*s)) {
        return Err(VocabError::DuplicateSymbol(s.clone()));
    }
    Ok(Vocab {
        atom_symbols: atom_symbols.to_vec(),
        structural_size,
        non_atom_symbols: non_atom_symbols.to_vec(),
        atom_ids,
        non_atom_ids,
    })
}

impl Vocab {
    /// Vocabulary covering every symbol in `sequences`, each set sorted.
    pub fn from_sequences<'a>(
        sequences: impl IntoIterator<Item = &'a LineSequence>,
        structural_size: usize,
    ) -> Result<Self, VocabError> {
        let mut atoms = BTreeSet::new();
        let mut others = BTreeSet::new();
        for seq in sequences {
            for t in seq.tokens() {
                if t.is_atom() {
                    atoms.insert(t.text.clone());
                } else {
                    others.insert(t.text.clone());
                }
            }
        }
        let atoms: Vec<String> = atoms.into_iter().collect();
        let others: Vec<String> = others.into_iter().collect();
        build_vocab(&atoms, structural_size, &others)
    }

    pub fn atom_symbols(&self) -> &[String] {
        &self.atom_symbols
    }

    pub fn non_atom_symbols(&self) -> &[String] {
        &self.non_atom_symbols
    }

    pub fn structural_size(&self) -> usize {
        self.structural_size
    }

    fn non_atom_base(&self) -> usize {
        self.atom_symbols.len() * self.structural_size
    }

    fn condition_base(&self) -> usize {
        self.non_atom_base() + self.non_atom_symbols.len()
    }

    fn special_base(&self) -> usize {
        self.condition_base() + CONDITION_ALPHABET.len()
    }

    pub fn len(&self) -> usize {
        self.special_base() + SPECIALS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bos(&self) -> usize {
        self.special_base()
    }

    pub fn eos(&self) -> usize {
        self.special_base() + 1
    }

    pub fn pad(&self) -> usize {
        self.special_base() + 2
    }

    pub fn atom_id(&self, symbol: &str, code: usize) -> Result<usize, VocabError> {
        let a = *self
            .atom_ids
            .get(symbol)
            .ok_or_else(|| VocabError::UnknownSymbol(symbol.to_string()))?;
        if code >= self.structural_size {
            return Err(VocabError::CodeOutOfRange {
                code: code as i64,
                k: self.structural_size,
            });
        }
        Ok(a * self.structural_size + code)
    }

    pub fn non_atom_id(&self, symbol: &str) -> Result<usize, VocabError> {
        self.non_atom_ids
            .get(symbol)
            .map(|&b| self.non_atom_base() + b)
            .ok_or_else(|| VocabError::UnknownSymbol(symbol.to_string()))
    }

    pub fn condition_id(&self, c: char) -> Result<usize, VocabError> {
        CONDITION_ALPHABET
            .iter()
            .position(|&d| d == c)
            .map(|p| self.condition_base() + p)
            .ok_or_else(|| VocabError::UnknownSymbol(c.to_string()))
    }

    pub fn struct_id(&self, t: &StructToken) -> Result<usize, VocabError> {
        match t.code {
            NON_ATOM_CODE => self.non_atom_id(&t.symbol),
            c if c >= 0 => self.atom_id(&t.symbol, c as usize),
            c => Err(VocabError::CodeOutOfRange {
                code: c,
                k: self.structural_size,
            }),
        }
    }

    pub fn token(&self, id: usize) -> Result<VocabToken, VocabError> {
        if id < self.non_atom_base() {
            let k = self.structural_size;
            Ok(VocabToken::Atom {
                symbol: self.atom_symbols[id / k].clone(),
                code: id % k,
            })
        } else if id < self.condition_base() {
            Ok(VocabToken::NonAtom(
                self.non_atom_symbols[id - self.non_atom_base()].clone(),
            ))
        } else if id < self.special_base() {
            Ok(VocabToken::Condition(CONDITION_ALPHABET[id - self.condition_base()]))
        } else if id == self.bos() {
            Ok(VocabToken::Bos)
        } else if id == self.eos() {
            Ok(VocabToken::Eos)
        } else if id == self.pad() {
            Ok(VocabToken::Pad)
        } else {
            Err(VocabError::OutOfVocabulary {
                id,
                size: self.len(),
            })
        }
    }

    pub fn id(&self, t: &VocabToken) -> Result<usize, VocabError> {
        match t {
            VocabToken::Atom { symbol, code } => self.atom_id(symbol, *code),
            VocabToken::NonAtom(s) => self.non_atom_id(s),
            VocabToken::Condition(c) => self.condition_id(*c),
            VocabToken::Bos => Ok(self.bos()),
            VocabToken::Eos => Ok(self.eos()),
            VocabToken::Pad => Ok(self.pad()),
        }
    }

    /// Display form of an id: `C:32`, `(:-1`, `#-`, or a special name.
    pub fn render(&self, id: usize) -> Result<String, VocabError> {
        Ok(match self.token(id)? {
            VocabToken::Atom { symbol, code } => format!("{symbol}:{code}"),
            VocabToken::NonAtom(s) => format!("{s}:{NON_ATOM_CODE}"),
            VocabToken::Condition(c) => format!("#{c}"),
            VocabToken::Bos => SPECIALS[0].into(),
            VocabToken::Eos => SPECIALS[1].into(),
            VocabToken::Pad => SPECIALS[2].into(),
        })
    }
}

/// Fixed two-decimal rendering split into characters; no leading `+`.
pub fn tokenize_condition(c: f64) -> Result<Vec<char>, VocabError> {
    if !c.is_finite() {
        return Err(VocabError::NonFiniteCondition(c));
    }
    Ok(format!("{c:.2}").chars().collect())
}

pub fn detokenize_condition(chars: &[char]) -> Result<f64, VocabError> {
    let s: String = chars.iter().collect();
    s.parse()
        .map_err(|_| VocabError::Malformed(format!("condition {s:?} is not a number")))
}

/// `[BOS, condition chars..., tokens..., EOS]`.
pub fn encode_struct(
    seq: &StructSequence,
    condition: Option<f64>,
    vocab: &Vocab,
) -> Result<Vec<usize>, VocabError> {
    let mut ids = vec![vocab.bos()];
    if let Some(c) = condition {
        for ch in tokenize_condition(c)? {
            ids.push(vocab.condition_id(ch)?);
        }
    }
    for t in &seq.entries {
        ids.push(vocab.struct_id(t)?);
    }
    ids.push(vocab.eos());
    Ok(ids)
}

pub fn encode_sequence(
    seq: &LineSequence,
    codes: &[usize],
    vocab: &Vocab,
) -> Result<Vec<usize>, VocabError> {
    encode_struct(&StructSequence::from_line(seq, codes)?, None, vocab)
}

/// A decoded id list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decoded {
    /// Condition characters as written, if any.
    pub condition: Option<String>,
    pub sequence: StructSequence,
}

/// Inverse of [`encode_struct`]. Trailing PAD ids after EOS are allowed.
pub fn decode_sequence(ids: &[usize], vocab: &Vocab) -> Result<Decoded, VocabError> {
    let mut tokens = ids.iter().map(|&id| vocab.token(id));
    match tokens.next().transpose()? {
        Some(VocabToken::Bos) => {}
        _ => return Err(VocabError::Malformed("stream must start with BOS".into())),
    }
    let mut out = Decoded::default();
    let mut cond = String::new();
    let mut closed = false;
    for t in tokens {
        let t = t?;
        if closed {
            if t != VocabToken::Pad {
                return Err(VocabError::Malformed("only PAD may follow EOS".into()));
            }
            continue;
        }
        match t {
            VocabToken::Condition(c) if out.sequence.entries.is_empty() => cond.push(c),
            VocabToken::Condition(_) => {
                return Err(VocabError::Malformed(
                    "condition characters must precede the structure".into(),
                ))
            }
            VocabToken::Atom { symbol, code } => out.sequence.entries.push(StructToken {
                symbol,
                code: code as i64,
            }),
            VocabToken::NonAtom(symbol) => out.sequence.entries.push(StructToken {
                symbol,
                code: NON_ATOM_CODE,
            }),
            VocabToken::Eos => closed = true,
            VocabToken::Bos | VocabToken::Pad => {
                return Err(VocabError::Malformed(format!("unexpected {t:?} before EOS")))
            }
        }
    }
    if !closed {
        return Err(VocabError::Malformed("missing EOS".into()));
    }
    if !cond.is_empty() {
        out.condition = Some(cond);
    }
    Ok(out)
}

/// One line of the text format.
pub fn format_line(seq: &StructSequence, condition: Option<f64>) -> Result<String, VocabError> {
    let mut fields = Vec::with_capacity(seq.entries.len() + 1);
    if let Some(c) = condition {
        let chars: String = tokenize_condition(c)?.into_iter().collect();
        fields.push(format!("cond={chars}"));
    }
    fields.extend(seq.entries.iter().map(StructToken::to_string));
    Ok(fields.join(" "))
}

pub fn parse_line(line: &str) -> Result<(StructSequence, Option<f64>), VocabError> {
    let mut fields = line.split_whitespace().peekable();
    let mut condition = None;
    if let Some(v) = fields.peek().and_then(|f| f.strip_prefix("cond=")) {
        let c: f64 = v
            .parse()
            .map_err(|_| VocabError::Malformed(format!("bad condition {v:?}")))?;
        if !c.is_finite() {
            return Err(VocabError::NonFiniteCondition(c));
        }
        condition = Some(c);
        fields.next();
    }
    let entries = fields
        .map(|f| {
            let (symbol, code) = f
                .rsplit_once(':')
                .filter(|(s, _)| !s.is_empty())
                .ok_or_else(|| VocabError::Malformed(format!("field {f:?} is not symbol:code")))?;
            let code: i64 = code
                .parse()
                .map_err(|_| VocabError::Malformed(format!("bad code in {f:?}")))?;
            if code < NON_ATOM_CODE {
                return Err(VocabError::Malformed(format!("negative code in {f:?}")));
            }
            Ok(StructToken {
                symbol: symbol.to_string(),
                code,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((StructSequence { entries }, condition))
}

#[derive(Serialize, Deserialize)]
struct VocabJson {
    atom_symbols: Vec<String>,
    structural_size: usize,
    non_atom_symbols: Vec<String>,
    condition_alphabet: Vec<char>,
    specials: Vec<String>,
    size: usize,
    /// `[id, rendered token]` for every id.
    ids: Vec<(usize, String)>,
}

impl Vocab {
    pub fn to_json(&self) -> String {
        let view = VocabJson {
            atom_symbols: self.atom_symbols.clone(),
            structural_size: self.structural_size,
            non_atom_symbols: self.non_atom_symbols.clone(),
            condition_alphabet: CONDITION_ALPHABET.to_vec(),
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
            size: self.len(),
            ids: (0..self.len())
                .map(|id| (id, self.render(id).expect("id in range")))
                .collect(),
        };
        serde_json::to_string_pretty(&view).expect("vocab serializes")
    }

    /// Rebuilds from JSON and checks the stored id table against the layout.
    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let v: VocabJson =
            serde_json::from_str(text).map_err(|e| VocabError::Malformed(e.to_string()))?;
        let vocab = build_vocab(&v.atom_symbols, v.structural_size, &v.non_atom_symbols)?;
        if v.size != vocab.len() || v.ids.len() != vocab.len() {
            return Err(VocabError::Malformed("id table size disagrees with layout".into()));
        }
        for (id, text) in &v.ids {
            if vocab.render(*id)? != *text {
                return Err(VocabError::Malformed(format!("id {id} maps to {text:?}")));
            }
        }
        Ok(vocab)
    }
}

/// Tokenizes a molecule in line order (as produced by the parser) with
/// its conformer.
pub fn structure_to_sequence(
    mol: &Molecule,
    seq: &LineSequence,
    quantizer: &Quantizer<f64>,
) -> Result<StructSequence, VocabError> {
    let order = AtomOrder::identity(mol.atom_count());
    let descriptors = molecule_descriptors(mol, &order, quantizer.strategy)?;
    let codes = quantizer.encode_batch(&descriptors)?;
    StructSequence::from_line(seq, &codes)
}

/// Rebuilds graph and coordinates from a structural sequence. Only the
/// generation part of each decoded descriptor is used for placement.
pub fn struct_to_structure(
    seq: &StructSequence,
    quantizer: &Quantizer<f64>,
) -> Result<Molecule, VocabError> {
    let text = seq.line_text();
    let (graph, parsed) = parse_smiles(&text)?;
    let symbols: Vec<&str> = parsed.tokens().iter().map(|t| t.text.as_str()).collect();
    let expected: Vec<&str> = seq.entries.iter().map(|e| e.symbol.as_str()).collect();
    let kinds_match = parsed
        .tokens()
        .iter()
        .zip(&seq.entries)
        .all(|(t, e)| t.is_atom() == e.is_atom());
    if symbols != expected || !kinds_match {
        return Err(LineError::Misaligned(format!(
            "token stream does not re-parse to itself: {text:?}"
        ))
        .into());
    }
    let table = quantizer.decode_table();
    let mut coords: Vec<SphericalCoord<f64>> = Vec::with_capacity(graph.atom_count());
    for q in seq.atom_codes() {
        let v = table.get(q).ok_or(VocabError::CodeOutOfRange {
            code: q as i64,
            k: table.len(),
        })?;
        coords.push(v.generation().to_spherical());
    }
    let order = AtomOrder::identity(graph.atom_count());
    let conformer = decode_molecule(&graph, &order, &coords, quantizer.strategy)?;
    Ok(graph
        .with_conformer(conformer)
        .expect("decoder returns one point per atom"))
}

pub fn sequence_to_structure(
    ids: &[usize],
    vocab: &Vocab,
    quantizer: &Quantizer<f64>,
) -> Result<Molecule, VocabError> {
    struct_to_structure(&decode_sequence(ids, vocab)?.sequence, quantizer)
}
