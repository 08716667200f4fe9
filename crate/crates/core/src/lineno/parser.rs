//! Recursive-free SMILES-subset parser.
//!
//! Grammar (EBNF, whitespace not allowed):
//!
//! ```text
//! smiles   = [ atom { chain } ] ;
//! chain    = [ bond ] ( atom | ring ) | "(" [ bond ] atom { chain } ")" ;
//! atom     = organic | aromatic | bracket ;
//! organic  = "B" | "C" | "N" | "O" | "P" | "S" | "F" | "Cl" | "Br" | "I" ;
//! aromatic = "b" | "c" | "n" | "o" | "p" | "s" ;
//! bracket  = "[" symbol [ "H" [ digit ] ] [ charge ] "]" ;
//! symbol   = element | "b" | "c" | "n" | "o" | "p" | "s" | "se" | "as" ;
//! charge   = ( "+" | "-" ) [ digit ] | "++" | "--" ;
//! bond     = "-" | "=" | "#" | ":" ;
//! ring     = digit | "%" digit digit ;
//! ```

use std::collections::BTreeMap;

use super::kekule::{kekulize, KekuleAtom};
use super::{LineError, LineSequence, LineToken};
use crate::elements;
use crate::molgraph::{Atom, Bond, BondOrder, Molecule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Expand implicit and bracket hydrogens into explicit atoms.
    pub expand_hydrogens: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            expand_hydrogens: true,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ParsedAtom {
    pub z: u8,
    pub aromatic: bool,
    pub charge: i8,
    /// `Some` for bracket atoms (explicit count, possibly zero).
    pub bracket_h: Option<u32>,
    pub offset: usize,
}

/// Default-valence table for the organic subset.
pub(crate) fn organic_valences(z: u8) -> &'static [u32] {
    match z {
        5 => &[3],
        6 => &[4],
        7 => &[3, 5],
        8 => &[2],
        15 => &[3, 5],
        16 => &[2, 4, 6],
        9 | 17 | 35 | 53 => &[1],
        _ => &[],
    }
}

/// Valence of a bracket atom adjusted for its formal charge, used only to
/// decide whether an aromatic bracket atom takes part in a double bond.
pub(crate) fn charged_valence(z: u8, charge: i8) -> i32 {
    let q = charge as i32;
    match z {
        5 => 3 - q,
        6 => 4 - q.abs(),
        7 | 15 => 3 + q,
        8 | 16 | 34 => 2 + q,
        33 => 3 + q,
        _ => 0,
    }
}

/// Longest element symbol at the start of `letters`, returning
/// `(atomic number, aromatic, byte length)`.
pub(crate) fn element_prefix(letters: &str) -> Option<(u8, bool, usize)> {
    let bytes = letters.as_bytes();
    let first = *bytes.first()?;
    if first.is_ascii_uppercase() {
        if bytes.len() >= 2 && bytes[1].is_ascii_lowercase() {
            if let Some(z) = elements::atomic_number(&letters[..2]) {
                return Some((z, false, 2));
            }
        }
        return elements::atomic_number(&letters[..1]).map(|z| (z, false, 1));
    }
    for (sym, z) in [("se", 34u8), ("as", 33)] {
        if letters.starts_with(sym) {
            return Some((z, true, 2));
        }
    }
    let z = match first {
        b'b' => 5,
        b'c' => 6,
        b'n' => 7,
        b'o' => 8,
        b'p' => 15,
        b's' => 16,
        _ => return None,
    };
    Some((z, true, 1))
}

pub fn parse_smiles(text: &str) -> Result<(Molecule, LineSequence), LineError> {
    parse_smiles_with(text, ParseOptions::default())
}

struct RingOpen {
    atom: usize,
    bond: Option<(u8, usize)>,
    offset: usize,
}

struct PendingBond {
    order: BondOrder,
    symbol: u8,
    offset: usize,
}

/// Heavy-atom graph straight from the text, before kekulization.
struct RawGraph {
    atoms: Vec<ParsedAtom>,
    /// (a, b, order, explicitly written)
    bonds: Vec<(usize, usize, BondOrder, bool)>,
    tokens: Vec<LineToken>,
}

fn bond_from_symbol(c: u8) -> Option<BondOrder> {
    match c {
        b'-' => Some(BondOrder::Single),
        b'=' => Some(BondOrder::Double),
        b'#' => Some(BondOrder::Triple),
        b':' => Some(BondOrder::Aromatic),
        _ => None,
    }
}

fn scan(text: &str) -> Result<RawGraph, LineError> {
    let bytes = text.as_bytes();
    let mut atoms: Vec<ParsedAtom> = Vec::new();
    let mut bonds: Vec<(usize, usize, BondOrder, bool)> = Vec::new();
    let mut tokens = Vec::new();
    let mut prev: Option<usize> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<PendingBond> = None;
    let mut rings: BTreeMap<u32, RingOpen> = BTreeMap::new();

    let connect = |bonds: &mut Vec<(usize, usize, BondOrder, bool)>,
                   atoms: &[ParsedAtom],
                   a: usize,
                   b: usize,
                   explicit: Option<BondOrder>| {
        let order = explicit.unwrap_or(if atoms[a].aromatic && atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        bonds.push((a, b, order, explicit.is_some()));
    };

    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos];
        let start = pos;
        if let Some(order) = bond_from_symbol(c) {
            if pending.is_some() || prev.is_none() {
                return Err(LineError::DanglingBond { offset: pos });
            }
            pending = Some(PendingBond {
                order,
                symbol: c,
                offset: pos,
            });
            tokens.push(LineToken::non_atom((c as char).to_string()));
            pos += 1;
            continue;
        }
        match c {
            b'(' => {
                let Some(p) = prev else {
                    return Err(LineError::UnbalancedParenthesis { offset: pos });
                };
                if let Some(b) = pending {
                    return Err(LineError::DanglingBond { offset: b.offset });
                }
                branches.push((p, pos));
                tokens.push(LineToken::non_atom("("));
                pos += 1;
            }
            b')' => {
                if let Some(b) = pending {
                    return Err(LineError::DanglingBond { offset: b.offset });
                }
                let Some((p, _)) = branches.pop() else {
                    return Err(LineError::UnbalancedParenthesis { offset: pos });
                };
                // an empty branch "()" leaves prev at the branch point
                prev = Some(p);
                tokens.push(LineToken::non_atom(")"));
                pos += 1;
            }
            b'0'..=b'9' | b'%' => {
                let (label, len) = if c == b'%' {
                    let digits = bytes.get(pos + 1..pos + 3).filter(|d| {
                        d.iter().all(u8::is_ascii_digit)
                    });
                    match digits {
                        Some(d) => (((d[0] - b'0') as u32) * 10 + (d[1] - b'0') as u32, 3),
                        None => {
                            return Err(LineError::UnknownSymbol {
                                symbol: text[pos..].chars().take(3).collect(),
                                offset: pos,
                            })
                        }
                    }
                } else {
                    ((c - b'0') as u32, 1)
                };
                let Some(cur) = prev else {
                    return Err(LineError::InvalidRingClosure {
                        offset: pos,
                        reason: "ring bond before any atom".into(),
                    });
                };
                let here = pending.take().map(|b| (b.symbol, b.offset));
                if let Some(open) = rings.remove(&label) {
                    if open.atom == cur {
                        return Err(LineError::InvalidRingClosure {
                            offset: pos,
                            reason: "atom bonded to itself".into(),
                        });
                    }
                    let explicit = match (open.bond, here) {
                        (Some((a, _)), Some((b, off))) if a != b => {
                            return Err(LineError::InvalidRingClosure {
                                offset: off,
                                reason: "conflicting bond symbols".into(),
                            })
                        }
                        (Some((s, _)), _) | (None, Some((s, _))) => bond_from_symbol(s),
                        (None, None) => None,
                    };
                    let (a, b) = (open.atom.min(cur), open.atom.max(cur));
                    if bonds.iter().any(|&(x, y, _, _)| (x.min(y), x.max(y)) == (a, b)) {
                        return Err(LineError::InvalidRingClosure {
                            offset: pos,
                            reason: "duplicate bond".into(),
                        });
                    }
                    connect(&mut bonds, &atoms, open.atom, cur, explicit);
                } else {
                    rings.insert(
                        label,
                        RingOpen {
                            atom: cur,
                            bond: here,
                            offset: pos,
                        },
                    );
                }
                tokens.push(LineToken::non_atom(&text[pos..pos + len]));
                pos += len;
            }
            b'.' => return Err(LineError::MultiFragment { offset: pos }),
            b'/' | b'\\' => {
                return Err(LineError::Unsupported {
                    what: "directional bond".into(),
                    offset: pos,
                })
            }
            _ => {
                let (atom, len) = if c == b'[' {
                    parse_bracket(text, pos)?
                } else {
                    parse_organic(text, pos)?
                };
                let idx = atoms.len();
                atoms.push(atom);
                tokens.push(LineToken::atom(&text[start..start + len], idx));
                if let Some(p) = prev {
                    connect(&mut bonds, &atoms, p, idx, pending.take().map(|b| b.order));
                } else if let Some(b) = pending {
                    return Err(LineError::DanglingBond { offset: b.offset });
                }
                prev = Some(idx);
                pos += len;
            }
        }
    }
    if let Some(b) = pending {
        return Err(LineError::DanglingBond { offset: b.offset });
    }
    if let Some(&(_, offset)) = branches.first() {
        return Err(LineError::UnbalancedParenthesis { offset });
    }
    if let Some((label, open)) = rings.iter().min_by_key(|(_, o)| o.offset) {
        let label = if *label >= 10 {
            format!("%{label}")
        } else {
            label.to_string()
        };
        return Err(LineError::UnclosedRing {
            label,
            offset: open.offset,
        });
    }
    Ok(RawGraph {
        atoms,
        bonds,
        tokens,
    })
}

fn parse_organic(text: &str, pos: usize) -> Result<(ParsedAtom, usize), LineError> {
    let bytes = text.as_bytes();
    let (z, aromatic, len) = match (bytes[pos], bytes.get(pos + 1)) {
        (b'C', Some(b'l')) => (17, false, 2),
        (b'B', Some(b'r')) => (35, false, 2),
        (b'B', _) => (5, false, 1),
        (b'C', _) => (6, false, 1),
        (b'N', _) => (7, false, 1),
        (b'O', _) => (8, false, 1),
        (b'P', _) => (15, false, 1),
        (b'S', _) => (16, false, 1),
        (b'F', _) => (9, false, 1),
        (b'I', _) => (53, false, 1),
        (b'b', _) => (5, true, 1),
        (b'c', _) => (6, true, 1),
        (b'n', _) => (7, true, 1),
        (b'o', _) => (8, true, 1),
        (b'p', _) => (15, true, 1),
        (b's', _) => (16, true, 1),
        _ => {
            let symbol = text[pos..].chars().next().map(String::from).unwrap_or_default();
            let what = match symbol.as_str() {
                "*" => Some("wildcard atom"),
                "@" => Some("chirality"),
                _ => None,
            };
            return Err(match what {
                Some(what) => LineError::Unsupported {
                    what: what.into(),
                    offset: pos,
                },
                None => LineError::UnknownSymbol {
                    symbol,
                    offset: pos,
                },
            });
        }
    };
    Ok((
        ParsedAtom {
            z,
            aromatic,
            charge: 0,
            bracket_h: None,
            offset: pos,
        },
        len,
    ))
}

fn parse_bracket(text: &str, pos: usize) -> Result<(ParsedAtom, usize), LineError> {
    let close = text[pos..]
        .find(']')
        .map(|k| pos + k)
        .ok_or(LineError::UnknownSymbol {
            symbol: "[".into(),
            offset: pos,
        })?;
    let inner = &text[pos + 1..close];
    let ib = inner.as_bytes();
    let mut k = 0;
    if ib.first().is_some_and(u8::is_ascii_digit) {
        return Err(LineError::Unsupported {
            what: "isotope".into(),
            offset: pos + 1,
        });
    }
    let letters_end = ib
        .iter()
        .position(|c| !c.is_ascii_alphabetic())
        .unwrap_or(ib.len());
    let (z, aromatic, sym_len) =
        element_prefix(&inner[..letters_end]).ok_or_else(|| LineError::UnknownSymbol {
            symbol: inner[..letters_end.max(1).min(inner.len())].to_string(),
            offset: pos + 1,
        })?;
    k += sym_len;
    if ib.get(k) == Some(&b'@') {
        return Err(LineError::Unsupported {
            what: "chirality".into(),
            offset: pos + 1 + k,
        });
    }
    let mut h = 0u32;
    if ib.get(k) == Some(&b'H') {
        k += 1;
        h = 1;
        if let Some(d) = ib.get(k).filter(|d| d.is_ascii_digit()) {
            h = (d - b'0') as u32;
            k += 1;
        }
    }
    let mut charge: i32 = 0;
    if let Some(&sign @ (b'+' | b'-')) = ib.get(k) {
        let unit = if sign == b'+' { 1 } else { -1 };
        k += 1;
        charge = unit;
        if let Some(d) = ib.get(k).filter(|d| d.is_ascii_digit()) {
            charge = unit * (d - b'0') as i32;
            k += 1;
        } else {
            while ib.get(k) == Some(&sign) {
                charge += unit;
                k += 1;
            }
        }
    }
    if k != ib.len() {
        let what = match ib[k] {
            b':' => "atom class",
            b'@' => "chirality",
            _ => "",
        };
        return Err(if what.is_empty() {
            LineError::UnknownSymbol {
                symbol: (ib[k] as char).to_string(),
                offset: pos + 1 + k,
            }
        } else {
            LineError::Unsupported {
                what: what.into(),
                offset: pos + 1 + k,
            }
        });
    }
    Ok((
        ParsedAtom {
            z,
            aromatic,
            charge: charge as i8,
            bracket_h: Some(h),
            offset: pos,
        },
        close - pos + 1,
    ))
}

/// Parses the supported SMILES subset into a graph and its token stream.
pub fn parse_smiles_with(
    text: &str,
    options: ParseOptions,
) -> Result<(Molecule, LineSequence), LineError> {
    let raw = scan(text)?;
    let n = raw.atoms.len();

    let kek_atoms: Vec<KekuleAtom> = raw
        .atoms
        .iter()
        .map(|a| KekuleAtom {
            aromatic: a.aromatic,
            z: a.z,
            charge: a.charge,
            explicit_h: a.bracket_h,
            offset: a.offset,
        })
        .collect();
    let pairs: Vec<(usize, usize, BondOrder)> =
        raw.bonds.iter().map(|&(a, b, o, _)| (a, b, o)).collect();
    let orders = kekulize(&kek_atoms, &pairs)?;

    // hydrogens per heavy atom
    let mut bond_sum = vec![0u32; n];
    for (&(a, b, _), order) in pairs.iter().zip(&orders) {
        let v = order.half_valence() / 2;
        bond_sum[a] += v;
        bond_sum[b] += v;
    }
    let mut h_counts = vec![0u32; n];
    for (i, atom) in raw.atoms.iter().enumerate() {
        h_counts[i] = match atom.bracket_h {
            Some(h) => h,
            None => {
                let vals = organic_valences(atom.z);
                match vals.iter().find(|&&v| v >= bond_sum[i]) {
                    Some(v) => v - bond_sum[i],
                    None => {
                        return Err(LineError::ValenceOverflow {
                            offset: atom.offset,
                            bond_sum: bond_sum[i],
                            max: *vals.last().unwrap_or(&0),
                        })
                    }
                }
            }
        };
    }

    // final atom numbering: each heavy atom followed by its hydrogens
    let mut index_of = vec![0usize; n];
    let mut atoms = Vec::new();
    let mut tokens = Vec::with_capacity(raw.tokens.len());
    let mut bonds = Vec::new();
    let mut heavy = 0;
    for tok in raw.tokens {
        if !tok.is_atom() {
            tokens.push(tok);
            continue;
        }
        let pa = &raw.atoms[heavy];
        let idx = atoms.len();
        index_of[heavy] = idx;
        atoms.push(Atom::with_charge(pa.z, pa.charge).expect("parser yields valid elements"));
        tokens.push(LineToken { atom_index: Some(idx), ..tok });
        if options.expand_hydrogens {
            for _ in 0..h_counts[heavy] {
                let h = atoms.len();
                atoms.push(Atom::new(1).expect("hydrogen"));
                tokens.push(LineToken::implicit_hydrogen(h));
                bonds.push(Bond::new(idx, h, BondOrder::Single));
            }
        }
        heavy += 1;
    }
    for (&(a, b, _), order) in pairs.iter().zip(orders) {
        bonds.push(Bond::new(index_of[a], index_of[b], order));
    }
    bonds.sort_by_key(|b| b.endpoints());

    let mol = Molecule::new(atoms, bonds, None).map_err(|e| LineError::InvalidRingClosure {
        offset: 0,
        reason: e.to_string(),
    })?;
    let seq = LineSequence::from_tokens(tokens)?;
    debug_assert_eq!(seq.source_text(), text);
    Ok((mol, seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::BondOrder;

    fn no_h() -> ParseOptions {
        ParseOptions {
            expand_hydrogens: false,
        }
    }

    fn symbols(seq: &LineSequence) -> Vec<&str> {
        seq.atom_tokens().map(|t| t.text.as_str()).collect()
    }

    fn bond_keys(mol: &Molecule) -> Vec<(usize, usize)> {
        mol.bonds().iter().map(|b| b.endpoints()).collect()
    }

    #[test]
    fn chain_without_hydrogens() {
        let (mol, seq) = parse_smiles_with("CCO", no_h()).unwrap();
        assert_eq!(mol.atom_count(), 3);
        assert_eq!(bond_keys(&mol), vec![(0, 1), (1, 2)]);
        assert_eq!(symbols(&seq), vec!["C", "C", "O"]);
    }

    #[test]
    fn triangle_ring() {
        let (mol, seq) = parse_smiles_with("C1CC1", no_h()).unwrap();
        assert_eq!(mol.atom_count(), 3);
        assert_eq!(bond_keys(&mol), vec![(0, 1), (0, 2), (1, 2)]);
        let texts: Vec<_> = seq.tokens().iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["C", "1", "C", "C", "1"]);
    }

    #[test]
    fn unclosed_ring() {
        assert_eq!(
            parse_smiles("C1CC").unwrap_err(),
            LineError::UnclosedRing {
                label: "1".into(),
                offset: 1
            }
        );
    }

    #[test]
    fn ethanol_hydrogen_expansion() {
        // valence table {C: 4, O: 2} minus heavy bond degrees: 3, 2, 1 hydrogens
        let (mol, seq) = parse_smiles("CCO").unwrap();
        assert_eq!(mol.atom_count(), 9);
        assert_eq!(
            symbols(&seq),
            vec!["C", "H", "H", "H", "C", "H", "H", "O", "H"]
        );
        for h in [1, 2, 3] {
            assert!(mol.bond_between(0, h).is_some());
        }
        for h in [5, 6] {
            assert!(mol.bond_between(4, h).is_some());
        }
        assert!(mol.bond_between(7, 8).is_some());
        assert!(mol.bond_between(0, 4).is_some());
        assert!(mol.bond_between(4, 7).is_some());
        assert_eq!(mol.bonds().len(), 8);
        assert!(mol.ensure_connected().is_ok());
        assert_eq!(seq.source_text(), "CCO");
    }

    #[test]
    fn branches_and_bond_orders() {
        let (mol, _) = parse_smiles_with("CC(=O)O", no_h()).unwrap();
        assert_eq!(mol.bond_between(1, 2).unwrap().order, BondOrder::Double);
        assert_eq!(mol.bond_between(1, 3).unwrap().order, BondOrder::Single);
        let (mol, _) = parse_smiles("C#N").unwrap();
        assert_eq!(mol.atom_count(), 3);
        assert_eq!(mol.bond_between(0, 2).unwrap().order, BondOrder::Triple);
    }

    #[test]
    fn bracket_atoms() {
        let (mol, seq) = parse_smiles("[NH4+]").unwrap();
        assert_eq!(mol.atom_count(), 5);
        assert_eq!(mol.atoms()[0].formal_charge, 1);
        assert_eq!(symbols(&seq)[0], "[NH4+]");
        let (mol, _) = parse_smiles("C[O-]").unwrap();
        assert_eq!(mol.atoms()[4].formal_charge, -1);
        assert_eq!(mol.atom_count(), 5);
        let (mol, _) = parse_smiles("[Fe++]").unwrap();
        assert_eq!(mol.atoms()[0].formal_charge, 2);
        let (mol, _) = parse_smiles("[Cl-]").unwrap();
        assert_eq!(mol.atoms()[0].symbol(), "Cl");
        assert_eq!(mol.atoms()[0].formal_charge, -1);
    }

    #[test]
    fn benzene_kekulized() {
        let (mol, _) = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(mol.atom_count(), 12);
        let doubles = mol
            .bonds()
            .iter()
            .filter(|b| b.order == BondOrder::Double)
            .count();
        assert_eq!(doubles, 3);
        let (mol, _) = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(mol.atom_count(), 10);
        let (mol, _) = parse_smiles("c1ccncc1").unwrap();
        assert_eq!(mol.atom_count(), 11);
    }

    #[test]
    fn error_offsets() {
        assert_eq!(
            parse_smiles("CC(C").unwrap_err(),
            LineError::UnbalancedParenthesis { offset: 2 }
        );
        assert_eq!(
            parse_smiles("CC)C").unwrap_err(),
            LineError::UnbalancedParenthesis { offset: 2 }
        );
        assert_eq!(
            parse_smiles("CCX").unwrap_err(),
            LineError::UnknownSymbol {
                symbol: "X".into(),
                offset: 2
            }
        );
        assert_eq!(
            parse_smiles("CC(C)(C)(C)C").unwrap_err(),
            LineError::ValenceOverflow {
                offset: 1,
                bond_sum: 5,
                max: 4
            }
        );
        assert_eq!(
            parse_smiles("C=O=C=O=C").unwrap_err().offset(),
            Some(2)
        );
        assert_eq!(
            parse_smiles("c1cccc1").unwrap_err(),
            LineError::Kekulization { offset: 0 }
        );
        assert_eq!(
            parse_smiles("CC.O").unwrap_err(),
            LineError::MultiFragment { offset: 2 }
        );
        assert_eq!(
            parse_smiles("C=").unwrap_err(),
            LineError::DanglingBond { offset: 1 }
        );
        assert!(matches!(
            parse_smiles("[13CH4]").unwrap_err(),
            LineError::Unsupported { offset: 1, .. }
        ));
        assert!(matches!(
            parse_smiles("C[C@H](N)O").unwrap_err(),
            LineError::Unsupported { offset: 3, .. }
        ));
        assert!(matches!(
            parse_smiles("F/C=C/F").unwrap_err(),
            LineError::Unsupported { offset: 1, .. }
        ));
    }

    #[test]
    fn percent_ring_labels() {
        let (mol, seq) = parse_smiles_with("C%10CCC%10", no_h()).unwrap();
        assert_eq!(mol.bonds().len(), 4);
        assert_eq!(seq.tokens()[1].text, "%10");
        assert_eq!(
            parse_smiles("C%10CC").unwrap_err(),
            LineError::UnclosedRing {
                label: "%10".into(),
                offset: 1
            }
        );
    }

    #[test]
    fn ring_bond_symbols() {
        let (mol, _) = parse_smiles_with("C=1CCC1", no_h()).unwrap();
        assert_eq!(mol.bond_between(0, 3).unwrap().order, BondOrder::Double);
        assert!(parse_smiles("C=1CCC#1").is_err());
        assert!(parse_smiles("C11").is_err());
        assert!(parse_smiles("C12CC12").is_err());
    }

    #[test]
    fn hypervalent_organic() {
        let (mol, _) = parse_smiles("CS(=O)(=O)C").unwrap();
        // S at valence 6, no hydrogens
        assert_eq!(mol.atom_count(), 3 + 2 + 6);
        let (mol, _) = parse_smiles("CP(C)C").unwrap();
        assert_eq!(mol.atom_count(), 4 + 9);
    }
}
