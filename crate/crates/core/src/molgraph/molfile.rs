//! MOL V2000 subset: header, counts line, atom block, bond block, `M  CHG`.

use std::fmt::Write as _;

use super::{Atom, Bond, BondOrder, Conformer, MolError, Molecule};
use crate::elements;
use crate::geom::Vec3;

const PROGRAM_LINE: &str = "     mstk          3D";

pub fn read_molblock(text: &str) -> Result<Molecule, MolError> {
    read_molblock_titled(text).map(|(_, mol)| mol)
}

/// Parses one MOL block and returns its title line alongside the molecule.
pub fn read_molblock_titled(text: &str) -> Result<(String, Molecule), MolError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 4 {
        return Err(MolError::Parse {
            line: lines.len() + 1,
            message: "truncated header".into(),
        });
    }
    let title = lines[0].trim_end().to_string();
    let counts = lines[3];
    if counts.contains("V3000") {
        return Err(MolError::Parse {
            line: 4,
            message: "V3000 blocks are not supported".into(),
        });
    }
    let natoms = fixed_usize(counts, 0, 4, "atom count")?;
    let nbonds = fixed_usize(counts, 3, 4, "bond count")?;

    let mut atoms = Vec::with_capacity(natoms);
    let mut coords = Vec::with_capacity(natoms);
    for k in 0..natoms {
        let line_no = 5 + k;
        let line = block_line(&lines, line_no).ok_or_else(|| {
            MolError::CountsMismatch(format!("declared {natoms} atoms, found {k}"))
        })?;
        let (xyz, symbol, charge_code) = parse_atom_line(line, line_no)?;
        let z = elements::atomic_number_relaxed(symbol).ok_or_else(|| MolError::UnknownElement {
            symbol: symbol.to_string(),
            line: line_no,
        })?;
        atoms.push(Atom::with_charge(z, charge_from_code(charge_code))?);
        coords.push(Vec3::from_f64(xyz));
    }

    let mut bonds = Vec::with_capacity(nbonds);
    for k in 0..nbonds {
        let line_no = 5 + natoms + k;
        let line = block_line(&lines, line_no).ok_or_else(|| {
            MolError::CountsMismatch(format!("declared {nbonds} bonds, found {k}"))
        })?;
        let a = fixed_usize(line, 0, line_no, "bond atom")?;
        let b = fixed_usize(line, 3, line_no, "bond atom")?;
        let code = fixed_usize(line, 6, line_no, "bond type")?;
        for idx in [a, b] {
            if idx == 0 || idx > natoms {
                return Err(MolError::BondIndexOutOfRange {
                    bond: k,
                    index: idx,
                    atoms: natoms,
                });
            }
        }
        let order = u8::try_from(code)
            .ok()
            .and_then(BondOrder::from_mol_code)
            .ok_or_else(|| MolError::Parse {
                line: line_no,
                message: format!("unsupported bond type {code}"),
            })?;
        bonds.push(Bond::new(a - 1, b - 1, order));
    }

    // property block: M  CHG resets every atom-block charge
    let mut saw_chg = false;
    let mut end_found = false;
    for (offset, line) in lines.iter().enumerate().skip(4 + natoms + nbonds) {
        let line_no = offset + 1;
        if line.starts_with("M  END") {
            end_found = true;
            break;
        }
        if let Some(rest) = line.strip_prefix("M  CHG") {
            if !saw_chg {
                for atom in &mut atoms {
                    atom.formal_charge = 0;
                }
                saw_chg = true;
            }
            let fields: Vec<i64> = rest
                .split_whitespace()
                .map(|f| {
                    f.parse().map_err(|_| MolError::Parse {
                        line: line_no,
                        message: format!("bad M  CHG field {f:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            let n = *fields.first().unwrap_or(&0) as usize;
            if fields.len() != 1 + 2 * n {
                return Err(MolError::Parse {
                    line: line_no,
                    message: "M  CHG entry count mismatch".into(),
                });
            }
            for pair in fields[1..].chunks(2) {
                let idx = pair[0] as usize;
                if idx == 0 || idx > natoms {
                    return Err(MolError::Parse {
                        line: line_no,
                        message: format!("M  CHG atom {idx} out of range"),
                    });
                }
                atoms[idx - 1].formal_charge = pair[1] as i8;
            }
        } else if is_block_terminator(line) {
            // counts said we were done; anything else here is an overlong block
            return Err(MolError::CountsMismatch(format!(
                "unexpected record content at line {line_no}"
            )));
        }
    }
    if !end_found {
        return Err(MolError::Parse {
            line: lines.len(),
            message: "missing M  END".into(),
        });
    }
    let mol = Molecule::new(atoms, bonds, Some(Conformer::new(coords)))?;
    Ok((title, mol))
}

/// Atom or bond lines must not run into the property block or record end.
fn block_line<'a>(lines: &[&'a str], line_no: usize) -> Option<&'a str> {
    let line = *lines.get(line_no - 1)?;
    if line.starts_with("M  ") || line.starts_with("$$$$") {
        None
    } else {
        Some(line)
    }
}

/// A bond-shaped line after the declared bond block means the counts line lied.
fn is_block_terminator(line: &str) -> bool {
    !line.starts_with("M  ")
        && [0, 3, 6]
            .iter()
            .all(|&s| line.get(s..s + 3).is_some_and(|f| f.trim().parse::<usize>().is_ok()))
}

fn fixed_usize(line: &str, start: usize, line_no: usize, what: &str) -> Result<usize, MolError> {
    let field = line.get(start..(start + 3).min(line.len())).unwrap_or("").trim();
    field.parse().map_err(|_| MolError::Parse {
        line: line_no,
        message: format!("malformed {what} {field:?}"),
    })
}

fn parse_atom_line(line: &str, line_no: usize) -> Result<([f64; 3], &str, i64), MolError> {
    let num = |s: &str| -> Result<f64, MolError> {
        s.trim().parse().map_err(|_| MolError::Parse {
            line: line_no,
            message: format!("non-numeric coordinate {:?}", s.trim()),
        })
    };
    if line.len() >= 34 && line.is_char_boundary(34) {
        let xyz = [num(&line[0..10])?, num(&line[10..20])?, num(&line[20..30])?];
        let symbol = line[31..34].trim();
        let charge = line
            .get(36..39)
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        return Ok((xyz, symbol, charge));
    }
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(MolError::Parse {
            line: line_no,
            message: "short atom line".into(),
        });
    }
    let xyz = [num(fields[0])?, num(fields[1])?, num(fields[2])?];
    let charge = fields.get(5).and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok((xyz, fields[3], charge))
}

fn charge_from_code(code: i64) -> i8 {
    match code {
        1 => 3,
        2 => 2,
        3 => 1,
        5 => -1,
        6 => -2,
        7 => -3,
        _ => 0,
    }
}

fn code_from_charge(charge: i8) -> u8 {
    match charge {
        3 => 1,
        2 => 2,
        1 => 3,
        -1 => 5,
        -2 => 6,
        -3 => 7,
        _ => 0,
    }
}

pub fn write_molblock(mol: &Molecule, title: &str) -> Result<String, MolError> {
    let coords = mol.coords()?;
    let mut out = String::new();
    let _ = writeln!(out, "{}", title.replace('\n', " "));
    let _ = writeln!(out, "{PROGRAM_LINE}");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000",
        mol.atom_count(),
        mol.bonds().len()
    );
    for (atom, c) in mol.atoms().iter().zip(coords) {
        let _ = writeln!(
            out,
            "{:>10.4}{:>10.4}{:>10.4} {:<3} 0{:>3}  0  0  0  0  0  0  0  0  0  0",
            c.x,
            c.y,
            c.z,
            atom.symbol(),
            code_from_charge(atom.formal_charge)
        );
    }
    for bond in mol.bonds() {
        let (a, b) = bond.endpoints();
        let _ = writeln!(out, "{:>3}{:>3}{:>3}  0", a + 1, b + 1, bond.order.mol_code());
    }
    let charged: Vec<(usize, i8)> = mol
        .atoms()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.formal_charge != 0)
        .map(|(i, a)| (i + 1, a.formal_charge))
        .collect();
    for chunk in charged.chunks(8) {
        let _ = write!(out, "M  CHG{:>3}", chunk.len());
        for (idx, q) in chunk {
            let _ = write!(out, "{idx:>4}{q:>4}");
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "M  END");
    Ok(out)
}

/// Splits concatenated MOL blocks on `$$$$` lines; each record parses independently.
pub fn read_sdf(text: &str) -> Vec<Result<(String, Molecule), MolError>> {
    let mut records = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.starts_with("$$$$") {
            records.push(read_molblock_titled(&current));
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        records.push(read_molblock_titled(&current));
    }
    records
}

pub fn write_sdf<'a>(
    records: impl IntoIterator<Item = (&'a str, &'a Molecule)>,
) -> Result<String, MolError> {
    let mut out = String::new();
    for (title, mol) in records {
        out.push_str(&write_molblock(mol, title)?);
        out.push_str("$$$$\n");
    }
    Ok(out)
}
