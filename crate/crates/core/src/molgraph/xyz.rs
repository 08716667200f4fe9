use std::fmt::Write as _;

use super::{Atom, Conformer, MolError, Molecule};
use crate::elements;
use crate::geom::Vec3;

/// Parses a single-record XYZ file. The result carries a conformer and no bonds.
///
/// Element symbols are matched case-insensitively; columns after the third
/// coordinate are ignored.
pub fn read_xyz(text: &str) -> Result<Molecule, MolError> {
    let mut lines = text.lines();
    let count_line = lines.next().ok_or(MolError::Parse {
        line: 1,
        message: "missing atom count".into(),
    })?;
    let count: usize = count_line.trim().parse().map_err(|_| MolError::Parse {
        line: 1,
        message: format!("malformed atom count {:?}", count_line.trim()),
    })?;
    // comment line may be absent only for an empty record
    if lines.next().is_none() && count > 0 {
        return Err(MolError::Parse {
            line: 2,
            message: "missing comment line".into(),
        });
    }

    let mut atoms = Vec::with_capacity(count);
    let mut coords = Vec::with_capacity(count);
    for k in 0..count {
        let line_no = k + 3;
        let line = lines.next().ok_or_else(|| MolError::Parse {
            line: line_no,
            message: format!("expected {count} atom lines, found {k}"),
        })?;
        let mut fields = line.split_whitespace();
        let symbol = fields.next().ok_or_else(|| MolError::Parse {
            line: line_no,
            message: "empty atom line".into(),
        })?;
        let z = elements::atomic_number_relaxed(symbol).ok_or_else(|| {
            MolError::UnknownElement {
                symbol: symbol.to_string(),
                line: line_no,
            }
        })?;
        let mut xyz = [0.0; 3];
        for (axis, slot) in xyz.iter_mut().enumerate() {
            let field = fields.next().ok_or_else(|| MolError::Parse {
                line: line_no,
                message: format!("missing coordinate {}", axis + 1),
            })?;
            *slot = field.parse().map_err(|_| MolError::Parse {
                line: line_no,
                message: format!("non-numeric coordinate {field:?}"),
            })?;
        }
        atoms.push(Atom::new(z)?);
        coords.push(Vec3::from_f64(xyz));
    }
    Molecule::new(atoms, Vec::new(), Some(Conformer::new(coords))).map_err(|e| match e {
        MolError::NonFiniteCoordinate(i) => MolError::Parse {
            line: i + 3,
            message: "non-finite coordinate".into(),
        },
        other => other,
    })
}

pub fn write_xyz(mol: &Molecule, comment: &str) -> Result<String, MolError> {
    let coords = mol.coords()?;
    let mut out = String::new();
    let _ = writeln!(out, "{}", mol.atom_count());
    let _ = writeln!(out, "{}", comment.replace('\n', " "));
    for (atom, c) in mol.atoms().iter().zip(coords) {
        let _ = writeln!(
            out,
            "{:<2} {:>15.8} {:>15.8} {:>15.8}",
            atom.symbol(),
            c.x,
            c.y,
            c.z
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atom() {
        let mol = read_xyz("1\n\nC 0.0 0.0 0.0").unwrap();
        assert_eq!(mol.atom_count(), 1);
        assert_eq!(mol.atoms()[0].symbol(), "C");
        assert!(mol.bonds().is_empty());
        assert_eq!(mol.coords().unwrap()[0], Vec3::zero());
    }

    #[test]
    fn water_verbatim() {
        let mol = read_xyz("3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0").unwrap();
        let c = mol.coords().unwrap();
        assert_eq!(c[1], Vec3::new(0.96, 0.0, 0.0));
        assert_eq!(c[2], Vec3::new(-0.24, 0.93, 0.0));
        assert!(mol.bonds().is_empty());
    }

    #[test]
    fn unknown_element_reports_line() {
        let err = read_xyz("2\n\nC 0 0 0\nXq 1 0 0").unwrap_err();
        assert_eq!(
            err,
            MolError::UnknownElement {
                symbol: "Xq".into(),
                line: 4
            }
        );
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            read_xyz("two\n\nC 0 0 0"),
            Err(MolError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_xyz("1\n\nC 0 zero 0"),
            Err(MolError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            read_xyz("2\n\nC 0 0 0"),
            Err(MolError::Parse { line: 4, .. })
        ));
        assert!(matches!(
            read_xyz("1\n\nC 0 0"),
            Err(MolError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let mol = read_xyz("3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0").unwrap();
        let text = write_xyz(&mol, "water").unwrap();
        assert_eq!(read_xyz(&text).unwrap(), mol);
    }
}
