use super::{Bond, BondOrder, MolError, Molecule};
use crate::elements::covalent_radius;

/// Added to the summed covalent radii when deciding whether two atoms are bonded.
///
/// Local convention (0.4 A); it reproduces single-bond detection on small
/// organic DFT geometries and is not tuned further.
pub const BOND_MARGIN: f64 = 0.4;

/// Replaces the bond list with distance-cutoff single bonds.
///
/// Atoms `i` and `j` are bonded iff their distance is at most
/// `r_cov(i) + r_cov(j) + BOND_MARGIN`.
pub fn infer_bonds(mol: &Molecule) -> Result<Molecule, MolError> {
    let coords = mol.coords()?;
    let atoms = mol.atoms();
    let mut bonds = Vec::new();
    for i in 0..atoms.len() {
        let ri = covalent_radius(atoms[i].atomic_number());
        for j in (i + 1)..atoms.len() {
            let cutoff = ri + covalent_radius(atoms[j].atomic_number()) + BOND_MARGIN;
            if coords[i].distance(coords[j]) <= cutoff {
                bonds.push(Bond::new(i, j, BondOrder::Single));
            }
        }
    }
    mol.clone().with_bonds(bonds)
}
