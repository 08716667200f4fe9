//! Molecular graph with an optional conformer, plus XYZ / MOL V2000 ingestion.

mod bonds;
mod molfile;
mod xyz;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elements;
use crate::geom::Vec3;

pub use bonds::{infer_bonds, BOND_MARGIN};
pub use molfile::{read_molblock, read_molblock_titled, read_sdf, write_molblock, write_sdf};
pub use xyz::{read_xyz, write_xyz};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MolError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown element \"{symbol}\" (line {line})")]
    UnknownElement { symbol: String, line: usize },
    #[error("counts mismatch: {0}")]
    CountsMismatch(String),
    #[error("bond {bond} references atom {index} but the molecule has {atoms} atoms")]
    BondIndexOutOfRange { bond: usize, index: usize, atoms: usize },
    #[error("bond {bond} connects atom {index} to itself")]
    SelfBond { bond: usize, index: usize },
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("atomic number {0} outside 1..=118")]
    InvalidAtomicNumber(u8),
    #[error("conformer has {coords} coordinates for {atoms} atoms")]
    ConformerLength { coords: usize, atoms: usize },
    #[error("non-finite coordinate for atom {0}")]
    NonFiniteCoordinate(usize),
    #[error("molecule has no conformer")]
    MissingConformer,
    #[error("molecule has {0} disconnected fragments; only single-fragment molecules are supported")]
    Disconnected(usize),
    #[error("molecule has no atoms")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    atomic_number: u8,
    pub formal_charge: i8,
}

impl Atom {
    pub fn new(atomic_number: u8) -> Result<Self, MolError> {
        Self::with_charge(atomic_number, 0)
    }

    pub fn with_charge(atomic_number: u8, formal_charge: i8) -> Result<Self, MolError> {
        if atomic_number == 0 || atomic_number > elements::MAX_ATOMIC_NUMBER {
            return Err(MolError::InvalidAtomicNumber(atomic_number));
        }
        Ok(Self {
            atomic_number,
            formal_charge,
        })
    }

    pub fn from_symbol(symbol: &str) -> Option<Self> {
        elements::atomic_number(symbol).map(|z| Self {
            atomic_number: z,
            formal_charge: 0,
        })
    }

    pub fn atomic_number(&self) -> u8 {
        self.atomic_number
    }

    pub fn symbol(&self) -> &'static str {
        elements::symbol(self.atomic_number).expect("validated atomic number")
    }

    pub fn is_hydrogen(&self) -> bool {
        self.atomic_number == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum, in half-units (aromatic counts 1.5).
    pub fn half_valence(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }

    pub fn mol_code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn from_mol_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            4 => Some(BondOrder::Aromatic),
            _ => None,
        }
    }
}

/// Undirected bond; endpoints are stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    a: usize,
    b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(i: usize, j: usize, order: BondOrder) -> Self {
        Self {
            a: i.min(j),
            b: i.max(j),
            order,
        }
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.a, self.b)
    }

    pub fn other(&self, i: usize) -> Option<usize> {
        if i == self.a {
            Some(self.b)
        } else if i == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Cartesian coordinates in Angstrom, one per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conformer {
    pub coords: Vec<Vec3<f64>>,
}

impl Conformer {
    pub fn new(coords: Vec<Vec3<f64>>) -> Self {
        Self { coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    conformer: Option<Conformer>,
}

impl Molecule {
    /// Validates bond indices, duplicates and conformer shape. Connectivity is
    /// checked separately by [`Molecule::ensure_connected`] because bond-less
    /// XYZ input is a legitimate intermediate state.
    pub fn new(
        atoms: Vec<Atom>,
        bonds: Vec<Bond>,
        conformer: Option<Conformer>,
    ) -> Result<Self, MolError> {
        let n = atoms.len();
        let mut seen = std::collections::HashSet::with_capacity(bonds.len());
        for (k, bond) in bonds.iter().enumerate() {
            let (a, b) = bond.endpoints();
            if a == b {
                return Err(MolError::SelfBond { bond: k, index: a });
            }
            if b >= n {
                return Err(MolError::BondIndexOutOfRange {
                    bond: k,
                    index: b,
                    atoms: n,
                });
            }
            if !seen.insert((a, b)) {
                return Err(MolError::DuplicateBond(a, b));
            }
        }
        if let Some(conf) = &conformer {
            check_conformer(conf, n)?;
        }
        Ok(Self {
            atoms,
            bonds,
            conformer,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn conformer(&self) -> Option<&Conformer> {
        self.conformer.as_ref()
    }

    pub fn coords(&self) -> Result<&[Vec3<f64>], MolError> {
        self.conformer
            .as_ref()
            .map(|c| c.coords.as_slice())
            .ok_or(MolError::MissingConformer)
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn with_conformer(mut self, conformer: Conformer) -> Result<Self, MolError> {
        check_conformer(&conformer, self.atoms.len())?;
        self.conformer = Some(conformer);
        Ok(self)
    }

    pub fn without_conformer(mut self) -> Self {
        self.conformer = None;
        self
    }

    pub fn with_bonds(self, bonds: Vec<Bond>) -> Result<Self, MolError> {
        Molecule::new(self.atoms, bonds, self.conformer)
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<&Bond> {
        let key = (i.min(j), i.max(j));
        self.bonds.iter().find(|b| b.endpoints() == key)
    }

    /// Adjacency lists with neighbors in ascending index order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for bond in &self.bonds {
            let (a, b) = bond.endpoints();
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn fragment_count(&self) -> usize {
        let n = self.atoms.len();
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        let mut fragments = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            fragments += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        fragments
    }

    pub fn ensure_connected(&self) -> Result<(), MolError> {
        if self.atoms.is_empty() {
            return Err(MolError::Empty);
        }
        match self.fragment_count() {
            1 => Ok(()),
            k => Err(MolError::Disconnected(k)),
        }
    }

    /// Relabels atoms so that new atom `k` is old atom `order[k]`.
    ///
    /// `order` must be a permutation of `0..atom_count`.
    pub fn permuted(&self, order: &[usize]) -> Molecule {
        assert_eq!(order.len(), self.atoms.len(), "permutation length");
        let mut inverse = vec![usize::MAX; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let atoms = order.iter().map(|&old| self.atoms[old]).collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| {
                let (a, c) = b.endpoints();
                Bond::new(inverse[a], inverse[c], b.order)
            })
            .collect();
        let conformer = self.conformer.as_ref().map(|c| Conformer {
            coords: order.iter().map(|&old| c.coords[old]).collect(),
        });
        Molecule {
            atoms,
            bonds,
            conformer,
        }
    }

    /// Multiset of (min, max, order) bond triples after mapping both ends, for
    /// graph-equality comparisons independent of bond listing order.
    pub fn sorted_bond_keys(&self) -> Vec<(usize, usize, BondOrder)> {
        let mut keys: Vec<_> = self
            .bonds
            .iter()
            .map(|b| {
                let (a, c) = b.endpoints();
                (a, c, b.order)
            })
            .collect();
        keys.sort_by_key(|&(a, c, o)| (a, c, o.mol_code()));
        keys
    }
}

fn check_conformer(conf: &Conformer, atoms: usize) -> Result<(), MolError> {
    if conf.coords.len() != atoms {
        return Err(MolError::ConformerLength {
            coords: conf.coords.len(),
            atoms,
        });
    }
    if let Some(i) = conf.coords.iter().position(|c| !c.is_finite()) {
        return Err(MolError::NonFiniteCoordinate(i));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carbon() -> Atom {
        Atom::new(6).unwrap()
    }

    #[test]
    fn rejects_bad_bonds() {
        let atoms = vec![carbon(), carbon()];
        assert!(matches!(
            Molecule::new(atoms.clone(), vec![Bond::new(0, 2, BondOrder::Single)], None),
            Err(MolError::BondIndexOutOfRange { index: 2, .. })
        ));
        assert!(matches!(
            Molecule::new(atoms.clone(), vec![Bond::new(1, 1, BondOrder::Single)], None),
            Err(MolError::SelfBond { .. })
        ));
        assert_eq!(
            Molecule::new(
                atoms,
                vec![
                    Bond::new(0, 1, BondOrder::Single),
                    Bond::new(1, 0, BondOrder::Double)
                ],
                None
            ),
            Err(MolError::DuplicateBond(0, 1))
        );
    }

    #[test]
    fn rejects_bad_conformer() {
        let atoms = vec![carbon()];
        assert!(matches!(
            Molecule::new(atoms.clone(), vec![], Some(Conformer::new(vec![]))),
            Err(MolError::ConformerLength { .. })
        ));
        let nan = Conformer::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)]);
        assert_eq!(
            Molecule::new(atoms, vec![], Some(nan)),
            Err(MolError::NonFiniteCoordinate(0))
        );
    }

    #[test]
    fn atomic_number_range() {
        assert!(Atom::new(0).is_err());
        assert!(Atom::new(119).is_err());
        assert_eq!(Atom::new(118).unwrap().symbol(), "Og");
    }

    #[test]
    fn connectivity() {
        let atoms = vec![carbon(), carbon(), carbon()];
        let mol = Molecule::new(atoms, vec![Bond::new(0, 1, BondOrder::Single)], None).unwrap();
        assert_eq!(mol.ensure_connected(), Err(MolError::Disconnected(2)));
        let mol = mol
            .with_bonds(vec![
                Bond::new(0, 1, BondOrder::Single),
                Bond::new(2, 1, BondOrder::Single),
            ])
            .unwrap();
        assert!(mol.ensure_connected().is_ok());
    }

    #[test]
    fn permutation_relabels_everything() {
        let atoms = vec![carbon(), Atom::new(8).unwrap(), Atom::new(1).unwrap()];
        let conf = Conformer::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ]);
        let mol = Molecule::new(
            atoms,
            vec![
                Bond::new(0, 1, BondOrder::Single),
                Bond::new(1, 2, BondOrder::Single),
            ],
            Some(conf),
        )
        .unwrap();
        let p = mol.permuted(&[2, 0, 1]);
        assert_eq!(p.atoms()[0].symbol(), "H");
        assert_eq!(p.coords().unwrap()[0].x, 2.0);
        assert!(p.bond_between(0, 2).is_some());
        assert!(p.bond_between(1, 2).is_some());
        assert!(p.bond_between(0, 1).is_none());
    }
}
