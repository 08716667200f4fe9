use super::{
    FrameBasis, FrameError, FrameRefs, FrameStrategy, RefSlot, DEGENERACY_TOL, PHANTOM_C1,
    PHANTOM_C2, PHANTOM_NUDGE,
};
use crate::geom::Vec3;
use crate::lineno::AtomOrder;
use crate::molgraph::Molecule;
use crate::scalar::Scalar;

/// Spatial candidates closer than this to each other count as tied.
pub const SPATIAL_TIE_TOL: f64 = 1e-9;

/// Bond adjacency of a molecule in line-notation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// `mol` must already be in line-notation order.
    pub fn from_molecule(mol: &Molecule) -> Self {
        Self {
            neighbors: mol.adjacency(),
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self { neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Largest bonded index below `i`.
    pub fn latest_prior_neighbor(&self, i: usize) -> Option<usize> {
        self.neighbors[i].iter().rev().copied().find(|&j| j < i)
    }
}

fn nearest_excluding<T: Scalar>(
    prefix: &[Vec3<T>],
    target: Vec3<T>,
    exclude: &[usize],
) -> Option<usize> {
    let tie = T::of(SPATIAL_TIE_TOL);
    let mut best: Option<(usize, T)> = None;
    for (j, p) in prefix.iter().enumerate() {
        if exclude.contains(&j) {
            continue;
        }
        let d = p.distance(target);
        match best {
            // scanning upwards, so an index only wins by a clear margin
            Some((_, bd)) if d >= bd - tie => {}
            _ => best = Some((j, d)),
        }
    }
    best.map(|(j, _)| j)
}

/// Reference selection for the atom at line position `i`.
///
/// `prefix` holds the coordinates of positions `0..i` and is consulted only
/// by [`FrameStrategy::Spatial3D`].
pub fn select_refs<T: Scalar>(
    topology: &Topology,
    prefix: &[Vec3<T>],
    i: usize,
    strategy: FrameStrategy,
) -> Result<FrameRefs, FrameError> {
    if i == 0 {
        return Ok(FrameRefs::ALL_VIRTUAL);
    }
    match strategy {
        FrameStrategy::Seq1D => Ok(FrameRefs::new(
            i - 1,
            i.checked_sub(2),
            i.checked_sub(3),
        )),
        FrameStrategy::Topo2D => {
            let f = topology
                .latest_prior_neighbor(i)
                .ok_or(FrameError::DisconnectedPrefix { position: i })?;
            let c1 = topology.latest_prior_neighbor(f);
            let c2 = c1.and_then(|c| topology.latest_prior_neighbor(c));
            Ok(FrameRefs::new(f, c1, c2))
        }
        FrameStrategy::Spatial3D => {
            let f = topology
                .latest_prior_neighbor(i)
                .ok_or(FrameError::DisconnectedPrefix { position: i })?;
            let prefix = &prefix[..i];
            let c1 = nearest_excluding(prefix, prefix[f], &[f]);
            let c2 = c1.and_then(|c| nearest_excluding(prefix, prefix[f], &[f, c]));
            Ok(FrameRefs::new(f, c1, c2))
        }
    }
}

/// Reference selection on a molecule given in its own atom order.
///
/// `order` maps line positions to atom indices of `mol`; the returned slots
/// are line positions.
pub fn select_frame(
    mol: &Molecule,
    order: &AtomOrder,
    i: usize,
    strategy: FrameStrategy,
) -> Result<FrameRefs, FrameError> {
    let ordered = order.apply(mol);
    let topology = Topology::from_molecule(&ordered);
    let coords: Vec<Vec3<f64>> = match strategy {
        FrameStrategy::Spatial3D => ordered.coords()?.to_vec(),
        _ => Vec::new(),
    };
    select_refs(&topology, &coords, i, strategy)
}

/// Resolves `refs` against already placed points and builds the basis.
///
/// Virtual slots become phantom points next to the focal atom. If the
/// references are collinear, `c2` is replaced by its phantom, and if that is
/// still collinear the phantom is nudged off the line.
pub fn build_basis<T: Scalar>(
    points: &[Vec3<T>],
    refs: &FrameRefs,
) -> Result<FrameBasis<T>, FrameError> {
    let RefSlot::Atom(f) = refs.f else {
        return Err(FrameError::Degenerate("no focal atom"));
    };
    let origin = points[f];
    let resolve = |slot: RefSlot, phantom: [f64; 3]| match slot {
        RefSlot::Atom(j) => points[j],
        RefSlot::Virtual => origin + Vec3::from_f64(phantom),
    };
    let p1 = resolve(refs.c1, PHANTOM_C1);
    if !((p1 - origin).norm() >= T::of(DEGENERACY_TOL)) {
        return Err(FrameError::CoincidentAtoms);
    }
    let p2 = resolve(refs.c2, PHANTOM_C2);
    if let Ok(b) = FrameBasis::from_points(origin, p1, p2) {
        return Ok(b);
    }
    let phantom = origin + Vec3::from_f64(PHANTOM_C2);
    if !refs.c2.is_virtual() {
        if let Ok(b) = FrameBasis::from_points(origin, p1, phantom) {
            log::warn!("collinear frame references {refs:?}; using phantom c2");
            return Ok(b);
        }
    }
    log::warn!("collinear frame references {refs:?}; nudging phantom c2");
    FrameBasis::from_points(origin, p1, phantom + Vec3::from_f64(PHANTOM_NUDGE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineno::{parse_smiles_with, ParseOptions};

    fn heavy(s: &str) -> Molecule {
        parse_smiles_with(
            s,
            ParseOptions {
                expand_hydrogens: false,
            },
        )
        .unwrap()
        .0
    }

    fn chain4() -> (Topology, Vec<Vec3<f64>>) {
        let top = Topology::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let xs = (0..4).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect();
        (top, xs)
    }

    #[test]
    fn sequential_rule() {
        let (top, xs) = chain4();
        let r = select_refs(&top, &xs, 3, FrameStrategy::Seq1D).unwrap();
        assert_eq!(r, FrameRefs::new(2, 1, 0));
        let r = select_refs(&top, &xs, 1, FrameStrategy::Seq1D).unwrap();
        assert_eq!(r, FrameRefs::new(0, None, None));
    }

    #[test]
    fn topological_rule() {
        let mol = heavy("CCO");
        let top = Topology::from_molecule(&mol);
        let r = select_refs::<f64>(&top, &[], 2, FrameStrategy::Topo2D).unwrap();
        assert_eq!(r, FrameRefs::new(1, 0, None));

        let mol = heavy("CC(C)C");
        let top = Topology::from_molecule(&mol);
        let r = select_refs::<f64>(&top, &[], 3, FrameStrategy::Topo2D).unwrap();
        assert_eq!(r, FrameRefs::new(1, 0, None));
        let r = select_frame(&mol, &AtomOrder::identity(4), 3, FrameStrategy::Topo2D).unwrap();
        assert_eq!(r, FrameRefs::new(1, 0, None));
    }

    #[test]
    fn spatial_rule_on_line() {
        let (top, xs) = chain4();
        let r = select_refs(&top, &xs, 3, FrameStrategy::Spatial3D).unwrap();
        assert_eq!(r, FrameRefs::new(2, 1, 0));
    }

    #[test]
    fn spatial_ties_prefer_smaller_index() {
        // atoms 0 and 2 both sit 1 A from atom 1
        let top = Topology::from_edges(4, &[(0, 1), (1, 2), (1, 3)]);
        let xs = vec![
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let r = select_refs(&top, &xs, 3, FrameStrategy::Spatial3D).unwrap();
        assert_eq!(r, FrameRefs::new(1, 0, 2));
    }

    #[test]
    fn disconnected_prefix() {
        let top = Topology::from_edges(3, &[(0, 2), (1, 2)]);
        let r = select_refs::<f64>(&top, &[], 1, FrameStrategy::Topo2D);
        assert_eq!(r, Err(FrameError::DisconnectedPrefix { position: 1 }));
    }

    #[test]
    fn collinear_falls_back_to_phantom() {
        let xs = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let b = build_basis(&xs, &FrameRefs::new(1, 0, 2)).unwrap();
        assert!(b.orthonormality_error() < 1e-12);
        assert!(b.e2.max_abs_diff(Vec3::new(0.0, -1.0, 0.0)) < 1e-15);

        // references along y: the phantom is collinear too and gets nudged
        let ys = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let b = build_basis(&ys, &FrameRefs::new(0, 1, None)).unwrap();
        assert!(b.orthonormality_error() < 1e-12);
        assert!(b.e2.max_abs_diff(Vec3::new(0.0, 0.0, 1.0)) < 1e-12);
    }
}
