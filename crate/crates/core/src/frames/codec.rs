use super::select::{build_basis, select_refs, Topology};
use super::{extract_spherical, place_atom, FrameError, FrameStrategy, SphericalCoord};
use super::DEGENERACY_TOL;
use crate::geom::Vec3;
use crate::lineno::AtomOrder;
use crate::molgraph::{Conformer, Molecule};
use crate::scalar::Scalar;

/// Any unit vector perpendicular to the unit vector `a`.
fn any_perpendicular<T: Scalar>(a: Vec3<T>) -> Vec3<T> {
    let (ax, ay, az) = (a.x.abs(), a.y.abs(), a.z.abs());
    let axis = if ax <= ay && ax <= az {
        Vec3::new(T::one(), T::zero(), T::zero())
    } else if ay <= az {
        Vec3::new(T::zero(), T::one(), T::zero())
    } else {
        Vec3::new(T::zero(), T::zero(), T::one())
    };
    a.cross(axis).normalized()
}

/// Expresses `positions` in the intrinsic gauge: atom 0 at the origin,
/// atom 1 on +x, and the first atom off that line in the xy plane at y > 0.
pub fn gauge_positions<T: Scalar>(positions: &[Vec3<T>]) -> Result<Vec<Vec3<T>>, FrameError> {
    let tol = T::of(DEGENERACY_TOL);
    let Some(&p0) = positions.first() else {
        return Ok(Vec::new());
    };
    if positions.len() == 1 {
        return Ok(vec![Vec3::zero()]);
    }
    let a = positions[1] - p0;
    let a_norm = a.norm();
    if !(a_norm >= tol) {
        return Err(FrameError::CoincidentAtoms.at(1));
    }
    let ex = a / a_norm;
    let ey = positions[2..]
        .iter()
        .map(|&p| {
            let w = p - p0;
            w - ex * w.dot(ex)
        })
        .find(|perp| perp.norm() >= tol)
        .map(|perp| perp.normalized())
        .unwrap_or_else(|| any_perpendicular(ex));
    let ez = ex.cross(ey);
    Ok(positions
        .iter()
        .map(|&p| {
            let w = p - p0;
            Vec3::new(w.dot(ex), w.dot(ey), w.dot(ez))
        })
        .collect())
}

/// Sequential encoding of positions already in line-notation order.
pub fn encode_positions<T: Scalar>(
    topology: &Topology,
    positions: &[Vec3<T>],
    strategy: FrameStrategy,
) -> Result<Vec<SphericalCoord<T>>, FrameError> {
    if topology.len() != positions.len() {
        return Err(FrameError::LengthMismatch {
            expected: topology.len(),
            actual: positions.len(),
        });
    }
    let q = gauge_positions(positions)?;
    let mut out = Vec::with_capacity(q.len());
    for i in 0..q.len() {
        if i == 0 {
            out.push(SphericalCoord::gauge());
            continue;
        }
        let refs = select_refs(topology, &q[..i], i, strategy)?;
        let basis = build_basis(&q, &refs).map_err(|e| e.at(i))?;
        out.push(extract_spherical(q[i], &basis).map_err(|e| e.at(i))?);
    }
    Ok(out)
}

/// Sequential placement, the inverse of [`encode_positions`]. The result is
/// in the intrinsic gauge.
pub fn decode_positions<T: Scalar>(
    topology: &Topology,
    coords: &[SphericalCoord<T>],
    strategy: FrameStrategy,
) -> Result<Vec<Vec3<T>>, FrameError> {
    if topology.len() != coords.len() {
        return Err(FrameError::LengthMismatch {
            expected: topology.len(),
            actual: coords.len(),
        });
    }
    let mut q: Vec<Vec3<T>> = Vec::with_capacity(coords.len());
    for (i, s) in coords.iter().enumerate() {
        if i == 0 {
            q.push(Vec3::zero());
            continue;
        }
        if !s.is_finite() {
            return Err(FrameError::Degenerate("non-finite spherical coordinate").at(i));
        }
        let refs = select_refs(topology, &q, i, strategy)?;
        let basis = build_basis(&q, &refs).map_err(|e| e.at(i))?;
        q.push(place_atom(&basis, s));
    }
    Ok(q)
}

/// Encodes every atom of `mol`, visiting atoms in `order` (line position
/// `k` is atom `order[k]`). Output index is the line position.
pub fn encode_molecule(
    mol: &Molecule,
    order: &AtomOrder,
    strategy: FrameStrategy,
) -> Result<Vec<SphericalCoord<f64>>, FrameError> {
    if order.len() != mol.atom_count() {
        return Err(FrameError::LengthMismatch {
            expected: mol.atom_count(),
            actual: order.len(),
        });
    }
    let ordered = order.apply(mol);
    ordered.ensure_connected()?;
    let positions = ordered.coords()?;
    encode_positions(&Topology::from_molecule(&ordered), positions, strategy)
}

/// Rebuilds coordinates for `graph` from line-ordered spherical coordinates.
/// The returned conformer is indexed like `graph`.
pub fn decode_molecule(
    graph: &Molecule,
    order: &AtomOrder,
    coords: &[SphericalCoord<f64>],
    strategy: FrameStrategy,
) -> Result<Conformer, FrameError> {
    if order.len() != graph.atom_count() {
        return Err(FrameError::LengthMismatch {
            expected: graph.atom_count(),
            actual: order.len(),
        });
    }
    let ordered = order.apply(graph);
    ordered.ensure_connected()?;
    let q = decode_positions(&Topology::from_molecule(&ordered), coords, strategy)?;
    let mut out = vec![Vec3::zero(); q.len()];
    for (k, &atom) in order.as_slice().iter().enumerate() {
        out[atom] = q[k];
    }
    Ok(Conformer::new(out))
}
