use serde::{Deserialize, Serialize};

use super::{FrameError, SphericalCoord, DEGENERACY_TOL};
use crate::geom::Vec3;
use crate::scalar::Scalar;

/// Orthonormal frame anchored at the focal atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameBasis<T> {
    pub origin: Vec3<T>,
    pub e1: Vec3<T>,
    pub e2: Vec3<T>,
    pub n: Vec3<T>,
}

impl<T: Scalar> FrameBasis<T> {
    /// Gram-Schmidt on `c1 - origin` and `c2 - origin`.
    pub fn from_points(origin: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Result<Self, FrameError> {
        let tol = T::of(DEGENERACY_TOL);
        let a = c1 - origin;
        let a_norm = a.norm();
        if !(a_norm >= tol) {
            return Err(FrameError::Degenerate("first reference coincides with focal atom"));
        }
        let e1 = a / a_norm;
        let b = c2 - origin;
        let perp = b - e1 * b.dot(e1);
        let perp_norm = perp.norm();
        if !(perp_norm >= tol) {
            return Err(FrameError::Degenerate("collinear references"));
        }
        let e2 = perp / perp_norm;
        Ok(Self {
            origin,
            e1,
            e2,
            n: e1.cross(e2),
        })
    }

    /// Largest deviation from orthonormality among the three axes.
    pub fn orthonormality_error(&self) -> T {
        let one = T::one();
        [
            (self.e1.norm() - one).abs(),
            (self.e2.norm() - one).abs(),
            (self.n.norm() - one).abs(),
            self.e1.dot(self.e2).abs(),
            self.e1.dot(self.n).abs(),
            self.e2.dot(self.n).abs(),
        ]
        .into_iter()
        .fold(T::zero(), T::max)
    }
}

/// Spherical coordinates of `x` in `basis`.
///
/// Angles go through `atan2`, which agrees with the arccos definitions
/// (`theta = acos(v.n / d)`, `|phi| = acos(p.e1 / |p|)`, sign from `p.e2`)
/// but keeps full precision near 0 and pi.
pub fn extract_spherical<T: Scalar>(
    x: Vec3<T>,
    basis: &FrameBasis<T>,
) -> Result<SphericalCoord<T>, FrameError> {
    let tol = T::of(DEGENERACY_TOL);
    let v = x - basis.origin;
    let d = v.norm();
    if !(d >= tol) {
        return Err(FrameError::CoincidentAtoms);
    }
    let along_n = v.dot(basis.n);
    let proj = v - basis.n * along_n;
    let proj_norm = proj.norm();
    let theta = proj_norm.atan2(along_n);
    let phi = if proj_norm < tol {
        T::zero()
    } else {
        let phi = proj.dot(basis.e2).atan2(proj.dot(basis.e1));
        if phi <= -T::PI() {
            T::PI()
        } else {
            phi
        }
    };
    Ok(SphericalCoord { d, theta, phi })
}

/// Inverse of [`extract_spherical`].
pub fn place_atom<T: Scalar>(basis: &FrameBasis<T>, s: &SphericalCoord<T>) -> Vec3<T> {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    let dir = basis.n * ct + (basis.e1 * cp + basis.e2 * sp) * st;
    basis.origin + dir * s.d
}
