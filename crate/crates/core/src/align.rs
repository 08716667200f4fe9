//! Optimal rigid superposition and RMSD.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};

use crate::geom::Vec3;

fn centered(points: &[Vec3<f64>]) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let n = points.len() as f64;
    let mut c = Vector3::zeros();
    for p in points {
        c += Vector3::new(p.x, p.y, p.z);
    }
    c /= n;
    let shifted = points
        .iter()
        .map(|p| Vector3::new(p.x, p.y, p.z) - c)
        .collect();
    (shifted, c)
}

/// Proper rotation minimizing `sum |R a_k - b_k|^2` over centered point
/// sets, via the quaternion eigenproblem (Horn). The symmetric eigensolver
/// stays accurate when the covariance has repeated singular values, as it
/// does for symmetric molecules.
pub fn optimal_rotation(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Matrix3<f64> {
    let mut s = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        s += p * q.transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy,       szx - sxz,       sxy - syx,
        syz - szy,       sxx - syy - szz, sxy + syx,       szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,       syz + szy,       -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let best = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(best);
    let norm = q.norm();
    let m = quaternion_matrix([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm]);
    Matrix3::from_fn(|i, j| m[i][j])
}

/// RMSD after optimal rotation and translation of `a` onto `b`.
///
/// Residuals are evaluated explicitly after applying the rotation, which
/// keeps precision near zero where the closed-form eigenvalue expression
/// would cancel.
pub fn aligned_rmsd(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "point sets differ in length");
    if a.is_empty() {
        return 0.0;
    }
    let (ac, _) = centered(a);
    let (bc, _) = centered(b);
    let r = optimal_rotation(&ac, &bc);
    let sum: f64 = ac
        .iter()
        .zip(&bc)
        .map(|(p, q)| (r * p - q).norm_squared())
        .sum();
    (sum / a.len() as f64).sqrt()
}

/// RMSD without any superposition.
pub fn raw_rmsd(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "point sets differ in length");
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (*p - *q).norm_squared()).sum();
    (sum / a.len() as f64).sqrt()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quaternion_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn rigid_transform(points: &[Vec3<f64>], rot: &[[f64; 3]; 3], t: Vec3<f64>) -> Vec<Vec3<f64>> {
    points
        .iter()
        .map(|p| {
            Vec3::new(
                rot[0][0] * p.x + rot[0][1] * p.y + rot[0][2] * p.z,
                rot[1][0] * p.x + rot[1][1] * p.y + rot[1][2] * p.z,
                rot[2][0] * p.x + rot[2][1] * p.y + rot[2][2] * p.z,
            ) + t
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Vec3<f64>> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.5, 0.0, 0.0),
            Vec3::new(2.0, 1.4, 0.0),
            Vec3::new(3.1, 1.2, 0.9),
            Vec3::new(-0.4, -0.8, 0.6),
        ]
    }

    #[test]
    fn rigid_motion_has_zero_rmsd() {
        let a = sample();
        let norm = (0.3f64 * 0.3 + 0.5 * 0.5 + 0.1 * 0.1 + 0.8 * 0.8).sqrt();
        let q = [0.3 / norm, 0.5 / norm, -0.1 / norm, 0.8 / norm];
        let b = rigid_transform(&a, &quaternion_matrix(q), Vec3::new(4.0, -2.0, 7.5));
        assert!(raw_rmsd(&a, &b) > 1.0);
        assert!(aligned_rmsd(&a, &b) < 1e-12);
    }

    #[test]
    fn mirror_image_is_not_superposable() {
        let a = sample();
        let b: Vec<_> = a.iter().map(|p| Vec3::new(p.x, p.y, -p.z)).collect();
        assert!(aligned_rmsd(&a, &b) > 0.1);
    }

    #[test]
    fn symmetric_point_sets_align_exactly() {
        // regular triangle plus apex: two equal principal moments
        let s3 = 3f64.sqrt() / 2.0;
        let a = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-0.5, s3, 0.0),
            Vec3::new(-0.5, -s3, 0.0),
            Vec3::new(0.0, 0.0, 0.7),
        ];
        assert!(aligned_rmsd(&a, &a) < 1e-14);
        let q = [0.5f64.sqrt(), 0.0, 0.0, 0.5f64.sqrt()];
        let b = rigid_transform(&a, &quaternion_matrix(q), Vec3::new(1.0, 2.0, 3.0));
        assert!(aligned_rmsd(&a, &b) < 1e-14);
        let flat = &a[..3];
        assert!(aligned_rmsd(flat, flat) < 1e-14);
    }

    #[test]
    fn known_displacement() {
        let a = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let b = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)];
        // centered: (-1, 1) vs (-1.5, 1.5) along x, residual 0.5 each
        assert!((aligned_rmsd(&a, &b) - 0.5).abs() < 1e-12);
    }
}
