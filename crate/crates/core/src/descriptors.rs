//! Per-atom 14-dimensional descriptors and their normalization.
//!
//! Layout: `[d, theta, |phi|, sign(phi), l1, l2, l3, l4, a12, a13, a14, a23,
//! a24, a34]`. The first four values place the atom in its local frame, the
//! remaining ten describe its four spatially nearest atoms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{encode_molecule, FrameError, FrameStrategy, SphericalCoord};
use crate::geom::{angle_at, Vec3};
use crate::lineno::AtomOrder;
use crate::molgraph::{MolError, Molecule};
use crate::scalar::Scalar;

pub const DIM: usize = 14;
/// Dimensions reconstructed by regression; the sign is handled separately.
pub const RECON_DIM: usize = 13;
pub const SIGN_INDEX: usize = 3;
/// Positions of `d`, `theta`, `|phi|` within the descriptor.
pub const GEN_D: usize = 0;
pub const GEN_THETA: usize = 1;
pub const GEN_ABS_PHI: usize = 2;

pub const LENGTH_SENTINEL: f64 = 10.0;
pub const ANGLE_SENTINEL: f64 = 0.0;
const NEIGHBORS: usize = 4;
/// Lexicographic neighbor pairs for the six angles.
pub const ANGLE_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("atoms {0} and {1} coincide")]
    CoincidentAtoms(usize, usize),
    #[error("feature {index} has nonpositive length {value}")]
    NonPositiveLength { index: usize, value: f64 },
    #[error("descriptor contains a non-finite value at {0}")]
    NonFinite(usize),
    #[error("cannot fit normalization statistics on an empty set")]
    EmptyCorpus,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Molecule(#[from] MolError),
}

/// `(d, theta, |phi|, sign(phi))` with the sign stored as +1 or -1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationDescriptor<T> {
    pub d: T,
    pub theta: T,
    pub abs_phi: T,
    pub sign_phi: T,
}

impl<T: Scalar> GenerationDescriptor<T> {
    pub fn from_spherical(s: &SphericalCoord<T>) -> Self {
        Self {
            d: s.d,
            theta: s.theta,
            abs_phi: s.phi.abs(),
            sign_phi: s.sign_phi(),
        }
    }

    pub fn to_spherical(&self) -> SphericalCoord<T> {
        let phi = if self.sign_phi < T::zero() {
            -self.abs_phi
        } else {
            self.abs_phi
        };
        SphericalCoord::new(self.d, self.theta, phi)
    }
}

/// Distances to the four nearest atoms and the six angles they subtend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderstandingDescriptor<T> {
    pub lengths: [T; 4],
    pub angles: [T; 6],
}

impl<T: Scalar> UnderstandingDescriptor<T> {
    pub fn sentinel() -> Self {
        Self {
            lengths: [T::of(LENGTH_SENTINEL); 4],
            angles: [T::of(ANGLE_SENTINEL); 6],
        }
    }
}

/// The (up to) four atoms nearest to atom `i`, nearest first, ties broken
/// by smaller index.
pub fn nearest_neighbors<T: Scalar>(
    positions: &[Vec3<T>],
    i: usize,
) -> Result<Vec<(T, usize)>, DescriptorError> {
    let xi = positions[i];
    let tol = T::of(crate::frames::DEGENERACY_TOL);
    let mut others: Vec<(T, usize)> = Vec::with_capacity(positions.len());
    for (j, &p) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = p.distance(xi);
        if !(d >= tol) {
            return Err(DescriptorError::CoincidentAtoms(i.min(j), i.max(j)));
        }
        others.push((d, j));
    }
    others.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
    others.truncate(NEIGHBORS);
    Ok(others)
}

/// Understanding descriptor of atom `i` from raw positions.
pub fn understanding_from_positions<T: Scalar>(
    positions: &[Vec3<T>],
    i: usize,
) -> Result<UnderstandingDescriptor<T>, DescriptorError> {
    let near = nearest_neighbors(positions, i)?;
    let mut u = UnderstandingDescriptor::sentinel();
    for (k, &(d, _)) in near.iter().enumerate() {
        u.lengths[k] = d;
    }
    for (slot, &(a, b)) in ANGLE_PAIRS.iter().enumerate() {
        if let (Some(&(_, ja)), Some(&(_, jb))) = (near.get(a), near.get(b)) {
            u.angles[slot] = angle_at(positions[i], positions[ja], positions[jb]);
        }
    }
    Ok(u)
}

/// Understanding descriptor of atom `i` of `mol` (own indexing).
pub fn understanding_descriptor(
    mol: &Molecule,
    i: usize,
) -> Result<UnderstandingDescriptor<f64>, DescriptorError> {
    understanding_from_positions(mol.coords()?, i)
}

/// The concatenated 14-vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DescriptorVec<T>(pub [T; DIM]);

impl<T: Scalar> DescriptorVec<T> {
    pub fn build(g: &GenerationDescriptor<T>, u: &UnderstandingDescriptor<T>) -> Self {
        let mut v = [T::zero(); DIM];
        v[0] = g.d;
        v[1] = g.theta;
        v[2] = g.abs_phi;
        v[3] = g.sign_phi;
        v[4..8].copy_from_slice(&u.lengths);
        v[8..14].copy_from_slice(&u.angles);
        Self(v)
    }

    pub fn generation(&self) -> GenerationDescriptor<T> {
        GenerationDescriptor {
            d: self.0[0],
            theta: self.0[1],
            abs_phi: self.0[2],
            sign_phi: self.0[3],
        }
    }

    pub fn understanding(&self) -> UnderstandingDescriptor<T> {
        let mut u = UnderstandingDescriptor::sentinel();
        u.lengths.copy_from_slice(&self.0[4..8]);
        u.angles.copy_from_slice(&self.0[8..14]);
        u
    }

    pub fn split(&self) -> (GenerationDescriptor<T>, UnderstandingDescriptor<T>) {
        (self.generation(), self.understanding())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> DescriptorVec<U> {
        DescriptorVec(self.0.map(|x| U::of(x.to_f64_lossy())))
    }
}

/// Descriptors for every atom of `mol` in line order.
///
/// Position 0 has no frame; its generation part is the gauge placeholder
/// with `d` replaced by the length sentinel so the log transform stays
/// finite.
pub fn molecule_descriptors(
    mol: &Molecule,
    order: &AtomOrder,
    strategy: FrameStrategy,
) -> Result<Vec<DescriptorVec<f64>>, DescriptorError> {
    let spherical = encode_molecule(mol, order, strategy)?;
    let ordered = order.apply(mol);
    let positions = ordered.coords()?;
    spherical
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut g = GenerationDescriptor::from_spherical(s);
            if k == 0 {
                g.d = LENGTH_SENTINEL;
            }
            let u = understanding_from_positions(positions, k)?;
            Ok(DescriptorVec::build(&g, &u))
        })
        .collect()
}

/// Per-feature transform applied before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTransform {
    /// `ln(x)` then `(y - mean) / std`.
    LogLength,
    /// `x / pi`.
    UnitAngle,
    /// Left unchanged.
    PassthroughSign,
}

impl FeatureTransform {
    pub const LAYOUT: [FeatureTransform; DIM] = {
        use FeatureTransform::*;
        [
            LogLength, UnitAngle, UnitAngle, PassthroughSign, LogLength, LogLength, LogLength,
            LogLength, UnitAngle, UnitAngle, UnitAngle, UnitAngle, UnitAngle, UnitAngle,
        ]
    };

    pub fn tag(self) -> u8 {
        match self {
            FeatureTransform::LogLength => 0,
            FeatureTransform::UnitAngle => 1,
            FeatureTransform::PassthroughSign => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FeatureTransform::LogLength),
            1 => Some(FeatureTransform::UnitAngle),
            2 => Some(FeatureTransform::PassthroughSign),
            _ => None,
        }
    }
}

/// How log-length features are scaled after taking the logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LengthScaling {
    /// `ln(x)` only.
    #[default]
    Log,
    /// `ln(x)` standardized by corpus mean and std.
    LogStandardized,
}

/// Normalization statistics. `mean`/`std` are used only by log-length
/// features and are 0/1 elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub transforms: [FeatureTransform; DIM],
    pub mean: [f64; DIM],
    pub std: [f64; DIM],
    pub length_sentinel: f64,
    pub angle_sentinel: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self::identity()
    }
}

/// Running moments for one feature (count, mean, sum of squared deviations).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        let n = a.n + b.n;
        if n == 0.0 {
            return Moments::default();
        }
        let delta = b.mean - a.mean;
        Moments {
            n,
            mean: a.mean + delta * b.n / n,
            m2: a.m2 + b.m2 + delta * delta * a.n * b.n / n,
        }
    }
}

const STATS_CHUNK: usize = 4096;

fn merge_tree(mut parts: Vec<[Moments; DIM]>) -> [Moments; DIM] {
    while parts.len() > 1 {
        parts = parts
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => std::array::from_fn(|k| Moments::merge(a[k], b[k])),
                [a] => *a,
                _ => unreachable!(),
            })
            .collect();
    }
    parts.pop().unwrap_or([Moments::default(); DIM])
}

impl NormStats {
    /// Log-length features with mean 0, std 1.
    pub fn identity() -> Self {
        Self {
            transforms: FeatureTransform::LAYOUT,
            mean: [0.0; DIM],
            std: [1.0; DIM],
            length_sentinel: LENGTH_SENTINEL,
            angle_sentinel: ANGLE_SENTINEL,
        }
    }

    /// Fits log-length statistics. Chunks have a fixed size and are merged
    /// pairwise in a fixed tree, so the result does not depend on the
    /// number of worker threads.
    pub fn fit(data: &[DescriptorVec<f64>]) -> Result<Self, DescriptorError> {
        Self::fit_with(data, LengthScaling::LogStandardized)
    }

    /// With [`LengthScaling::Log`] the statistics are checked for
    /// finiteness but mean and std stay 0 and 1.
    pub fn fit_with(data: &[DescriptorVec<f64>], scaling: LengthScaling) -> Result<Self, DescriptorError> {
        if data.is_empty() {
            return Err(DescriptorError::EmptyCorpus);
        }
        let layout = FeatureTransform::LAYOUT;
        let parts: Vec<[Moments; DIM]> = data
            .par_chunks(STATS_CHUNK)
            .map(|chunk| {
                let mut m = [Moments::default(); DIM];
                for v in chunk {
                    for k in 0..DIM {
                        if layout[k] == FeatureTransform::LogLength {
                            m[k].push(v.0[k].ln());
                        }
                    }
                }
                m
            })
            .collect();
        let total = merge_tree(parts);
        let mut stats = Self::identity();
        for k in 0..DIM {
            if layout[k] != FeatureTransform::LogLength {
                continue;
            }
            let var = total[k].m2 / total[k].n;
            if !total[k].mean.is_finite() || !var.is_finite() {
                return Err(DescriptorError::NonFinite(k));
            }
            if scaling == LengthScaling::LogStandardized {
                stats.mean[k] = total[k].mean;
                stats.std[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
        Ok(stats)
    }

    pub fn normalize<T: Scalar>(&self, v: &DescriptorVec<T>) -> Result<[T; DIM], DescriptorError> {
        let mut out = [T::zero(); DIM];
        for k in 0..DIM {
            let x = v.0[k];
            if !x.is_finite() {
                return Err(DescriptorError::NonFinite(k));
            }
            out[k] = match self.transforms[k] {
                FeatureTransform::LogLength => {
                    if !(x > T::zero()) {
                        return Err(DescriptorError::NonPositiveLength {
                            index: k,
                            value: x.to_f64_lossy(),
                        });
                    }
                    (x.ln() - T::of(self.mean[k])) / T::of(self.std[k])
                }
                FeatureTransform::UnitAngle => x / T::PI(),
                FeatureTransform::PassthroughSign => x,
            };
        }
        Ok(out)
    }

    pub fn denormalize<T: Scalar>(&self, y: &[T; DIM]) -> DescriptorVec<T> {
        let mut out = [T::zero(); DIM];
        for k in 0..DIM {
            out[k] = self.denormalize_feature(k, y[k]);
        }
        DescriptorVec(out)
    }

    pub fn denormalize_feature<T: Scalar>(&self, k: usize, y: T) -> T {
        match self.transforms[k] {
            FeatureTransform::LogLength => (y * T::of(self.std[k]) + T::of(self.mean[k])).exp(),
            FeatureTransform::UnitAngle => y * T::PI(),
            FeatureTransform::PassthroughSign => y,
        }
    }
}

/// Clamps angles into `[0, pi]` and snaps the sign to +1/-1 (threshold 0).
pub fn sanitize<T: Scalar>(v: &mut DescriptorVec<T>) {
    for k in 0..DIM {
        match FeatureTransform::LAYOUT[k] {
            FeatureTransform::UnitAngle => v.0[k] = v.0[k].max(T::zero()).min(T::PI()),
            FeatureTransform::PassthroughSign => {
                v.0[k] = if v.0[k] >= T::zero() { T::one() } else { -T::one() }
            }
            FeatureTransform::LogLength => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn methane() -> Vec<Vec3<f64>> {
        let s = 1.09 / 3f64.sqrt();
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(s, s, s),
            Vec3::new(s, -s, -s),
            Vec3::new(-s, s, -s),
            Vec3::new(-s, -s, s),
        ]
    }

    #[test]
    fn methane_is_tetrahedral() {
        let u = understanding_from_positions(&methane(), 0).unwrap();
        for l in u.lengths {
            assert!((l - 1.09).abs() < 1e-12);
        }
        let tet = (-1.0f64 / 3.0).acos();
        assert!((tet - 1.9106).abs() < 1e-4);
        for a in u.angles {
            assert!((a - tet).abs() < 1e-12);
        }
        let near: Vec<usize> = nearest_neighbors(&methane(), 0).unwrap().iter().map(|p| p.1).collect();
        assert_eq!(near, [1, 2, 3, 4]);
    }

    #[test]
    fn diatomic_is_padded() {
        let xs = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.2)];
        let u = understanding_from_positions(&xs, 0).unwrap();
        assert_eq!(u.lengths, [1.2, LENGTH_SENTINEL, LENGTH_SENTINEL, LENGTH_SENTINEL]);
        assert_eq!(u.angles, [ANGLE_SENTINEL; 6]);
    }

    #[test]
    fn coincident_atoms_rejected() {
        let xs = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0)];
        assert_eq!(
            understanding_from_positions(&xs, 1),
            Err(DescriptorError::CoincidentAtoms(0, 1))
        );
    }

    #[test]
    fn concatenation_layout() {
        let g = GenerationDescriptor {
            d: 1.0,
            theta: 0.0,
            abs_phi: 0.0,
            sign_phi: 1.0,
        };
        let u = UnderstandingDescriptor::<f64>::sentinel();
        let v = DescriptorVec::build(&g, &u);
        let s = LENGTH_SENTINEL;
        let a = ANGLE_SENTINEL;
        assert_eq!(v.0, [1.0, 0.0, 0.0, 1.0, s, s, s, s, a, a, a, a, a, a]);
        let (g2, u2) = v.split();
        assert_eq!(g2, g);
        assert_eq!(u2, u);
    }

    #[test]
    fn simple_normalizations() {
        let stats = NormStats::identity();
        let mut v = DescriptorVec([1.0; DIM]);
        v.0[1] = PI / 2.0;
        let y = stats.normalize(&v).unwrap();
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 0.5);
        assert_eq!(y[3], 1.0);
        v.0[4] = 0.0;
        assert!(matches!(
            stats.normalize(&v),
            Err(DescriptorError::NonPositiveLength { index: 4, .. })
        ));
    }

    #[test]
    fn moments_merge_matches_direct() {
        let xs: Vec<f64> = (0..1000).map(|k| ((k * 37 % 101) as f64).sin() + 2.0).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..317].iter().for_each(|&x| a.push(x));
        xs[317..].iter().for_each(|&x| b.push(x));
        let m = Moments::merge(a, b);
        assert!((m.mean - whole.mean).abs() < 1e-12);
        assert!((m.m2 - whole.m2).abs() < 1e-9);
    }
}
