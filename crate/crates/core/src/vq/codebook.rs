use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::VqError;
use crate::descriptors::NormStats;
use crate::scalar::Scalar;

/// Floor on EMA counts when dividing sums by counts.
pub const EMA_EPSILON: f64 = 1e-5;

/// Learned code vectors with their exponential-moving-average state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook<T> {
    /// `K x latent`.
    pub codes: Array2<T>,
    pub ema_counts: Array1<T>,
    pub ema_sums: Array2<T>,
    pub norm_stats: NormStats,
    /// Shared with the network parameters trained alongside.
    pub model_tag: u64,
}

impl<T: Scalar> Codebook<T> {
    /// Codebook with the given codes and zeroed EMA state.
    pub fn new(codes: Array2<T>, norm_stats: NormStats, model_tag: u64) -> Result<Self, VqError> {
        let (k, dim) = codes.dim();
        if k < 2 {
            return Err(VqError::Config(format!("codebook needs at least 2 codes, got {k}")));
        }
        if codes.iter().any(|x| !x.is_finite()) {
            return Err(VqError::NonFinite("codebook".into()));
        }
        Ok(Self {
            ema_counts: Array1::zeros(k),
            ema_sums: Array2::zeros((k, dim)),
            codes,
            norm_stats,
            model_tag,
        })
    }

    pub fn size(&self) -> usize {
        self.codes.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.codes.ncols()
    }

    /// Index of the nearest code in Euclidean distance; ties go to the
    /// smaller index.
    pub fn quantize(&self, latent: ArrayView1<T>) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (k, code) in self.codes.outer_iter().enumerate() {
            let d: T = code
                .iter()
                .zip(latent.iter())
                .map(|(&c, &z)| (c - z) * (c - z))
                .sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn quantize_batch(&self, latents: ArrayView2<T>) -> Vec<usize> {
        latents.outer_iter().map(|z| self.quantize(z)).collect()
    }

    /// One EMA step. Codes whose count is still exactly zero (never
    /// assigned) keep their current value.
    pub fn ema_update(&mut self, latents: ArrayView2<T>, assignments: &[usize], decay: T) {
        let k = self.size();
        let keep = decay;
        let blend = T::one() - decay;
        let mut counts = vec![T::zero(); k];
        let mut sums = Array2::<T>::zeros(self.codes.dim());
        for (z, &q) in latents.outer_iter().zip(assignments) {
            counts[q] = counts[q] + T::one();
            let mut row = sums.row_mut(q);
            row += &z;
        }
        let eps = T::of(EMA_EPSILON);
        for j in 0..k {
            self.ema_counts[j] = keep * self.ema_counts[j] + blend * counts[j];
            for c in 0..self.latent_dim() {
                self.ema_sums[[j, c]] = keep * self.ema_sums[[j, c]] + blend * sums[[j, c]];
            }
            if self.ema_counts[j] > T::zero() {
                let denom = self.ema_counts[j].max(eps);
                for c in 0..self.latent_dim() {
                    self.codes[[j, c]] = self.ema_sums[[j, c]] / denom;
                }
            }
        }
    }

    /// Moves code `j` onto `latent` without touching its count, so the
    /// next EMA step starts from the new position.
    pub fn reseed(&mut self, j: usize, latent: ArrayView1<T>) {
        let weight = self.ema_counts[j].max(T::of(EMA_EPSILON));
        self.codes.row_mut(j).assign(&latent);
        self.ema_sums.row_mut(j).assign(&latent.mapv(|x| x * weight));
    }

    pub fn cast<U: Scalar>(&self) -> Codebook<U> {
        let f = |x: &T| U::of(x.to_f64_lossy());
        Codebook {
            codes: self.codes.map(f),
            ema_counts: self.ema_counts.map(f),
            ema_sums: self.ema_sums.map(f),
            norm_stats: self.norm_stats.clone(),
            model_tag: self.model_tag,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn book(codes: Array2<f64>) -> Codebook<f64> {
        Codebook::new(codes, NormStats::identity(), 0).unwrap()
    }

    #[test]
    fn nearest_code_with_ties() {
        let cb = book(arr2(&[[0.0; 5], [1.0; 5]]));
        assert_eq!(cb.quantize(arr1(&[0.9; 5]).view()), 1);
        assert_eq!(cb.quantize(arr1(&[0.0; 5]).view()), 0);
        assert_eq!(cb.quantize(arr1(&[0.5; 5]).view()), 0);
    }

    #[test]
    fn zero_decay_takes_batch_mean() {
        let mut cb = book(arr2(&[[0.0; 2], [5.0; 2]]));
        let z = arr2(&[[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]]);
        cb.ema_update(z.view(), &[0, 0, 1], 0.0);
        assert_eq!(cb.codes.row(0).to_vec(), vec![2.0, 3.0]);
        assert_eq!(cb.codes.row(1).to_vec(), vec![9.0, 9.0]);
    }

    #[test]
    fn hand_computed_recurrence() {
        let mut cb = book(arr2(&[[0.0; 5], [7.0; 5]]));
        let mut z = Array2::zeros((1, 5));
        z[[0, 0]] = 1.0;
        cb.ema_update(z.view(), &[0], 0.5);
        z[[0, 0]] = 3.0;
        cb.ema_update(z.view(), &[0], 0.5);
        let expected = (0.5 * 0.5 + 0.5 * 3.0) / (0.5 * 0.5 + 0.5 * 1.0);
        assert!((cb.codes[[0, 0]] - expected).abs() < 1e-15);
        assert!((expected - 2.333_333_333_333_333).abs() < 1e-12);
        // never-assigned code untouched
        assert_eq!(cb.codes.row(1).to_vec(), vec![7.0; 5]);
    }

    #[test]
    fn unassigned_code_keeps_ratio() {
        let mut cb = book(arr2(&[[0.0; 2], [0.0; 2]]));
        cb.ema_update(arr2(&[[2.0, 4.0], [1.0, 1.0]]).view(), &[0, 1], 0.9);
        let before = cb.codes.row(0).to_owned();
        cb.ema_update(arr2(&[[1.0, 1.0]]).view(), &[1], 0.9);
        let after = cb.codes.row(0).to_owned();
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn counts_are_conserved() {
        let mut cb = book(arr2(&[[0.0; 2], [1.0; 2], [3.0; 2]]));
        let gamma = 0.99;
        for step in 0..20 {
            let before: f64 = cb.ema_counts.sum();
            let n = 3 + step % 4;
            let z = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j + step) as f64 * 0.1);
            let a = cb.quantize_batch(z.view());
            cb.ema_update(z.view(), &a, gamma);
            let after: f64 = cb.ema_counts.sum();
            assert!((after - (gamma * before + (1.0 - gamma) * n as f64)).abs() < 1e-12);
        }
    }
}
