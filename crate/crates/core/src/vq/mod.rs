//! Vector-quantized autoencoder over atom descriptors.

mod codebook;
pub mod io;
mod mlp;
mod model;
mod train;

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codebook::{Codebook, EMA_EPSILON};
pub use mlp::{gelu, gelu_derivative, Dense, Mlp, MlpCache};
pub use model::{loss_and_grads, split_targets, LossOutput, LossParts, MlpParams, ModelDims, Route};
pub use train::{train, EpochReport, TrainConfig, TrainReport};

use crate::descriptors::{
    sanitize, DescriptorError, DescriptorVec, FeatureTransform, DIM, GEN_ABS_PHI, GEN_D, GEN_THETA,
    RECON_DIM, SIGN_INDEX,
};
use crate::frames::FrameStrategy;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parameters (tag {params:016x}) and codebook (tag {codebook:016x}) come from different training runs")]
    VersionMismatch { params: u64, codebook: u64 },
    #[error("need at least {required} descriptors, got {samples}")]
    InsufficientData { samples: usize, required: usize },
    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
        report: Box<TrainReport>,
    },
    #[error("code {code} out of range for a codebook of {size}")]
    CodeOutOfRange { code: usize, size: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// Trained networks and codebook, plus the frame strategy used to
/// compute the descriptors they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer<T> {
    pub params: MlpParams<T>,
    pub codebook: Codebook<T>,
    pub strategy: FrameStrategy,
}

/// Reconstruction quality of `decode(encode(v))` over a descriptor set.
/// Angles in radians, lengths in the descriptor's length unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    pub samples: usize,
    pub gen_length_rmsd: f64,
    pub gen_polar_rmsd: f64,
    /// Signed azimuth, difference wrapped to `(-pi, pi]`.
    pub gen_azimuth_rmsd: f64,
    pub gen_abs_azimuth_rmsd: f64,
    pub sign_accuracy: f64,
    pub understanding_length_rmsd: f64,
    pub understanding_angle_rmsd: f64,
    /// RMSD over the 13 regression dims in normalized space.
    pub normalized_rmsd: f64,
    /// Fraction of codes assigned at least once.
    pub utilization: f64,
    pub code_counts: Vec<usize>,
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    } else if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

fn signed_phi(v: &DescriptorVec<f64>) -> f64 {
    if v.0[SIGN_INDEX] < 0.0 {
        -v.0[GEN_ABS_PHI]
    } else {
        v.0[GEN_ABS_PHI]
    }
}

#[derive(Debug, Clone, Default)]
struct ErrorSums {
    n: usize,
    d: f64,
    theta: f64,
    phi: f64,
    abs_phi: f64,
    sign_hits: usize,
    u_len: f64,
    u_ang: f64,
    normalized: f64,
}

impl ErrorSums {
    fn add(&mut self, o: &ErrorSums) {
        self.n += o.n;
        self.d += o.d;
        self.theta += o.theta;
        self.phi += o.phi;
        self.abs_phi += o.abs_phi;
        self.sign_hits += o.sign_hits;
        self.u_len += o.u_len;
        self.u_ang += o.u_ang;
        self.normalized += o.normalized;
    }
}

const EVAL_CHUNK: usize = 4096;

impl<T: Scalar> Quantizer<T> {
    /// Pairs parameters with a codebook, rejecting artifacts from different runs.
    pub fn new(
        params: MlpParams<T>,
        codebook: Codebook<T>,
        strategy: FrameStrategy,
    ) -> Result<Self, VqError> {
        if params.model_tag != codebook.model_tag {
            return Err(VqError::VersionMismatch {
                params: params.model_tag,
                codebook: codebook.model_tag,
            });
        }
        let dims = params.dims();
        if dims.latent != codebook.latent_dim() || dims.input != DIM || dims.output != RECON_DIM {
            return Err(VqError::Config(format!(
                "network dims {dims:?} do not fit a codebook of latent dim {}",
                codebook.latent_dim()
            )));
        }
        Ok(Self {
            params,
            codebook,
            strategy,
        })
    }

    pub fn size(&self) -> usize {
        self.codebook.size()
    }

    fn normalized_batch(&self, data: &[DescriptorVec<f64>]) -> Result<Array2<T>, VqError> {
        let mut x = Array2::zeros((data.len(), DIM));
        for (i, v) in data.iter().enumerate() {
            let y = self.codebook.norm_stats.normalize(v)?;
            for k in 0..DIM {
                x[[i, k]] = T::of(y[k]);
            }
        }
        Ok(x)
    }

    pub fn encode_atom(&self, v: &DescriptorVec<f64>) -> Result<usize, VqError> {
        Ok(self.encode_batch(std::slice::from_ref(v))?[0])
    }

    pub fn encode_batch(&self, data: &[DescriptorVec<f64>]) -> Result<Vec<usize>, VqError> {
        if data.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.normalized_batch(data)?;
        let z = self.params.encode(x.view());
        Ok(self.codebook.quantize_batch(z.view()))
    }

    /// Decoded descriptors for the given codes, denormalized and sanitized.
    fn decode_rows(&self, codes: &[usize]) -> Result<Vec<DescriptorVec<f64>>, VqError> {
        let k = self.size();
        if let Some(&bad) = codes.iter().find(|&&q| q >= k) {
            return Err(VqError::CodeOutOfRange { code: bad, size: k });
        }
        let z = self.codebook.codes.select(ndarray::Axis(0), codes);
        let (recon, logits): (Array2<T>, Array1<T>) = self.params.decode(z.view());
        let with_head = self.params.sign_head.is_some();
        let stats = &self.codebook.norm_stats;
        Ok(recon
            .outer_iter()
            .zip(logits.iter())
            .map(|(r, &s)| {
                let mut y = [0.0; DIM];
                for j in 0..RECON_DIM {
                    let k = if j < SIGN_INDEX { j } else { j + 1 };
                    y[k] = r[j].to_f64_lossy();
                }
                y[SIGN_INDEX] = if !with_head || s >= T::zero() { 1.0 } else { -1.0 };
                let mut v = stats.denormalize(&y);
                sanitize(&mut v);
                v
            })
            .collect())
    }

    pub fn decode_code(&self, q: usize) -> Result<DescriptorVec<f64>, VqError> {
        Ok(self.decode_rows(&[q])?[0])
    }

    /// Decoded descriptor of every code, in code order.
    pub fn decode_table(&self) -> Vec<DescriptorVec<f64>> {
        let all: Vec<usize> = (0..self.size()).collect();
        self.decode_rows(&all).expect("codes in range")
    }

    /// Per-group RMSD of `decode(encode(v))` against `v`. Chunk partial
    /// sums are combined in order, so the result is thread-count independent.
    pub fn evaluate(&self, data: &[DescriptorVec<f64>]) -> Result<ReconstructionMetrics, VqError> {
        if data.is_empty() {
            return Err(VqError::InsufficientData {
                samples: 0,
                required: 1,
            });
        }
        let table = self.decode_table();
        let stats = &self.codebook.norm_stats;
        let normalized_table: Vec<[f64; DIM]> = table
            .iter()
            .map(|v| stats.normalize(v))
            .collect::<Result<_, _>>()?;
        let parts: Vec<(ErrorSums, Vec<usize>)> = data
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| -> Result<_, VqError> {
                let codes = self.encode_batch(chunk)?;
                let mut s = ErrorSums::default();
                for (v, &q) in chunk.iter().zip(&codes) {
                    let r = &table[q];
                    let sq = |k: usize| (r.0[k] - v.0[k]).powi(2);
                    s.n += 1;
                    s.d += sq(GEN_D);
                    s.theta += sq(GEN_THETA);
                    s.abs_phi += sq(GEN_ABS_PHI);
                    s.phi += wrap_angle(signed_phi(r) - signed_phi(v)).powi(2);
                    s.sign_hits += usize::from((r.0[SIGN_INDEX] < 0.0) == (v.0[SIGN_INDEX] < 0.0));
                    for k in 4..DIM {
                        match FeatureTransform::LAYOUT[k] {
                            FeatureTransform::LogLength => s.u_len += sq(k),
                            _ => s.u_ang += sq(k),
                        }
                    }
                    let y = stats.normalize(v)?;
                    let yr = &normalized_table[q];
                    s.normalized += (0..DIM)
                        .filter(|&k| k != SIGN_INDEX)
                        .map(|k| (yr[k] - y[k]).powi(2))
                        .sum::<f64>();
                }
                Ok((s, codes))
            })
            .collect::<Result<_, _>>()?;

        let mut total = ErrorSums::default();
        let mut code_counts = vec![0usize; self.size()];
        for (s, codes) in &parts {
            total.add(s);
            for &q in codes {
                code_counts[q] += 1;
            }
        }
        let n = total.n as f64;
        let used = code_counts.iter().filter(|&&c| c > 0).count();
        Ok(ReconstructionMetrics {
            samples: total.n,
            gen_length_rmsd: (total.d / n).sqrt(),
            gen_polar_rmsd: (total.theta / n).sqrt(),
            gen_azimuth_rmsd: (total.phi / n).sqrt(),
            gen_abs_azimuth_rmsd: (total.abs_phi / n).sqrt(),
            sign_accuracy: total.sign_hits as f64 / n,
            understanding_length_rmsd: (total.u_len / (4.0 * n)).sqrt(),
            understanding_angle_rmsd: (total.u_ang / (6.0 * n)).sqrt(),
            normalized_rmsd: (total.normalized / (RECON_DIM as f64 * n)).sqrt(),
            utilization: used as f64 / self.size() as f64,
            code_counts,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Quantizer<U> {
        Quantizer {
            params: self.params.cast(),
            codebook: self.codebook.cast(),
            strategy: self.strategy,
        }
    }
}
