//! Training loop: Adam on the networks, EMA on the codebook.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{loss_and_grads, LossParts, MlpParams, ModelDims, Route};
use super::{Codebook, Quantizer, ReconstructionMetrics, VqError};
use crate::descriptors::{DescriptorVec, LengthScaling, NormStats, DIM};
use crate::frames::FrameStrategy;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    /// Commitment weight.
    pub beta: f64,
    pub ema_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub codebook_size: usize,
    pub dims: ModelDims,
    /// Codes whose EMA count falls below this after an epoch are re-seeded.
    pub dead_code_threshold: f64,
    /// Strategy the training descriptors were computed with; stored with
    /// the model so encoding uses the same frames.
    pub strategy: FrameStrategy,
    pub length_scaling: LengthScaling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            learning_rate: 1e-4,
            warmup_epochs: 5,
            beta: 0.25,
            ema_decay: 0.99,
            epochs: 100,
            seed: 0,
            codebook_size: 256,
            dims: ModelDims::default(),
            dead_code_threshold: 1e-3,
            strategy: FrameStrategy::Topo2D,
            length_scaling: LengthScaling::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VqError> {
        let positive = self.batch_size > 0
            && self.learning_rate > 0.0
            && self.epochs > 0
            && self.codebook_size >= 2
            && self.ema_decay >= 0.0
            && self.ema_decay < 1.0
            && self.beta >= 0.0
            && self.dims.hidden > 0
            && self.dims.latent > 0;
        if positive {
            Ok(())
        } else {
            Err(VqError::Config(format!("invalid training configuration {self:?}")))
        }
    }

    /// Stable digest of the configuration, used as the model tag.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }

    pub fn model_tag(&self) -> u64 {
        let d = self.digest();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: LossParts<f64>,
    pub utilization: f64,
    pub reseeded: usize,
    pub metrics: ReconstructionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub samples: usize,
    pub param_count: usize,
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn final_metrics(&self) -> Option<&ReconstructionMetrics> {
        self.epochs.last().map(|e| &e.metrics)
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut MlpParams<T>, grads: &MlpParams<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(Self::BETA1), T::of(Self::BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let lr = T::of(lr);
        let eps = T::of(Self::EPS);
        for (((p, &g), m), v) in params
            .params_mut()
            .zip(grads.params())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

const DIVERGENCE_LOSS: f64 = 1e6;

fn normalized_matrix<T: Scalar>(
    data: &[DescriptorVec<f64>],
    stats: &NormStats,
) -> Result<Array2<T>, VqError> {
    let mut out = Array2::zeros((data.len(), DIM));
    for (i, v) in data.iter().enumerate() {
        let y = stats.normalize(v)?;
        for k in 0..DIM {
            out[[i, k]] = T::of(y[k]);
        }
    }
    Ok(out)
}

/// Trains encoder, decoders and codebook on raw (unnormalized)
/// descriptors. Deterministic for a fixed configuration and data order.
pub fn train<T: Scalar>(
    data: &[DescriptorVec<f64>],
    cfg: &TrainConfig,
) -> Result<(Quantizer<T>, TrainReport), VqError> {
    cfg.validate()?;
    let k = cfg.codebook_size;
    if data.len() < 10 * k {
        return Err(VqError::InsufficientData {
            samples: data.len(),
            required: 10 * k,
        });
    }
    let stats = NormStats::fit_with(data, cfg.length_scaling)?;
    let x: Array2<T> = normalized_matrix(data, &stats)?;
    let n = x.nrows();
    let tag = cfg.model_tag();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut dims = cfg.dims;
    dims.input = DIM;
    let mut params: MlpParams<T> = MlpParams::init(&dims, tag, &mut rng);
    let seeds = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let init_latents = params.encode(x.select(Axis(0), &seeds).view());
    let mut codebook = Codebook::new(init_latents, stats, tag)?;

    let mut adam = Adam::new(params.param_count());
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let beta = T::of(cfg.beta);
    let decay = T::of(cfg.ema_decay);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut report = TrainReport {
        samples: n,
        param_count: params.param_count(),
        epochs: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossParts {
            total: 0.0,
            reconstruction: 0.0,
            sign: 0.0,
            commitment: 0.0,
        };
        let mut lr = cfg.learning_rate;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = x.select(Axis(0), chunk);
            let out = loss_and_grads(&params, &codebook, batch.view(), beta, Route::Quantized)?;
            let total = out.loss.total.to_f64_lossy();
            if !(total <= DIVERGENCE_LOSS) {
                return Err(VqError::Diverged {
                    epoch,
                    step,
                    loss: total,
                    report: Box::new(report),
                });
            }
            lr = if step < warmup_steps {
                cfg.learning_rate * (step + 1) as f64 / warmup_steps as f64
            } else {
                cfg.learning_rate
            };
            adam.step(&mut params, &out.grads, lr);
            codebook.ema_update(out.latents.view(), &out.codes, decay);
            if !params.is_finite() {
                return Err(VqError::NonFinite(format!("parameters after step {step}")));
            }
            let w = chunk.len() as f64;
            sums.total += total * w;
            sums.reconstruction += out.loss.reconstruction.to_f64_lossy() * w;
            sums.sign += out.loss.sign.to_f64_lossy() * w;
            sums.commitment += out.loss.commitment.to_f64_lossy() * w;
            step += 1;
        }

        let mut reseeded = 0;
        for j in 0..k {
            if codebook.ema_counts[j].to_f64_lossy() < cfg.dead_code_threshold {
                let pick = rng.gen_range(0..n);
                let z = params.encode(x.slice(ndarray::s![pick..pick + 1, ..]));
                codebook.reseed(j, z.row(0));
                reseeded += 1;
            }
        }

        let quantizer = Quantizer {
            params: params.clone(),
            codebook: codebook.clone(),
            strategy: cfg.strategy,
        };
        let metrics = quantizer.evaluate(data)?;
        log::info!(
            "epoch {epoch}: loss {:.5} utilization {:.3} reseeded {reseeded}",
            sums.total / n as f64,
            metrics.utilization
        );
        report.epochs.push(EpochReport {
            epoch,
            learning_rate: lr,
            loss: LossParts {
                total: sums.total / n as f64,
                reconstruction: sums.reconstruction / n as f64,
                sign: sums.sign / n as f64,
                commitment: sums.commitment / n as f64,
            },
            utilization: metrics.utilization,
            reseeded,
            metrics,
        });
    }

    Ok((
        Quantizer {
            params,
            codebook,
            strategy: cfg.strategy,
        },
        report,
    ))
}
