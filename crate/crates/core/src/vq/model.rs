//! Network parameters, the training objective and its gradients.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::{Codebook, VqError};
use crate::descriptors::{DIM, RECON_DIM, SIGN_INDEX};
use crate::scalar::Scalar;

/// Layer widths of the three networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
    pub output: usize,
    /// Hidden layers in the encoder.
    pub encoder_hidden_layers: usize,
    /// Hidden layers in the decoder and in the sign head.
    pub decoder_hidden_layers: usize,
    pub sign_head: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            input: DIM,
            hidden: 128,
            latent: 5,
            output: RECON_DIM,
            encoder_hidden_layers: 3,
            decoder_hidden_layers: 2,
            sign_head: true,
        }
    }
}

impl ModelDims {
    fn widths(&self, from: usize, hidden_layers: usize, to: usize) -> Vec<usize> {
        let mut w = vec![from];
        w.extend(std::iter::repeat(self.hidden).take(hidden_layers));
        w.push(to);
        w
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        self.widths(self.input, self.encoder_hidden_layers, self.latent)
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        self.widths(self.latent, self.decoder_hidden_layers, self.output)
    }

    pub fn sign_widths(&self) -> Vec<usize> {
        self.widths(self.latent, self.decoder_hidden_layers, 1)
    }
}

/// Encoder, regression decoder and optional sign head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T> {
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
    pub sign_head: Option<Mlp<T>>,
    pub model_tag: u64,
}

impl<T: Scalar> MlpParams<T> {
    pub fn init<R: Rng>(dims: &ModelDims, model_tag: u64, rng: &mut R) -> Self {
        Self {
            encoder: Mlp::init(&dims.encoder_widths(), rng),
            decoder: Mlp::init(&dims.decoder_widths(), rng),
            sign_head: dims.sign_head.then(|| Mlp::init(&dims.sign_widths(), rng)),
            model_tag,
        }
    }

    pub fn dims(&self) -> ModelDims {
        let enc = self.encoder.widths();
        let dec = self.decoder.widths();
        ModelDims {
            input: enc[0],
            hidden: enc.get(1).copied().filter(|_| enc.len() > 2).unwrap_or(0),
            latent: *enc.last().expect("non-empty"),
            output: *dec.last().expect("non-empty"),
            encoder_hidden_layers: enc.len() - 2,
            decoder_hidden_layers: dec.len() - 2,
            sign_head: self.sign_head.is_some(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            sign_head: self.sign_head.as_ref().map(Mlp::zeros_like),
            model_tag: self.model_tag,
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.decoder.param_count()
            + self.sign_head.as_ref().map_or(0, Mlp::param_count)
    }

    /// All parameters in a fixed order: encoder, decoder, sign head.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.encoder
            .params()
            .chain(self.decoder.params())
            .chain(self.sign_head.iter().flat_map(|m| m.params()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.encoder
            .params_mut()
            .chain(self.decoder.params_mut())
            .chain(self.sign_head.iter_mut().flat_map(|m| m.params_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|x| x.is_finite())
    }

    pub fn encode(&self, x: ArrayView2<T>) -> Array2<T> {
        self.encoder.forward(x)
    }

    /// Regression output (`n x 13`) and sign logits (`n`, zero without a head).
    pub fn decode(&self, z: ArrayView2<T>) -> (Array2<T>, Array1<T>) {
        let recon = self.decoder.forward(z);
        let logits = match &self.sign_head {
            Some(head) => head.forward(z).column(0).to_owned(),
            None => Array1::zeros(z.nrows()),
        };
        (recon, logits)
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            sign_head: self.sign_head.as_ref().map(Mlp::cast),
            model_tag: self.model_tag,
        }
    }
}

/// How the decoder input is formed from the encoder output `z_e`.
#[derive(Debug, Clone, Copy)]
pub enum Route<'a, T> {
    /// Nearest code, straight-through gradient, commitment term.
    Quantized,
    /// `z_e` fed directly to the decoder, no commitment term: a plain
    /// autoencoder.
    Bypass,
    /// Decoder input `z_e + residual` with a fixed residual and fixed code
    /// assignments. At the point where `residual = c_q - z_e` this has the
    /// quantized loss value and its exact gradient is the straight-through
    /// gradient, which makes the estimator checkable by finite differences.
    Frozen {
        codes: &'a [usize],
        residual: ArrayView2<'a, T>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub total: T,
    pub reconstruction: T,
    pub sign: T,
    pub commitment: T,
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: LossParts<T>,
    pub grads: MlpParams<T>,
    pub codes: Vec<usize>,
    /// Encoder outputs, `n x latent`.
    pub latents: Array2<T>,
}

fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Splits a normalized batch (`n x 14`) into regression targets and sign
/// labels (1 for positive sign).
pub fn split_targets<T: Scalar>(batch: ArrayView2<T>) -> (Array2<T>, Array1<T>) {
    let n = batch.nrows();
    let mut targets = Array2::zeros((n, RECON_DIM));
    targets.slice_mut(s![.., ..SIGN_INDEX]).assign(&batch.slice(s![.., ..SIGN_INDEX]));
    targets
        .slice_mut(s![.., SIGN_INDEX..])
        .assign(&batch.slice(s![.., SIGN_INDEX + 1..]));
    let labels = batch
        .column(SIGN_INDEX)
        .mapv(|x| if x > T::zero() { T::one() } else { T::zero() });
    (targets, labels)
}

/// Batch-mean objective: squared reconstruction error summed over the 13
/// regression dims, sign cross-entropy, and `beta` times the commitment
/// distance `|sg(c_q) - z_e|^2`. The codebook itself is not trained by
/// gradient (see [`Codebook::ema_update`]).
pub fn loss_and_grads<T: Scalar>(
    params: &MlpParams<T>,
    codebook: &Codebook<T>,
    batch: ArrayView2<T>,
    beta: T,
    route: Route<'_, T>,
) -> Result<LossOutput<T>, VqError> {
    let n = batch.nrows();
    if n == 0 {
        return Err(VqError::Config("empty batch".into()));
    }
    let inv_n = T::one() / T::of(n as f64);
    let (targets, labels) = split_targets(batch);
    let (ze, enc_cache) = params.encoder.forward_cached(batch);

    let (codes, dec_in, commit_ref) = match route {
        Route::Quantized => {
            let codes = codebook.quantize_batch(ze.view());
            let zq = codebook.codes.select(Axis(0), &codes);
            (codes, zq.clone(), Some(zq))
        }
        Route::Bypass => (codebook.quantize_batch(ze.view()), ze.clone(), None),
        Route::Frozen { codes, residual } => {
            let zq = codebook.codes.select(Axis(0), codes);
            (codes.to_vec(), &ze + &residual, Some(zq))
        }
    };

    let (recon, dec_cache) = params.decoder.forward_cached(dec_in.view());
    let diff = &recon - &targets;
    let reconstruction = diff.iter().map(|&d| d * d).sum::<T>() * inv_n;
    let grad_recon = diff.mapv(|d| d * T::of(2.0) * inv_n);
    let (grads_dec, mut grad_in) = params.decoder.backward(&dec_cache, grad_recon.view());

    let mut sign = T::zero();
    let mut grads_sign = None;
    if let Some(head) = &params.sign_head {
        let (logits, cache) = head.forward_cached(dec_in.view());
        let mut g = Array2::zeros((n, 1));
        for i in 0..n {
            let s = logits[[i, 0]];
            let y = labels[i];
            sign = sign + softplus(s) - y * s;
            g[[i, 0]] = (sigmoid(s) - y) * inv_n;
        }
        sign = sign * inv_n;
        let (gh, gin) = head.backward(&cache, g.view());
        grad_in += &gin;
        grads_sign = Some(gh);
    }

    let mut commitment = T::zero();
    if let Some(zq) = &commit_ref {
        let d = &ze - zq;
        commitment = d.iter().map(|&x| x * x).sum::<T>() * inv_n;
        // the straight-through copy is grad_in itself
        grad_in.zip_mut_with(&d, |g, &di| *g = *g + beta * T::of(2.0) * di * inv_n);
    }

    let (grads_enc, _) = params.encoder.backward(&enc_cache, grad_in.view());
    let total = reconstruction + sign + beta * commitment;
    if !total.is_finite() {
        return Err(VqError::NonFinite(format!(
            "loss (reconstruction {reconstruction}, sign {sign}, commitment {commitment})"
        )));
    }
    Ok(LossOutput {
        loss: LossParts {
            total,
            reconstruction,
            sign,
            commitment,
        },
        grads: MlpParams {
            encoder: grads_enc,
            decoder: grads_dec,
            sign_head: grads_sign,
            model_tag: params.model_tag,
        },
        codes,
        latents: ze,
    })
}
