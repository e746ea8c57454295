//! Training loop: per-coordinate standardization, shuffled mini-batches,
//! one-sample reparameterized ELBO gradients, and a first-order
//! adaptive-moment optimizer (per-parameter step scaled by bias-corrected
//! first and second moment estimates).

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::aggregate::TrainingSet;
use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};
use crate::vae::{
    elbo_loss_and_grads, DecoderWeights, Mlp, MlpGrads, Provenance, VaeArchitecture,
};

/// Optimization knobs. `noise_sigma` is the Gaussian observation scale on
/// the standardized data scale, so the default 0.01 means one percent of
/// each coordinate's training standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

/// Provenance fields the caller threads through into the artifact.
#[derive(Debug, Clone, Default)]
pub struct TrainProvenance {
    pub grid_resolution: usize,
    pub lengthscale_shape: f64,
    pub lengthscale_scale: f64,
    pub sigma_scale: f64,
    pub config_hash: String,
}

/// Adam optimizer state over one MLP's parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    m: MlpGrads,
    v: MlpGrads,
    t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(template: &Mlp, learning_rate: f64) -> Self {
        let zeros = || MlpGrads {
            weights: template.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: template.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        };
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);

        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        };

        for layer in 0..params.weights.len() {
            let (w, gw) = (&mut params.weights[layer], &grads.weights[layer]);
            let (mw, vw) = (&mut self.m.weights[layer], &mut self.v.weights[layer]);
            ndarray::Zip::from(w).and(gw).and(mw).and(vw).for_each(|p, &g, m, v| {
                update(p, g, m, v);
            });
            let (b, gb) = (&mut params.biases[layer], &grads.biases[layer]);
            let (mb, vb) = (&mut self.m.biases[layer], &mut self.v.biases[layer]);
            ndarray::Zip::from(b).and(gb).and(mb).and(vb).for_each(|p, &g, m, v| {
                update(p, g, m, v);
            });
        }
    }
}

/// Train the VAE on a joint-aggregate training set and export the decoder.
///
/// Returns the artifact plus the per-epoch mean loss trace. Deterministic:
/// the same inputs and seed give bit-identical weights on one machine.
pub fn train(
    training: &TrainingSet,
    arch: &VaeArchitecture,
    cfg: &TrainConfig,
    prov: &TrainProvenance,
) -> Result<(DecoderWeights, Vec<f64>)> {
    let count = training.count();
    let dim = training.dim();
    if count == 0 {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let arch = arch.clone().validated(dim)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Invalid("epochs and batch size must be positive".into()));
    }
    if !(cfg.noise_sigma > 0.0) {
        return Err(Error::Invalid("noise_sigma must be positive".into()));
    }

    // Per-coordinate standardization, inverted at decode time.
    let mut mean = Array1::<f64>::zeros(dim);
    let mut sd = Array1::<f64>::zeros(dim);
    for j in 0..dim {
        let col = training.draws.column(j);
        let m = col.sum() / count as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / count.max(2) as f64;
        mean[j] = m;
        sd[j] = var.sqrt().max(1e-12);
    }
    let mut data = training.draws.clone();
    for j in 0..dim {
        let (m, s) = (mean[j], sd[j]);
        data.column_mut(j).mapv_inplace(|v| (v - m) / s);
    }

    let mut init_rng = stream(cfg.seed, StreamTag::VaeInit, 0);
    let mut params = arch.init(dim, &mut init_rng)?;
    let mut opt_enc = Adam::new(&params.encoder, cfg.learning_rate);
    let mut opt_dec = Adam::new(&params.decoder, cfg.learning_rate);

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..count).collect();
    let mut batch_buf = Array2::<f64>::zeros((cfg.batch_size.min(count), dim));

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = stream(cfg.seed, StreamTag::VaeShuffle, epoch as u64);
        for i in (1..count).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut noise_rng = stream(cfg.seed, StreamTag::VaeNoise, epoch as u64);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut batch = batch_buf.slice_mut(ndarray::s![0..b, ..]);
            for (row, &idx) in chunk.iter().enumerate() {
                batch.row_mut(row).assign(&data.row(idx));
            }
            let (report, enc_g, dec_g) =
                elbo_loss_and_grads(batch.view(), &params, cfg.noise_sigma, &mut noise_rng)?;
            if !report.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch starting at draw {seen}"
                )));
            }
            opt_enc.step(&mut params.encoder, &enc_g);
            opt_dec.step(&mut params.decoder, &dec_g);
            epoch_loss += report.total * b as f64;
            seen += b;
        }
        trace.push(epoch_loss / seen as f64);
    }

    let final_loss = *trace.last().unwrap();
    let provenance = Provenance {
        root_seed: cfg.seed,
        epochs: cfg.epochs,
        final_loss,
        train_count: count,
        grid_resolution: prov.grid_resolution,
        noise_sigma: cfg.noise_sigma,
        lengthscale_shape: prov.lengthscale_shape,
        lengthscale_scale: prov.lengthscale_scale,
        sigma_scale: prov.sigma_scale,
        config_hash: prov.config_hash.clone(),
    };
    let weights = DecoderWeights::new(
        params.decoder,
        arch.latent_dim,
        training.k1,
        training.k2,
        mean,
        sd,
        provenance,
    )?;
    Ok((weights, trace))
}
