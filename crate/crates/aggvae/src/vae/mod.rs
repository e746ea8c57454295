//! The prior-encoding VAE: a from-scratch MLP encoder/decoder pair with
//! exact-gradient backpropagation, trained on joint aggregate draws so the
//! decoder can stand in for the aggregated-GP prior at inference time.

mod train;
mod weights;

pub use train::{train, Adam, TrainConfig, TrainProvenance};
pub use weights::{DecoderWeights, Provenance};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Invalid(format!("unknown activation {other:?}"))),
        }
    }

    fn apply(&self, x: &mut Array2<f64>) {
        match self {
            Activation::Tanh => x.mapv_inplace(f64::tanh),
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Derivative expressed through the post-activation value; the ReLU
    /// subgradient at 0 is taken as 0.
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Layer sizes (input, hidden..., output) plus the hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn validated(self) -> Result<Self> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Invalid("an MLP needs at least 2 layer sizes".into()));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Invalid("layer sizes must be positive".into()));
        }
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// A dense MLP: affine layers with the hidden activation between them and a
/// linear output layer. Weights are stored input-major (`in x out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Per-layer parameter gradients matching an [`Mlp`]'s shape.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Xavier-uniform initialization from the given generator.
    pub fn init(spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        let spec = spec.validated()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-limit..limit)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp { spec, weights, biases })
    }

    /// All-zero parameters (used in tests and as an Adam-state template).
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        let spec = spec.validated()?;
        let weights = spec
            .layer_sizes
            .windows(2)
            .map(|w| Array2::zeros((w[0], w[1])))
            .collect();
        let biases = spec.layer_sizes[1..].iter().map(|&s| Array1::zeros(s)).collect();
        Ok(Mlp { spec, weights, biases })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Batched forward pass. Returns the per-layer values: index 0 is the
    /// input, hidden entries are post-activation, the last entry is the raw
    /// linear output.
    pub fn forward(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        debug_assert_eq!(x.ncols(), self.spec.input_dim());
        let n_layers = self.n_layers();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_owned());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[i].dot(w);
            for mut row in z.rows_mut() {
                row += b;
            }
            if i + 1 < n_layers {
                self.spec.activation.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    pub fn output(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).pop().unwrap()
    }

    /// Single-vector forward pass.
    pub fn forward_vec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let row = x.insert_axis(Axis(0));
        self.output(row).index_axis_move(Axis(0), 0)
    }

    /// Backpropagation from `d_out = dLoss/d(output)` through the cached
    /// forward values. Returns parameter gradients and `dLoss/d(input)`.
    pub fn backward(&self, acts: &[Array2<f64>], d_out: Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let n_layers = self.n_layers();
        debug_assert_eq!(acts.len(), n_layers + 1);
        let mut g = d_out;
        let mut d_weights = vec![Array2::zeros((0, 0)); n_layers];
        let mut d_biases = vec![Array1::zeros(0); n_layers];
        for i in (0..n_layers).rev() {
            if i + 1 < n_layers {
                // g arrives as dLoss/d(post-activation); fold in act'.
                ndarray::Zip::from(&mut g).and(&acts[i + 1]).for_each(|gv, &av| {
                    *gv *= self.spec.activation.derivative_from_output(av);
                });
            }
            d_weights[i] = acts[i].t().dot(&g);
            d_biases[i] = g.sum_axis(Axis(0));
            g = g.dot(&self.weights[i].t());
        }
        (
            MlpGrads { weights: d_weights, biases: d_biases },
            g,
        )
    }

    /// Vector-Jacobian product with respect to the input only (no parameter
    /// gradients); used inside HMC where the decoder is frozen.
    pub fn vjp_input(&self, acts: &[Array2<f64>], d_out: Array2<f64>) -> Array2<f64> {
        let n_layers = self.n_layers();
        let mut g = d_out;
        for i in (0..n_layers).rev() {
            if i + 1 < n_layers {
                ndarray::Zip::from(&mut g).and(&acts[i + 1]).for_each(|gv, &av| {
                    *gv *= self.spec.activation.derivative_from_output(av);
                });
            }
            g = g.dot(&self.weights[i].t());
        }
        g
    }
}

/// Encoder/decoder pair under training.
#[derive(Debug, Clone)]
pub struct VaeParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
}

/// Architecture knobs; the encoder mirrors the decoder's hidden stack.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeArchitecture {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl VaeArchitecture {
    /// Default for a given data dimension: two hidden layers of width
    /// `4 * dim`, tanh, latent `ceil(dim / 4)`.
    pub fn default_for(dim: usize) -> Self {
        VaeArchitecture {
            hidden: vec![4 * dim, 4 * dim],
            latent_dim: dim.div_ceil(4),
            activation: Activation::Tanh,
        }
    }

    pub fn validated(self, data_dim: usize) -> Result<Self> {
        if self.latent_dim == 0 {
            return Err(Error::Invalid("latent dimension must be positive".into()));
        }
        if self.latent_dim >= data_dim {
            return Err(Error::Invalid(format!(
                "latent dimension {} must be smaller than the data dimension {data_dim}",
                self.latent_dim
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Invalid("hidden widths must be positive".into()));
        }
        Ok(self)
    }

    pub fn encoder_spec(&self, data_dim: usize) -> MlpSpec {
        let mut sizes = vec![data_dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(2 * self.latent_dim);
        MlpSpec { layer_sizes: sizes, activation: self.activation }
    }

    pub fn decoder_spec(&self, data_dim: usize) -> MlpSpec {
        let mut sizes = vec![self.latent_dim];
        sizes.extend(self.hidden.iter().rev().copied());
        sizes.push(data_dim);
        MlpSpec { layer_sizes: sizes, activation: self.activation }
    }

    pub fn init(&self, data_dim: usize, rng: &mut impl Rng) -> Result<VaeParams> {
        let arch = self.clone().validated(data_dim)?;
        Ok(VaeParams {
            encoder: Mlp::init(arch.encoder_spec(data_dim), rng)?,
            decoder: Mlp::init(arch.decoder_spec(data_dim), rng)?,
            latent_dim: arch.latent_dim,
        })
    }
}

/// Encoder forward pass for one observation: the output splits into the
/// variational mean and log-scale halves.
pub fn encode(y: ArrayView1<f64>, encoder: &Mlp, latent_dim: usize) -> (Array1<f64>, Array1<f64>) {
    debug_assert_eq!(encoder.spec.output_dim(), 2 * latent_dim);
    let out = encoder.forward_vec(y);
    (
        out.slice(s![0..latent_dim]).to_owned(),
        out.slice(s![latent_dim..]).to_owned(),
    )
}

/// Closed-form KL divergence from `N(mu, diag(sigma^2))` to `N(0, I)` with
/// the scale supplied as `log sigma`.
pub fn kl_gaussian(mu: ArrayView1<f64>, log_sigma: ArrayView1<f64>) -> f64 {
    debug_assert_eq!(mu.len(), log_sigma.len());
    mu.iter()
        .zip(log_sigma.iter())
        .map(|(&m, &ls)| {
            let s2 = (2.0 * ls).exp();
            0.5 * (s2 + m * m - 1.0 - 2.0 * ls)
        })
        .sum()
}

fn kl_batch(mu: &Array2<f64>, log_sigma: &Array2<f64>) -> f64 {
    mu.iter()
        .zip(log_sigma.iter())
        .map(|(&m, &ls)| {
            let s2 = (2.0 * ls).exp();
            0.5 * (s2 + m * m - 1.0 - 2.0 * ls)
        })
        .sum()
}

/// The two ELBO terms, both averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboReport {
    pub reconstruction_term: f64,
    pub kl_term: f64,
    pub total: f64,
}

/// Negative ELBO of a batch with a Gaussian observation model of fixed
/// scale `noise_sigma` and a one-sample reparameterized expectation.
/// Deterministic given `(batch, params, noise_sigma, seed)`.
pub fn elbo_loss(
    batch: ArrayView2<f64>,
    params: &VaeParams,
    noise_sigma: f64,
    seed: u64,
) -> Result<ElboReport> {
    let mut rng = stream(seed, StreamTag::VaeNoise, 0);
    elbo_loss_and_grads(batch, params, noise_sigma, &mut rng).map(|(r, _, _)| r)
}

/// Loss plus exact parameter gradients, consuming one reparameterization
/// noise draw per datum from `rng`.
pub fn elbo_loss_and_grads(
    batch: ArrayView2<f64>,
    params: &VaeParams,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<(ElboReport, MlpGrads, MlpGrads)> {
    let b = batch.nrows();
    if b == 0 {
        return Err(Error::Invalid("elbo batch is empty".into()));
    }
    if noise_sigma <= 0.0 {
        return Err(Error::Invalid(format!(
            "noise_sigma must be positive, got {noise_sigma}"
        )));
    }
    let d = params.latent_dim;
    let k = batch.ncols();
    if params.encoder.spec.input_dim() != k || params.decoder.spec.output_dim() != k {
        return Err(Error::DimMismatch(format!(
            "batch dimension {k} does not match the encoder/decoder"
        )));
    }

    let enc_acts = params.encoder.forward(batch);
    let enc_out = enc_acts.last().unwrap();
    let mu = enc_out.slice(s![.., 0..d]).to_owned();
    let log_sigma = enc_out.slice(s![.., d..]).to_owned();
    let sigma = log_sigma.mapv(f64::exp);

    let eps = Array2::from_shape_fn((b, d), |_| rng.sample::<f64, _>(StandardNormal));
    let z = &mu + &(&sigma * &eps);

    let dec_acts = params.decoder.forward(z.view());
    let y_hat = dec_acts.last().unwrap();
    let resid = y_hat - &batch;

    let inv_b = 1.0 / b as f64;
    let norm_const = 0.5 * (2.0 * std::f64::consts::PI * noise_sigma * noise_sigma).ln();
    let sse: f64 = resid.iter().map(|r| r * r).sum();
    let reconstruction_term =
        inv_b * sse / (2.0 * noise_sigma * noise_sigma) + k as f64 * norm_const;
    let kl_term = inv_b * kl_batch(&mu, &log_sigma);
    let report = ElboReport {
        reconstruction_term,
        kl_term,
        total: reconstruction_term + kl_term,
    };

    // Backward. d(recon)/d(y_hat) first, through the decoder to z, then the
    // reparameterization splits the z-gradient between mu and log_sigma.
    let d_yhat = resid.mapv(|r| r * inv_b / (noise_sigma * noise_sigma));
    let (dec_grads, d_z) = params.decoder.backward(&dec_acts, d_yhat);

    let mut d_mu = d_z.clone();
    d_mu.zip_mut_with(&mu, |g, &m| *g += m * inv_b);
    let mut d_log_sigma = &d_z * &eps * &sigma;
    d_log_sigma.zip_mut_with(&sigma, |g, &s| *g += (s * s - 1.0) * inv_b);

    let mut d_enc_out = Array2::<f64>::zeros((b, 2 * d));
    d_enc_out.slice_mut(s![.., 0..d]).assign(&d_mu);
    d_enc_out.slice_mut(s![.., d..]).assign(&d_log_sigma);
    let (enc_grads, _) = params.encoder.backward(&enc_acts, d_enc_out);

    Ok((report, enc_grads, dec_grads))
}

/// Deterministic decoder pass through the frozen weights, inverting the
/// training standardization so outputs live on the original aggregate scale.
pub fn decode(z: ArrayView1<f64>, weights: &DecoderWeights) -> Result<Array1<f64>> {
    if z.len() != weights.latent_dim {
        return Err(Error::DimMismatch(format!(
            "latent input has length {}, decoder wants {}",
            z.len(),
            weights.latent_dim
        )));
    }
    let raw = weights.mlp.forward_vec(z);
    Ok(&weights.standardize_mean + &(&weights.standardize_sd * &raw))
}

/// One surrogate-prior draw: z ~ N(0, I_d) pushed through the decoder.
pub fn sample_prior(weights: &DecoderWeights, seed: u64) -> Array1<f64> {
    sample_prior_batch(weights, 1, seed).index_axis_move(Axis(0), 0)
}

/// Batch of surrogate-prior draws; draw `i` uses the stream `(seed, i)`, so
/// any prefix of the batch is reproducible independently of `count`.
pub fn sample_prior_batch(weights: &DecoderWeights, count: usize, seed: u64) -> Array2<f64> {
    let d = weights.latent_dim;
    let k = weights.output_dim();
    let mut out = Array2::<f64>::zeros((count, k));
    for i in 0..count {
        let mut rng = stream(seed, StreamTag::PriorSample, i as u64);
        let z = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        let y = decode(z.view(), weights).expect("dimensions fixed by construction");
        out.row_mut(i).assign(&y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn seeded_rng(i: u64) -> impl Rng {
        stream(1000 + i, StreamTag::VaeInit, 0)
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let spec = MlpSpec {
            layer_sizes: vec![3, 5, 2],
            activation: Activation::Tanh,
        };
        let mlp = Mlp::zeros(spec).unwrap();
        let out = mlp.forward_vec(arr1(&[1.0, -2.0, 0.5]).view());
        assert_eq!(out, arr1(&[0.0, 0.0]));
    }

    #[test]
    fn single_affine_layer_by_hand() {
        let spec = MlpSpec {
            layer_sizes: vec![2, 1],
            activation: Activation::Tanh,
        };
        let mut mlp = Mlp::zeros(spec).unwrap();
        mlp.weights[0][(0, 0)] = 2.0;
        mlp.weights[0][(1, 0)] = -3.0;
        mlp.biases[0][0] = 0.25;
        // Output layer is linear: 2x - 3y + 0.25.
        let out = mlp.forward_vec(arr1(&[1.5, 0.5]).view());
        assert!((out[0] - (2.0 * 1.5 - 3.0 * 0.5 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn encode_zero_params_gives_zero_mu_and_logsigma() {
        let spec = MlpSpec {
            layer_sizes: vec![4, 6, 4],
            activation: Activation::Tanh,
        };
        let enc = Mlp::zeros(spec).unwrap();
        let (mu, ls) = encode(arr1(&[0.3, -0.1, 0.9, 2.0]).view(), &enc, 2);
        assert_eq!(mu, arr1(&[0.0, 0.0]));
        assert_eq!(ls, arr1(&[0.0, 0.0]));
        assert_eq!(mu.len(), 2);
        assert_eq!(ls.len(), 2);
    }

    #[test]
    fn kl_gaussian_reference_points() {
        assert_eq!(kl_gaussian(arr1(&[0.0]).view(), arr1(&[0.0]).view()), 0.0);
        let v = kl_gaussian(arr1(&[1.0]).view(), arr1(&[0.0]).view());
        assert!((v - 0.5).abs() < 1e-15);

        let mut rng = seeded_rng(0);
        for _ in 0..200 {
            let d = 3;
            let mu = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
            let ls = Array1::from_shape_fn(d, |_| rng.random_range(-1.5..1.5));
            let kl = kl_gaussian(mu.view(), ls.view());
            assert!(kl >= 0.0, "kl = {kl} at mu {mu:?}, log_sigma {ls:?}");
            if mu.iter().any(|&m| m != 0.0) || ls.iter().any(|&l| l != 0.0) {
                assert!(kl > 0.0);
            }
        }
    }

    /// Full finite-difference Jacobian of the raw decoder against the
    /// vector-Jacobian products, at step 1e-6.
    #[test]
    fn decoder_jacobian_matches_finite_differences() {
        let mut rng = seeded_rng(1);
        let spec = MlpSpec {
            layer_sizes: vec![3, 8, 5, 4],
            activation: Activation::Tanh,
        };
        let mlp = Mlp::init(spec, &mut rng).unwrap();
        let z = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));

        let h = 1e-6;
        let out_dim = 4;
        let mut fd = Array2::<f64>::zeros((out_dim, 3));
        for j in 0..3 {
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let col = (&mlp.forward_vec(zp.view()) - &mlp.forward_vec(zm.view())) / (2.0 * h);
            fd.column_mut(j).assign(&col);
        }

        let acts = mlp.forward(z.view().insert_axis(Axis(0)));
        for r in 0..out_dim {
            let mut cot = Array2::<f64>::zeros((1, out_dim));
            cot[(0, r)] = 1.0;
            let row = mlp.vjp_input(&acts, cot);
            for j in 0..3 {
                assert!(
                    (row[(0, j)] - fd[(r, j)]).abs() <= 1e-5,
                    "J[{r},{j}]: vjp {} vs fd {}",
                    row[(0, j)],
                    fd[(r, j)]
                );
            }
        }
    }

    #[test]
    fn decode_is_deterministic_and_respects_standardization() {
        let mut rng = seeded_rng(2);
        let arch = VaeArchitecture {
            hidden: vec![6],
            latent_dim: 2,
            activation: Activation::Tanh,
        };
        let params = arch.init(5, &mut rng).unwrap();
        let w = DecoderWeights::new(
            params.decoder.clone(),
            2,
            2,
            3,
            Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            Array1::from_vec(vec![1.0, 0.5, 2.0, 1.0, 1.0]),
            Provenance::default(),
        )
        .unwrap();
        let z = arr1(&[0.3, -0.8]);
        let a = decode(z.view(), &w).unwrap();
        let b = decode(z.view(), &w).unwrap();
        assert_eq!(a, b);
        let raw = params.decoder.forward_vec(z.view());
        for i in 0..5 {
            let expect = w.standardize_mean[i] + w.standardize_sd[i] * raw[i];
            assert_eq!(a[i], expect);
        }
    }

    /// Central finite differences over every encoder and decoder parameter
    /// on a 3-unit toy problem.
    #[test]
    fn elbo_gradients_match_finite_differences() {
        let mut rng = seeded_rng(3);
        let arch = VaeArchitecture {
            hidden: vec![5],
            latent_dim: 2,
            activation: Activation::Tanh,
        };
        let mut params = arch.init(3, &mut rng).unwrap();
        let batch = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.5..1.5));
        let noise_sigma = 0.3;
        let seed = 77;

        let mut noise_rng = stream(seed, StreamTag::VaeNoise, 0);
        let (_, enc_g, dec_g) =
            elbo_loss_and_grads(batch.view(), &params, noise_sigma, &mut noise_rng).unwrap();

        let h = 1e-6;
        let check = |analytic: f64, loss_at: &mut dyn FnMut(&mut VaeParams, f64) -> f64,
                         params: &mut VaeParams,
                         what: &str| {
            let lp = loss_at(params, h);
            let lm = loss_at(params, -h);
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs()).max(1e-2);
            assert!(
                (analytic - fd).abs() / denom <= 1e-4,
                "{what}: analytic {analytic} vs fd {fd}"
            );
        };

        // Encoder parameters.
        for layer in 0..params.encoder.n_layers() {
            let (rows, cols) = params.encoder.weights[layer].dim();
            for r in (0..rows).step_by(2) {
                for c in (0..cols).step_by(2) {
                    let analytic = enc_g.weights[layer][(r, c)];
                    let mut f = |p: &mut VaeParams, delta: f64| {
                        p.encoder.weights[layer][(r, c)] += delta;
                        let out = elbo_loss(batch.view(), p, noise_sigma, seed).unwrap().total;
                        p.encoder.weights[layer][(r, c)] -= delta;
                        out
                    };
                    check(analytic, &mut f, &mut params, &format!("enc w{layer}[{r},{c}]"));
                }
            }
            for i in 0..params.encoder.biases[layer].len() {
                let analytic = enc_g.biases[layer][i];
                let mut f = |p: &mut VaeParams, delta: f64| {
                    p.encoder.biases[layer][i] += delta;
                    let out = elbo_loss(batch.view(), p, noise_sigma, seed).unwrap().total;
                    p.encoder.biases[layer][i] -= delta;
                    out
                };
                check(analytic, &mut f, &mut params, &format!("enc b{layer}[{i}]"));
            }
        }
        // Decoder parameters.
        for layer in 0..params.decoder.n_layers() {
            let (rows, cols) = params.decoder.weights[layer].dim();
            for r in (0..rows).step_by(2) {
                for c in (0..cols).step_by(2) {
                    let analytic = dec_g.weights[layer][(r, c)];
                    let mut f = |p: &mut VaeParams, delta: f64| {
                        p.decoder.weights[layer][(r, c)] += delta;
                        let out = elbo_loss(batch.view(), p, noise_sigma, seed).unwrap().total;
                        p.decoder.weights[layer][(r, c)] -= delta;
                        out
                    };
                    check(analytic, &mut f, &mut params, &format!("dec w{layer}[{r},{c}]"));
                }
            }
            for i in 0..params.decoder.biases[layer].len() {
                let analytic = dec_g.biases[layer][i];
                let mut f = |p: &mut VaeParams, delta: f64| {
                    p.decoder.biases[layer][i] += delta;
                    let out = elbo_loss(batch.view(), p, noise_sigma, seed).unwrap().total;
                    p.decoder.biases[layer][i] -= delta;
                    out
                };
                check(analytic, &mut f, &mut params, &format!("dec b{layer}[{i}]"));
            }
        }
    }

    #[test]
    fn perfect_reconstruction_at_prior_leaves_only_constants() {
        // Encoder all zero: mu = 0, log_sigma = 0, so q equals the prior and
        // the KL vanishes. Decoder all zero reproduces y = 0 exactly, so
        // only the Gaussian normalizing constant remains.
        let arch = VaeArchitecture {
            hidden: vec![4],
            latent_dim: 1,
            activation: Activation::Tanh,
        };
        let params = VaeParams {
            encoder: Mlp::zeros(arch.encoder_spec(1)).unwrap(),
            decoder: Mlp::zeros(arch.decoder_spec(1)).unwrap(),
            latent_dim: 1,
        };
        let batch = Array2::<f64>::zeros((5, 1));
        let noise_sigma = 0.2;
        let report = elbo_loss(batch.view(), &params, noise_sigma, 0).unwrap();
        let norm_const = 0.5 * (2.0 * std::f64::consts::PI * noise_sigma * noise_sigma).ln();
        assert!((report.kl_term - 0.0).abs() < 1e-15);
        assert!((report.total - norm_const).abs() < 1e-12);
    }

    #[test]
    fn elbo_kl_term_is_nonnegative() {
        let mut rng = seeded_rng(5);
        let arch = VaeArchitecture {
            hidden: vec![7],
            latent_dim: 2,
            activation: Activation::Relu,
        };
        for trial in 0..20 {
            let params = arch.init(4, &mut rng).unwrap();
            let batch = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
            let report = elbo_loss(batch.view(), &params, 0.5, trial).unwrap();
            assert!(report.kl_term >= 0.0);
            assert!((report.total - report.reconstruction_term - report.kl_term).abs() < 1e-12);
        }
    }
}
