//! Surrogate-prior posterior: latent z through the frozen decoder, scaled by
//! s, shifted by the intercept, into the shared binomial likelihood.
//!
//! Unconstrained parameter layout: `[b0, log_s, z...]`. The scale is sampled
//! in log space with its Jacobian folded into the prior term.

use ndarray::{Array1, Array2, Axis};

use crate::dist::{half_normal_logpdf, normal_logpdf, sigmoid};
use crate::error::{Error, Result};
use crate::inference::nuts::PosteriorModel;
use crate::inference::{binomial_loglik_and_grad, ObservedData, RegressionPriors};
use crate::vae::DecoderWeights;

pub struct AggVaePosterior {
    decoder: DecoderWeights,
    data: ObservedData,
    priors: RegressionPriors,
    param_names: Vec<String>,
    derived_names: Vec<String>,
}

const LN_2PI: f64 = 1.8378770664093453;

impl AggVaePosterior {
    pub fn new(
        decoder: DecoderWeights,
        data: ObservedData,
        priors: RegressionPriors,
    ) -> Result<Self> {
        if decoder.k1 != data.data_old.len() || decoder.k2 != data.data_new.len() {
            return Err(Error::DimMismatch(format!(
                "decoder encodes {}+{} units but data has {}+{}",
                decoder.k1,
                decoder.k2,
                data.data_old.len(),
                data.data_new.len()
            )));
        }
        let d = decoder.latent_dim;
        let mut param_names = vec!["b0".to_string(), "log_s".to_string()];
        param_names.extend((0..d).map(|i| format!("z[{i}]")));

        let mut derived_names = vec!["s".to_string()];
        for label in data.data_old.labels() {
            derived_names.push(format!("re_old[{label}]"));
        }
        for label in data.data_new.labels() {
            derived_names.push(format!("re_new[{label}]"));
        }
        for label in data.data_old.labels() {
            derived_names.push(format!("theta_old[{label}]"));
        }
        for label in data.data_new.labels() {
            derived_names.push(format!("theta_new[{label}]"));
        }
        Ok(AggVaePosterior {
            decoder,
            data,
            priors,
            param_names,
            derived_names,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim
    }

    fn split(&self, x: &[f64]) -> (f64, f64, Array1<f64>) {
        let b0 = x[0];
        let log_s = x[1];
        let z = Array1::from_iter(x[2..].iter().copied());
        (b0, log_s, z)
    }

    /// Decoder output on the aggregate scale plus the cached forward pass.
    fn decode_with_acts(&self, z: &Array1<f64>) -> (Array1<f64>, Vec<Array2<f64>>) {
        let acts = self
            .decoder
            .mlp
            .forward(z.view().insert_axis(Axis(0)));
        let raw = acts.last().unwrap().index_axis(Axis(0), 0);
        let f = &self.decoder.standardize_mean + &(&self.decoder.standardize_sd * &raw);
        (f, acts)
    }

    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (b0, log_s, z) = self.split(x);
        let s = log_s.exp();
        if !s.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (f, acts) = self.decode_with_acts(&z);
        let k1 = self.decoder.k1;
        let k_total = self.decoder.output_dim();

        let logits: Vec<f64> = (0..k_total).map(|i| b0 + s * f[i]).collect();
        let mut g_old = vec![0.0; k1];
        let mut g_new = vec![0.0; k_total - k1];
        let ll_old = binomial_loglik_and_grad(&logits[..k1], &self.data.data_old, &mut g_old);
        let ll_new = binomial_loglik_and_grad(&logits[k1..], &self.data.data_new, &mut g_new);

        let d = z.len() as f64;
        let z_sq: f64 = z.iter().map(|v| v * v).sum();
        let lp = ll_old
            + ll_new
            + normal_logpdf(b0, 0.0, self.priors.intercept_sd)
            + half_normal_logpdf(s, self.priors.s_scale)
            + log_s // Jacobian of s = exp(log_s)
            - 0.5 * z_sq
            - 0.5 * d * LN_2PI;

        if let Some(grad) = grad {
            let g_all: Vec<f64> = g_old.iter().chain(g_new.iter()).copied().collect();
            // Intercept.
            grad[0] = g_all.iter().sum::<f64>()
                - b0 / (self.priors.intercept_sd * self.priors.intercept_sd);
            // Scale, in log space.
            let gf_dot: f64 = g_all.iter().zip(f.iter()).map(|(g, f)| g * f).sum();
            let a2 = self.priors.s_scale * self.priors.s_scale;
            grad[1] = s * gf_dot - s * s / a2 + 1.0;
            // Latents: chain rule through the decoder, standardization first.
            let mut cot = Array2::<f64>::zeros((1, k_total));
            for i in 0..k_total {
                cot[(0, i)] = g_all[i] * s * self.decoder.standardize_sd[i];
            }
            let dz = self.decoder.mlp.vjp_input(&acts, cot);
            for i in 0..z.len() {
                grad[2 + i] = dz[(0, i)] - z[i];
            }
        }
        lp
    }

    /// Checked evaluation: a non-finite log posterior is an error carrying
    /// the offending parameter values.
    pub fn log_posterior(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.dim()];
        let lp = self.eval(x, Some(&mut grad));
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "aggVAE log posterior at parameters {x:?}"
            )));
        }
        Ok((lp, grad))
    }
}

impl PosteriorModel for AggVaePosterior {
    fn dim(&self) -> usize {
        2 + self.decoder.latent_dim
    }

    fn logpost_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(position, Some(grad))
    }

    fn param_names(&self) -> Vec<String> {
        self.param_names.clone()
    }

    fn derived_names(&self) -> Vec<String> {
        self.derived_names.clone()
    }

    fn derived(&self, position: &[f64], out: &mut [f64]) {
        let (b0, log_s, z) = self.split(position);
        let s = log_s.exp();
        let (f, _) = self.decode_with_acts(&z);
        let k_total = self.decoder.output_dim();
        out[0] = s;
        for i in 0..k_total {
            out[1 + i] = s * f[i];
        }
        for i in 0..k_total {
            out[1 + k_total + i] = sigmoid(b0 + s * f[i]);
        }
    }

    fn kind(&self) -> &'static str {
        "aggvae"
    }
}
