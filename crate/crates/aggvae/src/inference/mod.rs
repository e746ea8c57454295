//! Posterior inference for the two competing models: the exact aggregated-GP
//! prior (hyperparameters, grid field, and aggregation evaluated inside every
//! HMC step) and the VAE surrogate prior (a low-dimensional latent pushed
//! through the frozen decoder).
//!
//! Both models share one binomial likelihood code path; they differ only in
//! how the per-unit spatial random effects are produced.

mod agggp;
mod aggvae_model;
mod chains;
mod nuts;

pub use agggp::AggGpPosterior;
pub use aggvae_model::AggVaePosterior;
pub use chains::{posterior_prevalence, ChainDraws, ChainSet, PrevalenceSummary};
pub use nuts::{run_nuts, NutsConfig, PosteriorModel};

use std::path::Path;

use crate::dist;
use crate::error::{Error, Result};
use crate::priors::HyperPriorSpec;

/// Observed test counts per areal unit for one boundary system.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceData {
    labels: Vec<String>,
    n_tests: Vec<u64>,
    n_pos: Vec<u64>,
}

impl PrevalenceData {
    pub fn new(labels: Vec<String>, n_tests: Vec<u64>, n_pos: Vec<u64>) -> Result<Self> {
        if labels.len() != n_tests.len() || labels.len() != n_pos.len() {
            return Err(Error::DimMismatch(
                "labels, tests and positives must have equal length".into(),
            ));
        }
        if labels.is_empty() {
            return Err(Error::Invalid("prevalence data has no units".into()));
        }
        for i in 0..labels.len() {
            if n_pos[i] > n_tests[i] {
                return Err(Error::Invalid(format!(
                    "unit {:?}: {} positives exceed {} tests",
                    labels[i], n_pos[i], n_tests[i]
                )));
            }
        }
        Ok(PrevalenceData { labels, n_tests, n_pos })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_tests(&self) -> &[u64] {
        &self.n_tests
    }

    pub fn n_pos(&self) -> &[u64] {
        &self.n_pos
    }

    /// Model-free per-unit estimate `n_pos / n_tests` (zero where no tests).
    pub fn crude(&self) -> Vec<f64> {
        self.n_tests
            .iter()
            .zip(&self.n_pos)
            .map(|(&n, &k)| if n == 0 { 0.0 } else { k as f64 / n as f64 })
            .collect()
    }

    /// Parse delimited text with header `unit,n_tests,n_pos`. Lines starting
    /// with `#` are provenance comments and are skipped.
    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(s.as_bytes());
        {
            let headers = reader
                .headers()
                .map_err(|e| Error::Invalid(format!("bad csv header: {e}")))?;
            let expect = ["unit", "n_tests", "n_pos"];
            let got: Vec<&str> = headers.iter().collect();
            if got != expect {
                return Err(Error::Invalid(format!(
                    "csv header {got:?} does not match {expect:?}"
                )));
            }
        }
        let mut labels = Vec::new();
        let mut n_tests = Vec::new();
        let mut n_pos = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Invalid(format!("csv row {i}: {e}")))?;
            if record.len() != 3 {
                return Err(Error::Invalid(format!(
                    "csv row {i} has {} fields, want 3",
                    record.len()
                )));
            }
            labels.push(record[0].to_string());
            n_tests.push(
                record[1]
                    .parse()
                    .map_err(|_| Error::Invalid(format!("csv row {i}: bad n_tests")))?,
            );
            n_pos.push(
                record[2]
                    .parse()
                    .map_err(|_| Error::Invalid(format!("csv row {i}: bad n_pos")))?,
            );
        }
        PrevalenceData::new(labels, n_tests, n_pos)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Serialize with an optional leading provenance comment line.
    pub fn to_csv_string(&self, provenance: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(p) = provenance {
            out.push_str(&format!("# {p}\n"));
        }
        out.push_str("unit,n_tests,n_pos\n");
        for i in 0..self.len() {
            out.push_str(&format!("{},{},{}\n", self.labels[i], self.n_tests[i], self.n_pos[i]));
        }
        out
    }

    pub fn write_csv(&self, path: &Path, provenance: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_csv_string(provenance)).map_err(|e| Error::io(path, e))
    }
}

/// Binomial log-likelihood over units given per-unit logits, binomial
/// coefficients included so values are comparable across models.
pub fn binomial_loglik(logits: &[f64], data: &PrevalenceData) -> f64 {
    debug_assert_eq!(logits.len(), data.len());
    let mut ll = 0.0;
    for i in 0..data.len() {
        let n = data.n_tests[i];
        let k = data.n_pos[i];
        if n == 0 {
            continue;
        }
        let x = logits[i];
        ll += dist::ln_choose(n, k) + k as f64 * x - n as f64 * dist::softplus(x);
    }
    ll
}

/// As [`binomial_loglik`], also writing d(loglik)/d(logit_i) into `grad`.
pub fn binomial_loglik_and_grad(logits: &[f64], data: &PrevalenceData, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(logits.len(), data.len());
    debug_assert_eq!(grad.len(), data.len());
    let mut ll = 0.0;
    for i in 0..data.len() {
        let n = data.n_tests[i];
        let k = data.n_pos[i];
        if n == 0 {
            grad[i] = 0.0;
            continue;
        }
        let x = logits[i];
        ll += dist::ln_choose(n, k) + k as f64 * x - n as f64 * dist::softplus(x);
        grad[i] = k as f64 - n as f64 * dist::sigmoid(x);
    }
    ll
}

/// Priors shared by both posterior models: intercept b0 ~ normal(0, sd) and,
/// for the surrogate model, the scale s ~ half-normal(scale).
#[derive(Debug, Clone, Copy)]
pub struct RegressionPriors {
    pub intercept_sd: f64,
    pub s_scale: f64,
}

impl Default for RegressionPriors {
    fn default() -> Self {
        RegressionPriors { intercept_sd: 5.0, s_scale: 1.0 }
    }
}

/// Everything a posterior model needs besides its spatial prior.
#[derive(Debug, Clone)]
pub struct ObservedData {
    pub data_old: PrevalenceData,
    pub data_new: PrevalenceData,
}

impl ObservedData {
    pub fn total_units(&self) -> usize {
        self.data_old.len() + self.data_new.len()
    }
}

/// Hyperprior bundle for the exact-GP model (re-exported convenience).
pub type GpHyperPriors = HyperPriorSpec;
