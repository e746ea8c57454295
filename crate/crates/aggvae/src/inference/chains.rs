//! Posterior draw storage and its on-disk container.
//!
//! The draw file is fully deterministic for a fixed seed (two runs produce
//! byte-identical files); wall-clock timings live in a JSON sidecar the
//! header points at, so determinism checks can compare the draw files
//! directly while the efficiency report still gets its denominators.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AGVD";
const VERSION: u32 = 1;
const MAX_VALUES: usize = 1 << 28;

/// One chain's post-warmup draws plus its adaptation and cost records.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// `samples x (params + derived)`.
    pub draws: Array2<f64>,
    pub divergences: u32,
    /// Leapfrog steps per post-warmup iteration.
    pub leapfrogs: Vec<u32>,
    pub warmup_leapfrogs: u64,
    pub warmup_seconds: f64,
    pub sampling_seconds: f64,
    pub seed: u64,
    pub chain_index: usize,
    pub step_size: f64,
}

/// Draws from all chains of one model run.
#[derive(Debug, Clone)]
pub struct ChainSet {
    pub param_names: Vec<String>,
    pub derived_names: Vec<String>,
    pub model_kind: String,
    pub chains: Vec<ChainDraws>,
    pub warmup: usize,
    pub samples: usize,
    pub root_seed: u64,
    pub unreliable: bool,
    pub total_wall_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawHeader {
    format: String,
    version: u32,
    model: String,
    param_names: Vec<String>,
    derived_names: Vec<String>,
    chains: usize,
    warmup: usize,
    samples: usize,
    root_seed: u64,
    config_hash: String,
    unreliable: bool,
    divergences: Vec<u32>,
    step_sizes: Vec<f64>,
    warmup_leapfrogs: Vec<u64>,
    leapfrogs: Vec<Vec<u32>>,
    timing_file: String,
}

#[derive(Debug, Serialize, Deserialize, Default)]
struct TimingSidecar {
    total_wall_seconds: f64,
    warmup_seconds: Vec<f64>,
    sampling_seconds: Vec<f64>,
}

impl ChainSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        param_names: Vec<String>,
        derived_names: Vec<String>,
        model_kind: &str,
        chains: Vec<ChainDraws>,
        warmup: usize,
        samples: usize,
        root_seed: u64,
        unreliable: bool,
        total_wall_seconds: f64,
    ) -> Self {
        ChainSet {
            param_names,
            derived_names,
            model_kind: model_kind.to_string(),
            chains,
            warmup,
            samples,
            root_seed,
            unreliable,
            total_wall_seconds,
        }
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_columns(&self) -> usize {
        self.param_names.len() + self.derived_names.len()
    }

    /// All column names, sampled parameters first.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.param_names.clone();
        names.extend(self.derived_names.iter().cloned());
        names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names().iter().position(|n| n == name)
    }

    /// Post-warmup draws of one column, pooled across chains in order.
    pub fn pooled_column(&self, col: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_chains() * self.samples);
        for chain in &self.chains {
            out.extend(chain.draws.column(col).iter().copied());
        }
        out
    }

    /// Per-chain draws of one column.
    pub fn per_chain_column(&self, col: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.column(col).to_vec())
            .collect()
    }

    /// Sum of per-chain sampling seconds (warmup excluded).
    pub fn sampling_seconds_total(&self) -> f64 {
        self.chains.iter().map(|c| c.sampling_seconds).sum()
    }

    pub fn total_divergences(&self) -> u32 {
        self.chains.iter().map(|c| c.divergences).sum()
    }

    /// Indices of columns whose name starts with the given prefix.
    pub fn columns_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.column_names()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    fn timing_name(path: &Path) -> String {
        let stem = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "draws".into());
        format!("{stem}.timing.json")
    }

    /// Serialize the deterministic part of the chain set.
    pub fn to_bytes(&self, config_hash: &str, timing_file: &str) -> Vec<u8> {
        let header = DrawHeader {
            format: "aggvae-draws".into(),
            version: VERSION,
            model: self.model_kind.clone(),
            param_names: self.param_names.clone(),
            derived_names: self.derived_names.clone(),
            chains: self.n_chains(),
            warmup: self.warmup,
            samples: self.samples,
            root_seed: self.root_seed,
            config_hash: config_hash.to_string(),
            unreliable: self.unreliable,
            divergences: self.chains.iter().map(|c| c.divergences).collect(),
            step_sizes: self.chains.iter().map(|c| c.step_size).collect(),
            warmup_leapfrogs: self.chains.iter().map(|c| c.warmup_leapfrogs).collect(),
            leapfrogs: self.chains.iter().map(|c| c.leapfrogs.clone()).collect(),
            timing_file: timing_file.to_string(),
        };
        let header_json = serde_json::to_vec(&header).expect("draw header");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for chain in &self.chains {
            for t in 0..self.samples {
                for p in 0..self.n_columns() {
                    out.extend_from_slice(&chain.draws[(t, p)].to_le_bytes());
                }
            }
        }
        out
    }

    /// Parse a draw file; timings are zeroed until a sidecar is applied.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        if bytes.len() < 12 || &bytes[0..4] != MAGIC {
            return Err(Error::Invalid("not a draw file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Invalid(format!("unsupported draw-file version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12usize
            .checked_add(header_len)
            .ok_or_else(|| Error::Invalid("header length overflows".into()))?;
        if bytes.len() < body_start {
            return Err(Error::Invalid("draw header truncated".into()));
        }
        let header: DrawHeader = serde_json::from_slice(&bytes[12..body_start])
            .map_err(|e| Error::Invalid(format!("bad draw header: {e}")))?;

        let cols = header.param_names.len() + header.derived_names.len();
        let per_chain = header
            .samples
            .checked_mul(cols)
            .ok_or_else(|| Error::Invalid("draw sizes overflow".into()))?;
        let values = header
            .chains
            .checked_mul(per_chain)
            .filter(|&v| v <= MAX_VALUES && v > 0)
            .ok_or_else(|| Error::Invalid("draw file too large or empty".into()))?;
        let body = &bytes[body_start..];
        if body.len() != values * 8 {
            return Err(Error::Invalid(format!(
                "draw body has {} bytes, want {}",
                body.len(),
                values * 8
            )));
        }
        if header.divergences.len() != header.chains
            || header.step_sizes.len() != header.chains
            || header.leapfrogs.len() != header.chains
            || header.warmup_leapfrogs.len() != header.chains
        {
            return Err(Error::Invalid("per-chain metadata length mismatch".into()));
        }

        let mut chains = Vec::with_capacity(header.chains);
        for c in 0..header.chains {
            let mut draws = Array2::<f64>::zeros((header.samples, cols));
            let base = c * per_chain;
            for t in 0..header.samples {
                for p in 0..cols {
                    let off = (base + t * cols + p) * 8;
                    let v = f64::from_le_bytes(body[off..off + 8].try_into().unwrap());
                    if v.is_nan() {
                        return Err(Error::NonFinite(format!(
                            "draw (chain {c}, iteration {t}, column {p})"
                        )));
                    }
                    draws[(t, p)] = v;
                }
            }
            chains.push(ChainDraws {
                draws,
                divergences: header.divergences[c],
                leapfrogs: header.leapfrogs[c].clone(),
                warmup_leapfrogs: header.warmup_leapfrogs[c],
                warmup_seconds: 0.0,
                sampling_seconds: 0.0,
                seed: header.root_seed,
                chain_index: c,
                step_size: header.step_sizes[c],
            });
        }
        let set = ChainSet {
            param_names: header.param_names,
            derived_names: header.derived_names,
            model_kind: header.model,
            chains,
            warmup: header.warmup,
            samples: header.samples,
            root_seed: header.root_seed,
            unreliable: header.unreliable,
            total_wall_seconds: 0.0,
        };
        Ok((set, header.timing_file))
    }

    /// Write the draw file plus its timing sidecar.
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let timing_name = Self::timing_name(path);
        let bytes = self.to_bytes(config_hash, &timing_name);
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))?;

        let sidecar = TimingSidecar {
            total_wall_seconds: self.total_wall_seconds,
            warmup_seconds: self.chains.iter().map(|c| c.warmup_seconds).collect(),
            sampling_seconds: self.chains.iter().map(|c| c.sampling_seconds).collect(),
        };
        let sidecar_path = path.with_file_name(timing_name);
        std::fs::write(
            &sidecar_path,
            serde_json::to_string_pretty(&sidecar).expect("timing json") + "\n",
        )
        .map_err(|e| Error::io(&sidecar_path, e))
    }

    /// Load a draw file and, when present, its timing sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let (mut set, timing_file) =
            Self::from_bytes(&bytes).map_err(|e| Error::parse(path, e.to_string()))?;
        if !timing_file.is_empty() {
            let sidecar_path = path.with_file_name(&timing_file);
            if sidecar_path.exists() {
                let text = std::fs::read_to_string(&sidecar_path)
                    .map_err(|e| Error::io(&sidecar_path, e))?;
                let sidecar: TimingSidecar = serde_json::from_str(&text)
                    .map_err(|e| Error::parse(&sidecar_path, e.to_string()))?;
                if sidecar.warmup_seconds.len() == set.n_chains()
                    && sidecar.sampling_seconds.len() == set.n_chains()
                {
                    set.total_wall_seconds = sidecar.total_wall_seconds;
                    for (i, chain) in set.chains.iter_mut().enumerate() {
                        chain.warmup_seconds = sidecar.warmup_seconds[i];
                        chain.sampling_seconds = sidecar.sampling_seconds[i];
                    }
                }
            }
        }
        Ok(set)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_file_name(Self::timing_name(path))
    }
}

/// Linear-interpolation quantile of pre-sorted draws at position q(n-1).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Per-unit posterior prevalence summary for one boundary system.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceSummary {
    pub system: String,
    pub unit: String,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Summaries of the pooled post-warmup prevalence draws, for both boundary
/// systems, in column order.
pub fn posterior_prevalence(chains: &ChainSet) -> Result<Vec<PrevalenceSummary>> {
    if chains.samples == 0 || chains.chains.is_empty() {
        return Err(Error::Invalid("no post-warmup draws".into()));
    }
    let names = chains.column_names();
    let mut out = Vec::new();
    for (system, prefix) in [("old", "theta_old["), ("new", "theta_new[")] {
        for col in chains.columns_with_prefix(prefix) {
            let unit = names[col]
                .trim_start_matches(prefix)
                .trim_end_matches(']')
                .to_string();
            let mut draws = chains.pooled_column(col);
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            out.push(PrevalenceSummary {
                system: system.to_string(),
                unit,
                mean,
                q025: quantile_sorted(&draws, 0.025),
                q975: quantile_sorted(&draws, 0.975),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn toy_chainset(theta_draws: Vec<Vec<f64>>) -> ChainSet {
        let chains: Vec<ChainDraws> = theta_draws
            .into_iter()
            .enumerate()
            .map(|(i, vals)| {
                let n = vals.len();
                ChainDraws {
                    draws: Array2::from_shape_vec((n, 1), vals).unwrap(),
                    divergences: 0,
                    leapfrogs: vec![3; n],
                    warmup_leapfrogs: 10,
                    warmup_seconds: 0.1,
                    sampling_seconds: 0.2,
                    seed: 5,
                    chain_index: i,
                    step_size: 0.5,
                }
            })
            .collect();
        let samples = chains[0].draws.nrows();
        ChainSet::new(
            Vec::new(),
            vec!["theta_old[u0]".into()],
            "test",
            chains,
            7,
            samples,
            5,
            false,
            0.4,
        )
    }

    #[test]
    fn constant_draws_summarize_to_the_constant() {
        let cs = toy_chainset(vec![vec![0.3; 10], vec![0.3; 10]]);
        let summaries = posterior_prevalence(&cs).unwrap();
        assert_eq!(summaries.len(), 1);
        let s = &summaries[0];
        assert_eq!(s.system, "old");
        assert_eq!(s.unit, "u0");
        assert!((s.mean - 0.3).abs() < 1e-12);
        assert_eq!(s.q025, 0.3);
        assert_eq!(s.q975, 0.3);
    }

    #[test]
    fn quantile_interpolation_convention() {
        let sorted: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert!((quantile_sorted(&sorted, 0.5) - 0.55).abs() < 1e-15);
        assert_eq!(quantile_sorted(&sorted, 0.0), 0.1);
        assert_eq!(quantile_sorted(&sorted, 1.0), 1.0);
    }

    #[test]
    fn summaries_stay_in_unit_interval() {
        let cs = toy_chainset(vec![
            (1..=50).map(|i| i as f64 / 51.0).collect(),
            (1..=50).map(|i| 1.0 - i as f64 / 51.0).collect(),
        ]);
        for s in posterior_prevalence(&cs).unwrap() {
            assert!(s.mean > 0.0 && s.mean < 1.0);
            assert!(s.q025 > 0.0 && s.q975 < 1.0);
            assert!(s.q025 <= s.q975);
        }
    }

    #[test]
    fn draw_file_roundtrip() {
        let cs = ChainSet::new(
            vec!["b0".into(), "z[0]".into()],
            vec!["theta_old[a]".into()],
            "aggvae",
            vec![
                ChainDraws {
                    draws: arr2(&[[0.1, 0.2, 0.5], [0.3, -0.4, 0.6]]),
                    divergences: 1,
                    leapfrogs: vec![3, 7],
                    warmup_leapfrogs: 42,
                    warmup_seconds: 1.5,
                    sampling_seconds: 2.5,
                    seed: 9,
                    chain_index: 0,
                    step_size: 0.7,
                },
                ChainDraws {
                    draws: arr2(&[[0.0, 1.0, 0.5], [2.0, -1.0, 0.9]]),
                    divergences: 0,
                    leapfrogs: vec![15, 1],
                    warmup_leapfrogs: 40,
                    warmup_seconds: 1.25,
                    sampling_seconds: 2.25,
                    seed: 9,
                    chain_index: 1,
                    step_size: 0.8,
                },
            ],
            100,
            2,
            9,
            false,
            4.0,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.agvd");
        cs.save(&path, "beefcafe").unwrap();
        assert!(ChainSet::sidecar_path(&path).exists());

        let back = ChainSet::load(&path).unwrap();
        assert_eq!(back.param_names, cs.param_names);
        assert_eq!(back.derived_names, cs.derived_names);
        assert_eq!(back.chains[0].draws, cs.chains[0].draws);
        assert_eq!(back.chains[1].draws, cs.chains[1].draws);
        assert_eq!(back.chains[0].divergences, 1);
        assert_eq!(back.chains[1].leapfrogs, vec![15, 1]);
        assert!((back.chains[0].sampling_seconds - 2.5).abs() < 1e-12);
        assert!((back.total_wall_seconds - 4.0).abs() < 1e-12);
    }

    #[test]
    fn draw_file_rejects_corruption() {
        let cs = toy_chainset(vec![vec![0.5; 4], vec![0.5; 4]]);
        let bytes = cs.to_bytes("h", "t.json");
        assert!(ChainSet::from_bytes(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(ChainSet::from_bytes(&bad).is_err());
        let mut short = bytes;
        short.truncate(short.len() - 3);
        assert!(ChainSet::from_bytes(&short).is_err());
    }
}
