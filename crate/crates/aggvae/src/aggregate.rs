//! Aggregation of grid-level field draws to polygon level, and generation of
//! the joint old/new training set the prior-encoding VAE consumes.
//!
//! Aggregates here are raw within-polygon sums (`values = M f`); the
//! quadrature cell area is carried as metadata rather than multiplied in, so
//! the area-scaled form is always recoverable as `cell_area * values`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::geometry::{Grid, MembershipMatrix};
use crate::linalg;
use crate::priors::{
    rbf_covariance_from_sqdist, sample_hyperparameters_rng, sample_mvn_chol_rng,
    squared_distance_matrix, HyperPriorSpec, MvnSample,
};
use crate::rng::{stream, StreamTag};

/// Within-polygon sums of one field draw for one boundary system.
#[derive(Debug, Clone)]
pub struct AggregateVector {
    pub values: Array1<f64>,
    pub cell_area: f64,
    pub polygon_set_name: String,
}

/// Concatenated aggregates over both boundary systems, old block first.
#[derive(Debug, Clone)]
pub struct JointAggregate {
    pub values: Array1<f64>,
    pub k1: usize,
    pub k2: usize,
}

impl JointAggregate {
    pub fn old_block(&self) -> ArrayView1<'_, f64> {
        self.values.slice(s![0..self.k1])
    }

    pub fn new_block(&self) -> ArrayView1<'_, f64> {
        self.values.slice(s![self.k1..])
    }
}

/// Sum the field over each polygon's grid points, in ascending grid index
/// order so results are bit-reproducible across runs and schedulers.
pub fn aggregate(f: &MvnSample, m: &MembershipMatrix) -> Result<AggregateVector> {
    aggregate_values(f.values.view(), m)
}

fn aggregate_values(f: ArrayView1<f64>, m: &MembershipMatrix) -> Result<AggregateVector> {
    if f.len() != m.n() {
        return Err(Error::DimMismatch(format!(
            "field has {} values but membership matrix has {} columns",
            f.len(),
            m.n()
        )));
    }
    let entries = m.entries();
    let mut values = Array1::<f64>::zeros(m.k());
    for i in 0..m.k() {
        let mut acc = 0.0;
        for j in 0..m.n() {
            if entries[(i, j)] == 1 {
                acc += f[j];
            }
        }
        values[i] = acc;
    }
    Ok(AggregateVector {
        values,
        cell_area: m.cell_area,
        polygon_set_name: m.polygon_set_name.clone(),
    })
}

/// Aggregate one field draw against both boundary systems and concatenate,
/// old block first. The two matrices must have been built over one grid.
pub fn joint_aggregate(
    f: &MvnSample,
    m_old: &MembershipMatrix,
    m_new: &MembershipMatrix,
) -> Result<JointAggregate> {
    joint_aggregate_values(f.values.view(), m_old, m_new)
}

fn joint_aggregate_values(
    f: ArrayView1<f64>,
    m_old: &MembershipMatrix,
    m_new: &MembershipMatrix,
) -> Result<JointAggregate> {
    if m_old.grid_id != m_new.grid_id {
        return Err(Error::Invalid(format!(
            "membership matrices come from different grids: {:?} vs {:?}",
            m_old.grid_id, m_new.grid_id
        )));
    }
    let old = aggregate_values(f, m_old)?;
    let new = aggregate_values(f, m_new)?;
    let mut values = Array1::<f64>::zeros(m_old.k() + m_new.k());
    values.slice_mut(s![0..m_old.k()]).assign(&old.values);
    values.slice_mut(s![m_old.k()..]).assign(&new.values);
    Ok(JointAggregate {
        values,
        k1: m_old.k(),
        k2: m_new.k(),
    })
}

/// A batch of joint-aggregate draws, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub draws: Array2<f64>,
    pub k1: usize,
    pub k2: usize,
    pub root_seed: u64,
}

impl TrainingSet {
    pub fn count(&self) -> usize {
        self.draws.nrows()
    }

    pub fn dim(&self) -> usize {
        self.k1 + self.k2
    }
}

/// Draw `count` independent joint aggregates. For each draw the kernel
/// hyperparameters are freshly sampled from the hyperpriors (so the encoded
/// prior marginalizes over them), then a field is drawn and aggregated.
///
/// Each draw derives its own stream from `(seed, draw index)`, so the output
/// does not depend on evaluation order.
pub fn generate_training_set(
    grid: &Grid,
    m_old: &MembershipMatrix,
    m_new: &MembershipMatrix,
    hp: &HyperPriorSpec,
    count: usize,
    seed: u64,
) -> Result<TrainingSet> {
    if count == 0 {
        return Err(Error::Invalid("training-set count must be at least 1".into()));
    }
    if m_old.n() != grid.n() || m_new.n() != grid.n() {
        return Err(Error::DimMismatch(
            "membership matrices do not match the grid".into(),
        ));
    }
    let d2 = squared_distance_matrix(grid);
    let dim = m_old.k() + m_new.k();
    let mut draws = Array2::<f64>::zeros((count, dim));
    for i in 0..count {
        let mut rng = stream(seed, StreamTag::TrainingDraw, i as u64);
        let kernel = sample_hyperparameters_rng(hp, &mut rng);
        let cov = rbf_covariance_from_sqdist(&d2, &kernel);
        let j0 = linalg::default_initial_jitter(&cov);
        let (l, _) = linalg::cholesky_with_jitter(&cov, j0, linalg::JITTER_ESCALATIONS)
            .map_err(|e| Error::Invalid(format!("training draw {i}: {e}")))?;
        let f = sample_mvn_chol_rng(&l, &mut rng);
        let joint = joint_aggregate_values(f.view(), m_old, m_new)?;
        draws.row_mut(i).assign(&joint.values);
    }
    Ok(TrainingSet {
        draws,
        k1: m_old.k(),
        k2: m_new.k(),
        root_seed: seed,
    })
}

const MAX_TRAINING_VALUES: usize = 1 << 28;

/// Binary layout: four little-endian u64 (count, K1, K2, root seed) followed
/// by the draws as row-major little-endian f64.
pub fn training_set_to_bytes(ts: &TrainingSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + ts.draws.len() * 8);
    for v in [ts.count() as u64, ts.k1 as u64, ts.k2 as u64, ts.root_seed] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in ts.draws.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn training_set_from_bytes(bytes: &[u8]) -> Result<TrainingSet> {
    if bytes.len() < 32 {
        return Err(Error::Invalid("training set shorter than its header".into()));
    }
    let mut u64s = [0u64; 4];
    for (i, v) in u64s.iter_mut().enumerate() {
        *v = u64::from_le_bytes(bytes[i * 8..(i + 1) * 8].try_into().unwrap());
    }
    let [count, k1, k2, root_seed] = u64s;
    let dim = k1
        .checked_add(k2)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Invalid("bad training-set dimensions".into()))?;
    let values = count
        .checked_mul(dim)
        .filter(|&v| v as usize <= MAX_TRAINING_VALUES)
        .ok_or_else(|| Error::Invalid("training set too large".into()))? as usize;
    let body = &bytes[32..];
    if body.len() != values * 8 {
        return Err(Error::Invalid(format!(
            "training-set body has {} bytes, want {}",
            body.len(),
            values * 8
        )));
    }
    let mut draws = Array2::<f64>::zeros((count as usize, dim as usize));
    for (idx, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("training-set value {idx}")));
        }
        draws[(idx / dim as usize, idx % dim as usize)] = v;
    }
    Ok(TrainingSet {
        draws,
        k1: k1 as usize,
        k2: k2 as usize,
        root_seed,
    })
}

pub fn write_training_set_binary(ts: &TrainingSet, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&training_set_to_bytes(ts))
        .map_err(|e| Error::io(path, e))
}

pub fn read_training_set_binary(path: &Path) -> Result<TrainingSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    training_set_from_bytes(&bytes).map_err(|e| Error::parse(path, e.to_string()))
}

/// Plain-text variant for inspection: header line `count K1 K2 seed`, then
/// one row per draw.
pub fn training_set_to_text(ts: &TrainingSet) -> String {
    let mut out = format!("{} {} {} {}\n", ts.count(), ts.k1, ts.k2, ts.root_seed);
    for row in ts.draws.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn training_set_from_text(s: &str) -> Result<TrainingSet> {
    let mut lines = s.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Invalid("empty training-set text".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(Error::Invalid("training-set header wants 4 fields".into()));
    }
    let count: usize = fields[0]
        .parse()
        .map_err(|_| Error::Invalid("bad count".into()))?;
    let k1: usize = fields[1].parse().map_err(|_| Error::Invalid("bad K1".into()))?;
    let k2: usize = fields[2].parse().map_err(|_| Error::Invalid("bad K2".into()))?;
    let root_seed: u64 = fields[3]
        .parse()
        .map_err(|_| Error::Invalid("bad seed".into()))?;
    let dim = k1
        .checked_add(k2)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Invalid("bad training-set dimensions".into()))?;
    if count.checked_mul(dim).map_or(true, |v| v > MAX_TRAINING_VALUES) {
        return Err(Error::Invalid("training set too large".into()));
    }
    let mut draws = Array2::<f64>::zeros((count, dim));
    for i in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::Invalid(format!("missing draw row {i}")))?;
        let mut j = 0;
        for tok in line.split_whitespace() {
            if j >= dim {
                return Err(Error::Invalid(format!("draw row {i} too long")));
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Invalid(format!("bad value in draw row {i}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("draw row {i}")));
            }
            draws[(i, j)] = v;
            j += 1;
        }
        if j != dim {
            return Err(Error::Invalid(format!(
                "draw row {i} has {j} values, want {dim}"
            )));
        }
    }
    if lines.next().is_some() {
        return Err(Error::Invalid("training-set text has extra rows".into()));
    }
    Ok(TrainingSet { draws, k1, k2, root_seed })
}
