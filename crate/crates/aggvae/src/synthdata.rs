//! Fully synthetic change-of-support scenarios: two overlapping rectangular
//! partitions of one territory, a ground-truth prevalence surface drawn at
//! grid level, and binomial test counts simulated against both partitions
//! from that single shared surface.

use std::path::{Path, PathBuf};

use rand_distr::{Binomial, Distribution};
use serde_json::json;

use crate::dist::sigmoid;
use crate::error::{Error, Result};
use crate::geometry::{
    build_grid_union, membership_matrix, Grid, MembershipMatrix, Polygon, PolygonSet,
};
use crate::inference::PrevalenceData;
use crate::linalg;
use crate::priors::{rbf_covariance, sample_mvn_chol_rng, KernelSpec};
use crate::rng::{stream, StreamTag};

/// Axis-aligned `rows x cols` rectangular tiling of `[0, width] x [0, height]`,
/// rows ordered bottom-up, columns left-to-right, labels `r{row}c{col}`.
pub fn rect_tiling(
    name: impl Into<String>,
    rows: usize,
    cols: usize,
    width: f64,
    height: f64,
) -> Result<PolygonSet> {
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid("tiling needs at least one row and column".into()));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Invalid("tiling extent must be positive".into()));
    }
    let mut polygons = Vec::with_capacity(rows * cols);
    let mut labels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y0 = r as f64 * (height / rows as f64);
        let y1 = (r + 1) as f64 * (height / rows as f64);
        for c in 0..cols {
            let x0 = c as f64 * (width / cols as f64);
            let x1 = (c + 1) as f64 * (width / cols as f64);
            polygons.push(Polygon::rect(x0, y0, x1, y1));
            labels.push(format!("r{r}c{c}"));
        }
    }
    PolygonSet::new(name, polygons, labels)
}

/// Two rectangular tilings of the same extent, the change-of-support pair.
/// Requesting identical tilings is allowed but logged as a warning since it
/// removes the misalignment the pipeline is meant to exercise.
pub fn make_partitions(
    rows_old: usize,
    cols_old: usize,
    rows_new: usize,
    cols_new: usize,
    width: f64,
    height: f64,
) -> Result<(PolygonSet, PolygonSet)> {
    if rows_old == rows_new && cols_old == cols_new {
        log::warn!(
            "old and new partitions are both {rows_old}x{cols_old}; boundaries will coincide"
        );
    }
    let old = rect_tiling("old", rows_old, cols_old, width, height)?;
    let new = rect_tiling("new", rows_new, cols_new, width, height)?;
    Ok((old, new))
}

/// Ground-truth surface parameters.
#[derive(Debug, Clone, Copy)]
pub struct TruthParams {
    pub b0: f64,
    pub kernel: KernelSpec,
}

/// A complete simulated scenario: geometry, truth, and observed counts.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub polygons_old: PolygonSet,
    pub polygons_new: PolygonSet,
    pub grid: Grid,
    pub m_old: MembershipMatrix,
    pub m_new: MembershipMatrix,
    pub truth: TruthParams,
    pub theta_old: Vec<f64>,
    pub theta_new: Vec<f64>,
    pub data_old: PrevalenceData,
    pub data_new: PrevalenceData,
    pub seed: u64,
    pub resolution: usize,
    pub tests_per_unit: u64,
}

/// Per-unit true prevalences from a grid-level field: the field is summed
/// within each unit, scaled by the quadrature cell area, shifted by the
/// intercept, and pushed through the logistic link.
pub fn unit_thetas(b0: f64, field: &[f64], m: &MembershipMatrix) -> Vec<f64> {
    let entries = m.entries();
    (0..m.k())
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..m.n() {
                if entries[(i, j)] == 1 {
                    acc += field[j];
                }
            }
            sigmoid(b0 + m.cell_area * acc)
        })
        .collect()
}

/// Draw one ground-truth surface and simulate binomial counts for both
/// partitions from it. Old and new data always derive from the same field.
pub fn simulate_counts(
    polygons_old: &PolygonSet,
    polygons_new: &PolygonSet,
    resolution: usize,
    truth: TruthParams,
    tests_per_unit: u64,
    seed: u64,
) -> Result<Scenario> {
    if tests_per_unit == 0 {
        return Err(Error::Invalid("tests_per_unit must be at least 1".into()));
    }
    let grid = build_grid_union(&[polygons_old, polygons_new], resolution)?;
    let m_old = membership_matrix(&grid, polygons_old)?;
    let m_new = membership_matrix(&grid, polygons_new)?;

    let cov = rbf_covariance(&grid, &truth.kernel);
    let j0 = linalg::default_initial_jitter(&cov);
    let (l, _) = linalg::cholesky_with_jitter(&cov, j0, linalg::JITTER_ESCALATIONS)?;
    let mut surface_rng = stream(seed, StreamTag::SynthSurface, 0);
    let field = sample_mvn_chol_rng(&l, &mut surface_rng);
    let field_slice = field.as_slice().expect("contiguous field");

    let theta_old = unit_thetas(truth.b0, field_slice, &m_old);
    let theta_new = unit_thetas(truth.b0, field_slice, &m_new);

    let draw_counts =
        |thetas: &[f64], labels: &[String], offset: u64| -> Result<PrevalenceData> {
            let mut n_tests = Vec::with_capacity(thetas.len());
            let mut n_pos = Vec::with_capacity(thetas.len());
            for (i, &theta) in thetas.iter().enumerate() {
                let mut rng = stream(seed, StreamTag::SynthCounts, offset + i as u64);
                let bin = Binomial::new(tests_per_unit, theta)
                    .map_err(|e| Error::Invalid(format!("binomial({tests_per_unit}, {theta}): {e}")))?;
                n_tests.push(tests_per_unit);
                n_pos.push(bin.sample(&mut rng));
            }
            PrevalenceData::new(labels.to_vec(), n_tests, n_pos)
        };

    let data_old = draw_counts(&theta_old, polygons_old.labels(), 0)?;
    let data_new = draw_counts(&theta_new, polygons_new.labels(), polygons_old.k() as u64)?;

    Ok(Scenario {
        polygons_old: polygons_old.clone(),
        polygons_new: polygons_new.clone(),
        grid,
        m_old,
        m_new,
        truth,
        theta_old,
        theta_new,
        data_old,
        data_new,
        seed,
        resolution,
        tests_per_unit,
    })
}

impl Scenario {
    /// True prevalences as delimited text (`partition,unit,theta`), with a
    /// provenance comment line.
    pub fn truth_csv(&self, provenance: &str) -> String {
        let mut out = format!("# {provenance}\npartition,unit,theta\n");
        for (label, theta) in self.polygons_old.labels().iter().zip(&self.theta_old) {
            out.push_str(&format!("old,{label},{theta:?}\n"));
        }
        for (label, theta) in self.polygons_new.labels().iter().zip(&self.theta_new) {
            out.push_str(&format!("new,{label},{theta:?}\n"));
        }
        out
    }

    /// Write the standard pipeline inputs: two boundary files, two data
    /// files, the truth file, and a provenance file. Returns the paths.
    pub fn write_files(&self, dir: &Path, config_hash: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let provenance_comment = format!("config_hash={config_hash} root_seed={}", self.seed);
        let provenance = json!({
            "config_hash": config_hash,
            "root_seed": self.seed,
        });

        let mut written = Vec::new();
        let mut emit = |name: &str, contents: String| -> Result<PathBuf> {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
            written.push(path.clone());
            Ok(path)
        };

        emit(
            "boundaries_old.geojson",
            self.polygons_old.to_geojson(&[("provenance", provenance.clone())]),
        )?;
        emit(
            "boundaries_new.geojson",
            self.polygons_new.to_geojson(&[("provenance", provenance.clone())]),
        )?;
        emit(
            "prevalence_old.csv",
            self.data_old.to_csv_string(Some(&provenance_comment)),
        )?;
        emit(
            "prevalence_new.csv",
            self.data_new.to_csv_string(Some(&provenance_comment)),
        )?;
        emit("truth.csv", self.truth_csv(&provenance_comment))?;
        let prov_full = json!({
            "config_hash": config_hash,
            "root_seed": self.seed,
            "grid_resolution": self.resolution,
            "tests_per_unit": self.tests_per_unit,
            "k_old": self.polygons_old.k(),
            "k_new": self.polygons_new.k(),
            "truth_b0": self.truth.b0,
            "truth_variance": self.truth.kernel.variance,
            "truth_lengthscale": self.truth.kernel.lengthscale,
        });
        emit(
            "provenance.json",
            serde_json::to_string_pretty(&prov_full).expect("provenance json") + "\n",
        )?;
        Ok(written)
    }
}

/// Parse a truth file back into `(partition, unit, theta)` rows.
pub fn truth_from_csv_str(s: &str) -> Result<Vec<(String, String, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(s.as_bytes());
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Invalid(format!("bad truth header: {e}")))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != ["partition", "unit", "theta"] {
            return Err(Error::Invalid(format!("unexpected truth header {got:?}")));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Invalid(format!("truth row {i}: {e}")))?;
        if record.len() != 3 {
            return Err(Error::Invalid(format!("truth row {i} wants 3 fields")));
        }
        let theta: f64 = record[2]
            .parse()
            .map_err(|_| Error::Invalid(format!("truth row {i}: bad theta")))?;
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Invalid(format!("truth row {i}: theta {theta} outside [0,1]")));
        }
        rows.push((record[0].to_string(), record[1].to_string(), theta));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_have_expected_counts_and_areas() {
        let (old, new) = make_partitions(2, 2, 3, 3, 1.0, 1.0).unwrap();
        assert_eq!(old.k(), 4);
        assert_eq!(new.k(), 9);

        // Every new cell covers area extent/9 and the tiling is exact.
        let ring_area = |ring: &[[f64; 2]]| -> f64 {
            let mut a = 0.0;
            for w in ring.windows(2) {
                a += w[0][0] * w[1][1] - w[1][0] * w[0][1];
            }
            a.abs() / 2.0
        };
        let mut total = 0.0;
        for p in new.polygons() {
            let a = ring_area(p.ring());
            assert!((a - 1.0 / 9.0).abs() < 1e-12);
            total += a;
        }
        assert!((total - 1.0).abs() < 1e-10);
        let total_old: f64 = old.polygons().iter().map(|p| ring_area(p.ring())).sum();
        assert!((total_old - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unit_thetas_flat_field_gives_intercept() {
        let (old, _) = make_partitions(2, 2, 3, 3, 1.0, 1.0).unwrap();
        let grid = build_grid_union(&[&old], 8).unwrap();
        let m = membership_matrix(&grid, &old).unwrap();
        let zeros = vec![0.0; grid.n()];
        for theta in unit_thetas(0.0, &zeros, &m) {
            assert_eq!(theta, 0.5);
        }
    }

    fn toy_truth(variance: f64, lengthscale: f64, b0: f64) -> TruthParams {
        TruthParams {
            b0,
            kernel: KernelSpec { variance, lengthscale },
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let (old, new) = make_partitions(2, 2, 3, 3, 1.0, 1.0).unwrap();
        let truth = toy_truth(0.01, 0.8, -0.3);
        let a = simulate_counts(&old, &new, 12, truth, 500, 11).unwrap();
        let b = simulate_counts(&old, &new, 12, truth, 500, 11).unwrap();
        assert_eq!(a.data_old, b.data_old);
        assert_eq!(a.data_new, b.data_new);
        assert_eq!(a.theta_old, b.theta_old);
    }

    #[test]
    fn both_partitions_share_one_surface() {
        // Changing only the partition must not change the grid-level field:
        // thetas over the old partition are identical whichever second
        // partition is in play.
        let (old, new) = make_partitions(2, 2, 3, 3, 1.0, 1.0).unwrap();
        let (_, other) = make_partitions(2, 2, 4, 4, 1.0, 1.0).unwrap();
        let truth = toy_truth(0.01, 0.8, 0.0);
        let a = simulate_counts(&old, &new, 12, truth, 100, 5).unwrap();
        let b = simulate_counts(&old, &other, 12, truth, 100, 5).unwrap();
        assert_eq!(a.theta_old, b.theta_old);
        assert_eq!(a.data_old, b.data_old);
    }

    #[test]
    fn area_weighted_means_agree_across_partitions() {
        // The spatial random effect is an area integral, so its per-unit
        // magnitude scales with unit size; the partition means of theta
        // agree only up to that scale times the field amplitude. At the
        // generator's default amplitude the agreement is tight.
        let (old, new) = make_partitions(2, 2, 3, 3, 1.0, 1.0).unwrap();
        let truth = toy_truth(0.06 * 0.06, 0.5, -0.2);
        let s = simulate_counts(&old, &new, 24, truth, 100, 7).unwrap();
        let mean_old: f64 = s.theta_old.iter().sum::<f64>() / s.theta_old.len() as f64;
        let mean_new: f64 = s.theta_new.iter().sum::<f64>() / s.theta_new.len() as f64;
        assert!((mean_old - mean_new).abs() < 0.01, "{mean_old} vs {mean_new}");
    }

    #[test]
    fn counts_concentrate_near_truth() {
        // Many units so the 2-sigma binomial check has room to breathe.
        let (old, new) = make_partitions(6, 6, 5, 5, 1.0, 1.0).unwrap();
        let truth = toy_truth(0.09, 0.4, 0.1);
        let s = simulate_counts(&old, &new, 30, truth, 1000, 13).unwrap();
        let mut within = 0usize;
        let mut total = 0usize;
        for (data, thetas) in [(&s.data_old, &s.theta_old), (&s.data_new, &s.theta_new)] {
            for i in 0..data.len() {
                let crude = data.n_pos()[i] as f64 / data.n_tests()[i] as f64;
                let theta = thetas[i];
                let half_width = 2.0 * (theta * (1.0 - theta) / 1000.0).sqrt();
                if (crude - theta).abs() <= half_width {
                    within += 1;
                }
                total += 1;
            }
        }
        let frac = within as f64 / total as f64;
        assert!(frac >= 0.90, "only {within}/{total} units within 2 sigma");
    }

    #[test]
    fn near_flat_surface_gives_half_positivity() {
        let (old, new) = make_partitions(2, 2, 3, 3, 1.0, 1.0).unwrap();
        let truth = toy_truth(1e-20, 1.0, 0.0);
        let s = simulate_counts(&old, &new, 12, truth, 2000, 3).unwrap();
        for theta in s.theta_old.iter().chain(&s.theta_new) {
            assert!((theta - 0.5).abs() < 1e-8);
        }
        let pos: u64 = s.data_old.n_pos().iter().sum();
        let tests: u64 = s.data_old.n_tests().iter().sum();
        let rate = pos as f64 / tests as f64;
        assert!((rate - 0.5).abs() < 0.02, "overall positivity {rate}");
    }

    #[test]
    fn write_files_emits_six_files() {
        let (old, new) = make_partitions(2, 2, 3, 3, 1.0, 1.0).unwrap();
        let truth = toy_truth(0.01, 0.8, 0.0);
        let s = simulate_counts(&old, &new, 12, truth, 100, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = s.write_files(dir.path(), "deadbeef").unwrap();
        assert_eq!(files.len(), 6);
        for f in &files {
            assert!(f.exists());
        }
        // Boundary files reload and truth parses.
        let old_back =
            PolygonSet::load_geojson(&dir.path().join("boundaries_old.geojson"), "old").unwrap();
        assert_eq!(old_back.k(), 4);
        let truth_text = std::fs::read_to_string(dir.path().join("truth.csv")).unwrap();
        let rows = truth_from_csv_str(&truth_text).unwrap();
        assert_eq!(rows.len(), 13);
        assert!(truth_text.starts_with("# config_hash=deadbeef"));
    }
}
