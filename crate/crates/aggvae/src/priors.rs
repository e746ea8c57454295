//! Spatial prior building blocks: the RBF Gaussian-process covariance with
//! its hyperpriors, the classical CAR-family precision constructors kept as
//! baselines and test fixtures, and seeded multivariate-normal sampling.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::dist;
use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::linalg;
use crate::rng::{stream, StreamTag};

/// RBF kernel hyperparameters. `variance` is sigma^2; `lengthscale` shares
/// the unit of the grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub variance: f64,
    pub lengthscale: f64,
}

impl KernelSpec {
    pub fn validated(variance: f64, lengthscale: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Invalid(format!("kernel variance must be positive, got {variance}")));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::Invalid(format!(
                "kernel lengthscale must be positive, got {lengthscale}"
            )));
        }
        Ok(KernelSpec { variance, lengthscale })
    }

    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Hyperpriors on the RBF kernel: lengthscale ~ InverseGamma(shape, scale),
/// sigma ~ half-normal(sigma_scale).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPriorSpec {
    pub lengthscale_shape: f64,
    pub lengthscale_scale: f64,
    pub sigma_scale: f64,
}

impl Default for HyperPriorSpec {
    fn default() -> Self {
        HyperPriorSpec {
            lengthscale_shape: 3.0,
            lengthscale_scale: 3.0,
            sigma_scale: 0.05,
        }
    }
}

impl HyperPriorSpec {
    pub fn validated(self) -> Result<Self> {
        if !(self.lengthscale_shape > 1.0) {
            return Err(Error::Invalid(
                "lengthscale prior shape must exceed 1 (finite mean)".into(),
            ));
        }
        if !(self.lengthscale_scale > 0.0 && self.sigma_scale > 0.0) {
            return Err(Error::Invalid("hyperprior scales must be positive".into()));
        }
        Ok(self)
    }
}

/// Matrix of squared Euclidean distances between grid points.
pub fn squared_distance_matrix(grid: &Grid) -> Array2<f64> {
    let n = grid.n();
    let mut d2 = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        for k in (j + 1)..n {
            let dx = grid.points[j][0] - grid.points[k][0];
            let dy = grid.points[j][1] - grid.points[k][1];
            let v = dx * dx + dy * dy;
            d2[(j, k)] = v;
            d2[(k, j)] = v;
        }
    }
    d2
}

/// RBF covariance from a precomputed squared-distance matrix:
/// `sigma^2 * exp(-d^2 / (2 l^2))`, with the diagonal exactly sigma^2.
pub fn rbf_covariance_from_sqdist(d2: &Array2<f64>, kernel: &KernelSpec) -> Array2<f64> {
    let inv = 1.0 / (2.0 * kernel.lengthscale * kernel.lengthscale);
    let s2 = kernel.variance;
    let n = d2.nrows();
    let mut cov = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        cov[(j, j)] = s2;
        for k in (j + 1)..n {
            let v = s2 * (-d2[(j, k)] * inv).exp();
            cov[(j, k)] = v;
            cov[(k, j)] = v;
        }
    }
    cov
}

/// RBF covariance over the grid points.
pub fn rbf_covariance(grid: &Grid, kernel: &KernelSpec) -> Array2<f64> {
    rbf_covariance_from_sqdist(&squared_distance_matrix(grid), kernel)
}

/// Adjacency-based precision families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CarFamily {
    /// Q = tau (I - alpha A)
    Car { alpha: f64 },
    /// Q = tau (D - A)
    Icar,
    /// Q = tau (D - alpha A)
    Pcar { alpha: f64 },
    /// Q = tau (alpha (D - A) + (1 - alpha) I)
    Lcar { alpha: f64 },
    /// Q = (1/tau_s)(D - A) + (1/tau_iid) I; `tau` is unused.
    Bym { tau_s: f64, tau_iid: f64 },
}

/// Specification of a CAR-family precision matrix over K areal units.
#[derive(Debug, Clone)]
pub struct PrecisionSpec {
    pub family: CarFamily,
    /// K x K symmetric 0/1 adjacency with zero diagonal.
    pub adjacency: Array2<f64>,
    /// Marginal precision (ignored by the BYM variant).
    pub tau: f64,
}

/// Build the precision matrix for the selected family.
pub fn car_precision(spec: &PrecisionSpec) -> Result<Array2<f64>> {
    let a = &spec.adjacency;
    let k = a.nrows();
    if a.ncols() != k {
        return Err(Error::Invalid("adjacency must be square".into()));
    }
    for i in 0..k {
        if a[(i, i)] != 0.0 {
            return Err(Error::Invalid(format!("adjacency has nonzero diagonal at {i}")));
        }
        for j in 0..k {
            let v = a[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(Error::Invalid(format!(
                    "adjacency entry ({i}, {j}) is {v}, want 0 or 1"
                )));
            }
            if v != a[(j, i)] {
                return Err(Error::Invalid("adjacency is not symmetric".into()));
            }
        }
    }
    let check_alpha = |alpha: f64| -> Result<f64> {
        if (0.0..1.0).contains(&alpha) {
            Ok(alpha)
        } else {
            Err(Error::Invalid(format!("alpha must lie in [0, 1), got {alpha}")))
        }
    };
    let check_tau = |tau: f64| -> Result<f64> {
        if tau > 0.0 {
            Ok(tau)
        } else {
            Err(Error::Invalid(format!("tau must be positive, got {tau}")))
        }
    };

    let degrees: Array1<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    let mut q = Array2::<f64>::zeros((k, k));
    match spec.family {
        CarFamily::Car { alpha } => {
            let alpha = check_alpha(alpha)?;
            let tau = check_tau(spec.tau)?;
            for i in 0..k {
                for j in 0..k {
                    let eye = if i == j { 1.0 } else { 0.0 };
                    q[(i, j)] = tau * (eye - alpha * a[(i, j)]);
                }
            }
        }
        CarFamily::Icar => {
            let tau = check_tau(spec.tau)?;
            for i in 0..k {
                for j in 0..k {
                    let d = if i == j { degrees[i] } else { 0.0 };
                    q[(i, j)] = tau * (d - a[(i, j)]);
                }
            }
        }
        CarFamily::Pcar { alpha } => {
            let alpha = check_alpha(alpha)?;
            let tau = check_tau(spec.tau)?;
            for i in 0..k {
                for j in 0..k {
                    let d = if i == j { degrees[i] } else { 0.0 };
                    q[(i, j)] = tau * (d - alpha * a[(i, j)]);
                }
            }
        }
        CarFamily::Lcar { alpha } => {
            let alpha = check_alpha(alpha)?;
            let tau = check_tau(spec.tau)?;
            for i in 0..k {
                for j in 0..k {
                    let d = if i == j { degrees[i] } else { 0.0 };
                    let eye = if i == j { 1.0 } else { 0.0 };
                    q[(i, j)] = tau * (alpha * (d - a[(i, j)]) + (1.0 - alpha) * eye);
                }
            }
        }
        CarFamily::Bym { tau_s, tau_iid } => {
            check_tau(tau_s)?;
            check_tau(tau_iid)?;
            for i in 0..k {
                for j in 0..k {
                    let d = if i == j { degrees[i] } else { 0.0 };
                    let eye = if i == j { 1.0 } else { 0.0 };
                    q[(i, j)] = (d - a[(i, j)]) / tau_s + eye / tau_iid;
                }
            }
        }
    }
    Ok(q)
}

/// A seeded multivariate-normal realisation.
#[derive(Debug, Clone)]
pub struct MvnSample {
    pub values: Array1<f64>,
    pub seed: u64,
}

/// Draw `L epsilon` where `L` is the jittered Cholesky factor of `cov` and
/// `epsilon` comes from the stream keyed by `seed`. Deterministic in
/// `(cov, seed, jitter)`; the jitter escalates per the standard policy and
/// the error carries the final jitter tried.
pub fn sample_mvn_cov(cov: &Array2<f64>, seed: u64, jitter: f64) -> Result<MvnSample> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::Invalid("covariance must be square".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = cov[(i, j)].abs().max(cov[(j, i)].abs()).max(1.0);
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::Invalid("covariance is not symmetric".into()));
            }
        }
    }
    let (l, _) = linalg::cholesky_with_jitter(cov, jitter, linalg::JITTER_ESCALATIONS)?;
    let mut rng = stream(seed, StreamTag::MvnDirect, 0);
    let values = sample_mvn_chol_rng(&l, &mut rng);
    Ok(MvnSample { values, seed })
}

/// Draw from a precomputed Cholesky factor using the caller's generator.
pub fn sample_mvn_chol_rng(l: &Array2<f64>, rng: &mut impl Rng) -> Array1<f64> {
    let n = l.nrows();
    let eps = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
    l.dot(&eps)
}

/// Draw `(lengthscale, sigma)` from the hyperpriors and package them as a
/// kernel (sigma squared into the variance).
pub fn sample_hyperparameters(hp: &HyperPriorSpec, seed: u64) -> KernelSpec {
    let mut rng = stream(seed, StreamTag::HyperDraw, 0);
    sample_hyperparameters_rng(hp, &mut rng)
}

/// As [`sample_hyperparameters`] with an explicit generator; used where one
/// stream drives a whole draw (hyperparameters then field noise).
pub fn sample_hyperparameters_rng(hp: &HyperPriorSpec, rng: &mut impl Rng) -> KernelSpec {
    // X ~ Gamma(shape, rate = 1/scale) gives 1/X ~ InvGamma(shape, scale).
    let gamma = Gamma::new(hp.lengthscale_shape, 1.0 / hp.lengthscale_scale)
        .expect("validated hyperprior shape");
    let lengthscale = 1.0 / gamma.sample(rng);
    let z: f64 = rng.sample(StandardNormal);
    let sigma = (hp.sigma_scale * z).abs();
    KernelSpec {
        variance: sigma * sigma,
        lengthscale,
    }
}

/// Joint log-density of the hyperpriors at the kernel's `(lengthscale,
/// sigma)`, normalizing constants included. Non-positive inputs yield
/// negative infinity rather than an error.
pub fn log_density_hyperpriors(kernel: &KernelSpec, hp: &HyperPriorSpec) -> f64 {
    if kernel.variance <= 0.0 || kernel.lengthscale <= 0.0 {
        return f64::NEG_INFINITY;
    }
    dist::inv_gamma_logpdf(kernel.lengthscale, hp.lengthscale_shape, hp.lengthscale_scale)
        + dist::half_normal_logpdf(kernel.sigma(), hp.sigma_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, Polygon, PolygonSet};
    use ndarray::arr2;

    fn unit_square_grid(res: usize) -> Grid {
        let set = PolygonSet::new("s", vec![Polygon::rect(0.0, 0.0, 1.0, 1.0)], vec!["0".into()])
            .unwrap();
        build_grid(&set, res).unwrap()
    }

    #[test]
    fn rbf_diagonal_is_exactly_variance() {
        let grid = unit_square_grid(4);
        let k = KernelSpec { variance: 2.5, lengthscale: 0.3 };
        let cov = rbf_covariance(&grid, &k);
        for i in 0..grid.n() {
            assert_eq!(cov[(i, i)], 2.5);
        }
    }

    #[test]
    fn rbf_matches_formula_at_known_distance() {
        // Two points at distance sqrt(2), sigma^2 = 1, l = 1: exp(-1).
        let grid = Grid {
            points: vec![[0.0, 0.0], [1.0, 1.0]],
            dx: 1.0,
            dy: 1.0,
            nx: 2,
            ny: 1,
            x0: 0.0,
            y0: 0.0,
        };
        let cov = rbf_covariance(&grid, &KernelSpec { variance: 1.0, lengthscale: 1.0 });
        assert!((cov[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rbf_flattens_for_huge_lengthscale() {
        let grid = unit_square_grid(5);
        let cov = rbf_covariance(&grid, &KernelSpec { variance: 1.7, lengthscale: 1e6 });
        for v in cov.iter() {
            assert!((v - 1.7).abs() < 1e-6 * 1.7);
        }
    }

    #[test]
    fn rbf_is_positive_semidefinite_on_random_grids() {
        let mut rng = crate::rng::stream(21, StreamTag::MvnDirect, 0);
        for trial in 0..10 {
            let n = 10 + trial * 9; // up to 91
            let points: Vec<[f64; 2]> =
                (0..n).map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)]).collect();
            let grid = Grid { points, dx: 0.1, dy: 0.1, nx: n, ny: 1, x0: 0.0, y0: 0.0 };
            let variance = rng.random_range(0.1..4.0);
            let k = KernelSpec { variance, lengthscale: rng.random_range(0.05..2.0) };
            let mut cov = rbf_covariance(&grid, &k);
            for i in 0..n {
                cov[(i, i)] += 1e-8 * variance;
            }
            assert!(
                linalg::cholesky_in_place(&mut cov).is_ok(),
                "min eigenvalue below -1e-8 sigma^2"
            );
        }
    }

    #[test]
    fn icar_path_graph() {
        let a = arr2(&[[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        let q = car_precision(&PrecisionSpec { family: CarFamily::Icar, adjacency: a, tau: 1.0 })
            .unwrap();
        let expected = arr2(&[[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]);
        assert_eq!(q, expected);
    }

    #[test]
    fn icar_annihilates_constant_vector() {
        let a = arr2(&[
            [0.0, 1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0, 1.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
        ]);
        let q = car_precision(&PrecisionSpec { family: CarFamily::Icar, adjacency: a, tau: 2.3 })
            .unwrap();
        let ones = Array1::from_elem(4, 1.0);
        let out = q.dot(&ones);
        for v in out.iter() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn lcar_alpha_zero_is_identity() {
        let a = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let q = car_precision(&PrecisionSpec {
            family: CarFamily::Lcar { alpha: 0.0 },
            adjacency: a,
            tau: 1.0,
        })
        .unwrap();
        assert_eq!(q, arr2(&[[1.0, 0.0], [0.0, 1.0]]));
    }

    #[test]
    fn bym_combines_structured_and_iid_parts() {
        let a = arr2(&[[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        let q = car_precision(&PrecisionSpec {
            family: CarFamily::Bym { tau_s: 2.0, tau_iid: 4.0 },
            adjacency: a.clone(),
            tau: 1.0,
        })
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = if i == j { a.row(i).sum() } else { 0.0 };
                let eye = if i == j { 1.0 } else { 0.0 };
                let expect = (d - a[(i, j)]) / 2.0 + eye / 4.0;
                assert!((q[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn car_rejects_bad_inputs() {
        let asym = arr2(&[[0.0, 1.0], [0.0, 0.0]]);
        assert!(car_precision(&PrecisionSpec { family: CarFamily::Icar, adjacency: asym, tau: 1.0 })
            .is_err());
        let a = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!(car_precision(&PrecisionSpec {
            family: CarFamily::Car { alpha: 1.0 },
            adjacency: a.clone(),
            tau: 1.0,
        })
        .is_err());
        assert!(car_precision(&PrecisionSpec {
            family: CarFamily::Pcar { alpha: -0.1 },
            adjacency: a,
            tau: 1.0,
        })
        .is_err());
    }

    #[test]
    fn car_families_are_positive_definite_in_range() {
        let a = arr2(&[
            [0.0, 1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0, 1.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
        ]);
        for family in [
            CarFamily::Car { alpha: 0.4 },
            CarFamily::Pcar { alpha: 0.9 },
            CarFamily::Lcar { alpha: 0.7 },
            CarFamily::Bym { tau_s: 1.5, tau_iid: 2.0 },
        ] {
            let q = car_precision(&PrecisionSpec { family, adjacency: a.clone(), tau: 1.3 })
                .unwrap();
            assert!(linalg::cholesky(&q).is_ok(), "{family:?} not PD");
        }
    }

    #[test]
    fn mvn_identity_covariance_reproduces_raw_normals() {
        let cov = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let s = sample_mvn_cov(&cov, 99, 0.0).unwrap();
        let mut rng = stream(99, StreamTag::MvnDirect, 0);
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        assert_eq!(s.values[0], e0);
        assert_eq!(s.values[1], e1);
    }

    #[test]
    fn mvn_diagonal_scales_raw_normals() {
        let cov = arr2(&[[4.0, 0.0], [0.0, 4.0]]);
        let s = sample_mvn_cov(&cov, 7, 0.0).unwrap();
        let id = sample_mvn_cov(&arr2(&[[1.0, 0.0], [0.0, 1.0]]), 7, 0.0).unwrap();
        assert!((s.values[0] - 2.0 * id.values[0]).abs() < 1e-15);
        assert!((s.values[1] - 2.0 * id.values[1]).abs() < 1e-15);
    }

    #[test]
    fn mvn_is_deterministic_and_finite() {
        let grid = unit_square_grid(3);
        let cov = rbf_covariance(&grid, &KernelSpec { variance: 1.0, lengthscale: 0.4 });
        let j = linalg::default_initial_jitter(&cov);
        let a = sample_mvn_cov(&cov, 5, j).unwrap();
        let b = sample_mvn_cov(&cov, 5, j).unwrap();
        assert_eq!(a.values, b.values);
        assert!(a.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mvn_empirical_covariance_converges() {
        // 2x2 grid, sigma^2 = 1, l = 0.4; 20k draws must land within 0.05.
        let grid = unit_square_grid(2);
        let cov = rbf_covariance(&grid, &KernelSpec { variance: 1.0, lengthscale: 0.4 });
        let jitter = linalg::default_initial_jitter(&cov);
        let n = grid.n();
        let draws = 20_000;
        let mut acc = Array2::<f64>::zeros((n, n));
        for s in 0..draws {
            let x = sample_mvn_cov(&cov, s as u64, jitter).unwrap().values;
            for i in 0..n {
                for j in 0..n {
                    acc[(i, j)] += x[i] * x[j];
                }
            }
        }
        acc /= draws as f64;
        let max_err = (&acc - &cov).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 0.05, "max abs covariance error {max_err}");
    }

    #[test]
    fn hyperparameter_sample_means_match_theory() {
        let hp = HyperPriorSpec::default();
        let n = 100_000;
        let mut rng = stream(2024, StreamTag::HyperDraw, 1);
        let mut sum_l = 0.0;
        let mut sum_sigma = 0.0;
        for _ in 0..n {
            let k = sample_hyperparameters_rng(&hp, &mut rng);
            assert!(k.lengthscale > 0.0 && k.variance > 0.0);
            sum_l += k.lengthscale;
            sum_sigma += k.sigma();
        }
        let mean_l = sum_l / n as f64;
        let mean_sigma = sum_sigma / n as f64;
        // InvGamma(3,3): mean 1.5, sd 1.5 -> 3 SE = 3 * 1.5 / sqrt(n)
        let se_l = 1.5 / (n as f64).sqrt();
        assert!((mean_l - 1.5).abs() < 3.0 * se_l, "mean lengthscale {mean_l}");
        // half-normal(0.05): mean 0.05 sqrt(2/pi), sd 0.05 sqrt(1 - 2/pi)
        let hn_mean = 0.05 * (2.0 / std::f64::consts::PI).sqrt();
        let hn_sd = 0.05 * (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        let se_s = hn_sd / (n as f64).sqrt();
        assert!((mean_sigma - hn_mean).abs() < 3.0 * se_s, "mean sigma {mean_sigma}");
    }

    #[test]
    fn hyperprior_logdensity_matches_high_precision_oracle() {
        // Frozen values computed with a 40-digit mpmath script.
        let at_mode = dist::inv_gamma_logpdf(0.75, 3.0, 3.0);
        assert!((at_mode - (-0.24658202474849252)).abs() < 1e-12);
        let hn = dist::half_normal_logpdf(0.03, 0.05);
        assert!((hn - 2.5899409209092636).abs() < 1e-12);

        let k = KernelSpec { variance: 0.03 * 0.03, lengthscale: 0.75 };
        let total = log_density_hyperpriors(&k, &HyperPriorSpec::default());
        assert!((total - (at_mode + hn)).abs() < 1e-12);
    }

    #[test]
    fn hyperprior_logdensity_outside_support() {
        assert_eq!(dist::half_normal_logpdf(-1.0, 0.05), f64::NEG_INFINITY);
        assert_eq!(dist::inv_gamma_logpdf(0.0, 3.0, 3.0), f64::NEG_INFINITY);
        let bad = KernelSpec { variance: -1.0, lengthscale: 1.0 };
        assert_eq!(
            log_density_hyperpriors(&bad, &HyperPriorSpec::default()),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn hyperprior_densities_integrate_to_one() {
        // Composite midpoint quadrature; fine enough for 1e-3.
        let steps = 400_000;
        let hi = 50.0;
        let h = hi / steps as f64;
        let mut mass_l = 0.0;
        for i in 0..steps {
            let x = (i as f64 + 0.5) * h;
            mass_l += dist::inv_gamma_logpdf(x, 3.0, 3.0).exp() * h;
        }
        assert!((mass_l - 1.0).abs() < 1e-3, "inverse-gamma mass {mass_l}");

        let hi_s = 1.0;
        let h_s = hi_s / steps as f64;
        let mut mass_s = 0.0;
        for i in 0..steps {
            let x = (i as f64 + 0.5) * h_s;
            mass_s += dist::half_normal_logpdf(x, 0.05).exp() * h_s;
        }
        assert!((mass_s - 1.0).abs() < 1e-3, "half-normal mass {mass_s}");
    }

    #[test]
    fn cholesky_roundtrip_of_jittered_covariance() {
        let grid = unit_square_grid(4);
        let cov = rbf_covariance(&grid, &KernelSpec { variance: 1.0, lengthscale: 0.5 });
        let j0 = linalg::default_initial_jitter(&cov);
        let (l, j) = linalg::cholesky_with_jitter(&cov, j0, linalg::JITTER_ESCALATIONS).unwrap();
        let back = l.dot(&l.t());
        let mut target = cov.clone();
        for i in 0..target.nrows() {
            target[(i, i)] += j;
        }
        let num: f64 = (&back - &target).iter().map(|v| v * v).sum::<f64>().sqrt();
        let den: f64 = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-10, "relative Frobenius error {}", num / den);
    }
}
