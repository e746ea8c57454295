//! No-U-Turn sampler with multinomial trajectory sampling, dual-averaging
//! step-size adaptation, and windowed diagonal mass-matrix adaptation during
//! warmup. Chains run concurrently, each on its own derived stream, and the
//! result is merged by chain index so the output is reproducible at any
//! thread count.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::inference::chains::{ChainDraws, ChainSet};
use crate::rng::{stream, StreamTag};

/// A posterior with exact gradients, evaluated on unconstrained parameters.
///
/// Implementations may return negative infinity to reject a point (the
/// gradient is ignored there); they must never panic on finite input.
pub trait PosteriorModel: Sync {
    fn dim(&self) -> usize;

    /// Log posterior density (up to a constant) and its gradient.
    fn logpost_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    /// Names of the sampled coordinates, in position order.
    fn param_names(&self) -> Vec<String>;

    /// Names of derived quantities appended to each stored draw.
    fn derived_names(&self) -> Vec<String>;

    /// Compute derived quantities (spatial effects, prevalences, natural-
    /// scale hyperparameters) for one position.
    fn derived(&self, position: &[f64], out: &mut [f64]);

    /// Tag recorded in draw files.
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone)]
pub struct NutsConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_depth: usize,
    pub max_delta_h: f64,
}

impl NutsConfig {
    pub fn new(chains: usize, warmup: usize, samples: usize, seed: u64) -> Self {
        NutsConfig {
            chains,
            warmup,
            samples,
            seed,
            target_accept: 0.8,
            max_depth: 10,
            max_delta_h: 1000.0,
        }
    }
}

/// Fraction of post-warmup divergent transitions above which the chain set
/// is flagged unreliable.
pub const DIVERGENCE_FLAG_RATE: f64 = 0.20;

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(&pi, &im)| pi * pi * im).sum::<f64>()
}

fn energy(state: &State, inv_mass: &[f64]) -> f64 {
    -state.logp + kinetic(&state.p, inv_mass)
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct LeapfrogCtx<'a, M: PosteriorModel> {
    model: &'a M,
    eps: f64,
    inv_mass: &'a [f64],
    max_delta_h: f64,
}

impl<M: PosteriorModel> LeapfrogCtx<'_, M> {
    fn leapfrog(&self, from: &State, dir: f64) -> State {
        let e = dir * self.eps;
        let dim = from.q.len();
        let mut p: Vec<f64> = from
            .p
            .iter()
            .zip(&from.grad)
            .map(|(&pi, &gi)| pi + 0.5 * e * gi)
            .collect();
        let mut q = vec![0.0; dim];
        for i in 0..dim {
            q[i] = from.q[i] + e * self.inv_mass[i] * p[i];
        }
        let mut grad = vec![0.0; dim];
        let logp = self.model.logpost_and_grad(&q, &mut grad);
        if logp.is_finite() {
            for i in 0..dim {
                p[i] += 0.5 * e * grad[i];
            }
        }
        State { q, p, grad, logp }
    }
}

struct Subtree {
    left: State,
    right: State,
    proposal: State,
    rho: Vec<f64>,
    log_weight: f64,
    sum_accept: f64,
    n_states: usize,
    n_leapfrog: usize,
    divergent: bool,
    turned: bool,
}

fn uturn(left: &State, right: &State, rho: &[f64], inv_mass: &[f64]) -> bool {
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for i in 0..rho.len() {
        fwd += right.p[i] * inv_mass[i] * rho[i];
        bwd += left.p[i] * inv_mass[i] * rho[i];
    }
    !(fwd > 0.0 && bwd > 0.0)
}

fn build_tree<M: PosteriorModel>(
    ctx: &LeapfrogCtx<'_, M>,
    depth: usize,
    from: &State,
    dir: f64,
    h0: f64,
    rng: &mut impl Rng,
) -> Subtree {
    if depth == 0 {
        let state = ctx.leapfrog(from, dir);
        let log_weight = h0 - energy(&state, ctx.inv_mass);
        // NaN-propagating: a non-finite energy counts as divergent.
        let divergent = !(log_weight > -ctx.max_delta_h);
        let accept = if log_weight >= 0.0 { 1.0 } else { log_weight.exp() };
        return Subtree {
            left: state.clone(),
            right: state.clone(),
            rho: state.p.clone(),
            proposal: state,
            log_weight: if divergent { f64::NEG_INFINITY } else { log_weight },
            sum_accept: if accept.is_finite() { accept } else { 0.0 },
            n_states: 1,
            n_leapfrog: 1,
            divergent,
            turned: false,
        };
    }

    let first = build_tree(ctx, depth - 1, from, dir, h0, rng);
    if first.divergent || first.turned {
        return first;
    }
    let outer_edge = if dir > 0.0 { &first.right } else { &first.left };
    let second = build_tree(ctx, depth - 1, outer_edge, dir, h0, rng);

    let mut merged = Subtree {
        left: if dir > 0.0 { first.left.clone() } else { second.left.clone() },
        right: if dir > 0.0 { second.right.clone() } else { first.right.clone() },
        proposal: first.proposal,
        rho: first
            .rho
            .iter()
            .zip(&second.rho)
            .map(|(a, b)| a + b)
            .collect(),
        log_weight: logaddexp(first.log_weight, second.log_weight),
        sum_accept: first.sum_accept + second.sum_accept,
        n_states: first.n_states + second.n_states,
        n_leapfrog: first.n_leapfrog + second.n_leapfrog,
        divergent: second.divergent,
        turned: second.turned,
    };
    if merged.divergent || merged.turned {
        return merged;
    }
    // Unbiased multinomial draw between the two halves.
    let pick_second = second.log_weight - merged.log_weight;
    if rng.random_range(0.0..1.0f64).ln() < pick_second {
        merged.proposal = second.proposal;
    }
    merged.turned = uturn(&merged.left, &merged.right, &merged.rho, ctx.inv_mass);
    merged
}

struct TransitionStats {
    accept_stat: f64,
    n_leapfrog: usize,
    divergent: bool,
}

fn nuts_transition<M: PosteriorModel>(
    ctx: &LeapfrogCtx<'_, M>,
    init: &mut State,
    max_depth: usize,
    rng: &mut impl Rng,
) -> TransitionStats {
    let dim = init.q.len();
    for i in 0..dim {
        let z: f64 = rng.sample(StandardNormal);
        init.p[i] = z / ctx.inv_mass[i].sqrt();
    }
    let h0 = energy(init, ctx.inv_mass);

    let mut left = init.clone();
    let mut right = init.clone();
    let mut proposal = init.clone();
    let mut rho = init.p.clone();
    let mut log_weight = 0.0f64;
    let mut sum_accept = 0.0;
    let mut n_states = 0usize;
    let mut n_leapfrog = 0usize;
    let mut divergent = false;

    for depth in 0..max_depth {
        let dir: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let from = if dir > 0.0 { &right } else { &left };
        let new = build_tree(ctx, depth, from, dir, h0, rng);
        sum_accept += new.sum_accept;
        n_states += new.n_states;
        n_leapfrog += new.n_leapfrog;
        if new.divergent {
            divergent = true;
            break;
        }
        if new.turned {
            break;
        }
        // Biased progressive sampling toward the fresh subtree.
        if rng.random_range(0.0..1.0f64).ln() < new.log_weight - log_weight {
            proposal = new.proposal.clone();
        }
        log_weight = logaddexp(log_weight, new.log_weight);
        for i in 0..dim {
            rho[i] += new.rho[i];
        }
        if dir > 0.0 {
            right = new.right;
        } else {
            left = new.left;
        }
        if uturn(&left, &right, &rho, ctx.inv_mass) {
            break;
        }
    }

    *init = proposal;
    TransitionStats {
        accept_stat: if n_states > 0 { sum_accept / n_states as f64 } else { 0.0 },
        n_leapfrog,
        divergent,
    }
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: u64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            m: 0,
            target,
        }
    }

    fn update(&mut self, accept: f64) {
        self.m += 1;
        let m = self.m as f64;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn averaged(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate shrunk toward a small diagonal.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|&m2| {
                let var = if self.n > 1 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Stan-style warmup phases: a step-size-only opening buffer, doubling
/// variance-estimation windows, and a closing step-size-only buffer.
fn metric_window_ends(warmup: usize) -> Vec<usize> {
    if warmup < 40 {
        return Vec::new();
    }
    let (init, term, base) = if 75 + 25 + 50 <= warmup {
        (75usize, 50usize, 25usize)
    } else {
        let init = (0.15 * warmup as f64).round() as usize;
        let term = (0.10 * warmup as f64).round() as usize;
        (init, term, warmup - init - term)
    };
    let last = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut width = base.max(1);
    while start < last {
        let mut end = start + width;
        // If the next doubling would not fit, extend this window to the end.
        if end + 2 * width > last {
            end = last;
        }
        ends.push(end.min(last));
        start = end;
        width *= 2;
    }
    ends
}

fn find_reasonable_epsilon<M: PosteriorModel>(
    model: &M,
    state: &State,
    inv_mass: &[f64],
    rng: &mut impl Rng,
) -> f64 {
    let dim = state.q.len();
    let mut probe = state.clone();
    for i in 0..dim {
        let z: f64 = rng.sample(StandardNormal);
        probe.p[i] = z / inv_mass[i].sqrt();
    }
    let h0 = energy(&probe, inv_mass);
    let mut eps = 1.0f64;
    let delta = |eps: f64| -> f64 {
        let ctx = LeapfrogCtx { model, eps, inv_mass, max_delta_h: f64::INFINITY };
        let next = ctx.leapfrog(&probe, 1.0);
        let h1 = energy(&next, inv_mass);
        // log acceptance ratio; non-finite counts as strong rejection
        let d = h0 - h1;
        if d.is_nan() {
            f64::NEG_INFINITY
        } else {
            d
        }
    };
    let d0 = delta(eps);
    let dir = if d0 > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let d = delta(eps);
        if dir > 0.0 && d <= (0.5f64).ln() {
            break;
        }
        if dir < 0.0 && d >= (0.5f64).ln() {
            break;
        }
        eps *= if dir > 0.0 { 2.0 } else { 0.5 };
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}

fn run_chain<M: PosteriorModel>(
    model: &M,
    cfg: &NutsConfig,
    chain_idx: usize,
) -> Result<ChainDraws> {
    let dim = model.dim();
    let chain_seed_index = chain_idx as u64;
    let mut rng = stream(cfg.seed, StreamTag::Chain, chain_seed_index);

    // Initialize from uniform(-2, 2) until the density is finite.
    let mut state = State {
        q: vec![0.0; dim],
        p: vec![0.0; dim],
        grad: vec![0.0; dim],
        logp: f64::NEG_INFINITY,
    };
    let mut found = false;
    for _ in 0..100 {
        for qi in state.q.iter_mut() {
            *qi = rng.random_range(-2.0..2.0);
        }
        state.logp = model.logpost_and_grad(&state.q, &mut state.grad);
        if state.logp.is_finite() {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::NonFinite(format!(
            "chain {chain_idx}: no finite starting point after 100 attempts"
        )));
    }

    let mut inv_mass = vec![1.0; dim];
    let warmup_start = Instant::now();
    let mut eps = find_reasonable_epsilon(model, &state, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let window_ends = metric_window_ends(cfg.warmup);
    let window_start = metric_window_start(cfg.warmup);
    let mut welford = Welford::new(dim);
    let mut next_window = 0usize;
    let mut warmup_leapfrogs: u64 = 0;

    for t in 0..cfg.warmup {
        let ctx = LeapfrogCtx { model, eps, inv_mass: &inv_mass, max_delta_h: cfg.max_delta_h };
        let stats = nuts_transition(&ctx, &mut state, cfg.max_depth, &mut rng);
        warmup_leapfrogs += stats.n_leapfrog as u64;
        da.update(stats.accept_stat);
        eps = da.current();

        if next_window < window_ends.len() && t >= window_start {
            welford.add(&state.q);
        }
        if next_window < window_ends.len() && t + 1 == window_ends[next_window] {
            if welford.n >= 5 {
                inv_mass = welford.regularized_variance();
            }
            welford = Welford::new(dim);
            next_window += 1;
            // Refresh the gradient cache and restart step-size adaptation
            // under the new metric.
            eps = find_reasonable_epsilon(model, &state, &inv_mass, &mut rng);
            da = DualAveraging::new(eps, cfg.target_accept);
        }
    }
    let warmup_seconds = warmup_start.elapsed().as_secs_f64();
    if cfg.warmup > 0 {
        eps = da.averaged();
    }

    let n_params = dim;
    let n_derived = model.derived_names().len();
    let mut draws = ndarray::Array2::<f64>::zeros((cfg.samples, n_params + n_derived));
    let mut derived_buf = vec![0.0; n_derived];
    let mut leapfrogs = Vec::with_capacity(cfg.samples);
    let mut divergences: u32 = 0;

    let sampling_start = Instant::now();
    for t in 0..cfg.samples {
        let ctx = LeapfrogCtx { model, eps, inv_mass: &inv_mass, max_delta_h: cfg.max_delta_h };
        let stats = nuts_transition(&ctx, &mut state, cfg.max_depth, &mut rng);
        if stats.divergent {
            divergences += 1;
        }
        leapfrogs.push(stats.n_leapfrog as u32);
        let mut row = draws.row_mut(t);
        for i in 0..dim {
            row[i] = state.q[i];
        }
        model.derived(&state.q, &mut derived_buf);
        for (i, &v) in derived_buf.iter().enumerate() {
            row[n_params + i] = v;
        }
    }
    let sampling_seconds = sampling_start.elapsed().as_secs_f64();

    Ok(ChainDraws {
        draws,
        divergences,
        leapfrogs,
        warmup_leapfrogs,
        warmup_seconds,
        sampling_seconds,
        seed: cfg.seed,
        chain_index: chain_idx,
        step_size: eps,
    })
}

fn metric_window_start(warmup: usize) -> usize {
    if 75 + 25 + 50 <= warmup {
        75
    } else {
        (0.15 * warmup as f64).round() as usize
    }
}

/// Run No-U-Turn sampling for `cfg.chains` independent chains and merge the
/// results by chain index.
pub fn run_nuts<M: PosteriorModel>(model: &M, cfg: &NutsConfig) -> Result<ChainSet> {
    if cfg.chains < 2 {
        return Err(Error::Invalid("need at least 2 chains".into()));
    }
    if cfg.warmup == 0 || cfg.samples == 0 {
        return Err(Error::Invalid("warmup and samples must be at least 1".into()));
    }
    let run_start = Instant::now();
    let mut results: Vec<Option<Result<ChainDraws>>> = (0..cfg.chains).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chain_idx in 0..cfg.chains {
            let cfg_ref = &*cfg;
            handles.push(scope.spawn(move || run_chain(model, cfg_ref, chain_idx)));
        }
        for (i, h) in handles.into_iter().enumerate() {
            results[i] = Some(h.join().expect("chain thread panicked"));
        }
    });
    let chains: Vec<ChainDraws> = results
        .into_iter()
        .map(|r| r.expect("all chains launched"))
        .collect::<Result<_>>()?;

    let total_divergences: u32 = chains.iter().map(|c| c.divergences).sum();
    let total_draws = (cfg.chains * cfg.samples) as f64;
    let unreliable = total_divergences as f64 / total_draws > DIVERGENCE_FLAG_RATE;

    Ok(ChainSet::new(
        model.param_names(),
        model.derived_names(),
        model.kind(),
        chains,
        cfg.warmup,
        cfg.samples,
        cfg.seed,
        unreliable,
        run_start.elapsed().as_secs_f64(),
    ))
}
