//! No-U-Turn sampler with slice-based state selection, dual-averaging step
//! size adaptation and a windowed diagonal mass matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reparam::UnconstrainedPoint;

/// Energy error (in nats) beyond which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Fraction of divergent post-warm-up transitions that aborts a run.
pub const ALL_DIVERGENT_FRACTION: f64 = 0.9;

/// A differentiable log density on R^d.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density. Errors
    /// are treated by the sampler like a non-finite value.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Adapts a closure into a [`LogDensity`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnDensity { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        Ok((self.f)(x, grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Retained draws per chain.
    pub n_draws: usize,
    /// Warm-up iterations per chain, discarded.
    pub n_warmup: usize,
    pub target_accept: f64,
    /// Tree doublings run for depth `0..=max_treedepth`, so depth 0 is a
    /// single leapfrog step.
    pub max_treedepth: usize,
    pub seed: u64,
    pub init_jitter: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            n_draws: 1000,
            n_warmup: 1000,
            target_accept: 0.8,
            max_treedepth: 10,
            seed: 0,
            init_jitter: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            bad.push(format!("target_accept {} not in (0, 1)", self.target_accept));
        }
        if self.n_warmup < 1 {
            bad.push("n_warmup must be at least 1".to_string());
        }
        if self.n_draws < 1 {
            bad.push("n_draws must be at least 1".to_string());
        }
        if self.n_chains < 1 {
            bad.push("n_chains must be at least 1".to_string());
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            bad.push(format!("init_jitter {} must be finite and non-negative", self.init_jitter));
        }
        if self.max_treedepth > 30 {
            bad.push(format!("max_treedepth {} too large", self.max_treedepth));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub chain_id: usize,
    pub draws: Vec<UnconstrainedPoint>,
    /// Post-warm-up divergent transitions.
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub step_size: f64,
    /// Mean acceptance statistic over the retained transitions.
    pub accept_stat: f64,
    /// `treedepth_hist[d]` counts retained transitions that stopped at depth `d`.
    pub treedepth_hist: Vec<usize>,
    pub inv_mass: Vec<f64>,
}

/// Position, momentum and cached log density / gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn kinetic(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_mass).map(|(p, m)| m * p * p).sum::<f64>()
    }

    /// Log of the joint density, `−H`.
    pub fn joint(&self, inv_mass: &[f64]) -> f64 {
        self.logp - self.kinetic(inv_mass)
    }

    fn is_finite(&self) -> bool {
        self.logp.is_finite()
    }
}

fn evaluate<T: LogDensity + ?Sized>(target: &T, z: &[f64], grad: &mut [f64]) -> f64 {
    match target.log_density_and_grad(z, grad) {
        Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
        _ => f64::NEG_INFINITY,
    }
}

/// One half-kick / drift / half-kick step. A failed or non-finite
/// evaluation leaves `logp = −∞`, which the tree builder reads as a
/// divergence.
pub fn leapfrog<T: LogDensity + ?Sized>(target: &T, from: &PhasePoint, step: f64, inv_mass: &[f64]) -> PhasePoint {
    let d = from.z.len();
    let mut p = from.p.clone();
    for i in 0..d {
        p[i] += 0.5 * step * from.grad[i];
    }
    let z: Vec<f64> = (0..d).map(|i| from.z[i] + step * inv_mass[i] * p[i]).collect();
    let mut grad = vec![0.0; d];
    let logp = evaluate(target, &z, &mut grad);
    if logp.is_finite() {
        for i in 0..d {
            p[i] += 0.5 * step * grad[i];
        }
    }
    PhasePoint { z, p, grad, logp }
}

fn sample_momentum(rng: &mut impl Rng, inv_mass: &[f64]) -> Vec<f64> {
    inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect()
}

fn no_u_turn(minus: &PhasePoint, plus: &PhasePoint, inv_mass: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..minus.z.len() {
        let dz = plus.z[i] - minus.z[i];
        dot_minus += dz * inv_mass[i] * minus.p[i];
        dot_plus += dz * inv_mass[i] * plus.p[i];
    }
    dot_minus >= 0.0 && dot_plus >= 0.0
}

struct Subtree {
    minus: PhasePoint,
    plus: PhasePoint,
    proposal: PhasePoint,
    n_valid: usize,
    keep_going: bool,
    diverged: bool,
    accept_sum: f64,
    n_steps: usize,
}

struct TreeCtx<'a, T: ?Sized> {
    target: &'a T,
    inv_mass: &'a [f64],
    step: f64,
    log_slice: f64,
    joint0: f64,
}

fn build_tree<T: LogDensity + ?Sized>(
    ctx: &TreeCtx<'_, T>,
    edge: &PhasePoint,
    forward: bool,
    depth: usize,
    rng: &mut impl Rng,
) -> Subtree {
    if depth == 0 {
        let step = if forward { ctx.step } else { -ctx.step };
        let next = leapfrog(ctx.target, edge, step, ctx.inv_mass);
        let joint = if next.is_finite() {
            next.joint(ctx.inv_mass)
        } else {
            f64::NEG_INFINITY
        };
        let joint = if joint.is_nan() { f64::NEG_INFINITY } else { joint };
        let n_valid = usize::from(ctx.log_slice <= joint);
        let keep_going = ctx.log_slice < joint + DIVERGENCE_THRESHOLD;
        let accept = if joint.is_finite() {
            (joint - ctx.joint0).exp().min(1.0)
        } else {
            0.0
        };
        return Subtree {
            minus: next.clone(),
            plus: next.clone(),
            proposal: next,
            n_valid,
            keep_going,
            diverged: !keep_going,
            accept_sum: accept,
            n_steps: 1,
        };
    }
    let mut tree = build_tree(ctx, edge, forward, depth - 1, rng);
    if !tree.keep_going {
        return tree;
    }
    let outer_edge = if forward { &tree.plus } else { &tree.minus };
    let other = build_tree(ctx, &outer_edge.clone(), forward, depth - 1, rng);
    let total = tree.n_valid + other.n_valid;
    if total > 0 && rng.random::<f64>() < other.n_valid as f64 / total as f64 {
        tree.proposal = other.proposal;
    }
    if forward {
        tree.plus = other.plus;
    } else {
        tree.minus = other.minus;
    }
    tree.n_valid = total;
    tree.accept_sum += other.accept_sum;
    tree.n_steps += other.n_steps;
    tree.diverged |= other.diverged;
    tree.keep_going = other.keep_going && no_u_turn(&tree.minus, &tree.plus, ctx.inv_mass);
    tree
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub diverged: bool,
    pub treedepth: usize,
    pub n_leapfrog: usize,
}

/// One NUTS transition from `current` (momentum ignored, resampled).
pub fn nuts_transition<T: LogDensity + ?Sized>(
    target: &T,
    current: &PhasePoint,
    step: f64,
    inv_mass: &[f64],
    max_treedepth: usize,
    rng: &mut impl Rng,
) -> (PhasePoint, TransitionStats) {
    let mut start = current.clone();
    start.p = sample_momentum(rng, inv_mass);
    let joint0 = start.joint(inv_mass);
    let log_slice = joint0 + rng.random::<f64>().ln();
    let ctx = TreeCtx {
        target,
        inv_mass,
        step,
        log_slice,
        joint0,
    };
    let mut minus = start.clone();
    let mut plus = start.clone();
    let mut chosen = start;
    let mut n_valid = 1usize;
    let mut accept_sum = 0.0;
    let mut n_steps = 0usize;
    let mut diverged = false;
    let mut depth = 0;
    loop {
        let forward = rng.random::<bool>();
        let sub = if forward {
            build_tree(&ctx, &plus, true, depth, rng)
        } else {
            build_tree(&ctx, &minus, false, depth, rng)
        };
        accept_sum += sub.accept_sum;
        n_steps += sub.n_steps;
        diverged |= sub.diverged;
        if sub.keep_going && rng.random::<f64>() < sub.n_valid as f64 / n_valid as f64 {
            chosen = sub.proposal.clone();
        }
        if forward {
            plus = sub.plus;
        } else {
            minus = sub.minus;
        }
        n_valid += sub.n_valid;
        let keep_going = sub.keep_going && no_u_turn(&minus, &plus, inv_mass);
        if !keep_going || depth >= max_treedepth {
            break;
        }
        depth += 1;
    }
    let stats = TransitionStats {
        accept_stat: accept_sum / n_steps as f64,
        diverged,
        treedepth: depth,
        n_leapfrog: n_steps,
    };
    (chosen, stats)
}

/// Doubles or halves a unit step until a single leapfrog step's acceptance
/// ratio crosses 1/2.
pub fn find_initial_step<T: LogDensity + ?Sized>(
    target: &T,
    current: &PhasePoint,
    inv_mass: &[f64],
    rng: &mut impl Rng,
) -> f64 {
    let mut step = 1.0;
    let mut start = current.clone();
    start.p = sample_momentum(rng, inv_mass);
    let joint0 = start.joint(inv_mass);
    let log_ratio = |step: f64| {
        let next = leapfrog(target, &start, step, inv_mass);
        let j = next.joint(inv_mass);
        if j.is_finite() {
            j - joint0
        } else {
            f64::NEG_INFINITY
        }
    };
    let direction = if log_ratio(step) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let r = log_ratio(step);
        if direction * r <= -direction * std::f64::consts::LN_2 {
            break;
        }
        step *= 2f64.powf(direction);
        if !(1e-10..=1e7).contains(&step) {
            break;
        }
    }
    step
}

/// Dual averaging of the log step size toward a target acceptance.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    hbar: f64,
    log_step: f64,
    log_step_avg: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(target: f64, initial_step: f64) -> Self {
        DualAveraging {
            target,
            mu: (10.0 * initial_step).ln(),
            hbar: 0.0,
            log_step: initial_step.ln(),
            log_step_avg: 0.0,
            count: 0.0,
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + Self::T0);
        self.hbar = (1.0 - w) * self.hbar + w * (self.target - accept_stat);
        self.log_step = self.mu - m.sqrt() / Self::GAMMA * self.hbar;
        let eta = m.powf(-Self::KAPPA);
        self.log_step_avg = eta * self.log_step + (1.0 - eta) * self.log_step_avg;
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn final_step(&self) -> f64 {
        if self.count == 0.0 {
            self.step()
        } else {
            self.log_step_avg.exp()
        }
    }
}

/// Mass-matrix windows `[start, end)` within warm-up. Fewer than 20 warm-up
/// iterations adapt the step size only.
pub fn adaptation_windows(n_warmup: usize) -> Vec<(usize, usize)> {
    if n_warmup < 20 {
        return Vec::new();
    }
    let (init, term, base) = if 75 + 50 + 25 > n_warmup {
        let init = (0.15 * n_warmup as f64) as usize;
        let term = (0.1 * n_warmup as f64) as usize;
        (init, term, n_warmup - init - term)
    } else {
        (75, 50, 25)
    };
    let end_adapt = n_warmup - term;
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < end_adapt {
        let mut end = (start + size).min(end_adapt);
        let next = 2 * size;
        if end + next > end_adapt {
            end = end_adapt;
        }
        windows.push((start, end));
        start = end;
        size = next;
    }
    windows
}

#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    /// Sample variance shrunk toward 1e-3.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|m2| {
                let var = if self.n > 1 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

fn initial_point<T: LogDensity + ?Sized>(target: &T, jitter: f64, rng: &mut impl Rng) -> Result<PhasePoint> {
    let d = target.dim();
    for _ in 0..100 {
        let z: Vec<f64> = (0..d)
            .map(|_| if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 })
            .collect();
        let mut grad = vec![0.0; d];
        let logp = evaluate(target, &z, &mut grad);
        if logp.is_finite() {
            return Ok(PhasePoint {
                z,
                p: vec![0.0; d],
                grad,
                logp,
            });
        }
    }
    Err(Error::InvalidParams(vec![
        "no finite log density found among 100 initial points".to_string(),
    ]))
}

/// Chain-specific RNG: the seed picks the key, the chain id the stream.
pub fn chain_rng(seed: u64, chain_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_id as u64);
    rng
}

/// Runs one chain: warm-up with adaptation, then `n_draws` retained draws.
pub fn run_chain<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig, chain_id: usize) -> Result<ChainResult> {
    let mut rng = chain_rng(config.seed, chain_id);
    let d = target.dim();
    let mut current = initial_point(target, config.init_jitter, &mut rng)?;
    let mut inv_mass = vec![1.0; d];
    let mut adapt = DualAveraging::new(config.target_accept, find_initial_step(target, &current, &inv_mass, &mut rng));
    let windows = adaptation_windows(config.n_warmup);
    let mut window_idx = 0;
    let mut welford = Welford::new(d);
    let mut warmup_divergences = 0;

    for it in 0..config.n_warmup {
        let (next, stats) = nuts_transition(target, &current, adapt.step(), &inv_mass, config.max_treedepth, &mut rng);
        current = next;
        warmup_divergences += usize::from(stats.diverged);
        adapt.update(stats.accept_stat);
        if let Some(&(start, end)) = windows.get(window_idx) {
            if it >= start && it < end {
                welford.push(&current.z);
            }
            if it + 1 == end {
                inv_mass = welford.regularized_variance();
                welford = Welford::new(d);
                window_idx += 1;
                let step = find_initial_step(target, &current, &inv_mass, &mut rng);
                adapt = DualAveraging::new(config.target_accept, step);
            }
        }
    }
    let step = adapt.final_step();

    let mut draws = Vec::with_capacity(config.n_draws);
    let mut divergences = 0;
    let mut accept_total = 0.0;
    let mut treedepth_hist = vec![0; config.max_treedepth + 1];
    for _ in 0..config.n_draws {
        let (next, stats) = nuts_transition(target, &current, step, &inv_mass, config.max_treedepth, &mut rng);
        current = next;
        divergences += usize::from(stats.diverged);
        accept_total += stats.accept_stat;
        treedepth_hist[stats.treedepth] += 1;
        draws.push(UnconstrainedPoint { z: current.z.clone() });
    }
    Ok(ChainResult {
        chain_id,
        draws,
        divergences,
        warmup_divergences,
        step_size: step,
        accept_stat: accept_total / config.n_draws as f64,
        treedepth_hist,
        inv_mass,
    })
}

/// Runs `config.n_chains` independent chains in parallel, returned in
/// chain-id order.
pub fn run_chains<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<Vec<ChainResult>> {
    config.validate()?;
    let chains: Vec<ChainResult> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<_>>()?;
    let divergent: usize = chains.iter().map(|c| c.divergences).sum();
    let total = config.n_chains * config.n_draws;
    if divergent as f64 > ALL_DIVERGENT_FRACTION * total as f64 {
        return Err(Error::AllDivergent { divergent, total });
    }
    Ok(chains)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(d: usize) -> FnDensity<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnDensity::new(d, |x: &[f64], g: &mut [f64]| {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = -xi;
            }
            -0.5 * x.iter().map(|v| v * v).sum::<f64>()
        })
    }

    fn point<T: LogDensity>(t: &T, z: Vec<f64>, p: Vec<f64>) -> PhasePoint {
        let mut grad = vec![0.0; z.len()];
        let logp = t.log_density_and_grad(&z, &mut grad).unwrap();
        PhasePoint { z, p, grad, logp }
    }

    #[test]
    fn leapfrog_at_rest_stays_put() {
        let flat = FnDensity::new(3, |_: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            0.0
        });
        let start = point(&flat, vec![1.0, -2.0, 3.0], vec![0.0; 3]);
        let next = leapfrog(&flat, &start, 0.1, &[1.0; 3]);
        assert_eq!(next.z, start.z);
        assert_eq!(next.p, start.p);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let t = gaussian(2);
        let inv_mass = [0.7, 1.3];
        let start = point(&t, vec![0.4, -1.1], vec![0.9, 0.2]);
        let mut s = start.clone();
        for _ in 0..50 {
            s = leapfrog(&t, &s, 0.1, &inv_mass);
        }
        s.p.iter_mut().for_each(|p| *p = -*p);
        for _ in 0..50 {
            s = leapfrog(&t, &s, 0.1, &inv_mass);
        }
        for i in 0..2 {
            assert!((s.z[i] - start.z[i]).abs() < 1e-12);
            assert!((s.p[i] + start.p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn leapfrog_conserves_energy() {
        let t = gaussian(1);
        let start = point(&t, vec![1.0], vec![0.5]);
        let h0 = -start.joint(&[1.0]);
        let mut s = start;
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            s = leapfrog(&t, &s, 1e-3, &[1.0]);
            worst = worst.max((-s.joint(&[1.0]) - h0).abs());
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn non_finite_density_is_divergent() {
        let wall = FnDensity::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = -x[0];
            if x[0] > 0.5 {
                f64::NAN
            } else {
                -0.5 * x[0] * x[0]
            }
        });
        let start = point(&wall, vec![0.4], vec![0.0]);
        let mut rng = chain_rng(1, 0);
        let mut saw_divergence = false;
        for _ in 0..200 {
            let (next, stats) = nuts_transition(&wall, &start, 0.5, &[1.0], 5, &mut rng);
            assert!(next.z[0] <= 0.5);
            saw_divergence |= stats.diverged;
        }
        assert!(saw_divergence);
    }

    #[test]
    fn treedepth_zero_is_one_leapfrog() {
        let t = gaussian(2);
        let start = point(&t, vec![0.3, 0.3], vec![0.0; 2]);
        let mut rng = chain_rng(2, 0);
        let mut moved = 0;
        for _ in 0..100 {
            let (next, stats) = nuts_transition(&t, &start, 1.8, &[1.0, 1.0], 0, &mut rng);
            assert_eq!(stats.n_leapfrog, 1);
            assert_eq!(stats.treedepth, 0);
            if next.z != start.z {
                // the only candidate is a single step from the start
                let dz: f64 = next.z.iter().zip(&start.z).map(|(a, b)| (a - b).abs()).sum();
                assert!(dz > 0.0);
                moved += 1;
            }
        }
        assert!(moved > 0 && moved < 100);
    }

    #[test]
    fn windows_match_default_schedule() {
        let w = adaptation_windows(1000);
        let sizes: Vec<usize> = w.iter().map(|(a, b)| b - a).collect();
        assert_eq!(w[0].0, 75);
        assert_eq!(sizes, vec![25, 50, 100, 200, 500]);
        assert_eq!(w.last().unwrap().1, 950);
        let short = adaptation_windows(100);
        assert_eq!(short, vec![(15, 90)]);
        assert!(adaptation_windows(10).is_empty());
    }

    #[test]
    fn dual_averaging_moves_step() {
        let mut da = DualAveraging::new(0.8, 1.0);
        for _ in 0..50 {
            da.update(0.2);
        }
        assert!(da.step() < 1.0);
        let mut up = DualAveraging::new(0.8, 1.0);
        for _ in 0..50 {
            up.update(1.0);
        }
        assert!(up.step() > 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = SamplerConfig {
            target_accept: 1.0,
            n_draws: 0,
            ..Default::default()
        };
        let Err(Error::InvalidConfig(msg)) = bad.validate() else {
            panic!("expected InvalidConfig");
        };
        assert!(msg.contains("target_accept") && msg.contains("n_draws"));
    }

    #[test]
    fn identical_seed_is_bitwise_identical() {
        let t = gaussian(3);
        let cfg = SamplerConfig {
            n_chains: 2,
            n_draws: 100,
            n_warmup: 100,
            seed: 9,
            ..Default::default()
        };
        let a = run_chains(&t, &cfg).unwrap();
        let b = run_chains(&t, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].draws, a[1].draws);
    }

    #[test]
    fn all_divergent_is_reported() {
        // Density that is finite only at the start, so every move diverges.
        let spike = FnDensity::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            if x[0] == 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        });
        let cfg = SamplerConfig {
            n_chains: 1,
            n_draws: 20,
            n_warmup: 10,
            init_jitter: 0.0,
            ..Default::default()
        };
        assert!(matches!(run_chains(&spike, &cfg), Err(Error::AllDivergent { .. })));
    }
}
