//! Unconstrained coordinates for [`HmmParams`] and the log posterior the
//! sampler explores.
//!
//! Layout of an unconstrained point for `K` states, dimension
//! `(K−1) + K(K−1) + K + K`:
//!
//! ```text
//! [ pi breaks (K−1) | a row 0 breaks (K−1) | … | a row K−1 | mu (K) | log sigma (K) ]
//! ```
//!
//! Simplexes use stick-breaking where break `i` (zero-based) is offset by
//! `ln(1/(K−1−i))`, so the origin maps to the uniform simplex. `mu` maps
//! through an affine logistic onto (−30, 0) and `sigma` through `exp`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::{invgamma_logpdf, tn_logpdf, DirichletParams, InvGammaParams, TruncNormal};
use crate::domain::{HmmParams, RISK_CEIL, RISK_FLOOR};
use crate::error::{Error, Result};
use crate::hmm::{LogLikGradient, ObservationSeq, PreparedHmm};
use crate::sampler::LogDensity;

const MU_SPAN: f64 = RISK_CEIL - RISK_FLOOR;

/// Sequences per work unit when the likelihood is split across threads. The
/// partial sums are always combined in the same order.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedPoint {
    pub z: Vec<f64>,
}

pub fn dim(k: usize) -> usize {
    (k - 1) + k * (k - 1) + 2 * k
}

/// Prior constants for a `k`-state model.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub k: usize,
    pub pi: DirichletParams,
    pub a_rows: DirichletParams,
    pub mu_means: Vec<f64>,
    pub mu_sd: f64,
    pub sigma: InvGammaParams,
}

impl PriorSpec {
    /// Flat Dirichlet on `pi` and every transition row, truncated-normal
    /// `mu_k ~ TN(m_k, 4)` with `m` evenly spaced over [−30, 0] inclusive,
    /// and `sigma_k ~ IG(40, 80)`.
    pub fn new(k: usize) -> Self {
        PriorSpec::with_constants(k, 4.0, 40.0, 80.0)
    }

    pub fn with_constants(k: usize, mu_sd: f64, sigma_alpha: f64, sigma_beta: f64) -> Self {
        PriorSpec {
            k,
            pi: DirichletParams::ones(k),
            a_rows: DirichletParams::ones(k),
            mu_means: linspace(RISK_FLOOR, RISK_CEIL, k),
            mu_sd,
            sigma: InvGammaParams {
                alpha: sigma_alpha,
                beta: sigma_beta,
            },
        }
    }
}

/// The tunable prior constants, independent of the state count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConstants {
    pub mu_sd: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
}

impl Default for PriorConstants {
    fn default() -> Self {
        PriorConstants {
            mu_sd: 4.0,
            sigma_alpha: 40.0,
            sigma_beta: 80.0,
        }
    }
}

impl PriorConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.mu_sd) && ok(self.sigma_alpha) && ok(self.sigma_beta) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("prior constants must be finite and positive".into()))
        }
    }

    pub fn spec(&self, k: usize) -> PriorSpec {
        PriorSpec::with_constants(k, self.mu_sd, self.sigma_alpha, self.sigma_beta)
    }
}

/// `k` evenly spaced points from `a` to `b` inclusive (`[a]` when `k == 1`).
pub fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![a];
    }
    (0..k)
        .map(|i| a + (b - a) * i as f64 / (k - 1) as f64)
        .collect()
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn break_offset(k: usize, i: usize) -> f64 {
    -((k - 1 - i) as f64).ln()
}

/// Stick-breaking: fills `x` (len K) from `y` (len K−1), returns the log
/// Jacobian and stores the break fractions in `s`.
fn simplex_forward(y: &[f64], x: &mut [f64], s: &mut [f64]) -> f64 {
    let k = x.len();
    let mut rest = 1.0;
    let mut log_rest = 0.0;
    let mut log_j = 0.0;
    for i in 0..k - 1 {
        let u = y[i] + break_offset(k, i);
        let si = logistic(u);
        s[i] = si;
        x[i] = rest * si;
        let log_1ms = -softplus(u);
        log_j += -softplus(-u) + log_1ms + log_rest;
        log_rest += log_1ms;
        rest *= 1.0 - si;
    }
    x[k - 1] = rest;
    log_j
}

/// Pulls `w_j = x_j ∂F/∂x_j` back to the breaks and adds the Jacobian term.
fn simplex_backward(s: &[f64], w: &[f64], out: &mut [f64]) {
    let k = w.len();
    let mut tail: f64 = w[k - 1];
    for i in (0..k - 1).rev() {
        let si = s[i];
        out[i] = (1.0 - si) * w[i] - si * tail + 1.0 - 2.0 * si - (k - 2 - i) as f64 * si;
        tail += w[i];
    }
}

fn simplex_inverse(x: &[f64], name: &str, y: &mut [f64]) -> Result<()> {
    let k = x.len();
    if x.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::BoundaryParams(format!("{name} has a zero entry")));
    }
    let mut rest = 1.0;
    for i in 0..k - 1 {
        let si = x[i] / rest;
        if !(si > 0.0 && si < 1.0) {
            return Err(Error::BoundaryParams(format!("{name} break {i} is degenerate")));
        }
        y[i] = (si / (1.0 - si)).ln() - break_offset(k, i);
        rest -= x[i];
    }
    Ok(())
}

/// Maps an unconstrained point to parameters and the log-determinant of the
/// transform's Jacobian.
pub fn to_constrained(z: &UnconstrainedPoint, k: usize) -> Result<(HmmParams, f64)> {
    let mut scratch = Scratch::new(k);
    let (p, lj) = forward_transform(&z.z, k, &mut scratch)?;
    Ok((p, lj))
}

pub fn to_unconstrained(theta: &HmmParams) -> Result<UnconstrainedPoint> {
    let k = theta.k;
    let mut z = vec![0.0; dim(k)];
    let (pi_part, rest) = z.split_at_mut(k - 1);
    simplex_inverse(&theta.pi, "pi", pi_part)?;
    let (a_part, rest) = rest.split_at_mut(k * (k - 1));
    for i in 0..k {
        simplex_inverse(theta.a_row(i), &format!("a row {i}"), &mut a_part[i * (k - 1)..(i + 1) * (k - 1)])?;
    }
    let (mu_part, sigma_part) = rest.split_at_mut(k);
    for (y, &m) in mu_part.iter_mut().zip(&theta.mu) {
        let s = (m - RISK_FLOOR) / MU_SPAN;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::BoundaryParams(format!("mu {m} on the risk bounds")));
        }
        *y = (s / (1.0 - s)).ln();
    }
    for (y, &sd) in sigma_part.iter_mut().zip(&theta.sigma) {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::BoundaryParams(format!("sigma {sd} not positive")));
        }
        *y = sd.ln();
    }
    Ok(UnconstrainedPoint { z })
}

struct Scratch {
    s_pi: Vec<f64>,
    s_a: Vec<f64>,
    s_mu: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Scratch {
            s_pi: vec![0.0; k.saturating_sub(1)],
            s_a: vec![0.0; k * k.saturating_sub(1)],
            s_mu: vec![0.0; k],
        }
    }
}

fn forward_transform(z: &[f64], k: usize, sc: &mut Scratch) -> Result<(HmmParams, f64)> {
    let d = dim(k);
    if z.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: z.len(),
        });
    }
    let km1 = k - 1;
    let mut pi = vec![0.0; k];
    let mut log_j = simplex_forward(&z[..km1], &mut pi, &mut sc.s_pi);
    let mut a = vec![0.0; k * k];
    let a_off = km1;
    for i in 0..k {
        log_j += simplex_forward(
            &z[a_off + i * km1..a_off + (i + 1) * km1],
            &mut a[i * k..(i + 1) * k],
            &mut sc.s_a[i * km1..(i + 1) * km1],
        );
    }
    let mu_off = a_off + k * km1;
    let mut mu = vec![0.0; k];
    for j in 0..k {
        let u = z[mu_off + j];
        let s = logistic(u);
        sc.s_mu[j] = s;
        mu[j] = (RISK_FLOOR + MU_SPAN * s).clamp(RISK_FLOOR, RISK_CEIL);
        log_j += MU_SPAN.ln() - softplus(-u) - softplus(u);
    }
    let sigma_off = mu_off + k;
    let sigma: Vec<f64> = z[sigma_off..].iter().map(|u| u.exp()).collect();
    log_j += z[sigma_off..].iter().sum::<f64>();
    Ok((HmmParams { k, pi, a, mu, sigma }, log_j))
}

/// Log prior density of `theta` and its gradient in constrained coordinates
/// (returned through a [`LogLikGradient`]-shaped buffer).
fn log_prior(theta: &HmmParams, spec: &PriorSpec, grad: &mut LogLikGradient) -> Result<f64> {
    let k = theta.k;
    let mut lp = dirichlet_kernel(&spec.pi, &theta.pi, &mut grad.d_pi);
    for i in 0..k {
        lp += dirichlet_kernel(&spec.a_rows, theta.a_row(i), &mut grad.d_a[i * k..(i + 1) * k]);
    }
    let var = spec.mu_sd * spec.mu_sd;
    for j in 0..k {
        let prior = TruncNormal::new(spec.mu_means[j], spec.mu_sd, RISK_FLOOR, RISK_CEIL)?;
        lp += tn_logpdf(&prior, theta.mu[j])?;
        grad.d_mu[j] += -(theta.mu[j] - spec.mu_means[j]) / var;
        lp += invgamma_logpdf(&spec.sigma, theta.sigma[j]);
        grad.d_sigma[j] += spec.sigma.dlogpdf(theta.sigma[j]);
    }
    Ok(lp)
}

/// Dirichlet log density without the simplex check; adds `x_j ∂/∂x_j` terms
/// (`α_j − 1`) to `w`.
fn dirichlet_kernel(p: &DirichletParams, x: &[f64], w: &mut [f64]) -> f64 {
    let mut v = p.log_normalizer();
    for ((a, xi), wi) in p.alpha.iter().zip(x).zip(w.iter_mut()) {
        if *a != 1.0 {
            v += (a - 1.0) * xi.ln();
            *wi += a - 1.0;
        }
    }
    v
}

/// Log prior + log-likelihood + log Jacobian at `z`, with its exact gradient.
pub fn log_posterior(z: &UnconstrainedPoint, data: &[ObservationSeq], spec: &PriorSpec) -> Result<(f64, Vec<f64>)> {
    let target = LogPosterior::new(data.to_vec(), spec.clone());
    let mut grad = vec![0.0; z.z.len()];
    let v = target.evaluate(&z.z, &mut grad)?;
    Ok((v, grad))
}

/// The posterior over unconstrained coordinates for fixed training data.
#[derive(Debug, Clone)]
pub struct LogPosterior {
    data: Vec<ObservationSeq>,
    spec: PriorSpec,
}

impl LogPosterior {
    pub fn new(data: Vec<ObservationSeq>, spec: PriorSpec) -> Self {
        LogPosterior { data, spec }
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    fn likelihood(&self, theta: &HmmParams) -> Result<(f64, LogLikGradient)> {
        let k = theta.k;
        let prepared = PreparedHmm::new_unchecked(theta)?;
        let partials: Vec<(f64, LogLikGradient)> = self
            .data
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = LogLikGradient::zeros(k);
                let mut scratch = Vec::new();
                let ll: f64 = chunk
                    .iter()
                    .map(|s| prepared.accumulate_gradient_with(s.values(), &mut g, &mut scratch))
                    .sum();
                (ll, g)
            })
            .collect();
        let mut total = 0.0;
        let mut grad = LogLikGradient::zeros(k);
        for (ll, g) in &partials {
            total += ll;
            grad.add(g);
        }
        Ok((total, grad))
    }

    /// Writes the gradient into `grad` and returns the log density.
    pub fn evaluate(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let k = self.spec.k;
        let mut sc = Scratch::new(k);
        let (theta, log_j) = forward_transform(z, k, &mut sc)?;
        let (ll, mut g) = if self.data.is_empty() {
            (0.0, LogLikGradient::zeros(k))
        } else {
            self.likelihood(&theta)?
        };
        let lp = log_prior(&theta, &self.spec, &mut g)?;

        let km1 = k - 1;
        // simplex blocks work with w = x ⊙ ∂F/∂x
        let w_pi: Vec<f64> = theta.pi.iter().zip(&g.d_pi).map(|(x, d)| weighted(*x, *d)).collect();
        simplex_backward(&sc.s_pi, &w_pi, &mut grad[..km1]);
        let a_off = km1;
        let mut w_row = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                w_row[j] = weighted(theta.a[i * k + j], g.d_a[i * k + j]);
            }
            simplex_backward(
                &sc.s_a[i * km1..(i + 1) * km1],
                &w_row,
                &mut grad[a_off + i * km1..a_off + (i + 1) * km1],
            );
        }
        let mu_off = a_off + k * km1;
        for j in 0..k {
            let s = sc.s_mu[j];
            grad[mu_off + j] = g.d_mu[j] * MU_SPAN * s * (1.0 - s) + 1.0 - 2.0 * s;
        }
        let sigma_off = mu_off + k;
        for j in 0..k {
            grad[sigma_off + j] = g.d_sigma[j] * theta.sigma[j] + 1.0;
        }
        let value = ll + lp + log_j;
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(vec![format!("non-finite log posterior {value}")]));
        }
        Ok(value)
    }
}

/// `x · d`, with an exact zero when the probability has underflowed.
#[inline]
fn weighted(x: f64, d: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * d
    }
}

impl LogDensity for LogPosterior {
    fn dim(&self) -> usize {
        dim(self.spec.k)
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.evaluate(z, grad)
    }
}
