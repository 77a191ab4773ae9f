//! Log-space HMM recursions with truncated-normal emissions on [−30, 0].
//!
//! Forward messages are kept as logs; each step shifts by the row maximum
//! before mixing through the transition matrix, which is exact log-sum-exp
//! algebra with one exponential per state instead of one per transition.

use crate::dists::{tn_moments, TnCache, TruncNormal, LN_SQRT_2PI};
use crate::domain::{validate_structure, HmmParams, RISK_CEIL, RISK_FLOOR};
use crate::error::{Error, Result};

/// Risk sequence of one event, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeq(Vec<f64>);

impl ObservationSeq {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidObservations("empty sequence".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(RISK_FLOOR..=RISK_CEIL).contains(*v)) {
            return Err(Error::InvalidObservations(format!(
                "value {bad} outside [{RISK_FLOOR}, {RISK_CEIL}]"
            )));
        }
        Ok(ObservationSeq(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First `n` observations.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        ObservationSeq::new(self.0[..n.min(self.0.len())].to_vec())
    }
}

/// Forward messages, row-major `N × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogForwardTable {
    pub k: usize,
    pub log_alpha: Vec<f64>,
    pub log_likelihood: f64,
}

impl LogForwardTable {
    pub fn n(&self) -> usize {
        self.log_alpha.len() / self.k
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.log_alpha[n * self.k..(n + 1) * self.k]
    }
}

/// Partial derivatives of `ln p(X | θ)` in constrained coordinates, treating
/// every entry of `pi` and `a` as a free variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikGradient {
    pub d_pi: Vec<f64>,
    pub d_a: Vec<f64>,
    pub d_mu: Vec<f64>,
    pub d_sigma: Vec<f64>,
}

impl LogLikGradient {
    pub fn zeros(k: usize) -> Self {
        LogLikGradient {
            d_pi: vec![0.0; k],
            d_a: vec![0.0; k * k],
            d_mu: vec![0.0; k],
            d_sigma: vec![0.0; k],
        }
    }

    pub fn add(&mut self, other: &LogLikGradient) {
        for (a, b) in self
            .d_pi
            .iter_mut()
            .chain(self.d_a.iter_mut())
            .chain(self.d_mu.iter_mut())
            .chain(self.d_sigma.iter_mut())
            .zip(other.d_pi.iter().chain(&other.d_a).chain(&other.d_mu).chain(&other.d_sigma))
        {
            *a += b;
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Parameters with emission normalizers resolved once.
pub struct PreparedHmm<'a> {
    theta: &'a HmmParams,
    log_pi: Vec<f64>,
    emissions: Vec<TruncNormal>,
    caches: Vec<TnCache>,
    /// `ln(σ √2π) + ln Z` per state.
    log_offsets: Vec<f64>,
}

impl<'a> PreparedHmm<'a> {
    /// Validates `theta` (state order is free).
    pub fn new(theta: &'a HmmParams) -> Result<Self> {
        let v = validate_structure(theta);
        if !v.is_empty() {
            return Err(Error::InvalidParams(v));
        }
        Self::new_unchecked(theta)
    }

    /// Skips simplex validation so finite differences can leave the simplex.
    /// Shapes and emission parameters must still be usable.
    pub fn new_unchecked(theta: &'a HmmParams) -> Result<Self> {
        let emissions = theta
            .mu
            .iter()
            .zip(&theta.sigma)
            .map(|(&m, &s)| TruncNormal::new(m, s, RISK_FLOOR, RISK_CEIL))
            .collect::<Result<Vec<_>>>()?;
        let caches = emissions.iter().map(|e| e.cache()).collect::<Result<Vec<_>>>()?;
        let log_offsets = emissions
            .iter()
            .zip(&caches)
            .map(|(e, c)| LN_SQRT_2PI + e.sigma.ln() + c.log_z)
            .collect();
        Ok(PreparedHmm {
            theta,
            log_pi: theta.pi.iter().map(|p| p.ln()).collect(),
            emissions,
            caches,
            log_offsets,
        })
    }

    pub fn k(&self) -> usize {
        self.theta.k
    }

    pub fn emission(&self, k: usize) -> &TruncNormal {
        &self.emissions[k]
    }

    /// Row-major `N × K` table of emission log densities.
    pub fn log_emissions(&self, obs: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut t = Vec::with_capacity(obs.len() * k);
        for &x in obs {
            t.extend((0..k).map(|s| self.log_emission(s, x)));
        }
        t
    }

    pub fn forward(&self, obs: &[f64]) -> LogForwardTable {
        let le = self.log_emissions(obs);
        forward_from_log_emissions(&self.log_pi, &self.theta.a, &le, self.k())
    }

    /// Accumulates the gradient of `ln p(X | θ)` into `grad` and returns the
    /// log-likelihood.
    pub fn accumulate_gradient(&self, obs: &[f64], grad: &mut LogLikGradient) -> f64 {
        self.accumulate_gradient_with(obs, grad, &mut Vec::new())
    }

    /// [`Self::accumulate_gradient`] with a caller-owned scratch buffer, so a
    /// loop over many sequences allocates once.
    ///
    /// Uses scaled linear-space recursions: each emission row is divided by
    /// its largest entry (added back to the log-likelihood) and each forward
    /// message is normalized, so nothing underflows unless the likelihood
    /// itself is zero.
    pub fn accumulate_gradient_with(&self, obs: &[f64], grad: &mut LogLikGradient, scratch: &mut Vec<f64>) -> f64 {
        let k = self.k();
        let n = obs.len();
        let nk = n * k;
        let a = &self.theta.a;
        scratch.clear();
        scratch.resize(3 * nk + n + k, 0.0);
        let (e, rest) = scratch.split_at_mut(nk);
        let (alpha, rest) = rest.split_at_mut(nk);
        let (beta, rest) = rest.split_at_mut(nk);
        let (scale, ew) = rest.split_at_mut(n);

        let mut ll = 0.0;
        for (t, &x) in obs.iter().enumerate() {
            let row = &mut e[t * k..(t + 1) * k];
            let mut m = f64::NEG_INFINITY;
            for (s, v) in row.iter_mut().enumerate() {
                *v = self.log_emission(s, x);
                m = m.max(*v);
            }
            if m == f64::NEG_INFINITY {
                return m;
            }
            ll += m;
            row.iter_mut().for_each(|v| *v = (*v - m).exp());
        }

        for t in 0..n {
            let (done, cur) = alpha.split_at_mut(t * k);
            let cur = &mut cur[..k];
            if t == 0 {
                for j in 0..k {
                    cur[j] = self.theta.pi[j] * e[j];
                }
            } else {
                let prev = &done[(t - 1) * k..];
                cur.fill(0.0);
                for (i, &p) in prev.iter().enumerate() {
                    let row = &a[i * k..(i + 1) * k];
                    for j in 0..k {
                        cur[j] += p * row[j];
                    }
                }
                for j in 0..k {
                    cur[j] *= e[t * k + j];
                }
            }
            let c: f64 = cur.iter().sum();
            if !(c > 0.0 && c.is_finite()) {
                return f64::NEG_INFINITY;
            }
            cur.iter_mut().for_each(|v| *v /= c);
            scale[t] = c;
            ll += c.ln();
        }

        beta[(n - 1) * k..].fill(1.0);
        for t in (0..n - 1).rev() {
            for j in 0..k {
                ew[j] = e[(t + 1) * k + j] * beta[(t + 1) * k + j] / scale[t + 1];
            }
            for i in 0..k {
                let row = &a[i * k..(i + 1) * k];
                beta[t * k + i] = row.iter().zip(ew.iter()).map(|(x, y)| x * y).sum();
            }
            // d/dA_ij = Σ_n α_n(i) e_{n+1}(j) β_{n+1}(j) / p(X)
            for i in 0..k {
                let w = alpha[t * k + i];
                let row = &mut grad.d_a[i * k..(i + 1) * k];
                for j in 0..k {
                    row[j] += w * ew[j];
                }
            }
        }

        // d/dπ_k = p(X | z_1 = k) / p(X)
        for s in 0..k {
            grad.d_pi[s] += e[s] * beta[s] / scale[0];
        }

        // emission scores weighted by smoothed marginals
        for s in 0..k {
            let sd = self.theta.sigma[s];
            let mu = self.theta.mu[s];
            let (mut occupancy, mut resid_mu, mut resid_sigma) = (0.0, 0.0, 0.0);
            for t in 0..n {
                let g = alpha[t * k + s] * beta[t * k + s];
                let z = (obs[t] - mu) / sd;
                occupancy += g;
                resid_mu += g * z;
                resid_sigma += g * (z * z - 1.0);
            }
            let (gz_mu, gz_sigma) = self.emissions[s].log_normalizer_grad(&self.caches[s]);
            grad.d_mu[s] += resid_mu / sd - occupancy * gz_mu;
            grad.d_sigma[s] += resid_sigma / sd - occupancy * gz_sigma;
        }
        ll
    }

    #[inline]
    fn log_emission(&self, s: usize, x: f64) -> f64 {
        let e = &self.emissions[s];
        if x < e.lower || x > e.upper {
            return f64::NEG_INFINITY;
        }
        let z = (x - e.mu) / e.sigma;
        -0.5 * z * z - self.log_offsets[s]
    }
}

/// Forward recursion on a precomputed emission table (row-major `N × K`).
/// `a` is the linear-scale transition matrix.
pub fn forward_from_log_emissions(log_pi: &[f64], a: &[f64], log_e: &[f64], k: usize) -> LogForwardTable {
    let n = log_e.len() / k;
    let mut la = vec![0.0; n * k];
    for s in 0..k {
        la[s] = log_pi[s] + log_e[s];
    }
    let mut w = vec![0.0; k];
    let mut acc = vec![0.0; k];
    for t in 1..n {
        let (prev, cur) = la.split_at_mut(t * k);
        let prev = &prev[(t - 1) * k..];
        let m = prev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            cur[..k].iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            continue;
        }
        for j in 0..k {
            w[j] = (prev[j] - m).exp();
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..k {
            if w[j] == 0.0 {
                continue;
            }
            let row = &a[j * k..(j + 1) * k];
            for s in 0..k {
                acc[s] += w[j] * row[s];
            }
        }
        for s in 0..k {
            cur[s] = log_e[t * k + s] + m + acc[s].ln();
        }
    }
    let log_likelihood = log_sum_exp(&la[(n - 1) * k..]);
    LogForwardTable {
        k,
        log_alpha: la,
        log_likelihood,
    }
}

/// Backward messages `ln β_n(k) = ln p(x_{n+1..N} | z_n = k)`.
fn backward_from_log_emissions(a: &[f64], log_e: &[f64], k: usize) -> Vec<f64> {
    let n = log_e.len() / k;
    let mut lb = vec![0.0; n * k];
    let mut e = vec![0.0; k];
    for t in (0..n.saturating_sub(1)).rev() {
        let next = (t + 1) * k;
        let m = (0..k)
            .map(|j| log_e[next + j] + lb[next + j])
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            lb[t * k..next].iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            continue;
        }
        for j in 0..k {
            e[j] = (log_e[next + j] + lb[next + j] - m).exp();
        }
        for i in 0..k {
            let row = &a[i * k..(i + 1) * k];
            let s: f64 = row.iter().zip(&e).map(|(p, v)| p * v).sum();
            lb[t * k + i] = m + s.ln();
        }
    }
    lb
}

pub fn log_forward(obs: &ObservationSeq, theta: &HmmParams) -> Result<LogForwardTable> {
    Ok(PreparedHmm::new(theta)?.forward(obs.values()))
}

/// Sum of per-sequence log-likelihoods, accumulated in index order.
pub fn log_likelihood_batch(seqs: &[ObservationSeq], theta: &HmmParams) -> Result<f64> {
    let prepared = PreparedHmm::new(theta)?;
    Ok(seqs
        .iter()
        .map(|s| prepared.forward(s.values()).log_likelihood)
        .sum())
}

/// `p(z_{N+1} = k | X, θ)`.
pub fn predictive_mixture(obs: &ObservationSeq, theta: &HmmParams) -> Result<Vec<f64>> {
    let prepared = PreparedHmm::new(theta)?;
    let fwd = prepared.forward(obs.values());
    Ok(next_state_weights(&fwd, theta))
}

pub(crate) fn next_state_weights(fwd: &LogForwardTable, theta: &HmmParams) -> Vec<f64> {
    let k = theta.k;
    let last = fwd.row(fwd.n() - 1);
    let mut terms = vec![0.0; k];
    (0..k)
        .map(|s| {
            for j in 0..k {
                terms[j] = last[j] + theta.a(j, s).ln();
            }
            (log_sum_exp(&terms) - fwd.log_likelihood).exp()
        })
        .collect()
}

/// Mean and variance of the emission mixture `Σ_k w_k TN(μ_k, σ_k)`.
pub fn predictive_moments(w: &[f64], theta: &HmmParams) -> Result<(f64, f64)> {
    let mut mean = 0.0;
    let mut second = 0.0;
    for ((&wk, &m), &s) in w.iter().zip(&theta.mu).zip(&theta.sigma) {
        let (mk, vk) = tn_moments(&TruncNormal::new(m, s, RISK_FLOOR, RISK_CEIL)?)?;
        mean += wk * mk;
        second += wk * (vk + mk * mk);
    }
    Ok((mean, (second - mean * mean).max(0.0)))
}

/// Smoothed state marginals (`N × K`, row-major) and expected transition
/// counts (`K × K`).
#[derive(Debug, Clone, PartialEq)]
pub struct StateMarginals {
    pub gamma: Vec<f64>,
    pub xi: Vec<f64>,
}

pub fn state_marginals(obs: &ObservationSeq, theta: &HmmParams) -> Result<StateMarginals> {
    let prepared = PreparedHmm::new(theta)?;
    let k = theta.k;
    let x = obs.values();
    let le = prepared.log_emissions(x);
    let fwd = forward_from_log_emissions(&prepared.log_pi, &theta.a, &le, k);
    let lb = backward_from_log_emissions(&theta.a, &le, k);
    let ll = fwd.log_likelihood;
    let gamma = fwd
        .log_alpha
        .iter()
        .zip(&lb)
        .map(|(a, b)| (a + b - ll).exp())
        .collect();
    let mut xi = vec![0.0; k * k];
    for t in 0..x.len().saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                let v = fwd.log_alpha[t * k + i] + theta.a(i, j).ln() + le[(t + 1) * k + j]
                    + lb[(t + 1) * k + j]
                    - ll;
                xi[i * k + j] += v.exp();
            }
        }
    }
    Ok(StateMarginals { gamma, xi })
}

pub fn grad_loglik(obs: &ObservationSeq, theta: &HmmParams) -> Result<LogLikGradient> {
    let prepared = PreparedHmm::new(theta)?;
    let mut g = LogLikGradient::zeros(theta.k);
    prepared.accumulate_gradient(obs.values(), &mut g);
    Ok(g)
}

/// Log-likelihood without simplex validation; off-simplex `pi`/`a` evaluate
/// the polynomial extension of the likelihood. Used for finite differences.
pub fn log_likelihood_unchecked(obs: &[f64], theta: &HmmParams) -> Result<f64> {
    Ok(PreparedHmm::new_unchecked(theta)?.forward(obs).log_likelihood)
}
