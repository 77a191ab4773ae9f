//! Convergence diagnostics, relabeling and highest-density intervals.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{HmmParams, PosteriorDraws};
use crate::error::{Error, Result};

pub const MIN_HDI_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
}

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::InsufficientDraws(format!("need at least 2 chains, got {}", chains.len())));
    }
    let n = chains[0].len();
    if n < 4 {
        return Err(Error::InsufficientDraws(format!("need at least 4 draws per chain, got {n}")));
    }
    if let Some(c) = chains.iter().find(|c| c.len() != n) {
        return Err(Error::InsufficientDraws(format!(
            "chains differ in length ({n} vs {})",
            c.len()
        )));
    }
    Ok(n)
}

/// Splits every chain into halves, dropping the middle draw of odd chains.
fn split_halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Between- and within-chain variances of equal-length sequences.
fn between_within(seqs: &[&[f64]]) -> (f64, f64) {
    let n = seqs[0].len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let b = n * sample_var(&means);
    let w = mean(&seqs.iter().map(|s| sample_var(s)).collect::<Vec<_>>());
    (b, w)
}

/// Split-chain potential scale reduction.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    let halves = split_halves(chains);
    let n = halves[0].len() as f64;
    let (b, w) = between_within(&halves);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok(((w * (n - 1.0) / n + b / n) / w).sqrt())
}

/// Biased autocovariance at lags `0..max_lag`.
fn autocov(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..max_lag.min(n))
        .map(|t| centered[..n - t].iter().zip(&centered[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Multi-chain effective sample size over split chains, with Geyer's
/// initial monotone sequence truncation. Capped at the total draw count;
/// a sequence with no variance reports 1.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    let halves = split_halves(chains);
    let m = halves.len() as f64;
    let n = halves[0].len();
    let nf = n as f64;
    let total = (chains.len() * chains[0].len()) as f64;
    let acov: Vec<Vec<f64>> = halves.iter().map(|h| autocov(h, n)).collect();
    let mean_var = acov.iter().map(|a| a[0]).sum::<f64>() / m * nf / (nf - 1.0);
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let var_plus = mean_var * (nf - 1.0) / nf + sample_var(&means);
    if !(var_plus > 0.0) || !var_plus.is_finite() {
        return Ok(1.0);
    }
    let rho = |t: usize| 1.0 - (mean_var - acov.iter().map(|a| a[t]).sum::<f64>() / m) / var_plus;

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if t == 0 {
            pair = 1.0 + rho(1);
        }
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    if !(tau > 0.0) {
        return Ok(total);
    }
    Ok((total / tau).clamp(1.0, total))
}

/// Shortest interval containing `⌈prob·n⌉` of the samples; ties go to the
/// lowest start.
pub fn hdi(samples: &[f64], prob: f64) -> Result<(f64, f64)> {
    if samples.len() < MIN_HDI_SAMPLES {
        return Err(Error::InsufficientDraws(format!(
            "hdi needs at least {MIN_HDI_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidConfig(format!("hdi probability {prob} not in (0, 1)")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = ((prob * n as f64).ceil() as usize).clamp(1, n);
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=n - m {
        let width = sorted[i + m - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + m - 1]))
}

/// Permutation that sorts `mu` ascending (stable on ties).
pub fn ascending_mu_order(theta: &HmmParams) -> Vec<usize> {
    let mut order: Vec<usize> = (0..theta.k).collect();
    order.sort_by(|&i, &j| theta.mu[i].total_cmp(&theta.mu[j]));
    order
}

pub fn relabel_one(theta: &HmmParams) -> HmmParams {
    let order = ascending_mu_order(theta);
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        theta.clone()
    } else {
        theta.permuted(&order)
    }
}

/// Sorts the states of every draw by ascending `mu`.
pub fn relabel(draws: PosteriorDraws) -> PosteriorDraws {
    PosteriorDraws {
        params: draws.params.iter().map(relabel_one).collect(),
        ..draws
    }
}

/// One summary row per parameter, in canonical order.
pub fn summarize(draws: &PosteriorDraws, prob: f64) -> Result<Vec<ParamSummary>> {
    let k = draws.k().ok_or(Error::EmptyPosterior)?;
    let names = HmmParams::param_names(k);
    let flats: Vec<Vec<f64>> = draws.params.iter().map(HmmParams::to_flat).collect();
    let n_chains = draws.n_chains();
    names
        .into_iter()
        .enumerate()
        .map(|(idx, name)| {
            let mut chains = vec![Vec::new(); n_chains];
            for (f, &c) in flats.iter().zip(&draws.chain_id) {
                chains[c].push(f[idx]);
            }
            let all: Vec<f64> = flats.iter().map(|f| f[idx]).collect();
            let mean_v = mean(&all);
            let sd = if all.len() > 1 { sample_var(&all).sqrt() } else { 0.0 };
            let (hdi_low, hdi_high) = hdi(&all, prob)?;
            Ok(ParamSummary {
                name,
                mean: mean_v,
                sd,
                // sampling noise can put the raw ratio a hair under 1
                rhat: split_rhat(&chains)?.max(1.0),
                ess_bulk: ess(&chains)?,
                hdi_low,
                hdi_high,
            })
        })
        .collect()
}

pub fn write_summary_csv(rows: &[ParamSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(rows: &[ParamSummary], mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{log_likelihood_batch, ObservationSeq};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_chains(seed: u64, m: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn distinct_constant_chains_have_huge_rhat() {
        let r = split_rhat(&[vec![1.0; 100], vec![2.0; 100]]).unwrap();
        assert!(r > 2.0);
    }

    #[test]
    fn iid_chains_have_rhat_near_one() {
        let r = split_rhat(&normal_chains(1, 4, 1000)).unwrap();
        assert!(r < 1.01, "{r}");
    }

    #[test]
    fn trending_chain_is_detected() {
        let ramp: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert!(split_rhat(&[ramp.clone(), ramp]).unwrap() > 1.1);
    }

    #[test]
    fn duplicated_stationary_chain() {
        let c = normal_chains(2, 1, 2000).remove(0);
        let r = split_rhat(&[c.clone(), c]).unwrap();
        assert!(r < 1.01, "{r}");
    }

    #[test]
    fn rhat_is_affine_invariant() {
        let chains = normal_chains(3, 3, 300);
        let scaled: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| 3.5 * v - 7.0).collect()).collect();
        assert_abs_diff_eq!(split_rhat(&chains).unwrap(), split_rhat(&scaled).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn preconditions_are_enforced() {
        assert!(matches!(split_rhat(&[vec![1.0; 10]]), Err(Error::InsufficientDraws(_))));
        assert!(matches!(split_rhat(&[vec![1.0; 3], vec![1.0; 3]]), Err(Error::InsufficientDraws(_))));
        assert!(matches!(ess(&[vec![1.0; 10], vec![1.0; 9]]), Err(Error::InsufficientDraws(_))));
    }

    #[test]
    fn iid_ess_near_total() {
        let e = ess(&normal_chains(4, 4, 1000)).unwrap();
        assert!((0.75 * 4000.0..=1.25 * 4000.0).contains(&e), "{e}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi: f64 = 0.9;
        let n = 20_000;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
                (0..n)
                    .map(|_| {
                        x = phi * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let expected = 4.0 * n as f64 * (1.0 - phi) / (1.0 + phi);
        let e = ess(&chains).unwrap();
        assert!((e / expected - 1.0).abs() < 0.3, "{e} vs {expected}");
    }

    #[test]
    fn constant_chain_ess_is_sentinel() {
        assert_eq!(ess(&[vec![4.0; 50], vec![4.0; 50]]).unwrap(), 1.0);
    }

    #[test]
    fn hdi_uniform_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = hdi(&xs, 0.95).unwrap();
        assert!(((hi - lo) - 0.95).abs() < 0.02);
    }

    #[test]
    fn hdi_normal_quantiles() {
        let xs = normal_chains(7, 1, 100_000).remove(0);
        let (lo, hi) = hdi(&xs, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.05 && (hi - 1.96).abs() < 0.05, "({lo}, {hi})");
    }

    #[test]
    fn hdi_degenerate_and_errors() {
        assert_eq!(hdi(&[2.5; 60], 0.95).unwrap(), (2.5, 2.5));
        assert!(matches!(hdi(&[1.0; 49], 0.95), Err(Error::InsufficientDraws(_))));
        assert!(hdi(&[1.0; 60], 1.0).is_err());
    }

    #[test]
    fn hdi_width_shrinks_with_prob() {
        let xs = normal_chains(8, 1, 5000).remove(0);
        let mut last = f64::INFINITY;
        for prob in [0.99, 0.95, 0.9, 0.8, 0.5, 0.2] {
            let (lo, hi) = hdi(&xs, prob).unwrap();
            assert!(hi - lo <= last);
            last = hi - lo;
        }
    }

    fn unsorted_draw() -> HmmParams {
        HmmParams::new(
            vec![0.2, 0.3, 0.5],
            vec![vec![0.1, 0.2, 0.7], vec![0.3, 0.3, 0.4], vec![0.6, 0.1, 0.3]],
            vec![-5.0, -20.0, -12.0],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap()
    }

    #[test]
    fn relabel_sorts_all_blocks() {
        let r = relabel_one(&unsorted_draw());
        assert_eq!(r.mu, vec![-20.0, -12.0, -5.0]);
        assert_eq!(r.sigma, vec![2.0, 3.0, 1.0]);
        assert_eq!(r.pi, vec![0.3, 0.5, 0.2]);
        assert_eq!(r.a_row(0), &[0.3, 0.4, 0.3]);
        assert_eq!(r.a_row(1), &[0.1, 0.3, 0.6]);
        assert_eq!(r.a_row(2), &[0.2, 0.7, 0.1]);
        assert_eq!(relabel_one(&r), r);
    }

    #[test]
    fn relabel_preserves_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<ObservationSeq> = (0..5)
            .map(|_| ObservationSeq::new((0..12).map(|_| rng.random_range(-30.0..0.0)).collect()).unwrap())
            .collect();
        let p = unsorted_draw();
        let before = log_likelihood_batch(&data, &p).unwrap();
        let after = log_likelihood_batch(&data, &relabel_one(&p)).unwrap();
        assert!((before - after).abs() <= 1e-12 * before.abs().max(1.0));
    }

    #[test]
    fn relabel_is_idempotent_on_draws() {
        let d = PosteriorDraws {
            params: vec![unsorted_draw(); 3],
            chain_id: vec![0, 0, 1],
            draw_index: vec![0, 1, 0],
            meta: Default::default(),
        };
        let once = relabel(d);
        let twice = relabel(once.clone());
        assert_eq!(once.params, twice.params);
        assert_eq!(once.chain_id, twice.chain_id);
    }

    #[test]
    fn summary_covers_each_parameter_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let base = relabel_one(&unsorted_draw());
        let mut params = Vec::new();
        let mut chain_id = Vec::new();
        for c in 0..2 {
            for _ in 0..100 {
                let mut p = base.clone();
                p.mu.iter_mut().for_each(|m| *m += rng.random_range(-0.1..0.1));
                params.push(p);
                chain_id.push(c);
            }
        }
        let d = PosteriorDraws {
            draw_index: (0..200).map(|i| i % 100).collect(),
            params,
            chain_id,
            meta: Default::default(),
        };
        let rows = summarize(&d, 0.95).unwrap();
        assert_eq!(rows.len(), HmmParams::flat_len(3));
        let names: std::collections::BTreeSet<_> = rows.iter().map(|r| r.name.clone()).collect();
        assert_eq!(names.len(), rows.len());
        for r in &rows {
            assert!(r.ess_bulk <= 200.0);
            assert!(r.hdi_low - 1e-12 <= r.mean && r.mean <= r.hdi_high + 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary_csv(&rows, &path).unwrap();
        let mut rd = csv::Reader::from_path(&path).unwrap();
        let back: Vec<ParamSummary> = rd.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(back.len(), rows.len());
    }
}
