//! Naive baseline, posterior-predictive forecasts and evaluation metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::hdi;
use crate::dists::{tn_moments, tn_sample, TruncNormal};
use crate::domain::{
    is_floor, Event, HmmParams, PosteriorDraws, Prediction, PredictionSource, RiskClass, HIGH_RISK_THRESHOLD,
    RISK_CEIL, RISK_FLOOR,
};
use crate::error::{Error, Result};
use crate::hmm::{next_state_weights, predictive_moments, PreparedHmm};
use crate::pipeline::{naive_forecast, VectorizedEvent, CUTOFF_DAYS, SLOTS_PER_DAY};

/// Reported in place of a ratio whose denominator is zero.
pub const UNDEFINED: f64 = -1.0;

const LOC_MIN: f64 = -1030.0;
const LOC_MAX: f64 = 1000.0;
const SCALE_MIN: f64 = 1e-8;
const SCALE_MAX: f64 = 1e3;

/// Risk of the last Cdm received before the cutoff.
pub fn naive_predict(event: &Event, cutoff: f64) -> Result<f64> {
    naive_forecast(event, cutoff)
}

/// Truncated normal on [−30, 0] fitted to a target mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedTn {
    pub dist: TruncNormal,
    /// False when the target moments lie outside what the family can reach
    /// and `dist` is only the closest fit.
    pub exact: bool,
}

fn moment_residual(x: [f64; 2], mean: f64, sd: f64) -> Option<[f64; 2]> {
    let d = TruncNormal::new(x[0], x[1].exp(), RISK_FLOOR, RISK_CEIL).ok()?;
    let (m, v) = tn_moments(&d).ok()?;
    let r = [(m - mean) / 30.0, (v.max(0.0).sqrt() - sd) / 30.0];
    r.iter().all(|v| v.is_finite()).then_some(r)
}

fn cost(r: &[f64; 2]) -> f64 {
    r[0] * r[0] + r[1] * r[1]
}

fn clamp_point(x: [f64; 2]) -> [f64; 2] {
    [x[0].clamp(LOC_MIN, LOC_MAX), x[1].clamp(SCALE_MIN.ln(), SCALE_MAX.ln())]
}

/// Levenberg–Marquardt on `(loc, ln scale)` so the truncated normal has the
/// given mean and standard deviation.
pub fn moment_match(mean: f64, variance: f64) -> Result<MatchedTn> {
    if !(RISK_FLOOR..=RISK_CEIL).contains(&mean) || !(variance >= 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "cannot match mean {mean} and variance {variance} on [-30, 0]"
        )));
    }
    let sd = variance.sqrt();
    let tol = 1e-11;
    let mut x = clamp_point([mean, sd.max(SCALE_MIN).ln()]);
    let mut r = moment_residual(x, mean, sd).ok_or_else(|| Error::InvalidDistribution("bad starting point".into()))?;
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..300 {
        if c < tol * tol {
            break;
        }
        let mut jac = [[0.0; 2]; 2];
        let mut ok = true;
        for j in 0..2 {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x;
            xp[j] += h;
            let Some(rp) = moment_residual(xp, mean, sd) else {
                ok = false;
                break;
            };
            for i in 0..2 {
                jac[i][j] = (rp[i] - r[i]) / h;
            }
        }
        if !ok {
            break;
        }
        // normal equations with diagonal damping
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for a in 0..2 {
            for b in 0..2 {
                jtj[a][b] = jac[0][a] * jac[0][b] + jac[1][a] * jac[1][b];
            }
            jtr[a] = jac[0][a] * r[0] + jac[1][a] * r[1];
        }
        let m00 = jtj[0][0] * (1.0 + lambda) + 1e-300;
        let m11 = jtj[1][1] * (1.0 + lambda) + 1e-300;
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if !det.is_finite() || det == 0.0 {
            lambda *= 10.0;
            continue;
        }
        let step = [
            -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det,
            -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det,
        ];
        let trial = clamp_point([x[0] + step[0], x[1] + step[1]]);
        match moment_residual(trial, mean, sd) {
            Some(rt) if cost(&rt) < c => {
                x = trial;
                r = rt;
                c = cost(&rt);
                lambda = (lambda * 0.3).max(1e-12);
            }
            _ => {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break;
                }
            }
        }
    }
    Ok(MatchedTn {
        dist: TruncNormal::new(x[0], x[1].exp(), RISK_FLOOR, RISK_CEIL)?,
        exact: c.sqrt() * 30.0 < 1e-6,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Parameter sets drawn (with replacement) from the pooled posterior.
    pub n_draws: usize,
    pub hdi_prob: f64,
    pub threshold: f64,
    /// Whole days before TCA after which messages are not used.
    pub cutoff_days: usize,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            n_draws: 400,
            hdi_prob: 0.95,
            threshold: HIGH_RISK_THRESHOLD,
            cutoff_days: CUTOFF_DAYS as usize,
            seed: 0,
        }
    }
}

/// RNG stream for one event: keyed by the seed, stream chosen by a hash of
/// the event id.
pub fn event_rng(seed: u64, event_id: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in event_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

/// One predictive sample per resampled posterior draw, from the truncated
/// normal matched to the one-step predictive mixture.
pub fn predictive_samples(input: &[f64], params: &[HmmParams], cfg: &PredictConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if params.is_empty() {
        return Err(Error::EmptyPosterior);
    }
    if input.is_empty() {
        return Err(Error::InvalidObservations("empty prediction input".into()));
    }
    let mut out = Vec::with_capacity(cfg.n_draws);
    for _ in 0..cfg.n_draws {
        let theta = &params[rng.random_range(0..params.len())];
        let prepared = PreparedHmm::new_unchecked(theta)?;
        let fwd = prepared.forward(input);
        let w = next_state_weights(&fwd, theta);
        let (mean, var) = predictive_moments(&w, theta)?;
        let matched = moment_match(mean.clamp(RISK_FLOOR, RISK_CEIL), var)?;
        out.push(tn_sample(&matched.dist, rng)?);
    }
    Ok(out)
}

/// Forecast of the final risk from the pre-cutoff slots.
pub fn hmm_predict(event: &VectorizedEvent, draws: &PosteriorDraws, cfg: &PredictConfig) -> Result<Prediction> {
    let mut rng = event_rng(cfg.seed, &event.event_id);
    let input = event.prefix(SLOTS_PER_DAY, cfg.cutoff_days);
    let samples = predictive_samples(input, &draws.params, cfg, &mut rng)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let (hdi_low, hdi_high) = hdi(&samples, cfg.hdi_prob)?;
    Ok(Prediction {
        event_id: event.event_id.clone(),
        mean_risk: mean.clamp(RISK_FLOOR, RISK_CEIL),
        variance,
        hdi_low,
        hdi_high,
        source: PredictionSource::Hmm,
        predicted_class: RiskClass::with_threshold(mean, cfg.threshold),
    })
}

/// [`hmm_predict`] for many events in parallel, returned in input order.
pub fn hmm_predict_all(events: &[VectorizedEvent], draws: &PosteriorDraws, cfg: &PredictConfig) -> Result<Vec<Prediction>> {
    events.par_iter().map(|e| hmm_predict(e, draws, cfg)).collect()
}

fn check_lengths(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch(preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(Error::InvalidObservations("no predictions to evaluate".into()));
    }
    Ok(())
}

/// `(rmse, mae)`.
pub fn regression_metrics(preds: &[f64], truths: &[f64]) -> Result<(f64, f64)> {
    check_lengths(preds, truths)?;
    let n = preds.len() as f64;
    let (sq, abs) = preds
        .iter()
        .zip(truths)
        .fold((0.0, 0.0), |(sq, abs), (p, t)| (sq + (p - t) * (p - t), abs + (p - t).abs()));
    Ok(((sq / n).sqrt(), abs / n))
}

/// Counts with the high-risk class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    /// Names of scores reported as [`UNDEFINED`].
    pub undefined: Vec<String>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

fn f_beta(beta: f64, p: Option<f64>, r: Option<f64>) -> Option<f64> {
    let (p, r) = (p?, r?);
    let b2 = beta * beta;
    ratio((1.0 + b2) * p * r, b2 * p + r)
}

impl ClassificationMetrics {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let tp = confusion.tp as f64;
        let precision = ratio(tp, tp + confusion.fp as f64);
        let recall = ratio(tp, tp + confusion.fn_ as f64);
        let scores = [
            ("precision", precision),
            ("recall", recall),
            ("f1", f_beta(1.0, precision, recall)),
            ("f2", f_beta(2.0, precision, recall)),
        ];
        let undefined = scores.iter().filter(|(_, v)| v.is_none()).map(|(n, _)| n.to_string()).collect();
        let [p, r, f1, f2] = scores.map(|(_, v)| v.unwrap_or(UNDEFINED));
        ClassificationMetrics {
            confusion,
            precision: p,
            recall: r,
            f1,
            f2,
            undefined,
        }
    }
}

pub fn confusion(preds: &[f64], truths: &[f64], threshold: f64) -> Result<Confusion> {
    check_lengths(preds, truths)?;
    let mut c = Confusion::default();
    for (&p, &t) in preds.iter().zip(truths) {
        let predicted = RiskClass::with_threshold(p, threshold) == RiskClass::High;
        let actual = RiskClass::with_threshold(t, threshold) == RiskClass::High;
        match (actual, predicted) {
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (true, true) => c.tp += 1,
        }
    }
    Ok(c)
}

pub fn classification_metrics(preds: &[f64], truths: &[f64], threshold: f64) -> Result<ClassificationMetrics> {
    Ok(ClassificationMetrics::from_confusion(confusion(preds, truths, threshold)?))
}

/// Events whose true risk is the floor but whose prediction is above it.
pub fn overprediction_count(preds: &[f64], truths: &[f64]) -> usize {
    preds
        .iter()
        .zip(truths)
        .filter(|(&p, &t)| is_floor(t) && p > RISK_FLOOR + 1e-9)
        .count()
}

/// `100 · (old − new) / old`; undefined when `old` is zero.
pub fn reduction_pct(old: usize, new: usize) -> Option<f64> {
    (old > 0).then(|| 100.0 * (old as f64 - new as f64) / old as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_events: usize,
    pub rmse: f64,
    pub mae: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub confusion: Confusion,
    pub n_overpredictions: usize,
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn compute(preds: &[f64], truths: &[f64], threshold: f64) -> Result<Self> {
        let (rmse, mae) = regression_metrics(preds, truths)?;
        let cls = classification_metrics(preds, truths, threshold)?;
        Ok(MetricsReport {
            n_events: preds.len(),
            rmse,
            mae,
            precision: cls.precision,
            recall: cls.recall,
            f1: cls.f1,
            f2: cls.f2,
            confusion: cls.confusion,
            n_overpredictions: overprediction_count(preds, truths),
            undefined: cls.undefined,
        })
    }
}

/// Model and baseline reports on the same events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub hmm: MetricsReport,
    pub naive: MetricsReport,
    /// Percentage drop in false positives from the baseline to the model.
    pub fp_reduction_pct: Option<f64>,
    pub overprediction_reduction_pct: Option<f64>,
}

impl Comparison {
    pub fn new(hmm: MetricsReport, naive: MetricsReport) -> Self {
        Comparison {
            fp_reduction_pct: reduction_pct(naive.confusion.fp, hmm.confusion.fp),
            overprediction_reduction_pct: reduction_pct(naive.n_overpredictions, hmm.n_overpredictions),
            hmm,
            naive,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Cdm;
    use crate::pipeline::vectorize;
    use approx::assert_abs_diff_eq;

    fn table_hmm() -> Confusion {
        Confusion {
            tn: 1406,
            fp: 33,
            fn_: 3,
            tp: 7,
        }
    }

    #[test]
    fn naive_uses_last_pre_cutoff() {
        let e = Event::new("e", vec![Cdm::new("e", 5.0, -12.0), Cdm::new("e", 3.0, -8.0), Cdm::new("e", 0.5, -30.0)]).unwrap();
        assert_eq!(naive_predict(&e, 2.0).unwrap(), -8.0);
        let single = Event::new("s", vec![Cdm::new("s", 4.0, -7.0), Cdm::new("s", 0.5, -1.0)]).unwrap();
        assert_eq!(naive_predict(&single, 2.0).unwrap(), -7.0);
    }

    #[test]
    fn regression_fixtures() {
        assert_eq!(regression_metrics(&[-3.0, -4.0], &[-3.0, -4.0]).unwrap(), (0.0, 0.0));
        let (rmse, mae) = regression_metrics(&[-1.0, -8.0, -20.0], &[-3.0, -10.0, -22.0]).unwrap();
        assert_abs_diff_eq!(rmse, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mae, 2.0, epsilon = 1e-12);
        let (rmse, mae) = regression_metrics(&[-30.0, -5.0], &[-28.0, -7.0]).unwrap();
        assert_eq!((rmse, mae), (2.0, 2.0));
        assert!(matches!(regression_metrics(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn table_confusions() {
        let m = ClassificationMetrics::from_confusion(table_hmm());
        assert_abs_diff_eq!(m.precision, 0.175, epsilon = 1e-12);
        assert_abs_diff_eq!(m.recall, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(m.f2, 0.4375, epsilon = 1e-12);
        let base = ClassificationMetrics::from_confusion(Confusion {
            tn: 1398,
            fp: 41,
            fn_: 3,
            tp: 7,
        });
        assert!((base.precision - 0.1458).abs() < 1e-4);
        assert_abs_diff_eq!(base.recall, 0.7, epsilon = 1e-12);
        assert!((reduction_pct(41, 33).unwrap() - 19.5).abs() < 0.1);
    }

    #[test]
    fn perfect_and_undefined_scores() {
        let truths = [-3.0, -20.0, -5.0, -30.0];
        let m = classification_metrics(&truths, &truths, -6.0).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.f2), (1.0, 1.0, 1.0, 1.0));
        assert!(m.undefined.is_empty());
        let low = [-20.0, -25.0];
        let m = classification_metrics(&low, &low, -6.0).unwrap();
        assert_eq!(m.precision, UNDEFINED);
        assert_eq!(m.undefined, ["precision", "recall", "f1", "f2"]);
    }

    #[test]
    fn threshold_is_inclusive_for_high() {
        let c = confusion(&[-6.0, -6.000001], &[-6.0, -6.0], -6.0).unwrap();
        assert_eq!(c, Confusion { tn: 0, fp: 0, fn_: 1, tp: 1 });
    }

    #[test]
    fn overpredictions() {
        assert_eq!(overprediction_count(&[-30.0; 3], &[-30.0; 3]), 0);
        assert_eq!(overprediction_count(&[-12.0, -30.0, -30.0], &[-30.0, -30.0, -10.0]), 1);
    }

    #[test]
    fn report_counts_sum() {
        let preds = [-3.0, -20.0, -5.0, -30.0, -29.0];
        let truths = [-4.0, -30.0, -25.0, -30.0, -2.0];
        let r = MetricsReport::compute(&preds, &truths, -6.0).unwrap();
        assert_eq!(r.confusion.total(), 5);
        assert_eq!(r.confusion, Confusion { tn: 2, fp: 1, fn_: 1, tp: 1 });
        assert_eq!(r.n_overpredictions, 1);
        let same = Comparison::new(r.clone(), r.clone());
        assert_eq!(same.hmm, same.naive);
        assert_eq!(same.fp_reduction_pct, Some(0.0));
    }

    #[test]
    fn moment_match_recovers_truncated_normals() {
        for &(loc, scale) in &[(-15.0, 4.0), (-28.0, 1.5), (-5.0, 1.0), (-2.0, 8.0), (3.0, 2.0), (-35.0, 3.0), (-10.0, 25.0)] {
            let d = TruncNormal::new(loc, scale, RISK_FLOOR, RISK_CEIL).unwrap();
            let (m, v) = tn_moments(&d).unwrap();
            let fit = moment_match(m, v).unwrap();
            assert!(fit.exact, "({loc}, {scale})");
            let (fm, fv) = tn_moments(&fit.dist).unwrap();
            assert!((fm - m).abs() < 1e-8 && (fv.sqrt() - v.sqrt()).abs() < 1e-8, "({loc}, {scale})");
            assert!((fit.dist.mu - loc).abs() < 1e-4 * loc.abs().max(1.0), "{} vs {loc}", fit.dist.mu);
        }
    }

    #[test]
    fn moment_match_infeasible_falls_back() {
        // two spikes at the ends: variance beyond any truncated normal
        let fit = moment_match(-15.0, 200.0).unwrap();
        assert!(!fit.exact);
        assert!(fit.dist.sigma <= SCALE_MAX);
        let (m, _) = tn_moments(&fit.dist).unwrap();
        assert!((m + 15.0).abs() < 1e-3);
    }

    fn one_state_draws(mu: f64, sigma: f64) -> PosteriorDraws {
        let p = HmmParams::new(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![mu, -2.0],
            vec![sigma, 1.0],
        )
        .unwrap();
        PosteriorDraws {
            params: vec![p],
            chain_id: vec![0],
            draw_index: vec![0],
            meta: Default::default(),
        }
    }

    fn fixture_event() -> VectorizedEvent {
        let cdms = (0..21).map(|i| Cdm::new("e", 6.9 - i as f64 / 3.0, -12.0)).collect();
        vectorize(&Event::new("e", cdms).unwrap(), 3, 7)
    }

    #[test]
    fn collapsed_posterior_predicts_emission_mean() {
        let draws = one_state_draws(-12.0, 3.0);
        let cfg = PredictConfig { seed: 5, ..Default::default() };
        let p = hmm_predict(&fixture_event(), &draws, &cfg).unwrap();
        let (m, v) = tn_moments(&TruncNormal::new(-12.0, 3.0, -30.0, 0.0).unwrap()).unwrap();
        assert!((p.mean_risk - m).abs() < 4.0 * (v / 400.0).sqrt(), "{} vs {m}", p.mean_risk);
        assert!(p.hdi_low <= p.mean_risk && p.mean_risk <= p.hdi_high);
        assert_eq!(p.source, PredictionSource::Hmm);
        assert_eq!(p, hmm_predict(&fixture_event(), &draws, &cfg).unwrap());
        let other = hmm_predict(&fixture_event(), &draws, &PredictConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(p.mean_risk, other.mean_risk);
    }

    #[test]
    fn empty_posterior_is_an_error() {
        let r = hmm_predict(&fixture_event(), &PosteriorDraws::default(), &PredictConfig::default());
        assert!(matches!(r, Err(Error::EmptyPosterior)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn predictions_stay_in_support(mu in -30.0f64..0.0, sigma in 0.2f64..10.0, seed in 0u64..1000) {
                let draws = one_state_draws(mu, sigma);
                let cfg = PredictConfig { n_draws: 60, seed, ..Default::default() };
                let p = hmm_predict(&fixture_event(), &draws, &cfg).unwrap();
                prop_assert!((RISK_FLOOR..=RISK_CEIL).contains(&p.mean_risk));
                prop_assert!(p.hdi_low >= RISK_FLOOR && p.hdi_high <= RISK_CEIL);
            }

            #[test]
            fn reductions_are_relative_change(old in 1usize..500, new in 0usize..500) {
                let r = reduction_pct(old, new).unwrap();
                prop_assert!((r / 100.0 - (old as f64 - new as f64) / old as f64).abs() < 1e-12);
            }

            #[test]
            fn class_decisions_survive_monotone_maps(xs in prop::collection::vec((-30.0f64..0.0, -30.0f64..0.0), 1..30)) {
                let (p, t): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
                // strictly increasing and fixes -6
                let g = |x: f64| -6.0 + (x + 6.0) * 0.5 + 0.01 * (x + 6.0).powi(3);
                let a = classification_metrics(&p, &t, -6.0).unwrap();
                let b = classification_metrics(
                    &p.iter().map(|&x| g(x)).collect::<Vec<_>>(),
                    &t.iter().map(|&x| g(x)).collect::<Vec<_>>(),
                    -6.0,
                ).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
