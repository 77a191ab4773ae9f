//! Fitting the HMM posterior and choosing the number of states by
//! cross-validation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{relabel, summarize, ParamSummary};
use crate::domain::{HmmParams, PosteriorDraws, PosteriorMeta};
use crate::error::{Error, Result};
use crate::evaluation::{hmm_predict_all, MetricsReport, PredictConfig, UNDEFINED};
use crate::hmm::ObservationSeq;
use crate::pipeline::{stratified_kfold, VectorizedEvent};
use crate::reparam::{to_constrained, LogPosterior, PriorConstants, PriorSpec};
use crate::sampler::{run_chains, ChainResult, SamplerConfig};

/// Per-chain sampler statistics kept alongside the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub chain_id: usize,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub step_size: f64,
    pub accept_stat: f64,
    pub treedepth_hist: Vec<usize>,
}

impl From<&ChainResult> for ChainStats {
    fn from(c: &ChainResult) -> Self {
        ChainStats {
            chain_id: c.chain_id,
            divergences: c.divergences,
            warmup_divergences: c.warmup_divergences,
            step_size: c.step_size,
            accept_stat: c.accept_stat,
            treedepth_hist: c.treedepth_hist.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub draws: PosteriorDraws,
    pub chains: Vec<ChainStats>,
    /// Absent when there are too few chains or draws to diagnose.
    pub summary: Option<Vec<ParamSummary>>,
}

impl Fit {
    pub fn max_rhat(&self) -> Option<f64> {
        self.summary
            .as_ref()
            .map(|s| s.iter().map(|p| p.rhat).fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Samples the posterior of a `prior.k`-state model, maps the draws back to
/// parameters and sorts every draw's states by `mu`.
pub fn fit(data: Vec<ObservationSeq>, prior: PriorSpec, config: &SamplerConfig) -> Result<Fit> {
    let k = prior.k;
    let target = LogPosterior::new(data, prior);
    let chains = run_chains(&target, config)?;
    let mut draws = PosteriorDraws::default();
    for c in &chains {
        for (i, z) in c.draws.iter().enumerate() {
            draws.params.push(to_constrained(z, k)?.0);
            draws.chain_id.push(c.chain_id);
            draws.draw_index.push(i);
        }
    }
    let mut draws = relabel(draws);
    let summary = match summarize(&draws, 0.95) {
        Ok(s) => Some(s),
        Err(Error::InsufficientDraws(_)) => None,
        Err(e) => return Err(e),
    };
    draws.meta = PosteriorMeta {
        sampler: config.clone(),
        divergences: chains.iter().map(|c| c.divergences).sum(),
        rhat: summary_map(summary.as_deref(), |p| p.rhat),
        ess: summary_map(summary.as_deref(), |p| p.ess_bulk),
    };
    Ok(Fit {
        draws,
        chains: chains.iter().map(ChainStats::from).collect(),
        summary,
    })
}

fn summary_map(summary: Option<&[ParamSummary]>, f: impl Fn(&ParamSummary) -> f64) -> BTreeMap<String, f64> {
    summary
        .unwrap_or_default()
        .iter()
        .map(|p| (p.name.clone(), f(p)))
        .collect()
}

/// Full 21-slot grids as observation sequences.
pub fn training_sequences<'a>(events: impl IntoIterator<Item = &'a VectorizedEvent>) -> Result<Vec<ObservationSeq>> {
    events.into_iter().map(|e| ObservationSeq::new(e.grid.clone())).collect()
}

/// Draws as CSV: `chain,draw`, then one column per parameter in canonical order.
pub fn write_draws_csv(draws: &PosteriorDraws, path: &Path) -> Result<()> {
    let k = draws.k().ok_or(Error::EmptyPosterior)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(HmmParams::param_names(k));
    w.write_record(&header)?;
    for ((p, c), d) in draws.params.iter().zip(&draws.chain_id).zip(&draws.draw_index) {
        let mut row = vec![c.to_string(), d.to_string()];
        row.extend(p.to_flat().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws_csv(path: &Path) -> Result<PosteriorDraws> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let n_params = header.len().saturating_sub(2);
    let k = (1..=64)
        .find(|&k| HmmParams::flat_len(k) == n_params)
        .ok_or_else(|| Error::InvalidObservations(format!("{n_params} parameter columns match no state count")))?;
    let expected = HmmParams::param_names(k);
    if header.iter().skip(2).ne(expected.iter().map(String::as_str)) || &header[0] != "chain" || &header[1] != "draw" {
        return Err(Error::InvalidObservations("unexpected draws header".into()));
    }
    let mut draws = PosteriorDraws::default();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidObservations(format!("bad number `{s}` in draws")))
        };
        let chain = rec[0].parse().map_err(|_| Error::InvalidObservations("bad chain id".into()))?;
        let draw = rec[1].parse().map_err(|_| Error::InvalidObservations("bad draw index".into()))?;
        let flat = rec.iter().skip(2).map(parse).collect::<Result<Vec<_>>>()?;
        draws.params.push(HmmParams::from_flat(k, &flat)?);
        draws.chain_id.push(chain);
        draws.draw_index.push(draw);
    }
    Ok(draws)
}

/// Metrics of one held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub k: usize,
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rmse: f64,
    pub mae: f64,
    pub f2: f64,
    pub max_rhat: f64,
    pub divergences: usize,
}

/// Metrics over the pooled held-out predictions of every fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAggregate {
    pub k: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub rows: Vec<CvRow>,
    pub aggregates: Vec<CvAggregate>,
    pub selected_k: usize,
}

#[derive(Debug, Clone)]
pub struct CvSettings {
    pub k_values: Vec<usize>,
    pub n_folds: usize,
    pub sampler: SamplerConfig,
    pub predict: PredictConfig,
    pub prior: PriorConstants,
    pub fold_seed: u64,
}

/// Best pooled F2; ties go to the lower RMSE, then the smaller K. An
/// undefined F2 ranks below every defined one.
pub fn select_k(aggregates: &[CvAggregate]) -> Option<usize> {
    aggregates
        .iter()
        .min_by(|a, b| {
            let fa = if a.report.f2 == UNDEFINED { f64::NEG_INFINITY } else { a.report.f2 };
            let fb = if b.report.f2 == UNDEFINED { f64::NEG_INFINITY } else { b.report.f2 };
            fb.total_cmp(&fa)
                .then(a.report.rmse.total_cmp(&b.report.rmse))
                .then(a.k.cmp(&b.k))
        })
        .map(|a| a.k)
}

/// Stratified k-fold cross-validation of each candidate state count.
/// `on_fold` is called after every fitted fold.
pub fn cross_validate(events: &[VectorizedEvent], s: &CvSettings, mut on_fold: impl FnMut(&CvRow)) -> Result<CvOutcome> {
    if s.k_values.is_empty() {
        return Err(Error::InvalidConfig("empty K range".into()));
    }
    let folds = stratified_kfold(events, s.n_folds, s.fold_seed)?;
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for &k in &s.k_values {
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        for fold in 0..s.n_folds {
            let (test, train): (Vec<_>, Vec<_>) = events.iter().zip(&folds).partition(|(_, &f)| f == fold);
            let test: Vec<VectorizedEvent> = test.into_iter().map(|(e, _)| e.clone()).collect();
            let train: Vec<&VectorizedEvent> = train.into_iter().map(|(e, _)| e).collect();
            if test.is_empty() || train.is_empty() {
                continue;
            }
            let sampler = SamplerConfig {
                seed: s.sampler.seed.wrapping_add((k * 1000 + fold) as u64),
                ..s.sampler.clone()
            };
            let fitted = fit(training_sequences(train.iter().copied())?, s.prior.spec(k), &sampler)?;
            let predictions = hmm_predict_all(&test, &fitted.draws, &s.predict)?;
            let p: Vec<f64> = predictions.iter().map(|p| p.mean_risk).collect();
            let t: Vec<f64> = test.iter().map(|e| e.label_risk).collect();
            let report = MetricsReport::compute(&p, &t, s.predict.threshold)?;
            let row = CvRow {
                k,
                fold,
                n_train: train.len(),
                n_test: test.len(),
                rmse: report.rmse,
                mae: report.mae,
                f2: report.f2,
                max_rhat: fitted.max_rhat().unwrap_or(f64::NAN),
                divergences: fitted.draws.meta.divergences,
            };
            on_fold(&row);
            rows.push(row);
            preds.extend(p);
            truths.extend(t);
        }
        aggregates.push(CvAggregate {
            k,
            report: MetricsReport::compute(&preds, &truths, s.predict.threshold)?,
        });
    }
    let selected_k = select_k(&aggregates).expect("at least one K was evaluated");
    Ok(CvOutcome {
        rows,
        aggregates,
        selected_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::Confusion;

    fn agg(k: usize, f2: f64, rmse: f64) -> CvAggregate {
        CvAggregate {
            k,
            report: MetricsReport {
                n_events: 10,
                rmse,
                mae: rmse,
                precision: 0.5,
                recall: 0.5,
                f1: 0.5,
                f2,
                confusion: Confusion::default(),
                n_overpredictions: 0,
                undefined: Vec::new(),
            },
        }
    }

    #[test]
    fn selection_order() {
        assert_eq!(select_k(&[agg(4, 0.3, 2.0), agg(5, 0.4, 3.0)]), Some(5));
        assert_eq!(select_k(&[agg(4, 0.4, 2.0), agg(5, 0.4, 1.0)]), Some(5));
        assert_eq!(select_k(&[agg(6, 0.4, 1.0), agg(5, 0.4, 1.0)]), Some(5));
        assert_eq!(select_k(&[agg(4, UNDEFINED, 1.0), agg(5, 0.0, 9.0)]), Some(5));
        assert_eq!(select_k(&[agg(7, UNDEFINED, 1.0)]), Some(7));
        assert_eq!(select_k(&[]), None);
    }

    #[test]
    fn draws_csv_round_trip() {
        let p = crate::synth::default_truth();
        let draws = PosteriorDraws {
            params: vec![p.clone(), p],
            chain_id: vec![0, 1],
            draw_index: vec![0, 0],
            meta: Default::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_draws_csv(&draws, &path).unwrap();
        let back = read_draws_csv(&path).unwrap();
        assert_eq!(back.params, draws.params);
        assert_eq!(back.chain_id, draws.chain_id);
    }
}
