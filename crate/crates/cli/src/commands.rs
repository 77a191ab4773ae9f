//! One function per subcommand. Each reads its inputs from the config and
//! the output directory and writes its artifacts there.

use std::collections::{BTreeMap, BTreeSet};

use cdm_hmm::diagnostics::{write_summary_csv, ParamSummary};
use cdm_hmm::domain::{group_events, Event, HmmParams, Prediction, RiskClass};
use cdm_hmm::evaluation::{Comparison, MetricsReport};
use cdm_hmm::pipeline::{
    apply_event_constraints, clean, ingest_csv, naive_forecast, read_vectorized_csv, select, shortcut_partition,
    stratified_split, vectorize, write_cdms_csv, write_removals_csv, SplitResult, VectorizedEvent, N_DAYS,
    SLOTS_PER_DAY,
};
use cdm_hmm::posterior::{cross_validate, fit, read_draws_csv, training_sequences, write_draws_csv, ChainStats, CvOutcome, CvSettings};
use cdm_hmm::reparam::PriorConstants;
use cdm_hmm::sampler::SamplerConfig;
use cdm_hmm::{synth, Error};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::RunConfig;
use crate::exit::{CliError, CliResult, ExitKind};

/// Fits whose largest R-hat reaches this are not reported as converged.
pub const CONVERGED_RHAT: f64 = 1.05;

#[derive(Debug, Serialize)]
struct PrepareSummary {
    n_rows: usize,
    n_row_rejections: usize,
    n_clamped: usize,
    n_cdms_kept: usize,
    n_cdms_removed: usize,
    n_events: usize,
    n_events_rejected: usize,
    n_valid_events: usize,
    n_model_events: usize,
    n_shortcut_events: usize,
    n_high_risk: usize,
    n_train: usize,
    n_test: usize,
}

#[derive(Debug, Serialize)]
struct ShortcutRow<'a> {
    event_id: &'a str,
    naive_risk: f64,
    label_risk: f64,
}

pub fn prepare(cfg: &RunConfig) -> CliResult<()> {
    let input = cfg
        .data
        .input
        .as_deref()
        .ok_or_else(|| CliError::config("data.input is required by prepare"))?;
    let out = OutDir::create(&cfg.output.dir)?;
    let ingested = ingest_csv(input, &cfg.data.schema).map_err(|e| CliError::from(e).context(input.display()))?;
    let n_rows = ingested.cdms.len() + ingested.rejections.len();
    let (kept, removed) = clean(ingested.cdms, &cfg.data.cleaning);
    let n_cdms_kept = kept.len();
    let grouped = group_events(kept.clone());
    let n_events = grouped.len();
    let (valid, event_rejections) = apply_event_constraints(grouped);

    let cutoff = cfg.cutoff();
    let mut rows = valid
        .iter()
        .map(|e| {
            Ok(EventRow {
                event_id: e.event_id.clone(),
                n_cdms: e.cdms.len(),
                label_risk: e.label_risk,
                class: e.risk_class,
                naive_risk: naive_forecast(e, cutoff)?,
                shortcut: false,
            })
        })
        .collect::<cdm_hmm::Result<Vec<_>>>()?;
    let split = stratified_split(&valid, cfg.data.test_fraction, cfg.data.split_seed)?;
    let (model, shortcut) = shortcut_partition(valid, cutoff)?;
    let shortcut_ids: BTreeSet<&str> = shortcut.iter().map(|e| e.event_id.as_str()).collect();
    for row in &mut rows {
        row.shortcut = shortcut_ids.contains(row.event_id.as_str());
    }
    let vectorized: Vec<VectorizedEvent> = model.iter().map(|e| vectorize(e, SLOTS_PER_DAY, N_DAYS)).collect();
    let shortcut_rows: Vec<ShortcutRow> = rows
        .iter()
        .filter(|r| r.shortcut)
        .map(|r| ShortcutRow {
            event_id: &r.event_id,
            naive_risk: r.naive_risk,
            label_risk: r.label_risk,
        })
        .collect();

    out.write_with(CLEANED_CDMS, |p| write_cdms_csv(&kept, p))?;
    out.write_with(REMOVED_CDMS, |p| write_removals_csv(&removed, p))?;
    out.write_csv(ROW_REJECTIONS, &["row", "event_id", "reason"], &ingested.rejections)?;
    out.write_csv(EVENT_REJECTIONS, &["event_id", "n_cdms", "reason"], &event_rejections)?;
    out.write_csv(EVENTS, &["event_id", "n_cdms", "label_risk", "class", "naive_risk", "shortcut"], &rows)?;
    out.write_with(VECTORIZED, |p| cdm_hmm::pipeline::write_vectorized_csv(&vectorized, p))?;
    out.write_json(SPLIT, &split)?;
    out.write_csv(SHORTCUT_EVENTS, &["event_id", "naive_risk", "label_risk"], &shortcut_rows)?;

    let summary = PrepareSummary {
        n_rows,
        n_row_rejections: ingested.rejections.len(),
        n_clamped: ingested.n_clamped,
        n_cdms_kept,
        n_cdms_removed: removed.len(),
        n_events,
        n_events_rejected: event_rejections.len(),
        n_valid_events: rows.len(),
        n_model_events: vectorized.len(),
        n_shortcut_events: shortcut_rows.len(),
        n_high_risk: rows.iter().filter(|r| r.class == RiskClass::High).count(),
        n_train: split.train.len(),
        n_test: split.test.len(),
    };
    out.write_json(PREPARE_SUMMARY, &summary)?;
    println!("rows read          {}", summary.n_rows);
    println!("rows rejected      {}", summary.n_row_rejections);
    println!("risks clamped      {}", summary.n_clamped);
    println!("cdms removed       {}", summary.n_cdms_removed);
    println!("events rejected    {} of {}", summary.n_events_rejected, summary.n_events);
    println!("valid events       {} ({} high risk)", summary.n_valid_events, summary.n_high_risk);
    println!("model events       {}", summary.n_model_events);
    println!("shortcut events    {}", summary.n_shortcut_events);
    println!("train / test       {} / {}", summary.n_train, summary.n_test);
    Ok(())
}

/// Vectorized events of the training split.
fn training_events(out: &OutDir) -> CliResult<Vec<VectorizedEvent>> {
    let split: SplitResult = out.read_json(SPLIT, "prepare")?;
    let vectorized = read_vectorized_csv(&out.require(VECTORIZED, "prepare")?)?;
    Ok(select(&vectorized, &split.train).into_iter().cloned().collect())
}

pub fn cv(cfg: &RunConfig) -> CliResult<()> {
    let out = OutDir::open(&cfg.output.dir);
    let train = training_events(&out)?;
    if train.is_empty() {
        return Err(CliError::new(ExitKind::Data, "no model events in the training split"));
    }
    let settings = CvSettings {
        k_values: cfg.k_values(),
        n_folds: cfg.model.cv_folds,
        sampler: cfg.sampler.with_chains(cfg.sampler.cv_chains),
        predict: cfg.predict_config(),
        prior: cfg.model.prior,
        fold_seed: cfg.data.split_seed,
    };
    let outcome = cross_validate(&train, &settings, |row| {
        info!(
            "K={} fold {}: rmse {:.3} f2 {:.3} max R-hat {:.3} divergences {}",
            row.k, row.fold, row.rmse, row.f2, row.max_rhat, row.divergences
        );
    })?;
    out.write_csv(
        CV_FOLDS,
        &["k", "fold", "n_train", "n_test", "rmse", "mae", "f2", "max_rhat", "divergences"],
        &outcome.rows,
    )?;
    out.write_json(CV_SUMMARY, &outcome)?;
    println!("{:>3} {:>9} {:>9} {:>7}", "K", "rmse", "mae", "f2");
    for a in &outcome.aggregates {
        println!("{:>3} {:>9.4} {:>9.4} {:>7.4}", a.k, a.report.rmse, a.report.mae, a.report.f2);
    }
    println!("selected K = {}", outcome.selected_k);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub k: usize,
    /// `converged`, `warning` (some R-hat at or above the gate),
    /// `undiagnosed` (too few chains or draws) or `all_divergent`.
    pub status: String,
    pub converged: bool,
    pub max_rhat: Option<f64>,
    pub rhat_gate: f64,
    pub divergences: usize,
    pub n_train_events: usize,
    pub n_draws: usize,
    pub sampler: SamplerConfig,
    pub prior: PriorConstants,
    pub chains: Vec<ChainStats>,
    pub parameters: Vec<ParamSummary>,
    pub error: Option<String>,
}

fn chosen_k(cfg: &RunConfig, out: &OutDir) -> CliResult<usize> {
    if let Some(k) = cfg.model.k {
        return Ok(k);
    }
    let summary: CvOutcome = out.read_json(CV_SUMMARY, "cv").map_err(|e| match e.kind {
        ExitKind::MissingArtifact => e.context("model.k is unset and no CV selection exists"),
        _ => e,
    })?;
    Ok(summary.selected_k)
}

pub fn fit_cmd(cfg: &RunConfig) -> CliResult<()> {
    let out = OutDir::open(&cfg.output.dir);
    let k = chosen_k(cfg, &out)?;
    let train = training_events(&out)?;
    if train.is_empty() {
        return Err(CliError::new(ExitKind::Data, "no model events in the training split"));
    }
    let sampler = cfg.sampler.with_chains(cfg.sampler.final_chains);
    let mut diag = FitDiagnostics {
        k,
        status: String::new(),
        converged: false,
        max_rhat: None,
        rhat_gate: CONVERGED_RHAT,
        divergences: 0,
        n_train_events: train.len(),
        n_draws: 0,
        sampler: sampler.clone(),
        prior: cfg.model.prior,
        chains: Vec::new(),
        parameters: Vec::new(),
        error: None,
    };
    info!("fitting K={k} on {} events with {} chains", train.len(), sampler.n_chains);
    let fitted = match fit(training_sequences(&train)?, cfg.model.prior.spec(k), &sampler) {
        Ok(f) => f,
        Err(e @ Error::AllDivergent { .. }) => {
            diag.status = "all_divergent".into();
            diag.error = Some(e.to_string());
            out.write_json(DIAGNOSTICS, &diag)?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    diag.max_rhat = fitted.max_rhat();
    diag.status = match diag.max_rhat {
        Some(r) if r < CONVERGED_RHAT => "converged",
        Some(_) => "warning",
        None => "undiagnosed",
    }
    .into();
    diag.converged = diag.status == "converged";
    diag.divergences = fitted.draws.meta.divergences;
    diag.n_draws = fitted.draws.len();
    diag.chains = fitted.chains.clone();
    diag.parameters = fitted.summary.clone().unwrap_or_default();

    out.write_with(DRAWS, |p| write_draws_csv(&fitted.draws, p))?;
    if let Some(summary) = &fitted.summary {
        out.write_with(POSTERIOR_SUMMARY, |p| write_summary_csv(summary, p))?;
    }
    out.write_json(DIAGNOSTICS, &diag)?;
    match diag.max_rhat {
        Some(r) if !diag.converged => warn!("max R-hat {r:.4} is at or above {CONVERGED_RHAT}"),
        None => warn!("too few chains or draws to compute R-hat"),
        _ => {}
    }
    println!(
        "K={k}: {} draws, {} divergences, max R-hat {}, status {}",
        diag.n_draws,
        diag.divergences,
        diag.max_rhat.map_or("n/a".to_string(), |r| format!("{r:.4}")),
        diag.status
    );
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> CliResult<()> {
    let out = OutDir::open(&cfg.output.dir);
    let split: SplitResult = out.read_json(SPLIT, "prepare")?;
    let rows: Vec<EventRow> = out.read_csv(EVENTS, "prepare")?;
    let test_ids: BTreeSet<&str> = split.test.iter().map(String::as_str).collect();
    let test_rows: Vec<&EventRow> = rows.iter().filter(|r| test_ids.contains(r.event_id.as_str())).collect();
    if test_rows.len() != test_ids.len() {
        return Err(CliError::new(ExitKind::Data, "split lists test events missing from the event table"));
    }
    let mut predictions: Vec<Prediction> = test_rows
        .iter()
        .filter(|r| r.shortcut)
        .map(|r| Prediction::shortcut(r.event_id.clone()))
        .collect();
    let model_ids: Vec<String> = test_rows.iter().filter(|r| !r.shortcut).map(|r| r.event_id.clone()).collect();
    if !model_ids.is_empty() {
        let vectorized = read_vectorized_csv(&out.require(VECTORIZED, "prepare")?)?;
        let model_events: Vec<VectorizedEvent> = select(&vectorized, &model_ids).into_iter().cloned().collect();
        if model_events.len() != model_ids.len() {
            return Err(CliError::new(ExitKind::Data, "vectorized table lacks some model test events"));
        }
        let draws = read_draws_csv(&out.require(DRAWS, "fit")?)?;
        info!("predicting {} events from {} posterior draws", model_events.len(), draws.len());
        predictions.extend(cdm_hmm::evaluation::hmm_predict_all(&model_events, &draws, &cfg.predict_config())?);
    }
    predictions.sort_by(|a, b| a.event_id.cmp(&b.event_id));
    out.write_csv(
        PREDICTIONS,
        &["event_id", "mean_risk", "variance", "hdi_low", "hdi_high", "source", "predicted_class"],
        &predictions,
    )?;
    println!(
        "{} predictions ({} model, {} shortcut)",
        predictions.len(),
        model_ids.len(),
        predictions.len() - model_ids.len()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub threshold: f64,
    pub n_shortcut: usize,
    #[serde(flatten)]
    pub comparison: Comparison,
}

#[derive(Debug, Serialize)]
struct PairRow<'a> {
    event_id: &'a str,
    true_risk: f64,
    hmm_risk: f64,
    naive_risk: f64,
    source: &'a str,
}

#[derive(Debug, Serialize)]
struct HdiRow<'a> {
    event_id: &'a str,
    true_risk: f64,
    mean_risk: f64,
    hdi_low: f64,
    hdi_high: f64,
    covers_truth: bool,
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<()> {
    let out = OutDir::open(&cfg.output.dir);
    let predictions: Vec<Prediction> = out.read_csv(PREDICTIONS, "predict")?;
    let rows: Vec<EventRow> = out.read_csv(EVENTS, "prepare")?;
    let by_id: BTreeMap<&str, &EventRow> = rows.iter().map(|r| (r.event_id.as_str(), r)).collect();
    let matched = predictions
        .iter()
        .map(|p| {
            by_id
                .get(p.event_id.as_str())
                .map(|r| (p, *r))
                .ok_or_else(|| CliError::new(ExitKind::Data, format!("no event row for prediction {}", p.event_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let truths: Vec<f64> = matched.iter().map(|(_, r)| r.label_risk).collect();
    let hmm: Vec<f64> = matched.iter().map(|(p, _)| p.mean_risk).collect();
    let naive: Vec<f64> = matched.iter().map(|(_, r)| r.naive_risk).collect();
    let threshold = cfg.eval.threshold;
    let report = EvaluationReport {
        threshold,
        n_shortcut: matched.iter().filter(|(_, r)| r.shortcut).count(),
        comparison: Comparison::new(
            MetricsReport::compute(&hmm, &truths, threshold)?,
            MetricsReport::compute(&naive, &truths, threshold)?,
        ),
    };
    let pairs: Vec<PairRow> = matched
        .iter()
        .map(|(p, r)| PairRow {
            event_id: &p.event_id,
            true_risk: r.label_risk,
            hmm_risk: p.mean_risk,
            naive_risk: r.naive_risk,
            source: p.source.as_str(),
        })
        .collect();
    let hdis: Vec<HdiRow> = matched
        .iter()
        .map(|(p, r)| HdiRow {
            event_id: &p.event_id,
            true_risk: r.label_risk,
            mean_risk: p.mean_risk,
            hdi_low: p.hdi_low,
            hdi_high: p.hdi_high,
            covers_truth: p.hdi_low <= r.label_risk && r.label_risk <= p.hdi_high,
        })
        .collect();
    out.write_json(METRICS, &report)?;
    out.write_csv(PREDICTED_VS_TRUE, &["event_id", "true_risk", "hmm_risk", "naive_risk", "source"], &pairs)?;
    out.write_csv(
        HDI_TABLE,
        &["event_id", "true_risk", "mean_risk", "hdi_low", "hdi_high", "covers_truth"],
        &hdis,
    )?;
    let (h, n) = (&report.comparison.hmm, &report.comparison.naive);
    println!("{:<10} {:>9} {:>9}", "", "hmm", "naive");
    for (name, a, b) in [
        ("rmse", h.rmse, n.rmse),
        ("mae", h.mae, n.mae),
        ("precision", h.precision, n.precision),
        ("recall", h.recall, n.recall),
        ("f1", h.f1, n.f1),
        ("f2", h.f2, n.f2),
    ] {
        println!("{name:<10} {a:>9.4} {b:>9.4}");
    }
    for (name, a, b) in [
        ("tp", h.confusion.tp, n.confusion.tp),
        ("fp", h.confusion.fp, n.confusion.fp),
        ("fn", h.confusion.fn_, n.confusion.fn_),
        ("tn", h.confusion.tn, n.confusion.tn),
        ("overpred", h.n_overpredictions, n.n_overpredictions),
    ] {
        println!("{name:<10} {a:>9} {b:>9}");
    }
    if let Some(pct) = report.comparison.fp_reduction_pct {
        println!("false positives reduced by {pct:.2}%");
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let out = OutDir::create(&cfg.output.dir)?;
    let events: Vec<Event> = synth::generate(&cfg.synth)?;
    out.write_with(SYNTHETIC, |p| synth::write_csv(&events, p))?;
    let truth: &HmmParams = &cfg.synth.true_params;
    out.write_json(TRUTH, truth)?;
    println!(
        "{} events, {} messages written to {}",
        events.len(),
        events.iter().map(|e| e.cdms.len()).sum::<usize>(),
        out.path(SYNTHETIC).display()
    );
    Ok(())
}
