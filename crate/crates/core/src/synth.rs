//! Synthetic conjunction events drawn from a known HMM.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dists::{tn_sample, TruncNormal};
use crate::domain::{validate_structure, Cdm, Event, HmmParams, RISK_CEIL, RISK_FLOOR};
use crate::error::{Error, Result};
use crate::pipeline::{N_DAYS, RISK, SLOTS_PER_DAY, TIME_TO_TCA, EVENT_ID};

/// Messages released per day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    /// Exactly three per day.
    #[default]
    Fixed,
    /// Two, three or four per day, equally likely.
    Jitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub true_params: HmmParams,
    pub n_events: usize,
    pub cadence: Cadence,
    pub horizon_days: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            true_params: default_truth(),
            n_events: 500,
            cadence: Cadence::Fixed,
            horizon_days: N_DAYS,
            seed: 0,
        }
    }
}

/// Well separated three-state truth used by the recovery tests.
pub fn default_truth() -> HmmParams {
    HmmParams::new(
        vec![0.6, 0.3, 0.1],
        vec![vec![0.8, 0.15, 0.05], vec![0.1, 0.8, 0.1], vec![0.05, 0.15, 0.8]],
        vec![-28.0, -15.0, -5.0],
        vec![1.5, 2.0, 1.0],
    )
    .expect("default truth is valid")
}

/// Generated events with the hidden state of every message.
#[derive(Debug, Clone)]
pub struct Generated {
    pub events: Vec<Event>,
    pub states: Vec<Vec<usize>>,
}

fn draw_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let issues = validate_structure(&cfg.true_params);
    if !issues.is_empty() {
        return Err(Error::InvalidParams(issues));
    }
    if cfg.n_events == 0 {
        return Err(Error::InvalidConfig("n_events must be at least 1".into()));
    }
    if cfg.horizon_days < 3 {
        return Err(Error::InvalidConfig("horizon must span at least 3 days".into()));
    }
    Ok(())
}

pub fn generate_with_states(cfg: &SynthConfig) -> Result<Generated> {
    validate(cfg)?;
    let theta = &cfg.true_params;
    let emissions = (0..theta.k)
        .map(|s| TruncNormal::new(theta.mu[s], theta.sigma[s], RISK_FLOOR, RISK_CEIL))
        .collect::<Result<Vec<_>>>()?;
    let width = cfg.n_events.to_string().len().max(5);
    let mut events = Vec::with_capacity(cfg.n_events);
    let mut states = Vec::with_capacity(cfg.n_events);
    for i in 0..cfg.n_events {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let id = format!("syn{i:0width$}");
        let mut cdms = Vec::new();
        let mut path = Vec::new();
        let mut state = draw_index(&mut rng, &theta.pi);
        for day in (1..=cfg.horizon_days).rev() {
            let count = match cfg.cadence {
                Cadence::Fixed => SLOTS_PER_DAY,
                Cadence::Jitter => rng.random_range(2..=4),
            };
            for j in 0..count {
                if !path.is_empty() {
                    state = draw_index(&mut rng, theta.a_row(state));
                }
                path.push(state);
                let t = day as f64 - (j as f64 + 0.5) / count as f64;
                cdms.push(Cdm::new(id.clone(), t, tn_sample(&emissions[state], &mut rng)?));
            }
        }
        events.push(Event::new(id, cdms)?);
        states.push(path);
    }
    Ok(Generated { events, states })
}

/// Events sampled from `cfg.true_params`; deterministic for a given seed.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Event>> {
    Ok(generate_with_states(cfg)?.events)
}

/// Writes events in the ingestion schema (`event_id,time_to_tca,risk`).
pub fn write_csv(events: &[Event], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([EVENT_ID, TIME_TO_TCA, RISK])?;
    for e in events {
        for c in &e.cdms {
            w.write_record([c.event_id.clone(), c.time_to_tca.to_string(), c.risk.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
