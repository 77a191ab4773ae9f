//! Value types shared across the crate.
//!
//! Risk values are `log10` collision probabilities truncated to
//! [`RISK_FLOOR`, `RISK_CEIL`]. An event is high-risk when its final risk is
//! at least [`HIGH_RISK_THRESHOLD`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;

pub const RISK_FLOOR: f64 = -30.0;
pub const RISK_CEIL: f64 = 0.0;
pub const HIGH_RISK_THRESHOLD: f64 = -6.0;

/// Tolerance for the simplex constraints on `pi` and rows of `a`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Tolerance used when comparing a risk against the −30 floor.
pub const FLOOR_TOL: f64 = 1e-9;

pub fn is_floor(risk: f64) -> bool {
    (risk - RISK_FLOOR).abs() <= FLOOR_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskClass {
    Low,
    High,
}

impl RiskClass {
    pub fn of(risk: f64) -> Self {
        Self::with_threshold(risk, HIGH_RISK_THRESHOLD)
    }

    pub fn with_threshold(risk: f64, threshold: f64) -> Self {
        if risk < threshold {
            RiskClass::Low
        } else {
            RiskClass::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskClass::Low => "low",
            RiskClass::High => "high",
        }
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RiskClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "low" => Ok(RiskClass::Low),
            "high" => Ok(RiskClass::High),
            other => Err(format!("unknown risk class `{other}`")),
        }
    }
}

/// Position standard deviations (radial, transverse, normal) in meters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PosSigmas {
    pub r: Option<f64>,
    pub t: Option<f64>,
    pub n: Option<f64>,
}

impl PosSigmas {
    pub fn axes(&self) -> [(&'static str, Option<f64>); 3] {
        [("r", self.r), ("t", self.t), ("n", self.n)]
    }
}

/// One conjunction data message.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdm {
    pub event_id: String,
    /// Days until the predicted time of closest approach.
    pub time_to_tca: f64,
    pub risk: f64,
    /// Set when the raw risk was below the floor and clamped at ingestion.
    pub risk_clamped: bool,
    pub ballistic_coeff_target: Option<f64>,
    pub ballistic_coeff_chaser: Option<f64>,
    pub pos_sigma_target: PosSigmas,
    pub pos_sigma_chaser: PosSigmas,
    /// Columns not mapped to a named field, kept verbatim.
    pub extra: BTreeMap<String, String>,
    /// Zero-based data row in the source file.
    pub row: usize,
}

impl Cdm {
    /// Minimal message carrying only the fields the model uses.
    pub fn new(event_id: impl Into<String>, time_to_tca: f64, risk: f64) -> Self {
        Cdm {
            event_id: event_id.into(),
            time_to_tca,
            risk,
            risk_clamped: false,
            ballistic_coeff_target: None,
            ballistic_coeff_chaser: None,
            pos_sigma_target: PosSigmas::default(),
            pos_sigma_chaser: PosSigmas::default(),
            extra: BTreeMap::new(),
            row: 0,
        }
    }
}

/// All messages of one conjunction, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub event_id: String,
    pub cdms: Vec<Cdm>,
    pub label_risk: f64,
    pub risk_class: RiskClass,
}

impl Event {
    /// Sorts by descending time to TCA; ties keep their input order.
    pub fn new(event_id: impl Into<String>, mut cdms: Vec<Cdm>) -> Result<Self> {
        let event_id = event_id.into();
        if cdms.is_empty() {
            return Err(Error::InvalidObservations(format!(
                "event {event_id} has no CDMs"
            )));
        }
        cdms.sort_by(|a, b| b.time_to_tca.total_cmp(&a.time_to_tca));
        let label_risk = cdms.last().map(|c| c.risk).unwrap_or(RISK_FLOOR);
        Ok(Event {
            event_id,
            risk_class: RiskClass::of(label_risk),
            label_risk,
            cdms,
        })
    }

    pub fn risks(&self) -> Vec<f64> {
        self.cdms.iter().map(|c| c.risk).collect()
    }
}

/// Groups messages by event id. Events come out ordered by id; messages keep
/// their input order within an event before the time sort.
pub fn group_events(cdms: Vec<Cdm>) -> Vec<Event> {
    let mut groups: BTreeMap<String, Vec<Cdm>> = BTreeMap::new();
    for cdm in cdms {
        groups.entry(cdm.event_id.clone()).or_default().push(cdm);
    }
    groups
        .into_iter()
        .filter_map(|(id, cdms)| Event::new(id, cdms).ok())
        .collect()
}

/// Parameters of a `k`-state HMM with truncated-normal emissions on
/// [`RISK_FLOOR`, `RISK_CEIL`]. `a` is stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub k: usize,
    pub pi: Vec<f64>,
    pub a: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl HmmParams {
    /// Builds from transition rows and validates everything except the
    /// canonical ordering of `mu`.
    pub fn new(pi: Vec<f64>, a_rows: Vec<Vec<f64>>, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let k = pi.len();
        let p = HmmParams {
            k,
            pi,
            a: a_rows.into_iter().flatten().collect(),
            mu,
            sigma,
        };
        let violations = validate_structure(&p);
        if violations.is_empty() {
            Ok(p)
        } else {
            Err(Error::InvalidParams(violations))
        }
    }

    /// Uniform initial and transition probabilities.
    pub fn uniform(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let k = mu.len();
        let u = 1.0 / k as f64;
        HmmParams::new(vec![u; k], vec![vec![u; k]; k], mu, sigma)
    }

    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.k + j]
    }

    pub fn a_row(&self, i: usize) -> &[f64] {
        &self.a[i * self.k..(i + 1) * self.k]
    }

    /// Number of free scalars in the flat layout (`pi`, `a`, `mu`, `sigma`).
    pub fn flat_len(k: usize) -> usize {
        k + k * k + 2 * k
    }

    /// Parameter names in canonical order: `pi[i]`, `a[i,j]`, `mu[i]`, `sigma[i]`.
    pub fn param_names(k: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(Self::flat_len(k));
        names.extend((0..k).map(|i| format!("pi[{i}]")));
        for i in 0..k {
            names.extend((0..k).map(|j| format!("a[{i},{j}]")));
        }
        names.extend((0..k).map(|i| format!("mu[{i}]")));
        names.extend((0..k).map(|i| format!("sigma[{i}]")));
        names
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::flat_len(self.k));
        v.extend_from_slice(&self.pi);
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.mu);
        v.extend_from_slice(&self.sigma);
        v
    }

    pub fn from_flat(k: usize, flat: &[f64]) -> Result<Self> {
        let n = Self::flat_len(k);
        if flat.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: flat.len(),
            });
        }
        let (pi, rest) = flat.split_at(k);
        let (a, rest) = rest.split_at(k * k);
        let (mu, sigma) = rest.split_at(k);
        Ok(HmmParams {
            k,
            pi: pi.to_vec(),
            a: a.to_vec(),
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
        })
    }

    /// Reorders states by `order`: new state `i` is old state `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> HmmParams {
        let k = self.k;
        let mut a = Vec::with_capacity(k * k);
        for &oi in order {
            for &oj in order {
                a.push(self.a(oi, oj));
            }
        }
        HmmParams {
            k,
            pi: order.iter().map(|&o| self.pi[o]).collect(),
            a,
            mu: order.iter().map(|&o| self.mu[o]).collect(),
            sigma: order.iter().map(|&o| self.sigma[o]).collect(),
        }
    }
}

/// Checks every invariant, including ascending `mu`. Returns one message per
/// violation; empty means valid.
pub fn validate_params(p: &HmmParams) -> Vec<String> {
    let mut v = validate_structure(p);
    if v.is_empty() && p.mu.windows(2).any(|w| w[0] > w[1]) {
        v.push("mu not ascending".to_string());
    }
    v
}

/// Like [`validate_params`] but accepts any state ordering. The likelihood is
/// permutation invariant, so evaluation only needs this weaker check.
pub fn validate_structure(p: &HmmParams) -> Vec<String> {
    let mut v = Vec::new();
    let k = p.k;
    if k < 1 {
        v.push("k must be at least 1".to_string());
        return v;
    }
    if p.pi.len() != k || p.a.len() != k * k || p.mu.len() != k || p.sigma.len() != k {
        v.push(format!(
            "shape mismatch for k={k}: pi {}, a {}, mu {}, sigma {}",
            p.pi.len(),
            p.a.len(),
            p.mu.len(),
            p.sigma.len()
        ));
        return v;
    }
    check_simplex("pi", &p.pi, &mut v);
    for i in 0..k {
        check_simplex(&format!("a row {i}"), p.a_row(i), &mut v);
    }
    if p.mu.iter().any(|m| !(RISK_FLOOR..=RISK_CEIL).contains(m)) {
        v.push(format!("mu outside [{RISK_FLOOR}, {RISK_CEIL}]"));
    }
    if p.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        v.push("sigma not positive".to_string());
    }
    v
}

fn check_simplex(name: &str, x: &[f64], out: &mut Vec<String>) {
    if x.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        out.push(format!("{name} has negative entries"));
    }
    let sum: f64 = x.iter().sum();
    if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
        out.push(format!("{name} sum ≠ 1 (sum = {sum})"));
    }
}

/// Sampler bookkeeping attached to a set of posterior draws.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PosteriorMeta {
    pub sampler: SamplerConfig,
    pub divergences: usize,
    pub rhat: BTreeMap<String, f64>,
    pub ess: BTreeMap<String, f64>,
}

/// Posterior samples of [`HmmParams`] with their chain of origin.
#[derive(Debug, Clone, Default)]
pub struct PosteriorDraws {
    pub params: Vec<HmmParams>,
    pub chain_id: Vec<usize>,
    pub draw_index: Vec<usize>,
    pub meta: PosteriorMeta,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn k(&self) -> Option<usize> {
        self.params.first().map(|p| p.k)
    }

    pub fn n_chains(&self) -> usize {
        self.chain_id.iter().max().map_or(0, |m| m + 1)
    }

    /// Per-chain traces of flat parameter `index` (see [`HmmParams::to_flat`]).
    pub fn chains_of(&self, index: usize) -> Vec<Vec<f64>> {
        let mut chains = vec![Vec::new(); self.n_chains()];
        for (p, &c) in self.params.iter().zip(&self.chain_id) {
            chains[c].push(p.to_flat()[index]);
        }
        chains
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    ShortcutMinus30,
    Hmm,
    Naive,
}

impl PredictionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictionSource::ShortcutMinus30 => "shortcut_minus30",
            PredictionSource::Hmm => "hmm",
            PredictionSource::Naive => "naive",
        }
    }
}

impl std::str::FromStr for PredictionSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "shortcut_minus30" => Ok(Self::ShortcutMinus30),
            "hmm" => Ok(Self::Hmm),
            "naive" => Ok(Self::Naive),
            other => Err(format!("unknown prediction source `{other}`")),
        }
    }
}

/// Final-risk prediction for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub event_id: String,
    pub mean_risk: f64,
    pub variance: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    pub source: PredictionSource,
    pub predicted_class: RiskClass,
}

impl Prediction {
    /// Deterministic −30 prediction for events routed around the model.
    pub fn shortcut(event_id: impl Into<String>) -> Self {
        Prediction {
            event_id: event_id.into(),
            mean_risk: RISK_FLOOR,
            variance: 0.0,
            hdi_low: RISK_FLOOR,
            hdi_high: RISK_FLOOR,
            source: PredictionSource::ShortcutMinus30,
            predicted_class: RiskClass::Low,
        }
    }

    pub fn point(event_id: impl Into<String>, risk: f64, source: PredictionSource) -> Self {
        Prediction {
            event_id: event_id.into(),
            mean_risk: risk,
            variance: 0.0,
            hdi_low: risk,
            hdi_high: risk,
            source,
            predicted_class: RiskClass::of(risk),
        }
    }
}
