//! Ingestion, cleaning, event filtering, the −30 shortcut, vectorization to
//! a fixed grid, and stratified splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{is_floor, Cdm, Event, RiskClass, RISK_CEIL, RISK_FLOOR};
use crate::error::{Error, Result};

pub const CUTOFF_DAYS: f64 = 2.0;
pub const LABEL_WINDOW_DAYS: f64 = 1.0;
pub const SLOTS_PER_DAY: usize = 3;
pub const N_DAYS: usize = 7;
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub const EVENT_ID: &str = "event_id";
pub const TIME_TO_TCA: &str = "time_to_tca";
pub const RISK: &str = "risk";
pub const BALLISTIC_COEFF_TARGET: &str = "ballistic_coeff_target";
pub const BALLISTIC_COEFF_CHASER: &str = "ballistic_coeff_chaser";
pub const ENERGY_DISSIPATION_TARGET: &str = "energy_dissipation_target";
pub const ENERGY_DISSIPATION_CHASER: &str = "energy_dissipation_chaser";

/// `(canonical name, side, axis)` for the six position standard deviations.
const POS_SIGMA_COLUMNS: [(&str, Side, Axis); 6] = [
    ("pos_sigma_r_target", Side::Target, Axis::R),
    ("pos_sigma_t_target", Side::Target, Axis::T),
    ("pos_sigma_n_target", Side::Target, Axis::N),
    ("pos_sigma_r_chaser", Side::Chaser, Axis::R),
    ("pos_sigma_t_chaser", Side::Chaser, Axis::T),
    ("pos_sigma_n_chaser", Side::Chaser, Axis::N),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Target,
    Chaser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    R,
    T,
    N,
}

/// Maps canonical field names to the column names of an input file. Names
/// without an entry are looked up verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub columns: BTreeMap<String, String>,
}

impl Schema {
    pub fn identity() -> Self {
        Schema::default()
    }

    /// Column names of the public ESA collision avoidance challenge data.
    pub fn esa() -> Self {
        let pairs = [
            ("pos_sigma_r_target", "t_sigma_r"),
            ("pos_sigma_t_target", "t_sigma_t"),
            ("pos_sigma_n_target", "t_sigma_n"),
            ("pos_sigma_r_chaser", "c_sigma_r"),
            ("pos_sigma_t_chaser", "c_sigma_t"),
            ("pos_sigma_n_chaser", "c_sigma_n"),
            (BALLISTIC_COEFF_TARGET, "t_cd_area_over_mass"),
            (BALLISTIC_COEFF_CHASER, "c_cd_area_over_mass"),
            (ENERGY_DISSIPATION_TARGET, "t_sedr"),
            (ENERGY_DISSIPATION_CHASER, "c_sedr"),
        ];
        Schema {
            columns: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    pub fn column<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.columns.get(canonical).map_or(canonical, String::as_str)
    }
}

/// A data row that could not become a [`Cdm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRejection {
    pub row: usize,
    pub event_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub cdms: Vec<Cdm>,
    pub rejections: Vec<RowRejection>,
    /// Number of Cdms whose risk was clamped up to the floor.
    pub n_clamped: usize,
}

pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<Ingested> {
    ingest_reader(std::fs::File::open(path)?, schema)
}

/// Parses one Cdm per row. Bad cells reject their row only.
pub fn ingest_reader(input: impl Read, schema: &Schema) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyFile);
    }
    let index: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let find = |canonical: &str| index.get(schema.column(canonical)).copied();
    let required = |canonical: &str| find(canonical).ok_or_else(|| Error::MissingColumn(schema.column(canonical).to_string()));
    let id_col = required(EVENT_ID)?;
    let t_col = required(TIME_TO_TCA)?;
    let risk_col = required(RISK)?;

    let bc_cols = [find(BALLISTIC_COEFF_TARGET), find(BALLISTIC_COEFF_CHASER)];
    let sigma_cols: Vec<Option<usize>> = POS_SIGMA_COLUMNS.iter().map(|(c, _, _)| find(c)).collect();
    let mut named: BTreeSet<usize> = [id_col, t_col, risk_col].into_iter().collect();
    named.extend(bc_cols.iter().flatten());
    named.extend(sigma_cols.iter().flatten());
    // other mapped canonical names are stored in `extra` under that name
    let mut extra_names: BTreeMap<usize, String> = BTreeMap::new();
    for (canonical, col) in &schema.columns {
        if let Some(&i) = index.get(col.as_str()) {
            if !named.contains(&i) {
                extra_names.insert(i, canonical.clone());
            }
        }
    }

    let mut out = Ingested::default();
    for (row, record) in rdr.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.rejections.push(RowRejection {
                    row,
                    event_id: String::new(),
                    reason: format!("unreadable:{e}"),
                });
                continue;
            }
        };
        let event_id = record.get(id_col).unwrap_or("").trim().to_string();
        let reject = |reason: String| RowRejection {
            row,
            event_id: event_id.clone(),
            reason,
        };
        if event_id.is_empty() {
            out.rejections.push(reject(format!("missing:{}", schema.column(EVENT_ID))));
            continue;
        }
        let time_to_tca = match parse_required(&record, t_col) {
            Some(v) if v >= 0.0 => v,
            Some(_) => {
                out.rejections.push(reject(format!("negative:{}", schema.column(TIME_TO_TCA))));
                continue;
            }
            None => {
                out.rejections.push(reject(format!("malformed:{}", schema.column(TIME_TO_TCA))));
                continue;
            }
        };
        let raw_risk = match parse_required(&record, risk_col) {
            Some(v) if v <= RISK_CEIL => v,
            Some(_) => {
                out.rejections.push(reject(format!("above_ceiling:{}", schema.column(RISK))));
                continue;
            }
            None => {
                out.rejections.push(reject(format!("malformed:{}", schema.column(RISK))));
                continue;
            }
        };
        let mut cdm = Cdm::new(event_id.clone(), time_to_tca, raw_risk.max(RISK_FLOOR));
        cdm.row = row;
        if raw_risk < RISK_FLOOR {
            cdm.risk_clamped = true;
            out.n_clamped += 1;
        }
        let mut bad = None;
        let mut optional = |col: Option<usize>| -> Option<f64> {
            let i = col?;
            let cell = record.get(i)?.trim();
            if cell.is_empty() {
                return None;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    bad.get_or_insert(headers[i].to_string());
                    None
                }
            }
        };
        cdm.ballistic_coeff_target = optional(bc_cols[0]);
        cdm.ballistic_coeff_chaser = optional(bc_cols[1]);
        for (&(_, side, axis), &col) in POS_SIGMA_COLUMNS.iter().zip(&sigma_cols) {
            let v = optional(col);
            let sig = match side {
                Side::Target => &mut cdm.pos_sigma_target,
                Side::Chaser => &mut cdm.pos_sigma_chaser,
            };
            match axis {
                Axis::R => sig.r = v,
                Axis::T => sig.t = v,
                Axis::N => sig.n = v,
            }
        }
        if let Some(col) = bad {
            out.rejections.push(reject(format!("malformed:{col}")));
            continue;
        }
        for (i, cell) in record.iter().enumerate() {
            if named.contains(&i) {
                continue;
            }
            let name = extra_names.get(&i).cloned().unwrap_or_else(|| headers[i].trim().to_string());
            cdm.extra.insert(name, cell.to_string());
        }
        out.cdms.push(cdm);
    }
    Ok(out)
}

fn parse_required(record: &csv::StringRecord, i: usize) -> Option<f64> {
    record.get(i)?.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Per-axis upper limits on position standard deviations, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosSigmaLimits {
    pub r: f64,
    pub t: f64,
    pub n: f64,
}

impl Default for PosSigmaLimits {
    fn default() -> Self {
        PosSigmaLimits {
            r: EARTH_RADIUS_M,
            t: EARTH_RADIUS_M,
            n: EARTH_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub max_pos_sigma: PosSigmaLimits,
    /// Canonical names of columns whose nonpositive values remove a Cdm.
    pub reject_nonpositive: Vec<String>,
    /// Keep clamped risks; when false, clamped Cdms are removed instead.
    pub clamp_risk: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            max_pos_sigma: PosSigmaLimits::default(),
            reject_nonpositive: [
                BALLISTIC_COEFF_TARGET,
                BALLISTIC_COEFF_CHASER,
                ENERGY_DISSIPATION_TARGET,
                ENERGY_DISSIPATION_CHASER,
            ]
            .map(String::from)
            .to_vec(),
            clamp_risk: true,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.max_pos_sigma;
        if [l.r, l.t, l.n].iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("position sigma thresholds must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Removal {
    pub cdm: Cdm,
    pub reasons: Vec<String>,
}

impl Removal {
    pub fn reason(&self) -> String {
        self.reasons.join(";")
    }
}

fn numeric_field(cdm: &Cdm, canonical: &str) -> Option<f64> {
    match canonical {
        BALLISTIC_COEFF_TARGET => cdm.ballistic_coeff_target,
        BALLISTIC_COEFF_CHASER => cdm.ballistic_coeff_chaser,
        TIME_TO_TCA => Some(cdm.time_to_tca),
        RISK => Some(cdm.risk),
        other => cdm.extra.get(other).and_then(|s| s.trim().parse().ok()),
    }
}

/// Splits `cdms` into kept and removed; removals carry every reason that
/// applies. Thresholds are strict: a value equal to its limit is kept.
pub fn clean(cdms: Vec<Cdm>, cfg: &CleaningConfig) -> (Vec<Cdm>, Vec<Removal>) {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for cdm in cdms {
        let mut reasons = Vec::new();
        for col in &cfg.reject_nonpositive {
            if numeric_field(&cdm, col).is_some_and(|v| v <= 0.0) {
                reasons.push(format!("nonpositive:{col}"));
            }
        }
        for &(name, side, axis) in &POS_SIGMA_COLUMNS {
            let sig = match side {
                Side::Target => cdm.pos_sigma_target,
                Side::Chaser => cdm.pos_sigma_chaser,
            };
            let (value, limit) = match axis {
                Axis::R => (sig.r, cfg.max_pos_sigma.r),
                Axis::T => (sig.t, cfg.max_pos_sigma.t),
                Axis::N => (sig.n, cfg.max_pos_sigma.n),
            };
            if value.is_some_and(|v| v > limit) {
                reasons.push(format!("above_threshold:{name}"));
            }
        }
        if !cfg.clamp_risk && cdm.risk_clamped {
            reasons.push(format!("below_floor:{RISK}"));
        }
        if reasons.is_empty() {
            kept.push(cdm);
        } else {
            removed.push(Removal { cdm, reasons });
        }
    }
    (kept, removed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRejection {
    pub event_id: String,
    pub n_cdms: usize,
    pub reason: String,
}

/// Keeps events with (i) at least 2 Cdms, (ii) a first Cdm before the
/// cutoff and (iii) a last Cdm within a day of TCA. A rejected event is
/// reported with the first rule it breaks.
pub fn apply_event_constraints(events: Vec<Event>) -> (Vec<Event>, Vec<EventRejection>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for e in events {
        let first = e.cdms.first().map_or(0.0, |c| c.time_to_tca);
        let last = e.cdms.last().map_or(f64::INFINITY, |c| c.time_to_tca);
        let reason = if e.cdms.len() < 2 {
            Some("(i)")
        } else if !(first > CUTOFF_DAYS) {
            Some("(ii)")
        } else if !(last <= LABEL_WINDOW_DAYS) {
            Some("(iii)")
        } else {
            None
        };
        match reason {
            Some(r) => rejected.push(EventRejection {
                event_id: e.event_id.clone(),
                n_cdms: e.cdms.len(),
                reason: r.to_string(),
            }),
            None => kept.push(e),
        }
    }
    (kept, rejected)
}

/// Risk of the chronologically last Cdm strictly before the cutoff.
pub fn naive_forecast(event: &Event, cutoff: f64) -> Result<f64> {
    event
        .cdms
        .iter()
        .rev()
        .find(|c| c.time_to_tca > cutoff)
        .map(|c| c.risk)
        .ok_or_else(|| Error::NoCdmBeforeCutoff(event.event_id.clone()))
}

/// Splits events into those the model sees and those whose naive forecast
/// is the floor, which are predicted as −30 directly.
pub fn shortcut_partition(events: Vec<Event>, cutoff: f64) -> Result<(Vec<Event>, Vec<Event>)> {
    let mut model = Vec::new();
    let mut shortcut = Vec::new();
    for e in events {
        if is_floor(naive_forecast(&e, cutoff)?) {
            shortcut.push(e);
        } else {
            model.push(e);
        }
    }
    Ok((model, shortcut))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorizedEvent {
    pub event_id: String,
    /// Oldest to newest: day 7 slot 1 … day 1 slot 3.
    pub grid: Vec<f64>,
    pub n_real: usize,
    pub label_risk: f64,
    pub risk_class: RiskClass,
}

impl VectorizedEvent {
    /// Slots for days strictly before the cutoff.
    pub fn prefix(&self, slots_per_day: usize, cutoff_days: usize) -> &[f64] {
        let n = self.grid.len().saturating_sub(slots_per_day * cutoff_days);
        &self.grid[..n]
    }

    /// The 15-slot pre-cutoff input of the default grid.
    pub fn input(&self) -> &[f64] {
        self.prefix(SLOTS_PER_DAY, CUTOFF_DAYS as usize)
    }
}

/// Day bucket `⌈t⌉`, clamped to `1..=n_days`.
pub fn day_bucket(time_to_tca: f64, n_days: usize) -> usize {
    (time_to_tca.ceil().max(1.0) as usize).min(n_days)
}

/// Lays an event onto `n_days × slots_per_day` slots. Each day keeps its
/// latest `slots_per_day` Cdms; a short day is padded with the latest Cdm
/// received up to then, and days before the first Cdm use the first Cdm.
pub fn vectorize(event: &Event, slots_per_day: usize, n_days: usize) -> VectorizedEvent {
    let mut by_day: Vec<Vec<f64>> = vec![Vec::new(); n_days + 1];
    for c in &event.cdms {
        by_day[day_bucket(c.time_to_tca, n_days)].push(c.risk);
    }
    let first = event.cdms.first().map_or(RISK_FLOOR, |c| c.risk);
    let mut latest: Option<f64> = None;
    let mut grid = Vec::with_capacity(n_days * slots_per_day);
    let mut n_real = 0;
    for day in (1..=n_days).rev() {
        let risks = &by_day[day];
        let genuine = &risks[risks.len().saturating_sub(slots_per_day)..];
        grid.extend_from_slice(genuine);
        n_real += genuine.len();
        if let Some(&last) = risks.last() {
            latest = Some(last);
        }
        let fill = latest.unwrap_or(first);
        grid.extend(std::iter::repeat_n(fill, slots_per_day - genuine.len()));
    }
    VectorizedEvent {
        event_id: event.event_id.clone(),
        grid,
        n_real,
        label_risk: event.label_risk,
        risk_class: event.risk_class,
    }
}

/// Anything a stratified split can sort into classes.
pub trait Labeled {
    fn id(&self) -> &str;
    fn class(&self) -> RiskClass;
}

impl Labeled for Event {
    fn id(&self) -> &str {
        &self.event_id
    }

    fn class(&self) -> RiskClass {
        self.risk_class
    }
}

impl Labeled for VectorizedEvent {
    fn id(&self) -> &str {
        &self.event_id
    }

    fn class(&self) -> RiskClass {
        self.risk_class
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Member indices per class (Low then High), each sorted by id and then
/// shuffled with one seeded stream.
fn shuffled_classes<T: Labeled>(items: &[T], seed: u64) -> [Vec<usize>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = [Vec::new(), Vec::new()];
    for (i, item) in items.iter().enumerate() {
        classes[usize::from(item.class() == RiskClass::High)].push(i);
    }
    for members in &mut classes {
        members.sort_by(|&a, &b| items[a].id().cmp(items[b].id()));
        members.shuffle(&mut rng);
    }
    classes
}

/// Holds out `round(test_fraction · n_class)` of each class (halves round up).
pub fn stratified_split<T: Labeled>(items: &[T], test_fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!("test fraction {test_fraction} not in [0, 1]")));
    }
    let classes = shuffled_classes(items, seed);
    for (members, class) in classes.iter().zip([RiskClass::Low, RiskClass::High]) {
        if members.is_empty() {
            return Err(Error::EmptyClass(class.to_string()));
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in &classes {
        let n_test = (test_fraction * members.len() as f64 + 0.5).floor() as usize;
        for (j, &i) in members.iter().enumerate() {
            let id = items[i].id().to_string();
            if j < n_test {
                test.push(id);
            } else {
                train.push(id);
            }
        }
    }
    train.sort();
    test.sort();
    Ok(SplitResult { train, test })
}

/// Fold index for each item, aligned with the input. Each class is dealt
/// round-robin, so a class smaller than `k` leaves some folds without it.
pub fn stratified_kfold<T: Labeled>(items: &[T], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k-fold needs k ≥ 1".into()));
    }
    let mut folds = vec![0; items.len()];
    for members in shuffled_classes(items, seed) {
        for (j, i) in members.into_iter().enumerate() {
            folds[i] = j % k;
        }
    }
    Ok(folds)
}

/// Items whose id is in `ids`, in input order.
pub fn select<'a, T: Labeled>(items: &'a [T], ids: &[String]) -> Vec<&'a T> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    items.iter().filter(|e| wanted.contains(e.id())).collect()
}

const NAMED_COLUMNS: [&str; 12] = [
    EVENT_ID,
    TIME_TO_TCA,
    RISK,
    BALLISTIC_COEFF_TARGET,
    BALLISTIC_COEFF_CHASER,
    "pos_sigma_r_target",
    "pos_sigma_t_target",
    "pos_sigma_n_target",
    "pos_sigma_r_chaser",
    "pos_sigma_t_chaser",
    "pos_sigma_n_chaser",
    "risk_clamped",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cdm_cells(c: &Cdm, extras: &[String]) -> Vec<String> {
    let mut cells = vec![
        c.event_id.clone(),
        c.time_to_tca.to_string(),
        c.risk.to_string(),
        opt(c.ballistic_coeff_target),
        opt(c.ballistic_coeff_chaser),
        opt(c.pos_sigma_target.r),
        opt(c.pos_sigma_target.t),
        opt(c.pos_sigma_target.n),
        opt(c.pos_sigma_chaser.r),
        opt(c.pos_sigma_chaser.t),
        opt(c.pos_sigma_chaser.n),
        c.risk_clamped.to_string(),
    ];
    cells.extend(extras.iter().map(|k| c.extra.get(k).cloned().unwrap_or_default()));
    cells
}

fn extra_columns<'a>(cdms: impl Iterator<Item = &'a Cdm>) -> Vec<String> {
    let set: BTreeSet<&String> = cdms.flat_map(|c| c.extra.keys()).collect();
    set.into_iter().cloned().collect()
}

/// Cleaned Cdms with canonical column names; extra columns follow in name order.
pub fn write_cdms_csv(cdms: &[Cdm], path: &Path) -> Result<()> {
    let extras = extra_columns(cdms.iter());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = NAMED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(extras.iter().cloned());
    w.write_record(&header)?;
    for c in cdms {
        w.write_record(cdm_cells(c, &extras))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_removals_csv(removed: &[Removal], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", EVENT_ID, TIME_TO_TCA, RISK, "reason"])?;
    for r in removed {
        w.write_record([
            r.cdm.row.to_string(),
            r.cdm.event_id.clone(),
            r.cdm.time_to_tca.to_string(),
            r.cdm.risk.to_string(),
            r.reason(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn write_vectorized_csv(events: &[VectorizedEvent], path: &Path) -> Result<()> {
    let width = events.first().map_or(SLOTS_PER_DAY * N_DAYS, |e| e.grid.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![EVENT_ID.to_string()];
    header.extend((0..width).map(|i| format!("slot_{i}")));
    header.extend(["n_real", "label_risk", "class"].map(String::from));
    w.write_record(&header)?;
    for e in events {
        let mut row = vec![e.event_id.clone()];
        row.extend(e.grid.iter().map(f64::to_string));
        row.extend([e.n_real.to_string(), e.label_risk.to_string(), e.risk_class.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vectorized_csv(path: &Path) -> Result<Vec<VectorizedEvent>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let width = header.iter().filter(|h| h.starts_with("slot_")).count();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (id_col, n_real_col, label_col, class_col) = (col(EVENT_ID)?, col("n_real")?, col("label_risk")?, col("class")?);
    let slot_cols = (0..width).map(|i| col(&format!("slot_{i}"))).collect::<Result<Vec<_>>>()?;
    let bad = |what: &str, id: &str| Error::InvalidObservations(format!("bad {what} for event {id}"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec[id_col].to_string();
        let grid = slot_cols
            .iter()
            .map(|&i| rec[i].parse::<f64>().map_err(|_| bad("slot", &id)))
            .collect::<Result<Vec<_>>>()?;
        out.push(VectorizedEvent {
            n_real: rec[n_real_col].parse().map_err(|_| bad("n_real", &id))?,
            label_risk: rec[label_col].parse().map_err(|_| bad("label_risk", &id))?,
            risk_class: rec[class_col].parse().map_err(|_| bad("class", &id))?,
            event_id: id,
            grid,
        });
    }
    Ok(out)
}
