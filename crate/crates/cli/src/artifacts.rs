//! Artifact file names and atomic writes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult};

pub const CLEANED_CDMS: &str = "cleaned_cdms.csv";
pub const REMOVED_CDMS: &str = "removed_cdms.csv";
pub const ROW_REJECTIONS: &str = "row_rejections.csv";
pub const EVENT_REJECTIONS: &str = "event_rejections.csv";
pub const EVENTS: &str = "events.csv";
pub const VECTORIZED: &str = "vectorized.csv";
pub const SPLIT: &str = "split.json";
pub const SHORTCUT_EVENTS: &str = "shortcut_events.csv";
pub const PREPARE_SUMMARY: &str = "prepare_summary.json";
pub const CV_FOLDS: &str = "cv_folds.csv";
pub const CV_SUMMARY: &str = "cv_summary.json";
pub const DRAWS: &str = "draws.csv";
pub const POSTERIOR_SUMMARY: &str = "posterior_summary.csv";
pub const DIAGNOSTICS: &str = "diagnostics.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const METRICS: &str = "metrics.json";
pub const PREDICTED_VS_TRUE: &str = "predicted_vs_true.csv";
pub const HDI_TABLE: &str = "hdi_table.csv";
pub const SYNTHETIC: &str = "synthetic.csv";
pub const TRUTH: &str = "truth.json";

/// One valid event as seen by the later commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub event_id: String,
    pub n_cdms: usize,
    pub label_risk: f64,
    pub class: cdm_hmm::domain::RiskClass,
    pub naive_risk: f64,
    pub shortcut: bool,
}

/// The output directory of one run.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::from(e).context(root.display()))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Self {
        OutDir { root: root.to_path_buf() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Path of an artifact an earlier command must have written.
    pub fn require(&self, name: &str, producer: &str) -> CliResult<PathBuf> {
        let path = self.path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::missing(&path, producer))
        }
    }

    /// Runs `write` against a temporary sibling, then renames it into place.
    pub fn write_with(&self, name: &str, write: impl FnOnce(&Path) -> cdm_hmm::Result<()>) -> CliResult<PathBuf> {
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        if let Err(e) = write(&tmp) {
            let _ = fs::remove_file(&tmp);
            return Err(CliError::from(e).context(path.display()));
        }
        fs::rename(&tmp, &path).map_err(|e| CliError::from(e).context(path.display()))?;
        Ok(path)
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        self.write_with(name, |tmp| {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            fs::write(tmp, text)?;
            Ok(())
        })
    }

    /// Flat records under an explicit header, so empty tables keep one.
    pub fn write_csv<T: Serialize>(&self, name: &str, header: &[&str], rows: &[T]) -> CliResult<PathBuf> {
        self.write_with(name, |tmp| {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(tmp)?;
            w.write_record(header)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, producer: &str) -> CliResult<T> {
        let path = self.require(name, producer)?;
        let text = fs::read_to_string(&path).map_err(|e| CliError::from(e).context(path.display()))?;
        serde_json::from_str(&text).map_err(|e| CliError::from(e).context(path.display()))
    }

    pub fn read_csv<T: DeserializeOwned>(&self, name: &str, producer: &str) -> CliResult<Vec<T>> {
        let path = self.require(name, producer)?;
        cdm_hmm::pipeline::read_records_csv(&path).map_err(|e| CliError::from(e).context(path.display()))
    }
}
