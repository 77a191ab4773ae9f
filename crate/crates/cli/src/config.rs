//! Run configuration: one JSON document, every section optional.

use std::path::{Path, PathBuf};

use cdm_hmm::evaluation::PredictConfig;
use cdm_hmm::pipeline::{CleaningConfig, Schema, CUTOFF_DAYS, N_DAYS};
use cdm_hmm::reparam::PriorConstants;
use cdm_hmm::sampler::SamplerConfig;
use cdm_hmm::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub sampler: SamplerSection,
    pub eval: EvalConfig,
    pub output: OutputConfig,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw CDM table; relative paths resolve against the config file.
    pub input: Option<PathBuf>,
    /// Canonical field name to input column name.
    pub schema: Schema,
    pub cleaning: CleaningConfig,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input: None,
            schema: Schema::identity(),
            cleaning: CleaningConfig::default(),
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Fixed state count for `fit`; when absent the CV selection is used.
    pub k: Option<usize>,
    /// Inclusive range searched by `cv`.
    pub k_range: [usize; 2],
    pub cv_folds: usize,
    pub prior: PriorConstants,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: None,
            k_range: [4, 10],
            cv_folds: 5,
            prior: PriorConstants::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub cv_chains: usize,
    pub final_chains: usize,
    pub draws: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SamplerSection {
            cv_chains: 3,
            final_chains: 5,
            draws: s.n_draws,
            warmup: s.n_warmup,
            target_accept: s.target_accept,
            max_treedepth: s.max_treedepth,
            init_jitter: s.init_jitter,
            seed: s.seed,
        }
    }
}

impl SamplerSection {
    pub fn with_chains(&self, n_chains: usize) -> SamplerConfig {
        SamplerConfig {
            n_chains,
            n_draws: self.draws,
            n_warmup: self.warmup,
            target_accept: self.target_accept,
            max_treedepth: self.max_treedepth,
            seed: self.seed,
            init_jitter: self.init_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Whole days before TCA; later messages are hidden from the forecasters.
    pub cutoff_days: usize,
    pub threshold: f64,
    pub n_predict_draws: usize,
    pub hdi_prob: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let p = PredictConfig::default();
        EvalConfig {
            cutoff_days: CUTOFF_DAYS as usize,
            threshold: p.threshold,
            n_predict_draws: p.n_draws,
            hdi_prob: p.hdi_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`) and resolves relative paths
    /// against the file's directory.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(input) = &cfg.data.input {
            cfg.data.input = Some(base.join(input));
        }
        cfg.output.dir = base.join(&cfg.output.dir);
        Ok(cfg)
    }

    /// Applies the command-line overrides; `seed` replaces every seed.
    pub fn override_with(&mut self, out: Option<PathBuf>, seed: Option<u64>) {
        if let Some(out) = out {
            self.output.dir = out;
        }
        if let Some(seed) = seed {
            self.data.split_seed = seed;
            self.sampler.seed = seed;
            self.synth.seed = seed;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let mut problems = Vec::new();
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            problems.push("data.test_fraction must be in (0, 1)".to_string());
        }
        let [lo, hi] = self.model.k_range;
        if lo == 0 || lo > hi {
            problems.push(format!("model.k_range [{lo}, {hi}] is empty or starts at 0"));
        }
        if self.model.k == Some(0) {
            problems.push("model.k must be at least 1".to_string());
        }
        if self.model.cv_folds < 2 {
            problems.push("model.cv_folds must be at least 2".to_string());
        }
        if self.sampler.cv_chains == 0 || self.sampler.final_chains == 0 {
            problems.push("sampler chain counts must be at least 1".to_string());
        }
        if self.eval.cutoff_days == 0 || self.eval.cutoff_days >= N_DAYS {
            problems.push(format!("eval.cutoff_days must be in 1..{N_DAYS}"));
        }
        if self.eval.n_predict_draws == 0 {
            problems.push("eval.n_predict_draws must be at least 1".to_string());
        }
        if !(self.eval.hdi_prob > 0.0 && self.eval.hdi_prob < 1.0) {
            problems.push("eval.hdi_prob must be in (0, 1)".to_string());
        }
        for check in [
            self.data.cleaning.validate(),
            self.model.prior.validate(),
            self.sampler.with_chains(self.sampler.final_chains).validate(),
        ] {
            if let Err(e) = check {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(problems.join("; ")))
        }
    }

    pub fn cutoff(&self) -> f64 {
        self.eval.cutoff_days as f64
    }

    pub fn predict_config(&self) -> PredictConfig {
        PredictConfig {
            n_draws: self.eval.n_predict_draws,
            hdi_prob: self.eval.hdi_prob,
            threshold: self.eval.threshold,
            cutoff_days: self.eval.cutoff_days,
            seed: self.sampler.seed,
        }
    }

    pub fn k_values(&self) -> Vec<usize> {
        let [lo, hi] = self.model.k_range;
        (lo..=hi).collect()
    }
}
