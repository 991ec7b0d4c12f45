use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid metric configuration: {0}")]
pub struct ConfigError(pub String);

/// Numeric knobs shared by the metrics and evaluation modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub rr_ngram_min: usize,
    pub rr_ngram_max: usize,
    /// Repetition-rate window size, in tokens.
    pub rr_window: usize,
    /// Distance between consecutive window starts. Equal to `rr_window`
    /// (tiling) unless set.
    pub rr_stride: Option<usize>,
    pub bleu_max_order: usize,
    pub derail_threshold: f64,
    pub acc_n_values: Vec<usize>,
    pub truncation_fractions: Vec<f64>,
    pub min_window: usize,
    pub max_turns_for_eval: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            rr_ngram_min: 1,
            rr_ngram_max: 4,
            rr_window: 1000,
            rr_stride: None,
            bleu_max_order: 4,
            derail_threshold: 0.9,
            acc_n_values: vec![1, 5, 10],
            truncation_fractions: vec![0.2, 0.3],
            min_window: 3,
            max_turns_for_eval: 20,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rr_ngram_min < 1 || self.rr_ngram_min > self.rr_ngram_max {
            return Err(ConfigError(format!(
                "need 1 <= rr_ngram_min <= rr_ngram_max, got {}..{}",
                self.rr_ngram_min, self.rr_ngram_max
            )));
        }
        if self.rr_window == 0 || self.rr_stride == Some(0) {
            return Err(ConfigError("rr window and stride must be positive".into()));
        }
        if self.bleu_max_order == 0 {
            return Err(ConfigError("bleu_max_order must be positive".into()));
        }
        if !(self.derail_threshold > 0.0 && self.derail_threshold <= 1.0) {
            return Err(ConfigError(format!(
                "derail_threshold must lie in (0, 1], got {}",
                self.derail_threshold
            )));
        }
        if self.acc_n_values.iter().any(|&n| n == 0) {
            return Err(ConfigError("Acc@N values must be positive".into()));
        }
        if let Some(f) = self
            .truncation_fractions
            .iter()
            .find(|f| !(**f > 0.0 && **f < 1.0))
        {
            return Err(ConfigError(format!("truncation fraction {f} outside (0, 1)")));
        }
        if self.min_window < 2 {
            return Err(ConfigError("min_window must be at least 2".into()));
        }
        Ok(())
    }

    pub fn rr_stride(&self) -> usize {
        self.rr_stride.unwrap_or(self.rr_window)
    }
}
