//! Constrained decoding over the control-token grammar: sampling policy,
//! plan-guided generation, free Front generation, infilling, and a
//! deterministic syllable oracle standing in for a trained model.

pub mod exec;
pub mod oracle;
pub mod sampling;
pub mod score;
pub mod session;
pub mod trace;

use serde::{Deserialize, Serialize};
use syllaform_core::planner::PlanError;
use syllaform_core::tokenizer::TokenizerError;
use syllaform_lm::LmError;
use thiserror::Error;

pub use exec::{execute_baseline, execute_infill, execute_plan, Decoded, Provenance, SegmentRecord};
pub use oracle::OracleModel;
pub use sampling::{sample_masked, sample_next};
pub use score::{realized_pairs, score_infill};
pub use session::{TokenModel, TransformerSession};
pub use trace::{FnSink, NoTrace, TraceEvent, TraceSink};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode parameters: {0}")]
    InvalidParams(String),
    #[error("context window of {limit} tokens exhausted")]
    BudgetExhausted { limit: usize },
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
    #[error("no token is allowed at this step")]
    NoAllowedToken,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Model(#[from] LmError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub repetition_penalty: f64,
    /// Text tokens allowed per segment before its END is injected.
    /// `None` means `4 * syllable_target + 8`.
    pub max_tokens_per_segment: Option<usize>,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { top_k: 20, top_p: 0.9, temperature: 1.0, repetition_penalty: 1.2, max_tokens_per_segment: None, seed: 0 }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidParams(m.into()));
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return bad("repetition_penalty must be at least 1");
        }
        Ok(())
    }

    pub fn segment_budget(&self, syllable_target: u32) -> usize {
        self.max_tokens_per_segment.unwrap_or(4 * syllable_target as usize + 8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let p = DecodeParams::default();
        assert!(p.validate().is_ok());
        assert_eq!(p.segment_budget(5), 28);
        assert_eq!(DecodeParams { max_tokens_per_segment: Some(0), ..p.clone() }.segment_budget(5), 0);
        for bad in [
            DecodeParams { top_k: 0, ..p.clone() },
            DecodeParams { top_p: 0.0, ..p.clone() },
            DecodeParams { top_p: 1.5, ..p.clone() },
            DecodeParams { temperature: 0.0, ..p.clone() },
            DecodeParams { repetition_penalty: 0.9, ..p.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let parsed: DecodeParams = serde_json::from_str(r#"{"top_k": 5}"#).unwrap();
        assert_eq!(parsed.top_k, 5);
        assert_eq!(parsed.top_p, 0.9);
    }
}
