use serde::{Deserialize, Serialize};

use crate::exec::Provenance;

/// One consumed id in a decode session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: usize,
    pub id: u32,
    /// Control token surface, or the raw bytes of a text id (lossy UTF-8).
    pub surface: String,
    pub provenance: Provenance,
    /// Rank of `id` under the logits the model produced for this step;
    /// 0 is the model's top choice.
    pub logit_rank: usize,
}

impl TraceEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }
}

pub trait TraceSink {
    fn event(&mut self, e: &TraceEvent);
}

pub struct NoTrace;

impl TraceSink for NoTrace {
    fn event(&mut self, _: &TraceEvent) {}
}

impl TraceSink for Vec<TraceEvent> {
    fn event(&mut self, e: &TraceEvent) {
        self.push(e.clone());
    }
}

/// Forwards every event to a closure.
pub struct FnSink<F>(pub F);

impl<F: FnMut(&TraceEvent)> TraceSink for FnSink<F> {
    fn event(&mut self, e: &TraceEvent) {
        (self.0)(e)
    }
}
