use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Select,
    Inject,
    Broadcast,
    Reverberate,
    Readout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub phase: Phase,
    pub module: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scores: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dz_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub connected: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iteration: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl TraceEvent {
    pub fn new(step: u64, phase: Phase) -> Self {
        TraceEvent {
            step,
            phase,
            module: None,
            scores: None,
            amplitude: None,
            dz_norm: None,
            connected: None,
            iteration: None,
            note: None,
        }
    }

    pub fn module(mut self, m: usize) -> Self {
        self.module = Some(m);
        self
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.note = Some(n.into());
        self
    }
}

/// Append-only event log with non-decreasing step numbers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, e: TraceEvent) {
        debug_assert!(self.events.last().is_none_or(|l| l.step <= e.step));
        self.events.push(e);
    }

    pub fn extend(&mut self, other: Trace) {
        for e in other.events {
            self.push(e);
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut t = Trace::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            t.push(serde_json::from_str(line)?);
        }
        Ok(t)
    }
}

/// Per-tick row of the summary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickSummary {
    pub step: u64,
    pub n_connected: usize,
    pub amplitude: f64,
    pub dz_norm: f64,
    pub ignited: bool,
}

pub fn summaries_to_csv(rows: &[TickSummary]) -> String {
    let mut out = String::from("step,n_connected,amplitude,dz_norm,ignited\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{}",
            r.step, r.n_connected, r.amplitude, r.dz_norm, r.ignited
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut t = Trace::new();
        t.push(TraceEvent::new(0, Phase::Select));
        let mut e = TraceEvent::new(1, Phase::Reverberate);
        e.amplitude = Some(0.25);
        e.dz_norm = Some(1e-3);
        e.iteration = Some(4);
        t.push(e);
        t.push(TraceEvent::new(1, Phase::Inject).module(2).note("disconnected"));
        let text = t.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(Trace::from_jsonl(&text).unwrap(), t);
        assert!(text.lines().next().unwrap().contains("\"phase\":\"select\""));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![TickSummary { step: 3, n_connected: 2, amplitude: 0.5, dz_norm: 0.0, ignited: true }];
        let csv = summaries_to_csv(&rows);
        assert_eq!(csv, "step,n_connected,amplitude,dz_norm,ignited\n3,2,0.5,0.0,true\n");
    }
}
