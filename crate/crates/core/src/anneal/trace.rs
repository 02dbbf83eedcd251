//! JSON-lines export of a chain: one record per iteration, then a summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnealRun, TraceStep};
use crate::error::Result;
use crate::io::{to_json_lines, write_atomic};
use crate::mask::WeightBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Step(TraceStep),
    Summary {
        best_state: String,
        best_cost: f64,
        epsilon: f64,
        bounds: WeightBounds,
        seed: u64,
        t0: f64,
        iterations: u64,
        accepted: u64,
        states_per_second: f64,
    },
}

pub fn trace_records(run: &AnnealRun) -> Vec<TraceRecord> {
    let mut out: Vec<TraceRecord> = run.trace.iter().cloned().map(TraceRecord::Step).collect();
    out.push(TraceRecord::Summary {
        best_state: run.best_state.to_bit_string(),
        best_cost: run.best_cost,
        epsilon: run.config.epsilon,
        bounds: run.config.bounds,
        seed: run.config.seed,
        t0: run.t0,
        iterations: run.iterations,
        accepted: run.accepted,
        states_per_second: run.states_per_second,
    });
    out
}

pub fn write_trace(path: &Path, run: &AnnealRun) -> Result<()> {
    write_atomic(path, &to_json_lines(&trace_records(run))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anneal::{run as anneal, AnnealConfig, Budget, FnScorer};
    use crate::io::read_json_lines;
    use crate::mask::HeadMask;

    #[test]
    fn trace_file_round_trip() {
        let scorer = FnScorer::new(6, |s: &HeadMask| s.weight() as f64 * 0.1);
        let cfg = AnnealConfig {
            record_trace: true,
            seed: 4,
            ..AnnealConfig::new(
                0.3,
                WeightBounds::new(1, 3).unwrap(),
                Budget::Iterations(50),
            )
        };
        let run = anneal(&cfg, &scorer, &scorer).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        write_trace(&path, &run).unwrap();
        let back: Vec<TraceRecord> = read_json_lines(&path).unwrap();
        assert_eq!(back.len(), 51);
        assert_eq!(back, trace_records(&run));
        match back.last().unwrap() {
            TraceRecord::Summary {
                best_state, seed, ..
            } => {
                assert_eq!(best_state, &run.best_state.to_bit_string());
                assert_eq!(*seed, 4);
            }
            other => panic!("expected summary, got {other:?}"),
        }
    }
}
