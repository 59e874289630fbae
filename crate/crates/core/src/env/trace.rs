use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Action, Observation, StepResult, WorldState};

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u32,
    pub action: Action,
    pub rewards: [f64; 3],
    pub battery: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub done: bool,
}

impl TraceRecord {
    pub fn new(action: Action, result: &StepResult, state: &WorldState) -> Self {
        Self {
            step: result.info.step,
            action,
            rewards: result.rewards.0,
            battery: result.info.battery,
            x: state.agent.x,
            y: state.agent.y,
            heading: state.agent.heading,
            done: result.done,
        }
    }
}

/// Writes trace records as JSON lines.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, rec: &TraceRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Dumps a frame as raw row-major bytes.
pub fn write_frame(path: &Path, obs: &Observation) -> io::Result<()> {
    std::fs::write(path, &obs.pixels)
}
