//! Line-delimited JSON episode logs: one [`StepRecord`] per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::state::{Event, RewardBreakdown, WorldState};
use super::EnvError;
use crate::instruction::InstructionVector;

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub version: u32,
    /// Index of the step that produced this record (0-based).
    pub step: usize,
    /// State after the step.
    pub state: WorldState,
    pub actions: Vec<usize>,
    pub reward: RewardBreakdown,
    pub events: Vec<Event>,
    pub instructions: InstructionVector,
}

pub struct ReplayWriter<W: Write> {
    out: W,
}

impl<W: Write> ReplayWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &StepRecord) -> Result<(), EnvError> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_log(input: impl BufRead) -> Result<Vec<StepRecord>, EnvError> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StepRecord = serde_json::from_str(&line)?;
        if record.version != LOG_VERSION {
            return Err(EnvError::LogVersion(record.version));
        }
        records.push(record);
    }
    Ok(records)
}
