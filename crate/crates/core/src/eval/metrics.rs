use serde::{Deserialize, Serialize};

use crate::env::{Event, EventCounts, RewardBreakdown};

/// Totals for one trial (or one instruction segment of a trial).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub seed: u64,
    pub steps: usize,
    pub picks: u32,
    pub collects: u32,
    pub defenses: u32,
    pub breaches: u32,
    pub reward: f64,
    pub r_task: f64,
    pub r_inst: f64,
    /// Mean over steps and agents.
    pub mean_e_cossim: f64,
    /// Mean distance from each agent to its nearest waypoint, over steps and agents.
    pub mean_waypoint_distance: f64,
}

/// Running sums for [`TrialMetrics`].
#[derive(Clone, Debug, Default)]
pub struct TrialAccumulator {
    steps: usize,
    events: EventCounts,
    reward: f64,
    r_task: f64,
    r_inst: f64,
    cossim_sum: f64,
    distance_sum: f64,
    agent_steps: usize,
}

impl TrialAccumulator {
    pub fn record(&mut self, reward: &RewardBreakdown, events: &[Event]) {
        self.steps += 1;
        for e in events {
            self.events.record(e);
        }
        self.reward += reward.total();
        self.r_task += reward.r_task;
        self.r_inst += reward.r_inst;
        self.cossim_sum += reward.per_agent_e_cossim.iter().sum::<f64>();
        self.distance_sum -= reward.per_agent_e_dist.iter().sum::<f64>();
        self.agent_steps += reward.per_agent_e_cossim.len();
    }

    pub fn finish(&self, trial: usize, seed: u64) -> TrialMetrics {
        let per_agent = |s: f64| if self.agent_steps == 0 { 0.0 } else { s / self.agent_steps as f64 };
        TrialMetrics {
            trial,
            seed,
            steps: self.steps,
            picks: self.events.picks,
            collects: self.events.collects,
            defenses: self.events.defenses,
            breaches: self.events.breaches,
            reward: self.reward,
            r_task: self.r_task,
            r_inst: self.r_inst,
            mean_e_cossim: per_agent(self.cossim_sum),
            mean_waypoint_distance: per_agent(self.distance_sum),
        }
    }
}

/// Sample mean and standard deviation; the deviation of a single value is 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(1);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.std)
    }
}

/// Per-trial results of one policy under one protocol or instruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub label: String,
    pub trials: Vec<TrialMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub picks: MeanStd,
    pub collects: MeanStd,
    pub defenses: MeanStd,
    pub breaches: MeanStd,
    pub reward: MeanStd,
    pub e_cossim: MeanStd,
    pub waypoint_distance: MeanStd,
}

impl TaskMetrics {
    pub fn summary(&self) -> TaskSummary {
        let col = |f: fn(&TrialMetrics) -> f64| MeanStd::of(self.trials.iter().map(f));
        TaskSummary {
            picks: col(|t| t.picks as f64),
            collects: col(|t| t.collects as f64),
            defenses: col(|t| t.defenses as f64),
            breaches: col(|t| t.breaches as f64),
            reward: col(|t| t.reward),
            e_cossim: col(|t| t.mean_e_cossim),
            waypoint_distance: col(|t| t.mean_waypoint_distance),
        }
    }
}
