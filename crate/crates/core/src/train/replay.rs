use std::collections::VecDeque;

use rand::Rng;

use super::TrainError;
use crate::env::EventCounts;
use crate::geometry::Vec2;
use crate::instruction::InstructionVector;
use crate::nn::Matrix;

/// One collected episode.
///
/// Per-step arrays indexed by `t` have `len() + 1` entries (the state after the
/// final step is kept); per-step action and reward arrays have `len()`. Block
/// arrays hold one entry per instruction refresh, the block for step `t`
/// being `t / refresh_interval`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub refresh_interval: usize,
    /// Row-major `n_agents x obs_dim` per step.
    pub observations: Vec<Vec<f64>>,
    pub positions: Vec<Vec<Vec2>>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub r_task: Vec<f64>,
    pub r_inst: Vec<f64>,
    pub events: EventCounts,
    pub instructions: Vec<InstructionVector>,
    /// Standard-normal draws used for the latent at each refresh; empty
    /// vectors for variants without a coordinator.
    pub noise: Vec<Vec<f64>>,
    /// Agent hidden state at the start of each block.
    pub hidden: Vec<Matrix>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn block_of(&self, t: usize) -> usize {
        t / self.refresh_interval
    }

    pub fn instructions_at(&self, t: usize) -> &InstructionVector {
        &self.instructions[self.block_of(t)]
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn check(&self) -> Result<(), TrainError> {
        let n = self.len();
        let blocks = self.block_of(n) + 1;
        let ok = n > 0
            && self.refresh_interval > 0
            && self.observations.len() == n + 1
            && self.positions.len() == n + 1
            && self.states.len() == n + 1
            && self.rewards.len() == n
            && self.r_task.len() == n
            && self.r_inst.len() == n
            && self.instructions.len() >= blocks
            && self.noise.len() >= blocks
            && self.hidden.len() >= blocks;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Batch(format!("inconsistent episode record (seed {})", self.seed)))
        }
    }
}

/// Fixed-capacity FIFO of episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, episode: EpisodeRecord) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn get(&self, i: usize) -> Option<&EpisodeRecord> {
        self.episodes.get(i)
    }

    /// `batch_size` segments of `segment_len` steps, episodes drawn with
    /// replacement and starts drawn uniformly over refresh boundaries. The
    /// last admissible start still reaches the final step of the episode.
    pub fn sample(&self, batch_size: usize, segment_len: usize, rng: &mut impl Rng) -> Result<TrainBatch<'_>, TrainError> {
        if self.episodes.is_empty() {
            return Err(TrainError::Batch("replay buffer is empty".into()));
        }
        let mut episodes = Vec::with_capacity(batch_size);
        let mut starts = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let ep = &self.episodes[rng.random_range(0..self.episodes.len())];
            let r = ep.refresh_interval;
            let last = ep.len().saturating_sub(segment_len).div_ceil(r);
            starts.push(rng.random_range(0..=last) * r);
            episodes.push(ep);
        }
        TrainBatch::new(episodes, starts, segment_len)
    }
}

/// Segments of replayed episodes. Segment `b` covers steps
/// `starts[b] .. starts[b] + len`; steps at or past the episode end are
/// padding and masked out of every loss.
#[derive(Clone, Debug)]
pub struct TrainBatch<'a> {
    pub episodes: Vec<&'a EpisodeRecord>,
    pub starts: Vec<usize>,
    pub len: usize,
}

impl<'a> TrainBatch<'a> {
    pub fn new(episodes: Vec<&'a EpisodeRecord>, starts: Vec<usize>, len: usize) -> Result<Self, TrainError> {
        if episodes.is_empty() || episodes.len() != starts.len() {
            return Err(TrainError::Batch("batch needs one start per episode".into()));
        }
        let r = episodes[0].refresh_interval;
        if len == 0 || !len.is_multiple_of(r) {
            return Err(TrainError::Batch(format!(
                "segment length {len} must be a positive multiple of the refresh interval {r}"
            )));
        }
        for (ep, &s) in episodes.iter().zip(&starts) {
            ep.check()?;
            if ep.refresh_interval != r || s % r != 0 || s >= ep.len() {
                return Err(TrainError::Batch(format!("segment start {s} is not a block start inside the episode")));
            }
        }
        Ok(Self { episodes, starts, len })
    }

    pub fn size(&self) -> usize {
        self.episodes.len()
    }

    pub fn refresh_interval(&self) -> usize {
        self.episodes[0].refresh_interval
    }

    pub fn blocks(&self) -> usize {
        self.len / self.refresh_interval()
    }

    /// Step index of `offset` within segment `b`, clamped to the last stored step.
    pub fn step(&self, b: usize, offset: usize) -> usize {
        (self.starts[b] + offset).min(self.episodes[b].len())
    }

    pub fn valid(&self, b: usize, offset: usize) -> bool {
        self.starts[b] + offset < self.episodes[b].len()
    }
}
