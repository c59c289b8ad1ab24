//! Instruction vectors: per-agent waypoint sequences, the random-walk sampler
//! used during training, clipping, and the instruction-following reward.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cosine_similarity, Vec2};

/// Multiplier on `e_cossim + DISTANCE_WEIGHT * e_dist`.
pub const INSTRUCTION_GAIN: f64 = 1.3;
pub const DISTANCE_WEIGHT: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum InstructionError {
    #[error("instruction has no waypoints")]
    Empty,
    #[error("agent {agent} has {actual} waypoints, expected {expected}")]
    RaggedWaypoints { agent: usize, expected: usize, actual: usize },
    #[error("flat instruction length {actual} does not match {n_agents} agents x {k} waypoints")]
    FlatLength { n_agents: usize, k: usize, actual: usize },
    #[error("random-walk standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),
}

/// Waypoint sequences for every agent, all of the same length `K`.
///
/// Serialized as `{"refresh_step": t, "waypoints": [[[x, y], ...], ...]}`, one
/// list of pairs per agent in agent-index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionVector {
    pub refresh_step: usize,
    waypoints: Vec<Vec<Vec2>>,
}

impl InstructionVector {
    pub fn new(waypoints: Vec<Vec<Vec2>>, refresh_step: usize) -> Result<Self, InstructionError> {
        let k = waypoints.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(InstructionError::Empty);
        }
        if let Some((agent, w)) = waypoints.iter().enumerate().find(|(_, w)| w.len() != k) {
            return Err(InstructionError::RaggedWaypoints {
                agent,
                expected: k,
                actual: w.len(),
            });
        }
        Ok(Self {
            refresh_step,
            waypoints,
        })
    }

    /// Every waypoint placed on its agent's current position.
    pub fn hold(positions: &[Vec2], k: usize, refresh_step: usize) -> Self {
        Self {
            refresh_step,
            waypoints: positions.iter().map(|&p| vec![p; k]).collect(),
        }
    }

    pub fn zeros(n_agents: usize, k: usize) -> Self {
        Self::hold(&vec![Vec2::ZERO; n_agents], k, 0)
    }

    pub fn n_agents(&self) -> usize {
        self.waypoints.len()
    }

    pub fn k(&self) -> usize {
        self.waypoints.first().map_or(0, Vec::len)
    }

    pub fn agent(&self, i: usize) -> &[Vec2] {
        &self.waypoints[i]
    }

    pub fn waypoints(&self) -> &[Vec<Vec2>] {
        &self.waypoints
    }

    /// `[x, y]` pairs, row-major by agent index.
    pub fn flatten(&self) -> Vec<f64> {
        self.waypoints.iter().flatten().flat_map(|w| [w.x, w.y]).collect()
    }

    pub fn flat_len(&self) -> usize {
        self.n_agents() * self.k() * 2
    }

    pub fn from_flat(n_agents: usize, k: usize, flat: &[f64], refresh_step: usize) -> Result<Self, InstructionError> {
        if k == 0 || flat.len() != n_agents * k * 2 {
            return Err(InstructionError::FlatLength {
                n_agents,
                k,
                actual: flat.len(),
            });
        }
        let waypoints = flat
            .chunks(k * 2)
            .map(|agent| agent.chunks(2).map(|p| Vec2::new(p[0], p[1])).collect())
            .collect();
        Self::new(waypoints, refresh_step)
    }

    /// Agent `i`'s waypoints expressed relative to `origin`, flattened.
    pub fn relative_to(&self, i: usize, origin: Vec2) -> Vec<f64> {
        self.waypoints[i]
            .iter()
            .flat_map(|&w| (w - origin).to_array())
            .collect()
    }

    pub fn clipped(&self, half_extent: f64) -> Self {
        Self {
            refresh_step: self.refresh_step,
            waypoints: self
                .waypoints
                .iter()
                .map(|w| clip_to_field(w, half_extent))
                .collect(),
        }
    }

    pub fn within_field(&self, half_extent: f64) -> bool {
        self.waypoints
            .iter()
            .flatten()
            .all(|w| w.x.abs() <= half_extent && w.y.abs() <= half_extent)
    }
}

/// Gaussian increments for the training-time random walk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkNoise {
    sigma: f64,
}

impl WalkNoise {
    pub fn new(sigma: f64) -> Result<Self, InstructionError> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self { sigma })
        } else {
            Err(InstructionError::NonPositiveSigma(sigma))
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Vec2 {
        let normal = Normal::new(0.0, self.sigma).expect("validated sigma");
        Vec2::new(normal.sample(rng), normal.sample(rng))
    }
}

/// An axis-aligned box that waypoints are confined to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Vec2,
    pub max: Vec2,
}

impl Region {
    pub fn square(half_extent: f64) -> Self {
        Self {
            min: Vec2::new(-half_extent, -half_extent),
            max: Vec2::new(half_extent, half_extent),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        p.clamp_box(self.min, self.max)
    }
}

/// `origin + cumulative sums of increments`, each waypoint clamped into `region`.
/// The running sum itself is not clamped, so consecutive unclipped differences
/// are exactly the increments.
pub fn walk_from_increments(origin: Vec2, increments: &[Vec2], region: Region) -> Vec<Vec2> {
    let mut acc = origin;
    increments
        .iter()
        .map(|&eps| {
            acc += eps;
            region.clamp(acc)
        })
        .collect()
}

/// `K` waypoints `origin + Σ_{j≤k} ε_j` with `ε_j ~ N(0, σ² I)`, clipped to the field.
pub fn sample_random_walk(origin: Vec2, k: usize, noise: &WalkNoise, half_extent: f64, rng: &mut impl Rng) -> Vec<Vec2> {
    sample_random_walk_in(origin, k, noise, Region::square(half_extent), rng)
}

pub fn sample_random_walk_in(origin: Vec2, k: usize, noise: &WalkNoise, region: Region, rng: &mut impl Rng) -> Vec<Vec2> {
    let increments: Vec<Vec2> = (0..k).map(|_| noise.draw(rng)).collect();
    walk_from_increments(origin, &increments, region)
}

/// Clamps every coordinate into `[-half_extent, half_extent]`. Idempotent.
pub fn clip_to_field(waypoints: &[Vec2], half_extent: f64) -> Vec<Vec2> {
    waypoints.iter().map(|w| w.clamp_square(half_extent)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionReward {
    pub e_cossim: f64,
    pub e_dist: f64,
    pub r_inst: f64,
}

/// Index of the waypoint closest to `p`; ties go to the earlier waypoint.
pub fn nearest_waypoint(p: Vec2, waypoints: &[Vec2]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, w) in waypoints.iter().enumerate() {
        let d = p.distance(*w);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Direction the agent is asked to move in: from the nearest waypoint to the
/// waypoint after it in the sequence. With a single waypoint, or when the
/// nearest waypoint is the last one, the agent is pointed at it directly.
pub fn guide_direction(position: Vec2, waypoints: &[Vec2]) -> Option<Vec2> {
    let n = nearest_waypoint(position, waypoints)?;
    Some(match waypoints.get(n + 1) {
        Some(&next) => next - waypoints[n],
        None => waypoints[n] - position,
    })
}

/// `r_inst = 1.3 (e_cossim + 0.1 e_dist)`, where `e_cossim` compares the
/// agent's displacement with [`guide_direction`] and `e_dist` is the negated
/// distance to the nearest waypoint.
pub fn instruction_reward(prev_position: Vec2, position: Vec2, waypoints: &[Vec2]) -> Result<InstructionReward, InstructionError> {
    let n = nearest_waypoint(position, waypoints).ok_or(InstructionError::Empty)?;
    let guide = guide_direction(position, waypoints).ok_or(InstructionError::Empty)?;
    let e_cossim = cosine_similarity(position - prev_position, guide);
    let e_dist = -position.distance(waypoints[n]);
    Ok(InstructionReward {
        e_cossim,
        e_dist,
        r_inst: INSTRUCTION_GAIN * (e_cossim + DISTANCE_WEIGHT * e_dist),
    })
}
