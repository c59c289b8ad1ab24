//! Rule-based stand-in for the language model, keyed on the four reference
//! instructions. Output goes through the same text grammar as a real reply.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use super::client::LlmClient;
use super::parse::serialize_response;
use super::prompt::PromptSpec;
use super::LlmError;
use crate::geometry::Vec2;

/// Distance kept between mock formations and the field edge (m).
pub const EDGE_MARGIN: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionTag {
    GoRight,
    MoveTop,
    GatherCenter,
    SpreadOut,
}

impl InstructionTag {
    pub const ALL: [InstructionTag; 4] = [Self::GoRight, Self::MoveTop, Self::GatherCenter, Self::SpreadOut];

    pub fn text(self) -> &'static str {
        match self {
            Self::GoRight => "Go Right",
            Self::MoveTop => "Move Top",
            Self::GatherCenter => "Gather Center",
            Self::SpreadOut => "Spread Out",
        }
    }

    /// Recognizes the tag inside free text, ignoring case and punctuation.
    pub fn recognize(text: &str) -> Option<Self> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let has = |w: &str| words.iter().any(|x| x == w);
        if has("gather") || has("center") || has("centre") {
            Some(Self::GatherCenter)
        } else if has("spread") {
            Some(Self::SpreadOut)
        } else if has("right") {
            Some(Self::GoRight)
        } else if has("top") || has("up") {
            Some(Self::MoveTop)
        } else {
            None
        }
    }
}

impl std::fmt::Display for InstructionTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.text())
    }
}

/// `k` evenly spaced points from `from` (exclusive) to `to` (inclusive).
pub fn interpolate(from: Vec2, to: Vec2, k: usize) -> Vec<Vec2> {
    (1..=k).map(|j| from + (to - from) * (j as f64 / k as f64)).collect()
}

/// Evenly spread lane coordinates over the middle half of the field.
fn lanes(n: usize, half_extent: f64) -> Vec<f64> {
    let span = half_extent / 2.0;
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|j| -span + 2.0 * span * j as f64 / (n - 1) as f64).collect()
}

/// Agents ranked by `key`, ties by index, so lane assignment never crosses paths.
fn rank_by(agents: &[Vec2], key: impl Fn(Vec2) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.sort_by(|&a, &b| key(agents[a]).total_cmp(&key(agents[b])).then(a.cmp(&b)));
    let mut rank = vec![0; agents.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Mock waypoints and a one-line strategy for `tag`.
pub fn mock_waypoints(tag: InstructionTag, agents: &[Vec2], k: usize, half_extent: f64) -> (String, Vec<Vec<Vec2>>) {
    let edge = half_extent - EDGE_MARGIN;
    let n = agents.len();
    let lane = lanes(n, half_extent);
    let waypoints: Vec<Vec<Vec2>> = match tag {
        InstructionTag::GoRight => {
            let rank = rank_by(agents, |p| p.y);
            agents
                .iter()
                .enumerate()
                .map(|(i, &p)| interpolate(p, Vec2::new(edge, lane[rank[i]]), k))
                .collect()
        }
        InstructionTag::MoveTop => {
            let rank = rank_by(agents, |p| p.x);
            agents
                .iter()
                .enumerate()
                .map(|(i, &p)| interpolate(p, Vec2::new(lane[rank[i]], edge), k))
                .collect()
        }
        InstructionTag::GatherCenter => agents.iter().map(|&p| interpolate(p, Vec2::ZERO, k)).collect(),
        InstructionTag::SpreadOut => (0..n)
            .map(|i| {
                let angle = FRAC_PI_2 + TAU * i as f64 / n as f64;
                let end = Vec2::new(edge * angle.cos(), edge * angle.sin());
                interpolate(Vec2::ZERO, end, k)
            })
            .collect(),
    };
    let strategy = match tag {
        InstructionTag::GoRight => "Each robot moves right and takes its own row, forming a vertical line near the right edge.",
        InstructionTag::MoveTop => "Each robot moves up and takes its own column, forming a horizontal line near the top edge.",
        InstructionTag::GatherCenter => "Every robot moves in a straight line to the origin.",
        InstructionTag::SpreadOut => "The robots leave the center along rays at equal angles toward the field boundary.",
    };
    (strategy.to_string(), waypoints)
}

/// Client that answers from [`mock_waypoints`] using the bound prompt spec.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockClient;

impl LlmClient for MockClient {
    fn complete(&mut self, _prompt: &str, spec: &PromptSpec) -> Result<String, LlmError> {
        let tag = InstructionTag::recognize(&spec.instruction)
            .ok_or_else(|| LlmError::UnknownInstruction(spec.instruction.clone()))?;
        let (strategy, waypoints) = mock_waypoints(tag, &spec.agents, spec.waypoints, spec.half_extent);
        Ok(serialize_response(&strategy, &waypoints))
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}
