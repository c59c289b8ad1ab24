//! Prompt assembly. Both templates ask for a two-stage answer: a short
//! movement strategy, then the waypoint lists the parser reads.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::env::{RewardConstants, Scenario, WorldState};
use crate::geometry::Vec2;

pub const COMPLIANCE_PHRASE: &str = "STRICTLY COMPLY with the following order";
pub const STRATEGY_HEADER: &str = "## Movement Strategy";
pub const TRAJECTORY_HEADER: &str = "## Trajectory Generation";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    /// Field, agents and the instruction only.
    #[default]
    Base,
    /// Adds the task description, reward constants, and every resource and
    /// invader position.
    TaskAligned,
}

/// Task information carried by the task-aligned prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub rewards: RewardConstants,
    pub home: Vec2,
    pub resources: Vec<Vec2>,
    pub invader: Option<Vec2>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub variant: PromptVariant,
    pub half_extent: f64,
    pub agents: Vec<Vec2>,
    pub instruction: String,
    /// Waypoints requested per agent.
    pub waypoints: usize,
    pub task: Option<TaskContext>,
}

impl PromptSpec {
    /// Binds every template variable from a world snapshot. Task context is
    /// filled in only for the task-aligned variant.
    pub fn from_world(
        variant: PromptVariant,
        world: &WorldState,
        scenario: &Scenario,
        instruction: &str,
        waypoints: usize,
    ) -> Self {
        let task = (variant == PromptVariant::TaskAligned).then(|| TaskContext {
            rewards: scenario.rewards,
            home: world.home.position,
            resources: world.resources.iter().filter(|r| r.active).map(|r| r.position).collect(),
            invader: world.invader.active.then_some(world.invader.position),
        });
        Self {
            variant,
            half_extent: scenario.half_extent(),
            agents: world.positions(),
            instruction: instruction.to_string(),
            waypoints,
            task,
        }
    }
}

fn point(p: Vec2) -> String {
    format!("({:.2}, {:.2})", p.x, p.y)
}

/// Deterministic template instantiation.
pub fn assemble_prompt(spec: &PromptSpec) -> Result<String, LlmError> {
    let instruction = spec.instruction.trim();
    if instruction.is_empty() {
        return Err(LlmError::Unbound("instruction"));
    }
    if spec.agents.is_empty() {
        return Err(LlmError::Unbound("agents"));
    }
    if spec.waypoints == 0 {
        return Err(LlmError::Unbound("waypoints"));
    }
    if spec.half_extent.is_nan() || spec.half_extent <= 0.0 {
        return Err(LlmError::Unbound("field"));
    }
    let task = match (spec.variant, &spec.task) {
        (PromptVariant::Base, _) => None,
        (PromptVariant::TaskAligned, Some(t)) => Some(t),
        (PromptVariant::TaskAligned, None) => return Err(LlmError::Unbound("task")),
    };

    let h = spec.half_extent;
    let n = spec.agents.len();
    let mut p = String::new();
    // Writing into a String cannot fail.
    let _ = writeln!(p, "# Field");
    let _ = writeln!(
        p,
        "You direct {n} robots on a 2D field. x ranges from {:.2} to {:.2} and y ranges from {:.2} to {:.2} (meters).",
        -h, h, -h, h
    );
    let _ = writeln!(p, "The positive x axis points right and the positive y axis points up.");
    if let Some(t) = task {
        let r = &t.rewards;
        let _ = writeln!(p);
        let _ = writeln!(p, "# Task");
        let _ = writeln!(
            p,
            "The robots pick up resources, carry them to the home base at {}, and defend the home base against an invader.",
            point(t.home)
        );
        let _ = writeln!(p, "Rewards:");
        let _ = writeln!(p, "- pick up a resource: {}", r.pick);
        let _ = writeln!(p, "- deliver a resource to home: {}", r.collect);
        let _ = writeln!(p, "- defend against the invader: {}", r.defense);
        let _ = writeln!(p, "- invader reaches home: {}", r.breach);
    }
    let _ = writeln!(p);
    let _ = writeln!(p, "# Initial Configuration");
    for (i, &a) in spec.agents.iter().enumerate() {
        let _ = writeln!(p, "agent {i}: {}", point(a));
    }
    if let Some(t) = task {
        for (j, &r) in t.resources.iter().enumerate() {
            let _ = writeln!(p, "resource {j}: {}", point(r));
        }
        if let Some(inv) = t.invader {
            let _ = writeln!(p, "invader: {}", point(inv));
        }
    }
    let _ = writeln!(p);
    let _ = writeln!(p, "# Instruction");
    let _ = writeln!(p, "{COMPLIANCE_PHRASE}: {instruction}");
    let _ = writeln!(p);
    let _ = writeln!(p, "# Output");
    let _ = writeln!(p, "Answer in two stages, using these exact headers.");
    let _ = writeln!(p, "{STRATEGY_HEADER}");
    let _ = writeln!(p, "Explain in a few sentences how each robot moves to follow the order.");
    let _ = writeln!(p, "{TRAJECTORY_HEADER}");
    let _ = writeln!(
        p,
        "Give exactly {} waypoints per robot, one line per robot, all inside the field:",
        spec.waypoints
    );
    let _ = writeln!(p, "agent 0: (x1, y1), (x2, y2), ...");
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(variant: PromptVariant) -> PromptSpec {
        let scenario = Scenario::default();
        let world = WorldState::reset(5, &scenario).unwrap();
        PromptSpec::from_world(variant, &world, &scenario, "Gather Center", 4)
    }

    #[test]
    fn base_prompt_has_no_task_information() {
        let p = assemble_prompt(&spec(PromptVariant::Base)).unwrap();
        assert!(p.contains("STRICTLY COMPLY with the following order: Gather Center"));
        assert!(p.contains(STRATEGY_HEADER) && p.contains(TRAJECTORY_HEADER));
        assert!(p.find(STRATEGY_HEADER) < p.find(TRAJECTORY_HEADER));
        assert!(!p.contains("Rewards") && !p.contains("resource") && !p.contains("invader"));
        assert_eq!(p.matches("\nagent ").count(), 3 + 1);
    }

    #[test]
    fn task_aligned_prompt_lists_rewards_and_entities() {
        let p = assemble_prompt(&spec(PromptVariant::TaskAligned)).unwrap();
        for line in ["- pick up a resource: 5", "- deliver a resource to home: 1", "- defend against the invader: 4", "- invader reaches home: -4"] {
            assert!(p.contains(line), "missing {line:?}");
        }
        assert_eq!(p.matches("\nresource ").count(), 6);
        assert!(p.contains("\ninvader: ("));
        assert!(p.contains(COMPLIANCE_PHRASE));
    }

    #[test]
    fn assembly_is_deterministic() {
        let s = spec(PromptVariant::TaskAligned);
        assert_eq!(assemble_prompt(&s).unwrap(), assemble_prompt(&s.clone()).unwrap());
    }

    #[test]
    fn unbound_variables_are_errors() {
        let mut s = spec(PromptVariant::Base);
        s.instruction = "  ".into();
        assert!(matches!(assemble_prompt(&s), Err(LlmError::Unbound("instruction"))));
        let mut s = spec(PromptVariant::TaskAligned);
        s.task = None;
        assert!(matches!(assemble_prompt(&s), Err(LlmError::Unbound("task"))));
    }
}
