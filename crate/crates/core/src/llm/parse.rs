//! Response grammar.
//!
//! Canonical form:
//!
//! ```text
//! ## Movement Strategy
//! free text
//! ## Trajectory Generation
//! agent 0: (x, y), (x, y), ...
//! agent 1: ...
//! ```
//!
//! The strict parser accepts exactly this. Anything else goes through a
//! tolerant fallback that pulls `(x, y)` pairs out of the trajectory section.

use std::fmt::Write;
use std::sync::LazyLock;

use regex::Regex;

use super::prompt::{STRATEGY_HEADER, TRAJECTORY_HEADER};
use crate::geometry::Vec2;

static AGENT_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^agent (\d+): (\(.*\))$").expect("valid regex"));
static STRICT_PAIR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\((-?\d+(?:\.\d+)?), (-?\d+(?:\.\d+)?)\)$").expect("valid regex"));
static LOOSE_PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[(\[]\s*([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*,\s*([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*[)\]]").expect("valid regex")
});

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no waypoints found")]
    Empty,
    #[error("expected {expected} agents, found {found}")]
    AgentCount { expected: usize, found: usize },
    #[error("agent {agent}: expected {expected} waypoints, found {found}")]
    WaypointCount { agent: usize, expected: usize, found: usize },
    #[error("malformed line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedResponse {
    pub strategy: String,
    /// One sequence per agent, in agent order.
    pub waypoints: Vec<Vec<Vec2>>,
    /// True when the strict grammar did not match.
    pub fallback: bool,
}

/// Parses a response for `n_agents` agents with `k` waypoints each.
pub fn parse_response(text: &str, n_agents: usize, k: usize) -> Result<ParsedResponse, ParseError> {
    match parse_strict(text, n_agents, k) {
        Ok(p) => Ok(p),
        Err(strict) => parse_fallback(text, n_agents, k).map_err(|fallback| {
            // The fallback error is usually the more informative one, except
            // when the strict grammar got as far as counting.
            match strict {
                ParseError::AgentCount { .. } | ParseError::WaypointCount { .. } => strict,
                _ => fallback,
            }
        }),
    }
}

fn check_counts(waypoints: &[Vec<Vec2>], n_agents: usize, k: usize) -> Result<(), ParseError> {
    if waypoints.len() != n_agents {
        return Err(ParseError::AgentCount {
            expected: n_agents,
            found: waypoints.len(),
        });
    }
    for (agent, w) in waypoints.iter().enumerate() {
        if w.len() != k {
            return Err(ParseError::WaypointCount {
                agent,
                expected: k,
                found: w.len(),
            });
        }
    }
    Ok(())
}

pub fn parse_strict(text: &str, n_agents: usize, k: usize) -> Result<ParsedResponse, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let malformed = |line: usize, reason: &str| ParseError::Malformed {
        line: line + 1,
        reason: reason.to_string(),
    };
    if lines.first() != Some(&STRATEGY_HEADER) {
        return Err(malformed(0, "missing strategy header"));
    }
    let traj = lines
        .iter()
        .position(|l| *l == TRAJECTORY_HEADER)
        .ok_or_else(|| malformed(lines.len(), "missing trajectory header"))?;
    let strategy = lines[1..traj].join("\n");
    let mut waypoints = Vec::new();
    for (offset, line) in lines[traj + 1..].iter().enumerate() {
        let at = traj + 1 + offset;
        let caps = AGENT_LINE.captures(line).ok_or_else(|| malformed(at, "expected `agent i: (x, y), ...`"))?;
        let index: usize = caps[1].parse().map_err(|_| malformed(at, "bad agent index"))?;
        if index != waypoints.len() {
            return Err(malformed(at, "agents out of order"));
        }
        let mut seq = Vec::new();
        for pair in caps[2].split("), (") {
            let pair = format!(
                "({})",
                pair.trim_start_matches('(').trim_end_matches(')')
            );
            let p = STRICT_PAIR.captures(&pair).ok_or_else(|| malformed(at, "bad coordinate pair"))?;
            let x: f64 = p[1].parse().map_err(|_| malformed(at, "bad number"))?;
            let y: f64 = p[2].parse().map_err(|_| malformed(at, "bad number"))?;
            seq.push(Vec2::new(x, y));
        }
        waypoints.push(seq);
    }
    if waypoints.is_empty() {
        return Err(ParseError::Empty);
    }
    check_counts(&waypoints, n_agents, k)?;
    Ok(ParsedResponse {
        strategy,
        waypoints,
        fallback: false,
    })
}

fn pairs(line: &str) -> Vec<Vec2> {
    LOOSE_PAIR
        .captures_iter(line)
        .filter_map(|c| Some(Vec2::new(c[1].parse().ok()?, c[2].parse().ok()?)))
        .filter(|p| p.x.is_finite() && p.y.is_finite())
        .collect()
}

/// Pattern-based extraction: every line of the trajectory section that holds
/// coordinate pairs is one agent; failing that, all pairs are split evenly.
pub fn parse_fallback(text: &str, n_agents: usize, k: usize) -> Result<ParsedResponse, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let find = |needle: &str| lines.iter().position(|l| l.to_lowercase().contains(needle));
    let traj = find("trajectory generation");
    let strategy = match (find("movement strategy"), traj) {
        (Some(s), Some(t)) if s < t => lines[s + 1..t].join("\n").trim().to_string(),
        _ => String::new(),
    };
    let section = &lines[traj.map_or(0, |t| t + 1)..];
    let per_line: Vec<Vec<Vec2>> = section.iter().map(|l| pairs(l)).filter(|p| !p.is_empty()).collect();
    let waypoints = if per_line.len() == n_agents {
        per_line
    } else {
        let all: Vec<Vec2> = per_line.into_iter().flatten().collect();
        if all.is_empty() {
            return Err(ParseError::Empty);
        }
        if all.len() != n_agents * k {
            return Err(ParseError::AgentCount {
                expected: n_agents,
                found: all.len() / k.max(1),
            });
        }
        all.chunks(k).map(<[Vec2]>::to_vec).collect()
    };
    check_counts(&waypoints, n_agents, k)?;
    Ok(ParsedResponse {
        strategy,
        waypoints,
        fallback: true,
    })
}

/// Canonical text of a parsed response. `serialize(parse(x)) == x` for every
/// response already in canonical form.
pub fn serialize_response(strategy: &str, waypoints: &[Vec<Vec2>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{STRATEGY_HEADER}");
    let strategy = strategy.trim();
    if !strategy.is_empty() {
        let _ = writeln!(out, "{strategy}");
    }
    let _ = writeln!(out, "{TRAJECTORY_HEADER}");
    for (i, seq) in waypoints.iter().enumerate() {
        let points: Vec<String> = seq.iter().map(|p| format!("({}, {})", p.x, p.y)).collect();
        let _ = writeln!(out, "agent {i}: {}", points.join(", "));
    }
    out
}

impl ParsedResponse {
    pub fn serialize(&self) -> String {
        serialize_response(&self.strategy, &self.waypoints)
    }
}
