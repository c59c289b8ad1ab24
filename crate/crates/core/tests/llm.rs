use std::path::{Path, PathBuf};

use icco_core::env::{Scenario, WorldState};
use icco_core::llm::{
    assemble_prompt, parse_response, prompt_hash, LlmClient, LlmError, MockClient, PromptSpec, PromptVariant,
    ReplayClient, Translate, Translator,
};
use icco_core::Vec2;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/llm")
}

fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixtures().join(name)).unwrap()
}

#[test]
fn canonical_response_round_trips_byte_exact() {
    let text = fixture("canonical.txt");
    let parsed = parse_response(&text, 3, 4).unwrap();
    assert!(!parsed.fallback);
    assert_eq!(parsed.waypoints[2][2], Vec2::new(0.0625, -0.875));
    assert_eq!(parsed.serialize(), text);
}

#[test]
fn messy_response_normalizes_to_golden() {
    let parsed = parse_response(&fixture("messy.txt"), 3, 4).unwrap();
    assert!(parsed.fallback);
    assert_eq!(parsed.serialize(), fixture("messy.normalized.txt"));
    // The normalized form is itself canonical.
    let again = parse_response(&fixture("messy.normalized.txt"), 3, 4).unwrap();
    assert!(!again.fallback);
    assert_eq!((again.strategy, again.waypoints), (parsed.strategy, parsed.waypoints));
}

fn golden_world() -> (WorldState, Scenario) {
    let scenario = Scenario::default();
    (WorldState::reset(7, &scenario).unwrap(), scenario)
}

const GOLDEN_INSTRUCTION: &str = "Move Top";

/// Waypoints contained in the stored reply under `replay/`.
fn golden_waypoints() -> Vec<Vec<Vec2>> {
    let rows = [[(-1.0, 0.5), (-1.0, 1.5), (-1.0, 2.5), (-1.0, 3.0)], [(0.0, 0.5), (0.0, 1.5), (0.0, 2.5), (0.0, 3.0)], [(1.0, 0.5), (1.0, 1.5), (1.0, 2.5), (1.0, 3.0)]];
    rows.iter().map(|r| r.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).collect()
}

#[test]
fn replay_client_returns_the_recorded_reply() {
    let (world, scenario) = golden_world();
    let spec = PromptSpec::from_world(PromptVariant::Base, &world, &scenario, GOLDEN_INSTRUCTION, 4);
    let prompt = assemble_prompt(&spec).unwrap();
    let dir = fixtures().join("replay");
    let file = dir.join(format!("{}.txt", prompt_hash(&prompt)));
    assert!(file.exists(), "missing recorded reply {}", file.display());
    let mut client = ReplayClient::new(&dir);
    assert_eq!(client.complete(&prompt, &spec).unwrap(), std::fs::read_to_string(&file).unwrap());

    let mut translator = Translator::new(Box::new(ReplayClient::new(&dir)), 4);
    let out = translator.translate(GOLDEN_INSTRUCTION, &world, &scenario).unwrap();
    assert_eq!(out.instructions.waypoints(), golden_waypoints().as_slice());
    assert!(out.diagnostics.clipped.is_empty());

    // A prompt that was never recorded is a miss, not a silent default.
    let other = assemble_prompt(&PromptSpec::from_world(PromptVariant::Base, &world, &scenario, "Go Right", 4)).unwrap();
    assert!(matches!(client.complete(&other, &spec), Err(LlmError::ReplayMiss(_))));
}

/// Records every prompt it forwards.
struct Spy<C> {
    inner: C,
    prompts: std::sync::Arc<std::sync::Mutex<Vec<String>>>,
}

impl<C: LlmClient> LlmClient for Spy<C> {
    fn complete(&mut self, prompt: &str, spec: &PromptSpec) -> Result<String, LlmError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        self.inner.complete(prompt, spec)
    }
    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

#[test]
fn swapping_clients_changes_only_the_waypoints() {
    let (world, scenario) = golden_world();
    let seen = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
    let mut mock = Translator::new(Box::new(Spy { inner: MockClient, prompts: seen.clone() }), 4);
    let replay_client = Spy {
        inner: ReplayClient::new(fixtures().join("replay")),
        prompts: seen.clone(),
    };
    let mut replay = Translator::new(Box::new(replay_client), 4);
    let a = mock.translate(GOLDEN_INSTRUCTION, &world, &scenario).unwrap();
    let b = replay.translate(GOLDEN_INSTRUCTION, &world, &scenario).unwrap();
    let prompts = seen.lock().unwrap();
    assert_eq!(prompts.len(), 2);
    assert_eq!(prompts[0], prompts[1]);
    assert_eq!((a.instructions.n_agents(), a.instructions.k()), (b.instructions.n_agents(), b.instructions.k()));
    assert_eq!(a.instructions.waypoints().len(), b.instructions.waypoints().len());
    assert_ne!(a.instructions, b.instructions);
}

#[test]
fn mock_spread_out_from_the_origin_moves_outward() {
    let scenario = Scenario::default();
    let mut world = WorldState::reset(1, &scenario).unwrap();
    for a in &mut world.agents {
        a.position = Vec2::ZERO;
    }
    let out = Translator::mock(4).translate("Spread Out", &world, &scenario).unwrap();
    let ends: Vec<Vec2> = out.instructions.waypoints().iter().map(|s| *s.last().unwrap()).collect();
    for (i, e) in ends.iter().enumerate() {
        assert!((e.norm() - (scenario.half_extent() - 0.25)).abs() < 1e-9);
        for f in &ends[i + 1..] {
            assert!((*e - *f).norm() > 1.0, "end points must be distinct");
        }
    }
    for seq in out.instructions.waypoints() {
        let radii: Vec<f64> = seq.iter().map(|p| p.norm()).collect();
        assert!(radii.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn base_prompt_omits_task_and_task_aligned_includes_it() {
    let (world, scenario) = golden_world();
    let base = assemble_prompt(&PromptSpec::from_world(PromptVariant::Base, &world, &scenario, "Go Right", 4)).unwrap();
    let aligned = assemble_prompt(&PromptSpec::from_world(PromptVariant::TaskAligned, &world, &scenario, "Go Right", 4)).unwrap();
    assert!(!base.contains("# Task"));
    assert!(aligned.contains("# Task"));
    assert!(base.contains(icco_core::llm::prompt::COMPLIANCE_PHRASE));
    assert_ne!(prompt_hash(&base), prompt_hash(&aligned));
}
