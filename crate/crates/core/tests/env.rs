use icco_core::env::{
    global_state_vector, observe, read_log, Action, Event, GlobalStateLayout, JointAction, ObservationLayout,
    ReplayWriter, Scenario, StepRecord, WorldState, LOG_VERSION,
};
use icco_core::instruction::InstructionVector;
use icco_core::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario() -> Scenario {
    Scenario::default()
}

fn hold(state: &WorldState) -> InstructionVector {
    InstructionVector::hold(&state.positions(), 4, state.time_step)
}

/// A world with every entity parked far away from each other and from home.
fn quiet_world(s: &Scenario) -> WorldState {
    let mut w = WorldState::reset(1, s).unwrap();
    let spots = [(-3.0, -3.0), (3.0, -3.0), (-3.0, 3.0)];
    for (a, &(x, y)) in w.agents.iter_mut().zip(&spots) {
        a.position = Vec2::new(x, y);
        a.carrying = false;
    }
    for (j, r) in w.resources.iter_mut().enumerate() {
        r.position = Vec2::new(-2.0 + 0.8 * j as f64, 2.0);
    }
    w.invader.position = Vec2::new(3.2, 3.2);
    w
}

#[test]
fn reset_is_deterministic() {
    let s = scenario();
    assert_eq!(WorldState::reset(7, &s).unwrap(), WorldState::reset(7, &s).unwrap());
    assert_ne!(WorldState::reset(7, &s).unwrap(), WorldState::reset(8, &s).unwrap());
}

#[test]
fn reset_entity_counts() {
    let w = WorldState::reset(3, &scenario()).unwrap();
    assert_eq!(w.agents.len(), 3);
    assert_eq!(w.active_resources(), 6);
    assert!(w.invader.active);
    assert_eq!(w.time_step, 0);
    assert!(w.agents.iter().all(|a| !a.carrying && !a.defended_this_step));
}

#[test]
fn reset_positions_inside_field() {
    let s = scenario();
    for seed in 0..10_000u64 {
        let w = WorldState::reset(seed, &s).unwrap();
        let pts = w
            .agents
            .iter()
            .map(|a| a.position)
            .chain(w.resources.iter().map(|r| r.position))
            .chain(std::iter::once(w.invader.position));
        for p in pts {
            assert!(p.x.abs() <= 3.25 && p.y.abs() <= 3.25, "seed {seed}: {p:?}");
        }
    }
}

#[test]
fn reset_rejects_invalid_scenarios() {
    let bad = Scenario {
        n_agents: 0,
        ..scenario()
    };
    assert!(WorldState::reset(0, &bad).is_err());
    let bad = Scenario {
        field_side: 0.0,
        ..scenario()
    };
    assert!(WorldState::reset(0, &bad).is_err());
}

#[test]
fn pick_rewards_five_and_respawns() {
    let s = scenario();
    let mut w = quiet_world(&s);
    // Agent 0 will step onto resource 0.
    w.resources[0].position = Vec2::new(-2.9, -3.0);
    let out = w.step(&s, &JointAction(vec![Action::PosX, Action::Stay, Action::Stay]), &hold(&w)).unwrap();
    assert_eq!(out.reward.r_pick, 5.0);
    assert_eq!(out.reward.r_collect, 0.0);
    assert_eq!(out.reward.r_defense, 0.0);
    assert_eq!(out.events, vec![Event::Pick { agent: 0, resource: 0 }]);
    assert!(w.agents[0].carrying);
    assert_eq!(w.active_resources(), 6);
    assert_ne!(w.resources[0].position, Vec2::new(-2.9, -3.0));
}

#[test]
fn contested_resource_goes_to_lowest_index() {
    let s = scenario();
    let mut w = quiet_world(&s);
    w.agents[0].position = Vec2::new(1.0, 1.0);
    w.agents[1].position = Vec2::new(1.1, 1.0);
    w.resources[0].position = Vec2::new(1.05, 1.0);
    let out = w.step(&s, &JointAction::stay(3), &hold(&w)).unwrap();
    assert_eq!(out.events, vec![Event::Pick { agent: 0, resource: 0 }]);
    assert_eq!(out.reward.r_pick, 5.0);
}

#[test]
fn collect_rewards_one() {
    let s = scenario();
    let mut w = quiet_world(&s);
    w.agents[1].position = Vec2::new(0.5, 0.0);
    w.agents[1].carrying = true;
    let out = w
        .step(&s, &JointAction(vec![Action::Stay, Action::NegX, Action::Stay]), &hold(&w))
        .unwrap();
    assert_eq!(out.reward.r_collect, 1.0);
    assert_eq!(out.reward.r_task, 1.0);
    assert!(!w.agents[1].carrying);
}

#[test]
fn defense_rewards_four_and_breach_costs_four() {
    let s = scenario();
    let mut w = quiet_world(&s);
    w.invader.position = Vec2::new(2.0, 0.0);
    w.agents[2].position = Vec2::new(1.9, 0.0);
    let out = w.step(&s, &JointAction::stay(3), &hold(&w)).unwrap();
    assert_eq!(out.events, vec![Event::Defense { agent: 2 }]);
    assert_eq!(out.reward.r_defense, 4.0);
    assert!(w.agents[2].defended_this_step);
    assert!(w.invader.active, "invader respawns");
    let on_boundary = w.invader.position.x.abs() == 3.25 || w.invader.position.y.abs() == 3.25;
    assert!(on_boundary, "{:?}", w.invader.position);

    let mut w = quiet_world(&s);
    w.invader.position = Vec2::new(0.33, 0.0);
    let out = w.step(&s, &JointAction::stay(3), &hold(&w)).unwrap();
    assert_eq!(out.events, vec![Event::Breach]);
    assert_eq!(out.reward.r_defense, -4.0);
    assert_eq!(out.reward.r_task, -4.0);
}

#[test]
fn no_events_means_zero_task_reward() {
    let s = scenario();
    let mut w = quiet_world(&s);
    let out = w.step(&s, &JointAction::stay(3), &hold(&w)).unwrap();
    assert!(out.events.is_empty());
    assert_eq!(out.reward.r_task, 0.0);
    // Agents sit on their held waypoints and do not move.
    assert_eq!(out.reward.r_inst, 0.0);
}

#[test]
fn instruction_reward_is_mean_over_agents() {
    let s = scenario();
    let mut w = quiet_world(&s);
    let p: Vec<Vec2> = w.positions();
    // Agent 0 sits on its first waypoint and moves along the waypoint direction.
    let wp = vec![
        vec![p[0] + Vec2::new(0.1, 0.0), p[0] + Vec2::new(0.2, 0.0), p[0] + Vec2::new(0.3, 0.0), p[0] + Vec2::new(0.4, 0.0)],
        vec![p[1]; 4],
        vec![p[2]; 4],
    ];
    let iv = InstructionVector::new(wp, 0).unwrap();
    let out = w.step(&s, &JointAction(vec![Action::PosX, Action::Stay, Action::Stay]), &iv).unwrap();
    assert!((out.reward.per_agent_e_cossim[0] - 1.0).abs() < 1e-12);
    assert!(out.reward.per_agent_e_dist[0].abs() < 1e-12);
    assert!((out.reward.r_inst - 1.3 / 3.0).abs() < 1e-12);
    assert_eq!(out.reward.total(), out.reward.r_task + out.reward.r_inst);
}

#[test]
fn exhausted_episode_is_an_error() {
    let s = Scenario {
        episode_len: 2,
        ..scenario()
    };
    let mut w = WorldState::reset(0, &s).unwrap();
    for _ in 0..2 {
        let iv = hold(&w);
        w.step(&s, &JointAction::stay(3), &iv).unwrap();
    }
    let iv = hold(&w);
    assert!(w.step(&s, &JointAction::stay(3), &iv).is_err());
}

#[test]
fn invariants_hold_under_random_play() {
    let s = scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..40u64 {
        let mut w = WorldState::reset(seed, &s).unwrap();
        let mut total_task = 0.0;
        let mut counted = 0.0;
        for _ in 0..s.episode_len {
            let actions: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
            let iv = hold(&w);
            let out = w.step(&s, &JointAction::from_indices(&actions).unwrap(), &iv).unwrap();
            assert_eq!(w.active_resources(), 6);
            assert!(w.invader.active);
            for a in &w.agents {
                assert!(a.position.x.abs() <= 3.25 && a.position.y.abs() <= 3.25);
            }
            let r = &out.reward;
            assert_eq!(r.r_task, r.r_pick + r.r_collect + r.r_defense);
            total_task += r.r_task;
            for e in &out.events {
                counted += match e {
                    Event::Pick { .. } => 5.0,
                    Event::Collect { .. } => 1.0,
                    Event::Defense { .. } => 4.0,
                    Event::Breach => -4.0,
                };
            }
        }
        assert_eq!(total_task, counted);
    }
}

#[test]
fn trajectories_are_bit_reproducible() {
    let s = scenario();
    let run = || {
        let mut w = WorldState::reset(42, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut log = Vec::new();
        for _ in 0..s.episode_len {
            let actions: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
            let iv = hold(&w);
            let out = w.step(&s, &JointAction::from_indices(&actions).unwrap(), &iv).unwrap();
            log.push((w.clone(), out));
        }
        log
    };
    assert_eq!(run(), run());
}

#[test]
fn action_indices_are_validated() {
    assert!(JointAction::from_indices(&[0, 4, 2]).is_ok());
    assert!(JointAction::from_indices(&[0, 5]).is_err());
}

#[test]
fn observation_masks_beyond_radius() {
    let s = scenario();
    let mut w = quiet_world(&s);
    w.agents[1].position = w.agents[0].position + Vec2::new(0.66, 0.0);
    let o = observe(&w, &s, 0).unwrap();
    let layout = ObservationLayout::new(&s);
    assert_eq!(&o.0[layout.others()..layout.resources()], &[0.0; 6]);

    w.agents[1].position = w.agents[0].position + Vec2::new(0.65, 0.0);
    let o = observe(&w, &s, 0).unwrap();
    assert_eq!(o.0[2], 1.0);

    w.agents[1].position = w.agents[0].position;
    let o = observe(&w, &s, 0).unwrap();
    assert_eq!(&o.0[0..3], &[0.0, 0.0, 1.0]);
    assert!(observe(&w, &s, 3).is_err());
}

/// Independent recomputation: for each category, scan all entities, keep the
/// in-range ones, order by (distance, index), and write slots.
fn oracle_observation(w: &WorldState, s: &Scenario, i: usize) -> Vec<f64> {
    let me = w.agents[i].position;
    let slots = |points: Vec<Vec2>, n: usize| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..points.len())
            .filter(|&k| {
                let d = points[k] - me;
                d.x.hypot(d.y) <= s.observation_radius
            })
            .collect();
        idx.sort_by(|&a, &b| {
            let da = (points[a] - me).norm();
            let db = (points[b] - me).norm();
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        let mut out = vec![0.0; 3 * n];
        for (slot, k) in idx.into_iter().take(n).enumerate() {
            out[3 * slot] = points[k].x - me.x;
            out[3 * slot + 1] = points[k].y - me.y;
            out[3 * slot + 2] = 1.0;
        }
        out
    };
    let others: Vec<Vec2> = (0..w.agents.len()).filter(|&j| j != i).map(|j| w.agents[j].position).collect();
    let resources: Vec<Vec2> = w.resources.iter().filter(|r| r.active).map(|r| r.position).collect();
    let invader: Vec<Vec2> = if w.invader.active { vec![w.invader.position] } else { vec![] };
    let mut v = slots(others, s.n_agents - 1);
    v.extend(slots(resources, s.n_resources));
    v.extend(slots(invader, 1));
    v.extend(slots(vec![w.home.position], 1));
    v.push(w.agents[i].velocity.x);
    v.push(w.agents[i].velocity.y);
    v.push(if w.agents[i].carrying { 1.0 } else { 0.0 });
    v
}

#[test]
fn observation_matches_geometric_oracle() {
    // Shrink the field so entities are often in range of one another.
    let s = Scenario {
        field_side: 1.6,
        home_radius: 0.2,
        contact_radius: 0.05,
        ..scenario()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut visible = 0;
    for seed in 0..300u64 {
        let mut w = WorldState::reset(seed, &s).unwrap();
        for _ in 0..10 {
            let actions: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
            let iv = hold(&w);
            w.step(&s, &JointAction::from_indices(&actions).unwrap(), &iv).unwrap();
            for i in 0..3 {
                let o = observe(&w, &s, i).unwrap();
                assert_eq!(o.0.len(), ObservationLayout::new(&s).dim());
                assert_eq!(o.0, oracle_observation(&w, &s, i), "seed {seed} agent {i}");
                visible += o.0.chunks(3).filter(|c| c.len() == 3 && c[2] == 1.0).count();
            }
        }
    }
    assert!(visible > 1000, "oracle exercised too few visible slots: {visible}");
}

#[test]
fn zero_world_gives_zero_global_state() {
    let s = scenario();
    let mut w = WorldState::reset(0, &s).unwrap();
    for a in &mut w.agents {
        a.position = Vec2::ZERO;
        a.velocity = Vec2::ZERO;
    }
    for r in &mut w.resources {
        r.position = Vec2::ZERO;
    }
    w.invader.position = Vec2::ZERO;
    let g = global_state_vector(&w, &InstructionVector::zeros(3, 4));
    let layout = GlobalStateLayout::new(&s, 4);
    assert_eq!(g, vec![0.0; layout.dim()]);
    assert_eq!(layout.dim(), 18 + 12 + 2 + 24);
}

#[test]
fn global_state_slices_match_fields() {
    let s = scenario();
    let layout = GlobalStateLayout::new(&s, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..1000u64 {
        let mut w = WorldState::reset(seed, &s).unwrap();
        let actions: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
        let iv = hold(&w);
        w.step(&s, &JointAction::from_indices(&actions).unwrap(), &iv).unwrap();
        let wp: Vec<Vec<Vec2>> = (0..3)
            .map(|_| (0..4).map(|_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect())
            .collect();
        let iv = InstructionVector::new(wp, 0).unwrap();
        let g = global_state_vector(&w, &iv);
        assert_eq!(g.len(), layout.dim());
        for (i, a) in w.agents.iter().enumerate() {
            let f = &g[layout.agent(i)];
            assert_eq!(f[0..2], a.position.to_array());
            assert_eq!(f[2..4], a.velocity.to_array());
            assert_eq!(f[4], if a.carrying { 1.0 } else { 0.0 });
            assert_eq!(f[5], if a.defended_this_step { 1.0 } else { 0.0 });
        }
        for (j, r) in w.resources.iter().enumerate() {
            assert_eq!(g[layout.resource(j)], r.position.to_array());
        }
        assert_eq!(g[layout.invader()], w.invader.position.to_array());
        let flat = &g[layout.instructions()];
        for i in 0..3 {
            for k in 0..4 {
                let wk = iv.agent(i)[k];
                assert_eq!(flat[(i * 4 + k) * 2..(i * 4 + k) * 2 + 2], wk.to_array());
            }
        }
    }
}

#[test]
fn replay_log_roundtrip() {
    let s = scenario();
    let mut w = WorldState::reset(9, &s).unwrap();
    let mut writer = ReplayWriter::new(Vec::new());
    let mut expected = Vec::new();
    for step in 0..20 {
        let iv = hold(&w);
        let actions = JointAction(vec![Action::PosX, Action::NegY, Action::Stay]);
        let out = w.step(&s, &actions, &iv).unwrap();
        let rec = StepRecord {
            version: LOG_VERSION,
            step,
            state: w.clone(),
            actions: actions.indices(),
            reward: out.reward,
            events: out.events,
            instructions: iv,
        };
        writer.write(&rec).unwrap();
        expected.push(rec);
    }
    let bytes = writer.into_inner();
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 20);
    let back = read_log(bytes.as_slice()).unwrap();
    assert_eq!(back, expected);
}
