//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p icco-core --test acceptance`. The desk-scale
//! ordering and instruction-following checks read the stored experiment in
//! `results/desk` (override with `ICCO_EXPERIMENT_DIR`); set
//! `ICCO_RUN_EXPERIMENT=1` to train it from scratch first, which takes about
//! an hour on one core. Failures are reported, and only turn into a failing
//! exit status when `ICCO_ACCEPTANCE_STRICT=1`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use icco_core::env::{Action, Event, JointAction, Scenario, WorldState};
use icco_core::eval::{eval_seeds, run_language_eval, run_quadrant_eval, GreedyPolicy, LanguageProtocol, QuadrantProtocol};
use icco_core::experiment::{evaluate_checkpoint, run_experiment, ExperimentConfig, ExperimentResults};
use icco_core::instruction::{instruction_reward, InstructionVector, WalkNoise};
use icco_core::llm::{parse_response, InstructionTag, Translate, Translator};
use icco_core::model::{Checkpoint, Model, ModelConfig, NetworkSizes, Variant};
use icco_core::nn::{DiagGaussian, MonotonicMixer, ParamStore, Tape, Var};
use icco_core::train::{ce_loss, collect_episode, latent_pass, rl_loss, td_targets, EpisodeRecord, TrainBatch, TrainConfig, Trainer};
use icco_core::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Tolerances.
const FD_REL_TOL: f64 = 1e-4;
const FD_EPS: f64 = 1e-6;
const MONOTONE_TOL: f64 = -1e-6;
const PRODUCT_TOL: f64 = 1e-6;
const ENTROPY_MC_TOL: f64 = 1e-2;
const ENTROPY_MC_SAMPLES: usize = 1_000_000;
const INTEGRAL_TOL: f64 = 1e-4;
const SIGN_TEST_ALPHA: f64 = 0.1;
const DISTANCE_IMPROVEMENT: f64 = 0.30;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- gradients

fn toy_scenario() -> Scenario {
    Scenario {
        n_agents: 2,
        n_resources: 2,
        episode_len: 3,
        field_side: 2.0,
        observation_radius: 1.0,
        ..Scenario::default()
    }
}

fn toy_model(variant: Variant, seed: u64) -> Model {
    let sizes = NetworkSizes {
        waypoints: 2,
        refresh_interval: 1,
        latent_dim: 2,
        window: 3,
        agent_hidden: 4,
        mixer_embed: 3,
        hyper_hidden: 4,
        coordinator_hidden: 5,
        posterior_hidden: 5,
    };
    Model::new(variant, ModelConfig::new(&toy_scenario(), &sizes), seed).unwrap()
}

fn toy_episodes(model: &Model) -> Vec<EpisodeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let walk = WalkNoise::new(0.1).unwrap();
    (0..3)
        .map(|i| collect_episode(model, &toy_scenario(), i, 1.0, &walk, &mut rng).unwrap())
        .collect()
}

/// Worst relative error between tape and central-difference gradients.
fn worst_fd_error(model: &Model, loss: impl Fn(&mut Tape, &Model) -> Var) -> (f64, usize) {
    let grads = {
        let mut tape = Tape::new(&model.params);
        let root = loss(&mut tape, model);
        tape.param_grads(root)
    };
    let eval = |m: &Model| {
        let mut tape = Tape::new(&m.params);
        let root = loss(&mut tape, m);
        tape.value(root).get(0, 0)
    };
    let mut probe = model.clone();
    let (mut worst, mut informative) = (0.0f64, 0);
    for id in model.params.ids() {
        for k in 0..model.params.get(id).len() {
            let orig = model.params.get(id).as_slice()[k];
            probe.params.get_mut(id).as_mut_slice()[k] = orig + FD_EPS;
            let up = eval(&probe);
            probe.params.get_mut(id).as_mut_slice()[k] = orig - FD_EPS;
            let down = eval(&probe);
            probe.params.get_mut(id).as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let analytic = grads.get(id).as_slice()[k];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-7 {
                informative += 1;
                worst = worst.max((analytic - numeric).abs() / (1e-6 + scale));
            }
        }
    }
    (worst, informative)
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let mut report = Vec::new();
    let cases: [(&str, Variant); 3] = [("value-decomposition TD", Variant::Qmix), ("coordinated TD", Variant::Icco), ("CE", Variant::Icco)];
    for (name, variant) in cases {
        let model = toy_model(variant, 11);
        let target = toy_model(variant, 12).params;
        let eps = toy_episodes(&model);
        let batch = TrainBatch::new(eps.iter().collect(), vec![0, 1, 0], 3).map_err(|e| e.to_string())?;
        let (worst, n) = if name == "CE" {
            worst_fd_error(&model, |tape, m| {
                let lat = latent_pass(tape, m, &batch, batch.blocks()).unwrap();
                ce_loss(tape, m, &batch, &lat)
            })
        } else {
            let targets = td_targets(&model, &target, &batch, 0.99);
            worst_fd_error(&model, |tape, m| {
                let lat = latent_pass(tape, m, &batch, batch.blocks());
                rl_loss(tape, m, &batch, lat.as_deref(), &targets)
            })
        };
        ensure(worst < FD_REL_TOL, || format!("{name}: worst relative error {worst:.2e}"))?;
        ensure(n > 50, || format!("{name}: only {n} informative entries"))?;
        report.push(format!("{name} {worst:.1e} over {n}"));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.0}s"))?;
    Ok(format!("{} ({secs:.1}s)", report.join(", ")))
}

// ------------------------------------------------------------------ mixer

fn mixer_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let mut min_slope = f64::INFINITY;
    for _ in 0..1000 {
        let mut store = ParamStore::new();
        let mixer = MonotonicMixer::new(&mut store, 3, 6, 8, 16, &mut rng);
        // Redraw every parameter with a wide scale so the draws cover more than
        // the initializer's range.
        for id in store.ids().collect::<Vec<_>>() {
            for x in store.get_mut(id).as_mut_slice() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *x = 2.0 * n;
            }
        }
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        for i in 0..3 {
            let (mut up, mut down) = (q.clone(), q.clone());
            up[i] += h;
            down[i] -= h;
            let slope = (mixer.evaluate(&store, &up, &c).unwrap() - mixer.evaluate(&store, &down, &c).unwrap()) / (2.0 * h);
            min_slope = min_slope.min(slope);
        }
    }
    ensure(min_slope >= MONOTONE_TOL, || format!("slope {min_slope:.3e}"))?;
    Ok(format!("1000 draws, smallest dQtot/dQi = {min_slope:.3e}"))
}

// --------------------------------------------------------------- gaussians

fn density_1d(m: f64, v: f64, x: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

fn trapezoid(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let dx = (hi - lo) / n as f64;
    (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            w * f(lo + k as f64 * dx)
        })
        .sum::<f64>()
        * dx
}

fn gaussian_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_product: f64 = 0.0;
    for _ in 0..10 {
        let factors: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.3..2.0))).collect();
        let p = |x: f64| factors.iter().map(|&(m, v)| density_1d(m, v, x)).product::<f64>();
        let z = trapezoid(-12.0, 12.0, 200_000, p);
        let mean = trapezoid(-12.0, 12.0, 200_000, |x| x * p(x)) / z;
        let var = trapezoid(-12.0, 12.0, 200_000, |x| (x - mean) * (x - mean) * p(x)) / z;
        let gs: Vec<DiagGaussian> = factors.iter().map(|&(m, v)| DiagGaussian::new(vec![m], vec![v]).unwrap()).collect();
        let prod = DiagGaussian::product(&gs).map_err(|e| e.to_string())?;
        worst_product = worst_product.max((prod.mean()[0] - mean).abs()).max((prod.variance()[0] - var).abs());
    }
    ensure(worst_product < PRODUCT_TOL, || format!("product off by {worst_product:.2e}"))?;

    let g = DiagGaussian::new(vec![0.3, -1.0, 2.0], vec![0.5, 1.7, 0.05]).unwrap();
    let mut acc = 0.0;
    let mut noise = [0.0; 3];
    for _ in 0..ENTROPY_MC_SAMPLES {
        for e in &mut noise {
            *e = StandardNormal.sample(&mut rng);
        }
        acc -= g.log_prob(&g.sample_with(&noise).unwrap()).unwrap();
    }
    let mc = acc / ENTROPY_MC_SAMPLES as f64;
    let entropy_err = (mc - g.entropy()).abs();
    ensure(entropy_err < ENTROPY_MC_TOL, || format!("entropy off by {entropy_err:.2e}"))?;

    let g1 = DiagGaussian::new(vec![0.4], vec![0.3]).unwrap();
    let mass = trapezoid(-10.0, 10.0, 100_000, |x| g1.log_prob(&[x]).unwrap().exp());
    ensure((mass - 1.0).abs() < INTEGRAL_TOL, || format!("density integrates to {mass}"))?;
    Ok(format!(
        "product {worst_product:.1e}, entropy MC {entropy_err:.1e}, mass {:.1e}",
        (mass - 1.0).abs()
    ))
}

// ------------------------------------------------------------------ reward

fn quiet_world(s: &Scenario) -> WorldState {
    let mut w = WorldState::reset(1, s).unwrap();
    for (a, (x, y)) in w.agents.iter_mut().zip([(-3.0, -3.0), (3.0, -3.0), (-3.0, 3.0)]) {
        a.position = Vec2::new(x, y);
        a.carrying = false;
    }
    for (j, r) in w.resources.iter_mut().enumerate() {
        r.position = Vec2::new(-2.0 + 0.8 * j as f64, 2.0);
    }
    w.invader.position = Vec2::new(3.2, 3.2);
    w
}

fn reward_engine() -> Outcome {
    let s = Scenario::default();
    let hold = |w: &WorldState| InstructionVector::hold(&w.positions(), 4, w.time_step);
    let mut checks = Vec::new();

    let mut w = quiet_world(&s);
    w.resources[0].position = Vec2::new(-2.9, -3.0);
    let out = w.step(&s, &JointAction(vec![Action::PosX, Action::Stay, Action::Stay]), &hold(&w)).unwrap();
    checks.push(("pick", out.events == vec![Event::Pick { agent: 0, resource: 0 }] && out.reward.r_task == 5.0));

    let mut w = quiet_world(&s);
    w.agents[1].position = Vec2::new(0.5, 0.0);
    w.agents[1].carrying = true;
    let out = w.step(&s, &JointAction(vec![Action::Stay, Action::NegX, Action::Stay]), &hold(&w)).unwrap();
    checks.push(("collect", out.events == vec![Event::Collect { agent: 1 }] && out.reward.r_task == 1.0));

    let mut w = quiet_world(&s);
    w.invader.position = Vec2::new(2.0, 0.0);
    w.agents[2].position = Vec2::new(1.9, 0.0);
    let out = w.step(&s, &JointAction::stay(3), &hold(&w)).unwrap();
    checks.push(("defense", out.events == vec![Event::Defense { agent: 2 }] && out.reward.r_task == 4.0));

    let mut w = quiet_world(&s);
    w.invader.position = Vec2::new(0.33, 0.0);
    let out = w.step(&s, &JointAction::stay(3), &hold(&w)).unwrap();
    checks.push(("breach", out.events == vec![Event::Breach] && out.reward.r_task == -4.0));

    // Hand geometries for 1.3 (e_cossim + 0.1 e_dist) on the path (1,0) -> (2,0).
    let path = [Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
    let geometries = [
        ("on waypoint, parallel", Vec2::new(0.9, 0.0), Vec2::new(1.0, 0.0), 1.3),
        ("on waypoint, reversed", Vec2::new(1.1, 0.0), Vec2::new(1.0, 0.0), -1.3),
        ("off by 0.1, perpendicular", Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.1), 1.3 * (0.0 - 0.1 * 0.1)),
        ("off by 0.5, parallel", Vec2::new(0.9, 0.5), Vec2::new(1.0, 0.5), 1.3 * (1.0 - 0.1 * 0.5)),
    ];
    for (name, prev, pos, want) in geometries {
        let r = instruction_reward(prev, pos, &path).map_err(|e| e.to_string())?;
        checks.push((name, (r.r_inst - want).abs() < 1e-12));
    }
    let exact = instruction_reward(Vec2::new(0.9, 0.0), Vec2::new(1.0, 0.0), &path).unwrap().r_inst;
    checks.push(("r_inst exactly 1.3", exact == 1.3));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    ensure(failed.is_empty(), || format!("wrong: {}", failed.join(", ")))?;
    Ok(format!("{} cases exact", checks.len()))
}

// ------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let started = Instant::now();
    let cfg = TrainConfig {
        episodes: 200,
        seed: 17,
        ..TrainConfig::default()
    };
    let train = || -> Result<(Vec<String>, Trainer), String> {
        let mut t = Trainer::new(cfg.clone(), Scenario::default()).map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        t.run(|_, r| {
            rows.push(format!("{r:?}"));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        Ok((rows, t))
    };
    let (rows_a, a) = train()?;
    let (rows_b, b) = train()?;
    ensure(rows_a == rows_b, || "metrics rows differ between identical runs".into())?;
    ensure(a.model().params == b.model().params, || "parameters differ between identical runs".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ckpt.json");
    a.checkpoint().save(&path).map_err(|e| e.to_string())?;
    let protocol = QuadrantProtocol::default();
    let stored = run_quadrant_eval(
        &mut GreedyPolicy::new(a.model().clone()),
        &Scenario::default(),
        &protocol,
        &eval_seeds(protocol.trials),
        None,
    )
    .map_err(|e| e.to_string())?;
    let stored_path = dir.path().join("metrics.json");
    std::fs::write(&stored_path, serde_json::to_vec(&stored).unwrap()).map_err(|e| e.to_string())?;
    let reloaded = evaluate_checkpoint(&path, &Scenario::default(), &protocol).map_err(|e| e.to_string())?;
    let on_disk = std::fs::read(&stored_path).map_err(|e| e.to_string())?;
    ensure(serde_json::to_vec(&reloaded).unwrap() == on_disk, || "re-evaluated metrics differ from stored metrics".into())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 15.0 * 60.0, || format!("took {secs:.0}s"))?;
    Ok(format!("2 x 200 episodes identical, checkpoint re-eval identical ({secs:.0}s)"))
}

// -------------------------------------------------------------- experiment

fn experiment_dir() -> PathBuf {
    std::env::var_os("ICCO_EXPERIMENT_DIR").map(PathBuf::from).unwrap_or_else(|| repo_root().join("results/desk"))
}

fn load_experiment() -> Result<ExperimentResults, String> {
    let dir = experiment_dir();
    if std::env::var("ICCO_RUN_EXPERIMENT").is_ok_and(|v| v == "1") {
        run_experiment(&ExperimentConfig::default(), &Scenario::default(), &dir, |l| eprintln!("{l}")).map_err(|e| e.to_string())?;
    }
    let r = ExperimentResults::load(&dir).map_err(|e| format!("no experiment results in {}: {e}", dir.display()))?;
    ensure(r.is_complete(), || format!("experiment in {} is incomplete", dir.display()))?;
    Ok(r)
}

/// Re-evaluates one stored checkpoint so the stored numbers are tied to the
/// current code.
fn verify_stored_run(r: &ExperimentResults, variant: Variant) -> Result<(), String> {
    let seed = r.config.seeds[0];
    let run = r.run(variant, seed).ok_or("missing run")?;
    let again = evaluate_checkpoint(&experiment_dir().join(&run.checkpoint), &Scenario::default(), &r.config.quadrant).map_err(|e| e.to_string())?;
    ensure(again == run.eval, || format!("{variant} seed {seed}: stored metrics do not reproduce"))
}

fn desk_scale_ordering() -> Outcome {
    let r = load_experiment()?;
    verify_stored_run(&r, Variant::Icco)?;
    let reward = |v| r.mean(v, |t| t.reward);
    let defenses = |v| r.mean(v, |t| t.defenses as f64);
    let vs_no_ce = r.reward_sign_test(Variant::Icco, Variant::IccoNoCe);
    let vs_qmix = r.reward_sign_test(Variant::Icco, Variant::Qmix);
    let summary = format!(
        "reward ICCO {:.1}, NO_CE {:.1}, QMIX {:.1}, QMIX_FULL {:.1}; sign p {:.3} / {:.3}; defenses {:.2} vs {:.2} / {:.2}",
        reward(Variant::Icco),
        reward(Variant::IccoNoCe),
        reward(Variant::Qmix),
        reward(Variant::QmixFull),
        vs_no_ce.p_value,
        vs_qmix.p_value,
        defenses(Variant::Icco),
        defenses(Variant::Qmix),
        defenses(Variant::QmixFull),
    );
    let ok = vs_no_ce.p_value < SIGN_TEST_ALPHA
        && vs_qmix.p_value < SIGN_TEST_ALPHA
        && defenses(Variant::Icco) > defenses(Variant::Qmix)
        && defenses(Variant::Icco) > defenses(Variant::QmixFull);
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn instruction_following() -> Outcome {
    let r = load_experiment()?;
    let cos = r.mean(Variant::Icco, |t| t.mean_e_cossim);
    let dist = r.mean(Variant::Icco, |t| t.mean_waypoint_distance);
    let base = r.untrained_mean(|t| t.mean_waypoint_distance);
    let improvement = 1.0 - dist / base;
    let summary = format!("e_cossim {cos:.3}, distance {dist:.3} vs untrained {base:.3} ({:.0}% lower)", 100.0 * improvement);
    if cos > 0.0 && improvement >= DISTANCE_IMPROVEMENT {
        Ok(summary)
    } else {
        Err(summary)
    }
}

// --------------------------------------------------------------------- llm

fn llm_bridge() -> Outcome {
    let scenario = Scenario::default();
    // Prefer a trained policy when the experiment is available.
    let stored = experiment_dir().join("icco_seed0.json");
    let model = match Checkpoint::load(&stored) {
        Ok(c) => Model::from_checkpoint(&c).map_err(|e| e.to_string())?,
        Err(_) => Model::new(Variant::Icco, ModelConfig::new(&scenario, &NetworkSizes::default()), 0).map_err(|e| e.to_string())?,
    };
    let texts: Vec<String> = InstructionTag::ALL.iter().map(|t| t.text().to_string()).collect();
    let protocol = LanguageProtocol {
        trials: 2,
        ..LanguageProtocol::default()
    };
    let mut translator = Translator::mock(4);
    let world = WorldState::reset(5, &scenario).map_err(|e| e.to_string())?;
    for t in &texts {
        let out = translator.translate(t, &world, &scenario).map_err(|e| format!("{t}: {e}"))?;
        ensure(out.instructions.within_field(scenario.half_extent()), || format!("{t}: waypoints outside the field"))?;
        ensure(parse_response(&out.raw, 3, 4).is_ok(), || format!("{t}: mock reply does not parse"))?;
    }
    let outcome = run_language_eval(
        &mut GreedyPolicy::new(model),
        &scenario,
        &protocol,
        &texts,
        &mut translator,
        &eval_seeds(protocol.trials),
        None,
    )
    .map_err(|e| e.to_string())?;
    ensure(outcome.failures.is_empty(), || format!("{} translation failures", outcome.failures.len()))?;
    ensure(
        outcome.per_instruction.iter().all(|m| m.trials.len() == 2 && m.trials.iter().all(|t| t.steps == 145)),
        || "a rollout did not run its 145 steps".into(),
    )?;

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/llm");
    let read = |n: &str| std::fs::read_to_string(fixtures.join(n)).map_err(|e| e.to_string());
    let canonical = read("canonical.txt")?;
    ensure(parse_response(&canonical, 3, 4).map_err(|e| e.to_string())?.serialize() == canonical, || "canonical round trip".into())?;
    let normalized = parse_response(&read("messy.txt")?, 3, 4).map_err(|e| e.to_string())?.serialize();
    ensure(normalized == read("messy.normalized.txt")?, || "messy reply does not normalize to the golden file".into())?;
    Ok("4 instructions x 2 trials x 145 steps, golden files byte-exact".into())
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("gradient correctness", gradient_correctness),
        ("mixer monotonicity", mixer_monotonicity),
        ("gaussian machinery", gaussian_machinery),
        ("reward engine", reward_engine),
        ("determinism", determinism),
        ("desk-scale ordering", desk_scale_ordering),
        ("instruction following", instruction_following),
        ("llm bridge", llm_bridge),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 && std::env::var("ICCO_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
