//! Temporal-difference and consistency-enhancing objectives on the tape.

use super::replay::TrainBatch;
use crate::model::{instruction_features, one_hot_into, Model};
use crate::nn::gaussian::{self, GaussianVars};
use crate::nn::{CoordinatorVars, Matrix, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub ce_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            ce_weight: 1.0,
        }
    }
}

/// `r + γ (1 - done) · next_q`.
pub fn td_target(reward: f64, gamma: f64, done: bool, next_q: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_q
    }
}

/// Loss nodes built on one tape.
#[derive(Clone, Copy, Debug)]
pub struct Losses {
    pub rl: Var,
    pub ce: Option<Var>,
    pub total: Var,
}

/// Bootstrapped targets for every `(offset, segment)` pair, laid out
/// offset-major, with the matching validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TdTargets {
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Latents of the online coordinator, one per block of the segment. The
/// recorded noise is replayed so gradients reach the coordinator through `z`.
pub fn latent_pass(tape: &mut Tape, model: &Model, batch: &TrainBatch, blocks: usize) -> Option<Vec<CoordinatorVars>> {
    let coord = model.coordinator.as_ref()?;
    let r = batch.refresh_interval();
    Some(
        (0..blocks)
            .map(|j| {
                let mut s = Vec::new();
                let mut v = Vec::new();
                let mut e = Vec::new();
                for (b, ep) in batch.episodes.iter().enumerate() {
                    let block = ep.block_of(batch.step(b, j * r));
                    let start = (block * r).min(ep.len());
                    s.extend_from_slice(&ep.states[start]);
                    v.extend(instruction_features(&ep.instructions[block], &ep.positions[start]));
                    e.extend_from_slice(&ep.noise[block]);
                }
                let bsz = batch.size();
                let sv = tape.constant(Matrix::from_vec(bsz, coord.state_dim, s));
                let vv = tape.constant(Matrix::from_vec(bsz, coord.instruction_dim, v));
                let ev = tape.constant(Matrix::from_vec(bsz, coord.total_latent(), e));
                coord.forward(tape, sv, vv, ev)
            })
            .collect(),
    )
}

/// Off-tape agent features for every (segment, agent) row at `offset`.
fn features(model: &Model, batch: &TrainBatch, offset: usize) -> Matrix {
    let c = &model.config;
    let n = c.n_agents;
    let width = c.feature_dim(model.variant);
    let mut x = Vec::with_capacity(batch.size() * n * width);
    for (b, ep) in batch.episodes.iter().enumerate() {
        let t = batch.step(b, offset);
        let obs = &ep.observations[t];
        let instr = ep.instructions_at(t);
        for i in 0..n {
            let prev = (t > 0).then(|| ep.actions[t - 1][i]);
            model.encode_features(
                &mut x,
                i,
                &obs[i * c.obs_dim..(i + 1) * c.obs_dim],
                prev,
                ep.positions[t][i],
                instr.agent(i),
                &ep.states[t],
            );
        }
    }
    Matrix::from_vec(batch.size() * n, width, x)
}

fn initial_hidden(model: &Model, batch: &TrainBatch) -> Matrix {
    let n = model.config.n_agents;
    let h = model.config.agent_hidden;
    let mut data = Vec::with_capacity(batch.size() * n * h);
    for (b, ep) in batch.episodes.iter().enumerate() {
        data.extend_from_slice(ep.hidden[ep.block_of(batch.starts[b])].as_slice());
    }
    Matrix::from_vec(batch.size() * n, h, data)
}

/// Agent utilities (`B·n x A`) for offsets `0..steps`, from the stored
/// hidden state at each segment start.
fn unroll(tape: &mut Tape, model: &Model, batch: &TrainBatch, latents: Option<&[CoordinatorVars]>, steps: usize) -> Vec<Var> {
    let c = &model.config;
    let rows = batch.size() * c.n_agents;
    let r = batch.refresh_interval();
    let mut per_agent_z: Vec<Option<Var>> = vec![None; latents.map_or(0, |l| l.len())];
    let mut h = tape.constant(initial_hidden(model, batch));
    let mut qs = Vec::with_capacity(steps);
    for offset in 0..steps {
        let f = tape.constant(features(model, batch, offset));
        let x = match latents {
            Some(l) => {
                let j = offset / r;
                let z = *per_agent_z[j].get_or_insert_with(|| tape.reshape(l[j].z, rows, c.latent_dim));
                tape.concat_cols(&[f, z])
            }
            None => f,
        };
        let (q, h_next) = model.agent.step(tape, x, h);
        qs.push(q);
        h = h_next;
    }
    qs
}

fn states_at(batch: &TrainBatch, offset: usize, state_dim: usize) -> Matrix {
    let mut s = Vec::with_capacity(batch.size() * state_dim);
    for (b, ep) in batch.episodes.iter().enumerate() {
        s.extend_from_slice(&ep.states[batch.step(b, offset)]);
    }
    Matrix::from_vec(batch.size(), state_dim, s)
}

fn mixer_cond(tape: &mut Tape, model: &Model, batch: &TrainBatch, latents: Option<&[CoordinatorVars]>, offset: usize) -> Var {
    let s = tape.constant(states_at(batch, offset, model.config.state_dim));
    match latents {
        Some(l) => tape.concat_cols(&[s, l[offset / batch.refresh_interval()].z]),
        None => s,
    }
}

/// Targets from the frozen parameters: per-agent greedy utilities at `t + 1`
/// mixed under the target mixer, with the target coordinator's latent.
pub fn td_targets(model: &Model, target: &ParamStore, batch: &TrainBatch, gamma: f64) -> TdTargets {
    let n = model.config.n_agents;
    let bsz = batch.size();
    let mut tape = Tape::new(target);
    let latents = latent_pass(&mut tape, model, batch, batch.blocks() + 1);
    let qs = unroll(&mut tape, model, batch, latents.as_deref(), batch.len + 1);
    let mut utilities = Vec::with_capacity(batch.len);
    let mut conds = Vec::with_capacity(batch.len);
    for (offset, &qv) in qs.iter().enumerate().skip(1) {
        let q = tape.value(qv);
        let best: Vec<f64> = (0..q.rows())
            .map(|row| q.row(row).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        utilities.push(tape.constant(Matrix::from_vec(bsz, n, best)));
        conds.push(mixer_cond(&mut tape, model, batch, latents.as_deref(), offset));
    }
    let u = tape.concat_rows(&utilities);
    let c = tape.concat_rows(&conds);
    let next = model.mixer.forward(&mut tape, u, c);
    let next = tape.value(next);

    let mut values = Vec::with_capacity(batch.len * bsz);
    let mut mask = Vec::with_capacity(batch.len * bsz);
    for offset in 0..batch.len {
        for (b, ep) in batch.episodes.iter().enumerate() {
            if batch.valid(b, offset) {
                let t = batch.starts[b] + offset;
                let done = t + 1 == ep.len();
                values.push(td_target(ep.rewards[t], gamma, done, next.get(offset * bsz + b, 0)));
                mask.push(1.0);
            } else {
                values.push(0.0);
                mask.push(0.0);
            }
        }
    }
    TdTargets { values, mask }
}

/// Mean squared Bellman residual of the online joint value over valid steps.
pub fn rl_loss(tape: &mut Tape, model: &Model, batch: &TrainBatch, latents: Option<&[CoordinatorVars]>, targets: &TdTargets) -> Var {
    let n = model.config.n_agents;
    let bsz = batch.size();
    let qs = unroll(tape, model, batch, latents, batch.len);
    let mut chosen = Vec::with_capacity(batch.len);
    let mut conds = Vec::with_capacity(batch.len);
    for (offset, &q) in qs.iter().enumerate() {
        let mut index = Vec::with_capacity(bsz * n);
        for (b, ep) in batch.episodes.iter().enumerate() {
            let t = batch.step(b, offset).min(ep.len() - 1);
            index.extend_from_slice(&ep.actions[t]);
        }
        let g = tape.gather(q, index);
        chosen.push(tape.reshape(g, bsz, n));
        conds.push(mixer_cond(tape, model, batch, latents, offset));
    }
    let u = tape.concat_rows(&chosen);
    let c = tape.concat_rows(&conds);
    let qtot = model.mixer.forward(tape, u, c);
    let rows = batch.len * bsz;
    let y = tape.constant(Matrix::from_vec(rows, 1, targets.values.clone()));
    let m = tape.constant(Matrix::from_vec(rows, 1, targets.mask.clone()));
    let d = tape.sub(qtot, y);
    let d = tape.mul(d, m);
    let sq = tape.square(d);
    let total = tape.sum_all(sq);
    let count: f64 = targets.mask.iter().sum();
    tape.scale(total, 1.0 / count.max(1.0))
}

/// `-log q(z | ζ, s, v) - H(z | s, v)` averaged over the refresh steps of the
/// batch. The posterior is the product of the state factor and one step factor
/// per future step in the window; steps past the episode end drop out.
pub fn ce_loss(tape: &mut Tape, model: &Model, batch: &TrainBatch, latents: &[CoordinatorVars]) -> Var {
    let post = model.posterior.as_ref().expect("ce_loss requires a posterior network");
    let c = &model.config;
    let (n, a) = (c.n_agents, c.n_actions);
    let bsz = batch.size();
    let r = batch.refresh_interval();
    let zdim = c.joint_latent();
    let mut terms = Vec::with_capacity(batch.blocks());
    let mut block_mask = Vec::with_capacity(batch.blocks() * bsz);
    for (j, lat) in latents.iter().enumerate().take(batch.blocks()) {
        let offset = j * r;
        let mut xs = Vec::with_capacity(bsz * c.posterior_state_input());
        for (b, ep) in batch.episodes.iter().enumerate() {
            let t = batch.step(b, offset).min(ep.len() - 1);
            xs.extend_from_slice(&ep.states[t]);
            for &ai in &ep.actions[t] {
                one_hot_into(&mut xs, Some(ai), a);
            }
            xs.extend(instruction_features(ep.instructions_at(t), &ep.positions[t]));
            block_mask.push(if batch.valid(b, offset) { 1.0 } else { 0.0 });
        }
        let xs = tape.constant(Matrix::from_vec(bsz, c.posterior_state_input(), xs));
        let mut factors: Vec<(GaussianVars, Option<Matrix>)> = vec![(post.state(tape, xs), None)];
        for k in 1..c.window {
            let mut xk = Vec::with_capacity(bsz * c.posterior_step_input());
            let mut mask = Matrix::zeros(bsz, zdim);
            for (b, ep) in batch.episodes.iter().enumerate() {
                let t = (batch.starts[b] + offset + k).min(ep.len() - 1);
                xk.extend_from_slice(&ep.observations[t]);
                for &ai in &ep.actions[t] {
                    one_hot_into(&mut xk, Some(ai), a);
                }
                xk.extend(instruction_features(ep.instructions_at(t), &ep.positions[t]));
                if batch.starts[b] + offset + k < ep.len() {
                    mask.row_mut(b).fill(1.0);
                }
            }
            debug_assert_eq!(xk.len(), bsz * (n * (c.obs_dim + a) + c.instruction_dim()));
            let xk = tape.constant(Matrix::from_vec(bsz, c.posterior_step_input(), xk));
            factors.push((post.step(tape, xk), Some(mask)));
        }
        let q = gaussian::product(tape, &factors);
        let lq = gaussian::log_prob(tape, q, lat.z);
        let h = gaussian::entropy(tape, lat.dist.variance);
        let s = tape.add(lq, h);
        terms.push(tape.scale(s, -1.0));
    }
    let all = tape.concat_rows(&terms);
    let count: f64 = block_mask.iter().sum();
    let m = tape.constant(Matrix::from_vec(block_mask.len(), 1, block_mask));
    let masked = tape.mul(all, m);
    let total = tape.sum_all(masked);
    tape.scale(total, 1.0 / count.max(1.0))
}

/// Builds `L_RL` and, when `with_ce` holds and the model has a posterior,
/// `L_CE`, sharing one coordinator pass.
pub fn build_losses(
    tape: &mut Tape,
    model: &Model,
    target: &ParamStore,
    batch: &TrainBatch,
    cfg: &LossConfig,
    with_ce: bool,
) -> Losses {
    let targets = td_targets(model, target, batch, cfg.gamma);
    let latents = latent_pass(tape, model, batch, batch.blocks());
    let rl = rl_loss(tape, model, batch, latents.as_deref(), &targets);
    let ce = match (&latents, with_ce && model.posterior.is_some()) {
        (Some(l), true) => Some(ce_loss(tape, model, batch, l)),
        _ => None,
    };
    let total = match ce {
        Some(ce) => {
            let w = tape.scale(ce, cfg.ce_weight);
            tape.add(rl, w)
        }
        None => rl,
    };
    Losses { rl, ce, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Observation, Scenario};
    use crate::instruction::WalkNoise;
    use crate::model::{ModelConfig, NetworkSizes, Variant};
    use crate::policy::StepInput;
    use crate::train::collect_episode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// The batched training unroll must reproduce the utilities seen by the
    /// agents during the rollout, segment starts included.
    #[test]
    fn unroll_matches_execution_path() {
        let scenario = Scenario::default();
        let sizes = NetworkSizes {
            agent_hidden: 8,
            ..NetworkSizes::default()
        };
        for variant in Variant::ALL {
            let model = Model::new(variant, ModelConfig::new(&scenario, &sizes), 3).unwrap();
            let c = &model.config;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let walk = WalkNoise::new(0.1).unwrap();
            let ep = collect_episode(&model, &scenario, 7, 0.7, &walk, &mut rng).unwrap();

            let mut rt = model.start_episode();
            let mut reference = Vec::new();
            for t in 0..ep.len() {
                let obs: Vec<Observation> = (0..c.n_agents)
                    .map(|i| Observation(ep.observations[t][i * c.obs_dim..(i + 1) * c.obs_dim].to_vec()))
                    .collect();
                let input = StepInput {
                    observations: &obs,
                    positions: &ep.positions[t],
                    instructions: ep.instructions_at(t),
                    global_state: &ep.states[t],
                };
                if t % c.refresh_interval == 0 {
                    model.refresh_latent(&mut rt, &input, &ep.noise[ep.block_of(t)]).unwrap();
                }
                reference.push(model.utilities(&mut rt, &input).unwrap());
                rt.prev_actions = Some(ep.actions[t].clone());
            }

            let len = 12;
            let starts = vec![0, 40, 132];
            let batch = TrainBatch::new(vec![&ep; 3], starts.clone(), len).unwrap();
            let mut tape = Tape::new(&model.params);
            let lat = latent_pass(&mut tape, &model, &batch, batch.blocks());
            let qs = unroll(&mut tape, &model, &batch, lat.as_deref(), len);
            for (offset, q) in qs.iter().enumerate() {
                let q = tape.value(*q);
                for (b, &s) in starts.iter().enumerate() {
                    if s + offset >= ep.len() {
                        continue;
                    }
                    let want = &reference[s + offset];
                    for i in 0..c.n_agents {
                        for (x, y) in q.row(b * c.n_agents + i).iter().zip(want.row(i)) {
                            assert!((x - y).abs() < 1e-12, "{variant} t={} agent {i}: {x} vs {y}", s + offset);
                        }
                    }
                }
            }
        }
    }
}
