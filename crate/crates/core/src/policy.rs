//! Decentralized execution: per-agent recurrent state, latent refreshes, and
//! action selection for a trained (or untrained) [`Model`].

use rand::Rng;

use crate::env::{JointAction, Observation};
use crate::geometry::Vec2;
use crate::instruction::InstructionVector;
use crate::model::{instruction_features, Model, ModelError};
use crate::nn::{argmax, LatentInstruction, Matrix, NnError, Tape};

/// How the coordinator latent is drawn at execution time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    /// `z = μ + sqrt(Σ) ⊙ ε` with caller-supplied noise.
    Sample,
    /// `z = μ`.
    Mean,
}

/// Per-episode execution state of all agents.
#[derive(Clone, Debug)]
pub struct AgentRuntime {
    pub hidden: Matrix,
    pub prev_actions: Option<Vec<usize>>,
    pub latent: Option<LatentInstruction>,
}

/// Everything an agent step reads from the environment.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    pub observations: &'a [Observation],
    pub positions: &'a [Vec2],
    pub instructions: &'a InstructionVector,
    pub global_state: &'a [f64],
}

impl Model {
    pub fn start_episode(&self) -> AgentRuntime {
        AgentRuntime {
            hidden: self.agent.initial_hidden(self.config.n_agents),
            prev_actions: None,
            latent: None,
        }
    }

    /// Recomputes the latent instructions from the current global state and
    /// instructions. No-op for variants without a coordinator.
    pub fn refresh_latent(&self, rt: &mut AgentRuntime, input: &StepInput, noise: &[f64]) -> Result<(), ModelError> {
        if let Some(coord) = &self.coordinator {
            let v = instruction_features(input.instructions, input.positions);
            rt.latent = Some(coord.sample(&self.params, input.global_state, &v, noise)?);
        }
        Ok(())
    }

    /// Per-agent utilities (`n_agents x n_actions`); advances the hidden state.
    pub fn utilities(&self, rt: &mut AgentRuntime, input: &StepInput) -> Result<Matrix, ModelError> {
        let c = &self.config;
        let n = c.n_agents;
        NnError::check("observations", n, input.observations.len())?;
        NnError::check("positions", n, input.positions.len())?;
        NnError::check("instruction agents", n, input.instructions.n_agents())?;
        let latent = match (&self.coordinator, &rt.latent) {
            (Some(_), Some(l)) => Some(l),
            (Some(_), None) => return Err(ModelError::Config("latent not initialized; call refresh_latent".into())),
            (None, _) => None,
        };
        let width = c.agent_input_dim(self.variant);
        let mut x = Vec::with_capacity(n * width);
        for i in 0..n {
            let prev = rt.prev_actions.as_ref().map(|a| a[i]);
            self.encode_features(
                &mut x,
                i,
                input.observations[i].as_slice(),
                prev,
                input.positions[i],
                input.instructions.agent(i),
                input.global_state,
            );
            if let Some(l) = latent {
                x.extend_from_slice(l.agent(i));
            }
        }
        let mut tape = Tape::new(&self.params);
        let xv = tape.constant(Matrix::from_vec(n, width, x));
        let hv = tape.constant(rt.hidden.clone());
        let (q, h) = self.agent.step(&mut tape, xv, hv);
        rt.hidden = tape.value(h).clone();
        Ok(tape.value(q).clone())
    }
}

impl AgentRuntime {
    pub fn commit(&mut self, actions: &JointAction) {
        self.prev_actions = Some(actions.indices());
    }
}

/// With probability `epsilon` a uniform action, otherwise the argmax with the
/// lowest index winning ties.
pub fn epsilon_greedy(utilities: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..utilities.len())
    } else {
        argmax(utilities)
    }
}

/// Greedy or ε-greedy joint action from a utilities matrix.
pub fn select_actions(utilities: &Matrix, epsilon: f64, rng: &mut impl Rng) -> JointAction {
    let indices: Vec<usize> = (0..utilities.rows())
        .map(|i| epsilon_greedy(utilities.row(i), epsilon, rng))
        .collect();
    JointAction::from_indices(&indices).expect("utilities width equals the action count")
}
