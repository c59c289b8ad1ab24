use rand::Rng;

use super::gaussian::{reparameterize, split_gaussian, DiagGaussian, GaussianVars};
use super::layers::{Linear, Mlp};
use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::NnError;

/// Coordinator `g_φ`: maps the global state and the flattened instruction
/// vectors to a diagonal Gaussian over every agent's latent instruction.
#[derive(Clone, Debug)]
pub struct CoordinatorNet {
    pub mlp: Mlp,
    /// Linear path from the instructions straight to the latent mean.
    pub skip: Linear,
    pub state_dim: usize,
    pub instruction_dim: usize,
    pub n_agents: usize,
    pub latent_dim: usize,
}

/// Tape output of one coordinator pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct CoordinatorVars {
    pub dist: GaussianVars,
    /// `B x (n_agents * latent_dim)` reparameterized sample.
    pub z: Var,
}

/// Per-agent latent instructions with the distribution they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentInstruction {
    pub n_agents: usize,
    pub latent_dim: usize,
    pub z: Vec<f64>,
    pub dist: DiagGaussian,
}

impl LatentInstruction {
    pub fn agent(&self, i: usize) -> &[f64] {
        &self.z[i * self.latent_dim..(i + 1) * self.latent_dim]
    }
}

impl CoordinatorNet {
    pub fn new(
        store: &mut ParamStore,
        state_dim: usize,
        instruction_dim: usize,
        n_agents: usize,
        latent_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let out = 2 * n_agents * latent_dim;
        Self {
            mlp: Mlp::new(
                store,
                "coordinator",
                &[state_dim + instruction_dim, hidden_dim, hidden_dim, out],
                rng,
            ),
            skip: Linear::new(store, "coordinator.skip", instruction_dim, n_agents * latent_dim, rng),
            state_dim,
            instruction_dim,
            n_agents,
            latent_dim,
        }
    }

    pub fn total_latent(&self) -> usize {
        self.n_agents * self.latent_dim
    }

    pub fn forward(&self, tape: &mut Tape, state: Var, instructions: Var, noise: Var) -> CoordinatorVars {
        let x = tape.concat_cols(&[state, instructions]);
        let raw = self.mlp.forward(tape, x);
        let mut dist = split_gaussian(tape, raw, self.total_latent());
        let direct = self.skip.forward(tape, instructions);
        dist.mean = tape.add(dist.mean, direct);
        let z = reparameterize(tape, dist, noise);
        CoordinatorVars { dist, z }
    }

    /// Single-sample forward: `z = μ + sqrt(Σ) ⊙ noise`.
    pub fn sample(
        &self,
        params: &ParamStore,
        state: &[f64],
        instructions: &[f64],
        noise: &[f64],
    ) -> Result<LatentInstruction, NnError> {
        NnError::check("coordinator state", self.state_dim, state.len())?;
        NnError::check("coordinator instructions", self.instruction_dim, instructions.len())?;
        NnError::check("coordinator noise", self.total_latent(), noise.len())?;
        let mut tape = Tape::new(params);
        let s = tape.constant(Matrix::row_vector(state.to_vec()));
        let v = tape.constant(Matrix::row_vector(instructions.to_vec()));
        let e = tape.constant(Matrix::row_vector(noise.to_vec()));
        let out = self.forward(&mut tape, s, v, e);
        let dist = DiagGaussian::new(
            tape.value(out.dist.mean).as_slice().to_vec(),
            tape.value(out.dist.variance).as_slice().to_vec(),
        )?;
        Ok(LatentInstruction {
            n_agents: self.n_agents,
            latent_dim: self.latent_dim,
            z: tape.value(out.z).as_slice().to_vec(),
            dist,
        })
    }
}
