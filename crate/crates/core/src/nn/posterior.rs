use rand::Rng;

use super::gaussian::{split_gaussian, GaussianVars};
use super::layers::{Linear, Mlp};
use super::params::ParamStore;
use super::tape::{Tape, Var};

/// Variational posterior `q_ξ` over the joint latent, factorized into a state
/// factor on `(s_t, a_t, v_t)` and a shared step factor on `(o_k, a_k, v_k)`
/// for each future step of the window. Like the coordinator, each factor
/// adds a linear path from its input to its mean.
#[derive(Clone, Debug)]
pub struct PosteriorNet {
    pub state_factor: Mlp,
    pub state_skip: Linear,
    pub step_factor: Mlp,
    pub step_skip: Linear,
    pub latent_total: usize,
}

impl PosteriorNet {
    pub fn new(
        store: &mut ParamStore,
        state_input_dim: usize,
        step_input_dim: usize,
        latent_total: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            state_factor: Mlp::new(store, "posterior.state", &[state_input_dim, hidden_dim, 2 * latent_total], rng),
            state_skip: Linear::new(store, "posterior.state.skip", state_input_dim, latent_total, rng),
            step_factor: Mlp::new(store, "posterior.step", &[step_input_dim, hidden_dim, 2 * latent_total], rng),
            step_skip: Linear::new(store, "posterior.step.skip", step_input_dim, latent_total, rng),
            latent_total,
        }
    }

    fn factor(mlp: &Mlp, skip: &Linear, latent_total: usize, tape: &mut Tape, input: Var) -> GaussianVars {
        let raw = mlp.forward(tape, input);
        let mut g = split_gaussian(tape, raw, latent_total);
        let direct = skip.forward(tape, input);
        g.mean = tape.add(g.mean, direct);
        g
    }

    pub fn state(&self, tape: &mut Tape, input: Var) -> GaussianVars {
        Self::factor(&self.state_factor, &self.state_skip, self.latent_total, tape, input)
    }

    pub fn step(&self, tape: &mut Tape, input: Var) -> GaussianVars {
        Self::factor(&self.step_factor, &self.step_skip, self.latent_total, tape, input)
    }
}
