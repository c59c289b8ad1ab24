use rand::Rng;

use super::layers::{Linear, Mlp};
use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::NnError;

/// Monotonic mixing network. Hypernetworks map the conditioning vector to the
/// mixing weights, which pass through `abs` so the joint value is nondecreasing
/// in every per-agent utility:
///
/// `Q_tot = elu(q · |W1(c)| + b1(c)) · |w2(c)| + V(c)`
#[derive(Clone, Debug)]
pub struct MonotonicMixer {
    pub n_agents: usize,
    pub embed_dim: usize,
    pub cond_dim: usize,
    pub hyper_w1: Mlp,
    pub hyper_b1: Linear,
    pub hyper_w2: Mlp,
    pub value: Mlp,
}

impl MonotonicMixer {
    pub fn new(
        store: &mut ParamStore,
        n_agents: usize,
        cond_dim: usize,
        embed_dim: usize,
        hyper_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            n_agents,
            embed_dim,
            cond_dim,
            hyper_w1: Mlp::new(store, "mixer.hyper_w1", &[cond_dim, hyper_dim, n_agents * embed_dim], rng),
            hyper_b1: Linear::new(store, "mixer.hyper_b1", cond_dim, embed_dim, rng),
            hyper_w2: Mlp::new(store, "mixer.hyper_w2", &[cond_dim, hyper_dim, embed_dim], rng),
            value: Mlp::new(store, "mixer.value", &[cond_dim, embed_dim, 1], rng),
        }
    }

    /// `utilities` is `B x n_agents`, `cond` is `B x cond_dim`; returns `B x 1`.
    pub fn forward(&self, tape: &mut Tape, utilities: Var, cond: Var) -> Var {
        let w1 = self.hyper_w1.forward(tape, cond);
        let w1 = tape.abs(w1);
        let b1 = self.hyper_b1.forward(tape, cond);
        let hidden = tape.row_vec_mat(utilities, w1);
        let hidden = tape.add(hidden, b1);
        let hidden = tape.elu(hidden);
        let w2 = self.hyper_w2.forward(tape, cond);
        let w2 = tape.abs(w2);
        let weighted = tape.mul(hidden, w2);
        let y = tape.sum_cols(weighted);
        let v = self.value.forward(tape, cond);
        tape.add(y, v)
    }

    /// Scalar joint value for a single input.
    pub fn evaluate(&self, params: &ParamStore, utilities: &[f64], conditioning: &[f64]) -> Result<f64, NnError> {
        NnError::check("mixer utilities", self.n_agents, utilities.len())?;
        NnError::check("mixer conditioning", self.cond_dim, conditioning.len())?;
        let mut tape = Tape::new(params);
        let q = tape.constant(Matrix::row_vector(utilities.to_vec()));
        let c = tape.constant(Matrix::row_vector(conditioning.to_vec()));
        let out = self.forward(&mut tape, q, c);
        Ok(tape.value(out).get(0, 0))
    }
}
