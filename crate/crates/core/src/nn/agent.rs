use rand::Rng;

use super::layers::{GruCell, Linear};
use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{Tape, Var};

/// Per-agent recurrent utility network shared by all agents:
/// input → linear → ReLU → GRU → linear → one utility per action.
#[derive(Clone, Debug)]
pub struct AgentQNet {
    pub fc_in: Linear,
    pub gru: GruCell,
    pub fc_out: Linear,
}

impl AgentQNet {
    pub fn new(store: &mut ParamStore, input_dim: usize, hidden_dim: usize, n_actions: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc_in: Linear::new(store, "agent.fc_in", input_dim, hidden_dim, rng),
            gru: GruCell::new(store, "agent.gru", hidden_dim, hidden_dim, rng),
            fc_out: Linear::new(store, "agent.fc_out", hidden_dim, n_actions, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc_in.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim
    }

    pub fn n_actions(&self) -> usize {
        self.fc_out.out_dim
    }

    /// Hidden state for `rows` agents at episode start.
    pub fn initial_hidden(&self, rows: usize) -> Matrix {
        Matrix::zeros(rows, self.hidden_dim())
    }

    /// One recurrent step on a batch of rows; returns `(utilities, next_hidden)`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> (Var, Var) {
        let e = self.fc_in.forward(tape, x);
        let e = tape.relu(e);
        let h = self.gru.forward(tape, e, h);
        let q = self.fc_out.forward(tape, h);
        (q, h)
    }
}
