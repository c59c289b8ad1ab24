use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Fully connected layer `x W + b`, initialized like the usual
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` default.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), in_dim, out_dim, bound, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, out_dim, bound, rng);
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// ReLU multilayer perceptron; no activation after the last layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists every width including input and output.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }
}

/// Gated recurrent unit with reset gate applied after the hidden projection:
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// u  = σ(x W_iu + b_iu + h W_hu + b_hu)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 - u) ⊙ n + u ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        // Both projections use the recurrent fan-in bound.
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mk = |store: &mut ParamStore, suffix: &str, fan_in: usize, rng: &mut _| {
            let w = store.add_uniform(format!("{name}.{suffix}.w"), fan_in, 3 * hidden_dim, bound, rng);
            let b = store.add_uniform(format!("{name}.{suffix}.b"), 1, 3 * hidden_dim, bound, rng);
            Linear {
                w,
                b,
                in_dim: fan_in,
                out_dim: 3 * hidden_dim,
            }
        };
        let input = mk(store, "ih", in_dim, rng);
        let hidden = mk(store, "hh", hidden_dim, rng);
        Self {
            input,
            hidden,
            hidden_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, h: Var) -> Var {
        let hd = self.hidden_dim;
        let gi = self.input.forward(tape, x);
        let gh = self.hidden.forward(tape, h);
        let i_r = tape.slice_cols(gi, 0, hd);
        let i_u = tape.slice_cols(gi, hd, hd);
        let i_n = tape.slice_cols(gi, 2 * hd, hd);
        let h_r = tape.slice_cols(gh, 0, hd);
        let h_u = tape.slice_cols(gh, hd, hd);
        let h_n = tape.slice_cols(gh, 2 * hd, hd);
        let r = tape.add(i_r, h_r);
        let r = tape.sigmoid(r);
        let u = tape.add(i_u, h_u);
        let u = tape.sigmoid(u);
        let rn = tape.mul(r, h_n);
        let n = tape.add(i_n, rn);
        let n = tape.tanh(n);
        let keep = tape.one_minus(u);
        let a = tape.mul(keep, n);
        let b = tape.mul(u, h);
        tape.add(a, b)
    }
}
