use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// One direction of a GRU.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 - z) ⊙ h + z ⊙ h̃`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut w = |s: &str, cols: usize| store.glorot(format!("{name}.{s}"), hidden_dim, cols, rng);
        let w_z = w("w_z", input_dim);
        let w_r = w("w_r", input_dim);
        let w_h = w("w_h", input_dim);
        let u_z = w("u_z", hidden_dim);
        let u_r = w("u_r", hidden_dim);
        let u_h = w("u_h", hidden_dim);
        let b_z = store.zeros(format!("{name}.b_z"), hidden_dim, 1);
        let b_r = store.zeros(format!("{name}.b_r"), hidden_dim, 1);
        let b_h = store.zeros(format!("{name}.b_h"), hidden_dim, 1);
        Self {
            input_dim,
            hidden_dim,
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
        }
    }

    pub fn num_values(input_dim: usize, hidden_dim: usize) -> usize {
        3 * (hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim)
    }
}

pub fn gru_step(tape: &mut Tape, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    check_dim("gru_step input", p.input_dim, tape.dim(x))?;
    check_dim("gru_step hidden", p.hidden_dim, tape.dim(h))?;
    let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId, hin: Var| {
        let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
        let wx = tape.matvec(w, x);
        let uh = tape.matvec(u, hin);
        let s = tape.add(wx, uh);
        tape.add(s, b)
    };
    let z_pre = gate(tape, p.w_z, p.u_z, p.b_z, h);
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, p.w_r, p.u_r, p.b_r, h);
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h);
    let c_pre = gate(tape, p.w_h, p.u_h, p.b_h, rh);
    let cand = tape.tanh(c_pre);
    let keep = tape.one_minus(z);
    let a = tape.mul(keep, h);
    let b = tape.mul(z, cand);
    Ok(tape.add(a, b))
}

/// Runs `p` over the unmasked positions of `seq` from `h0`, returning the final state.
pub fn gru_run(tape: &mut Tape, seq: &[Var], mask: &[bool], p: &GruParams, h0: Var, reverse: bool) -> Result<Var> {
    let mut h = h0;
    let mut step = |tape: &mut Tape, i: usize| -> Result<()> {
        if mask[i] {
            h = gru_step(tape, seq[i], h, p)?;
        }
        Ok(())
    };
    if reverse {
        for i in (0..seq.len()).rev() {
            step(tape, i)?;
        }
    } else {
        for i in 0..seq.len() {
            step(tape, i)?;
        }
    }
    Ok(h)
}

/// Concatenation of the final forward state and the final backward state;
/// masked positions leave both states untouched.
pub fn bigru_encode(tape: &mut Tape, seq: &[Var], mask: &[bool], fwd: &GruParams, bwd: &GruParams) -> Result<Var> {
    check_dim("bigru_encode mask", seq.len(), mask.len())?;
    check_dim("bigru_encode directions", fwd.hidden_dim, bwd.hidden_dim)?;
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("bigru_encode: sequence is fully masked"));
    }
    let h0 = tape.zeros(fwd.hidden_dim);
    let hf = gru_run(tape, seq, mask, fwd, h0, false)?;
    let hb = gru_run(tape, seq, mask, bwd, h0, true)?;
    Ok(tape.concat(&[hf, hb]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: store.glorot(format!("{name}.weight"), output_dim, input_dim, rng),
            bias: store.zeros(format!("{name}.bias"), output_dim, 1),
            input_dim,
            output_dim,
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let wx = tape.matvec(w, x);
        tape.add(wx, b)
    }
}

/// Feed-forward stack: tanh after every layer except the last, which is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect();
        Self { layers }
    }

    /// One tanh hidden layer as wide as the output.
    pub fn with_hidden<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        Self::new(store, name, &[input_dim, output_dim, output_dim], rng)
    }

    pub fn num_values(input_dim: usize, output_dim: usize) -> usize {
        (input_dim + 1) * output_dim + (output_dim + 1) * output_dim
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output_dim).unwrap_or(0)
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_dim("mlp input", self.input_dim(), tape.dim(x))?;
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, h);
            if i < last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}
