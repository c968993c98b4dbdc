//! Layers built from tape primitives. Each layer has a `*Params` struct of
//! store handles, created once, and a `*Vars` struct binding those handles
//! onto a particular tape.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::math;
use crate::rng::Rng;
use crate::{Error, Result};

/// Draws initial values from one seeded stream in registration order.
///
/// Matrices are uniform on `±sqrt(1/fan_in)`, biases are zero and embedding
/// tables are uniform on `±0.05`.
#[derive(Debug, Clone)]
pub struct Initializer {
    rng: Rng,
}

pub const EMBEDDING_INIT_SCALE: f64 = 0.05;

impl Initializer {
    pub fn new(rng: Rng) -> Self {
        Self { rng }
    }

    fn uniform(&mut self, shape: &[usize], scale: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.rng.random_range(-scale..=scale);
        }
        t
    }

    /// `[out, fan_in]` weight matrix.
    pub fn matrix(&mut self, out: usize, fan_in: usize) -> Tensor {
        let scale = math::sqrt(1.0 / fan_in.max(1) as f64);
        self.uniform(&[out, fan_in], scale)
    }

    pub fn bias(&mut self, n: usize) -> Tensor {
        Tensor::zeros(&[n])
    }

    /// Vector treated as a one-row matrix with fan-in `n`.
    pub fn row(&mut self, n: usize) -> Tensor {
        let scale = math::sqrt(1.0 / n.max(1) as f64);
        self.uniform(&[n], scale)
    }

    pub fn embedding(&mut self, rows: usize, dim: usize) -> Tensor {
        self.uniform(&[rows, dim], EMBEDDING_INIT_SCALE)
    }
}

fn register(store: &mut ParameterStore, prefix: &str, name: &str, t: Tensor) -> Result<ParamId> {
    store.add(format!("{prefix}.{name}"), t)
}

/// `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, Copy)]
pub struct DenseParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

impl DenseParams {
    pub fn register(
        store: &mut ParameterStore,
        init: &mut Initializer,
        prefix: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        let w = register(store, prefix, "w", init.matrix(output, input))?;
        let b = register(store, prefix, "b", init.bias(output))?;
        Ok(Self { w, b })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> DenseVars {
        DenseVars { w: tape.param(store, self.w), b: tape.param(store, self.b) }
    }
}

/// Dense layer applied to every row of `x` (`[.., in]`).
pub fn dense(tape: &mut Tape, x: Var, p: &DenseVars) -> Result<Var> {
    let y = tape.matmul_nt(x, p.w)?;
    tape.add_row(y, p.b)
}

/// Rows of `table` selected by `ids`.
pub fn embedding_lookup(tape: &mut Tape, table: Var, ids: &[usize]) -> Result<Var> {
    tape.gather(table, ids)
}

/// GRU weights: `w_*` act on the input, `u_*` on the previous state.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
    pub hidden: usize,
}

impl GruParams {
    pub fn register(
        store: &mut ParameterStore,
        init: &mut Initializer,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let mut gate = |g: &str| -> Result<(ParamId, ParamId, ParamId)> {
            let w = register(store, prefix, &format!("w_{g}"), init.matrix(hidden, input))?;
            let u = register(store, prefix, &format!("u_{g}"), init.matrix(hidden, hidden))?;
            let b = register(store, prefix, &format!("b_{g}"), init.bias(hidden))?;
            Ok((w, u, b))
        };
        let (w_z, u_z, b_z) = gate("z")?;
        let (w_r, u_r, b_r) = gate("r")?;
        let (w_h, u_h, b_h) = gate("h")?;
        Ok(Self { w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h, input, hidden })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> GruVars {
        GruVars {
            w_z: tape.param(store, self.w_z),
            u_z: tape.param(store, self.u_z),
            b_z: tape.param(store, self.b_z),
            w_r: tape.param(store, self.w_r),
            u_r: tape.param(store, self.u_r),
            b_r: tape.param(store, self.b_r),
            w_h: tape.param(store, self.w_h),
            u_h: tape.param(store, self.u_h),
            b_h: tape.param(store, self.b_h),
            hidden: self.hidden,
        }
    }
}

/// One GRU step on a batch: `x: [B, in]`, `h_prev: [B, d]`.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_cell(tape: &mut Tape, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, h: Var| -> Result<Var> {
        let wx = tape.matmul_nt(x, w)?;
        let uh = tape.matmul_nt(h, u)?;
        let s = tape.add(wx, uh)?;
        tape.add_row(s, b)
    };
    let z_pre = gate(tape, p.w_z, p.u_z, p.b_z, h_prev)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, p.w_r, p.u_r, p.b_r, h_prev)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let cand_pre = gate(tape, p.w_h, p.u_h, p.b_h, rh)?;
    let cand = tape.tanh(cand_pre);
    // h + z ⊙ (h̃ − h) is the same convex combination with fewer nodes.
    let diff = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, diff)?;
    tape.add(h_prev, step)
}

/// Per-step encoder output of [`bidirectional_gru`].
#[derive(Debug, Clone)]
pub struct BiGruStates {
    /// `[B, 2d]` per step: forward state then backward state.
    pub states: Vec<Var>,
    /// Forward state after the last step.
    pub last_forward: Var,
    /// Backward state after consuming the first step.
    pub last_backward: Var,
}

/// Runs `fwd` left to right and `bwd` right to left from zero states over
/// `sequence` (each element `[B, in]`).
pub fn bidirectional_gru(tape: &mut Tape, sequence: &[Var], fwd: &GruVars, bwd: &GruVars) -> Result<BiGruStates> {
    let first = *sequence.first().ok_or_else(|| Error::invalid("bidirectional_gru: empty sequence"))?;
    let batch = tape.value(first).leading();
    let mut h = tape.input(Tensor::zeros(&[batch, fwd.hidden]));
    let mut forward = Vec::with_capacity(sequence.len());
    for &x in sequence {
        h = gru_cell(tape, x, h, fwd)?;
        forward.push(h);
    }
    let mut h = tape.input(Tensor::zeros(&[batch, bwd.hidden]));
    let mut backward = alloc::vec![h; sequence.len()];
    for (j, &x) in sequence.iter().enumerate().rev() {
        h = gru_cell(tape, x, h, bwd)?;
        backward[j] = h;
    }
    let mut states = Vec::with_capacity(sequence.len());
    for (f, b) in forward.iter().zip(&backward) {
        states.push(tape.concat(&[*f, *b])?);
    }
    Ok(BiGruStates { states, last_forward: *forward.last().unwrap(), last_backward: backward[0] })
}

/// Additive attention `e_j = v · tanh(W_a q + U_a k_j)`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_a: ParamId,
    pub u_a: ParamId,
    pub v: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_a: Var,
    pub u_a: Var,
    pub v: Var,
}

impl AttentionParams {
    pub fn register(
        store: &mut ParameterStore,
        init: &mut Initializer,
        prefix: &str,
        query: usize,
        key: usize,
        attn: usize,
    ) -> Result<Self> {
        let w_a = register(store, prefix, "w_a", init.matrix(attn, query))?;
        let u_a = register(store, prefix, "u_a", init.matrix(attn, key))?;
        let v = register(store, prefix, "v", init.row(attn))?;
        Ok(Self { w_a, u_a, v })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> AttentionVars {
        AttentionVars {
            w_a: tape.param(store, self.w_a),
            u_a: tape.param(store, self.u_a),
            v: tape.param(store, self.v),
        }
    }
}

/// Keys with their `U_a` projection, computed once per sequence.
#[derive(Debug, Clone, Copy)]
pub struct AttentionKeys {
    /// `[B, L, k]`.
    pub keys: Var,
    /// `[B, L, a]`.
    pub projected: Var,
}

pub fn attention_keys(tape: &mut Tape, keys: Var, p: &AttentionVars) -> Result<AttentionKeys> {
    let projected = tape.matmul_nt(keys, p.u_a)?;
    Ok(AttentionKeys { keys, projected })
}

/// Returns `(context [B, k], weights [B, L])` for `query: [B, q]`.
pub fn additive_attention(tape: &mut Tape, query: Var, keys: &AttentionKeys, p: &AttentionVars) -> Result<(Var, Var)> {
    let q = tape.matmul_nt(query, p.w_a)?;
    let scores = tape.attn_scores(q, keys.projected, p.v)?;
    let weights = tape.softmax_rows(scores);
    let context = tape.weighted_sum(weights, keys.keys)?;
    Ok((context, weights))
}
