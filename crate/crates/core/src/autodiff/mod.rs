//! Reverse-mode differentiation over a flat tape of tensor operations.
//!
//! Tensors are row-major `f64` buffers with explicit shapes. Nothing
//! broadcasts implicitly: adding a bias to every row of a batch is its own
//! operation ([`Tape::add_row`]). Leading dimensions are treated as a batch of
//! rows by [`Tape::matmul_nt`], which is how `[B, L, k]` key tensors get
//! projected in one call.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with_floor, GradCheckReport, ParamCheck, DEFAULT_REL_FLOOR};
pub use layers::{
    additive_attention, attention_keys, bidirectional_gru, dense, embedding_lookup, gru_cell, AttentionKeys,
    AttentionParams, AttentionVars, BiGruStates, DenseParams, DenseVars, GruParams, GruVars, Initializer,
    EMBEDDING_INIT_SCALE,
};
pub use optim::{adam_step, AdamConfig};
pub use params::{ParamId, Parameter, ParameterStore};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
