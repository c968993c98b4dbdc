use alloc::format;
use alloc::vec::Vec;

use super::{GroupIds, ModelConfig};
use crate::autodiff::{
    additive_attention, attention_keys, bidirectional_gru, dense, gru_cell, AttentionParams, DenseParams, GruParams,
    Initializer, ParamId, ParameterStore, Tape, Tensor, Var,
};
use crate::rng;
use crate::survival::{HazardCurve, ObservedOutcome};
use crate::{Error, Result};

/// Inputs outside `[−tol, 1 + tol]` are treated as unnormalized.
pub const INPUT_TOLERANCE: f64 = 1e-3;

const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone)]
struct GroupLayers {
    tables: [ParamId; 3],
    hidden: DenseParams,
    out: DenseParams,
}

/// Parameter handles and wiring; the values live in a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    group: Option<GroupLayers>,
    enc_fwd: GruParams,
    enc_bwd: GruParams,
    dec_init: DenseParams,
    attention: AttentionParams,
    dec_cell: GruParams,
    head: DenseParams,
}

/// Tape handles produced by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `[B, H]` logits.
    pub phi: Var,
    /// `[B, 2d]` group effect.
    pub group: Var,
    /// `[B, 2d]` encoder states per window day, group effect included.
    pub states: Vec<Var>,
    /// `[B, L]` attention weights per horizon step.
    pub attention: Vec<Var>,
}

impl Network {
    /// Registers every parameter in a fixed order: group embeddings (site,
    /// plant, part) and perceptron, forward and backward encoder GRUs,
    /// decoder initial layer, attention, decoder GRU, output head.
    pub fn register(config: &ModelConfig, store: &mut ParameterStore, init: &mut Initializer) -> Result<Self> {
        config.validate()?;
        let d = config.encoder_hidden;
        let d2 = config.decoder_hidden();
        let group = if config.heterogeneous {
            let names = ["group.embed_site", "group.embed_plant", "group.embed_part"];
            let mut tables = [ParamId(0); 3];
            for (i, name) in names.iter().enumerate() {
                tables[i] = store.add(*name, init.embedding(config.vocab_sizes[i], config.embed_dims[i]))?;
            }
            let concat: usize = config.embed_dims.iter().sum();
            let hidden = DenseParams::register(store, init, "group.hidden", concat, config.group_mlp_hidden)?;
            let out = DenseParams::register(store, init, "group.out", config.group_mlp_hidden, config.group_dim())?;
            Some(GroupLayers { tables, hidden, out })
        } else {
            None
        };
        let enc_fwd = GruParams::register(store, init, "encoder.forward", config.input_dim, d)?;
        let enc_bwd = GruParams::register(store, init, "encoder.backward", config.input_dim, d)?;
        let dec_init = DenseParams::register(store, init, "decoder.init", 2 * d, d2)?;
        let attention = AttentionParams::register(store, init, "decoder.attention", d2, 2 * d, d2)?;
        let dec_cell = GruParams::register(store, init, "decoder.cell", 2 * d + config.group_dim(), d2)?;
        let head = DenseParams::register(store, init, "decoder.head", d2, 1)?;
        Ok(Self { config: config.clone(), group, enc_fwd, enc_bwd, dec_init, attention, dec_cell, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Group effect for a batch of id tuples (`[B, 2d]`).
    pub fn group_effect(&self, tape: &mut Tape, store: &ParameterStore, ids: &[GroupIds]) -> Result<Var> {
        let Some(g) = &self.group else {
            return Ok(tape.input(Tensor::zeros(&[ids.len(), self.config.group_dim()])));
        };
        let mut parts = Vec::with_capacity(3);
        for (axis, &table) in g.tables.iter().enumerate() {
            let col: Vec<usize> = ids.iter().map(|i| i.as_array()[axis]).collect();
            let t = tape.param(store, table);
            parts.push(tape.gather(t, &col)?);
        }
        let e = tape.concat(&parts)?;
        let hidden = g.hidden.bind(tape, store);
        let h = dense(tape, e, &hidden)?;
        let h = tape.tanh(h);
        let out = g.out.bind(tape, store);
        dense(tape, h, &out)
    }

    /// Full forward pass on a batch of flat normalized windows.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        windows: &[&[f64]],
        ids: &[GroupIds],
    ) -> Result<ForwardPass> {
        let batch = windows.len();
        if batch == 0 || ids.len() != batch {
            return Err(Error::invalid(format!("forward: {batch} windows with {} id tuples", ids.len())));
        }
        let (len, dim) = (self.config.window_len, self.config.input_dim);
        for w in windows {
            if w.len() != len * dim {
                return Err(Error::Shape { op: "forward", left: alloc::vec![w.len()], right: alloc::vec![len, dim] });
            }
        }
        let group = self.group_effect(tape, store, ids)?;

        let mut sequence = Vec::with_capacity(len);
        for day in 0..len {
            let mut data = Vec::with_capacity(batch * dim);
            for w in windows {
                data.extend_from_slice(&w[day * dim..(day + 1) * dim]);
            }
            sequence.push(tape.input(Tensor::new(alloc::vec![batch, dim], data)?));
        }
        let fwd = self.enc_fwd.bind(tape, store);
        let bwd = self.enc_bwd.bind(tape, store);
        let enc = bidirectional_gru(tape, &sequence, &fwd, &bwd)?;
        let states = if self.group.is_some() {
            let mut adjusted = Vec::with_capacity(len);
            for &s in &enc.states {
                adjusted.push(tape.add(s, group)?);
            }
            adjusted
        } else {
            enc.states.clone()
        };

        let init = self.dec_init.bind(tape, store);
        let ends = tape.concat(&[enc.last_forward, enc.last_backward])?;
        let s0 = dense(tape, ends, &init)?;
        let mut s = tape.tanh(s0);

        let attn = self.attention.bind(tape, store);
        let keys = tape.stack(&states)?;
        let keys = attention_keys(tape, keys, &attn)?;
        let cell = self.dec_cell.bind(tape, store);
        let head = self.head.bind(tape, store);
        let mut phis = Vec::with_capacity(self.config.horizon);
        let mut attention = Vec::with_capacity(self.config.horizon);
        for _ in 0..self.config.horizon {
            let (context, weights) = additive_attention(tape, s, &keys, &attn)?;
            let input = tape.concat(&[context, group])?;
            s = gru_cell(tape, input, s, &cell)?;
            phis.push(dense(tape, s, &head)?);
            attention.push(weights);
        }
        let phi = tape.concat(&phis)?;
        Ok(ForwardPass { phi, group, states, attention })
    }

    /// Mean per-sample negative log-likelihood of a batch. Outcomes beyond
    /// the horizon are censored at it.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        windows: &[&[f64]],
        ids: &[GroupIds],
        outcomes: &[ObservedOutcome],
    ) -> Result<Var> {
        let pass = self.forward(tape, store, windows, ids)?;
        let truncated: Vec<ObservedOutcome> = outcomes.iter().map(|o| o.truncate(self.config.horizon)).collect();
        tape.survival_nll(pass.phi, &truncated)
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct HetSeq2Surv {
    network: Network,
    store: ParameterStore,
}

impl HetSeq2Surv {
    /// Fresh model with parameters drawn from the `seed`'s init stream.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let mut init = Initializer::new(rng::stream(seed, "init", 0));
        let network = Network::register(config, &mut store, &mut init)?;
        Ok(Self { network, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub(crate) fn set_store(&mut self, store: ParameterStore) {
        self.store = store;
    }

    /// Number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Group effect values, one row per id tuple.
    pub fn group_effect(&self, ids: &[GroupIds]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let g = self.network.group_effect(&mut tape, &self.store, ids)?;
        Ok(tape.value(g).data().chunks(self.config().group_dim()).map(|r| r.to_vec()).collect())
    }

    fn check_inputs(windows: &[&[f64]]) -> Result<()> {
        for (i, w) in windows.iter().enumerate() {
            if let Some(v) = w.iter().find(|v| !(-INPUT_TOLERANCE..=1.0 + INPUT_TOLERANCE).contains(*v)) {
                return Err(Error::invalid(format!(
                    "window {i} contains {v}, outside the normalized range; apply the checkpoint's normalization first"
                )));
            }
        }
        Ok(())
    }

    /// Raw decoder logits `φ` per window.
    pub fn predict_logits(&self, windows: &[&[f64]], ids: &[GroupIds]) -> Result<Vec<Vec<f64>>> {
        Self::check_inputs(windows)?;
        if windows.len() != ids.len() {
            return Err(Error::invalid("windows and ids differ in length"));
        }
        let mut out = Vec::with_capacity(windows.len());
        for (w, i) in windows.chunks(PREDICT_CHUNK).zip(ids.chunks(PREDICT_CHUNK)) {
            let mut tape = Tape::new();
            let pass = self.network.forward(&mut tape, &self.store, w, i)?;
            out.extend(tape.value(pass.phi).data().chunks(self.config().horizon).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Clamped hazards `σ(φ_k)` per window.
    pub fn predict_hazards(&self, windows: &[&[f64]], ids: &[GroupIds]) -> Result<Vec<HazardCurve>> {
        Ok(self.predict_logits(windows, ids)?.iter().map(|phi| HazardCurve::from_logits(phi)).collect())
    }

    pub fn predict_hazard(&self, window: &[f64], ids: GroupIds) -> Result<HazardCurve> {
        Ok(self.predict_hazards(&[window], &[ids])?.remove(0))
    }
}
