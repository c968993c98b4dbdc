use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{GroupIds, HetSeq2Surv, ModelConfig};
use crate::autodiff::{adam_step, AdamConfig, Tape};
use crate::data::WindowSample;
use crate::rng;
use crate::survival::ObservedOutcome;
use crate::{Error, Result};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainSettings {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best monitored NLL.
    pub patience: usize,
    /// Probability of replacing each group id by the unknown id 0.
    pub id_dropout: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { batch_size: 64, adam: AdamConfig::default(), max_epochs: 100, patience: 5, id_dropout: 0.01, seed: 0 }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch.
    pub train_nll: f64,
    pub validation_nll: Option<f64>,
    /// The value early stopping watches: validation NLL when a validation
    /// split exists, training NLL otherwise.
    pub monitored: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    /// Training-set NLL of the freshly initialized model.
    pub initial_train_nll: f64,
    pub history: Vec<EpochLog>,
    /// Epoch whose parameters were returned (0 if no epoch improved).
    pub best_epoch: usize,
    pub best_monitored: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    pub fn best_validation_nll(&self) -> Option<f64> {
        self.history.iter().find(|e| e.epoch == self.best_epoch).and_then(|e| e.validation_nll)
    }
}

fn unzip<'a>(samples: &[&'a WindowSample]) -> (Vec<&'a [f64]>, Vec<GroupIds>, Vec<ObservedOutcome>) {
    let mut w = Vec::with_capacity(samples.len());
    let mut i = Vec::with_capacity(samples.len());
    let mut o = Vec::with_capacity(samples.len());
    for s in samples {
        w.push(s.flat.as_slice());
        i.push(s.ids);
        o.push(s.outcome);
    }
    (w, i, o)
}

/// Mean per-sample NLL of `model` over `samples`.
pub fn mean_nll(model: &HetSeq2Surv, samples: &[WindowSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let (w, i, o) = unzip(&refs);
        let mut tape = Tape::new();
        let loss = model.network().loss(&mut tape, model.store(), &w, &i, &o)?;
        total += tape.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Mini-batch Adam on the mean negative log-likelihood with early stopping.
/// Returns the parameters of the best monitored epoch. Deterministic given
/// the samples, config and settings.
pub fn train(
    train: &[WindowSample],
    validation: &[WindowSample],
    config: &ModelConfig,
    settings: &TrainSettings,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(HetSeq2Surv, TrainReport)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("training split has no samples".into()));
    }
    if settings.batch_size == 0 || settings.max_epochs == 0 {
        return Err(Error::config("batch size and epoch count must be positive"));
    }
    if !(0.0..1.0).contains(&settings.id_dropout) {
        return Err(Error::config("id dropout must lie in [0, 1)"));
    }
    let mut model = HetSeq2Surv::new(config, settings.seed)?;
    let initial_train_nll = mean_nll(&model, train)?;
    let mut best_store = model.store().clone();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=settings.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(settings.seed, "shuffle", epoch as u64));
        let mut dropout = rng::stream(settings.seed, "id-dropout", epoch as u64);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(settings.batch_size).enumerate() {
            let mut windows = Vec::with_capacity(batch.len());
            let mut ids = Vec::with_capacity(batch.len());
            let mut outcomes = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train[i];
                windows.push(s.flat.as_slice());
                let mut g = s.ids;
                if config.heterogeneous && settings.id_dropout > 0.0 {
                    for id in [&mut g.site, &mut g.plant, &mut g.part] {
                        if dropout.random::<f64>() < settings.id_dropout {
                            *id = 0;
                        }
                    }
                }
                ids.push(g);
                outcomes.push(s.outcome);
            }
            let mut tape = Tape::new();
            let loss = model.network().loss(&mut tape, model.store(), &windows, &ids, &outcomes)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            loss_sum += value * batch.len() as f64;
            let store = model.store_mut();
            store.zero_grad();
            tape.backward_into(loss, store)?;
            drop(tape);
            adam_step(store, &settings.adam)?;
        }
        let train_nll = loss_sum / train.len() as f64;
        let validation_nll = if validation.is_empty() { None } else { Some(mean_nll(&model, validation)?) };
        let monitored = validation_nll.unwrap_or(train_nll);
        let improved = monitored < best;
        if improved {
            best = monitored;
            best_epoch = epoch;
            best_store = model.store().clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        let log = EpochLog { epoch, train_nll, validation_nll, monitored, improved };
        on_epoch(&log);
        history.push(log);
        if since_best >= settings.patience {
            stopped_early = true;
            break;
        }
    }
    model.set_store(best_store);
    Ok((model, TrainReport { initial_train_nll, history, best_epoch, best_monitored: best, stopped_early }))
}
