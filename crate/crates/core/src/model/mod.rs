//! Heterogeneous sequence-to-survival network.
//!
//! A window of 28 daily feature vectors runs through a bidirectional GRU.
//! The lane's (site, plant, part) embeddings pass through a two-layer
//! perceptron to give a group effect `g` of width `2d`, which is added to
//! every encoder state and concatenated to every decoder input. The decoder
//! starts from `tanh(W₀[h→_L; h←_1] + b₀)` and, for each horizon step, attends
//! over the adjusted encoder states, advances a GRU on `[context; g]` and
//! emits one logit `φ_k`. The hazard is `σ(φ_k)`.

mod checkpoint;
mod net;
mod train;

use alloc::format;

use crate::data::{NUM_FEATURES, WINDOW_LEN};
use crate::survival::DEFAULT_HORIZON;
use crate::{Error, Result};

pub use checkpoint::{ModelCheckpoint, NamedTensor, TrainingMetadata, CHECKPOINT_FORMAT_VERSION};
pub use net::{ForwardPass, HetSeq2Surv, Network, INPUT_TOLERANCE};
pub use train::{mean_nll, train, EpochLog, TrainReport, TrainSettings};

/// Dense ids of a lane's site, plant and part; 0 means unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupIds {
    pub site: usize,
    pub plant: usize,
    pub part: usize,
}

impl GroupIds {
    pub fn as_array(&self) -> [usize; 3] {
        [self.site, self.plant, self.part]
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub input_dim: usize,
    pub window_len: usize,
    /// Width `d` of each encoder direction.
    pub encoder_hidden: usize,
    /// Embedding widths for site, plant and part.
    pub embed_dims: [usize; 3],
    pub group_mlp_hidden: usize,
    pub horizon: usize,
    /// Table sizes for site, plant and part, including the unknown row.
    pub vocab_sizes: [usize; 3],
    /// `false` replaces the group effect with a constant zero vector.
    pub heterogeneous: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: NUM_FEATURES,
            window_len: WINDOW_LEN,
            encoder_hidden: 32,
            embed_dims: [8; 3],
            group_mlp_hidden: 32,
            horizon: DEFAULT_HORIZON,
            vocab_sizes: [1; 3],
            heterogeneous: true,
        }
    }
}

impl ModelConfig {
    /// Decoder state width, equal to the concatenated encoder width.
    pub fn decoder_hidden(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Width of the group effect.
    pub fn group_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("window_len", self.window_len),
            ("encoder_hidden", self.encoder_hidden),
            ("horizon", self.horizon),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if self.heterogeneous {
            if self.group_mlp_hidden == 0 || self.embed_dims.contains(&0) {
                return Err(Error::config("group embedding and perceptron widths must be positive"));
            }
            if self.vocab_sizes.contains(&0) {
                return Err(Error::config("vocabulary sizes must include the unknown row"));
            }
        }
        Ok(())
    }
}

/// The same architecture with the group effect fixed at zero.
pub fn ablate_homogeneous(config: &ModelConfig) -> ModelConfig {
    ModelConfig { heterogeneous: false, ..config.clone() }
}
