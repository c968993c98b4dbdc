use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{HetSeq2Surv, ModelConfig};
use crate::autodiff::Tensor;
use crate::data::{NormalizationStats, Vocabularies};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_validation_nll: Option<f64>,
    pub final_train_nll: Option<f64>,
}

/// Everything needed to rebuild a trained model for inference.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub parameters: Vec<NamedTensor>,
    pub normalization: Option<NormalizationStats>,
    pub vocabularies: Option<Vocabularies>,
    pub metadata: TrainingMetadata,
}

impl HetSeq2Surv {
    pub fn to_checkpoint(
        &self,
        normalization: Option<NormalizationStats>,
        vocabularies: Option<Vocabularies>,
        metadata: TrainingMetadata,
    ) -> ModelCheckpoint {
        let parameters = self
            .store()
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect();
        ModelCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config().clone(),
            parameters,
            normalization,
            vocabularies,
            metadata,
        }
    }

    /// Rebuilds the model, requiring exactly the parameter set the config
    /// implies, each with its expected shape.
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        if let Some(stats) = &ckpt.normalization {
            stats.validate()?;
        }
        let mut model = HetSeq2Surv::new(&ckpt.config, 0)?;
        let mut seen = BTreeSet::new();
        for t in &ckpt.parameters {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Checkpoint(format!("parameter `{}` listed twice", t.name)));
            }
            let tensor = Tensor::new(t.shape.clone(), t.values.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", t.name)))?;
            if !tensor.is_finite() {
                return Err(Error::Checkpoint(format!("parameter `{}` has non-finite values", t.name)));
            }
            model.store_mut().set_value(&t.name, tensor).map_err(|e| match e {
                Error::Checkpoint(_) => e,
                other => Error::Checkpoint(format!("parameter `{}`: {other}", t.name)),
            })?;
        }
        if let Some((_, missing)) = model.store().iter().find(|(_, p)| !seen.contains(p.name.as_str())) {
            return Err(Error::Checkpoint(format!("parameter `{}` missing", missing.name)));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupIds;
    use alloc::string::ToString;
    use alloc::vec;

    fn model() -> HetSeq2Surv {
        let cfg = ModelConfig {
            encoder_hidden: 3,
            embed_dims: [2; 3],
            group_mlp_hidden: 3,
            horizon: 4,
            vocab_sizes: [2, 2, 3],
            ..ModelConfig::default()
        };
        HetSeq2Surv::new(&cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_predicts_identically() {
        let m = model();
        let ckpt = m.to_checkpoint(None, None, TrainingMetadata::default());
        let back = HetSeq2Surv::from_checkpoint(&ckpt).unwrap();
        let w = vec![0.25; 588];
        let ids = GroupIds { site: 1, plant: 1, part: 2 };
        assert_eq!(m.predict_logits(&[&w], &[ids]).unwrap(), back.predict_logits(&[&w], &[ids]).unwrap());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut ckpt = model().to_checkpoint(None, None, TrainingMetadata::default());
        ckpt.format_version += 1;
        let err = HetSeq2Surv::from_checkpoint(&ckpt).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(m) if m.contains("version")));
    }

    #[test]
    fn corrupted_parameters_are_rejected() {
        let good = model().to_checkpoint(None, None, TrainingMetadata::default());

        let mut c = good.clone();
        c.parameters[0].values.pop();
        assert!(HetSeq2Surv::from_checkpoint(&c).is_err());

        let mut c = good.clone();
        c.parameters[0].shape = vec![c.parameters[0].values.len()];
        assert!(HetSeq2Surv::from_checkpoint(&c).is_err());

        let mut c = good.clone();
        c.parameters.pop();
        assert!(HetSeq2Surv::from_checkpoint(&c).unwrap_err().to_string().contains("missing"));

        let mut c = good.clone();
        c.parameters[1].name = "mystery".into();
        assert!(HetSeq2Surv::from_checkpoint(&c).is_err());

        let mut c = good;
        let dup = c.parameters[0].clone();
        c.parameters.push(dup);
        assert!(HetSeq2Surv::from_checkpoint(&c).is_err());
    }
}
