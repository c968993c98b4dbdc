//! Run configuration: one TOML document with a section per stage. Unknown
//! keys are errors; omitted keys take the library defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shortfall_core::autodiff::AdamConfig;
use shortfall_core::data::{BuildSettings, DEFAULT_STRIDE};
use shortfall_core::explain::Scalar;
use shortfall_core::model::{ModelConfig, TrainSettings};
use shortfall_core::qa::EvalConfig;
use shortfall_core::synth::GeneratorConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its streams from it.
    pub seed: u64,
    pub generator: GeneratorSection,
    pub pipeline: PipelineSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub explain: ExplainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            generator: GeneratorSection::default(),
            pipeline: PipelineSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
            explain: ExplainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub sites: usize,
    pub plants: usize,
    pub part_families: usize,
    pub parts_per_family: usize,
    pub days: usize,
    pub censoring_fraction: f64,
    pub start_date: String,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            sites: g.sites,
            plants: g.plants,
            part_families: g.part_families,
            parts_per_family: g.parts_per_family,
            days: g.days,
            censoring_fraction: g.censoring_fraction,
            start_date: g.start_date,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub stride: usize,
    pub validation_fraction: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { stride: DEFAULT_STRIDE, validation_fraction: BuildSettings::default().validation_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder_hidden: usize,
    pub embed_dims: [usize; 3],
    pub group_mlp_hidden: usize,
    pub horizon: usize,
    /// `false` trains the ablated model without group embeddings.
    pub heterogeneous: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            encoder_hidden: m.encoder_hidden,
            embed_dims: m.embed_dims,
            group_mlp_hidden: m.group_mlp_hidden,
            horizon: m.horizon,
            heterogeneous: m.heterogeneous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub id_dropout: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            batch_size: t.batch_size,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            clip_norm: t.adam.clip_norm.unwrap_or(0.0),
            max_epochs: t.max_epochs,
            patience: t.patience,
            id_dropout: t.id_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub horizon: u32,
    pub tolerance: u32,
    pub iterations: usize,
    pub step: u32,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self { horizon: e.horizon, tolerance: e.tolerance, iterations: 20, step: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Rmst,
    Hazard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub permutations: usize,
    pub top_k: usize,
    pub scalar: ScalarKind,
    /// 1-based step for the hazard scalar.
    pub hazard_step: usize,
    pub include_ids: bool,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self { permutations: 50, top_k: 10, scalar: ScalarKind::Rmst, hazard_step: 28, include_ids: false }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!(":{line}")
                })
                .unwrap_or_default();
            Error::Config(format!("{}{at}: {}", origin.display(), e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.generator_config().validate()?;
        self.build_settings_checked()?;
        self.model_config([1, 1, 1]).validate()?;
        self.eval_config()?;
        let t = &self.training;
        if t.batch_size == 0 || t.max_epochs == 0 {
            return Err(Error::Config("training.batch_size and training.max_epochs must be positive".into()));
        }
        if !(t.learning_rate > 0.0)
            || !(t.eps > 0.0)
            || !(0.0..1.0).contains(&t.beta1)
            || !(0.0..1.0).contains(&t.beta2)
        {
            return Err(Error::Config("training: invalid Adam settings".into()));
        }
        if !(t.clip_norm >= 0.0) {
            return Err(Error::Config("training.clip_norm must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&t.id_dropout) {
            return Err(Error::Config("training.id_dropout must lie in [0, 1)".into()));
        }
        if self.evaluation.iterations == 0 || self.evaluation.step == 0 {
            return Err(Error::Config("evaluation.iterations and evaluation.step must be positive".into()));
        }
        let x = &self.explain;
        if x.permutations == 0 || x.top_k == 0 {
            return Err(Error::Config("explain.permutations and explain.top_k must be positive".into()));
        }
        if x.scalar == ScalarKind::Hazard && (x.hazard_step == 0 || x.hazard_step > self.model.horizon) {
            return Err(Error::Config(format!("explain.hazard_step must lie in 1..={}", self.model.horizon)));
        }
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            sites: g.sites,
            plants: g.plants,
            part_families: g.part_families,
            parts_per_family: g.parts_per_family,
            days: g.days,
            censoring_fraction: g.censoring_fraction,
            seed: self.seed,
            start_date: g.start_date.clone(),
        }
    }

    fn build_settings_checked(&self) -> Result<BuildSettings> {
        if self.pipeline.stride == 0 {
            return Err(Error::Config("pipeline.stride must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pipeline.validation_fraction) {
            return Err(Error::Config("pipeline.validation_fraction must lie in [0, 1)".into()));
        }
        Ok(self.build_settings())
    }

    pub fn build_settings(&self) -> BuildSettings {
        BuildSettings {
            stride: self.pipeline.stride,
            validation_fraction: self.pipeline.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, vocab_sizes: [usize; 3]) -> ModelConfig {
        let m = &self.model;
        let cfg = ModelConfig {
            encoder_hidden: m.encoder_hidden,
            embed_dims: m.embed_dims,
            group_mlp_hidden: m.group_mlp_hidden,
            horizon: m.horizon,
            vocab_sizes,
            heterogeneous: true,
            ..ModelConfig::default()
        };
        if m.heterogeneous {
            cfg
        } else {
            shortfall_core::model::ablate_homogeneous(&cfg)
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        let t = &self.training;
        TrainSettings {
            batch_size: t.batch_size,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
            },
            max_epochs: t.max_epochs,
            patience: t.patience,
            id_dropout: t.id_dropout,
            seed: self.seed,
        }
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        Ok(EvalConfig::new(self.evaluation.horizon, self.evaluation.tolerance)?)
    }

    pub fn scalar(&self) -> Scalar {
        match self.explain.scalar {
            ScalarKind::Rmst => Scalar::Rmst,
            ScalarKind::Hazard => Scalar::HazardAt(self.explain.hazard_step),
        }
    }
}
