//! Adapted confusion counts over predicted shortfall times and the rolling
//! retrain-evaluate harness.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{build_dataset, encode_window, label_window, BuildSettings, LaneSeries, WindowSample, WINDOW_LEN};
use crate::model::{mean_nll, train, GroupIds, HetSeq2Surv, ModelConfig, TrainSettings};
use crate::survival::{median_survival_time, survival_from_hazard, ObservedOutcome};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalConfig {
    /// Forecasting horizon Δ in days.
    pub horizon: u32,
    /// Margin of error ε in days.
    pub tolerance: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { horizon: 28, tolerance: 7 }
    }
}

impl EvalConfig {
    pub fn new(horizon: u32, tolerance: u32) -> Result<Self> {
        let c = Self { horizon, tolerance };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.tolerance >= self.horizon {
            return Err(Error::config(format!(
                "evaluation needs horizon >= 1 and tolerance < horizon (got {} and {})",
                self.horizon, self.tolerance
            )));
        }
        Ok(())
    }
}

/// A predicted time against what was observed after the same origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalCase {
    /// Days until the predicted shortfall; `H + 1` means none expected.
    pub predicted: u32,
    pub actual: ObservedOutcome,
}

impl EvalCase {
    pub fn new(predicted: u32, actual: ObservedOutcome) -> Result<Self> {
        if predicted < 1 || actual.t < 1 {
            return Err(Error::invalid("evaluation times start at 1"));
        }
        Ok(Self { predicted, actual })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Label {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
    Excluded,
}

/// A predicted shortfall inside the horizon counts as a hit only when it is
/// within the tolerance of the actual one; a prediction at the wrong time is
/// a false alarm. Records censored before the horizon with no event are
/// excluded.
pub fn classify_case(case: &EvalCase, config: &EvalConfig) -> Label {
    let pred_pos = case.predicted <= config.horizon;
    let act_pos = case.actual.event && case.actual.t <= config.horizon;
    match (pred_pos, act_pos) {
        (true, true) if case.predicted.abs_diff(case.actual.t) <= config.tolerance => Label::TruePositive,
        (true, _) => Label::FalsePositive,
        (false, true) => Label::FalseNegative,
        (false, false) if case.actual.event || case.actual.t >= config.horizon => Label::TrueNegative,
        (false, false) => Label::Excluded,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdaptedConfusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub excluded: usize,
}

impl AdaptedConfusion {
    pub fn from_cases<'a>(cases: impl IntoIterator<Item = &'a EvalCase>, config: &EvalConfig) -> Self {
        let mut c = Self::default();
        for case in cases {
            c.add(classify_case(case, config));
        }
        c
    }

    pub fn add(&mut self, label: Label) {
        match label {
            Label::TruePositive => self.tp += 1,
            Label::FalsePositive => self.fp += 1,
            Label::TrueNegative => self.tn += 1,
            Label::FalseNegative => self.fn_ += 1,
            Label::Excluded => self.excluded += 1,
        }
    }

    pub fn counted(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// `(precision, recall)`; either is `None` when its denominator is zero.
pub fn precision_recall(c: &AdaptedConfusion) -> (Option<f64>, Option<f64>) {
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    (ratio(c.tp, c.fp), ratio(c.tp, c.fn_))
}

/// `[tp, fp, tn, fn]` as shares of the counted cases.
pub fn normalized_confusion(c: &AdaptedConfusion) -> Result<[f64; 4]> {
    let n = c.counted();
    if n == 0 {
        return Err(Error::invalid("confusion matrix has no counted cases"));
    }
    let n = n as f64;
    Ok([c.tp as f64 / n, c.fp as f64 / n, c.tn as f64 / n, c.fn_ as f64 / n])
}

/// Median predicted time for each sample.
pub fn predicted_times(model: &HetSeq2Surv, samples: &[WindowSample]) -> Result<Vec<u32>> {
    let windows: Vec<&[f64]> = samples.iter().map(|s| s.flat.as_slice()).collect();
    let ids: Vec<GroupIds> = samples.iter().map(|s| s.ids).collect();
    model
        .predict_hazards(&windows, &ids)?
        .iter()
        .map(|h| Ok(median_survival_time(&survival_from_hazard(h.values())?)))
        .collect()
}

/// Metrics for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalSummary {
    pub confusion: AdaptedConfusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub nll: f64,
}

pub fn evaluate(model: &HetSeq2Surv, samples: &[WindowSample], config: &EvalConfig) -> Result<EvalSummary> {
    config.validate()?;
    let times = predicted_times(model, samples)?;
    let cases: Vec<EvalCase> =
        times.iter().zip(samples).map(|(&p, s)| EvalCase::new(p, s.outcome)).collect::<Result<_>>()?;
    let confusion = AdaptedConfusion::from_cases(&cases, config);
    let (precision, recall) = precision_recall(&confusion);
    Ok(EvalSummary { confusion, precision, recall, nll: mean_nll(model, samples)? })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RollingSettings {
    pub iterations: usize,
    /// Days between consecutive origins.
    pub step: u32,
    /// Origin of the final iteration; defaults to the last day whose
    /// horizon is fully observed.
    pub last_origin: Option<u32>,
    pub build: BuildSettings,
    pub train: TrainSettings,
}

impl Default for RollingSettings {
    fn default() -> Self {
        Self {
            iterations: 20,
            step: 7,
            last_origin: None,
            build: BuildSettings::default(),
            train: TrainSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QaIteration {
    pub iteration: usize,
    pub origin: u32,
    pub train_samples: usize,
    pub cases: usize,
    pub confusion: AdaptedConfusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QaReport {
    pub eval: EvalConfig,
    pub iterations: Vec<QaIteration>,
    /// Mean over the iterations where each metric is defined.
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    /// Mean normalized confusion `[tp, fp, tn, fn]` over iterations with
    /// counted cases.
    pub mean_confusion: Option<[f64; 4]>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// The lane as it looked at the end of day `origin`.
fn truncate_at(lane: &LaneSeries, origin: u32) -> LaneSeries {
    let last = lane.last_observed_day.min(origin);
    let mut out = lane.clone();
    out.features.truncate(last as usize);
    out.last_observed_day = last;
    out.event_day = lane.event_day.filter(|&e| e <= last);
    out
}

/// Weekly origins `o_w = D − Δ − step·(W − w)`. Each iteration trains a
/// fresh model on the corpus as known at `o_w` and scores the window ending
/// at `o_w` of every lane still running then.
pub fn rolling_qa(
    lanes: &[LaneSeries],
    model: &ModelConfig,
    eval: &EvalConfig,
    settings: &RollingSettings,
    on_iteration: &mut dyn FnMut(&QaIteration),
) -> Result<QaReport> {
    eval.validate()?;
    if settings.iterations == 0 || settings.step == 0 {
        return Err(Error::config("rolling QA needs at least one iteration and a positive step"));
    }
    let last_day = lanes.iter().map(|l| l.last_observed_day).max().unwrap_or(0);
    let span = settings.step as u64 * (settings.iterations as u64 - 1);
    let last_origin = settings.last_origin.unwrap_or(last_day.saturating_sub(eval.horizon));
    let required = span + 2 * WINDOW_LEN as u64 + eval.horizon as u64;
    if last_origin as u64 + eval.horizon as u64 > last_day as u64 || (last_origin as u64) < span + 2 * WINDOW_LEN as u64
    {
        return Err(Error::config(format!(
            "{} iterations every {} days need at least {required} days of history ending at the last origin plus the horizon; the corpus has {last_day}",
            settings.iterations, settings.step
        )));
    }

    let mut iterations = Vec::with_capacity(settings.iterations);
    for w in 1..=settings.iterations {
        let origin = last_origin - settings.step * (settings.iterations - w) as u32;
        let known: Vec<LaneSeries> = lanes.iter().map(|l| truncate_at(l, origin)).collect();
        let data = build_dataset(&known, &settings.build)?;
        let mut config = model.clone();
        config.vocab_sizes = data.vocab.sizes();
        let (fitted, _) = train(&data.train, &data.validation, &config, &settings.train, &mut |_| {})?;

        let mut clamped = 0;
        let mut samples = Vec::new();
        for (lane, now) in lanes.iter().zip(&known) {
            let running = now.event_day.is_none() && now.last_observed_day == origin && origin as usize >= WINDOW_LEN;
            if !running {
                continue;
            }
            if let Some(outcome) = label_window(origin, lane) {
                samples.push(encode_window(lane, origin, outcome, &data.stats, &data.vocab, &mut clamped)?);
            }
        }
        let confusion = if samples.is_empty() {
            AdaptedConfusion::default()
        } else {
            let times = predicted_times(&fitted, &samples)?;
            let cases: Vec<EvalCase> =
                times.iter().zip(&samples).map(|(&p, s)| EvalCase::new(p, s.outcome)).collect::<Result<_>>()?;
            AdaptedConfusion::from_cases(&cases, eval)
        };
        let (precision, recall) = precision_recall(&confusion);
        let row = QaIteration {
            iteration: w,
            origin,
            train_samples: data.train.len(),
            cases: samples.len(),
            confusion,
            precision,
            recall,
        };
        on_iteration(&row);
        iterations.push(row);
    }
    let normalized: Vec<[f64; 4]> = iterations.iter().filter_map(|r| normalized_confusion(&r.confusion).ok()).collect();
    let mean_confusion = (!normalized.is_empty()).then(|| {
        let mut m = [0.0; 4];
        for row in &normalized {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b / normalized.len() as f64;
            }
        }
        m
    });
    Ok(QaReport {
        eval: *eval,
        mean_precision: mean(iterations.iter().filter_map(|r| r.precision)),
        mean_recall: mean(iterations.iter().filter_map(|r| r.recall)),
        mean_confusion,
        iterations,
    })
}
