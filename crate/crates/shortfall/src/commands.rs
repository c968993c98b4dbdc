//! The pipeline stages behind each subcommand. Every command takes a fully
//! resolved [`RunConfig`], writes its artifacts plus `config.resolved.toml`
//! under one output directory and prints a short human summary to `out`.
//! Nothing depends on the clock, so reruns produce identical files.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shortfall_core::data::{
    self, build_dataset, encode_window, fingerprint_lanes, mean_window, window_end_days, DatasetSummary, LaneKey,
    LaneSeries, NormalizationStats, Vocabularies, WindowSample,
};
use shortfall_core::explain::{self, AttributionReport, Estimator, SurvivalScalar, Waterfall};
use shortfall_core::model::{self, EpochLog, HetSeq2Surv, ModelCheckpoint, TrainReport, TrainingMetadata};
use shortfall_core::qa::{self, AdaptedConfusion, EvalConfig, QaReport, RollingSettings};
use shortfall_core::survival::{median_survival_time, restricted_mean_survival, ObservedOutcome};
use shortfall_core::synth::{self, RegimeCorrelation};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{self, write_json};
use crate::report;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const LANES_FILE: &str = "lanes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const QA_FILE: &str = "qa.json";
pub const QA_TABLE_FILE: &str = "qa.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const ATTRIBUTION_FILE: &str = "attribution.json";
pub const WATERFALL_TEXT_FILE: &str = "waterfall.tsv";
pub const WATERFALL_SVG_FILE: &str = "waterfall.svg";

/// Largest accepted `|base + Σ contributions − prediction|`, relative to
/// `max(1, |prediction|)`.
pub const EFFICIENCY_TOLERANCE: f64 = 1e-9;

fn say(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text).map_err(|e| Error::io("<stdout>", e))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { say($out, format_args!($($arg)*)) };
}

fn start_run(config: &RunConfig, dir: &Path) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RESOLVED_CONFIG);
    std::fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.4}"))
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: usize,
    pub name: String,
    pub lanes: usize,
    pub observed_events: usize,
    pub truncated_lanes: usize,
    /// Spearman correlation between mean backlog and time to shortfall.
    pub backlog_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub lanes: usize,
    pub days: usize,
    pub windows: usize,
    pub censored_fraction: f64,
    pub regimes: Vec<RegimeSummary>,
}

pub fn gen(config: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<GenSummary> {
    start_run(config, dir)?;
    let regimes = synth::default_regimes();
    let corpus = synth::generate(&config.generator_config(), &regimes)?;
    let stride = config.pipeline.stride;
    let correlations: Vec<RegimeCorrelation> = synth::backlog_correlations(&corpus, &regimes, stride);
    let windows = corpus.lanes.iter().map(|l| data::labelled_windows(l, stride).0.len()).sum();
    let summary = GenSummary {
        lanes: corpus.lanes.len(),
        days: config.generator.days,
        windows,
        censored_fraction: data::corpus_censored_fraction(&corpus.lanes, stride),
        regimes: regimes
            .iter()
            .map(|r| {
                let entries = corpus.manifest.iter().filter(|m| m.regime == r.id);
                RegimeSummary {
                    regime: r.id,
                    name: r.name.clone(),
                    lanes: entries.clone().count(),
                    observed_events: corpus
                        .lanes
                        .iter()
                        .zip(&corpus.manifest)
                        .filter(|(l, m)| m.regime == r.id && l.event_day.is_some())
                        .count(),
                    truncated_lanes: entries.filter(|m| m.censored).count(),
                    backlog_spearman: correlations.iter().find(|c| c.regime == r.id).and_then(|c| c.spearman),
                }
            })
            .collect(),
    };
    formats::write_lanes(&dir.join(LANES_FILE), &corpus.lanes)?;
    formats::write_manifest(&dir.join(MANIFEST_FILE), &corpus.manifest)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;

    say!(out, "lanes {}  days {}  windows {}\n", summary.lanes, summary.days, summary.windows)?;
    say!(out, "regime\tname\tlanes\tevents\ttruncated\tbacklog_spearman\n")?;
    for r in &summary.regimes {
        say!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.regime,
            r.name,
            r.lanes,
            r.observed_events,
            r.truncated_lanes,
            fmt_opt(r.backlog_spearman)
        )?;
    }
    say!(out, "censored window fraction {:.4}\n", summary.censored_fraction)?;
    Ok(summary)
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    #[serde(flatten)]
    pub dataset: DatasetSummary,
    /// Windows found by direct enumeration over every lane.
    pub enumerated_windows: usize,
    pub leakage_check: bool,
}

/// Train and validation samples come from disjoint lanes and the statistics
/// were fitted on exactly the training lanes.
fn leakage_check(lanes: &[LaneSeries], ds: &data::Dataset) -> Result<()> {
    let val: BTreeSet<&LaneKey> = ds.validation_lanes.iter().collect();
    if let Some(s) = ds.train.iter().find(|s| val.contains(&s.key)) {
        return Err(Error::Validation(format!("validation lane {} has training samples", s.key)));
    }
    if let Some(s) = ds.validation.iter().find(|s| !val.contains(&s.key)) {
        return Err(Error::Validation(format!("training lane {} has validation samples", s.key)));
    }
    if fingerprint_lanes(lanes.iter().filter(|l| !val.contains(&l.key))) != ds.stats.fingerprint {
        return Err(Error::Validation("normalization statistics were not fitted on the training lanes".into()));
    }
    Ok(())
}

pub fn prepare(config: &RunConfig, lanes_path: &Path, dir: &Path, out: &mut dyn Write) -> Result<PrepareSummary> {
    start_run(config, dir)?;
    let lanes = formats::read_lanes(lanes_path)?;
    let ds = build_dataset(&lanes, &config.build_settings())?;
    leakage_check(&lanes, &ds)?;
    let enumerated_windows = lanes
        .iter()
        .map(|l| {
            window_end_days(l, config.pipeline.stride)
                .into_iter()
                .filter(|&e| data::label_window(e, l).is_some())
                .count()
        })
        .sum();
    let summary = PrepareSummary { dataset: ds.summary.clone(), enumerated_windows, leakage_check: true };
    formats::write_samples(&dir.join(TRAIN_FILE), &ds.train)?;
    formats::write_samples(&dir.join(VALIDATION_FILE), &ds.validation)?;
    formats::write_stats(&dir.join(STATS_FILE), &ds.stats)?;
    write_json(&dir.join(VOCAB_FILE), &ds.vocab)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;

    let s = &summary.dataset;
    say!(
        out,
        "lanes {} (train {}, validation {}, short {})\n",
        s.lanes,
        s.train_lanes,
        s.validation_lanes,
        s.short_lanes
    )?;
    say!(
        out,
        "samples train {}  validation {}  enumerated {}  discarded {}\n",
        s.train_samples,
        s.validation_samples,
        summary.enumerated_windows,
        s.discarded_windows
    )?;
    say!(out, "censored fraction {:.4}  clamped validation values {}\n", s.censored_fraction, s.clamped_values)?;
    say!(out, "leakage check passed\n")?;
    for w in &s.warnings {
        say!(out, "warning: {w}\n")?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub parameters: usize,
    pub heterogeneous: bool,
    pub report: TrainReport,
}

/// Trains on `<data>/train.jsonl`, early-stopping on `<data>/validation.jsonl`
/// when it has samples. The checkpoint embeds the normalization statistics
/// and vocabularies so inference needs nothing else.
pub fn train(config: &RunConfig, data_dir: &Path, dir: &Path, out: &mut dyn Write) -> Result<TrainOutcome> {
    start_run(config, dir)?;
    let train_set = formats::read_samples(&data_dir.join(TRAIN_FILE))?;
    let validation = formats::read_samples(&data_dir.join(VALIDATION_FILE))?;
    let stats = formats::read_stats(&data_dir.join(STATS_FILE))?;
    let vocab: Vocabularies = formats::read_json(&data_dir.join(VOCAB_FILE))?;
    let model_config = config.model_config(vocab.sizes());
    let settings = config.train_settings();

    let mut log: Vec<EpochLog> = Vec::new();
    let mut write_err = None;
    let (net, report) = model::train(&train_set, &validation, &model_config, &settings, &mut |e| {
        log.push(*e);
        let line = format!(
            "epoch {:>3}  train {:.5}  validation {}{}\n",
            e.epoch,
            e.train_nll,
            e.validation_nll.map_or_else(|| "-".into(), |v| format!("{v:.5}")),
            if e.improved { "  *" } else { "" }
        );
        if let Err(err) = out.write_all(line.as_bytes()) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(Error::io("<stdout>", err));
    }
    let metadata = TrainingMetadata {
        seed: settings.seed,
        epochs_run: report.epochs_run(),
        best_epoch: report.best_epoch,
        final_validation_nll: report.best_validation_nll(),
        final_train_nll: report.history.iter().find(|e| e.epoch == report.best_epoch).map(|e| e.train_nll),
    };
    let ckpt = net.to_checkpoint(Some(stats), Some(vocab), metadata);
    write_json(&dir.join(CHECKPOINT_FILE), &ckpt)?;
    formats::write_records(&dir.join(EPOCHS_FILE), formats::EPOCHS_FORMAT, &log)?;
    let outcome = TrainOutcome { parameters: net.num_parameters(), heterogeneous: model_config.heterogeneous, report };
    write_json(&dir.join(TRAIN_REPORT_FILE), &outcome)?;
    say!(
        out,
        "{} model, {} parameters; best epoch {} of {}{}\n",
        if outcome.heterogeneous { "heterogeneous" } else { "homogeneous" },
        outcome.parameters,
        outcome.report.best_epoch,
        outcome.report.epochs_run(),
        if outcome.report.stopped_early { " (stopped early)" } else { "" }
    )?;
    Ok(outcome)
}

pub fn load_checkpoint(path: &Path) -> Result<(HetSeq2Surv, ModelCheckpoint)> {
    let ckpt: ModelCheckpoint = formats::read_json(path)?;
    let net = HetSeq2Surv::from_checkpoint(&ckpt)?;
    Ok((net, ckpt))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eval: EvalConfig,
    pub samples: usize,
    pub confusion: AdaptedConfusion,
    /// `[tp, fp, tn, fn]` shares of the counted cases.
    pub normalized: Option<[f64; 4]>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub nll: f64,
}

pub fn eval(
    config: &RunConfig,
    checkpoint: &Path,
    windows: &Path,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<MetricsReport> {
    start_run(config, dir)?;
    let (net, _) = load_checkpoint(checkpoint)?;
    let samples = formats::read_samples(windows)?;
    let cfg = config.eval_config()?;
    let s = qa::evaluate(&net, &samples, &cfg)?;
    let report = MetricsReport {
        eval: cfg,
        samples: samples.len(),
        confusion: s.confusion,
        normalized: qa::normalized_confusion(&s.confusion).ok(),
        precision: s.precision,
        recall: s.recall,
        nll: s.nll,
    };
    write_json(&dir.join(METRICS_FILE), &report)?;
    let c = &report.confusion;
    say!(out, "horizon {} days, tolerance {} days, {} samples\n", cfg.horizon, cfg.tolerance, report.samples)?;
    say!(out, "tp {}  fp {}  tn {}  fn {}  excluded {}\n", c.tp, c.fp, c.tn, c.fn_, c.excluded)?;
    if let Some(cells) = report::confusion_cells(c) {
        let row: Vec<String> = cells.iter().map(|(n, v)| format!("{n} {v:.4}")).collect();
        say!(out, "normalized {}\n", row.join("  "))?;
    }
    say!(out, "precision {}  recall {}  nll {:.5}\n", fmt_opt(report.precision), fmt_opt(report.recall), report.nll)?;
    Ok(report)
}

// ---------------------------------------------------------------- qa

pub fn rolling_qa(config: &RunConfig, lanes_path: &Path, dir: &Path, out: &mut dyn Write) -> Result<QaReport> {
    start_run(config, dir)?;
    let lanes = formats::read_lanes(lanes_path)?;
    let settings = RollingSettings {
        iterations: config.evaluation.iterations,
        step: config.evaluation.step,
        last_origin: None,
        build: config.build_settings(),
        train: config.train_settings(),
    };
    let cfg = config.eval_config()?;
    let mut write_err = None;
    let report = qa::rolling_qa(&lanes, &config.model_config([1; 3]), &cfg, &settings, &mut |it| {
        let line = format!(
            "iteration {:>2}  origin {}  cases {}  precision {}  recall {}\n",
            it.iteration,
            it.origin,
            it.cases,
            fmt_opt(it.precision),
            fmt_opt(it.recall)
        );
        if let Err(err) = out.write_all(line.as_bytes()) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(Error::io("<stdout>", err));
    }
    write_json(&dir.join(QA_FILE), &report)?;
    let table = report::qa_text(&report);
    let path = dir.join(QA_TABLE_FILE);
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    say!(out, "{table}")?;
    Ok(report)
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub key: LaneKey,
    pub end_day: u32,
    /// Median survival step, or `horizon + 1` when the curve never reaches 0.5.
    pub median: u32,
    pub beyond_horizon: bool,
    pub rmst: f64,
    pub survival: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum PredictInput {
    /// Normalized windows as written by `prepare`.
    Windows(PathBuf),
    /// Raw lanes; each lane's latest window is normalized with the
    /// checkpoint's statistics.
    Lanes(PathBuf),
}

fn checkpoint_context(ckpt: &ModelCheckpoint) -> Result<(&NormalizationStats, &Vocabularies)> {
    match (&ckpt.normalization, &ckpt.vocabularies) {
        (Some(s), Some(v)) => Ok((s, v)),
        _ => Err(Error::Validation("checkpoint carries no normalization statistics or vocabularies".into())),
    }
}

/// The latest full window of every lane, normalized for inference.
pub fn latest_windows(
    lanes: &[LaneSeries],
    stats: &NormalizationStats,
    vocab: &Vocabularies,
) -> Result<(Vec<WindowSample>, usize)> {
    let mut clamped = 0;
    let mut out = Vec::new();
    for lane in lanes {
        lane.validate()?;
        let end = lane.last_observed_day.min(lane.features.len() as u32);
        if (end as usize) < data::WINDOW_LEN {
            continue;
        }
        // The outcome is unknown at inference time and is not reported.
        out.push(encode_window(lane, end, ObservedOutcome::censored(0), stats, vocab, &mut clamped)?);
    }
    Ok((out, clamped))
}

pub fn predict_samples(net: &HetSeq2Surv, samples: &[WindowSample]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let windows: Vec<&[f64]> = chunk.iter().map(|s| s.flat.as_slice()).collect();
        let ids: Vec<_> = chunk.iter().map(|s| s.ids).collect();
        for (s, h) in chunk.iter().zip(net.predict_hazards(&windows, &ids)?) {
            let curve = h.survival();
            let median = median_survival_time(&curve);
            out.push(Prediction {
                key: s.key.clone(),
                end_day: s.end_day,
                median,
                beyond_horizon: median as usize > curve.horizon(),
                rmst: restricted_mean_survival(&curve),
                survival: curve.values().to_vec(),
            });
        }
    }
    Ok(out)
}

pub fn predict(
    config: &RunConfig,
    checkpoint: &Path,
    input: &PredictInput,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<Vec<Prediction>> {
    start_run(config, dir)?;
    let (net, ckpt) = load_checkpoint(checkpoint)?;
    let samples = match input {
        PredictInput::Windows(p) => formats::read_samples(p)?,
        PredictInput::Lanes(p) => {
            let (stats, vocab) = checkpoint_context(&ckpt)?;
            let (samples, clamped) = latest_windows(&formats::read_lanes(p)?, stats, vocab)?;
            if clamped > 0 {
                say!(out, "warning: {clamped} values fell outside the training range and were clamped\n")?;
            }
            samples
        }
    };
    let preds = predict_samples(&net, &samples)?;
    formats::write_records(&dir.join(PREDICTIONS_FILE), formats::PREDICTIONS_FORMAT, &preds)?;
    say!(out, "lane\tend_day\tmedian\trmst\n")?;
    for p in &preds {
        let median = if p.beyond_horizon { format!("{} (beyond horizon)", p.median) } else { p.median.to_string() };
        say!(out, "{}\t{}\t{}\t{:.2}\n", p.key, p.end_day, median, p.rmst)?;
    }
    Ok(preds)
}

// ---------------------------------------------------------------- explain

#[derive(Debug, Clone, PartialEq)]
pub enum SampleSelector {
    /// 0-based record index in the windows file.
    Index(usize),
    /// A lane's window ending on `end_day`, or its latest window.
    Lane { key: String, end_day: Option<u32> },
}

pub fn select_sample<'a>(samples: &'a [WindowSample], selector: &SampleSelector) -> Result<&'a WindowSample> {
    match selector {
        SampleSelector::Index(i) => samples.get(*i).ok_or_else(|| {
            Error::Validation(format!("sample {i} out of range: the file has {} samples", samples.len()))
        }),
        SampleSelector::Lane { key, end_day } => samples
            .iter()
            .filter(|s| s.key.to_string() == *key && end_day.is_none_or(|d| s.end_day == d))
            .max_by_key(|s| s.end_day)
            .ok_or_else(|| match end_day {
                Some(d) => Error::Validation(format!("no window of lane {key} ends on day {d}")),
                None => Error::Validation(format!("no window of lane {key} in the file")),
            }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutcome {
    pub key: LaneKey,
    pub end_day: u32,
    pub scalar: String,
    pub report: AttributionReport,
    pub waterfall: Waterfall,
    pub efficiency_gap: f64,
}

/// Explains one window against the mean window of `background` (normally
/// the training split). With `include_ids` the three group ids are extra
/// players whose baseline is the unknown id.
pub fn explain(
    config: &RunConfig,
    checkpoint: &Path,
    windows: &Path,
    background: &Path,
    selector: &SampleSelector,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<ExplainOutcome> {
    start_run(config, dir)?;
    let (net, _) = load_checkpoint(checkpoint)?;
    let samples = formats::read_samples(windows)?;
    let sample = select_sample(&samples, selector)?;
    let mut baseline = mean_window(&formats::read_samples(background)?)?;
    let mut input = sample.flat.clone();
    let x = &config.explain;
    if x.include_ids {
        input.extend(sample.ids.as_array().map(|v| v as f64));
        baseline.extend([0.0; 3]);
    }
    let scalar = config.scalar();
    let target = SurvivalScalar { model: &net, ids: sample.ids, scalar };
    let players = explain::window_players(x.include_ids);
    let report = explain::shapley_sampling(&target, &input, &baseline, &players, x.permutations, config.seed)?;
    let waterfall = explain::waterfall_export(&report, x.top_k)?;
    let gap = report.efficiency_gap();
    let scalar_name = match scalar {
        explain::Scalar::Rmst => "restricted mean survival time".to_string(),
        explain::Scalar::HazardAt(k) => format!("hazard at step {k}"),
    };
    debug_assert!(matches!(report.estimator, Estimator::Sampling { .. }));
    let outcome = ExplainOutcome {
        key: sample.key.clone(),
        end_day: sample.end_day,
        scalar: scalar_name,
        report,
        waterfall,
        efficiency_gap: gap,
    };
    write_json(&dir.join(ATTRIBUTION_FILE), &outcome)?;
    let text = report::waterfall_text(&outcome.waterfall);
    let path = dir.join(WATERFALL_TEXT_FILE);
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    let title = format!("{} ending day {}: {}", outcome.key, outcome.end_day, outcome.scalar);
    let path = dir.join(WATERFALL_SVG_FILE);
    std::fs::write(&path, report::waterfall_svg(&outcome.waterfall, &title)).map_err(|e| Error::io(&path, e))?;

    say!(out, "{title}\n{text}")?;
    let bound = EFFICIENCY_TOLERANCE * outcome.report.prediction.abs().max(1.0);
    let pass = gap.abs() <= bound;
    say!(
        out,
        "efficiency check: base + sum of contributions - prediction = {gap:.3e} ({})\n",
        if pass { "pass" } else { "FAIL" }
    )?;
    if !pass {
        return Err(Error::Runtime(format!("attribution efficiency gap {gap:e} exceeds {bound:e}")));
    }
    Ok(outcome)
}
