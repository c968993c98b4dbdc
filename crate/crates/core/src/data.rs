//! Lane histories to labelled, normalized 28-day window samples.
//!
//! Days are numbered from 1. Row `i` of a lane's feature matrix is day `i + 1`,
//! and a window ending at day `e` covers days `e − 27 ..= e`. A window is
//! flattened day-major, so feature `f` of the window's `j`-th day sits at
//! index `j * 21 + f`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::model::GroupIds;
use crate::rng;
use crate::survival::ObservedOutcome;
use crate::{Error, Result};

/// Column order of every feature matrix.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "APPC",
    "APW",
    "MPPC",
    "MPW",
    "cum_release",
    "days_behind_release",
    "production_usage",
    "qt_behind_release",
    "qt_boh_arrived",
    "qt_prt_boh_loose",
    "qt_boh_proj",
    "qt_boh_warehouses",
    "qt_boh_days_arriv",
    "qt_boh_days_loose",
    "qt_boh_days_proj",
    "qt_p_y_in_transit",
    "qt_promised",
    "qt_release",
    "qt_supp_cum_rcpt",
    "qt_supp_in_transit",
    "qt_trans_days_used",
];

pub const NUM_FEATURES: usize = 21;
pub const WINDOW_LEN: usize = 28;
pub const FLAT_LEN: usize = WINDOW_LEN * NUM_FEATURES;
pub const DEFAULT_STRIDE: usize = 7;
/// Longest gap still labelled as an event; later events become the token.
pub const MAX_EVENT_GAP: u32 = 365;
/// Label time for "no shortfall within the annual horizon".
pub const HORIZON_TOKEN: u32 = 366;

/// Index of a named feature in [`FEATURE_NAMES`].
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LaneKey {
    pub site: String,
    pub plant: String,
    pub part: String,
}

impl LaneKey {
    pub fn new(site: impl Into<String>, plant: impl Into<String>, part: impl Into<String>) -> Self {
        Self { site: site.into(), plant: plant.into(), part: part.into() }
    }
}

impl core::fmt::Display for LaneKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}/{}/{}", self.site, self.plant, self.part)
    }
}

/// One lane's daily history.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LaneSeries {
    pub key: LaneKey,
    /// ISO-8601 calendar date of day 1.
    pub start_day: String,
    /// Day-major rows of [`NUM_FEATURES`] values.
    pub features: Vec<[f64; NUM_FEATURES]>,
    /// First shortfall day, if one was observed.
    pub event_day: Option<u32>,
    pub last_observed_day: u32,
}

impl LaneSeries {
    pub fn num_days(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.key;
        if k.site.is_empty() || k.plant.is_empty() || k.part.is_empty() {
            return Err(Error::invalid(format!("lane {k}: empty identifier")));
        }
        if self.last_observed_day as usize > self.features.len() {
            return Err(Error::invalid(format!(
                "lane {k}: last_observed_day {} beyond {} recorded days",
                self.last_observed_day,
                self.features.len()
            )));
        }
        if let Some(e) = self.event_day {
            if e == 0 || e > self.last_observed_day {
                return Err(Error::invalid(format!("lane {k}: event_day {e} outside 1..={}", self.last_observed_day)));
            }
        }
        for (i, row) in self.features.iter().enumerate() {
            if let Some(f) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!(
                    "lane {k}: day {} feature {} is {}",
                    i + 1,
                    FEATURE_NAMES[f],
                    row[f]
                )));
            }
        }
        Ok(())
    }
}

/// A raw (unnormalized) window and the day it ends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub end_day: u32,
    pub values: Vec<f64>,
}

/// Window end days at `stride` spacing from day 28 through the last observed
/// day, stopping before the event day.
pub fn window_end_days(series: &LaneSeries, stride: usize) -> Vec<u32> {
    let last = (series.last_observed_day as usize).min(series.features.len());
    let stride = stride.max(1);
    let mut ends = Vec::new();
    let mut e = WINDOW_LEN;
    while e <= last {
        if series.event_day.is_some_and(|ev| e as u32 >= ev) {
            break;
        }
        ends.push(e as u32);
        e += stride;
    }
    ends
}

/// Sliding windows of a lane. A lane shorter than 28 days yields nothing.
pub fn segment_windows(series: &LaneSeries, stride: usize) -> Vec<RawWindow> {
    window_end_days(series, stride)
        .into_iter()
        .map(|end| RawWindow { end_day: end, values: flatten(series, end) })
        .collect()
}

fn flatten(series: &LaneSeries, end: u32) -> Vec<f64> {
    let start = end as usize - WINDOW_LEN;
    let mut out = Vec::with_capacity(FLAT_LEN);
    for row in &series.features[start..end as usize] {
        out.extend_from_slice(row);
    }
    out
}

/// Observed time and event indicator for the window ending at `window_end`;
/// `None` when nothing is observed after the window (t < 1).
pub fn label_window(window_end: u32, series: &LaneSeries) -> Option<ObservedOutcome> {
    match series.event_day {
        Some(ev) if ev > window_end => {
            let gap = ev - window_end;
            Some(if gap <= MAX_EVENT_GAP {
                ObservedOutcome { t: gap, event: true }
            } else {
                ObservedOutcome { t: HORIZON_TOKEN, event: false }
            })
        }
        Some(_) => None,
        None => {
            let remaining = series.last_observed_day.saturating_sub(window_end);
            (remaining >= 1).then(|| ObservedOutcome { t: remaining.min(HORIZON_TOKEN), event: false })
        }
    }
}

/// Per-feature minimum and maximum over the training windows.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// SHA-256 of the training data the stats were fitted on.
    pub fingerprint: String,
}

/// Pools every day of every window per feature. `fingerprint` is recorded
/// verbatim.
pub fn fit_normalization(windows: &[&[f64]], fingerprint: String) -> Result<NormalizationStats> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset("no training windows to fit normalization".into()));
    }
    let mut min = [f64::INFINITY; NUM_FEATURES];
    let mut max = [f64::NEG_INFINITY; NUM_FEATURES];
    for w in windows {
        if w.len() != FLAT_LEN {
            return Err(Error::invalid(format!("window has {} values, expected {FLAT_LEN}", w.len())));
        }
        for row in w.chunks(NUM_FEATURES) {
            for f in 0..NUM_FEATURES {
                min[f] = min[f].min(row[f]);
                max[f] = max[f].max(row[f]);
            }
        }
    }
    Ok(NormalizationStats { min: min.to_vec(), max: max.to_vec(), fingerprint })
}

impl NormalizationStats {
    pub fn validate(&self) -> Result<()> {
        if self.min.len() != NUM_FEATURES || self.max.len() != NUM_FEATURES {
            return Err(Error::invalid("normalization stats need 21 min/max pairs"));
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::invalid("normalization stats need finite min <= max"));
        }
        Ok(())
    }
}

/// Min-max scales a flat window. Zero-range features map to 0; values outside
/// the fitted range are clamped to [0, 1] and counted in `clamped`.
pub fn apply_normalization(window: &[f64], stats: &NormalizationStats, clamped: &mut usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(window.len());
    for (i, &x) in window.iter().enumerate() {
        let f = i % NUM_FEATURES;
        let (lo, hi) = (stats.min[f], stats.max[f]);
        let range = hi - lo;
        let z = if range > 0.0 { (x - lo) / range } else { 0.0 };
        let c = z.clamp(0.0, 1.0);
        if c != z || (range == 0.0 && x != lo) {
            *clamped += 1;
        }
        out.push(c);
    }
    out
}

/// String-to-id map for one group axis; id 0 is reserved for unknown values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vocabulary {
    /// Known values; the value at index `i` has id `i + 1`.
    pub values: Vec<String>,
}

impl Vocabulary {
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = values.into_iter().collect();
        Self { values: set.into_iter().map(String::from).collect() }
    }

    pub fn id(&self, value: &str) -> usize {
        self.values.binary_search_by(|v| v.as_str().cmp(value)).map(|i| i + 1).unwrap_or(0)
    }

    /// Table size including the unknown row.
    pub fn size(&self) -> usize {
        self.values.len() + 1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vocabularies {
    pub site: Vocabulary,
    pub plant: Vocabulary,
    pub part: Vocabulary,
}

impl Vocabularies {
    pub fn from_lanes<'a>(keys: impl IntoIterator<Item = &'a LaneKey> + Clone) -> Self {
        Self {
            site: Vocabulary::from_values(keys.clone().into_iter().map(|k| k.site.as_str())),
            plant: Vocabulary::from_values(keys.clone().into_iter().map(|k| k.plant.as_str())),
            part: Vocabulary::from_values(keys.into_iter().map(|k| k.part.as_str())),
        }
    }

    pub fn ids(&self, key: &LaneKey) -> GroupIds {
        GroupIds { site: self.site.id(&key.site), plant: self.plant.id(&key.plant), part: self.part.id(&key.part) }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.site.size(), self.plant.size(), self.part.size()]
    }
}

/// A normalized, labelled window.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowSample {
    pub key: LaneKey,
    pub ids: GroupIds,
    pub end_day: u32,
    /// [`FLAT_LEN`] values in day-major order.
    pub flat: Vec<f64>,
    pub outcome: ObservedOutcome,
}

impl WindowSample {
    /// Row `day` (0-based within the window) of the 28×21 view.
    pub fn day(&self, day: usize) -> &[f64] {
        &self.flat[day * NUM_FEATURES..(day + 1) * NUM_FEATURES]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BuildSettings {
    pub stride: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for BuildSettings {
    fn default() -> Self {
        Self { stride: DEFAULT_STRIDE, validation_fraction: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSummary {
    pub lanes: usize,
    pub train_lanes: usize,
    pub validation_lanes: usize,
    /// Lanes shorter than one window.
    pub short_lanes: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    /// Windows dropped because nothing was observed after them.
    pub discarded_windows: usize,
    /// Share of all samples with `y = 0`.
    pub censored_fraction: f64,
    /// Values clamped while normalizing the validation split.
    pub clamped_values: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
    pub stats: NormalizationStats,
    pub vocab: Vocabularies,
    pub summary: DatasetSummary,
    /// Keys of the lanes assigned to validation, in input order.
    pub validation_lanes: Vec<LaneKey>,
}

/// Labelled raw windows of one lane.
pub fn labelled_windows(series: &LaneSeries, stride: usize) -> (Vec<(RawWindow, ObservedOutcome)>, usize) {
    let mut out = Vec::new();
    let mut discarded = 0;
    for w in segment_windows(series, stride) {
        match label_window(w.end_day, series) {
            Some(o) => out.push((w, o)),
            None => discarded += 1,
        }
    }
    (out, discarded)
}

/// SHA-256 over lane keys and raw feature bits, in the given order.
pub fn fingerprint_lanes<'a>(lanes: impl IntoIterator<Item = &'a LaneSeries>) -> String {
    let mut h = Sha256::new();
    for lane in lanes {
        for s in [&lane.key.site, &lane.key.plant, &lane.key.part] {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        h.update(lane.last_observed_day.to_le_bytes());
        h.update(lane.event_day.map_or(0u32, |e| e).to_le_bytes());
        for row in &lane.features {
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 15) as usize] as char);
    }
    s
}

/// Splits lanes (never windows) into train and validation, fits
/// normalization and vocabularies on the training lanes, and produces
/// normalized samples for both splits.
pub fn build_dataset(lanes: &[LaneSeries], settings: &BuildSettings) -> Result<Dataset> {
    if lanes.is_empty() {
        return Err(Error::EmptyDataset("no lanes".into()));
    }
    if !(0.0..1.0).contains(&settings.validation_fraction) {
        return Err(Error::config(format!("validation fraction {} outside [0, 1)", settings.validation_fraction)));
    }
    if settings.stride == 0 {
        return Err(Error::config("stride must be positive"));
    }
    let mut seen = BTreeMap::new();
    for (i, lane) in lanes.iter().enumerate() {
        lane.validate()?;
        if let Some(prev) = seen.insert(&lane.key, i) {
            return Err(Error::invalid(format!("lane {} appears twice (records {prev} and {i})", lane.key)));
        }
    }

    let mut summary = DatasetSummary { lanes: lanes.len(), ..DatasetSummary::default() };
    let mut order: Vec<usize> = (0..lanes.len()).collect();
    order.shuffle(&mut rng::stream(settings.seed, "lane-split", 0));
    let mut n_val = libm::round(lanes.len() as f64 * settings.validation_fraction) as usize;
    n_val = n_val.min(lanes.len() - 1);
    if n_val == 0 {
        summary.warnings.push("validation split is empty; all lanes are used for training".into());
    }
    let mut is_val = alloc::vec![false; lanes.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }

    let mut train_raw = Vec::new();
    let mut val_raw = Vec::new();
    for (i, lane) in lanes.iter().enumerate() {
        if lane.features.len() < WINDOW_LEN || (lane.last_observed_day as usize) < WINDOW_LEN {
            summary.short_lanes += 1;
        }
        let (windows, discarded) = labelled_windows(lane, settings.stride);
        summary.discarded_windows += discarded;
        let dst = if is_val[i] { &mut val_raw } else { &mut train_raw };
        dst.extend(windows.into_iter().map(|(w, o)| (i, w, o)));
    }
    if summary.short_lanes > 0 {
        summary.warnings.push(format!("{} lanes shorter than {WINDOW_LEN} days were skipped", summary.short_lanes));
    }
    if train_raw.is_empty() {
        return Err(Error::EmptyDataset("no training windows: every training lane is too short".into()));
    }

    let train_lanes: Vec<&LaneSeries> = lanes.iter().enumerate().filter(|(i, _)| !is_val[*i]).map(|(_, l)| l).collect();
    let fingerprint = fingerprint_lanes(train_lanes.iter().copied());
    let refs: Vec<&[f64]> = train_raw.iter().map(|(_, w, _)| w.values.as_slice()).collect();
    let stats = fit_normalization(&refs, fingerprint)?;
    let vocab = Vocabularies::from_lanes(train_lanes.iter().map(|l| &l.key));

    let mut train_clamped = 0;
    let make = |raw: Vec<(usize, RawWindow, ObservedOutcome)>, clamped: &mut usize| -> Vec<WindowSample> {
        raw.into_iter()
            .map(|(i, w, outcome)| WindowSample {
                key: lanes[i].key.clone(),
                ids: vocab.ids(&lanes[i].key),
                end_day: w.end_day,
                flat: apply_normalization(&w.values, &stats, clamped),
                outcome,
            })
            .collect()
    };
    let train = make(train_raw, &mut train_clamped);
    let mut val_clamped = 0;
    let validation = make(val_raw, &mut val_clamped);
    debug_assert_eq!(train_clamped, 0);

    summary.train_lanes = train_lanes.len();
    summary.validation_lanes = n_val;
    summary.train_samples = train.len();
    summary.validation_samples = validation.len();
    summary.clamped_values = val_clamped;
    summary.censored_fraction = censored_fraction(train.iter().chain(&validation).map(|s| s.outcome));
    let validation_lanes = lanes.iter().zip(&is_val).filter(|(_, &v)| v).map(|(l, _)| l.key.clone()).collect();
    Ok(Dataset { train, validation, stats, vocab, summary, validation_lanes })
}

/// Normalized sample for the window of `lane` ending at `end_day`, using
/// statistics and vocabularies fitted elsewhere. Out-of-range values are
/// clamped and counted in `clamped`.
pub fn encode_window(
    lane: &LaneSeries,
    end_day: u32,
    outcome: ObservedOutcome,
    stats: &NormalizationStats,
    vocab: &Vocabularies,
    clamped: &mut usize,
) -> Result<WindowSample> {
    if (end_day as usize) < WINDOW_LEN || end_day as usize > lane.features.len() {
        return Err(Error::invalid(format!("lane {} has no 28-day window ending on day {end_day}", lane.key)));
    }
    Ok(WindowSample {
        key: lane.key.clone(),
        ids: vocab.ids(&lane.key),
        end_day,
        flat: apply_normalization(&flatten(lane, end_day), stats, clamped),
        outcome,
    })
}

/// Every labelled window of `lanes`, normalized with existing statistics.
pub fn encode_lanes(
    lanes: &[LaneSeries],
    stride: usize,
    stats: &NormalizationStats,
    vocab: &Vocabularies,
    clamped: &mut usize,
) -> Result<Vec<WindowSample>> {
    let mut out = Vec::new();
    for lane in lanes {
        for (w, o) in labelled_windows(lane, stride).0 {
            out.push(encode_window(lane, w.end_day, o, stats, vocab, clamped)?);
        }
    }
    Ok(out)
}

/// Share of outcomes with `y = 0`; 0 for an empty collection.
pub fn censored_fraction(outcomes: impl IntoIterator<Item = ObservedOutcome>) -> f64 {
    let (mut n, mut c) = (0usize, 0usize);
    for o in outcomes {
        n += 1;
        c += usize::from(!o.event);
    }
    if n == 0 {
        0.0
    } else {
        c as f64 / n as f64
    }
}

/// Window-level censoring proportion a lane collection would produce.
pub fn corpus_censored_fraction(lanes: &[LaneSeries], stride: usize) -> f64 {
    censored_fraction(lanes.iter().flat_map(|l| labelled_windows(l, stride).0.into_iter().map(|(_, o)| o)))
}

/// Per-feature mean of normalized windows, used as an attribution baseline.
pub fn mean_window(samples: &[WindowSample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("mean of no windows".into()));
    }
    let mut mean = alloc::vec![0.0; FLAT_LEN];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(&s.flat) {
            *m += v;
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Day-index of flat coordinate `i` counted back from the window's last day.
pub fn lag_of(i: usize) -> usize {
    WINDOW_LEN - 1 - i / NUM_FEATURES
}
