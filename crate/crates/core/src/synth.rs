//! Seeded simulator of supplier-to-plant lanes with known shortfall days.
//!
//! Each day the plant sets a production requirement around the demand rate
//! λ and releases a smoothed schedule to the supplier. The supplier ships
//! from a small finished stock and produces up to its capacity (ρλ, reduced
//! during outage episodes); unmet orders are backlog. Shipments arrive after
//! the transit time. During overtime episodes the plant consumes more than
//! it releases. Arrived stock follows exact conservation
//! `boh_t = boh_{t−1} + receipts_t − usage_t` over integer quantities, and
//! the shortfall is the first day on-hand stock covers less than one day of
//! nominal demand.
//!
//! Regimes come in pairs that share every observable parameter and differ
//! only in how low stock is rescued:
//!
//! * robust (−1): while a backlog persists, stock is transferred from the
//!   regional warehouse. Outages are absorbed and shortfalls come from
//!   overtime surges, which only start after a backlog-free spell.
//! * fragile (+1): with no persistent backlog, the supplier expedites.
//!   Overtime is absorbed and shortfalls come from supplier outages.
//!
//! So rising backlog signals an imminent shortfall in one regime and a
//! quiet period in the other.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::data::{label_window, window_end_days, LaneKey, LaneSeries, DEFAULT_STRIDE, NUM_FEATURES, WINDOW_LEN};
use crate::math;
use crate::rng::{self, Rng};
use crate::survival::{ObservedOutcome, TimeGrid};
use crate::{Error, Result};

/// How a regime responds to low stock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Fragility {
    /// Backlog is absorbed by warehouse transfers.
    Robust,
    /// Backlog leads to shortfalls; surges are covered by expediting.
    Fragile,
}

impl Fragility {
    pub fn sign(self) -> i8 {
        match self {
            Fragility::Robust => -1,
            Fragility::Fragile => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegimeSpec {
    pub id: usize,
    pub name: String,
    /// Mean daily demand λ.
    pub demand_rate: f64,
    /// Nominal supplier capacity over demand.
    pub capacity_ratio: f64,
    /// Coefficient of variation of daily demand.
    pub variability: f64,
    pub utilization: f64,
    /// Days between shipment and arrival.
    pub transit_days: u32,
    /// Target days of stock held at the plant and in transit.
    pub buffer_days: f64,
    pub fragility: Fragility,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("regime {}: {what}", self.name)));
        if !(self.demand_rate > 0.0) {
            return bad("demand rate must be positive");
        }
        if !(self.capacity_ratio > 0.0) {
            return bad("capacity ratio must be positive");
        }
        if !(self.variability >= 0.0) {
            return bad("variability must be non-negative");
        }
        if !(self.utilization > 0.0 && self.utilization < 1.5) {
            return bad("utilization must lie in (0, 1.5)");
        }
        if self.transit_days < 1 {
            return bad("transit time must be at least one day");
        }
        let pipeline = self.transit_days as f64 * self.capacity_ratio.min(1.0);
        if !(self.buffer_days - pipeline >= 1.0) {
            return bad("buffer must cover the pipeline plus one day of demand");
        }
        Ok(())
    }

    /// Daily probability that an outage starts.
    fn outage_rate(&self) -> f64 {
        OUTAGE_RATE * self.variability * self.utilization
    }

    fn overtime_rate(&self) -> f64 {
        OVERTIME_RATE * self.variability * self.utilization
    }
}

/// Episode starts per day per unit of variability × utilization.
const OUTAGE_RATE: f64 = 0.03;
const OVERTIME_RATE: f64 = 0.1;
const OUTAGE_DAYS: (u32, u32) = (14, 45);
const OUTAGE_SEVERITY: (f64, f64) = (0.5, 0.9);
const OVERTIME_DAYS: (u32, u32) = (10, 50);
const OVERTIME_MULTIPLIER: (f64, f64) = (1.2, 1.6);
/// Extra supplier capacity, in days of demand per day, while working off the
/// backlog left by an outage.
const CATCH_UP: f64 = 0.5;
/// Finished stock the supplier keeps to absorb order swings, in days of demand.
const SUPPLIER_STOCK_DAYS: f64 = 3.0;
/// Backlog-free days an overtime episode needs before it can start.
const SURGE_CALM_DAYS: u32 = 45;
/// Consecutive backlog days after which a backlog counts as open.
const BACKLOG_PERSIST: u32 = 3;
/// Rescues trigger below this many days of stock and refill to `RESCUE_TO`.
const RESCUE_BELOW: f64 = 2.0;
const RESCUE_TO: f64 = 3.0;
/// Share of the inventory-position gap added to (or cut from) each release.
const REBUILD_GAIN: f64 = 0.2;
const WAREHOUSE_DAYS: f64 = 60.0;
const WAREHOUSE_REFILL: f64 = 0.5;

/// The paired default regime table: four operating profiles, each in a
/// robust and a fragile variant.
pub fn default_regimes() -> Vec<RegimeSpec> {
    let profiles = [
        (120.0, 1.25, 0.4, 0.85, 2, 12.0),
        (300.0, 1.15, 0.35, 0.9, 4, 14.0),
        (60.0, 1.3, 0.6, 0.7, 3, 12.0),
        (200.0, 1.1, 0.5, 0.95, 5, 16.0),
    ];
    let mut out = Vec::new();
    for (p, &(lambda, rho, v, u, tp, b)) in profiles.iter().enumerate() {
        for fragility in [Fragility::Robust, Fragility::Fragile] {
            let tag = if fragility == Fragility::Robust { "robust" } else { "fragile" };
            out.push(RegimeSpec {
                id: out.len(),
                name: format!("profile{p}-{tag}"),
                demand_rate: lambda,
                capacity_ratio: rho,
                variability: v,
                utilization: u,
                transit_days: tp,
                buffer_days: b,
                fragility,
            });
        }
    }
    out
}

/// Daily integer flows kept alongside the emitted features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LaneTrace {
    /// All stock arriving at the plant: supplier arrivals, expedites and
    /// warehouse transfers.
    pub receipts: Vec<i64>,
    pub usage: Vec<i64>,
    /// On-hand balance at the end of each day.
    pub boh: Vec<i64>,
    pub backlog: Vec<i64>,
    /// On-hand balance before day 1.
    pub initial_boh: i64,
    pub outage: Vec<bool>,
    pub overtime: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedLane {
    pub series: LaneSeries,
    pub trace: LaneTrace,
}

struct Episode {
    remaining: u32,
    level: f64,
}

fn start_episode(rng: &mut Rng, days: (u32, u32), level: (f64, f64)) -> Episode {
    Episode { remaining: rng.random_range(days.0..=days.1), level: rng.random_range(level.0..=level.1) }
}

fn round(x: f64) -> i64 {
    math::round(x) as i64
}

/// Simulates `days` days of one lane. With zero variability the lane is
/// deterministic.
pub fn simulate_lane(
    key: LaneKey,
    regime: &RegimeSpec,
    days: usize,
    seed: u64,
    start_day: &str,
) -> Result<SimulatedLane> {
    regime.validate()?;
    let mut rng = rng::stream(seed, "lane-sim", 0);
    let lambda = regime.demand_rate;
    let lam = round(lambda).max(1);
    let v = regime.variability;
    let gamma = if v > 0.0 {
        Some(Gamma::new(1.0 / (v * v), v * v).map_err(|e| Error::config(format!("demand noise: {e}")))?)
    } else {
        None
    };
    let tp = regime.transit_days as usize;
    let flow0 = round(lambda * regime.capacity_ratio.min(1.0));
    let mut pipeline: VecDeque<i64> = core::iter::repeat_n(flow0, tp).collect();
    let mut boh = round((regime.buffer_days - tp as f64 * regime.capacity_ratio.min(1.0)) * lambda);
    let target_position = round(regime.buffer_days * lambda);
    let warehouse_cap = round(WAREHOUSE_DAYS * lambda);
    let mut warehouse = warehouse_cap;
    let mut backlog: i64 = 0;
    // Supplier finished stock, built from spare capacity.
    let finished_target = round(SUPPLIER_STOCK_DAYS * lambda);
    let mut finished: i64 = 0;
    let mut behind_days = 0u32;
    let mut calm_days = 0u32;
    let mut cum_release: i64 = 0;
    let mut cum_receipts: i64 = 0;
    let mut outage: Option<Episode> = None;
    // Working off the backlog an outage left behind.
    let mut recovering = false;
    let mut overtime: Option<Episode> = None;
    // Trailing histories start at steady state.
    let mut recent_release: VecDeque<i64> = core::iter::repeat_n(lam, WINDOW_LEN).collect();
    let mut recent_need: VecDeque<i64> = core::iter::repeat_n(lam, 7).collect();
    let mut recent_base: VecDeque<i64> = core::iter::repeat_n(lam, 7).collect();
    let mut recent_usage: VecDeque<i64> = core::iter::repeat_n(lam, WINDOW_LEN).collect();
    let mut event_day = None;

    let mut trace = LaneTrace { initial_boh: boh, ..LaneTrace::default() };
    let mut features = Vec::with_capacity(days);

    for day in 1..=days {
        // Episodes.
        if let Some(e) = &mut outage {
            e.remaining -= 1;
            if e.remaining == 0 {
                outage = None;
                recovering = backlog > 0;
            }
        } else if rng.random::<f64>() < regime.outage_rate() {
            outage = Some(start_episode(&mut rng, OUTAGE_DAYS, OUTAGE_SEVERITY));
        }
        if let Some(e) = &mut overtime {
            e.remaining -= 1;
            if e.remaining == 0 {
                overtime = None;
            }
        } else if calm_days >= SURGE_CALM_DAYS && outage.is_none() && rng.random::<f64>() < regime.overtime_rate() {
            overtime = Some(start_episode(&mut rng, OVERTIME_DAYS, OVERTIME_MULTIPLIER));
        }
        let multiplier = overtime.as_ref().map_or(1.0, |e| e.level);
        let severity = outage.as_ref().map_or(0.0, |e| e.level);

        // Plant requirement and release to the supplier.
        let noise = gamma.as_ref().map_or(1.0, |g| g.sample(&mut rng));
        push_window(&mut recent_base, round(lambda * noise).max(0), 7);
        let base = round(recent_base.iter().sum::<i64>() as f64 / 7.0);
        let need = round(lambda * noise * multiplier).max(0);
        let in_transit: i64 = pipeline.iter().sum();
        let position = boh + in_transit + backlog;
        let rebuild = if overtime.is_none() { round(REBUILD_GAIN * (target_position - position) as f64) } else { 0 };
        let release = (base + rebuild).max(0);

        // Supplier.
        let catch_up = if recovering { CATCH_UP } else { 0.0 };
        let capacity = round(lambda * (regime.capacity_ratio * (1.0 - severity) + catch_up)).max(0);
        let orders = backlog + release;
        let produced = (orders + finished_target - finished).clamp(0, capacity);
        let shipped = orders.min(finished + produced);
        finished += produced - shipped;
        backlog = orders - shipped;
        recovering &= backlog > 0;
        pipeline.push_back(shipped);
        let arrived = pipeline.pop_front().unwrap_or(0);

        // Rescue before consumption.
        let projected = boh + arrived - need;
        let floor = round(RESCUE_BELOW * lambda);
        let refill = (round(RESCUE_TO * lambda) - projected).max(0);
        let mut expedite = 0;
        let mut transfer = 0;
        let persistent = behind_days >= BACKLOG_PERSIST;
        if projected < floor {
            match regime.fragility {
                Fragility::Fragile if !persistent => expedite = refill,
                Fragility::Robust if persistent => {
                    transfer = refill.min(warehouse);
                    warehouse -= transfer;
                }
                _ => {}
            }
        }
        warehouse = (warehouse + round(WAREHOUSE_REFILL * lambda)).min(warehouse_cap);

        let receipts = arrived + expedite + transfer;
        let available = boh + receipts;
        let usage = need.min(available);
        boh = available - usage;
        if event_day.is_none() && boh < lam {
            event_day = Some(day as u32);
        }

        cum_release += release;
        cum_receipts += arrived + expedite;
        behind_days = if backlog > 0 { behind_days + 1 } else { 0 };
        calm_days = if backlog > 0 { 0 } else { calm_days + 1 };
        push_window(&mut recent_release, release, 28);
        push_window(&mut recent_need, need, 7);
        push_window(&mut recent_usage, usage, WINDOW_LEN);
        let usage_rate = (recent_usage.iter().sum::<i64>() as f64 / recent_usage.len() as f64).max(1.0);
        let in_transit: i64 = pipeline.iter().sum();
        let expected_use = (usage_rate * tp as f64) as i64;
        let projected_boh = (boh + in_transit - expected_use).max(0);
        let next_arrival = pipeline.front().copied().unwrap_or(0);

        let mut row = [0.0; NUM_FEATURES];
        row[0] = (7 * round(lambda * regime.capacity_ratio)) as f64;
        row[1] = 7.0 * recent_release.iter().sum::<i64>() as f64 / recent_release.len() as f64;
        row[2] = (capacity * 7) as f64;
        row[3] = recent_need.iter().sum::<i64>() as f64;
        row[4] = cum_release as f64;
        row[5] = behind_days as f64;
        row[6] = usage as f64;
        row[7] = backlog as f64;
        row[8] = boh as f64;
        row[9] = receipts as f64;
        row[10] = projected_boh as f64;
        row[11] = warehouse as f64;
        row[12] = boh as f64 / usage_rate;
        row[13] = receipts as f64 / usage_rate;
        row[14] = projected_boh as f64 / usage_rate;
        row[15] = next_arrival as f64;
        row[16] = shipped as f64;
        row[17] = release as f64;
        row[18] = cum_receipts as f64;
        row[19] = in_transit as f64;
        row[20] = tp as f64;
        features.push(row);

        trace.receipts.push(receipts);
        trace.usage.push(usage);
        trace.boh.push(boh);
        trace.backlog.push(backlog);
        trace.outage.push(outage.is_some());
        trace.overtime.push(overtime.is_some());
    }

    Ok(SimulatedLane {
        series: LaneSeries { key, start_day: start_day.into(), features, event_day, last_observed_day: days as u32 },
        trace,
    })
}

fn push_window(q: &mut VecDeque<i64>, v: i64, len: usize) {
    q.push_back(v);
    if q.len() > len {
        q.pop_front();
    }
}

/// Closed-form shortfall day of the zero-variability lane with ρ < 1: stock
/// falls by (1 − ρ)λ per day from `c0` days of cover and the shortfall is the
/// first day with less than one day left.
pub fn fluid_event_day(regime: &RegimeSpec) -> Option<u32> {
    if regime.capacity_ratio >= 1.0 {
        return None;
    }
    let c0 = regime.buffer_days - regime.transit_days as f64 * regime.capacity_ratio;
    Some(math::floor((c0 - 1.0) / (1.0 - regime.capacity_ratio)) as u32 + 1)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorConfig {
    pub sites: usize,
    pub plants: usize,
    pub part_families: usize,
    pub parts_per_family: usize,
    pub days: usize,
    /// Window-level censoring proportion to reach by truncating lanes.
    pub censoring_fraction: f64,
    pub seed: u64,
    /// ISO date of day 1 for every lane.
    pub start_date: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            sites: 3,
            plants: 3,
            part_families: 12,
            parts_per_family: 5,
            days: 730,
            censoring_fraction: 0.25,
            seed: 7,
            start_date: "2022-01-03".into(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 || self.plants == 0 || self.part_families == 0 || self.parts_per_family == 0 {
            return Err(Error::config("generator counts must be positive"));
        }
        if self.days < WINDOW_LEN + 1 {
            return Err(Error::config(format!("generator days must exceed the {WINDOW_LEN}-day window")));
        }
        if !(0.0..1.0).contains(&self.censoring_fraction) {
            return Err(Error::config("censoring fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn num_lanes(&self) -> usize {
        self.sites * self.plants * self.part_families * self.parts_per_family
    }
}

/// Regime index for a lane: the operating profile follows (site + plant) and
/// the fragility follows the part family's parity.
pub fn regime_index(site: usize, plant: usize, family: usize, regimes: usize) -> usize {
    let profiles = (regimes / 2).max(1);
    ((site + plant) % profiles) * 2 + family % 2
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestEntry {
    pub key: LaneKey,
    pub regime: usize,
    pub regime_name: String,
    pub fragility: Fragility,
    /// Simulated shortfall day, whether or not it is observed.
    pub true_event_day: Option<u32>,
    pub last_observed_day: u32,
    /// The lane was truncated before its shortfall.
    pub censored: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub lanes: Vec<LaneSeries>,
    pub manifest: Vec<ManifestEntry>,
}

pub fn lane_key(site: usize, plant: usize, family: usize, number: usize) -> LaneKey {
    LaneKey::new(format!("S{}", site + 1), format!("PL{}", plant + 1), format!("P{:02}-{}", family + 1, number + 1))
}

/// Simulates every (site, plant, part) lane without administrative
/// censoring.
pub fn generate_corpus(config: &GeneratorConfig, regimes: &[RegimeSpec]) -> Result<Corpus> {
    config.validate()?;
    if regimes.len() < 2 || !regimes.len().is_multiple_of(2) {
        return Err(Error::config("the regime table needs robust/fragile pairs"));
    }
    let mut lanes = Vec::with_capacity(config.num_lanes());
    let mut manifest = Vec::with_capacity(config.num_lanes());
    let mut index = 0u64;
    for site in 0..config.sites {
        for plant in 0..config.plants {
            for family in 0..config.part_families {
                for number in 0..config.parts_per_family {
                    let key = lane_key(site, plant, family, number);
                    let r = regime_index(site, plant, family, regimes.len());
                    let seed = rng::stream(config.seed, "lane-seed", index).random::<u64>();
                    index += 1;
                    let sim = simulate_lane(key.clone(), &regimes[r], config.days, seed, &config.start_date)?;
                    manifest.push(ManifestEntry {
                        key,
                        regime: r,
                        regime_name: regimes[r].name.clone(),
                        fragility: regimes[r].fragility,
                        true_event_day: sim.series.event_day,
                        last_observed_day: sim.series.last_observed_day,
                        censored: false,
                        seed,
                    });
                    lanes.push(sim.series);
                }
            }
        }
    }
    Ok(Corpus { lanes, manifest })
}

fn window_counts(lane: &LaneSeries, stride: usize) -> (usize, usize) {
    let labels: Vec<_> = window_end_days(lane, stride).into_iter().filter_map(|end| label_window(end, lane)).collect();
    (labels.len(), labels.iter().filter(|o| !o.event).count())
}

/// Truncates randomly chosen lanes before their shortfall until the
/// window-level censoring proportion reaches `fraction`. Truncated lanes lose
/// their event in the emitted series; the manifest keeps the true day.
pub fn apply_censoring(corpus: &Corpus, fraction: f64, seed: u64, stride: usize) -> Result<Corpus> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("censoring fraction must lie in [0, 1)"));
    }
    let mut out = corpus.clone();
    if fraction == 0.0 {
        return Ok(out);
    }
    let (mut total, mut censored) = (0usize, 0usize);
    for lane in &out.lanes {
        let (n, c) = window_counts(lane, stride);
        total += n;
        censored += c;
    }
    let reached = |c: usize, n: usize| n > 0 && c as f64 / n as f64 >= fraction;
    let mut candidates: Vec<usize> =
        (0..out.lanes.len()).filter(|&i| out.lanes[i].event_day.is_some_and(|e| e as usize > WINDOW_LEN + 1)).collect();
    let mut rng = rng::stream(seed, "censoring", 0);
    candidates.shuffle(&mut rng);
    for i in candidates {
        if reached(censored, total) {
            break;
        }
        let lane = &mut out.lanes[i];
        let event = lane.event_day.unwrap();
        let (n0, c0) = window_counts(lane, stride);
        let cut = rng.random_range(WINDOW_LEN as u32 + 1..event);
        lane.event_day = None;
        lane.last_observed_day = cut;
        lane.features.truncate(cut as usize);
        let (n1, c1) = window_counts(lane, stride);
        total = total - n0 + n1;
        censored = censored - c0 + c1;
        out.manifest[i].last_observed_day = cut;
        out.manifest[i].censored = true;
    }
    if !reached(censored, total) {
        return Err(Error::config(format!(
            "censoring fraction {fraction} is infeasible: truncating every lane with a shortfall reaches only {:.3}",
            if total == 0 { 0.0 } else { censored as f64 / total as f64 }
        )));
    }
    Ok(out)
}

/// Default pipeline: simulate, then censor to the configured proportion at
/// the default stride.
pub fn generate(config: &GeneratorConfig, regimes: &[RegimeSpec]) -> Result<Corpus> {
    let raw = generate_corpus(config, regimes)?;
    apply_censoring(&raw, config.censoring_fraction, config.seed, DEFAULT_STRIDE)
}

/// Covariates uniform on [−1, 1]^p and event times drawn by sequential coin
/// flips with `h_k(x) = σ(θ_k · [1; x])`; samples surviving all `H = θ.len()`
/// steps are censored at `H`.
pub fn generate_parametric_survival(
    n: usize,
    theta: &[Vec<f64>],
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<ObservedOutcome>)> {
    let grid = TimeGrid::new(theta.len())?;
    let width = theta[0].len();
    if width == 0 || theta.iter().any(|row| row.len() != width || row.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("theta rows must be finite and share a width of p + 1"));
    }
    let p = width - 1;
    let mut rng = rng::stream(seed, "parametric-survival", 0);
    let mut xs = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut outcome = ObservedOutcome::censored(grid.horizon() as u32);
        for (k, row) in theta.iter().enumerate() {
            let eta = row[0] + row[1..].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            if rng.random::<f64>() < math::sigmoid(eta) {
                outcome = ObservedOutcome::event(k as u32 + 1);
                break;
            }
        }
        xs.push(x);
        outcomes.push(outcome);
    }
    Ok((xs, outcomes))
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / math::sqrt(saa * sbb))
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Rank correlation between a window's mean backlog and the lane's time to
/// its true shortfall, per regime.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegimeCorrelation {
    pub regime: usize,
    pub regime_name: String,
    pub windows: usize,
    pub spearman: Option<f64>,
}

/// Uses every window ending before the true shortfall of lanes that have
/// one, whether or not the emitted series still shows it.
pub fn backlog_correlations(corpus: &Corpus, regimes: &[RegimeSpec], stride: usize) -> Vec<RegimeCorrelation> {
    let backlog = crate::data::feature_index("qt_behind_release").unwrap_or(7);
    let mut per: Vec<(Vec<f64>, Vec<f64>)> = alloc::vec![(Vec::new(), Vec::new()); regimes.len()];
    for (lane, entry) in corpus.lanes.iter().zip(&corpus.manifest) {
        let Some(event) = entry.true_event_day else { continue };
        let mut end = WINDOW_LEN;
        while end < event as usize && end <= lane.features.len() {
            let mean = lane.features[end - WINDOW_LEN..end].iter().map(|r| r[backlog]).sum::<f64>() / WINDOW_LEN as f64;
            per[entry.regime].0.push(mean);
            per[entry.regime].1.push((event as usize - end) as f64);
            end += stride;
        }
    }
    regimes
        .iter()
        .zip(per)
        .map(|(r, (a, b))| RegimeCorrelation {
            regime: r.id,
            regime_name: r.name.clone(),
            windows: a.len(),
            spearman: spearman(&a, &b),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{corpus_censored_fraction, LaneKey};
    use proptest::prelude::*;

    fn regime(lambda: f64, rho: f64, v: f64, tp: u32, b: f64, fragility: Fragility) -> RegimeSpec {
        RegimeSpec {
            id: 0,
            name: "test".into(),
            demand_rate: lambda,
            capacity_ratio: rho,
            variability: v,
            utilization: 0.5,
            transit_days: tp,
            buffer_days: b,
            fragility,
        }
    }

    fn key() -> LaneKey {
        LaneKey::new("S1", "PL1", "P01-1")
    }

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            sites: 2,
            plants: 2,
            part_families: 4,
            parts_per_family: 2,
            days: 400,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn fluid_oracle() {
        let r = regime(100.0, 0.8, 0.0, 2, 11.6, Fragility::Fragile);
        assert_eq!(fluid_event_day(&r), Some(46));
        let sim = simulate_lane(key(), &r, 200, 1, "2022-01-03").unwrap();
        assert_eq!(sim.series.event_day, Some(46));
    }

    #[test]
    fn ample_capacity_without_noise_never_runs_short() {
        for fragility in [Fragility::Robust, Fragility::Fragile] {
            let r = regime(100.0, 1.2, 0.0, 3, 12.0, fragility);
            assert_eq!(fluid_event_day(&r), None);
            let sim = simulate_lane(key(), &r, 730, 1, "2022-01-03").unwrap();
            assert_eq!(sim.series.event_day, None);
            assert!(sim.trace.outage.iter().chain(&sim.trace.overtime).all(|&e| !e));
        }
    }

    #[test]
    fn stock_is_conserved_every_day() {
        for r in default_regimes() {
            let sim = simulate_lane(key(), &r, 730, 11, "2022-01-03").unwrap();
            let t = &sim.trace;
            let mut prev = t.initial_boh;
            for d in 0..t.boh.len() {
                assert_eq!(t.boh[d], prev + t.receipts[d] - t.usage[d], "{} day {}", r.name, d + 1);
                prev = t.boh[d];
            }
        }
    }

    #[test]
    fn event_is_first_day_below_one_day_of_demand() {
        for r in default_regimes() {
            let sim = simulate_lane(key(), &r, 730, 5, "2022-01-03").unwrap();
            let lam = math::round(r.demand_rate) as i64;
            let first = sim.trace.boh.iter().position(|&b| b < lam).map(|i| i as u32 + 1);
            assert_eq!(sim.series.event_day, first, "{}", r.name);
        }
    }

    #[test]
    fn invalid_regimes_are_rejected() {
        assert!(regime(0.0, 1.0, 0.1, 2, 10.0, Fragility::Robust).validate().is_err());
        assert!(regime(100.0, 1.0, -0.1, 2, 10.0, Fragility::Robust).validate().is_err());
        assert!(regime(100.0, 1.0, 0.1, 0, 10.0, Fragility::Robust).validate().is_err());
        assert!(regime(100.0, 1.0, 0.1, 5, 5.5, Fragility::Robust).validate().is_err());
        assert!(GeneratorConfig { days: 20, ..GeneratorConfig::default() }.validate().is_err());
        assert!(GeneratorConfig { censoring_fraction: 1.0, ..GeneratorConfig::default() }.validate().is_err());
    }

    #[test]
    fn default_table_pairs_each_profile() {
        let regimes = default_regimes();
        assert_eq!(regimes.len(), 8);
        for pair in regimes.chunks(2) {
            assert_eq!(pair[0].fragility, Fragility::Robust);
            assert_eq!(pair[1].fragility, Fragility::Fragile);
            assert_eq!(pair[0].demand_rate, pair[1].demand_rate);
            assert_eq!(pair[0].capacity_ratio, pair[1].capacity_ratio);
            assert_eq!(pair[0].transit_days, pair[1].transit_days);
        }
        assert!(regimes.iter().enumerate().all(|(i, r)| r.id == i && r.validate().is_ok()));
    }

    #[test]
    fn corpus_covers_every_lane_once() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.num_lanes(), 540);
        let cfg = small_config();
        let regimes = default_regimes();
        let corpus = generate_corpus(&cfg, &regimes).unwrap();
        assert_eq!(corpus.lanes.len(), cfg.num_lanes());
        let keys: alloc::collections::BTreeSet<_> = corpus.lanes.iter().map(|l| &l.key).collect();
        assert_eq!(keys.len(), corpus.lanes.len());
        for (lane, m) in corpus.lanes.iter().zip(&corpus.manifest) {
            assert_eq!(lane.key, m.key);
            assert_eq!(lane.event_day, m.true_event_day);
            assert_eq!(m.regime_name, regimes[m.regime].name);
            lane.validate().unwrap();
        }
        let robust = corpus.manifest.iter().filter(|m| m.fragility == Fragility::Robust).count();
        assert_eq!(robust * 2, corpus.manifest.len());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = small_config();
        let a = generate(&cfg, &default_regimes()).unwrap();
        let b = generate(&cfg, &default_regimes()).unwrap();
        assert_eq!(a, b);
        let c = generate(&GeneratorConfig { seed: 8, ..cfg }, &default_regimes()).unwrap();
        assert_ne!(a.lanes, c.lanes);
    }

    #[test]
    fn zero_censoring_leaves_the_corpus_alone() {
        let raw = generate_corpus(&small_config(), &default_regimes()).unwrap();
        assert_eq!(apply_censoring(&raw, 0.0, 1, DEFAULT_STRIDE).unwrap(), raw);
    }

    #[test]
    fn default_corpus_hits_the_censoring_target() {
        let corpus = generate(&GeneratorConfig::default(), &default_regimes()).unwrap();
        let f = corpus_censored_fraction(&corpus.lanes, DEFAULT_STRIDE);
        assert!((f - 0.25).abs() <= 0.03, "{f}");
        for (lane, m) in corpus.lanes.iter().zip(&corpus.manifest) {
            if m.censored {
                assert!(lane.event_day.is_none());
                assert!(m.true_event_day.is_some_and(|e| e > lane.last_observed_day));
            }
        }
    }

    #[test]
    fn infeasible_censoring_is_an_error() {
        // Shortfalls on day 29 leave one event window per lane and no room
        // to truncate.
        let mut raw = generate_corpus(&small_config(), &default_regimes()).unwrap();
        for lane in &mut raw.lanes {
            lane.event_day = Some(WINDOW_LEN as u32 + 1);
        }
        assert!(matches!(apply_censoring(&raw, 0.1, 1, DEFAULT_STRIDE), Err(Error::Config(_))));
    }

    #[test]
    fn backlog_relates_to_time_to_shortfall_with_opposite_signs() {
        let regimes = default_regimes();
        let raw = generate_corpus(&GeneratorConfig::default(), &regimes).unwrap();
        let cors = backlog_correlations(&raw, &regimes, DEFAULT_STRIDE);
        let r: Vec<f64> = cors.iter().map(|c| c.spearman.unwrap()).collect();
        assert!(r.iter().any(|&x| x > 0.3), "{cors:?}");
        assert!(r.iter().any(|&x| x < -0.3), "{cors:?}");
        for (c, x) in cors.iter().zip(&r) {
            assert_eq!(x.signum() as i8, -regimes[c.regime].fragility.sign(), "{cors:?}");
        }
    }

    #[test]
    fn parametric_constant_hazard() {
        // Logit −2.197 is a per-step hazard of 0.1: P(T ≤ 3) = 1 − 0.9³.
        let theta = alloc::vec![alloc::vec![-2.197224577, 0.0]; 3];
        let (xs, outcomes) = generate_parametric_survival(20_000, &theta, 3).unwrap();
        assert!(xs.iter().all(|x| x.len() == 1 && (-1.0..=1.0).contains(&x[0])));
        let p = outcomes.iter().filter(|o| o.event).count() as f64 / outcomes.len() as f64;
        assert!((p - 0.271).abs() < 0.01, "{p}");
        let theta = alloc::vec![alloc::vec![-40.0, 0.0]; 3];
        let (_, outcomes) = generate_parametric_survival(100, &theta, 3).unwrap();
        assert!(outcomes.iter().all(|o| !o.event && o.t == 3));
        assert!(generate_parametric_survival(10, &[alloc::vec![0.0], alloc::vec![0.0, 1.0]], 0).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]), None);
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 0.948_683_298_050_513_8).abs() < 1e-12, "{r}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn flows_are_non_negative(seed in any::<u64>(), r in 0usize..8) {
            let regime = &default_regimes()[r];
            let sim = simulate_lane(key(), regime, 365, seed, "2022-01-03").unwrap();
            let t = &sim.trace;
            prop_assert!(t.initial_boh >= 0);
            prop_assert!(t.boh.iter().chain(&t.receipts).chain(&t.usage).chain(&t.backlog).all(|&x| x >= 0));
            prop_assert!(sim.series.features.iter().flatten().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!(sim.series.validate().is_ok());
        }

        #[test]
        fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), r in 0usize..8) {
            let regime = &default_regimes()[r];
            let a = simulate_lane(key(), regime, 120, seed, "2022-01-03").unwrap();
            let b = simulate_lane(key(), regime, 120, seed, "2022-01-03").unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
