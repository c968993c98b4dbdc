//! Shapley attributions of one prediction over window coordinates.
//!
//! A player is a set of input coordinates that switch together from a
//! baseline value to the instance's value. The explained function is any
//! [`ScalarModel`]; [`SurvivalScalar`] wraps the sequence model and reduces
//! its predicted curve to restricted mean survival time or a single hazard.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{lag_of, FEATURE_NAMES, FLAT_LEN, NUM_FEATURES};
use crate::model::{GroupIds, HetSeq2Surv};
use crate::rng;
use crate::survival::{restricted_mean_survival, survival_from_hazard};
use crate::{Error, Result};

/// Largest player count `exact_shapley` enumerates.
pub const MAX_EXACT_PLAYERS: usize = 12;

/// Label of the aggregated remainder row in a waterfall.
pub const OTHER_FEATURES: &str = "all other features";

/// A function of one input vector evaluated in batches.
pub trait ScalarModel {
    fn eval_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Adapts a plain closure.
pub struct FnModel<F>(pub F);

impl<F: Fn(&[f64]) -> f64> ScalarModel for FnModel<F> {
    fn eval_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(inputs.iter().map(|x| (self.0)(x)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Scalar {
    /// Restricted mean survival time: predicted days to shortfall.
    Rmst,
    /// Hazard at 1-based step `k`.
    HazardAt(usize),
}

/// The sequence model seen as a function of a 588-value window, optionally
/// followed by the three group ids as numbers (rounded to the nearest id).
pub struct SurvivalScalar<'a> {
    pub model: &'a HetSeq2Surv,
    pub ids: GroupIds,
    pub scalar: Scalar,
}

impl SurvivalScalar<'_> {
    fn ids_of(&self, x: &[f64]) -> Result<GroupIds> {
        match x.len() {
            FLAT_LEN => Ok(self.ids),
            n if n == FLAT_LEN + 3 => {
                let id = |v: f64| {
                    if v.is_finite() && v >= 0.0 {
                        Ok(crate::math::round(v) as usize)
                    } else {
                        Err(Error::invalid(format!("group id input {v} is not a valid id")))
                    }
                };
                Ok(GroupIds { site: id(x[FLAT_LEN])?, plant: id(x[FLAT_LEN + 1])?, part: id(x[FLAT_LEN + 2])? })
            }
            n => Err(Error::Shape { op: "explain input", left: vec![n], right: vec![FLAT_LEN] }),
        }
    }
}

impl ScalarModel for SurvivalScalar<'_> {
    fn eval_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Scalar::HazardAt(k) = self.scalar {
            if k == 0 || k > self.model.config().horizon {
                return Err(Error::invalid(format!("hazard step {k} outside 1..={}", self.model.config().horizon)));
            }
        }
        let windows: Vec<&[f64]> = inputs.iter().map(|x| &x[..FLAT_LEN.min(x.len())]).collect();
        let ids: Vec<GroupIds> = inputs.iter().map(|x| self.ids_of(x)).collect::<Result<_>>()?;
        let curves = self.model.predict_hazards(&windows, &ids)?;
        curves
            .iter()
            .map(|h| match self.scalar {
                Scalar::Rmst => Ok(restricted_mean_survival(&survival_from_hazard(h.values())?)),
                Scalar::HazardAt(k) => Ok(h.values()[k - 1]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Player {
    pub label: String,
    pub coords: Vec<usize>,
}

/// One player per (feature, lag) coordinate of a flattened window, labelled
/// "feature (N days ago)"; with `include_ids`, three more players for the
/// site, plant and part id slots that follow the window.
pub fn window_players(include_ids: bool) -> Vec<Player> {
    let mut out: Vec<Player> = (0..FLAT_LEN)
        .map(|i| Player { label: lag_label(FEATURE_NAMES[i % NUM_FEATURES], lag_of(i)), coords: vec![i] })
        .collect();
    if include_ids {
        for (j, slot) in ["site id", "plant id", "part id"].iter().enumerate() {
            out.push(Player { label: (*slot).into(), coords: vec![FLAT_LEN + j] });
        }
    }
    out
}

pub fn lag_label(feature: &str, lag: usize) -> String {
    format!("{feature} ({lag} days ago)")
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Contribution {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Estimator {
    Exact,
    Sampling { permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttributionReport {
    /// Model value with every player at its baseline.
    pub base: f64,
    pub prediction: f64,
    /// In player order.
    pub contributions: Vec<Contribution>,
    pub estimator: Estimator,
}

impl AttributionReport {
    /// `prediction − base − Σ contributions`.
    pub fn efficiency_gap(&self) -> f64 {
        self.prediction - self.base - self.contributions.iter().map(|c| c.value).sum::<f64>()
    }
}

/// Checks that the players are disjoint, in range and uniquely labelled, and
/// returns the start point: the input with every player coordinate at its
/// baseline.
fn prepare(input: &[f64], baseline: &[f64], players: &[Player]) -> Result<Vec<f64>> {
    if input.len() != baseline.len() {
        return Err(Error::Shape { op: "shapley baseline", left: vec![input.len()], right: vec![baseline.len()] });
    }
    if players.is_empty() {
        return Err(Error::invalid("no players to attribute to"));
    }
    let mut coords = BTreeSet::new();
    let mut labels = BTreeSet::new();
    for p in players {
        if !labels.insert(p.label.as_str()) {
            return Err(Error::invalid(format!("player label `{}` is not unique", p.label)));
        }
        for &c in &p.coords {
            if c >= input.len() {
                return Err(Error::invalid(format!(
                    "player `{}` uses coordinate {c} of a {}-value input",
                    p.label,
                    input.len()
                )));
            }
            if !coords.insert(c) {
                return Err(Error::invalid(format!("coordinate {c} belongs to two players")));
            }
        }
    }
    let mut start = input.to_vec();
    for &c in &coords {
        start[c] = baseline[c];
    }
    Ok(start)
}

fn switch_on(x: &mut [f64], input: &[f64], player: &Player) {
    for &c in &player.coords {
        x[c] = input[c];
    }
}

/// Monte Carlo Shapley values over random player orderings. Each ordering's
/// marginal changes sum to `prediction − base`, so the estimate is efficient
/// for any number of permutations.
pub fn shapley_sampling(
    model: &dyn ScalarModel,
    input: &[f64],
    baseline: &[f64],
    players: &[Player],
    permutations: usize,
    seed: u64,
) -> Result<AttributionReport> {
    if permutations == 0 {
        return Err(Error::invalid("at least one permutation is needed"));
    }
    let start = prepare(input, baseline, players)?;
    let n = players.len();
    let mut sums = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, "shapley", 0);
    let mut base = 0.0;
    let mut prediction = 0.0;
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut path = Vec::with_capacity(n + 1);
        let mut x = start.clone();
        path.push(x.clone());
        for &p in &order {
            switch_on(&mut x, input, &players[p]);
            path.push(x.clone());
        }
        let values = model.eval_batch(&path)?;
        if values.len() != n + 1 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model returned non-finite or missing values"));
        }
        base = values[0];
        prediction = values[n];
        for (step, &p) in order.iter().enumerate() {
            sums[p] += values[step + 1] - values[step];
        }
    }
    Ok(AttributionReport {
        base,
        prediction,
        contributions: players
            .iter()
            .zip(sums)
            .map(|(p, s)| Contribution { label: p.label.clone(), value: s / permutations as f64 })
            .collect(),
        estimator: Estimator::Sampling { permutations, seed },
    })
}

/// Exact Shapley values by enumerating all `2^n` coalitions.
pub fn exact_shapley(
    model: &dyn ScalarModel,
    input: &[f64],
    baseline: &[f64],
    players: &[Player],
) -> Result<AttributionReport> {
    let n = players.len();
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::invalid(format!("exact enumeration supports at most {MAX_EXACT_PLAYERS} players, got {n}")));
    }
    let start = prepare(input, baseline, players)?;
    let coalitions: Vec<Vec<f64>> = (0..1usize << n)
        .map(|mask| {
            let mut x = start.clone();
            for (j, p) in players.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    switch_on(&mut x, input, p);
                }
            }
            x
        })
        .collect();
    let v = model.eval_batch(&coalitions)?;
    if v.len() != coalitions.len() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("model returned non-finite or missing values"));
    }
    // weight[s] = s! (n − s − 1)! / n!
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();
    let mut phi = vec![0.0; n];
    for mask in 0..1usize << n {
        let s = mask.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if mask & (1 << j) == 0 {
                *p += weight[s] * (v[mask | (1 << j)] - v[mask]);
            }
        }
    }
    Ok(AttributionReport {
        base: v[0],
        prediction: v[(1 << n) - 1],
        contributions: players
            .iter()
            .zip(phi)
            .map(|(p, value)| Contribution { label: p.label.clone(), value })
            .collect(),
        estimator: Estimator::Exact,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WaterfallRow {
    pub label: String,
    pub value: f64,
    /// Running total before and after this row, starting from the base.
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Waterfall {
    pub base: f64,
    pub prediction: f64,
    pub rows: Vec<WaterfallRow>,
}

/// The `top_k` largest contributions by magnitude, then one row holding the
/// sum of the rest (omitted when nothing is left over).
pub fn waterfall_export(report: &AttributionReport, top_k: usize) -> Result<Waterfall> {
    if top_k < 1 {
        return Err(Error::invalid("a waterfall needs at least one row"));
    }
    let mut sorted: Vec<&Contribution> = report.contributions.iter().collect();
    sorted.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));
    let mut items: Vec<(String, f64)> = sorted.iter().take(top_k).map(|c| (c.label.clone(), c.value)).collect();
    if sorted.len() > top_k {
        items.push((OTHER_FEATURES.into(), sorted[top_k..].iter().map(|c| c.value).sum()));
    }
    let mut running = report.base;
    let rows = items
        .into_iter()
        .map(|(label, value)| {
            let start = running;
            running += value;
            WaterfallRow { label, value, start, end: running }
        })
        .collect();
    Ok(Waterfall { base: report.base, prediction: report.prediction, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn singletons(n: usize) -> Vec<Player> {
        (0..n).map(|i| Player { label: format!("x{i}"), coords: vec![i] }).collect()
    }

    fn toy(x: &[f64]) -> f64 {
        x[0] * x[1] + 2.0 * x[2] * x[3] * x[4] + libm::tanh(x[5] - x[6]) + x[7] * x[7] + 0.5 * x[0] * x[7]
    }

    const TOY_INPUT: [f64; 8] = [1.0, 2.0, -1.0, 0.5, 1.5, 0.3, -0.7, 1.2];

    #[test]
    fn hand_computed_three_player_table() {
        let f = FnModel(|x: &[f64]| x[0] * x[1] + 3.0 * x[0] * x[2] + x[2]);
        let r = exact_shapley(&f, &[1.0; 3], &[0.0; 3], &singletons(3)).unwrap();
        let want = [2.0, 0.5, 2.5];
        for (c, w) in r.contributions.iter().zip(want) {
            assert!((c.value - w).abs() < 1e-12, "{} vs {w}", c.value);
        }
        assert_eq!(r.base, 0.0);
        assert_eq!(r.prediction, 5.0);
    }

    #[test]
    fn exact_axioms() {
        // x2 is a dummy.
        let f = FnModel(|x: &[f64]| x[0] * x[1] + x[0] + x[1] + x[3] * x[0]);
        let r = exact_shapley(&f, &[1.0, 1.0, 5.0, 2.0], &[0.0; 4], &singletons(4)).unwrap();
        assert_eq!(r.contributions[2].value, 0.0);
        assert!(r.efficiency_gap().abs() < 1e-12);
        // x0 and x1 are symmetric.
        let f = FnModel(|x: &[f64]| x[0] * x[1] + x[0] + x[1]);
        let r = exact_shapley(&f, &[1.0, 1.0, 5.0], &[0.0; 3], &singletons(3)).unwrap();
        assert_eq!(r.contributions[0].value, r.contributions[1].value);
        assert_eq!(r.contributions[2].value, 0.0);
        assert!(r.efficiency_gap().abs() < 1e-12);
    }

    #[test]
    fn exact_rejects_too_many_players() {
        let f = FnModel(|x: &[f64]| x.iter().sum());
        assert!(exact_shapley(&f, &[0.0; 13], &[0.0; 13], &singletons(13)).is_err());
    }

    #[test]
    fn rejects_bad_players_and_shapes() {
        let f = FnModel(|x: &[f64]| x[0]);
        assert!(shapley_sampling(&f, &[1.0, 2.0], &[0.0], &singletons(1), 5, 0).is_err());
        let overlap =
            vec![Player { label: "a".into(), coords: vec![0] }, Player { label: "b".into(), coords: vec![0] }];
        assert!(shapley_sampling(&f, &[1.0], &[0.0], &overlap, 5, 0).is_err());
        let dup = vec![Player { label: "a".into(), coords: vec![0] }, Player { label: "a".into(), coords: vec![1] }];
        assert!(shapley_sampling(&f, &[1.0, 1.0], &[0.0, 0.0], &dup, 5, 0).is_err());
        assert!(shapley_sampling(&f, &[1.0], &[0.0], &singletons(1), 0, 0).is_err());
    }

    #[test]
    fn linear_model_is_exact_for_any_permutation_count() {
        let w = [0.5, -2.0, 3.0, 1.25];
        let f = FnModel(move |x: &[f64]| x.iter().zip(w).map(|(a, b)| a * b).sum());
        let x = [1.0, 2.0, -1.0, 4.0];
        let b = [0.5, 0.5, 0.5, 0.5];
        for perms in [1, 3, 17] {
            let r = shapley_sampling(&f, &x, &b, &singletons(4), perms, 9).unwrap();
            for (j, c) in r.contributions.iter().enumerate() {
                assert!((c.value - w[j] * (x[j] - b[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_matches_exact_on_eight_player_fixture() {
        let f = FnModel(toy);
        let base = [0.0; 8];
        let exact = exact_shapley(&f, &TOY_INPUT, &base, &singletons(8)).unwrap();
        let scale = (exact.prediction - exact.base).abs();
        let error = |perms: usize, seed: u64| {
            let s = shapley_sampling(&f, &TOY_INPUT, &base, &singletons(8), perms, seed).unwrap();
            assert!(s.efficiency_gap().abs() < 1e-9);
            s.contributions.iter().zip(&exact.contributions).map(|(a, b)| (a.value - b.value).abs()).fold(0.0, f64::max)
        };
        assert!(error(200, 1) < 0.05 * scale);
        // Averaged over seeds, error shrinks as permutations grow.
        let mean = |perms| (0..20).map(|s| error(perms, s)).sum::<f64>() / 20.0;
        let (e10, e50, e200) = (mean(10), mean(50), mean(200));
        assert!(e10 > e50 && e50 > e200, "{e10} {e50} {e200}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let f = FnModel(toy);
        let a = shapley_sampling(&f, &TOY_INPUT, &[0.0; 8], &singletons(8), 20, 4).unwrap();
        let b = shapley_sampling(&f, &TOY_INPUT, &[0.0; 8], &singletons(8), 20, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn waterfall_rows_bridge_base_to_prediction() {
        let f = FnModel(toy);
        let r = exact_shapley(&f, &TOY_INPUT, &[0.0; 8], &singletons(8)).unwrap();
        let w = waterfall_export(&r, 3).unwrap();
        assert_eq!(w.rows.len(), 4);
        assert_eq!(w.rows[3].label, OTHER_FEATURES);
        assert!(w.rows[0].value.abs() >= w.rows[1].value.abs());
        let total: f64 = w.rows.iter().map(|r| r.value).sum();
        assert!((total - (r.prediction - r.base)).abs() < 1e-9);
        assert!((w.rows[3].end - r.prediction).abs() < 1e-9);
        let all = waterfall_export(&r, 8).unwrap();
        assert!(all.rows.iter().all(|r| r.label != OTHER_FEATURES));
        assert!(waterfall_export(&r, 0).is_err());
    }

    #[test]
    fn window_player_labels() {
        let players = window_players(true);
        assert_eq!(players.len(), FLAT_LEN + 3);
        // Day 14 of the window (0-based) is 13 days before its last day.
        let i = 14 * NUM_FEATURES + 7;
        assert_eq!(players[i].label, "qt_behind_release (13 days ago)");
        assert_eq!(players[FLAT_LEN - 1].label, "qt_trans_days_used (0 days ago)");
        assert_eq!(players[26 * NUM_FEATURES].label, "APPC (1 days ago)");
        assert_eq!(players[FLAT_LEN].label, "site id");
    }

    #[test]
    fn explains_the_sequence_model() {
        let cfg = ModelConfig {
            encoder_hidden: 2,
            embed_dims: [2; 3],
            group_mlp_hidden: 2,
            horizon: 10,
            vocab_sizes: [2, 2, 2],
            ..ModelConfig::default()
        };
        let model = HetSeq2Surv::new(&cfg, 1).unwrap();
        let ids = GroupIds { site: 1, plant: 1, part: 1 };
        let f = SurvivalScalar { model: &model, ids, scalar: Scalar::Rmst };
        let x: Vec<f64> = (0..FLAT_LEN).map(|i| (i % 7) as f64 / 7.0).collect();
        let b = vec![0.5; FLAT_LEN];
        let r = shapley_sampling(&f, &x, &b, &window_players(false), 2, 3).unwrap();
        assert!(r.efficiency_gap().abs() < 1e-9);
        let direct = f.eval_batch(core::slice::from_ref(&x)).unwrap()[0];
        assert_eq!(r.prediction, direct);

        let mut xi = x.clone();
        xi.extend([1.0, 1.0, 1.0]);
        let mut bi = b.clone();
        bi.extend([0.0; 3]);
        let r = shapley_sampling(&f, &xi, &bi, &window_players(true), 1, 3).unwrap();
        assert!(r.efficiency_gap().abs() < 1e-9);
        assert_eq!(r.prediction, direct);

        let h = SurvivalScalar { model: &model, ids, scalar: Scalar::HazardAt(11) };
        assert!(h.eval_batch(&[x]).is_err());
    }

    proptest! {
        #[test]
        fn efficiency_holds_for_every_estimator(
            x in proptest::collection::vec(-2.0f64..2.0, 6),
            b in proptest::collection::vec(-2.0f64..2.0, 6),
            perms in 1usize..20,
            seed: u64,
        ) {
            let f = FnModel(|v: &[f64]| v[0] * v[1] - libm::exp(v[2]) + v[3] * v[4] * v[5]);
            let s = shapley_sampling(&f, &x, &b, &singletons(6), perms, seed).unwrap();
            prop_assert!(s.efficiency_gap().abs() < 1e-9);
            let e = exact_shapley(&f, &x, &b, &singletons(6)).unwrap();
            prop_assert!(e.efficiency_gap().abs() < 1e-9);
        }

        #[test]
        fn input_equal_to_baseline_gives_zero(x in proptest::collection::vec(-2.0f64..2.0, 5), seed: u64) {
            let f = FnModel(|v: &[f64]| v.iter().map(|a| a * a).sum::<f64>());
            let s = shapley_sampling(&f, &x, &x, &singletons(5), 4, seed).unwrap();
            prop_assert!(s.contributions.iter().all(|c| c.value == 0.0));
        }
    }
}
