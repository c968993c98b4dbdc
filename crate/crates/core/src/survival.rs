//! Discrete-time survival algebra on a daily grid.
//!
//! Times are whole days `1..=H`. A hazard curve holds the conditional event
//! probability for each day, the survival curve is the running product of
//! `1 - h`, and the mass function is `h(k) * S(k - 1)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Lower clamp applied to every hazard before a logarithm is taken.
pub const HAZARD_FLOOR: f64 = 1e-7;
/// Upper clamp applied to every hazard before a logarithm is taken.
pub const HAZARD_CEIL: f64 = 1.0 - 1e-7;

/// Default horizon: one fiscal year of daily steps plus the "no shortfall" token day.
pub const DEFAULT_HORIZON: usize = 366;

#[inline]
pub fn clamp_hazard(h: f64) -> f64 {
    h.clamp(HAZARD_FLOOR, HAZARD_CEIL)
}

/// The discrete support `1..=horizon`; `index(t)` is the identity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    horizon: usize,
}

impl TimeGrid {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("time grid horizon must be at least 1"));
        }
        Ok(Self { horizon })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// One-based grid index of day `t`.
    pub fn index(&self, t: u32) -> Option<usize> {
        let t = t as usize;
        (1..=self.horizon).contains(&t).then_some(t)
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { horizon: DEFAULT_HORIZON }
    }
}

/// Observed time `t = min(T*, C*)` and event indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservedOutcome {
    pub t: u32,
    pub event: bool,
}

impl ObservedOutcome {
    pub fn new(t: u32, event: bool) -> Result<Self> {
        if t == 0 {
            return Err(Error::invalid("observed time must be at least 1"));
        }
        Ok(Self { t, event })
    }

    pub fn event(t: u32) -> Self {
        Self { t, event: true }
    }

    pub fn censored(t: u32) -> Self {
        Self { t, event: false }
    }

    /// Re-express the outcome on a shorter horizon: anything past `horizon`
    /// becomes "survived through the horizon".
    pub fn truncate(self, horizon: usize) -> Self {
        if self.t as usize > horizon {
            Self { t: horizon as u32, event: false }
        } else {
            self
        }
    }

    fn check(&self, horizon: usize) -> Result<usize> {
        let t = self.t as usize;
        if t == 0 || t > horizon {
            return Err(Error::invalid(format!("observed time {} outside grid 1..={}", self.t, horizon)));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HazardCurve(Vec<f64>);

impl HazardCurve {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_hazards(&values)?;
        Ok(Self(values))
    }

    /// Logistic link with the clamp policy applied.
    pub fn from_logits(logits: &[f64]) -> Self {
        Self(logits.iter().map(|&phi| clamp_hazard(math::sigmoid(phi))).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn survival(&self) -> SurvivalCurve {
        survival_from_hazard(&self.0).expect("hazard curve validated on construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurvivalCurve(Vec<f64>);

impl SurvivalCurve {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("survival curve is empty"));
        }
        let mut prev = 1.0;
        for (k, &s) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&s) || s > prev {
                return Err(Error::invalid(format!(
                    "survival value {s} at step {} breaks monotonicity or bounds",
                    k + 1
                )));
            }
            prev = s;
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn horizon(&self) -> usize {
        self.0.len()
    }

    /// `S(τ_k)` with the convention `S(τ_0) = 1`.
    pub fn at(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.0[k - 1]
        }
    }
}

fn check_hazards(h: &[f64]) -> Result<()> {
    if h.is_empty() {
        return Err(Error::invalid("hazard curve is empty"));
    }
    if let Some((k, v)) = h.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("hazard {v} at step {} outside [0, 1]", k + 1)));
    }
    Ok(())
}

/// `S(τ_j) = Π_{i ≤ j} (1 - h(τ_i))`.
pub fn survival_from_hazard(h: &[f64]) -> Result<SurvivalCurve> {
    check_hazards(h)?;
    let mut s = 1.0;
    let values = h
        .iter()
        .map(|&hk| {
            s *= 1.0 - hk;
            s
        })
        .collect();
    Ok(SurvivalCurve(values))
}

/// `f(τ_j) = h(τ_j) S(τ_{j-1})`.
pub fn pmf_from_hazard(h: &[f64]) -> Result<Vec<f64>> {
    check_hazards(h)?;
    let mut s_prev = 1.0;
    Ok(h.iter()
        .map(|&hk| {
            let f = hk * s_prev;
            s_prev *= 1.0 - hk;
            f
        })
        .collect())
}

/// Per-sample negative log-likelihood of one outcome under one hazard curve,
/// with hazards clamped to `[HAZARD_FLOOR, HAZARD_CEIL]`.
pub fn sample_nll(h: &[f64], outcome: ObservedOutcome) -> Result<f64> {
    let t = outcome.check(h.len())?;
    Ok(sample_nll_unchecked(h, t, outcome.event))
}

pub(crate) fn sample_nll_unchecked(h: &[f64], t: usize, event: bool) -> f64 {
    let ht = clamp_hazard(h[t - 1]);
    let mut ll = if event { math::ln(ht) } else { math::ln(1.0 - ht) };
    for &hj in &h[..t - 1] {
        ll += math::ln(1.0 - clamp_hazard(hj));
    }
    -ll
}

/// Gradient of [`sample_nll`] with respect to the raw hazard inputs. Entries
/// whose hazard sits outside the clamp window get zero gradient.
pub fn sample_nll_grad(h: &[f64], outcome: ObservedOutcome) -> Result<Vec<f64>> {
    let t = outcome.check(h.len())?;
    let mut grad = vec![0.0; h.len()];
    let inside = |v: f64| (HAZARD_FLOOR..=HAZARD_CEIL).contains(&v);
    for j in 0..t - 1 {
        if inside(h[j]) {
            grad[j] = 1.0 / (1.0 - h[j]);
        }
    }
    let ht = h[t - 1];
    if inside(ht) {
        grad[t - 1] = if outcome.event { -1.0 / ht } else { 1.0 / (1.0 - ht) };
    }
    Ok(grad)
}

/// Summed negative log-likelihood of right-censored outcomes:
///
/// `-Σ_i [ y_i log h(t_i) + (1 - y_i) log(1 - h(t_i)) + Σ_{j < t_i} log(1 - h(τ_j)) ]`
pub fn negative_log_likelihood(hazards: &[HazardCurve], outcomes: &[ObservedOutcome]) -> Result<f64> {
    if hazards.len() != outcomes.len() {
        return Err(Error::invalid(format!("{} hazard curves for {} outcomes", hazards.len(), outcomes.len())));
    }
    hazards.iter().zip(outcomes).try_fold(0.0, |acc, (h, &o)| Ok(acc + sample_nll(h.values(), o)?))
}

/// `H + 1` is the "no shortfall within horizon" token.
pub fn median_survival_time(s: &SurvivalCurve) -> u32 {
    s.values().iter().position(|&v| v <= 0.5).map_or(s.horizon() + 1, |k| k + 1) as u32
}

/// `1 + Σ_{k=1}^{H-1} S(τ_k)`: expected days to event, censored at `H`.
pub fn restricted_mean_survival(s: &SurvivalCurve) -> f64 {
    let v = s.values();
    1.0 + v[..v.len() - 1].iter().sum::<f64>()
}

/// Product-limit estimate on `grid`: per-step hazard is events over at-risk.
pub fn kaplan_meier(outcomes: &[ObservedOutcome], grid: TimeGrid) -> Result<SurvivalCurve> {
    let (events, at_risk) = event_exposure(outcomes, grid)?;
    let hazard: Vec<f64> =
        events.iter().zip(&at_risk).map(|(&d, &n)| if n == 0 { 0.0 } else { d as f64 / n as f64 }).collect();
    survival_from_hazard(&hazard)
}

/// Per-step event counts and at-risk counts.
pub fn event_exposure(outcomes: &[ObservedOutcome], grid: TimeGrid) -> Result<(Vec<usize>, Vec<usize>)> {
    if outcomes.is_empty() {
        return Err(Error::invalid("no outcomes"));
    }
    let horizon = grid.horizon();
    let mut events = vec![0usize; horizon];
    // exits[k]: samples whose last at-risk step is k + 1
    let mut exits = vec![0usize; horizon];
    for o in outcomes {
        let t = o.check(horizon)?;
        exits[t - 1] += 1;
        if o.event {
            events[t - 1] += 1;
        }
    }
    let mut at_risk = vec![0usize; horizon];
    let mut remaining = outcomes.len();
    for k in 0..horizon {
        at_risk[k] = remaining;
        remaining -= exits[k];
    }
    Ok((events, at_risk))
}

/// Coefficients `θ_k` (intercept first) of the linear logistic hazard.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearHazardParams {
    /// Row `k` holds `[intercept, β_1, ..., β_p]` for day `k + 1`.
    pub theta: Vec<Vec<f64>>,
}

impl LinearHazardParams {
    pub fn covariate_dim(&self) -> usize {
        self.theta.first().map_or(0, |row| row.len() - 1)
    }

    pub fn hazard(&self, x: &[f64]) -> HazardCurve {
        HazardCurve(
            self.theta
                .iter()
                .map(|row| {
                    let eta = row[0] + row[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                    clamp_hazard(math::sigmoid(eta))
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub max_iter: usize,
    /// Stop once the largest score component falls below this.
    pub tolerance: f64,
    /// Divergence guard on every coefficient, logit scale.
    pub bound: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { max_iter: 100, tolerance: 1e-10, bound: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHazardFit {
    pub params: LinearHazardParams,
    /// Mean negative log-likelihood at the returned coefficients.
    pub nll: f64,
    /// Steps with no events or no survivors: their maximum-likelihood intercept
    /// is unbounded and was pinned at the divergence guard.
    pub saturated_steps: Vec<usize>,
}

/// Maximize the right-censored log-likelihood under
/// `h(τ_k | x) = σ(θ_k · [1; x])`.
///
/// The log-likelihood separates into one logistic regression per step over
/// the samples still at risk, so each `θ_k` is fitted independently by
/// Newton ascent with step halving.
pub fn fit_linear_logistic_hazard(
    x: &[Vec<f64>],
    outcomes: &[ObservedOutcome],
    grid: TimeGrid,
    settings: FitSettings,
) -> Result<LinearHazardFit> {
    if x.is_empty() || x.len() != outcomes.len() {
        return Err(Error::invalid(format!("{} covariate rows for {} outcomes", x.len(), outcomes.len())));
    }
    let p = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid(format!(
            "covariate row of length {} is ragged or non-finite (expected {p})",
            row.len()
        )));
    }
    let horizon = grid.horizon();
    for o in outcomes {
        o.check(horizon)?;
    }

    let dim = p + 1;
    let mut theta = Vec::with_capacity(horizon);
    let mut saturated = Vec::new();
    let mut total_ll = 0.0;
    let mut design = Vec::new();
    let mut labels = Vec::new();
    for k in 1..=horizon {
        design.clear();
        labels.clear();
        for (row, o) in x.iter().zip(outcomes) {
            let t = o.t as usize;
            if t >= k {
                design.push(row.as_slice());
                labels.push(t == k && o.event);
            }
        }
        let events = labels.iter().filter(|&&y| y).count();
        let mut coef = vec![0.0; dim];
        if design.is_empty() {
            // Nobody at risk: no information, leave the step at h = 0.5.
            theta.push(coef);
            continue;
        }
        if events == 0 || events == labels.len() {
            coef[0] = if events == 0 { -settings.bound } else { settings.bound };
            saturated.push(k);
        } else {
            newton_logistic(&design, &labels, &mut coef, settings)
                .map_err(|_| Error::NonConvergence { step: k, bound: settings.bound })?;
        }
        total_ll += logistic_ll(&design, &labels, &coef);
        theta.push(coef);
    }
    Ok(LinearHazardFit {
        params: LinearHazardParams { theta },
        nll: -total_ll / x.len() as f64,
        saturated_steps: saturated,
    })
}

fn linear_predictor(row: &[f64], coef: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(row).map(|(b, v)| b * v).sum::<f64>()
}

fn logistic_ll(design: &[&[f64]], labels: &[bool], coef: &[f64]) -> f64 {
    design
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let h = clamp_hazard(math::sigmoid(linear_predictor(row, coef)));
            if y {
                math::ln(h)
            } else {
                math::ln(1.0 - h)
            }
        })
        .sum()
}

fn newton_logistic(
    design: &[&[f64]],
    labels: &[bool],
    coef: &mut [f64],
    settings: FitSettings,
) -> core::result::Result<(), ()> {
    let dim = coef.len();
    let mut score = vec![0.0; dim];
    let mut info = vec![0.0; dim * dim];
    let mut ll = logistic_ll(design, labels, coef);
    for _ in 0..settings.max_iter {
        score.iter_mut().for_each(|v| *v = 0.0);
        info.iter_mut().for_each(|v| *v = 0.0);
        for (row, &y) in design.iter().zip(labels) {
            let h = math::sigmoid(linear_predictor(row, coef));
            let resid = if y { 1.0 - h } else { -h };
            let w = h * (1.0 - h);
            for a in 0..dim {
                let xa = if a == 0 { 1.0 } else { row[a - 1] };
                score[a] += resid * xa;
                for b in 0..dim {
                    let xb = if b == 0 { 1.0 } else { row[b - 1] };
                    info[a * dim + b] += w * xa * xb;
                }
            }
        }
        let max_score = score.iter().fold(0.0f64, |m, s| m.max(math::abs(*s)));
        if max_score < settings.tolerance * design.len() as f64 {
            return Ok(());
        }
        let step = solve_spd(&mut info, &score, dim).ok_or(())?;
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = coef.iter().zip(&step).map(|(c, s)| c + scale * s).collect();
            if trial.iter().any(|c| math::abs(*c) > settings.bound) {
                return Err(());
            }
            let trial_ll = logistic_ll(design, labels, &trial);
            if trial_ll >= ll - 1e-12 || scale < 1e-6 {
                coef.copy_from_slice(&trial);
                ll = trial_ll;
                break;
            }
            scale *= 0.5;
        }
    }
    Ok(())
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_spd(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            math::abs(a[i * n + col]).partial_cmp(&math::abs(a[j * n + col])).unwrap_or(core::cmp::Ordering::Equal)
        })?;
        if math::abs(a[pivot * n + col]) < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(pivot * n + c, col * n + c);
            }
            rhs.swap(pivot, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= a[r * n + c] * x[c];
        }
        x[r] = acc / a[r * n + r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn survival_examples() {
        assert_eq!(survival_from_hazard(&[0.5]).unwrap().values(), &[0.5]);
        assert_eq!(survival_from_hazard(&[0.0, 0.0, 0.0]).unwrap().values(), &[1.0, 1.0, 1.0]);
        let s = survival_from_hazard(&[0.2, 0.2, 0.2]).unwrap();
        for (got, want) in s.values().iter().zip([0.8, 0.64, 0.512]) {
            assert!(close(*got, want, 1e-15));
        }
        assert!(survival_from_hazard(&[]).is_err());
        assert!(survival_from_hazard(&[1.2]).is_err());
    }

    #[test]
    fn pmf_examples() {
        assert_eq!(pmf_from_hazard(&[0.5, 0.5]).unwrap(), vec![0.5, 0.25]);
        assert_eq!(pmf_from_hazard(&[1.0]).unwrap(), vec![1.0]);
        // Oracle: cumulative product of survivors, then mass plus residual.
        let h = [0.2, 0.2, 0.2];
        let f = pmf_from_hazard(&h).unwrap();
        let mut alive = 1.0;
        for (k, hk) in h.iter().enumerate() {
            assert!(close(f[k], alive * hk, 1e-15));
            alive *= 1.0 - hk;
        }
        assert!(close(alive, 0.512, 1e-15));
        assert!(close(f.iter().sum::<f64>() + alive, 1.0, 1e-15));
        for (got, want) in f.iter().zip([0.2, 0.16, 0.128]) {
            assert!(close(*got, want, 1e-15));
        }
    }

    #[test]
    fn nll_examples() {
        let one = |h: Vec<f64>, o| negative_log_likelihood(&[HazardCurve::new(h).unwrap()], &[o]).unwrap();
        assert!(close(one(vec![0.5], ObservedOutcome::event(1)), core::f64::consts::LN_2, 1e-12));
        assert!(close(one(vec![0.5, 0.5], ObservedOutcome::censored(2)), 2.0 * core::f64::consts::LN_2, 1e-12));
        let want = -(0.1f64.ln() + 2.0 * 0.9f64.ln());
        assert!(close(one(vec![0.1; 3], ObservedOutcome::event(3)), want, 1e-12));
        assert!(close(want, 2.513306, 1e-6));
    }

    #[test]
    fn nll_boundary_hazards_stay_finite() {
        let h = HazardCurve::new(vec![1.0, 0.0]).unwrap();
        let v = negative_log_likelihood(core::slice::from_ref(&h), &[ObservedOutcome::censored(2)]).unwrap();
        assert!(v.is_finite());
        let v = negative_log_likelihood(&[h], &[ObservedOutcome::event(2)]).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn nll_rejects_bad_inputs() {
        let h = HazardCurve::new(vec![0.5, 0.5]).unwrap();
        assert!(negative_log_likelihood(core::slice::from_ref(&h), &[]).is_err());
        assert!(negative_log_likelihood(&[h], &[ObservedOutcome::event(3)]).is_err());
    }

    #[test]
    fn median_examples() {
        let s = |v: Vec<f64>| SurvivalCurve::new(v).unwrap();
        assert_eq!(median_survival_time(&s(vec![0.9, 0.4, 0.1])), 2);
        assert_eq!(median_survival_time(&s(vec![0.9, 0.8, 0.7])), 4);
        let curve = survival_from_hazard(&[0.2; 5]).unwrap();
        // 0.8^3 = 0.512 > 0.5, 0.8^4 = 0.4096 <= 0.5
        assert_eq!(median_survival_time(&curve), 4);
    }

    #[test]
    fn rmst_examples() {
        let s = |v: Vec<f64>| SurvivalCurve::new(v).unwrap();
        assert_eq!(restricted_mean_survival(&s(vec![1.0; 7])), 7.0);
        assert_eq!(restricted_mean_survival(&s(vec![0.0; 7])), 1.0);
        assert_eq!(restricted_mean_survival(&s(vec![0.5, 0.25])), 1.5);
    }

    #[test]
    fn kaplan_meier_examples() {
        let grid = TimeGrid::new(3).unwrap();
        let all_early = vec![ObservedOutcome::event(1); 4];
        assert_eq!(kaplan_meier(&all_early, grid).unwrap().values(), &[0.0; 3]);
        let none = vec![ObservedOutcome::censored(3); 4];
        assert_eq!(kaplan_meier(&none, grid).unwrap().values(), &[1.0; 3]);
    }

    #[test]
    fn kaplan_meier_mixed_matches_hand_enumeration() {
        // t: 1e 2c 2e 3e 3c 4c
        let outcomes = [
            ObservedOutcome::event(1),
            ObservedOutcome::censored(2),
            ObservedOutcome::event(2),
            ObservedOutcome::event(3),
            ObservedOutcome::censored(3),
            ObservedOutcome::censored(4),
        ];
        let grid = TimeGrid::new(4).unwrap();
        let km = kaplan_meier(&outcomes, grid).unwrap();
        // Brute-force at-risk counting.
        let mut s = 1.0;
        let mut want = vec![];
        for k in 1..=4u32 {
            let n = outcomes.iter().filter(|o| o.t >= k).count() as f64;
            let d = outcomes.iter().filter(|o| o.t == k && o.event).count() as f64;
            s *= 1.0 - d / n;
            want.push(s);
        }
        // By hand: at risk 6, 5, 3, 1 with 1, 1, 1, 0 events.
        let hand = [5.0 / 6.0, 2.0 / 3.0, 4.0 / 9.0, 4.0 / 9.0];
        for k in 0..4 {
            assert!(close(km.values()[k], want[k], 1e-15));
            assert!(close(km.values()[k], hand[k], 1e-15));
        }
    }

    #[test]
    fn intercept_only_fit_matches_occurrence_exposure() {
        let x = vec![vec![]; 4];
        let outcomes = [
            ObservedOutcome::event(1),
            ObservedOutcome::event(1),
            ObservedOutcome::censored(1),
            ObservedOutcome::censored(1),
        ];
        let fit = fit_linear_logistic_hazard(&x, &outcomes, TimeGrid::new(1).unwrap(), FitSettings::default()).unwrap();
        assert!(fit.params.theta[0][0].abs() < 1e-9);
        assert!(close(fit.params.hazard(&[]).values()[0], 0.5, 1e-9));
    }

    #[test]
    fn all_censored_fit_pins_intercept_at_guard() {
        let x = vec![vec![]; 5];
        let outcomes = vec![ObservedOutcome::censored(3); 5];
        let fit = fit_linear_logistic_hazard(&x, &outcomes, TimeGrid::new(3).unwrap(), FitSettings::default()).unwrap();
        assert_eq!(fit.saturated_steps, vec![1, 2, 3]);
        for h in fit.params.hazard(&[]).values() {
            assert!(*h < 1e-6);
        }
    }

    #[test]
    fn separable_covariate_is_flagged_as_divergent() {
        // Events exactly when x > 0: the slope runs off to infinity.
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 9.5]).collect();
        let outcomes: Vec<_> = x
            .iter()
            .map(|r| if r[0] > 0.0 { ObservedOutcome::event(1) } else { ObservedOutcome::censored(1) })
            .collect();
        let err =
            fit_linear_logistic_hazard(&x, &outcomes, TimeGrid::new(1).unwrap(), FitSettings::default()).unwrap_err();
        assert_eq!(err, Error::NonConvergence { step: 1, bound: 15.0 });
    }

    fn hazard_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, 1..max_len)
    }

    proptest! {
        #[test]
        fn survival_is_monotone_and_bounded(h in hazard_vec(60)) {
            let s = survival_from_hazard(&h).unwrap();
            let mut prev = 1.0;
            for &v in s.values() {
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(v <= prev);
                prev = v;
            }
        }

        #[test]
        fn pmf_plus_residual_is_one(h in hazard_vec(60)) {
            let f = pmf_from_hazard(&h).unwrap();
            let s = survival_from_hazard(&h).unwrap();
            let total = f.iter().sum::<f64>() + s.values()[h.len() - 1];
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn kaplan_meier_equals_ratio_hazards(
            raw in prop::collection::vec((1u32..=12, any::<bool>()), 1..40)
        ) {
            let outcomes: Vec<_> = raw.iter().map(|&(t, e)| ObservedOutcome { t, event: e }).collect();
            let grid = TimeGrid::new(12).unwrap();
            let (d, n) = event_exposure(&outcomes, grid).unwrap();
            let ratio: Vec<f64> = d.iter().zip(&n)
                .map(|(&d, &n)| if n == 0 { 0.0 } else { d as f64 / n as f64 })
                .collect();
            prop_assert_eq!(
                kaplan_meier(&outcomes, grid).unwrap(),
                survival_from_hazard(&ratio).unwrap()
            );
        }

        #[test]
        fn nll_gradient_matches_central_differences(
            h in prop::collection::vec(0.05f64..0.95, 2..20),
            pick in 0usize..1000,
            event in any::<bool>(),
        ) {
            let t = (pick % h.len()) as u32 + 1;
            let o = ObservedOutcome { t, event };
            let grad = sample_nll_grad(&h, o).unwrap();
            let step = 1e-6;
            for j in 0..h.len() {
                let mut up = h.clone();
                let mut dn = h.clone();
                up[j] += step;
                dn[j] -= step;
                let fd = (sample_nll(&up, o).unwrap() - sample_nll(&dn, o).unwrap()) / (2.0 * step);
                let rel = (fd - grad[j]).abs() / grad[j].abs().max(fd.abs()).max(1e-3);
                prop_assert!(rel < 1e-6, "step {j}: fd {fd} analytic {}", grad[j]);
            }
        }
    }
}
