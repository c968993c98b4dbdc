use alloc::string::String;
use alloc::vec::Vec;

use super::{ParameterStore, Tape, Var};
use crate::math;
use crate::Result;

/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is near zero are judged on absolute error instead.
pub const DEFAULT_REL_FLOOR: f64 = 1e-3;

/// Worst coordinate of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences `(f(θ+h) − f(θ−h)) / 2h`, coordinate by coordinate, over every
/// parameter in `store`. Relative error is `|a − n| / max(|a|, |n|, 1e-3)`.
pub fn grad_check<F>(store: &mut ParameterStore, f: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParameterStore) -> Result<Var>,
{
    grad_check_with_floor(store, f, step, tolerance, DEFAULT_REL_FLOOR)
}

pub fn grad_check_with_floor<F>(
    store: &mut ParameterStore,
    mut f: F,
    step: f64,
    tolerance: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParameterStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward_into(loss, store)?;
    drop(tape);

    let mut eval = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        Ok(tape.value(out).data()[0])
    };

    let mut params = Vec::with_capacity(store.len());
    let mut worst = 0.0f64;
    for idx in 0..store.len() {
        let analytic_grad = store.params_mut()[idx].grad.clone();
        let mut check = ParamCheck {
            name: store.params_mut()[idx].name.clone(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..analytic_grad.len() {
            let orig = store.params_mut()[idx].value.data()[i];
            store.params_mut()[idx].value.data_mut()[i] = orig + step;
            let plus = eval(store)?;
            store.params_mut()[idx].value.data_mut()[i] = orig - step;
            let minus = eval(store)?;
            store.params_mut()[idx].value.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = analytic_grad.data()[i];
            let abs_err = math::abs(analytic - numeric);
            let rel = abs_err / math::abs(analytic).max(math::abs(numeric)).max(floor);
            check.max_abs_error = check.max_abs_error.max(abs_err);
            if rel > check.max_rel_error || i == 0 {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        worst = worst.max(check.max_rel_error);
        params.push(check);
    }
    Ok(GradCheckReport { params, max_rel_error: worst, step, tolerance, passed: worst < tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use alloc::vec;

    #[test]
    fn quadratic_is_exact() {
        let mut s = ParameterStore::new();
        let x = s.add("x", Tensor::vector(vec![0.3, -1.7, 2.5])).unwrap();
        let r = grad_check(
            &mut s,
            |tape, s| {
                let v = tape.param(s, x);
                let sq = tape.mul(v, v)?;
                Ok(tape.sum(sq))
            },
            1e-6,
            1e-9,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        // d/dx Σx² = 2x
        assert_eq!(s.grad(x).data(), &[0.6, -3.4, 5.0]);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut s = ParameterStore::new();
        let x = s.add("x", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let r = grad_check(&mut s, |tape, _| Ok(tape.input(Tensor::scalar(4.0))), 1e-6, 1e-9).unwrap();
        assert!(r.passed);
        assert_eq!(s.grad(x).data(), &[0.0, 0.0]);
        assert_eq!(r.params[0].max_abs_error, 0.0);
    }

    #[test]
    fn coarse_step_fails_check() {
        // A huge step makes the central difference inaccurate.
        let mut s = ParameterStore::new();
        let x = s.add("x", Tensor::vector(vec![0.5])).unwrap();
        let r = grad_check(
            &mut s,
            |tape, s| {
                let v = tape.param(s, x);
                let t = tape.tanh(v);
                let c = tape.mul(t, t)?;
                let q = tape.mul(c, c)?;
                Ok(tape.sum(q))
            },
            0.3,
            1e-9,
        )
        .unwrap();
        assert!(!r.passed);
    }
}
