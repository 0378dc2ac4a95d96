use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over the checked coordinates.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates left out because the difference stencil crossed a kink.
    pub skipped: usize,
    pub pass: bool,
}

fn eval_scalar<F>(f: &F, point: Tensor<f64>, requires_grad: bool) -> Result<(Tape<f64>, Var, Var)>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.with_requires_grad(requires_grad));
    let y = f(&mut tape, x)?;
    let value = tape.value(y);
    if value.len() != 1 {
        return Err(Error::Graph(format!(
            "grad_check needs a scalar function, got shape {:?}",
            value.shape()
        )));
    }
    value.check_finite("grad_check function value")?;
    Ok((tape, x, y))
}

/// Central-difference estimate of `df/dx` at the listed flat indices.
pub fn numeric_gradient<F>(
    f: &F,
    point: &Tensor<f64>,
    eps: f64,
    indices: &[usize],
) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    indices
        .iter()
        .map(|&i| {
            let mut plus = point.clone();
            plus.data_mut()[i] += eps;
            let mut minus = point.clone();
            minus.data_mut()[i] -= eps;
            let (tp, _, yp) = eval_scalar(f, plus, false)?;
            let (tm, _, ym) = eval_scalar(f, minus, false)?;
            let d = (tp.value(yp).data()[0] - tm.value(ym).data()[0]) / (2.0 * eps);
            if d.is_finite() {
                Ok(d)
            } else {
                Err(Error::NonFinite(format!("finite difference at index {i}")))
            }
        })
        .collect()
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: 0,
        checked: analytic.len(),
        skipped: 0,
        pass: true,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(1e-8);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err || !rel.is_finite() {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    report.pass = report.max_rel_err < tol;
    report
}

/// Checks every coordinate of `point`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..point.len()).collect();
    grad_check_at(f, point, eps, tol, &all)
}

/// Checks only the listed flat indices of `point`.
pub fn grad_check_at<F>(
    f: F,
    point: &Tensor<f64>,
    eps: f64,
    tol: f64,
    indices: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let analytic = analytic_gradient(&f, point)?;
    let picked: Vec<f64> = indices.iter().map(|&i| analytic[i]).collect();
    let numeric = numeric_gradient(&f, point, eps, indices)?;
    let mut report = compare_gradients(&picked, &numeric, tol);
    report.worst_index = indices.get(report.worst_index).copied().unwrap_or(0);
    Ok(report)
}

/// Like [`grad_check_at`], but leaves out coordinates whose `x +- eps`
/// evaluations change a relu sign or a max-pool winner relative to `x`.
/// Central differences are meaningless across such kinks.
pub fn grad_check_smooth<F>(
    f: F,
    point: &Tensor<f64>,
    eps: f64,
    tol: f64,
    indices: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let analytic = analytic_gradient(&f, point)?;
    let (centre, _, _) = eval_scalar(&f, point.clone(), false)?;
    let pattern = centre.activation_pattern();
    let (mut kept, mut picked, mut numeric) = (Vec::new(), Vec::new(), Vec::new());
    for &i in indices {
        let mut values = [0.0; 2];
        let mut smooth = true;
        for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut p = point.clone();
            p.data_mut()[i] += sign * eps;
            let (tape, _, y) = eval_scalar(&f, p, false)?;
            smooth &= tape.activation_pattern() == pattern;
            values[slot] = tape.value(y).data()[0];
        }
        if smooth {
            kept.push(i);
            picked.push(analytic[i]);
            numeric.push((values[0] - values[1]) / (2.0 * eps));
        }
    }
    let mut report = compare_gradients(&picked, &numeric, tol);
    report.worst_index = kept.get(report.worst_index).copied().unwrap_or(0);
    report.skipped = indices.len() - kept.len();
    Ok(report)
}

/// Gradient of `f` at `point` by reverse-mode differentiation.
pub fn analytic_gradient<F>(f: &F, point: &Tensor<f64>) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let (mut tape, x, y) = eval_scalar(f, point.clone(), true)?;
    tape.backward(y)?;
    Ok(tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::PoolKind;

    fn sum_sq(tape: &mut Tape<f64>, x: Var) -> Result<Var> {
        let sq = tape.mul(x, x)?;
        tape.sum(sq)
    }

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::new([4], vec![0.3, -1.2, 2.0, 5.5]).unwrap();
        let r = grad_check(sum_sq, &p, 1e-4, 1e-6).unwrap();
        assert!(r.pass && r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn conv_relu_pool_passes() {
        let p = Tensor::from_fn([3, 8, 8], |i| ((i * 7919 % 101) as f64 / 50.0) - 1.0);
        let w = Tensor::from_fn([2, 3, 3, 3], |i| ((i * 31 % 17) as f64 / 8.0) - 1.0);
        let f = move |tape: &mut Tape<f64>, x: Var| {
            let w = tape.constant(w.clone());
            let b = tape.constant(Tensor::new([2], vec![0.1, -0.2])?);
            let y = tape.conv2d(x, w, b, 1, 1)?;
            let r = tape.relu(y)?;
            let g = tape.pool(r, PoolKind::GlobalAvg)?;
            tape.sum(g)
        };
        let r = grad_check(f, &p, 1e-4, 1e-3).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let p = Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap();
        let analytic: Vec<f64> = analytic_gradient(&sum_sq, &p)
            .unwrap()
            .iter()
            .map(|g| g * 1.1)
            .collect();
        let numeric = numeric_gradient(&sum_sq, &p, 1e-4, &[0, 1, 2]).unwrap();
        assert!(!compare_gradients(&analytic, &numeric, 1e-3).pass);
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let p = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        assert!(grad_check(|t: &mut Tape<f64>, x: Var| t.scale(x, 2.0), &p, 1e-4, 1e-3).is_err());
    }

    #[test]
    fn smooth_check_skips_kink_crossings() {
        let relu_sum = |tape: &mut Tape<f64>, x: Var| {
            let r = tape.relu(x)?;
            tape.sum(r)
        };
        let p = Tensor::new([3], vec![5e-5, 1.0, -2.0]).unwrap();
        let plain = grad_check(relu_sum, &p, 1e-4, 1e-3).unwrap();
        assert!(!plain.pass);
        let r = grad_check_smooth(relu_sum, &p, 1e-4, 1e-3, &[0, 1, 2]).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!((r.checked, r.skipped), (2, 1));
    }
}
