use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport<F> {
    /// Worst `|a − n| / max(1e-8, |a| + |n|)` over all components.
    pub max_rel_error: F,
    /// Parameter name and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub analytic: F,
    pub numeric: F,
    pub checked: usize,
}

/// Compares analytic gradients with central differences for every parameter component.
///
/// `loss` must return the scalar loss and *add* its analytic gradient into the
/// parameters' `grad` accumulators. Accumulators are zeroed before every call.
pub fn grad_check<F, M, L>(model: &mut M, mut loss: L, eps: F) -> Result<GradCheckReport<F>>
where
    F: Scalar,
    M: ParamStore<F>,
    L: FnMut(&mut M) -> Result<F>,
{
    if eps.is_nan() || eps <= F::zero() {
        return Err(Error::invalid("grad_check eps must be positive"));
    }
    let mut eval = |m: &mut M| -> Result<F> {
        m.zero_grad();
        let l = loss(m)?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {l}")));
        }
        Ok(l)
    };

    eval(model)?;
    let analytic: Vec<Vec<F>> = model.params().iter().map(|p| p.grad.clone()).collect();

    let floor = F::lit(1e-8);
    let two = F::lit(2.0);
    let mut report = GradCheckReport {
        max_rel_error: F::zero(),
        worst: None,
        analytic: F::zero(),
        numeric: F::zero(),
        checked: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].values[k];
            model.params_mut()[pi].values[k] = orig + eps;
            let plus = eval(model);
            model.params_mut()[pi].values[k] = orig - eps;
            let minus = eval(model);
            model.params_mut()[pi].values[k] = orig;
            let n = (plus? - minus?) / (two * eps);
            let rel = (a - n).abs() / floor.max(a.abs() + n.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((model.params()[pi].name.clone(), k));
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    model.zero_grad();
    Ok(report)
}
