//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Relative error with a small absolute floor so that two near-zero
/// gradients are not compared at machine precision.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Compares the tape gradient of `loss_fn` for every parameter entry with
/// `(L(w + h) - L(w - h)) / 2h`.
pub fn check<F>(store: &mut ParamStore, step: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for id in ids {
        for i in 0..store.get(id).value.len() {
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original - step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
