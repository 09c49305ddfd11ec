//! Central finite-difference verification of analytic gradients.

use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Default relative step for the central differences.
pub const DEFAULT_REL_STEP: f64 = 1e-3;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor, in store order.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, ABS_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares the tape gradient of `loss` against central differences for
/// every element of every tensor in `store`. The step for a value `v` is
/// `rel_step * max(|v|, 1)`. `store` is restored before returning.
pub fn grad_check<F>(store: &mut ParamStore, rel_step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<Var>,
{
    let mut graph = Graph::new();
    let l = loss(store, &mut graph)?;
    let mut grads = store.zeros_like();
    graph.backward_into(l, &mut grads);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = loss(store, &mut g)?;
        Ok(g.value(v).get(0, 0))
    };

    let mut per_tensor = Vec::new();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let mut tensor_worst = 0.0f64;
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            let h = rel_step * orig.abs().max(1.0);
            store.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).data()[k];
            tensor_worst = tensor_worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
        worst = worst.max(tensor_worst);
        per_tensor.push((store.name(id).to_owned(), tensor_worst));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        per_tensor,
        checked,
    })
}
