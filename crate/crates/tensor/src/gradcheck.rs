//! Central finite-difference checks against the tape's gradients.

use crate::{Graph, ParamStore, TensorError, Var};

/// Worst disagreement found by [`check_params`].
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward gradients of `loss` with central differences of step
/// `h` on every scalar of every parameter.
///
/// `loss` must build a fresh forward pass on the graph it is handed and
/// return a scalar node; it is called `2 * num_scalars + 1` times.
pub fn check_params<F, E>(
    store: &ParamStore<f64>,
    h: f64,
    floor: f64,
    loss: F,
) -> std::result::Result<GradReport, E>
where
    F: Fn(&Graph<f64>, &ParamStore<f64>) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    let g = Graph::new();
    let out = loss(&g, store)?;
    let grads = g.backward(out)?;
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    grads.accumulate_into(&mut with_grads);

    let eval = |s: &ParamStore<f64>| -> std::result::Result<f64, E> {
        let g = Graph::new();
        let v = loss(&g, s)?;
        let x = g.value(v).item();
        Ok(x)
    };

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = store.clone();
    for (id, p) in store.iter() {
        let analytic = with_grads
            .get(id)
            .grad
            .as_ref()
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; p.value.len()]);
        for (k, &a) in analytic.iter().enumerate() {
            let orig = p.value.data()[k];
            probe.get_mut(id).value.data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = p.name.clone();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
