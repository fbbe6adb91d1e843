use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamSet, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over every trainable entry.
    pub max_rel_error: f64,
    /// Entry attaining the maximum, as `name[index]`.
    pub worst: Option<String>,
    pub entries_checked: usize,
    /// Set when the parameter set had nothing trainable; `max_rel_error` is then 0.
    pub no_trainable_params: bool,
}

/// Compares tape gradients with central finite differences.
///
/// `f` builds the scalar loss on a fresh graph from the given parameters and
/// must be deterministic.
pub fn grad_check<F>(mut f: F, params: &ParamSet, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    fn eval<F>(f: &mut F, p: &ParamSet) -> Result<f64>
    where
        F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
    {
        let mut g = Graph::new();
        let loss = f(&mut g, p)?;
        Ok(g.value(loss).item())
    }

    let mut work = params.clone();
    let first = eval(&mut f, &work)?;
    let second = eval(&mut f, &work)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let names = work.trainable_names();
    if names.is_empty() {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            entries_checked: 0,
            no_trainable_params: true,
        });
    }

    let mut g = Graph::new();
    let loss = f(&mut g, &work)?;
    g.backward(loss, &mut work)?;

    let mut max_err = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for name in &names {
        let analytic = work
            .get(name)
            .and_then(|p| p.grad.clone())
            .expect("trainable param has grad after backward");
        for i in 0..analytic.len() {
            let orig = work.value(name)?.data()[i];
            set_entry(&mut work, name, i, orig + eps);
            let plus = eval(&mut f, &work)?;
            set_entry(&mut work, name, i, orig - eps);
            let minus = eval(&mut f, &work)?;
            set_entry(&mut work, name, i, orig);

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > max_err || !err.is_finite() {
                max_err = err;
                worst = Some(format!("{name}[{i}]"));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        worst,
        entries_checked: checked,
        no_trainable_params: false,
    })
}

fn set_entry(params: &mut ParamSet, name: &str, i: usize, v: f64) {
    params.get_mut(name).expect("known name").value.data_mut()[i] = v;
}
