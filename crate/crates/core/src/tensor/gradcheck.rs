use crate::error::{Error, Result};
use crate::par;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamId, ParamStore};

/// Elements perturbed per cloned parameter store.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckWorst {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over all parameter elements of
    /// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    pub worst: Option<GradCheckWorst>,
    pub checked: usize,
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    if g.value(out).len() != 1 {
        return Err(Error::NotScalar(g.shape(out).to_vec()));
    }
    Ok(g.scalar(out))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `eps`, for every element of every
/// parameter in `params`.
pub fn grad_check<F>(params: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var> + Sync,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("gradcheck eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut grads = Gradients::new(params);
    {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss, &mut grads)?;
    }

    let elements: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.get(id).len()).map(move |i| (id, i)))
        .collect();
    let chunks = elements.len().div_ceil(CHUNK);
    let numeric: Vec<Result<Vec<f64>>> = par::map_range(chunks, usize::MAX, |c| {
        let mut local = params.clone();
        let end = ((c + 1) * CHUNK).min(elements.len());
        elements[c * CHUNK..end]
            .iter()
            .map(|&(id, i)| {
                let orig = local.get(id).data()[i];
                local.get_mut(id).data_mut()[i] = orig + eps;
                let plus = evaluate(&local, &f)?;
                local.get_mut(id).data_mut()[i] = orig - eps;
                let minus = evaluate(&local, &f)?;
                local.get_mut(id).data_mut()[i] = orig;
                Ok((plus - minus) / (2.0 * eps))
            })
            .collect()
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: elements.len(),
    };
    let mut numeric_iter = elements.iter();
    for chunk in numeric {
        for n in chunk? {
            let &(id, i) = numeric_iter.next().expect("one estimate per element");
            let a = grads.get(id)[i];
            let err = relative_error(a, n);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(GradCheckWorst {
                    param: params.name(id).to_string(),
                    index: i,
                    analytic: a,
                    numeric: n,
                });
            }
        }
    }
    Ok(report)
}
