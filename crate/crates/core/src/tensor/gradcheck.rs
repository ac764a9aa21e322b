use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Gradients smaller than this are compared absolutely instead of relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

/// Compares the tape's gradients against central finite differences for every
/// parameter in `store`. `build` must be deterministic and return a scalar.
pub fn grad_check<F>(store: &ParamStore, build: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = build(&mut g, store)?;
    let analytic = g.backward(root)?.param_grads(store);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let root = build(&mut g, s)?;
        Ok(g.value(root).data()[0])
    };

    let mut probe = store.clone();
    let mut entries = Vec::new();
    for name in store.names() {
        let n = store.get(name).unwrap().len();
        let zeros = super::Tensor::zeros(0, 0);
        let a = analytic.get(name).unwrap_or(&zeros);
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..n {
            let orig = probe.get(name).unwrap().data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic_i = a.data().get(i).copied().unwrap_or(0.0);
            let abs = (numeric - analytic_i).abs();
            let rel = abs / numeric.abs().max(analytic_i.abs()).max(REL_ERR_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(GradCheckReport { entries })
}
