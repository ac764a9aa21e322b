use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// He-style gain for leaky ReLU with slope 0.1.
pub(crate) const LEAKY_GAIN: f64 = 1.407;

#[derive(Clone, Copy, Debug)]
pub enum InitRule {
    Uniform(f64),
    Zeros,
}

/// Where layer parameters come from. `Init` creates any parameter that is not
/// yet in the store, so one pass over the network both declares and uses them.
pub enum ParamSource<'a> {
    Use(&'a ParamStore),
    Init {
        store: &'a mut ParamStore,
        rng: &'a mut ChaCha8Rng,
    },
}

impl ParamSource<'_> {
    pub fn get(&mut self, g: &mut Graph, name: &str, rows: usize, cols: usize, init: InitRule) -> Result<Var> {
        let store: &ParamStore = match self {
            ParamSource::Use(s) => s,
            ParamSource::Init { store, rng } => {
                if store.get(name).is_none() {
                    match init {
                        InitRule::Uniform(gain) => store.insert_uniform(name, rows, cols, gain, *rng),
                        InitRule::Zeros => store.insert(name, Tensor::zeros(rows, cols)),
                    }
                }
                store
            }
        };
        let v = g.param(store, name)?;
        let shape = g.value(v).shape();
        if shape != (rows, cols) {
            return Err(Error::shape(
                "param",
                format!("`{name}` is {}x{}, layer expects {rows}x{cols}", shape.0, shape.1),
            ));
        }
        Ok(v)
    }
}

pub(crate) fn linear(
    g: &mut Graph,
    p: &mut ParamSource,
    name: &str,
    x: Var,
    out: usize,
    init: InitRule,
) -> Result<Var> {
    let d_in = g.value(x).cols();
    let w = p.get(g, &format!("{name}.w"), d_in, out, init)?;
    let b = p.get(g, &format!("{name}.b"), 1, out, InitRule::Zeros)?;
    g.linear(x, w, b)
}

/// Shared per-row MLP with a leaky ReLU after every layer.
pub(crate) fn mlp(g: &mut Graph, p: &mut ParamSource, name: &str, x: Var, widths: &[usize], slope: f64) -> Result<Var> {
    let mut h = x;
    for (i, &w) in widths.iter().enumerate() {
        let z = linear(g, p, &format!("{name}.{i}"), h, w, InitRule::Uniform(LEAKY_GAIN))?;
        h = g.leaky_relu(z, slope);
    }
    Ok(h)
}
