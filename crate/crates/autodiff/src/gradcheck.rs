//! Central finite-difference verification of analytic gradients.
//!
//! Always runs at `f64`: rebuild the fragment with a cast parameter store
//! (see [`ParamStore::cast`]) before checking.

use serde::Serialize;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// numerically zero do not turn round-off into large relative errors.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub failure: Option<String>,
}

impl ParamCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.failure.is_none() && self.max_rel_error < tolerance
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed(self.config.tolerance))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.elements).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed(self.config.tolerance))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward-pass gradients of `build`'s scalar output against
/// central differences for every element of every parameter.
///
/// `build` must be deterministic (use an inference graph, no dropout).
pub fn gradcheck<F>(params: &ParamStore<f64>, build: F, config: GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = build(&mut g, params)?;
    g.backward(out)?;
    let grads = g.param_grads();

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = build(&mut g, store)?;
        Ok(g.value(out).item())
    };

    let mut work = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    for (id, name, tensor) in params.iter() {
        let mut check = ParamCheck {
            name: name.to_string(),
            elements: tensor.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            failure: None,
        };
        let analytic = grads
            .get(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; tensor.len()]);
        if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
            check.failure = Some(format!("non-finite gradient for `{name}` at element {i}"));
            checks.push(check);
            continue;
        }
        for (i, &a) in analytic.iter().enumerate() {
            let orig = tensor.data()[i];
            work.get_mut(id).data_mut()[i] = orig + config.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - config.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * config.step);
            if !numeric.is_finite() {
                check.failure = Some(format!("non-finite numeric gradient for `{name}` at element {i}"));
                break;
            }
            let err = relative_error(a, numeric, config.floor);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        checks.push(check);
    }
    Ok(GradcheckReport { config, params: checks })
}
