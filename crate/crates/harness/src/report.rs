//! One-state diagnostic breakdown of the MSE coefficients.

use anyhow::{bail, Result};
use indexmap::IndexMap;
use serde::Serialize;
use stiffsplit::errormodel::ErrorTerms;
use stiffsplit::{ErrorModel, Network, TruncationPairs, VectorFields};

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub state: IndexMap<String, f64>,
    pub dt: f64,
    pub substeps: usize,
    pub truncation_pairs: String,
    pub propensity_floor: f64,
    pub a: f64,
    pub b: f64,
    pub terms: ErrorTerms<f64>,
    /// Terms weighted by their step factors: `dt^2` or `dt^2 / N`.
    pub contributions: ErrorTerms<f64>,
    pub mse: f64,
    /// Stoichiometric forms of the fast-substep and slow-discretisation terms.
    pub parametrized: Parametrized,
    pub propensities: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Parametrized {
    pub fast_substepping: f64,
    pub slow_discretization: f64,
}

pub fn error_report(
    net: &Network,
    state: &[f64],
    dt: f64,
    substeps: usize,
    pairs: TruncationPairs,
    floor: f64,
) -> Result<ErrorReport> {
    if state.len() != net.n_species() {
        bail!("state has {} entries for {} species", state.len(), net.n_species());
    }
    if !(floor > 0.0) {
        bail!("propensity floor must be positive");
    }
    let model = ErrorModel::with_fields(VectorFields::with_floor(net, floor), pairs);
    let (mse, c) = model.one_step_mse(state, dt, substeps)?;
    let dt2 = dt * dt;
    Ok(ErrorReport {
        state: net.species().iter().cloned().zip(state.iter().copied()).collect(),
        dt,
        substeps,
        truncation_pairs: format!("{pairs:?}"),
        propensity_floor: floor,
        a: c.a,
        b: c.b,
        terms: c.terms,
        contributions: ErrorTerms {
            truncation: dt2 * c.terms.truncation,
            splitting: dt2 * c.terms.splitting,
            fast_substepping: dt2 * c.terms.fast_substepping / substeps as f64,
            slow_discretization: dt2 * c.terms.slow_discretization,
        },
        mse,
        parametrized: Parametrized {
            fast_substepping: model.fast_substep_term_parametrized(state),
            slow_discretization: model.slow_discretization_term_parametrized(state),
        },
        propensities: net.propensities(state),
    })
}
