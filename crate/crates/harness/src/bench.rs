//! Wall-clock comparison of the methods on one ensemble.

use std::time::Instant;

use anyhow::{bail, Result};
use indexmap::IndexMap;
use serde::Serialize;
use stiffsplit::StreamDomain;

use crate::experiment::{RegimeRun, ResolvedMethod};
use crate::plan::{ExperimentPlan, Method};

#[derive(Clone, Debug, Serialize)]
pub struct MethodTiming {
    pub setup: ResolvedMethod,
    pub seconds: f64,
    pub seconds_per_path: f64,
    pub mean_accepted_steps: f64,
    pub failed_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percent_of_fs_mse_pi: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub regime: String,
    pub paths: usize,
    pub seed: u64,
    pub methods: IndexMap<String, MethodTiming>,
}

/// Times `plan.paths` trajectories of every method in every regime.
/// Calibration, if needed, happens before the clock starts.
pub fn bench(plan: &ExperimentPlan) -> Result<Vec<BenchReport>> {
    plan.validate()?;
    let mut reports = Vec::new();
    for regime in &plan.regimes {
        let run = RegimeRun::new(plan, regime);
        let mut methods = IndexMap::new();
        for &method in &plan.methods {
            let setup = run.resolve(method)?;
            let domain = if method == Method::Ssa { StreamDomain::Jump } else { StreamDomain::Diffusion };
            let started = Instant::now();
            let ens = run.ensemble(&setup, domain, 0, plan.paths);
            let seconds = started.elapsed().as_secs_f64();
            if ens.samples.is_empty() {
                bail!("{method}: every path failed ({})", ens.first_failure.unwrap_or_default());
            }
            methods.insert(
                method.name().to_string(),
                MethodTiming {
                    setup,
                    seconds,
                    seconds_per_path: seconds / plan.paths as f64,
                    mean_accepted_steps: ens.mean_steps(),
                    failed_paths: ens.failures,
                    percent_of_fs_mse_pi: None,
                },
            );
        }
        if let Some(base) = methods.get(Method::FsMsePi.name()).map(|t| t.seconds).filter(|&s| s > 0.0) {
            for t in methods.values_mut() {
                t.percent_of_fs_mse_pi = Some(100.0 * t.seconds / base);
            }
        }
        reports.push(BenchReport {
            regime: regime.label.clone(),
            paths: plan.paths,
            seed: plan.seed,
            methods,
        });
    }
    Ok(reports)
}
