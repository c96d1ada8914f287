//! Ensemble simulation, tolerance calibration and result files.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;
use stiffsplit::controller::{adaptive_trajectory, ilie_pi_trajectory};
use stiffsplit::integrators::{
    em_trajectory, fixed_split_trajectory, ssa_trajectory, Recording, TrajectoryRecord,
};
use stiffsplit::metrics::{summarize, Grid, Kde, SpeciesMetrics, Summary};
use stiffsplit::{ErrorModel, PathStream, StreamDomain, VectorFields};

use crate::plan::{ExperimentPlan, Method, Regime};

/// Method parameters after defaults and calibration are applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedMethod {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub epsilon: f64,
    pub mean_steps: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub target_steps: usize,
    pub pilot_paths: usize,
    pub epsilon: f64,
    pub mean_steps: f64,
    pub history: Vec<CalibrationPoint>,
}

/// Everything needed to simulate paths of one regime.
pub struct RegimeRun<'a> {
    pub plan: &'a ExperimentPlan,
    pub regime: &'a Regime,
    pub t_end: f64,
}

impl<'a> RegimeRun<'a> {
    pub fn new(plan: &'a ExperimentPlan, regime: &'a Regime) -> Self {
        Self {
            plan,
            regime,
            t_end: plan.horizon(regime),
        }
    }

    /// Stream for path `id`; SSA draws from its own domain.
    pub fn stream(&self, method: Method, domain: StreamDomain, id: u64) -> PathStream {
        let domain = if method == Method::Ssa { StreamDomain::Jump } else { domain };
        PathStream::in_domain(self.plan.seed, id, domain)
    }

    pub fn simulate(
        &self,
        setup: &ResolvedMethod,
        stream: &mut PathStream,
        recording: Recording,
    ) -> Result<TrajectoryRecord<f64>, String> {
        let net = &self.regime.network;
        let s0 = &self.regime.initial_state;
        let opts = self.plan.options;
        let t = self.t_end;
        let out = match setup.method {
            Method::Ssa => ssa_trajectory(net, s0, t, stream, recording).map_err(|e| e.to_string()),
            Method::Em => em_trajectory(net, s0, t, setup.dt.unwrap(), stream, opts, recording)
                .map_err(|e| e.to_string()),
            Method::SplitFixed => fixed_split_trajectory(
                net,
                s0,
                t,
                setup.dt.unwrap(),
                setup.substeps.unwrap(),
                stream,
                opts,
                recording,
            )
            .map_err(|e| e.to_string()),
            Method::FsMsePi => {
                let fields = VectorFields::with_floor(net, self.plan.propensity_floor);
                let est = ErrorModel::with_fields(fields, self.plan.truncation_pairs);
                let cfg = self.plan.controller.config(setup.epsilon.unwrap(), t);
                adaptive_trajectory(net, &est, s0, t, &cfg, stream, opts, recording).map_err(|e| e.to_string())
            }
            Method::IliePi => {
                let cfg = self.plan.controller.config(setup.epsilon.unwrap(), t);
                ilie_pi_trajectory(net, s0, t, &cfg, stream, opts, recording).map_err(|e| e.to_string())
            }
        }?;
        if !out.final_state().is_finite() {
            return Err("non-finite terminal state".into());
        }
        Ok(out)
    }

    /// Terminal states of paths `first..first + count`, in id order.
    pub fn ensemble(&self, setup: &ResolvedMethod, domain: StreamDomain, first: u64, count: usize) -> EnsembleRun {
        let outcomes: Vec<Result<(Vec<f64>, usize, usize), String>> = (first..first + count as u64)
            .into_par_iter()
            .map(|id| {
                let mut stream = self.stream(setup.method, domain, id);
                self.simulate(setup, &mut stream, Recording::Endpoints)
                    .map(|r| (r.final_state().0.clone(), r.accepted_steps, r.rejected_steps))
            })
            .collect();
        let mut run = EnsembleRun::default();
        for o in outcomes {
            match o {
                Ok((s, acc, rej)) => {
                    run.samples.push(s);
                    run.accepted += acc as u64;
                    run.rejected += rej as u64;
                }
                Err(e) => {
                    run.failures += 1;
                    if run.first_failure.is_none() {
                        run.first_failure = Some(e);
                    }
                }
            }
        }
        run
    }

    pub fn resolve(&self, method: Method) -> Result<ResolvedMethod> {
        let mut setup = ResolvedMethod {
            method,
            dt: None,
            substeps: None,
            epsilon: None,
            calibration: None,
        };
        match method {
            Method::Ssa => {}
            Method::Em => setup.dt = Some(self.plan.fixed_dt(self.regime)),
            Method::SplitFixed => {
                setup.dt = Some(self.plan.fixed_dt(self.regime));
                setup.substeps = Some(self.plan.substeps);
            }
            Method::FsMsePi | Method::IliePi => match self.plan.epsilon {
                Some(e) => setup.epsilon = Some(e),
                None => {
                    let cal = calibrate_epsilon(self, method, self.plan.step_budget(self.regime))?;
                    setup.epsilon = Some(cal.epsilon);
                    setup.calibration = Some(cal);
                }
            },
        }
        Ok(setup)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EnsembleRun {
    pub samples: Vec<Vec<f64>>,
    pub failures: usize,
    pub first_failure: Option<String>,
    pub accepted: u64,
    pub rejected: u64,
}

impl EnsembleRun {
    pub fn mean_steps(&self) -> f64 {
        self.accepted as f64 / self.samples.len().max(1) as f64
    }

    pub fn species(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[k]).collect()
    }
}

/// Log-bisection on the tolerance so the pilot ensemble's mean accepted
/// step count matches `target`. A tolerance at which any pilot path fails
/// counts as too loose.
pub fn calibrate_epsilon(run: &RegimeRun<'_>, method: Method, target: usize) -> Result<Calibration> {
    const MAX_EVALS: usize = 30;
    const REL_TOL: f64 = 5e-3;
    let pilot = run.plan.pilot_paths;
    let target_f = target as f64;
    let mut history: Vec<CalibrationPoint> = Vec::new();
    let eval = |eps: f64, history: &mut Vec<CalibrationPoint>| -> (bool, f64) {
        let setup = ResolvedMethod {
            method,
            dt: None,
            substeps: None,
            epsilon: Some(eps),
            calibration: None,
        };
        let ens = run.ensemble(&setup, StreamDomain::Calibration, 0, pilot);
        let mean_steps = if ens.samples.is_empty() { 0.0 } else { ens.mean_steps() };
        history.push(CalibrationPoint {
            epsilon: eps,
            mean_steps,
            failures: ens.failures,
        });
        // true when eps is too loose
        (ens.failures > 0 || mean_steps < target_f, mean_steps)
    };
    let (mut lo, mut hi) = (None::<f64>, None::<f64>);
    let mut eps = 1.0;
    for _ in 0..MAX_EVALS {
        let (loose, steps) = eval(eps, &mut history);
        if history.last().unwrap().failures == 0 && (steps - target_f).abs() <= REL_TOL * target_f {
            break;
        }
        if loose {
            hi = Some(eps);
        } else {
            lo = Some(eps);
        }
        eps = match (lo, hi) {
            (Some(l), Some(h)) => (l * h).sqrt(),
            (Some(l), None) => l * 10.0,
            (None, Some(h)) => h / 10.0,
            (None, None) => unreachable!(),
        };
    }
    let best = history
        .iter()
        .filter(|p| p.failures == 0 && p.mean_steps > 0.0)
        .min_by(|a, b| {
            (a.mean_steps - target_f)
                .abs()
                .total_cmp(&(b.mean_steps - target_f).abs())
        })
        .cloned();
    let Some(best) = best else {
        bail!("calibration of {method} found no tolerance at which every pilot path completes");
    };
    Ok(Calibration {
        target_steps: target,
        pilot_paths: pilot,
        epsilon: best.epsilon,
        mean_steps: best.mean_steps,
        history,
    })
}

/// Grid, histogram and KDE of one species for plotting.
#[derive(Clone, Debug)]
pub struct DensityData {
    pub grid: Grid,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
    pub reference_density: Vec<f64>,
    pub single_bin: bool,
    pub degenerate: bool,
}

impl DensityData {
    /// Integral of the method density over the grid (trapezoid rule).
    pub fn mass(&self) -> f64 {
        let h = self.grid.step();
        let d = &self.density;
        h * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x,count,density,ssa_density\n");
        for i in 0..self.grid.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.grid.x(i),
                self.counts[i],
                self.density[i],
                self.reference_density[i]
            ));
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))
    }
}

/// Histogram and KDE of `samples` on the grid shared with `reference`.
pub fn emit_density_data(samples: &[f64], reference: &[f64]) -> Result<DensityData> {
    if samples.is_empty() || reference.is_empty() {
        bail!("density data needs a nonempty ensemble");
    }
    let kp = Kde::new(samples)?;
    let kr = Kde::new(reference)?;
    let grid = Grid::covering(&[&kp, &kr]);
    let counts = grid.histogram(samples);
    let single_bin = counts.iter().filter(|&&c| c > 0).count() == 1;
    Ok(DensityData {
        density: grid.evaluate(&kp),
        reference_density: grid.evaluate(&kr),
        counts,
        grid,
        single_bin,
        degenerate: kp.degenerate || kr.degenerate,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MaybeSummary {
    pub mean: f64,
    pub ci95: Option<f64>,
}

fn summary_of(values: &[f64]) -> MaybeSummary {
    match summarize(values) {
        Ok(Summary { mean, ci95 }) => MaybeSummary { mean, ci95: Some(ci95) },
        Err(_) => MaybeSummary {
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            ci95: None,
        },
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpeciesSummary {
    pub rel_w1: MaybeSummary,
    pub rel_mean_err: MaybeSummary,
    pub rel_var_err: MaybeSummary,
    pub js_div: MaybeSummary,
    pub kl_div: MaybeSummary,
}

fn aggregate(reps: &[SpeciesMetrics]) -> SpeciesSummary {
    let pick = |f: fn(&SpeciesMetrics) -> f64| summary_of(&reps.iter().map(f).collect::<Vec<_>>());
    SpeciesSummary {
        rel_w1: pick(|m| m.rel_w1.value),
        rel_mean_err: pick(|m| m.rel_mean_err.value),
        rel_var_err: pick(|m| m.rel_var_err.value),
        js_div: pick(|m| m.divergences.js),
        kl_div: pick(|m| m.divergences.kl),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RepetitionRecord {
    pub repetition: usize,
    pub paths: usize,
    pub failed: usize,
    pub mean_accepted_steps: f64,
    pub mean_rejected_steps: f64,
    pub species: IndexMap<String, SpeciesMetrics>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MethodMetrics {
    pub regime: String,
    pub method: Method,
    pub reference: &'static str,
    pub species: IndexMap<String, SpeciesSummary>,
    pub repetitions: Vec<RepetitionRecord>,
}

/// Results of one method in one regime.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub setup: ResolvedMethod,
    pub metrics: MethodMetrics,
    pub pooled: EnsembleRun,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RegimeOutcome {
    pub regime: String,
    pub methods: Vec<MethodOutcome>,
}

impl RegimeOutcome {
    pub fn method(&self, m: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.setup.method == m)
    }
}

fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .context("building worker pool")?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs every (regime, method, repetition) of `plan` and writes the result
/// files under `plan.out`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<RegimeOutcome>> {
    plan.validate()?;
    with_pool(plan.threads, || plan.regimes.iter().map(|r| run_regime(plan, r)).collect())?
}

fn id_of(plan: &ExperimentPlan, rep: usize, path: usize) -> u64 {
    (rep * plan.paths + path) as u64
}

fn run_regime(plan: &ExperimentPlan, regime: &Regime) -> Result<RegimeOutcome> {
    let run = RegimeRun::new(plan, regime);
    let species = regime.network.species().to_vec();
    let ssa_setup = run.resolve(Method::Ssa)?;
    let mut references = Vec::with_capacity(plan.reps);
    let started = Instant::now();
    for rep in 0..plan.reps {
        let ens = run.ensemble(&ssa_setup, StreamDomain::Jump, id_of(plan, rep, 0), plan.paths);
        if let Some(e) = &ens.first_failure {
            bail!("SSA reference failed: {e}");
        }
        references.push(ens);
    }
    let ssa_seconds = started.elapsed().as_secs_f64();

    let mut outcomes = Vec::new();
    for &method in &plan.methods {
        let setup = run.resolve(method)?;
        let mut reps = Vec::with_capacity(plan.reps);
        let mut pooled = EnsembleRun::default();
        let mut seconds = 0.0;
        for rep in 0..plan.reps {
            let (ens, reference) = if method == Method::Ssa {
                // the reference is compared against the next repetition
                let other = &references[(rep + 1) % plan.reps];
                (references[rep].clone(), other)
            } else {
                let started = Instant::now();
                let ens = run.ensemble(&setup, StreamDomain::Diffusion, id_of(plan, rep, 0), plan.paths);
                seconds += started.elapsed().as_secs_f64();
                (ens, &references[rep])
            };
            if ens.samples.len() < 2 {
                bail!(
                    "{method} in {}: {} of {} paths failed ({})",
                    regime.label,
                    ens.failures,
                    plan.paths,
                    ens.first_failure.clone().unwrap_or_default()
                );
            }
            let mut per_species = IndexMap::new();
            for (k, name) in species.iter().enumerate() {
                let m = SpeciesMetrics::compare(&ens.species(k), &reference.species(k))?;
                per_species.insert(name.clone(), m);
            }
            reps.push(RepetitionRecord {
                repetition: rep,
                paths: plan.paths,
                failed: ens.failures,
                mean_accepted_steps: ens.mean_steps(),
                mean_rejected_steps: ens.rejected as f64 / ens.samples.len() as f64,
                species: per_species,
            });
            pooled.samples.extend(ens.samples);
            pooled.failures += ens.failures;
            if pooled.first_failure.is_none() {
                pooled.first_failure = ens.first_failure;
            }
            pooled.accepted += ens.accepted;
            pooled.rejected += ens.rejected;
        }
        if method == Method::Ssa {
            seconds = ssa_seconds;
        }
        let mut summary = IndexMap::new();
        for name in &species {
            let per: Vec<SpeciesMetrics> = reps.iter().map(|r| r.species[name]).collect();
            summary.insert(name.clone(), aggregate(&per));
        }
        outcomes.push(MethodOutcome {
            metrics: MethodMetrics {
                regime: regime.label.clone(),
                method,
                reference: if method == Method::Ssa { "ssa, next repetition" } else { "ssa, same repetition" },
                species: summary,
                repetitions: reps,
            },
            setup,
            pooled,
            seconds,
        });
    }
    let outcome = RegimeOutcome {
        regime: regime.label.clone(),
        methods: outcomes,
    };
    let pooled_reference = EnsembleRun {
        samples: references.into_iter().flat_map(|r| r.samples).collect(),
        ..Default::default()
    };
    write_regime(plan, regime, &run, &outcome, &pooled_reference)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct Meta<'a> {
    regime: &'a str,
    network_file: String,
    method: Method,
    seed: u64,
    paths: usize,
    repetitions: usize,
    t_end: f64,
    step_budget: usize,
    resolved: &'a ResolvedMethod,
    controller: Option<stiffsplit::controller::ControllerConfig<f64>>,
    clamp_nonnegative: bool,
    truncation_pairs: String,
    propensity_floor: f64,
    trajectory_ids: &'static str,
    stream_domain: &'static str,
    kde: KdeMeta,
    failed_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_failure: Option<&'a str>,
    mean_accepted_steps: f64,
    density_flags: IndexMap<String, Vec<&'static str>>,
    version: &'static str,
}

#[derive(Serialize)]
struct KdeMeta {
    kernel: &'static str,
    bandwidth: &'static str,
    grid_points: usize,
    grid_padding_bandwidths: f64,
    probability_floor: f64,
    log: &'static str,
    kl_direction: &'static str,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_regime(
    plan: &ExperimentPlan,
    regime: &Regime,
    run: &RegimeRun<'_>,
    outcome: &RegimeOutcome,
    reference: &EnsembleRun,
) -> Result<()> {
    let dir = plan.out.join(regime.dir_name());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let species = regime.network.species();
    let mut table = String::from("method,species,metric,mean,ci95\n");
    for o in &outcome.methods {
        let method = o.setup.method;
        let mdir = dir.join(method.name());
        fs::create_dir_all(&mdir).with_context(|| format!("creating {}", mdir.display()))?;
        write_json(&mdir.join("metrics.json"), &o.metrics)?;
        for (name, s) in &o.metrics.species {
            for (metric, v) in [
                ("rel_w1", s.rel_w1),
                ("rel_mean_err", s.rel_mean_err),
                ("rel_var_err", s.rel_var_err),
                ("js_div", s.js_div),
                ("kl_div", s.kl_div),
            ] {
                let ci = v.ci95.map(|c| c.to_string()).unwrap_or_default();
                table.push_str(&format!("{method},{name},{metric},{},{ci}\n", v.mean));
            }
        }
        let mut density_flags = IndexMap::new();
        for (k, name) in species.iter().enumerate() {
            let d = emit_density_data(&o.pooled.species(k), &reference.species(k))?;
            d.write_csv(&mdir.join(format!("density_{name}.csv")))?;
            let mut flags = Vec::new();
            if d.single_bin {
                flags.push("single_bin");
            }
            if d.degenerate {
                flags.push("degenerate_bandwidth");
            }
            density_flags.insert(name.clone(), flags);
        }
        if plan.trace && method != Method::Ssa {
            let mut stream = run.stream(method, StreamDomain::Diffusion, 0);
            let rec = run
                .simulate(&o.setup, &mut stream, Recording::Full)
                .map_err(anyhow::Error::msg)
                .context("re-running trajectory 0 for the trace")?;
            write_trace(&mdir.join("trace.csv"), &rec)?;
        }
        let meta = Meta {
            regime: &regime.label,
            network_file: regime.source.display().to_string(),
            method,
            seed: plan.seed,
            paths: plan.paths,
            repetitions: plan.reps,
            t_end: run.t_end,
            step_budget: plan.step_budget(regime),
            resolved: &o.setup,
            controller: o.setup.epsilon.map(|e| plan.controller.config(e, run.t_end)),
            clamp_nonnegative: plan.options.clamp_nonnegative,
            truncation_pairs: format!("{:?}", plan.truncation_pairs),
            propensity_floor: plan.propensity_floor,
            trajectory_ids: "repetition * paths + path",
            stream_domain: if method == Method::Ssa { "jump" } else { "diffusion" },
            kde: KdeMeta {
                kernel: "gaussian",
                bandwidth: "silverman: 0.9 min(sd, iqr / 1.34) n^(-1/5)",
                grid_points: stiffsplit::metrics::KDE_GRID_POINTS,
                grid_padding_bandwidths: stiffsplit::metrics::KDE_GRID_PAD,
                probability_floor: stiffsplit::metrics::PROBABILITY_FLOOR,
                log: "natural",
                kl_direction: "KL(method || ssa)",
            },
            failed_paths: o.pooled.failures,
            first_failure: o.pooled.first_failure.as_deref(),
            mean_accepted_steps: o.pooled.mean_steps(),
            density_flags,
            version: env!("CARGO_PKG_VERSION"),
        };
        write_json(&mdir.join("meta.json"), &meta)?;
    }
    fs::write(dir.join("table.csv"), table)?;
    write_timing(&dir, outcome)?;
    Ok(())
}

fn write_trace(path: &Path, rec: &TrajectoryRecord<f64>) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "step,t,dt,substeps,error_estimate,accepted")?;
    for (i, d) in rec.steps.iter().enumerate() {
        let e = d.error_estimate.map(|e| e.to_string()).unwrap_or_default();
        writeln!(f, "{i},{},{},{},{e},{}", d.t, d.dt, d.substeps, d.accepted)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    regime: String,
    seconds: IndexMap<String, f64>,
    percent_of_fs_mse_pi: Option<IndexMap<String, f64>>,
}

fn write_timing(dir: &Path, outcome: &RegimeOutcome) -> Result<()> {
    let seconds: IndexMap<String, f64> = outcome
        .methods
        .iter()
        .map(|o| (o.setup.method.name().to_string(), o.seconds))
        .collect();
    let base = outcome.method(Method::FsMsePi).map(|o| o.seconds).filter(|&s| s > 0.0);
    let percent = base.map(|b| seconds.iter().map(|(k, v)| (k.clone(), 100.0 * v / b)).collect());
    write_json(
        &dir.join("timing.json"),
        &Timing {
            regime: outcome.regime.clone(),
            seconds,
            percent_of_fs_mse_pi: percent,
        },
    )
}
