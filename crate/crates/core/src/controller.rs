//! PI step-size control for the split integrator and an EM step-doubling
//! baseline driven by the same law.

use serde::Serialize;
use thiserror::Error;

use crate::brownian::{macro_increments, refine_path, PathStream};
use crate::errormodel::MseEstimator;
use crate::integrators::{
    IntegratorError, IntegratorOptions, Recording, SplitStepper, StepDiagnostics, TrajectoryRecord,
};
use crate::network::ReactionNetwork;
use crate::scalar::{norm_sq, Real};

pub const E_FLOOR: f64 = 1e-30;

/// Which error value the PI law responds to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSignal {
    /// The full estimate `dt^2 (A + B / N)`.
    Total,
    /// Only `dt^2 A`, the part no choice of `N` can reduce; `N` then absorbs
    /// the remaining budget.
    Floor,
}

impl std::str::FromStr for ControlSignal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "total" => Ok(Self::Total),
            "floor" => Ok(Self::Floor),
            other => Err(format!("unknown control signal `{other}` (expected total or floor)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControllerConfig<T> {
    pub epsilon: T,
    pub alpha: T,
    pub beta: T,
    pub theta: T,
    pub r_max: T,
    pub dt_min: T,
    pub dt_max: T,
    pub n_max: usize,
    pub retry_limit: usize,
    pub signal: ControlSignal,
}

impl<T: Real> ControllerConfig<T> {
    /// Defaults for a run over `[0, t_end]`.
    pub fn new(epsilon: T, t_end: T) -> Self {
        Self {
            epsilon,
            alpha: T::lit(0.2),
            beta: T::lit(0.1),
            theta: T::lit(0.9),
            r_max: T::lit(2.0),
            dt_min: T::lit(1e-10) * t_end,
            dt_max: t_end / T::lit(10.0),
            n_max: 64,
            retry_limit: 20,
            signal: ControlSignal::Floor,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |what: &str| Err(ControllerError::InvalidConfig(what.to_string()));
        if !(self.epsilon > T::zero() && self.epsilon.is_finite()) {
            return bad("epsilon must be positive and finite");
        }
        if !(self.dt_min > T::zero() && self.dt_min <= self.dt_max && self.dt_max.is_finite()) {
            return bad("need 0 < dt_min <= dt_max");
        }
        if !(self.theta >= T::lit(0.8) && self.theta <= T::lit(0.95)) {
            return bad("theta must lie in [0.8, 0.95]");
        }
        if !(self.r_max >= T::lit(1.5) && self.r_max <= T::lit(2.0)) {
            return bad("r_max must lie in [1.5, 2]");
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return bad("alpha and beta must be finite");
        }
        if self.n_max == 0 {
            return bad("n_max must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControllerState<T> {
    pub dt: T,
    pub e_n: T,
    pub e_prev: T,
    pub substeps: usize,
    pub reject_count: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("step size floor {dt} reached at t = {t} with error {error} above 2 epsilon")]
    StepFloor { t: f64, dt: f64, error: f64 },
    #[error("more than {limit} rejections in a row at t = {t}")]
    RetryLimit { t: f64, limit: usize },
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
}

/// Next macro step proposed by the PI law, with safety factor and clamps.
pub fn pi_update<T: Real>(cfg: &ControllerConfig<T>, dt: T, e_n: T, e_prev: T) -> T {
    let floor = T::lit(E_FLOOR);
    let e_n = e_n.max(floor);
    let e_prev = e_prev.max(floor);
    let raw = cfg.theta * dt * (cfg.epsilon / e_n).powf(cfg.alpha) * (e_prev / e_n).powf(cfg.beta);
    let upper = (cfg.r_max * dt).min(cfg.dt_max);
    if raw.is_nan() {
        return upper.max(cfg.dt_min);
    }
    raw.min(upper).max(cfg.dt_min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubstepChoice {
    Feasible(usize),
    Infeasible,
}

/// Smallest `N` with `dt^2 (A + B / N) <= epsilon`, or `Infeasible` when
/// no `N` in `1..=n_max` achieves it.
pub fn select_substeps<T: Real>(cfg: &ControllerConfig<T>, a: T, b: T, dt: T) -> SubstepChoice {
    let dt2 = dt * dt;
    let room = cfg.epsilon - a * dt2;
    if !(room > T::zero()) {
        return SubstepChoice::Infeasible;
    }
    let ratio = (b * dt2 / room).as_f64();
    if !ratio.is_finite() {
        return SubstepChoice::Infeasible;
    }
    // absorb rounding in ratios that are integers in exact arithmetic
    let n = (ratio * (1.0 - 1e-12)).ceil().max(1.0);
    if n > cfg.n_max as f64 {
        SubstepChoice::Infeasible
    } else {
        SubstepChoice::Feasible(n as usize)
    }
}

fn finish_time<T: Real>(t: T, dt: T, t_end: T) -> (T, bool) {
    if t + dt >= t_end * (T::one() - T::lit(1e-12)) {
        (t_end - t, true)
    } else {
        (dt, false)
    }
}

/// Adaptive split integration to `t_end` with `A`, `B` from `estimator`.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_trajectory<T: Real, E: MseEstimator<T>>(
    net: &ReactionNetwork<T>,
    estimator: &E,
    s0: &[T],
    t_end: T,
    cfg: &ControllerConfig<T>,
    stream: &mut PathStream,
    opts: IntegratorOptions,
    recording: Recording,
) -> Result<TrajectoryRecord<T>, ControllerError> {
    cfg.validate()?;
    if !(t_end > T::zero() && t_end.is_finite()) {
        return Err(IntegratorError::NonPositiveHorizon(t_end.as_f64()).into());
    }
    let mut rec = TrajectoryRecord::new(s0);
    let mut stepper = SplitStepper::new(net, opts);
    let mut s = s0.to_vec();
    let first = estimator.coefficients(&s);
    let total = first.a + first.b;
    let mut state = ControllerState {
        dt: if total > T::zero() {
            (cfg.epsilon / total).sqrt().min(cfg.dt_max).max(cfg.dt_min)
        } else {
            cfg.dt_max
        },
        e_n: cfg.epsilon,
        e_prev: cfg.epsilon,
        substeps: 1,
        reject_count: 0,
    };
    let mut t = T::zero();
    let mut done = false;
    while !done {
        let coeffs = if rec.accepted_steps == 0 { first } else { estimator.coefficients(&s) };
        let (mut dt, mut last) = finish_time(t, state.dt, t_end);
        let mut retries = 0;
        let (n, e) = loop {
            let n = loop {
                match select_substeps(cfg, coeffs.a, coeffs.b, dt) {
                    SubstepChoice::Feasible(n) => break n,
                    SubstepChoice::Infeasible if dt > cfg.dt_min => {
                        dt = (dt * T::lit(0.5)).max(cfg.dt_min);
                        last = false;
                    }
                    SubstepChoice::Infeasible => break cfg.n_max,
                }
            };
            let e = coeffs.mse(dt, n);
            if e <= T::lit(2.0) * cfg.epsilon {
                break (n, e);
            }
            rec.note_step(
                recording,
                StepDiagnostics {
                    t,
                    dt,
                    substeps: n,
                    error_estimate: Some(e),
                    accepted: false,
                },
            );
            state.reject_count += 1;
            if dt <= cfg.dt_min {
                return Err(ControllerError::StepFloor {
                    t: t.as_f64(),
                    dt: dt.as_f64(),
                    error: e.as_f64(),
                });
            }
            retries += 1;
            if retries > cfg.retry_limit {
                return Err(ControllerError::RetryLimit {
                    t: t.as_f64(),
                    limit: cfg.retry_limit,
                });
            }
            dt = (dt * T::lit(0.5)).max(cfg.dt_min);
            last = false;
        };
        stepper.split_step(&mut s, dt, n, stream);
        rec.note_step(
            recording,
            StepDiagnostics {
                t,
                dt,
                substeps: n,
                error_estimate: Some(e),
                accepted: true,
            },
        );
        t = if last { t_end } else { t + dt };
        rec.push_state(recording, t, &s);
        done = last;

        let signal = match cfg.signal {
            ControlSignal::Total => e,
            ControlSignal::Floor => coeffs.a * dt * dt,
        };
        state.e_prev = state.e_n;
        state.e_n = signal;
        state.substeps = n;
        state.dt = pi_update(cfg, dt, state.e_n, state.e_prev);
    }
    Ok(rec)
}

/// Euler-Maruyama with step-doubling error control. The error of a step is
/// `|s_full - s_half|^2`, where `s_half` takes two half steps on a bridge
/// refinement of the full-step increment; `s_half` is kept on acceptance.
pub fn ilie_pi_trajectory<T: Real>(
    net: &ReactionNetwork<T>,
    s0: &[T],
    t_end: T,
    cfg: &ControllerConfig<T>,
    stream: &mut PathStream,
    opts: IntegratorOptions,
    recording: Recording,
) -> Result<TrajectoryRecord<T>, ControllerError> {
    cfg.validate()?;
    if !(t_end > T::zero() && t_end.is_finite()) {
        return Err(IntegratorError::NonPositiveHorizon(t_end.as_f64()).into());
    }
    let nr = net.n_reactions();
    let mut rec = TrajectoryRecord::new(s0);
    let mut stepper = SplitStepper::new(net, opts);
    let mut s = s0.to_vec();
    let mut full = s.clone();
    let mut half = s.clone();
    let mut diff = vec![T::zero(); s.len()];
    let mut next_dt = cfg.dt_max;
    let mut e_prev = cfg.epsilon;
    let mut t = T::zero();
    let mut done = false;
    while !done {
        let (mut dt, mut last) = finish_time(t, next_dt, t_end);
        let mut retries = 0;
        let e = loop {
            let dw = macro_increments(stream, dt, nr).map_err(IntegratorError::from)?;
            let halves = refine_path(&dw, 2, stream).map_err(IntegratorError::from)?;
            full.copy_from_slice(&s);
            stepper.em_step_on(&mut full, dt, &dw.dw);
            half.copy_from_slice(&s);
            stepper.em_step_on(&mut half, halves[0].dt, &halves[0].dw);
            stepper.em_step_on(&mut half, halves[1].dt, &halves[1].dw);
            for ((d, &f), &h) in diff.iter_mut().zip(&full).zip(&half) {
                *d = f - h;
            }
            let e = norm_sq(&diff);
            if e <= T::lit(2.0) * cfg.epsilon {
                break e;
            }
            rec.note_step(
                recording,
                StepDiagnostics {
                    t,
                    dt,
                    substeps: 2,
                    error_estimate: Some(e),
                    accepted: false,
                },
            );
            if dt <= cfg.dt_min {
                return Err(ControllerError::StepFloor {
                    t: t.as_f64(),
                    dt: dt.as_f64(),
                    error: e.as_f64(),
                });
            }
            retries += 1;
            if retries > cfg.retry_limit {
                return Err(ControllerError::RetryLimit {
                    t: t.as_f64(),
                    limit: cfg.retry_limit,
                });
            }
            dt = (dt * T::lit(0.5)).max(cfg.dt_min);
            last = false;
        };
        s.copy_from_slice(&half);
        rec.note_step(
            recording,
            StepDiagnostics {
                t,
                dt,
                substeps: 2,
                error_estimate: Some(e),
                accepted: true,
            },
        );
        t = if last { t_end } else { t + dt };
        rec.push_state(recording, t, &s);
        done = last;
        next_dt = pi_update(cfg, dt, e, e_prev);
        e_prev = e.max(T::lit(E_FLOOR));
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ControllerConfig<f64> {
        ControllerConfig::new(2e-4, 1.0)
    }

    #[test]
    fn pi_hand_values() {
        let mut c = cfg();
        c.dt_max = 1.0;
        let dt = pi_update(&c, 1e-3, c.epsilon, c.epsilon);
        assert!((dt - 9e-4).abs() < 1e-15);
        // theta (eps / E)^0.2 = 3
        let e = c.epsilon * (0.9f64 / 3.0).powf(5.0);
        let dt = pi_update(&c, 1e-3, e, e);
        assert!((dt - 2e-3).abs() < 1e-15);
        let dt = pi_update(&c, c.dt_min, 10.0 * c.epsilon, c.epsilon);
        assert_eq!(dt, c.dt_min);
    }

    #[test]
    fn substep_hand_values() {
        let c = cfg();
        assert_eq!(select_substeps(&c, 1.0, 10.0, 0.01), SubstepChoice::Feasible(10));
        let mut tight = c;
        tight.epsilon = 5e-5;
        assert_eq!(select_substeps(&tight, 1.0, 10.0, 0.01), SubstepChoice::Infeasible);
        assert_eq!(select_substeps(&c, 1.0, 0.0, 0.01), SubstepChoice::Feasible(1));
        let mut small = c;
        small.n_max = 9;
        assert_eq!(select_substeps(&small, 1.0, 10.0, 0.01), SubstepChoice::Infeasible);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.theta = 0.5;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.dt_min = 1.0;
        c.dt_max = 0.1;
        assert!(c.validate().is_err());
    }
}
