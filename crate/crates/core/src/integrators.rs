//! Time stepping: exact SSA, Euler-Maruyama, the fast-slow split step and a
//! stochastic Heun reference solver.

use serde::Serialize;
use thiserror::Error;

use crate::brownian::{
    masked_increments, micro_increments, BrownianError, BrownianIncrements, MicroIncrements, PathStream, SharedPath,
};
use crate::network::{ReactionNetwork, StateVector};
use crate::scalar::Real;
use crate::vectorfields::VectorFields;

pub const DEFAULT_REFERENCE_REFINEMENT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct IntegratorOptions {
    /// Clamp negative entries to zero after every update.
    pub clamp_nonnegative: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            clamp_nonnegative: true,
        }
    }
}

/// How much of a trajectory to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recording {
    /// Every state and per-step diagnostics.
    Full,
    /// Initial and terminal state plus step counters.
    Endpoints,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics<T> {
    /// Time at the start of the step.
    pub t: T,
    pub dt: T,
    pub substeps: usize,
    pub error_estimate: Option<T>,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord<T> {
    pub times: Vec<T>,
    pub states: Vec<StateVector<T>>,
    pub steps: Vec<StepDiagnostics<T>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Total fast microsteps over accepted steps.
    pub total_substeps: u64,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn new(s0: &[T]) -> Self {
        Self {
            times: vec![T::zero()],
            states: vec![StateVector(s0.to_vec())],
            steps: Vec::new(),
            accepted_steps: 0,
            rejected_steps: 0,
            total_substeps: 0,
        }
    }

    pub fn final_state(&self) -> &StateVector<T> {
        self.states.last().expect("a record always holds the initial state")
    }

    pub fn final_time(&self) -> T {
        *self.times.last().expect("a record always holds the initial time")
    }

    pub(crate) fn push_state(&mut self, recording: Recording, t: T, s: &[T]) {
        if recording == Recording::Full || self.times.len() == 1 {
            self.times.push(t);
            self.states.push(StateVector(s.to_vec()));
        } else {
            *self.times.last_mut().unwrap() = t;
            self.states.last_mut().unwrap().0.copy_from_slice(s);
        }
    }

    pub(crate) fn note_step(&mut self, recording: Recording, diag: StepDiagnostics<T>) {
        if diag.accepted {
            self.accepted_steps += 1;
            self.total_substeps += diag.substeps as u64;
        } else {
            self.rejected_steps += 1;
        }
        if recording == Recording::Full {
            self.steps.push(diag);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitStepResult<T> {
    pub s_next: Vec<T>,
    /// State after the fast microsteps, before the slow update.
    pub s_plus: Vec<T>,
}

#[derive(Debug, Error, PartialEq)]
pub enum IntegratorError {
    #[error("initial state must hold nonnegative integers, entry {index} is {value}")]
    NonIntegerState { index: usize, value: f64 },
    #[error("horizon must be positive and finite, got {0}")]
    NonPositiveHorizon(f64),
    #[error("step size must be positive and finite, got {0}")]
    NonPositiveStep(f64),
    #[error("substep count must be at least 1")]
    ZeroSubsteps,
    #[error("horizon {t_end} is not an integer multiple of step {dt}")]
    StepMismatch { t_end: f64, dt: f64 },
    #[error("state dimension {found} does not match network ({expected})")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Brownian(#[from] BrownianError),
}

fn check_positive<T: Real>(x: T, err: fn(f64) -> IntegratorError) -> Result<(), IntegratorError> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(err(x.as_f64()))
    }
}

fn check_dim<T: Real>(net: &ReactionNetwork<T>, s: &[T]) -> Result<(), IntegratorError> {
    if s.len() == net.n_species() {
        Ok(())
    } else {
        Err(IntegratorError::Dimension {
            expected: net.n_species(),
            found: s.len(),
        })
    }
}

#[inline]
pub fn clamp_nonnegative<T: Real>(s: &mut [T]) {
    for x in s.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// `s + sum_k C_k (dt (v_k - w d_k) + sqrt(v_k) dW_k)` over `channels`,
/// with `w = 1/4` for the Stratonovich drift and `w = 0` for Ito.
fn channel_update<T: Real>(
    net: &ReactionNetwork<T>,
    s: &[T],
    dt: T,
    dw: &[T],
    channels: &[usize],
    correction: T,
    out: &mut [T],
) {
    out.copy_from_slice(s);
    for &k in channels {
        let c = net.change(k);
        let v = net.propensity(k, s);
        let mut drift = v;
        if correction != T::zero() {
            drift -= correction * net.directional_derivative(k, s, c);
        }
        let w = dt * drift + v.positive_part().sqrt() * dw[k];
        if w == T::zero() {
            continue;
        }
        for (o, &ca) in out.iter_mut().zip(c) {
            *o += ca * w;
        }
    }
}

/// Ito Euler-Maruyama step of the full CLE.
pub fn em_step<T: Real>(net: &ReactionNetwork<T>, s: &[T], dt: T, dw: &[T], opts: IntegratorOptions) -> Vec<T> {
    let all: Vec<usize> = (0..net.n_reactions()).collect();
    let mut out = vec![T::zero(); s.len()];
    channel_update(net, s, dt, dw, &all, T::zero(), &mut out);
    if opts.clamp_nonnegative {
        clamp_nonnegative(&mut out);
    }
    out
}

/// Frozen-field Euler update of the fast subflow:
/// `s + dt X_0^(f)(s) + sum_fast X_i(s) dW_i`.
pub fn fast_microstep<T: Real>(fields: &VectorFields<'_, T>, s: &[T], dt: T, dw: &[T]) -> Vec<T> {
    let net = fields.network();
    let mut out = vec![T::zero(); s.len()];
    channel_update(net, s, dt, dw, net.fast_channels(), T::lit(0.25), &mut out);
    out
}

/// Frozen-field Euler update of the slow subflow from `s_plus`.
pub fn slow_update<T: Real>(fields: &VectorFields<'_, T>, s_plus: &[T], dt: T, dw: &[T]) -> Vec<T> {
    let net = fields.network();
    let mut out = vec![T::zero(); s_plus.len()];
    channel_update(net, s_plus, dt, dw, net.slow_channels(), T::lit(0.25), &mut out);
    out
}

/// One Lie-Trotter step on explicit increments: the fast microsteps of
/// `micro` followed by a slow update driven by `slow`.
pub fn split_step<T: Real>(
    fields: &VectorFields<'_, T>,
    s: &[T],
    micro: &MicroIncrements<T>,
    slow: &BrownianIncrements<T>,
    opts: IntegratorOptions,
) -> SplitStepResult<T> {
    let mut cur = s.to_vec();
    for step in &micro.steps {
        cur = fast_microstep(fields, &cur, step.dt, &step.dw);
        if opts.clamp_nonnegative {
            clamp_nonnegative(&mut cur);
        }
    }
    let s_plus = cur;
    let mut s_next = slow_update(fields, &s_plus, slow.dt, &slow.dw);
    if opts.clamp_nonnegative {
        clamp_nonnegative(&mut s_next);
    }
    SplitStepResult { s_next, s_plus }
}

/// Reusable buffers for stepping one trajectory without per-step allocation.
#[derive(Clone, Debug)]
pub struct SplitStepper<'n, T> {
    net: &'n ReactionNetwork<T>,
    opts: IntegratorOptions,
    dw: Vec<T>,
    tmp: Vec<T>,
}

impl<'n, T: Real> SplitStepper<'n, T> {
    pub fn new(net: &'n ReactionNetwork<T>, opts: IntegratorOptions) -> Self {
        Self {
            net,
            opts,
            dw: vec![T::zero(); net.n_reactions()],
            tmp: vec![T::zero(); net.n_species()],
        }
    }

    fn draw(&mut self, stream: &mut PathStream, dt: T, channels: &[usize]) {
        let sd = dt.as_f64().sqrt();
        for &k in channels {
            self.dw[k] = T::lit(sd * stream.standard_normal());
        }
    }

    /// Split step drawing increments from `stream` in the same order as
    /// [`crate::brownian::micro_increments`] then the slow channels.
    pub fn split_step(&mut self, s: &mut [T], dt: T, substeps: usize, stream: &mut PathStream) {
        let net = self.net;
        let micro = dt / T::lit(substeps as f64);
        let quarter = T::lit(0.25);
        for _ in 0..substeps {
            self.draw(stream, micro, net.fast_channels());
            channel_update(net, s, micro, &self.dw, net.fast_channels(), quarter, &mut self.tmp);
            s.copy_from_slice(&self.tmp);
            if self.opts.clamp_nonnegative {
                clamp_nonnegative(s);
            }
        }
        self.draw(stream, dt, net.slow_channels());
        channel_update(net, s, dt, &self.dw, net.slow_channels(), quarter, &mut self.tmp);
        s.copy_from_slice(&self.tmp);
        if self.opts.clamp_nonnegative {
            clamp_nonnegative(s);
        }
    }

    /// Ito Euler-Maruyama step with fresh increments on every channel.
    pub fn em_step(&mut self, s: &mut [T], dt: T, stream: &mut PathStream) {
        let sd = dt.as_f64().sqrt();
        for w in self.dw.iter_mut() {
            *w = T::lit(sd * stream.standard_normal());
        }
        self.em_step_with(s, dt);
    }

    /// Ito Euler-Maruyama step on the increments in `dw`.
    pub fn em_step_on(&mut self, s: &mut [T], dt: T, dw: &[T]) {
        self.dw.copy_from_slice(dw);
        self.em_step_with(s, dt);
    }

    fn em_step_with(&mut self, s: &mut [T], dt: T) {
        let net = self.net;
        self.tmp.copy_from_slice(s);
        for k in 0..net.n_reactions() {
            let v = net.propensity(k, s);
            let w = dt * v + v.positive_part().sqrt() * self.dw[k];
            if w == T::zero() {
                continue;
            }
            for (o, &ca) in self.tmp.iter_mut().zip(net.change(k)) {
                *o += ca * w;
            }
        }
        s.copy_from_slice(&self.tmp);
        if self.opts.clamp_nonnegative {
            clamp_nonnegative(s);
        }
    }
}

/// Stochastic Heun integration of the full Stratonovich CLE along `path`.
pub fn reference_strong_step<T: Real>(fields: &VectorFields<'_, T>, s: &[T], path: &SharedPath<T>) -> Vec<T> {
    let net = fields.network();
    let all: Vec<usize> = (0..net.n_reactions()).collect();
    let quarter = T::lit(0.25);
    let half = T::lit(0.5);
    let ns = s.len();
    let mut cur = s.to_vec();
    let mut pred = vec![T::zero(); ns];
    let mut corr = vec![T::zero(); ns];
    for step in &path.steps {
        channel_update(net, &cur, step.dt, &step.dw, &all, quarter, &mut pred);
        channel_update(net, &pred, step.dt, &step.dw, &all, quarter, &mut corr);
        // corr = pred + incr(pred), so (cur + corr) / 2 = cur + (incr(cur) + incr(pred)) / 2
        for a in 0..ns {
            cur[a] = half * (cur[a] + corr[a]);
        }
    }
    cur
}

/// One sample of `|split step - reference|^2` from `s`: the split step uses
/// `substeps` fast microsteps, the reference integrates the full CLE with
/// stochastic Heun on `substeps * per_micro` bridge-refined pieces of the
/// same Brownian path.
pub fn split_step_sq_error<T: Real>(
    fields: &VectorFields<'_, T>,
    s: &[T],
    dt: T,
    substeps: usize,
    per_micro: usize,
    stream: &mut PathStream,
    opts: IntegratorOptions,
) -> Result<T, IntegratorError> {
    let net = fields.network();
    check_dim(net, s)?;
    if substeps == 0 {
        return Err(IntegratorError::ZeroSubsteps);
    }
    let nr = net.n_reactions();
    let micro = micro_increments(stream, dt, substeps, net.fast_channels(), nr)?;
    let slow = masked_increments(stream, dt, nr, net.slow_channels())?;
    let path = SharedPath::from_split(&micro, &slow, net.fast_channels(), net.slow_channels(), per_micro, stream)?;
    let split = split_step(fields, s, &micro, &slow, opts).s_next;
    let reference = reference_strong_step(fields, s, &path);
    Ok(split.iter().zip(&reference).map(|(&a, &b)| (a - b) * (a - b)).sum())
}

fn step_count<T: Real>(t_end: T, dt: T) -> Result<usize, IntegratorError> {
    check_positive(t_end, IntegratorError::NonPositiveHorizon)?;
    check_positive(dt, IntegratorError::NonPositiveStep)?;
    let ratio = (t_end / dt).as_f64();
    let steps = ratio.round();
    if steps < 1.0 || (ratio - steps).abs() > 1e-6 * steps.max(1.0) {
        return Err(IntegratorError::StepMismatch {
            t_end: t_end.as_f64(),
            dt: dt.as_f64(),
        });
    }
    Ok(steps as usize)
}

fn fixed_grid<T: Real>(
    net: &ReactionNetwork<T>,
    s0: &[T],
    t_end: T,
    dt: T,
    substeps: usize,
    recording: Recording,
    mut step: impl FnMut(&mut [T]),
) -> Result<TrajectoryRecord<T>, IntegratorError> {
    check_dim(net, s0)?;
    let n = step_count(t_end, dt)?;
    let mut rec = TrajectoryRecord::new(s0);
    let mut s = s0.to_vec();
    for i in 0..n {
        step(&mut s);
        let t = if i + 1 == n { t_end } else { dt * T::lit((i + 1) as f64) };
        rec.note_step(
            recording,
            StepDiagnostics {
                t: dt * T::lit(i as f64),
                dt,
                substeps,
                error_estimate: None,
                accepted: true,
            },
        );
        rec.push_state(recording, t, &s);
    }
    Ok(rec)
}

/// Fixed-step Euler-Maruyama to `t_end`; `t_end / dt` must be an integer.
pub fn em_trajectory<T: Real>(
    net: &ReactionNetwork<T>,
    s0: &[T],
    t_end: T,
    dt: T,
    stream: &mut PathStream,
    opts: IntegratorOptions,
    recording: Recording,
) -> Result<TrajectoryRecord<T>, IntegratorError> {
    let mut stepper = SplitStepper::new(net, opts);
    fixed_grid(net, s0, t_end, dt, 1, recording, |s| stepper.em_step(s, dt, stream))
}

/// Fixed-step splitting with `substeps` fast microsteps per macro step.
pub fn fixed_split_trajectory<T: Real>(
    net: &ReactionNetwork<T>,
    s0: &[T],
    t_end: T,
    dt: T,
    substeps: usize,
    stream: &mut PathStream,
    opts: IntegratorOptions,
    recording: Recording,
) -> Result<TrajectoryRecord<T>, IntegratorError> {
    if substeps == 0 {
        return Err(IntegratorError::ZeroSubsteps);
    }
    let mut stepper = SplitStepper::new(net, opts);
    fixed_grid(net, s0, t_end, dt, substeps, recording, |s| {
        stepper.split_step(s, dt, substeps, stream)
    })
}

/// Gillespie direct method. The stream should come from the jump domain.
pub fn ssa_trajectory<T: Real>(
    net: &ReactionNetwork<T>,
    s0: &[T],
    t_end: T,
    stream: &mut PathStream,
    recording: Recording,
) -> Result<TrajectoryRecord<T>, IntegratorError> {
    check_dim(net, s0)?;
    check_positive(t_end, IntegratorError::NonPositiveHorizon)?;
    for (index, &x) in s0.iter().enumerate() {
        let value = x.as_f64();
        if !(value >= 0.0) || value.fract() != 0.0 {
            return Err(IntegratorError::NonIntegerState { index, value });
        }
    }
    let horizon = t_end.as_f64();
    let nr = net.n_reactions();
    let mut rec = TrajectoryRecord::new(s0);
    let mut s = s0.to_vec();
    let mut v = vec![T::zero(); nr];
    let mut t = 0.0f64;
    loop {
        let mut total = 0.0;
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = net.propensity(k, &s);
            total += vk.as_f64();
        }
        if !(total > 0.0) {
            break;
        }
        t += -stream.uniform_open0().ln() / total;
        if t >= horizon {
            break;
        }
        let target = stream.uniform_open0() * total;
        let mut acc = 0.0;
        let mut chosen = nr - 1;
        for (k, vk) in v.iter().enumerate() {
            acc += vk.as_f64();
            if target <= acc {
                chosen = k;
                break;
            }
        }
        // guard against rounding picking a zero-rate channel at the tail
        while v[chosen] == T::zero() && chosen > 0 {
            chosen -= 1;
        }
        for (x, &c) in s.iter_mut().zip(net.change(chosen)) {
            *x += c;
        }
        rec.accepted_steps += 1;
        if recording == Recording::Full {
            rec.times.push(T::lit(t));
            rec.states.push(StateVector(s.clone()));
        }
    }
    if recording == Recording::Full || rec.times.len() == 1 {
        rec.times.push(t_end);
        rec.states.push(StateVector(s));
    } else {
        *rec.times.last_mut().unwrap() = t_end;
        rec.states.last_mut().unwrap().0 = s;
    }
    Ok(rec)
}
