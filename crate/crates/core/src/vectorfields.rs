//! Stratonovich drift, per-channel diffusion fields and their Lie brackets.
//!
//! Channel `k` contributes the diffusion field `X_k(s) = C_k sqrt(v_k(s))`.
//! The Stratonovich drift is `X_0(s) = C v(s) - C d(s) / 4` with the
//! correction `d_k(s) = C_k . grad v_k(s)`.
//!
//! Wherever a propensity appears in a denominator it is replaced by
//! `max(v, v_floor)`, which keeps brackets and Jacobians finite at extinction.

use crate::network::{ChannelClass, ReactionNetwork};
use crate::scalar::Real;

pub const DEFAULT_PROPENSITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct VectorFields<'a, T> {
    net: &'a ReactionNetwork<T>,
    v_floor: T,
}

impl<'a, T: Real> VectorFields<'a, T> {
    pub fn new(net: &'a ReactionNetwork<T>) -> Self {
        Self::with_floor(net, T::lit(DEFAULT_PROPENSITY_FLOOR))
    }

    /// # Panics
    /// If `v_floor` is not strictly positive.
    pub fn with_floor(net: &'a ReactionNetwork<T>, v_floor: T) -> Self {
        assert!(v_floor > T::zero(), "propensity floor must be positive");
        Self { net, v_floor }
    }

    pub fn network(&self) -> &'a ReactionNetwork<T> {
        self.net
    }

    pub fn floor(&self) -> T {
        self.v_floor
    }

    #[inline]
    fn floored(&self, v: T) -> T {
        v.max(self.v_floor)
    }

    /// `d_k(s) = C_k . grad v_k(s)` for every channel.
    pub fn drift_correction(&self, s: &[T]) -> Vec<T> {
        (0..self.net.n_reactions())
            .map(|k| self.net.directional_derivative(k, s, self.net.change(k)))
            .collect()
    }

    /// Full Stratonovich drift `X_0(s)`.
    pub fn stratonovich_drift(&self, s: &[T]) -> Vec<T> {
        let all: Vec<usize> = (0..self.net.n_reactions()).collect();
        self.drift_over(s, &all)
    }

    /// `X_0^(f)` or `X_0^(s)`: the drift restricted to one class of channels.
    pub fn partial_drift(&self, s: &[T], class: ChannelClass) -> Vec<T> {
        self.drift_over(s, self.net.channels(class))
    }

    /// Stratonovich drift summed over an arbitrary subset of channels.
    pub fn drift_over(&self, s: &[T], channels: &[usize]) -> Vec<T> {
        let quarter = T::lit(0.25);
        let mut out = vec![T::zero(); self.net.n_species()];
        for &k in channels {
            let c = self.net.change(k);
            let v = self.net.propensity(k, s);
            let d = self.net.directional_derivative(k, s, c);
            let w = v - quarter * d;
            for (o, &ca) in out.iter_mut().zip(c) {
                *o += ca * w;
            }
        }
        out
    }

    /// `X_k(s) = C_k sqrt(max(v_k, 0))`.
    pub fn diffusion_field(&self, k: usize, s: &[T]) -> Vec<T> {
        let root = self.net.propensity(k, s).positive_part().sqrt();
        self.net.change(k).iter().map(|&c| c * root).collect()
    }

    /// Jacobian of `X_k`, row-major: entry `[a * n + b]` is `d X_{k,a} / d s_b`.
    pub fn diffusion_jacobian(&self, k: usize, s: &[T]) -> Vec<T> {
        let n = self.net.n_species();
        let mut grad = vec![T::zero(); n];
        self.net.propensity_gradient_into(k, s, &mut grad);
        let denom = T::lit(2.0) * self.floored(self.net.propensity(k, s)).sqrt();
        let mut jac = vec![T::zero(); n * n];
        for (a, &ca) in self.net.change(k).iter().enumerate() {
            if ca == T::zero() {
                continue;
            }
            for (b, &gb) in grad.iter().enumerate() {
                jac[a * n + b] = ca * gb / denom;
            }
        }
        jac
    }

    /// `[X_i, X_j](s) = (D X_j) X_i - (D X_i) X_j`, evaluated from the
    /// stoichiometric form
    /// `1/2 sum_b [ C_bi C_aj sqrt(v_i/v_j) d_b v_j - C_bj C_ai sqrt(v_j/v_i) d_b v_i ]`.
    pub fn lie_bracket(&self, i: usize, j: usize, s: &[T]) -> Vec<T> {
        let n = self.net.n_species();
        if i == j {
            return vec![T::zero(); n];
        }
        let ci = self.net.change(i);
        let cj = self.net.change(j);
        let vi = self.floored(self.net.propensity(i, s));
        let vj = self.floored(self.net.propensity(j, s));
        // sum_b C_bi d_b v_j and sum_b C_bj d_b v_i
        let gij = self.net.directional_derivative(j, s, ci);
        let gji = self.net.directional_derivative(i, s, cj);
        let half = T::lit(0.5);
        let along_j = half * (vi / vj).sqrt() * gij;
        let along_i = half * (vj / vi).sqrt() * gji;
        (0..n).map(|a| cj[a] * along_j - ci[a] * along_i).collect()
    }
}
