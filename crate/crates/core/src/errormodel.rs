//! Leading-order one-step mean-square error of the fast-slow splitting step.
//!
//! The estimate has the form `E(s; dt, N) = dt^2 (A(s) + B(s) / N)` with
//!
//! * truncation: `1/4 sum_{i<j} |[X_i, X_j]|^2`,
//! * splitting: `1/4 sum_{i fast, j slow} |[X_i, X_j]|^2`,
//! * fast substepping (the `B` coefficient):
//!   `1/4 sum_{i,j fast} c_ij sum_a (sum_b d_b X_{i,a} X_{j,b})^2`,
//! * slow discretization: the same sum over slow channels,
//!
//! and `A = truncation + splitting + slow discretization`. The weight table
//! is `c_ii = 3`, `c_ij = 1` otherwise.
//!
//! Writing `(D X_i) X_j = p_ij C_i` with `p_ij = 1/2 sqrt(v_j / v_i) (C_j . grad v_i)`
//! reduces every term to scalar products of stoichiometry columns, which is
//! how [`ErrorModel::coefficients`] evaluates them. The operator forms built
//! from explicit Jacobians are kept alongside as an independent route.

use serde::Serialize;
use thiserror::Error;

use crate::network::{ChannelClass, ReactionNetwork};
use crate::scalar::{dot, norm_sq, Real};
use crate::vectorfields::VectorFields;

/// Which channel pairs enter the truncation sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationPairs {
    /// Every pair `i < j`, so fast-slow pairs also appear in the splitting term.
    #[default]
    All,
    /// Only fast-fast and slow-slow pairs.
    WithinGroup,
}

impl std::str::FromStr for TruncationPairs {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Self::All),
            "within_group" | "within-group" => Ok(Self::WithinGroup),
            other => Err(format!("unknown truncation pair mode `{other}`")),
        }
    }
}

/// `c_ij` weights of the substepping and slow-discretization terms.
#[derive(Clone, Copy, Debug, Default)]
pub struct WeightTable;

impl WeightTable {
    #[inline]
    pub fn weight<T: Real>(i: usize, j: usize) -> T {
        if i == j {
            T::lit(3.0)
        } else {
            T::one()
        }
    }
}

/// The four contributions, each without its `dt^2` (or `dt^2 / N`) factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorTerms<T> {
    pub truncation: T,
    pub splitting: T,
    pub fast_substepping: T,
    pub slow_discretization: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorCoefficients<T> {
    pub a: T,
    pub b: T,
    pub terms: ErrorTerms<T>,
}

impl<T: Real> ErrorCoefficients<T> {
    pub fn from_terms(terms: ErrorTerms<T>) -> Self {
        Self {
            a: terms.truncation + terms.splitting + terms.slow_discretization,
            b: terms.fast_substepping,
            terms,
        }
    }

    /// Synthetic coefficients; the whole of `a` is booked as truncation.
    pub fn constant(a: T, b: T) -> Self {
        Self {
            a,
            b,
            terms: ErrorTerms {
                truncation: a,
                splitting: T::zero(),
                fast_substepping: b,
                slow_discretization: T::zero(),
            },
        }
    }

    /// `dt^2 (A + B / N)`.
    #[inline]
    pub fn mse(&self, dt: T, substeps: usize) -> T {
        dt * dt * (self.a + self.b / T::lit(substeps as f64))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ErrorModelError {
    #[error("macro step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("substep count must be at least 1")]
    ZeroSubsteps,
}

/// Source of `A(s)`, `B(s)` for the adaptive controller.
pub trait MseEstimator<T> {
    fn coefficients(&self, s: &[T]) -> ErrorCoefficients<T>;
}

/// State-independent coefficients, for exercising the controller in isolation.
#[derive(Clone, Copy, Debug)]
pub struct FixedCoefficients<T>(pub ErrorCoefficients<T>);

impl<T: Real> MseEstimator<T> for FixedCoefficients<T> {
    fn coefficients(&self, _s: &[T]) -> ErrorCoefficients<T> {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ErrorModel<'a, T> {
    fields: VectorFields<'a, T>,
    pairs: TruncationPairs,
}

impl<'a, T: Real> MseEstimator<T> for ErrorModel<'a, T> {
    fn coefficients(&self, s: &[T]) -> ErrorCoefficients<T> {
        ErrorModel::coefficients(self, s)
    }
}

impl<'a, T: Real> ErrorModel<'a, T> {
    pub fn new(net: &'a ReactionNetwork<T>) -> Self {
        Self {
            fields: VectorFields::new(net),
            pairs: TruncationPairs::All,
        }
    }

    pub fn with_fields(fields: VectorFields<'a, T>, pairs: TruncationPairs) -> Self {
        Self { fields, pairs }
    }

    pub fn with_pairs(mut self, pairs: TruncationPairs) -> Self {
        self.pairs = pairs;
        self
    }

    pub fn fields(&self) -> &VectorFields<'a, T> {
        &self.fields
    }

    fn net(&self) -> &'a ReactionNetwork<T> {
        self.fields.network()
    }

    fn class_of(&self, k: usize) -> ChannelClass {
        self.net().reactions()[k].class
    }

    fn counts_for_truncation(&self, i: usize, j: usize) -> bool {
        match self.pairs {
            TruncationPairs::All => true,
            TruncationPairs::WithinGroup => self.class_of(i) == self.class_of(j),
        }
    }

    pub fn truncation_term(&self, s: &[T]) -> T {
        let nr = self.net().n_reactions();
        let mut total = T::zero();
        for i in 0..nr {
            for j in i + 1..nr {
                if self.counts_for_truncation(i, j) {
                    total += norm_sq(&self.fields.lie_bracket(i, j, s));
                }
            }
        }
        T::lit(0.25) * total
    }

    pub fn splitting_term(&self, s: &[T]) -> T {
        let net = self.net();
        let mut total = T::zero();
        for &i in net.fast_channels() {
            for &j in net.slow_channels() {
                total += norm_sq(&self.fields.lie_bracket(i, j, s));
            }
        }
        T::lit(0.25) * total
    }

    /// Operator form over one channel group, from explicit Jacobians.
    fn discretization_operator(&self, channels: &[usize], s: &[T]) -> T {
        let n = self.net().n_species();
        let jacobians: Vec<Vec<T>> = channels.iter().map(|&k| self.fields.diffusion_jacobian(k, s)).collect();
        let fields: Vec<Vec<T>> = channels.iter().map(|&k| self.fields.diffusion_field(k, s)).collect();
        let mut total = T::zero();
        for (ii, jac) in jacobians.iter().enumerate() {
            for (jj, x) in fields.iter().enumerate() {
                let mut sq = T::zero();
                for a in 0..n {
                    let comp: T = (0..n).map(|b| jac[a * n + b] * x[b]).sum();
                    sq += comp * comp;
                }
                total += WeightTable::weight::<T>(ii, jj) * sq;
            }
        }
        T::lit(0.25) * total
    }

    /// Stoichiometric form over one channel group.
    fn discretization_parametrized(&self, channels: &[usize], s: &[T]) -> T {
        let net = self.net();
        let vf: Vec<T> = channels
            .iter()
            .map(|&k| net.propensity(k, s).max(self.fields.floor()))
            .collect();
        let mut total = T::zero();
        for (ii, &i) in channels.iter().enumerate() {
            let ci_sq = norm_sq(net.change(i));
            for (jj, &j) in channels.iter().enumerate() {
                let g = net.directional_derivative(i, s, net.change(j));
                total += WeightTable::weight::<T>(ii, jj) * (vf[jj] / vf[ii]) * g * g * ci_sq;
            }
        }
        total / T::lit(16.0)
    }

    pub fn fast_substep_term(&self, s: &[T]) -> T {
        self.discretization_operator(self.net().fast_channels(), s)
    }

    pub fn fast_substep_term_parametrized(&self, s: &[T]) -> T {
        self.discretization_parametrized(self.net().fast_channels(), s)
    }

    pub fn slow_discretization_term(&self, s: &[T]) -> T {
        self.discretization_operator(self.net().slow_channels(), s)
    }

    pub fn slow_discretization_term_parametrized(&self, s: &[T]) -> T {
        self.discretization_parametrized(self.net().slow_channels(), s)
    }

    /// All four terms in one pass over the scalar products `p_ij`.
    pub fn coefficients(&self, s: &[T]) -> ErrorCoefficients<T> {
        let net = self.net();
        let nr = net.n_reactions();
        let floor = self.fields.floor();
        let vf: Vec<T> = (0..nr).map(|k| net.propensity(k, s).max(floor)).collect();
        let root: Vec<T> = vf.iter().map(|v| v.sqrt()).collect();
        let half = T::lit(0.5);
        // p[i * nr + j] = 1/2 sqrt(v_j / v_i) (C_j . grad v_i), so (D X_i) X_j = p_ij C_i
        let mut p = vec![T::zero(); nr * nr];
        for i in 0..nr {
            for j in 0..nr {
                let g = net.directional_derivative(i, s, net.change(j));
                if g != T::zero() {
                    p[i * nr + j] = half * root[j] / root[i] * g;
                }
            }
        }
        let col_sq: Vec<T> = (0..nr).map(|k| norm_sq(net.change(k))).collect();
        let bracket_sq = |i: usize, j: usize| -> T {
            // [X_i, X_j] = p_ji C_j - p_ij C_i
            let pji = p[j * nr + i];
            let pij = p[i * nr + j];
            if pji == T::zero() && pij == T::zero() {
                return T::zero();
            }
            // the expanded square can round below zero when the bracket cancels
            (pji * pji * col_sq[j] + pij * pij * col_sq[i]
                - T::lit(2.0) * pij * pji * dot(net.change(i), net.change(j)))
            .max(T::zero())
        };

        let mut truncation = T::zero();
        let mut splitting = T::zero();
        for i in 0..nr {
            for j in i + 1..nr {
                let cross = self.class_of(i) != self.class_of(j);
                let truncated = self.counts_for_truncation(i, j);
                if truncated || cross {
                    let b2 = bracket_sq(i, j);
                    if truncated {
                        truncation += b2;
                    }
                    if cross {
                        splitting += b2;
                    }
                }
            }
        }
        let group = |channels: &[usize]| -> T {
            let mut total = T::zero();
            for (ii, &i) in channels.iter().enumerate() {
                for (jj, &j) in channels.iter().enumerate() {
                    let pij = p[i * nr + j];
                    total += WeightTable::weight::<T>(ii, jj) * pij * pij * col_sq[i];
                }
            }
            total
        };
        let quarter = T::lit(0.25);
        ErrorCoefficients::from_terms(ErrorTerms {
            truncation: quarter * truncation,
            splitting: quarter * splitting,
            fast_substepping: quarter * group(net.fast_channels()),
            slow_discretization: quarter * group(net.slow_channels()),
        })
    }

    /// `dt^2 (A(s) + B(s) / N)` together with the coefficient breakdown.
    pub fn one_step_mse(&self, s: &[T], dt: T, substeps: usize) -> Result<(T, ErrorCoefficients<T>), ErrorModelError> {
        if !(dt > T::zero()) {
            return Err(ErrorModelError::NonPositiveStep(dt.as_f64()));
        }
        if substeps == 0 {
            return Err(ErrorModelError::ZeroSubsteps);
        }
        let c = self.coefficients(s);
        Ok((c.mse(dt, substeps), c))
    }
}
