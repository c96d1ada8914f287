//! Mass-action reaction networks with a fast/slow channel partition.
//!
//! Networks are read from a small JSON document:
//!
//! ```text
//! { "species": ["X0", "X1", "X2"],
//!   "reactions": [ { "reactants": {"X0": 1, "X1": 1}, "products": {"X2": 1},
//!                    "rate": 1e2, "class": "fast" }, ... ] }
//! ```
//!
//! Propensities follow plain mass-action kinetics of total order at most two,
//! `v_k = rate_k * prod_a s_a^{m_ak}`, with negative state entries treated as
//! zero so that `v_k >= 0` everywhere.

use std::fmt;
use std::ops::{Deref, DerefMut};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Maximum total reactant order supported by the kinetics.
pub const MAX_ORDER: u32 = 2;

/// Time-scale class of a reaction channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelClass {
    Fast,
    Slow,
}

impl fmt::Display for ChannelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelClass::Fast => f.write_str("fast"),
            ChannelClass::Slow => f.write_str("slow"),
        }
    }
}

/// One reaction channel: stoichiometry, rate constant and class.
#[derive(Clone, Debug, PartialEq)]
pub struct ReactionSpec<T> {
    pub name: Option<String>,
    /// Molecules consumed, indexed by species.
    pub reactants: Vec<u32>,
    /// Molecules produced, indexed by species.
    pub products: Vec<u32>,
    pub rate: T,
    pub class: ChannelClass,
}

impl<T: Real> ReactionSpec<T> {
    pub fn order(&self) -> u32 {
        self.reactants.iter().sum()
    }
}

/// Concentrations (or copy numbers) of every species.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateVector<T>(pub Vec<T>);

impl<T: Real> StateVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Self(values.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for StateVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for StateVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for StateVector<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("malformed network config at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("network declares no species")]
    NoSpecies,
    #[error("species[{index}]: duplicate species name `{name}`")]
    DuplicateSpecies { index: usize, name: String },
    #[error("reactions[{reaction}].{field}: unknown species `{species}`")]
    UnknownSpecies {
        reaction: usize,
        field: &'static str,
        species: String,
    },
    #[error("reactions[{reaction}]: missing `class` (expected \"fast\" or \"slow\")")]
    MissingClass { reaction: usize },
    #[error("reactions[{reaction}].class: expected \"fast\" or \"slow\", found `{value}`")]
    InvalidClass { reaction: usize, value: String },
    #[error("reactions[{reaction}].rate: rate constant must be finite and nonnegative, found {rate}")]
    InvalidRate { reaction: usize, rate: f64 },
    #[error("reactions[{reaction}].reactants: total order {order} exceeds {max}", max = MAX_ORDER)]
    OrderTooHigh { reaction: usize, order: u32 },
    #[error("stoichiometry vectors must have length {expected}, reaction {reaction} has {found}")]
    ShapeMismatch {
        reaction: usize,
        expected: usize,
        found: usize,
    },
}

/// Reactant factor `s[species]^power` of a mass-action law.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Factor {
    species: usize,
    power: u32,
}

/// Immutable mass-action network. Construct with [`parse_network`] or
/// [`ReactionNetwork::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReactionNetwork<T> {
    species: Vec<String>,
    reactions: Vec<ReactionSpec<T>>,
    /// `changes[k]` is column `k` of the stoichiometry matrix.
    changes: Vec<Vec<T>>,
    int_changes: Vec<Vec<i64>>,
    factors: Vec<Vec<Factor>>,
    fast: Vec<usize>,
    slow: Vec<usize>,
}

impl<T: Real> ReactionNetwork<T> {
    pub fn new(species: Vec<String>, reactions: Vec<ReactionSpec<T>>) -> Result<Self, NetworkError> {
        if species.is_empty() {
            return Err(NetworkError::NoSpecies);
        }
        for (index, name) in species.iter().enumerate() {
            if species[..index].contains(name) {
                return Err(NetworkError::DuplicateSpecies {
                    index,
                    name: name.clone(),
                });
            }
        }
        let ns = species.len();
        let mut changes = Vec::with_capacity(reactions.len());
        let mut int_changes = Vec::with_capacity(reactions.len());
        let mut factors = Vec::with_capacity(reactions.len());
        let mut fast = Vec::new();
        let mut slow = Vec::new();
        for (k, r) in reactions.iter().enumerate() {
            for v in [&r.reactants, &r.products] {
                if v.len() != ns {
                    return Err(NetworkError::ShapeMismatch {
                        reaction: k,
                        expected: ns,
                        found: v.len(),
                    });
                }
            }
            if !(r.rate >= T::zero()) || !r.rate.is_finite() {
                return Err(NetworkError::InvalidRate {
                    reaction: k,
                    rate: r.rate.as_f64(),
                });
            }
            let order = r.order();
            if order > MAX_ORDER {
                return Err(NetworkError::OrderTooHigh { reaction: k, order });
            }
            let col: Vec<i64> = r
                .products
                .iter()
                .zip(&r.reactants)
                .map(|(&p, &q)| i64::from(p) - i64::from(q))
                .collect();
            changes.push(col.iter().map(|&c| T::lit(c as f64)).collect());
            int_changes.push(col);
            factors.push(
                r.reactants
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m > 0)
                    .map(|(species, &power)| Factor { species, power })
                    .collect(),
            );
            match r.class {
                ChannelClass::Fast => fast.push(k),
                ChannelClass::Slow => slow.push(k),
            }
        }
        Ok(Self {
            species,
            reactions,
            changes,
            int_changes,
            factors,
            fast,
            slow,
        })
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn reactions(&self) -> &[ReactionSpec<T>] {
        &self.reactions
    }

    /// Column `k` of the stoichiometry matrix (products minus reactants).
    pub fn change(&self, k: usize) -> &[T] {
        &self.changes[k]
    }

    pub fn integer_change(&self, k: usize) -> &[i64] {
        &self.int_changes[k]
    }

    /// Stoichiometry matrix as rows (species) of columns (reactions).
    pub fn stoichiometry_matrix(&self) -> Vec<Vec<i64>> {
        (0..self.n_species())
            .map(|a| self.int_changes.iter().map(|col| col[a]).collect())
            .collect()
    }

    pub fn fast_channels(&self) -> &[usize] {
        &self.fast
    }

    pub fn slow_channels(&self) -> &[usize] {
        &self.slow
    }

    pub fn channels(&self, class: ChannelClass) -> &[usize] {
        match class {
            ChannelClass::Fast => &self.fast,
            ChannelClass::Slow => &self.slow,
        }
    }

    /// Copy of the network with every channel relabeled to `class`.
    pub fn relabeled(&self, class: ChannelClass) -> Self {
        let reactions = self
            .reactions
            .iter()
            .cloned()
            .map(|mut r| {
                r.class = class;
                r
            })
            .collect();
        Self::new(self.species.clone(), reactions).expect("relabeling keeps a valid network")
    }

    /// Copy of the network with the channels of `class` dropped.
    pub fn without(&self, class: ChannelClass) -> Self {
        let reactions = self.reactions.iter().filter(|r| r.class != class).cloned().collect();
        Self::new(self.species.clone(), reactions).expect("dropping channels keeps a valid network")
    }

    /// Mass-action propensity of channel `k`.
    #[inline]
    pub fn propensity(&self, k: usize, s: &[T]) -> T {
        let mut v = self.reactions[k].rate;
        for f in &self.factors[k] {
            v *= s[f.species].positive_part().powi(f.power as i32);
        }
        v
    }

    pub fn propensities(&self, s: &[T]) -> Vec<T> {
        (0..self.n_reactions()).map(|k| self.propensity(k, s)).collect()
    }

    /// Writes `d v_k / d s` into `out` (length `n_species`).
    pub fn propensity_gradient_into(&self, k: usize, s: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|g| *g = T::zero());
        let rate = self.reactions[k].rate;
        let factors = &self.factors[k];
        for (i, fi) in factors.iter().enumerate() {
            let x = s[fi.species];
            if x < T::zero() {
                continue;
            }
            let mut g = rate * T::lit(f64::from(fi.power)) * x.powi(fi.power as i32 - 1);
            for (j, fj) in factors.iter().enumerate() {
                if j != i {
                    g *= s[fj.species].positive_part().powi(fj.power as i32);
                }
            }
            out[fi.species] = g;
        }
    }

    /// Gradient matrix, one row per reaction.
    pub fn propensity_gradients(&self, s: &[T]) -> Vec<Vec<T>> {
        (0..self.n_reactions())
            .map(|k| {
                let mut row = vec![T::zero(); self.n_species()];
                self.propensity_gradient_into(k, s, &mut row);
                row
            })
            .collect()
    }

    /// `dir . grad v_k(s)` without materialising the gradient.
    #[inline]
    pub fn directional_derivative(&self, k: usize, s: &[T], dir: &[T]) -> T {
        let rate = self.reactions[k].rate;
        let factors = &self.factors[k];
        let mut total = T::zero();
        for (i, fi) in factors.iter().enumerate() {
            let x = s[fi.species];
            let w = dir[fi.species];
            if x < T::zero() || w == T::zero() {
                continue;
            }
            let mut g = rate * T::lit(f64::from(fi.power)) * x.powi(fi.power as i32 - 1);
            for (j, fj) in factors.iter().enumerate() {
                if j != i {
                    g *= s[fj.species].positive_part().powi(fj.power as i32);
                }
            }
            total += g * w;
        }
        total
    }

    /// Serialises back to the JSON network schema.
    pub fn to_json(&self) -> String {
        let raw = RawNetwork {
            species: self.species.clone(),
            reactions: self
                .reactions
                .iter()
                .map(|r| RawReaction {
                    name: r.name.clone(),
                    reactants: self.stoich_map(&r.reactants),
                    products: self.stoich_map(&r.products),
                    rate: r.rate.as_f64(),
                    class: Some(r.class.to_string()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("network serialises")
    }

    fn stoich_map(&self, counts: &[u32]) -> IndexMap<String, u32> {
        self.species
            .iter()
            .zip(counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| (s.clone(), c))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RawNetwork {
    species: Vec<String>,
    reactions: Vec<RawReaction>,
}

#[derive(Serialize, Deserialize)]
struct RawReaction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default)]
    reactants: IndexMap<String, u32>,
    #[serde(default)]
    products: IndexMap<String, u32>,
    rate: f64,
    #[serde(default)]
    class: Option<String>,
}

/// Parses the JSON network schema. Unknown top-level fields are ignored so
/// that benchmark files can carry extra run metadata.
pub fn parse_network<T: Real>(text: &str) -> Result<ReactionNetwork<T>, NetworkError> {
    let raw: RawNetwork = serde_json::from_str(text).map_err(|e| NetworkError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let ns = raw.species.len();
    let lookup = |reaction: usize, field: &'static str, map: &IndexMap<String, u32>| {
        let mut counts = vec![0u32; ns];
        for (name, &c) in map {
            let idx = raw.species.iter().position(|s| s == name).ok_or_else(|| NetworkError::UnknownSpecies {
                reaction,
                field,
                species: name.clone(),
            })?;
            counts[idx] += c;
        }
        Ok(counts)
    };
    let mut reactions = Vec::with_capacity(raw.reactions.len());
    for (k, r) in raw.reactions.iter().enumerate() {
        let reactants = lookup(k, "reactants", &r.reactants)?;
        let products = lookup(k, "products", &r.products)?;
        let class = match r.class.as_deref() {
            None => return Err(NetworkError::MissingClass { reaction: k }),
            Some("fast") => ChannelClass::Fast,
            Some("slow") => ChannelClass::Slow,
            Some(other) => {
                return Err(NetworkError::InvalidClass {
                    reaction: k,
                    value: other.to_owned(),
                })
            }
        };
        if !(r.rate >= 0.0) || !r.rate.is_finite() {
            return Err(NetworkError::InvalidRate { reaction: k, rate: r.rate });
        }
        reactions.push(ReactionSpec {
            name: r.name.clone(),
            reactants,
            products,
            rate: T::lit(r.rate),
            class,
        });
    }
    ReactionNetwork::new(raw.species, reactions)
}
