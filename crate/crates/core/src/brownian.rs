//! Reproducible Wiener increments.
//!
//! Every trajectory owns a [`PathStream`] keyed by `(seed, domain)` and
//! positioned on ChaCha stream `trajectory_id`, so the numbers a trajectory
//! sees never depend on which worker ran it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scalar::Real;

/// Independent families of streams sharing one user seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamDomain {
    /// Wiener paths driving CLE integrators.
    Diffusion,
    /// Exact SSA reaction events.
    Jump,
    /// Pilot ensembles used for tolerance calibration.
    Calibration,
    Custom(u64),
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Diffusion => 0,
            StreamDomain::Jump => 1,
            StreamDomain::Calibration => 2,
            StreamDomain::Custom(x) => x.wrapping_add(1 << 32),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PathStream {
    seed: u64,
    trajectory_id: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl PathStream {
    pub fn new(seed: u64, trajectory_id: u64) -> Self {
        Self::in_domain(seed, trajectory_id, StreamDomain::Diffusion)
    }

    pub fn in_domain(seed: u64, trajectory_id: u64, domain: StreamDomain) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.tag().to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(trajectory_id);
        Self {
            seed,
            trajectory_id,
            counter: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trajectory_id(&self) -> u64 {
        self.trajectory_id
    }

    /// Number of variates drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(StandardNormal)
    }

    /// Uniform on the half-open interval `(0, 1]`.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        self.counter += 1;
        1.0 - self.rng.random::<f64>()
    }
}

/// Per-channel Wiener increments over an interval of length `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianIncrements<T> {
    pub dw: Vec<T>,
    pub dt: T,
}

impl<T: Real> BrownianIncrements<T> {
    pub fn zeros(n: usize, dt: T) -> Self {
        Self {
            dw: vec![T::zero(); n],
            dt,
        }
    }
}

/// Microstep increments for the fast channels plus their channel-wise sum.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroIncrements<T> {
    pub steps: Vec<BrownianIncrements<T>>,
    pub total: BrownianIncrements<T>,
}

#[derive(Debug, Error, PartialEq)]
pub enum BrownianError {
    #[error("increment length must be positive and finite, got {0}")]
    NonPositiveStep(f64),
    #[error("refinement count must be at least 1")]
    ZeroRefinement,
}

fn check_dt<T: Real>(dt: T) -> Result<(), BrownianError> {
    if dt > T::zero() && dt.is_finite() {
        Ok(())
    } else {
        Err(BrownianError::NonPositiveStep(dt.as_f64()))
    }
}

/// `n_channels` independent `N(0, dt)` draws.
pub fn macro_increments<T: Real>(
    stream: &mut PathStream,
    dt: T,
    n_channels: usize,
) -> Result<BrownianIncrements<T>, BrownianError> {
    check_dt(dt)?;
    let sd = dt.as_f64().sqrt();
    let dw = (0..n_channels).map(|_| T::lit(sd * stream.standard_normal())).collect();
    Ok(BrownianIncrements { dw, dt })
}

/// Increments on the listed channels only; the rest stay zero.
pub fn masked_increments<T: Real>(
    stream: &mut PathStream,
    dt: T,
    n_channels: usize,
    channels: &[usize],
) -> Result<BrownianIncrements<T>, BrownianError> {
    check_dt(dt)?;
    let sd = dt.as_f64().sqrt();
    let mut inc = BrownianIncrements::zeros(n_channels, dt);
    for &k in channels {
        inc.dw[k] = T::lit(sd * stream.standard_normal());
    }
    Ok(inc)
}

/// `n` i.i.d. microstep increments of variance `dt / n` on `fast_channels`.
/// `total` is their channel-wise sum taken in step order.
pub fn micro_increments<T: Real>(
    stream: &mut PathStream,
    dt: T,
    n: usize,
    fast_channels: &[usize],
    n_channels: usize,
) -> Result<MicroIncrements<T>, BrownianError> {
    check_dt(dt)?;
    if n == 0 {
        return Err(BrownianError::ZeroRefinement);
    }
    let micro_dt = dt / T::lit(n as f64);
    let steps = (0..n)
        .map(|_| masked_increments(stream, micro_dt, n_channels, fast_channels))
        .collect::<Result<Vec<_>, _>>()?;
    let total = sum_increments(&steps, dt);
    Ok(MicroIncrements { steps, total })
}

/// Channel-wise sum of consecutive increments, accumulated in order.
pub fn sum_increments<T: Real>(steps: &[BrownianIncrements<T>], dt: T) -> BrownianIncrements<T> {
    let n = steps.first().map_or(0, |s| s.dw.len());
    let mut total = BrownianIncrements::zeros(n, dt);
    for step in steps {
        for (t, &w) in total.dw.iter_mut().zip(&step.dw) {
            *t += w;
        }
    }
    total
}

/// Brownian-bridge refinement of `parent` into `factor` sub-increments whose
/// channel-wise sum reproduces `parent.dw`.
pub fn refine_path<T: Real>(
    parent: &BrownianIncrements<T>,
    factor: usize,
    stream: &mut PathStream,
) -> Result<Vec<BrownianIncrements<T>>, BrownianError> {
    check_dt(parent.dt)?;
    if factor == 0 {
        return Err(BrownianError::ZeroRefinement);
    }
    if factor == 1 {
        return Ok(vec![parent.clone()]);
    }
    let nc = parent.dw.len();
    let h = parent.dt.as_f64() / factor as f64;
    let mut remaining: Vec<f64> = parent.dw.iter().map(|w| w.as_f64()).collect();
    let mut out = Vec::with_capacity(factor);
    for m in 0..factor - 1 {
        let left = (factor - m) as f64 * h;
        let mean_frac = h / left;
        let sd = (h * (left - h) / left).sqrt();
        let mut inc = BrownianIncrements::zeros(nc, T::lit(h));
        for (c, rem) in remaining.iter_mut().enumerate() {
            let piece = *rem * mean_frac + sd * stream.standard_normal();
            *rem -= piece;
            inc.dw[c] = T::lit(piece);
        }
        out.push(inc);
    }
    // the last piece absorbs the remainder so the sum is exact up to rounding
    let emitted = sum_increments(&out, parent.dt);
    let last = BrownianIncrements {
        dw: parent.dw.iter().zip(&emitted.dw).map(|(&p, &e)| p - e).collect(),
        dt: T::lit(h),
    };
    out.push(last);
    Ok(out)
}

/// One Brownian path on a uniform fine grid, shared between a coarse scheme
/// and a fine reference solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedPath<T> {
    pub steps: Vec<BrownianIncrements<T>>,
}

impl<T: Real> SharedPath<T> {
    pub fn fine_steps(&self) -> usize {
        self.steps.len()
    }

    /// Fine path consistent with one split step: each fast microstep is
    /// bridged into `per_micro` pieces and the slow macro increment into
    /// `micro.steps.len() * per_micro` pieces.
    pub fn from_split(
        micro: &MicroIncrements<T>,
        slow: &BrownianIncrements<T>,
        fast_channels: &[usize],
        slow_channels: &[usize],
        per_micro: usize,
        stream: &mut PathStream,
    ) -> Result<Self, BrownianError> {
        let n = micro.steps.len();
        let fine = n * per_micro;
        let slow_fine = refine_path(slow, fine, stream)?;
        let mut steps = Vec::with_capacity(fine);
        for (m, step) in micro.steps.iter().enumerate() {
            let pieces = refine_path(step, per_micro, stream)?;
            for (r, piece) in pieces.into_iter().enumerate() {
                let mut inc = BrownianIncrements::zeros(slow.dw.len(), piece.dt);
                for &k in fast_channels {
                    inc.dw[k] = piece.dw[k];
                }
                for &k in slow_channels {
                    inc.dw[k] = slow_fine[m * per_micro + r].dw[k];
                }
                steps.push(inc);
            }
        }
        Ok(Self { steps })
    }

    /// Fine path refining a single macro increment on all channels.
    pub fn from_macro(parent: &BrownianIncrements<T>, factor: usize, stream: &mut PathStream) -> Result<Self, BrownianError> {
        Ok(Self {
            steps: refine_path(parent, factor, stream)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_keys_give_equal_streams() {
        let mut a = PathStream::new(7, 3);
        let mut b = PathStream::new(7, 3);
        let x: BrownianIncrements<f64> = macro_increments(&mut a, 0.5, 4).unwrap();
        let y: BrownianIncrements<f64> = macro_increments(&mut b, 0.5, 4).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.counter(), 4);
        let mut c = PathStream::new(7, 4);
        let z: BrownianIncrements<f64> = macro_increments(&mut c, 0.5, 4).unwrap();
        assert_ne!(x, z);
        let mut d = PathStream::in_domain(7, 3, StreamDomain::Jump);
        let w: BrownianIncrements<f64> = macro_increments(&mut d, 0.5, 4).unwrap();
        assert_ne!(x, w);
    }

    #[test]
    fn zero_step_rejected() {
        let mut s = PathStream::new(1, 1);
        assert_eq!(
            macro_increments::<f64>(&mut s, 0.0, 2).unwrap_err(),
            BrownianError::NonPositiveStep(0.0)
        );
        assert_eq!(
            micro_increments::<f64>(&mut s, 0.1, 0, &[0], 1).unwrap_err(),
            BrownianError::ZeroRefinement
        );
    }

    #[test]
    fn single_microstep_is_the_macro_increment() {
        let mut s = PathStream::new(1, 1);
        let m: MicroIncrements<f64> = micro_increments(&mut s, 0.3, 1, &[1], 3).unwrap();
        assert_eq!(m.steps.len(), 1);
        assert_eq!(m.steps[0].dw, m.total.dw);
        assert_eq!(m.steps[0].dw[0], 0.0);
        assert_eq!(m.steps[0].dw[2], 0.0);
    }

    #[test]
    fn micro_total_is_bit_exact_sum() {
        let mut s = PathStream::new(11, 5);
        let m: MicroIncrements<f64> = micro_increments(&mut s, 0.02, 7, &[0, 2], 3).unwrap();
        let mut sum = vec![0.0; 3];
        for st in &m.steps {
            for c in 0..3 {
                sum[c] += st.dw[c];
            }
        }
        assert_eq!(sum, m.total.dw);
    }

    #[test]
    fn refinement_reconstructs_parent() {
        let mut s = PathStream::new(3, 9);
        let parent: BrownianIncrements<f64> = macro_increments(&mut s, 0.7, 3).unwrap();
        assert_eq!(refine_path(&parent, 1, &mut s).unwrap(), vec![parent.clone()]);
        let pieces = refine_path(&parent, 13, &mut s).unwrap();
        assert_eq!(pieces.len(), 13);
        let total = sum_increments(&pieces, 0.7);
        for c in 0..3 {
            assert!((total.dw[c] - parent.dw[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_path_matches_split_increments() {
        let mut s = PathStream::new(5, 2);
        let fast = [0usize];
        let slow = [1usize];
        let micro: MicroIncrements<f64> = micro_increments(&mut s, 0.01, 4, &fast, 2).unwrap();
        let slow_inc = masked_increments(&mut s, 0.01, 2, &slow).unwrap();
        let path = SharedPath::from_split(&micro, &slow_inc, &fast, &slow, 8, &mut s).unwrap();
        assert_eq!(path.fine_steps(), 32);
        for (m, step) in micro.steps.iter().enumerate() {
            let sub: f64 = path.steps[m * 8..(m + 1) * 8].iter().map(|p| p.dw[0]).sum();
            assert!((sub - step.dw[0]).abs() < 1e-12);
        }
        let slow_sum: f64 = path.steps.iter().map(|p| p.dw[1]).sum();
        assert!((slow_sum - slow_inc.dw[1]).abs() < 1e-12);
    }
}
