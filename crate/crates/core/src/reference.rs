//! Reference processes: Brownian motion and reflected Brownian motion by a
//! reflected Euler scheme. Ball domains use projection onto the boundary,
//! box domains use coordinatewise mirror reflection.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::real::{dist, Real};
use crate::rng::{streams, substream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ProjectionReflection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbmConfig<T> {
    pub domain: Domain<T>,
    pub dt: T,
    pub horizon: T,
    pub scheme: Scheme,
}

impl<T: Real> RbmConfig<T> {
    /// `dt` defaults to `horizon · 1e-4`.
    pub fn new(domain: Domain<T>, horizon: T, dt: Option<T>) -> Result<Self> {
        let dt = dt.unwrap_or(horizon * T::lit(1e-4));
        if !(dt > T::zero()) || dt > horizon {
            return Err(Error::InvalidArgument("need 0 < dt <= horizon".into()));
        }
        match domain {
            Domain::Ball { .. } | Domain::Box { .. } | Domain::WholeSpace { .. } => {}
            Domain::Radial { .. } => {
                return Err(Error::Unsupported(
                    "reflected reference process on radial domains".into(),
                ))
            }
        }
        Ok(RbmConfig {
            domain,
            dt,
            horizon,
            scheme: Scheme::ProjectionReflection,
        })
    }

    /// Number of steps and the (possibly shortened) step size covering the horizon exactly.
    fn steps(&self) -> (usize, T) {
        let n = (self.horizon / self.dt)
            .round()
            .to_usize()
            .unwrap_or(1)
            .max(1);
        (n, self.horizon / T::of_usize(n))
    }
}

fn gaussian_step<T: Real, R: Rng + ?Sized>(x: &mut [T], sd: T, rng: &mut R) -> T {
    let mut len2 = T::zero();
    for v in x.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        let dz = sd * T::lit(z);
        len2 = len2 + dz * dz;
        *v = *v + dz;
    }
    len2.sqrt()
}

/// Brownian path `x0, x1, …` on the grid `k·dt'` with `dt' = horizon/round(horizon/dt)`.
pub fn simulate_bm<T: Real, R: Rng + ?Sized>(
    x0: &[T],
    horizon: T,
    dt: T,
    rng: &mut R,
) -> Result<Vec<Vec<T>>> {
    if !(dt > T::zero()) || dt > horizon {
        return Err(Error::InvalidArgument("need 0 < dt <= horizon".into()));
    }
    let n = (horizon / dt).round().to_usize().unwrap_or(1).max(1);
    let sd = (horizon / T::of_usize(n)).sqrt();
    let mut path = Vec::with_capacity(n + 1);
    let mut x = x0.to_vec();
    path.push(x.clone());
    for _ in 0..n {
        gaussian_step(&mut x, sd, rng);
        path.push(x.clone());
    }
    Ok(path)
}

fn mirror<T: Real>(v: T, lo: T, hi: T) -> T {
    let len = hi - lo;
    let mut y = (v - lo) % (len + len);
    if y < T::zero() {
        y = y + len + len;
    }
    if y > len {
        y = len + len - y;
    }
    (lo + y).max(lo).min(hi)
}

/// Maps a post-step point back into `closure(D)`.
fn reflect<T: Real>(domain: &Domain<T>, x: &mut [T]) {
    match domain {
        Domain::Ball { center, radius } => {
            if dist(x, center) > *radius {
                let bp = domain.project_to_boundary(x);
                x.copy_from_slice(&bp.location);
                // guard against the projected point rounding outside
                while dist(x, center) > *radius {
                    for (v, &c) in x.iter_mut().zip(center) {
                        *v = c + (*v - c) * (T::one() - T::epsilon());
                    }
                }
            }
        }
        Domain::Box { lo, hi } => {
            for i in 0..x.len() {
                x[i] = mirror(x[i], lo[i], hi[i]);
            }
        }
        Domain::WholeSpace { .. } | Domain::Radial { .. } => {}
    }
}

fn check_start<T: Real>(domain: &Domain<T>, x0: &[T]) -> Result<()> {
    if x0.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: x0.len(),
        });
    }
    if domain.is_bounded() && domain.signed_distance(x0)? < T::zero() {
        return Err(Error::OutsideDomain);
    }
    Ok(())
}

fn rbm_run<T: Real, R: Rng + ?Sized>(
    cfg: &RbmConfig<T>,
    x0: &[T],
    rng: &mut R,
    mut record: impl FnMut(&[T]),
) -> Result<()> {
    check_start(&cfg.domain, x0)?;
    let (n, h) = cfg.steps();
    let sd = h.sqrt();
    let diam = cfg.domain.diameter();
    let mut x = x0.to_vec();
    record(&x);
    for _ in 0..n {
        let step = gaussian_step(&mut x, sd, rng);
        if step > diam {
            return Err(Error::StepTooLarge {
                step: step.as_f64(),
                diameter: diam.as_f64(),
            });
        }
        reflect(&cfg.domain, &mut x);
        record(&x);
    }
    Ok(())
}

/// Reflected Euler path from `x0 ∈ closure(D)`; every point lies in `closure(D)`.
pub fn simulate_rbm<T: Real, R: Rng + ?Sized>(
    cfg: &RbmConfig<T>,
    x0: &[T],
    rng: &mut R,
) -> Result<Vec<Vec<T>>> {
    let mut path = Vec::with_capacity(cfg.steps().0 + 1);
    rbm_run(cfg, x0, rng, |x| path.push(x.to_vec()))?;
    Ok(path)
}

/// Terminal point only.
pub fn rbm_terminal<T: Real, R: Rng + ?Sized>(
    cfg: &RbmConfig<T>,
    x0: &[T],
    rng: &mut R,
) -> Result<Vec<T>> {
    let mut last = Vec::new();
    rbm_run(cfg, x0, rng, |x| {
        last.clear();
        last.extend_from_slice(x);
    })?;
    Ok(last)
}

/// Terminal points of `replicas` independent paths; replica `r` uses stream
/// `RBM_BASE + r`.
pub fn terminal_marginals<T: Real>(
    cfg: &RbmConfig<T>,
    x0: &[T],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| rbm_terminal(cfg, x0, &mut substream(seed, streams::RBM_BASE + r as u64)))
        .collect()
}
