//! Geometric oracles for the supported domains.
//!
//! A [`Domain`] answers containment, distance to the boundary, nearest
//! boundary point with its inward unit normal, and draws uniform samples.
//! Supported shapes are the whole space, axis-aligned boxes, balls, and
//! planar star-shaped domains whose boundary is the polar graph of a
//! trigonometric polynomial `r(θ)`.
//!
//! Tolerances are relative to the domain diameter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{dist, norm, Real};

/// Relative tolerance used for "on the closure" checks.
const CLOSURE_RTOL: f64 = 1e-12;
/// Grid resolution for the radial boundary search.
const RADIAL_GRID: usize = 1440;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain<T> {
    /// All of `R^d`. Empty boundary.
    WholeSpace { dim: usize },
    /// `prod_i (lo_i, hi_i)`.
    Box { lo: Vec<T>, hi: Vec<T> },
    /// Open ball.
    Ball { center: Vec<T>, radius: T },
    /// Planar star-shaped domain `{c + s(cos θ, sin θ) : 0 <= s < r(θ)}` with
    /// `r(θ) = r0 + Σ_k (cos_k cos kθ + sin_k sin kθ)`, `k = 1, 2, ...`.
    Radial {
        center: Vec<T>,
        r0: T,
        #[serde(default)]
        cos: Vec<T>,
        #[serde(default)]
        sin: Vec<T>,
    },
}

/// A point of `∂D` with the inward unit normal there.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint<T> {
    pub location: Vec<T>,
    pub inward_normal: Vec<T>,
}

impl<T: Real> Domain<T> {
    pub fn whole_space(dim: usize) -> Result<Self> {
        let d = Domain::WholeSpace { dim };
        d.validate()?;
        Ok(d)
    }

    pub fn cuboid(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        let d = Domain::Box { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(center: Vec<T>, radius: T) -> Result<Self> {
        let d = Domain::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn radial(center: Vec<T>, r0: T, cos: Vec<T>, sin: Vec<T>) -> Result<Self> {
        let d = Domain::Radial {
            center,
            r0,
            cos,
            sin,
        };
        d.validate()?;
        Ok(d)
    }

    /// Checks the shape invariants. Deserialized domains must pass this
    /// before use.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDomain(m.to_string()));
        match self {
            Domain::WholeSpace { dim } => {
                if *dim == 0 {
                    return bad("dimension must be positive");
                }
            }
            Domain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return bad("box bounds must be non-empty and of equal length");
                }
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite())
                {
                    return bad("box needs finite lo_i < hi_i on every axis");
                }
            }
            Domain::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return bad("ball center must be a finite non-empty point");
                }
                if !(*radius > T::zero()) || !radius.is_finite() {
                    return bad("ball radius must be positive");
                }
            }
            Domain::Radial {
                center,
                r0,
                cos,
                sin,
            } => {
                if center.len() != 2 {
                    return bad("radial domains are planar (center must have 2 coordinates)");
                }
                if !r0.is_finite() || cos.iter().chain(sin).any(|c| !c.is_finite()) {
                    return bad("radial coefficients must be finite");
                }
                let min_r = (0..RADIAL_GRID)
                    .map(|k| {
                        self.radius_at(T::lit(
                            std::f64::consts::TAU * k as f64 / RADIAL_GRID as f64,
                        ))
                    })
                    .fold(T::infinity(), T::min);
                if !(min_r > T::zero()) {
                    return bad("radial function must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::WholeSpace { dim } => *dim,
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } => center.len(),
            Domain::Radial { .. } => 2,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Domain::WholeSpace { .. })
    }

    /// Boxes are only Lipschitz; convergence results for them are heuristic.
    pub fn is_lipschitz_only(&self) -> bool {
        matches!(self, Domain::Box { .. })
    }

    /// Hölder exponent of the boundary normal (`C^{1,α}`). Smooth shapes
    /// report 1; boxes report 1 together with [`Self::is_lipschitz_only`].
    pub fn holder_alpha(&self) -> T {
        T::one()
    }

    /// Lebesgue measure, `None` for the whole space.
    pub fn measure(&self) -> Option<T> {
        match self {
            Domain::WholeSpace { .. } => None,
            Domain::Box { lo, hi } => Some(
                lo.iter()
                    .zip(hi)
                    .fold(T::one(), |acc, (&l, &h)| acc * (h - l)),
            ),
            Domain::Ball { center, radius } => {
                Some(unit_ball_volume::<T>(center.len()) * radius.powi(center.len() as i32))
            }
            Domain::Radial { r0, cos, sin, .. } => {
                let pi = T::PI();
                let harmonics: T = cos.iter().chain(sin).map(|&c| c * c).sum();
                Some(pi * *r0 * *r0 + pi / T::lit(2.0) * harmonics)
            }
        }
    }

    /// Diameter of the domain (an upper bound for radial domains).
    pub fn diameter(&self) -> T {
        match self {
            Domain::WholeSpace { .. } => T::infinity(),
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| (h - l) * (h - l))
                .sum::<T>()
                .sqrt(),
            Domain::Ball { radius, .. } => T::lit(2.0) * *radius,
            Domain::Radial { .. } => T::lit(2.0) * self.radial_bound(),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)` of a bounded domain.
    pub fn bounding_box(&self) -> Result<(Vec<T>, Vec<T>)> {
        match self {
            Domain::WholeSpace { .. } => Err(Error::Unbounded),
            Domain::Box { lo, hi } => Ok((lo.clone(), hi.clone())),
            Domain::Ball { center, radius } => Ok((
                center.iter().map(|&c| c - *radius).collect(),
                center.iter().map(|&c| c + *radius).collect(),
            )),
            Domain::Radial { center, .. } => {
                let r = self.radial_bound();
                Ok((
                    center.iter().map(|&c| c - r).collect(),
                    center.iter().map(|&c| c + r).collect(),
                ))
            }
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `x ∈ D` for the open domain.
    pub fn contains(&self, x: &[T]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[T]) -> bool {
        match self {
            Domain::WholeSpace { .. } => true,
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&v, (&l, &h))| l < v && v < h),
            Domain::Ball { center, radius } => dist(x, center) < *radius,
            Domain::Radial { center, .. } => {
                let (s, theta) = polar(x, center);
                s < self.radius_at(theta)
            }
        }
    }

    /// Signed distance to `∂D`: positive inside, negative outside.
    pub fn signed_distance(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        Ok(self.signed_distance_unchecked(x))
    }

    pub(crate) fn signed_distance_unchecked(&self, x: &[T]) -> T {
        match self {
            Domain::WholeSpace { .. } => T::infinity(),
            Domain::Box { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(&v, (&l, &h))| l <= v && v <= h);
                if inside {
                    x.iter()
                        .zip(lo.iter().zip(hi))
                        .map(|(&v, (&l, &h))| (v - l).min(h - v))
                        .fold(T::infinity(), T::min)
                } else {
                    let outside: T = x
                        .iter()
                        .zip(lo.iter().zip(hi))
                        .map(|(&v, (&l, &h))| {
                            let e = (l - v).max(v - h).max(T::zero());
                            e * e
                        })
                        .sum();
                    -outside.sqrt()
                }
            }
            Domain::Ball { center, radius } => *radius - dist(x, center),
            Domain::Radial { .. } => {
                let (_, d) = self.radial_nearest(x);
                if self.contains_unchecked(x) {
                    d
                } else {
                    -d
                }
            }
        }
    }

    /// Euclidean distance from `x ∈ closure(D)` to `∂D`; `+∞` for the whole
    /// space.
    pub fn dist_to_boundary(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        let sd = self.signed_distance_unchecked(x);
        if sd < -self.closure_tol() {
            return Err(Error::OutsideDomain);
        }
        Ok(sd.max(T::zero()))
    }

    fn closure_tol(&self) -> T {
        let diam = self.diameter();
        if diam.is_finite() {
            T::lit(CLOSURE_RTOL) * diam
        } else {
            T::zero()
        }
    }

    /// A nearest point of `∂D` to `x ∈ closure(D)` and the inward normal there.
    ///
    /// When several boundary points are nearest, the lexicographically
    /// smallest candidate is returned; the center of a ball maps to
    /// `center + radius·e_1`.
    pub fn nearest_boundary_point(&self, x: &[T]) -> Result<BoundaryPoint<T>> {
        self.check_dim(x)?;
        if !self.is_bounded() {
            return Err(Error::Unbounded);
        }
        if self.signed_distance_unchecked(x) < -self.closure_tol() {
            return Err(Error::OutsideDomain);
        }
        Ok(self.project_to_boundary(x))
    }

    /// Nearest boundary point for any `x` (inside or outside). Whole space
    /// is not supported and panics.
    pub(crate) fn project_to_boundary(&self, x: &[T]) -> BoundaryPoint<T> {
        match self {
            Domain::WholeSpace { .. } => panic!("whole space has no boundary"),
            Domain::Ball { center, radius } => {
                let diff: Vec<T> = x.iter().zip(center).map(|(&a, &c)| a - c).collect();
                let r = norm(&diff);
                let dir: Vec<T> = if r > T::zero() {
                    diff.iter().map(|&v| v / r).collect()
                } else {
                    let mut e = vec![T::zero(); center.len()];
                    e[0] = T::one();
                    e
                };
                BoundaryPoint {
                    location: center
                        .iter()
                        .zip(&dir)
                        .map(|(&c, &u)| c + *radius * u)
                        .collect(),
                    inward_normal: dir.iter().map(|&u| -u).collect(),
                }
            }
            Domain::Box { lo, hi } => box_projection(x, lo, hi, self.closure_tol()),
            Domain::Radial { center, .. } => {
                let (theta, _) = self.radial_nearest(x);
                let r = self.radius_at(theta);
                let (s, c) = theta.sin_cos();
                BoundaryPoint {
                    location: vec![center[0] + r * c, center[1] + r * s],
                    inward_normal: self.radial_inward_normal(theta),
                }
            }
        }
    }

    /// `n` i.i.d. uniform points of `D` (rejection from the bounding box).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<T>>> {
        let mut flat = Vec::with_capacity(n * self.dim());
        self.sample_uniform_into(n, rng, &mut flat)?;
        Ok(flat.chunks_exact(self.dim()).map(<[T]>::to_vec).collect())
    }

    /// Appends `n` uniform samples to a flat coordinate buffer.
    pub fn sample_uniform_into<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        out: &mut Vec<T>,
    ) -> Result<()> {
        let (lo, hi) = self.bounding_box()?;
        let d = self.dim();
        let mut p = vec![T::zero(); d];
        let mut accepted = 0;
        while accepted < n {
            for i in 0..d {
                let u: f64 = rng.random();
                p[i] = lo[i] + (hi[i] - lo[i]) * T::lit(u);
            }
            if self.contains_unchecked(&p) {
                out.extend_from_slice(&p);
                accepted += 1;
            }
        }
        Ok(())
    }

    /// `r(θ)` for radial domains.
    pub fn radius_at(&self, theta: T) -> T {
        match self {
            Domain::Radial { r0, cos, sin, .. } => {
                let mut r = *r0;
                for (k, &a) in cos.iter().enumerate() {
                    r = r + a * (T::of_usize(k + 1) * theta).cos();
                }
                for (k, &b) in sin.iter().enumerate() {
                    r = r + b * (T::of_usize(k + 1) * theta).sin();
                }
                r
            }
            _ => panic!("radius_at is only defined for radial domains"),
        }
    }

    fn radius_derivative_at(&self, theta: T) -> T {
        match self {
            Domain::Radial { cos, sin, .. } => {
                let mut dr = T::zero();
                for (k, &a) in cos.iter().enumerate() {
                    let kk = T::of_usize(k + 1);
                    dr = dr - a * kk * (kk * theta).sin();
                }
                for (k, &b) in sin.iter().enumerate() {
                    let kk = T::of_usize(k + 1);
                    dr = dr + b * kk * (kk * theta).cos();
                }
                dr
            }
            _ => T::zero(),
        }
    }

    fn radial_bound(&self) -> T {
        match self {
            Domain::Radial { r0, cos, sin, .. } => {
                r0.abs() + cos.iter().chain(sin).map(|c| c.abs()).sum::<T>()
            }
            _ => T::zero(),
        }
    }

    fn radial_point(&self, theta: T) -> [T; 2] {
        let Domain::Radial { center, .. } = self else {
            unreachable!()
        };
        let r = self.radius_at(theta);
        let (s, c) = theta.sin_cos();
        [center[0] + r * c, center[1] + r * s]
    }

    fn radial_inward_normal(&self, theta: T) -> Vec<T> {
        let r = self.radius_at(theta);
        let dr = self.radius_derivative_at(theta);
        let (s, c) = theta.sin_cos();
        // tangent of the counter-clockwise parametrisation
        let tx = dr * c - r * s;
        let ty = dr * s + r * c;
        let len = (tx * tx + ty * ty).sqrt();
        vec![-ty / len, tx / len]
    }

    /// Returns `(θ*, distance)` minimising `|x - p(θ)|` over the boundary
    /// curve: dense grid, then golden-section refinement around every grid
    /// local minimum.
    fn radial_nearest(&self, x: &[T]) -> (T, T) {
        let tau = T::TAU();
        let h = tau / T::of_usize(RADIAL_GRID);
        let d2 = |theta: T| {
            let p = self.radial_point(theta);
            (x[0] - p[0]) * (x[0] - p[0]) + (x[1] - p[1]) * (x[1] - p[1])
        };
        let grid: Vec<T> = (0..RADIAL_GRID).map(|k| d2(h * T::of_usize(k))).collect();
        let gmin = grid.iter().copied().fold(T::infinity(), T::min);
        let slack = T::lit(1e-6) * (gmin + self.diameter() * self.diameter() * T::lit(1e-12));
        let mut best: Option<(T, T, [T; 2])> = None;
        for k in 0..RADIAL_GRID {
            let prev = grid[(k + RADIAL_GRID - 1) % RADIAL_GRID];
            let next = grid[(k + 1) % RADIAL_GRID];
            if grid[k] > prev || grid[k] > next {
                continue;
            }
            // golden-section refinement on [θ_k - h, θ_k + h]
            let center_theta = h * T::of_usize(k);
            let (mut a, mut b) = (center_theta - h, center_theta + h);
            let g = T::lit(0.618_033_988_749_894_9);
            let mut c = b - g * (b - a);
            let mut e = a + g * (b - a);
            let (mut fc, mut fe) = (d2(c), d2(e));
            for _ in 0..80 {
                if fc < fe {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - g * (b - a);
                    fc = d2(c);
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + g * (b - a);
                    fe = d2(e);
                }
            }
            let mut theta = (a + b) / T::lit(2.0);
            let mut val = d2(theta);
            if grid[k] < val {
                theta = center_theta;
                val = grid[k];
            }
            let theta = theta.rem_euclid(tau);
            let p = self.radial_point(theta);
            best = match best {
                None => Some((theta, val, p)),
                Some((bt, bv, bp)) => {
                    if val < bv - slack {
                        Some((theta, val, p))
                    } else if val <= bv + slack && lex_less(&p, &bp) {
                        Some((theta, val.min(bv), p))
                    } else {
                        Some((bt, bv.min(val), bp))
                    }
                }
            };
        }
        let (theta, val, _) = best.expect("grid always has a minimum");
        (theta, val.max(T::zero()).sqrt())
    }
}

trait RemEuclid {
    fn rem_euclid(self, m: Self) -> Self;
}

impl<T: Real> RemEuclid for T {
    fn rem_euclid(self, m: T) -> T {
        let r = self % m;
        if r < T::zero() {
            r + m
        } else {
            r
        }
    }
}

fn lex_less<T: Real>(a: &[T], b: &[T]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn polar<T: Real>(x: &[T], center: &[T]) -> (T, T) {
    let dx = x[0] - center[0];
    let dy = x[1] - center[1];
    ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
}

fn box_projection<T: Real>(x: &[T], lo: &[T], hi: &[T], tol: T) -> BoundaryPoint<T> {
    let d = x.len();
    let inside = x
        .iter()
        .zip(lo.iter().zip(hi))
        .all(|(&v, (&l, &h))| l <= v && v <= h);
    if !inside {
        // nearest boundary point of an exterior point is the clamp
        let location: Vec<T> = x
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect();
        // normal of the face we are most outside of
        let mut axis = 0;
        let mut low = true;
        let mut worst = T::neg_infinity();
        for i in 0..d {
            let (gap, is_low) = if x[i] < lo[i] {
                (lo[i] - x[i], true)
            } else {
                (x[i] - hi[i], false)
            };
            if gap > worst {
                worst = gap;
                axis = i;
                low = is_low;
            }
        }
        let mut n = vec![T::zero(); d];
        n[axis] = if low { T::one() } else { -T::one() };
        return BoundaryPoint {
            location,
            inward_normal: n,
        };
    }
    let mut best_dist = T::infinity();
    for i in 0..d {
        best_dist = best_dist.min(x[i] - lo[i]).min(hi[i] - x[i]);
    }
    let mut best: Option<(Vec<T>, Vec<T>)> = None;
    for i in 0..d {
        for (face, is_low) in [(lo[i], true), (hi[i], false)] {
            let gap = (x[i] - face).abs();
            if gap > best_dist + tol {
                continue;
            }
            let mut loc = x.to_vec();
            loc[i] = face;
            let mut n = vec![T::zero(); d];
            n[i] = if is_low { T::one() } else { -T::one() };
            best = match best {
                Some((bl, bn)) if !lex_less(&loc, &bl) => Some((bl, bn)),
                _ => Some((loc, n)),
            };
        }
    }
    let (location, inward_normal) = best.expect("box has faces");
    BoundaryPoint {
        location,
        inward_normal,
    }
}

/// `ω_d = π^{d/2} / Γ(d/2 + 1)`.
pub fn unit_ball_volume<T: Real>(d: usize) -> T {
    let half_d = d as f64 / 2.0;
    T::lit(
        (half_d * std::f64::consts::PI.ln() - statrs::function::gamma::ln_gamma(half_d + 1.0))
            .exp(),
    )
}
