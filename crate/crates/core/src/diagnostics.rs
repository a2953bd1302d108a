//! Verification instruments.
//!
//! * Neumann test functions with analytic gradient, Hessian and Laplacian.
//! * Generator consistency error `|L(πf)(ξ) - Δf(ξ̄)/2|` with fitted bound
//!   constants.
//! * Half-ball moment and boundary symmetric-difference Monte-Carlo checks.
//! * Energy distance, two-sample KS and a permutation test.
//! * Bound trackers across refinement levels and the Hausdorff inequality.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::{beta_d, GeneratorReport, GeneratorTable};
use crate::geometry::{unit_ball_volume, Domain};
use crate::linalg::DenseMatrix;
use crate::partition::Partition;
use crate::real::{dist, dot, Real};
use crate::rng::{streams, substream};

#[derive(Clone, Debug, PartialEq)]
pub enum NeumannKind<T> {
    /// `g(r) = r² - r⁴/(2R²)`.
    RadialQuadratic { center: Vec<T>, radius: T },
    /// `g(r) = r⁴/4 - r⁶/(6R²)`.
    RadialQuartic { center: Vec<T>, radius: T },
    /// `x₁ (1 - r²/(3R²))` in coordinates centred at the ball centre.
    TiltedRadial { center: Vec<T>, radius: T },
    /// `∏ cos(k_i π (x_i - lo_i)/(hi_i - lo_i))`.
    CosineProduct { lo: Vec<T>, hi: Vec<T>, k: Vec<u32> },
    /// `(1 - |x-c|²/w²)⁴` inside `B(c, w)`, zero outside.
    Bump { center: Vec<T>, width: T },
}

/// A `C²` function with vanishing normal derivative on `∂D`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeumannTestFunction<T> {
    pub kind: NeumannKind<T>,
    pub description: String,
}

fn outer_add<T: Real>(h: &mut [T], a: &[T], b: &[T], s: T) {
    let d = a.len();
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] = h[i * d + j] + s * a[i] * b[j];
        }
    }
}

fn add_identity<T: Real>(h: &mut [T], d: usize, s: T) {
    for i in 0..d {
        h[i * d + i] = h[i * d + i] + s;
    }
}

impl<T: Real> NeumannTestFunction<T> {
    pub fn dim(&self) -> usize {
        match &self.kind {
            NeumannKind::RadialQuadratic { center, .. }
            | NeumannKind::RadialQuartic { center, .. }
            | NeumannKind::TiltedRadial { center, .. }
            | NeumannKind::Bump { center, .. } => center.len(),
            NeumannKind::CosineProduct { lo, .. } => lo.len(),
        }
    }

    fn centred(center: &[T], x: &[T]) -> Vec<T> {
        x.iter().zip(center).map(|(&a, &c)| a - c).collect()
    }

    pub fn value(&self, x: &[T]) -> T {
        match &self.kind {
            NeumannKind::RadialQuadratic { center, radius } => {
                let r2 = crate::real::dist2(x, center);
                r2 - r2 * r2 / (T::lit(2.0) * *radius * *radius)
            }
            NeumannKind::RadialQuartic { center, radius } => {
                let r2 = crate::real::dist2(x, center);
                r2 * r2 / T::lit(4.0) - r2 * r2 * r2 / (T::lit(6.0) * *radius * *radius)
            }
            NeumannKind::TiltedRadial { center, radius } => {
                let y = Self::centred(center, x);
                let r2 = dot(&y, &y);
                y[0] * (T::one() - r2 / (T::lit(3.0) * *radius * *radius))
            }
            NeumannKind::CosineProduct { lo, hi, k } => (0..lo.len())
                .map(|i| {
                    (T::of_usize(k[i] as usize) * T::PI() * (x[i] - lo[i]) / (hi[i] - lo[i])).cos()
                })
                .fold(T::one(), |a, b| a * b),
            NeumannKind::Bump { center, width } => {
                let s = crate::real::dist2(x, center) / (*width * *width);
                if s >= T::one() {
                    T::zero()
                } else {
                    (T::one() - s).powi(4)
                }
            }
        }
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        let two = T::lit(2.0);
        match &self.kind {
            NeumannKind::RadialQuadratic { center, radius } => {
                let y = Self::centred(center, x);
                let r2 = dot(&y, &y);
                let s = two - two * r2 / (*radius * *radius);
                y.iter().map(|&v| s * v).collect()
            }
            NeumannKind::RadialQuartic { center, radius } => {
                let y = Self::centred(center, x);
                let r2 = dot(&y, &y);
                let s = r2 - r2 * r2 / (*radius * *radius);
                y.iter().map(|&v| s * v).collect()
            }
            NeumannKind::TiltedRadial { center, radius } => {
                let y = Self::centred(center, x);
                let k = T::lit(3.0) * *radius * *radius;
                let r2 = dot(&y, &y);
                let mut g: Vec<T> = y.iter().map(|&v| -two * y[0] * v / k).collect();
                g[0] = g[0] + T::one() - r2 / k;
                g
            }
            NeumannKind::CosineProduct { lo, hi, k } => {
                let d = lo.len();
                let a: Vec<T> = (0..d)
                    .map(|i| T::of_usize(k[i] as usize) * T::PI() / (hi[i] - lo[i]))
                    .collect();
                let (s, c): (Vec<T>, Vec<T>) =
                    (0..d).map(|i| (a[i] * (x[i] - lo[i])).sin_cos()).unzip();
                (0..d)
                    .map(|i| {
                        (0..d).fold(-a[i] * s[i], |acc, j| if j == i { acc } else { acc * c[j] })
                    })
                    .collect()
            }
            NeumannKind::Bump { center, width } => {
                let y = Self::centred(center, x);
                let w2 = *width * *width;
                let s = dot(&y, &y) / w2;
                if s >= T::one() {
                    return vec![T::zero(); y.len()];
                }
                let dphi = -T::lit(4.0) * (T::one() - s).powi(3);
                y.iter().map(|&v| dphi * two * v / w2).collect()
            }
        }
    }

    /// Row-major `d × d` Hessian.
    pub fn hessian(&self, x: &[T]) -> Vec<T> {
        let d = self.dim();
        let two = T::lit(2.0);
        let mut h = vec![T::zero(); d * d];
        match &self.kind {
            NeumannKind::RadialQuadratic { center, radius } => {
                let y = Self::centred(center, x);
                let rr = *radius * *radius;
                add_identity(&mut h, d, two - two * dot(&y, &y) / rr);
                outer_add(&mut h, &y, &y, -T::lit(4.0) / rr);
            }
            NeumannKind::RadialQuartic { center, radius } => {
                let y = Self::centred(center, x);
                let rr = *radius * *radius;
                let r2 = dot(&y, &y);
                add_identity(&mut h, d, r2 - r2 * r2 / rr);
                outer_add(&mut h, &y, &y, two - T::lit(4.0) * r2 / rr);
            }
            NeumannKind::TiltedRadial { center, radius } => {
                let y = Self::centred(center, x);
                let s = -two / (T::lit(3.0) * *radius * *radius);
                for i in 0..d {
                    h[i * d] = h[i * d] + s * y[i];
                    h[i] = h[i] + s * y[i];
                }
                add_identity(&mut h, d, s * y[0]);
            }
            NeumannKind::CosineProduct { lo, hi, k } => {
                let a: Vec<T> = (0..d)
                    .map(|i| T::of_usize(k[i] as usize) * T::PI() / (hi[i] - lo[i]))
                    .collect();
                let (s, c): (Vec<T>, Vec<T>) =
                    (0..d).map(|i| (a[i] * (x[i] - lo[i])).sin_cos()).unzip();
                for i in 0..d {
                    for j in 0..d {
                        h[i * d + j] = (0..d).fold(T::one(), |acc, l| {
                            acc * if l == i && l == j {
                                -a[l] * a[l] * c[l]
                            } else if l == i || l == j {
                                -a[l] * s[l]
                            } else {
                                c[l]
                            }
                        });
                    }
                }
            }
            NeumannKind::Bump { center, width } => {
                let y = Self::centred(center, x);
                let w2 = *width * *width;
                let s = dot(&y, &y) / w2;
                if s < T::one() {
                    let dphi = -T::lit(4.0) * (T::one() - s).powi(3);
                    let d2phi = T::lit(12.0) * (T::one() - s).powi(2);
                    add_identity(&mut h, d, dphi * two / w2);
                    outer_add(&mut h, &y, &y, d2phi * T::lit(4.0) / (w2 * w2));
                }
            }
        }
        h
    }

    pub fn laplacian(&self, x: &[T]) -> T {
        let d = self.dim();
        let dd = T::of_usize(d);
        match &self.kind {
            NeumannKind::RadialQuadratic { center, radius } => {
                let r2 = crate::real::dist2(x, center);
                T::lit(2.0) * dd - (T::lit(2.0) * dd + T::lit(4.0)) * r2 / (*radius * *radius)
            }
            NeumannKind::RadialQuartic { center, radius } => {
                let r2 = crate::real::dist2(x, center);
                (dd + T::lit(2.0)) * r2 - (dd + T::lit(4.0)) * r2 * r2 / (*radius * *radius)
            }
            NeumannKind::TiltedRadial { center, radius } => {
                -(T::lit(2.0) * dd + T::lit(4.0)) * (x[0] - center[0])
                    / (T::lit(3.0) * *radius * *radius)
            }
            NeumannKind::CosineProduct { lo, hi, k } => {
                let s: T = (0..d)
                    .map(|i| {
                        let a = T::of_usize(k[i] as usize) * T::PI() / (hi[i] - lo[i]);
                        a * a
                    })
                    .sum();
                -s * self.value(x)
            }
            NeumannKind::Bump { center, width } => {
                let w2 = *width * *width;
                let s = crate::real::dist2(x, center) / w2;
                if s >= T::one() {
                    return T::zero();
                }
                let dphi = -T::lit(4.0) * (T::one() - s).powi(3);
                let d2phi = T::lit(12.0) * (T::one() - s).powi(2);
                d2phi * T::lit(4.0) * s / w2 + dphi * T::lit(2.0) * dd / w2
            }
        }
    }

    /// Operator norm of the Hessian at `x`.
    pub fn hessian_norm(&self, x: &[T]) -> T {
        let d = self.dim();
        DenseMatrix::new(d, d, self.hessian(x))
            .and_then(|m| m.symmetric_eigenvalues())
            .map(|ev| ev.iter().fold(T::zero(), |a, &v| a.max(v.abs())))
            .unwrap_or(T::infinity())
    }
}

/// Three Neumann test functions for `dom`.
pub fn test_functions<T: Real>(dom: &Domain<T>) -> Result<Vec<NeumannTestFunction<T>>> {
    match dom {
        Domain::Ball { center, radius } => Ok(vec![
            NeumannTestFunction {
                kind: NeumannKind::RadialQuadratic {
                    center: center.clone(),
                    radius: *radius,
                },
                description: "r^2 - r^4/(2R^2)".into(),
            },
            NeumannTestFunction {
                kind: NeumannKind::RadialQuartic {
                    center: center.clone(),
                    radius: *radius,
                },
                description: "r^4/4 - r^6/(6R^2)".into(),
            },
            NeumannTestFunction {
                kind: NeumannKind::TiltedRadial {
                    center: center.clone(),
                    radius: *radius,
                },
                description: "x1 (1 - r^2/(3R^2))".into(),
            },
        ]),
        Domain::Box { lo, hi } => {
            let d = lo.len();
            let mut third = vec![1u32; d];
            third[0] = 3;
            Ok([vec![1u32; d], vec![2u32; d], third]
                .into_iter()
                .map(|k| NeumannTestFunction {
                    description: format!("prod cos(k_i pi (x_i-lo_i)/L_i), k = {k:?}"),
                    kind: NeumannKind::CosineProduct {
                        lo: lo.clone(),
                        hi: hi.clone(),
                        k,
                    },
                })
                .collect())
        }
        Domain::WholeSpace { dim } => {
            let origin = vec![T::zero(); *dim];
            let mut shifted = origin.clone();
            shifted[0] = T::lit(0.3);
            Ok([(origin.clone(), 1.0), (origin, 0.6), (shifted, 0.8)]
                .into_iter()
                .map(|(c, w)| NeumannTestFunction {
                    description: format!("(1 - |x-c|^2/w^2)^4, c = {c:?}, w = {w}"),
                    kind: NeumannKind::Bump {
                        center: c,
                        width: T::lit(w),
                    },
                })
                .collect())
        }
        Domain::Radial { .. } => Err(Error::Unsupported(
            "no Neumann test functions for radial domains".into(),
        )),
    }
}

/// Largest `|⟨∇f, ν⟩|` over a deterministic boundary grid of `m` points per
/// face (box) or directions (ball).
pub fn neumann_residual<T: Real>(
    dom: &Domain<T>,
    f: &NeumannTestFunction<T>,
    m: usize,
) -> Result<T> {
    let pts = boundary_grid(dom, m)?;
    Ok(pts
        .iter()
        .map(|x| {
            let bp = dom.project_to_boundary(x);
            dot(&f.gradient(x), &bp.inward_normal).abs()
        })
        .fold(T::zero(), T::max))
}

fn boundary_grid<T: Real>(dom: &Domain<T>, m: usize) -> Result<Vec<Vec<T>>> {
    let d = dom.dim();
    match dom {
        Domain::Ball { center, radius } => {
            let dirs: Vec<Vec<f64>> = match d {
                1 => vec![vec![1.0], vec![-1.0]],
                2 => (0..m)
                    .map(|k| {
                        let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                        vec![t.cos(), t.sin()]
                    })
                    .collect(),
                _ => {
                    // Fibonacci sphere in the first three coordinates
                    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                    (0..m)
                        .map(|k| {
                            let z = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
                            let s = (1.0 - z * z).sqrt();
                            let mut v = vec![0.0; d];
                            v[0] = s * (golden * k as f64).cos();
                            v[1] = s * (golden * k as f64).sin();
                            v[2] = z;
                            v
                        })
                        .collect()
                }
            };
            Ok(dirs
                .into_iter()
                .map(|u| {
                    center
                        .iter()
                        .zip(&u)
                        .map(|(&c, &v)| c + *radius * T::lit(v))
                        .collect()
                })
                .collect())
        }
        Domain::Box { lo, hi } => {
            let mut out = Vec::new();
            let mut rng = substream(0, streams::DIAG_BASE);
            for axis in 0..d {
                for side in [lo[axis], hi[axis]] {
                    for _ in 0..m {
                        let mut x: Vec<T> = (0..d)
                            .map(|i| lo[i] + (hi[i] - lo[i]) * T::lit(rng.random::<f64>()))
                            .collect();
                        x[axis] = side;
                        out.push(x);
                    }
                }
            }
            Ok(out)
        }
        _ => Err(Error::Unsupported(
            "boundary grid needs a ball or box".into(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellError<T> {
    pub cell: usize,
    pub is_boundary: bool,
    pub error: T,
    pub eps_over_rho: T,
    pub delta_over_rho: T,
    pub rho_alpha: T,
    /// `sup ‖∇²f‖` over the sampled `ρ`-ball.
    pub hessian_sup: T,
    /// `sup ‖∇²f(y) - ∇²f(ξ̌)‖` over the sampled `ρ`-ball.
    pub hessian_osc: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport<T> {
    pub function: String,
    pub cells: Vec<CellError<T>>,
    pub sup_interior: T,
    pub sup_boundary: T,
    pub sup_all: T,
    /// `max e / ((ε/ρ) sup‖∇²f‖ + osc)` over interior cells.
    pub fitted_c_interior: T,
    /// `max e / (((ε ∨ δ)/ρ + ρ^α) sup‖∇²f‖ + osc)` over boundary cells.
    pub fitted_c_boundary: T,
    /// Cells skipped because they are inactive or invalid.
    pub skipped: usize,
}

/// 32 fixed points of the closed unit ball (the first is the centre).
fn ball_probe_points(d: usize) -> Vec<Vec<f64>> {
    let mut rng = substream(0, streams::DIAG_BASE + 1);
    let mut pts = vec![vec![0.0; d]];
    while pts.len() < 32 {
        let p: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            pts.push(p);
        }
    }
    pts
}

/// Per-cell consistency error `|L(πf)(ξ) - Δf(ξ̄)/2|` with `πf(ξ) = f(ξ̄)`.
pub fn consistency_error<T: Real>(
    gen: &GeneratorTable<T>,
    part: &Partition<T>,
    f: &NeumannTestFunction<T>,
) -> Result<ConsistencyReport<T>> {
    if f.dim() != part.dim() {
        return Err(Error::DimensionMismatch {
            expected: part.dim(),
            got: f.dim(),
        });
    }
    let values: Vec<T> = part.cells().iter().map(|c| f.value(&c.centroid)).collect();
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "test function not finite at centroid of cell {bad}"
        )));
    }
    let probes = ball_probe_points(part.dim());
    let alpha = part.domain().holder_alpha();
    let domain = part.domain();
    let rows: Vec<Option<CellError<T>>> = gen
        .cells()
        .par_iter()
        .map(|g| -> Result<Option<CellError<T>>> {
            if !g.active || !g.valid.is_valid() {
                return Ok(None);
            }
            let id = g.cell_id;
            let lf = gen.apply(&values, id)?;
            let centroid = &part.cells()[id].centroid;
            let target = f.laplacian(centroid) / T::lit(2.0);
            let anchor = &g.anchor_used;
            let h0 = f.hessian(anchor);
            let mut sup = T::zero();
            let mut osc = T::zero();
            for p in &probes {
                let y: Vec<T> = anchor
                    .iter()
                    .zip(p)
                    .map(|(&a, &v)| a + g.rho * T::lit(v))
                    .collect();
                if domain.is_bounded() && domain.signed_distance_unchecked(&y) < T::zero() {
                    continue;
                }
                sup = sup.max(f.hessian_norm(&y));
                let diff: Vec<T> = f
                    .hessian(&y)
                    .iter()
                    .zip(&h0)
                    .map(|(&a, &b)| a - b)
                    .collect();
                let dm = DenseMatrix::new(part.dim(), part.dim(), diff)?;
                let ev = dm.symmetric_eigenvalues()?;
                osc = osc.max(ev.iter().fold(T::zero(), |a, &v| a.max(v.abs())));
            }
            Ok(Some(CellError {
                cell: id,
                is_boundary: g.is_boundary,
                error: (lf - target).abs(),
                eps_over_rho: g.epsilon / g.rho,
                delta_over_rho: part.delta(id) / g.rho,
                rho_alpha: g.rho.powf(alpha),
                hessian_sup: sup,
                hessian_osc: osc,
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    let cells: Vec<CellError<T>> = rows.into_iter().flatten().collect();
    let zero = T::zero();
    let mut r = ConsistencyReport {
        function: f.description.clone(),
        sup_interior: zero,
        sup_boundary: zero,
        sup_all: zero,
        fitted_c_interior: zero,
        fitted_c_boundary: zero,
        skipped,
        cells: Vec::new(),
    };
    for c in &cells {
        r.sup_all = r.sup_all.max(c.error);
        let ratio = |bound: T| if bound > zero { c.error / bound } else { zero };
        if c.is_boundary {
            r.sup_boundary = r.sup_boundary.max(c.error);
            let bound = (c.eps_over_rho.max(c.delta_over_rho) + c.rho_alpha) * c.hessian_sup
                + c.hessian_osc;
            r.fitted_c_boundary = r.fitted_c_boundary.max(ratio(bound));
        } else {
            r.sup_interior = r.sup_interior.max(c.error);
            r.fitted_c_interior = r
                .fitted_c_interior
                .max(ratio(c.eps_over_rho * c.hessian_sup + c.hessian_osc));
        }
    }
    r.cells = cells;
    Ok(r)
}

/// Monte-Carlo moments over the upper half-ball `B₊(0, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfBallCheck {
    /// `(1/r) · mean(y)` per coordinate.
    pub first_moment: Vec<f64>,
    pub first_sigma: Vec<f64>,
    /// Expected `β_d e_d`.
    pub first_target: Vec<f64>,
    /// `mean(y ⊗ y)` row-major.
    pub second_moment: Vec<f64>,
    pub second_sigma: Vec<f64>,
    /// Expected `r²/(d+2) I`.
    pub second_target: Vec<f64>,
    /// Largest `|estimate - target| / σ` over both moments.
    pub max_z: f64,
    pub first_moment_error: f64,
    pub second_moment_error: f64,
}

pub fn halfball_moment_check(d: usize, r: f64, samples: usize, seed: u64) -> Result<HalfBallCheck> {
    if d == 0 || !(r > 0.0) {
        return Err(Error::InvalidArgument("need d >= 1 and r > 0".into()));
    }
    if samples < 10_000 {
        return Err(Error::InvalidArgument(
            "half-ball check needs at least 1e4 samples".into(),
        ));
    }
    let mut rng = substream(seed, streams::DIAG_BASE + 2);
    let mut s1 = vec![0.0; d];
    let mut s1q = vec![0.0; d];
    let mut s2 = vec![0.0; d * d];
    let mut s2q = vec![0.0; d * d];
    let mut y = vec![0.0; d];
    let mut n = 0;
    while n < samples {
        for (i, v) in y.iter_mut().enumerate() {
            let u: f64 = rng.random();
            *v = if i == d - 1 {
                r * u
            } else {
                r * (2.0 * u - 1.0)
            };
        }
        if y.iter().map(|v| v * v).sum::<f64>() > r * r {
            continue;
        }
        n += 1;
        for i in 0..d {
            let a = y[i] / r;
            s1[i] += a;
            s1q[i] += a * a;
            for j in 0..d {
                let b = y[i] * y[j];
                s2[i * d + j] += b;
                s2q[i * d + j] += b * b;
            }
        }
    }
    let nf = n as f64;
    let stats = |s: &[f64], q: &[f64]| -> (Vec<f64>, Vec<f64>) {
        s.iter()
            .zip(q)
            .map(|(&a, &b)| (a / nf, ((b / nf - (a / nf).powi(2)).max(0.0) / nf).sqrt()))
            .unzip()
    };
    let (first_moment, first_sigma) = stats(&s1, &s1q);
    let (second_moment, second_sigma) = stats(&s2, &s2q);
    let mut first_target = vec![0.0; d];
    first_target[d - 1] = beta_d::<f64>(d);
    let mut second_target = vec![0.0; d * d];
    for i in 0..d {
        second_target[i * d + i] = r * r / (d as f64 + 2.0);
    }
    let z = |est: &[f64], sig: &[f64], tgt: &[f64]| {
        est.iter()
            .zip(sig)
            .zip(tgt)
            .map(|((e, s), t)| if *s > 0.0 { (e - t).abs() / s } else { 0.0 })
            .fold(0.0, f64::max)
    };
    let err = |est: &[f64], tgt: &[f64]| {
        est.iter()
            .zip(tgt)
            .map(|(e, t)| (e - t).abs())
            .fold(0.0, f64::max)
    };
    Ok(HalfBallCheck {
        max_z: z(&first_moment, &first_sigma, &first_target).max(z(
            &second_moment,
            &second_sigma,
            &second_target,
        )),
        first_moment_error: err(&first_moment, &first_target),
        second_moment_error: err(&second_moment, &second_target),
        first_moment,
        first_sigma,
        first_target,
        second_moment,
        second_sigma,
        second_target,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymDiffEstimate {
    /// `m(B_D △ B₊)` estimate.
    pub measure: f64,
    pub sigma: f64,
    /// `measure / r^{d+α}`.
    pub ratio: f64,
}

/// Monte-Carlo `m(B_D(x,r) △ B₊(x,r))` for a boundary point `x`, where
/// `B_D = B(x,r) ∩ D` and `B₊` is the half of `B(x,r)` on the inner side of
/// the tangent plane.
pub fn boundary_symdiff_check<T: Real>(
    dom: &Domain<T>,
    x: &[T],
    r: T,
    samples: usize,
    seed: u64,
) -> Result<SymDiffEstimate> {
    if !dom.is_bounded() {
        return Err(Error::Unbounded);
    }
    if samples == 0 {
        return Err(Error::EmptySample);
    }
    let bp = dom.nearest_boundary_point(x)?;
    let d = dom.dim();
    let rf = r.as_f64();
    let mut rng = substream(seed, streams::DIAG_BASE + 3);
    let mut hits = 0usize;
    let mut n = 0usize;
    let mut u = vec![T::zero(); d];
    let mut y = vec![T::zero(); d];
    while n < samples {
        for v in u.iter_mut() {
            *v = T::lit(2.0 * rng.random::<f64>() - 1.0);
        }
        if dot(&u, &u) > T::one() {
            continue;
        }
        n += 1;
        for i in 0..d {
            y[i] = bp.location[i] + r * u[i];
        }
        let in_d = dom.contains_unchecked(&y);
        let in_half = dot(&u, &bp.inward_normal) > T::zero();
        hits += usize::from(in_d != in_half);
    }
    let vol = unit_ball_volume::<f64>(d) * rf.powi(d as i32);
    let p = hits as f64 / n as f64;
    let measure = vol * p;
    let sigma = vol * (p * (1.0 - p) / n as f64).sqrt();
    let scale = rf.powf(d as f64 + dom.holder_alpha().as_f64());
    Ok(SymDiffEstimate {
        measure,
        sigma,
        ratio: measure / scale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoSample {
    pub energy: f64,
    /// Two-sample Kolmogorov–Smirnov statistic, `d = 1` only.
    pub ks: Option<f64>,
}

fn check_samples<T: Real>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let d = a[0].len();
    if let Some(p) = a.iter().chain(b).find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.len(),
        });
    }
    Ok(d)
}

fn mean_pair_dist<T: Real>(a: &[Vec<T>], b: &[Vec<T>]) -> f64 {
    // rows are summed in order so the result does not depend on thread scheduling
    let rows: Vec<f64> = a
        .par_iter()
        .map(|x| b.iter().map(|y| dist(x, y).as_f64()).sum::<f64>())
        .collect();
    let s: f64 = rows.iter().sum();
    s / (a.len() * b.len()) as f64
}

/// Energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` (V-statistic) and, in one
/// dimension, the KS statistic.
pub fn two_sample_distance<T: Real>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<TwoSample> {
    let d = check_samples(a, b)?;
    let energy = 2.0 * mean_pair_dist(a, b) - mean_pair_dist(a, a) - mean_pair_dist(b, b);
    let ks = (d == 1).then(|| {
        let mut xa: Vec<f64> = a.iter().map(|p| p[0].as_f64()).collect();
        let mut xb: Vec<f64> = b.iter().map(|p| p[0].as_f64()).collect();
        xa.sort_by(f64::total_cmp);
        xb.sort_by(f64::total_cmp);
        let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
        while i < xa.len() && j < xb.len() {
            let v = xa[i].min(xb[j]);
            while i < xa.len() && xa[i] <= v {
                i += 1;
            }
            while j < xb.len() && xb[j] <= v {
                j += 1;
            }
            best = best.max((i as f64 / xa.len() as f64 - j as f64 / xb.len() as f64).abs());
        }
        best
    });
    Ok(TwoSample { energy, ks })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    /// 95% quantile of the permutation null.
    pub null_q95: f64,
    pub permutations: usize,
}

impl PermutationTest {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Energy-distance permutation test: `p = (1 + #{null ≥ observed}) / (1 + B)`.
pub fn permutation_test<T: Real>(
    a: &[Vec<T>],
    b: &[Vec<T>],
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    check_samples(a, b)?;
    let pooled: Vec<&Vec<T>> = a.iter().chain(b).collect();
    let n = pooled.len();
    // packed upper triangle: row i holds d(i, j) for j > i
    let row_start: Vec<usize> = (0..n)
        .scan(0usize, |acc, i| {
            let s = *acc;
            *acc += n - 1 - i;
            Some(s)
        })
        .collect();
    let mut tri = vec![0f32; n * (n - 1) / 2];
    tri.par_chunks_mut(1.max(n))
        .enumerate()
        .for_each(|(chunk, out)| {
            // chunks are not row-aligned; recover (i, j) per flat index
            let base = chunk * n.max(1);
            for (off, v) in out.iter_mut().enumerate() {
                let k = base + off;
                let i = row_start.partition_point(|&s| s <= k) - 1;
                let j = i + 1 + (k - row_start[i]);
                *v = dist(pooled[i], pooled[j]).as_f64() as f32;
            }
        });
    let (na, nb) = (a.len(), b.len());
    let stat = |label: &[bool]| -> f64 {
        // label[i] = true for the first sample
        let (saa, sbb, sab) = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = &tri[row_start[i]..row_start[i] + (n - 1 - i)];
                let (mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64);
                for (off, &v) in row.iter().enumerate() {
                    let j = i + 1 + off;
                    match (label[i], label[j]) {
                        (true, true) => aa += v as f64,
                        (false, false) => bb += v as f64,
                        _ => ab += v as f64,
                    }
                }
                (aa, bb, ab)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2));
        2.0 * sab / (na * nb) as f64 - 2.0 * saa / (na * na) as f64 - 2.0 * sbb / (nb * nb) as f64
    };
    let mut label: Vec<bool> = (0..n).map(|i| i < na).collect();
    let observed = stat(&label);
    let mut rng = substream(seed, streams::DIAG_BASE + 4);
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        label.shuffle(&mut rng);
        null.push(stat(&label));
    }
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    null.sort_by(f64::total_cmp);
    let q95 = if null.is_empty() {
        f64::NAN
    } else {
        null[((0.95 * null.len() as f64).ceil() as usize).clamp(1, null.len()) - 1]
    };
    Ok(PermutationTest {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        null_q95: q95,
        permutations,
    })
}

/// Per-level tracker values and growth relative to the coarsest level.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerReport {
    pub names: Vec<&'static str>,
    /// `values[level][tracker]`.
    pub values: Vec<Vec<f64>>,
    /// `max_l v_l / v_0` per tracker; `None` with fewer than two levels.
    pub growth: Option<Vec<f64>>,
    /// Every level satisfies `|q - q̃| ≤ (ε + 2ρ) ε` cellwise.
    pub q_qtilde_bound_holds: bool,
}

impl TrackerReport {
    /// No tracker grows by more than `factor` (vacuous for one level).
    pub fn bounded(&self, factor: f64) -> bool {
        self.growth
            .as_ref()
            .is_none_or(|g| g.iter().all(|&x| x <= factor))
    }
}

pub fn bound_trackers<T: Real>(levels: &[&GeneratorReport<T>]) -> TrackerReport {
    let names = vec!["q_qtilde", "q_rho", "qtilde_identity"];
    let values: Vec<Vec<f64>> = levels
        .iter()
        .map(|r| {
            vec![
                r.tracker_q_qtilde.as_f64(),
                r.tracker_q_rho.as_f64(),
                r.tracker_qtilde_identity.as_f64(),
            ]
        })
        .collect();
    let growth = (levels.len() >= 2).then(|| {
        (0..names.len())
            .map(|k| {
                let base = values[0][k];
                let top = values
                    .iter()
                    .map(|v| v[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                if base > 0.0 {
                    top / base
                } else if top > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            })
            .collect()
    });
    TrackerReport {
        q_qtilde_bound_holds: values.iter().all(|v| v[0] <= 1.0),
        names,
        values,
        growth,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HausdorffReport {
    pub pairs: usize,
    pub violations: usize,
    /// Largest `|d_H(ξ,z) - |ξ̄ - z|| - ε(ξ)`; non-positive when all pairs pass.
    pub max_excess: f64,
}

/// Checks `|d_H(ξ, z) - |ξ̄ - z|| ≤ ε(ξ)` on random cells and uniform points
/// `z` of `D` (of the lattice window for the whole space).
pub fn hausdorff_check<T: Real>(
    part: &Partition<T>,
    pairs: usize,
    seed: u64,
) -> Result<HausdorffReport> {
    let mut rng = substream(seed, streams::DIAG_BASE + 5);
    let sampler = match (part.domain().is_bounded(), part.window()) {
        (true, _) => part.domain().clone(),
        (false, Some((lo, hi))) => Domain::cuboid(lo.clone(), hi.clone())?,
        (false, None) => return Err(Error::Unbounded),
    };
    let mut report = HausdorffReport {
        pairs,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
    };
    for _ in 0..pairs {
        let id = rng.random_range(0..part.len());
        let z = sampler.sample_uniform(1, &mut rng)?.remove(0);
        let dh = part.hausdorff_to_point(id, &z)?;
        let gap = (dh - dist(&part.cells()[id].centroid, &z)).abs();
        let eps = if part.has_scales() {
            part.epsilon(id)?
        } else {
            part.cells()[id].radius_bound
        };
        let excess = (gap - eps).as_f64();
        report.violations += usize::from(excess > 0.0);
        report.max_excess = report.max_excess.max(excess);
    }
    Ok(report)
}
