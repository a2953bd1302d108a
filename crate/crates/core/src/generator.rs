//! Corrected generator `L` on a partition.
//!
//! For every cell the neighbour set `N_ξ`, the drift `b(ξ)`, the corrector
//! `c(ξ) = A⁺(ξ) b(ξ)` and the second-moment matrix `Q(ξ)` are assembled into
//! a [`CellGenerator`]. The table of all cells plus a global validity report
//! forms a [`GeneratorTable`]; its off-diagonal rates are
//! `w(ξ,η) / q(ξ)` with `w(ξ,η) = (1 - c(ξ,η)) m(η)/m(O_ξ)`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::partition::Partition;
use crate::real::{dist, norm, Real};

/// Validity flags of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidityFlags {
    pub q_positive: bool,
    pub c_below_one: bool,
    pub rank_full: bool,
}

impl ValidityFlags {
    /// Usable for simulation: `q > 0` and `|c| < 1`. Rank deficiency is
    /// recorded but not disqualifying.
    pub fn is_valid(&self) -> bool {
        self.q_positive && self.c_below_one
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellGenerator<T> {
    pub cell_id: usize,
    pub is_boundary: bool,
    /// False for whole-space window cells whose `ρ`-ball leaves the window.
    pub active: bool,
    pub neighbors: Vec<usize>,
    /// `m(η)/m(O_ξ)` per neighbour.
    pub mass: Vec<T>,
    pub c: Vec<T>,
    pub weights: Vec<T>,
    pub b: Vec<T>,
    /// `d × d`, row-major.
    pub q_matrix: Vec<T>,
    pub q: T,
    /// Continuous second moment over `O_ξ` about `ξ̌`, `d × d`.
    pub q_tilde_matrix: Vec<T>,
    pub q_tilde: T,
    pub anchor_used: Vec<T>,
    pub epsilon: T,
    pub rho: T,
    pub rank: usize,
    pub valid: ValidityFlags,
}

impl<T: Real> CellGenerator<T> {
    pub fn max_abs_c(&self) -> T {
        self.c.iter().fold(T::zero(), |m, &c| m.max(c.abs()))
    }

    /// `Σ_{η ≠ ξ} w(ξ, η)`.
    pub fn off_diagonal_weight(&self) -> T {
        self.neighbors
            .iter()
            .zip(&self.weights)
            .filter(|(&j, _)| j != self.cell_id)
            .map(|(_, &w)| w)
            .sum()
    }
}

/// Global summary of a generator build. Statistics cover active cells.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorReport<T> {
    pub n_cells: usize,
    pub n_active: usize,
    pub n_boundary: usize,
    pub n_invalid: usize,
    pub n_rank_deficient: usize,
    pub n_absorbing: usize,
    pub max_eps_over_rho_interior: T,
    pub max_eps_over_rho_boundary: T,
    pub max_abs_c: T,
    pub min_q: T,
    pub min_q_over_rho2: T,
    /// Smallest `λ_min(Q)/ρ²` over interior cells.
    pub min_qeig_over_rho2_interior: T,
    pub c1: T,
    /// `None` when the `a₂` threshold could not be computed.
    pub c2: Option<T>,
    pub r_d: T,
    pub alpha: T,
    /// `inf q > 0` and `max |c| < 1`.
    pub condition_2_12_holds: bool,
    pub interior_eps_within_c1: bool,
    pub boundary_eps_within_c2: bool,
    /// `max |c| ρ / ε` over full-rank interior cells.
    pub c_constant_interior: T,
    /// `max |c| / (ε/ρ + ρ^α)` over full-rank boundary cells.
    pub c_constant_boundary: T,
    /// `max |q - q̃| / ((ε + 2ρ) ε)` over all cells.
    pub tracker_q_qtilde: T,
    /// `max |q - ρ²/(d+2)| / (ε ρ)` over interior cells.
    pub tracker_q_rho: T,
    /// `max ‖Q̃/q - I‖ / (ε/ρ)` over interior cells.
    pub tracker_qtilde_identity: T,
}

#[derive(Clone, Debug)]
pub struct GeneratorTable<T> {
    dim: usize,
    cells: Vec<CellGenerator<T>>,
    report: GeneratorReport<T>,
}

/// `N_ξ`: cells with centroid strictly inside `B(ξ̌, ρ(ξ))`, ascending ids.
pub fn neighbor_set<T: Real>(part: &Partition<T>, id: usize) -> Result<Vec<usize>> {
    part.neighbours(id)
}

/// Half-ball first-moment constant `2 / ((d+1) B(1/2, (d+1)/2))`.
pub fn beta_d<T: Real>(d: usize) -> T {
    use statrs::function::gamma::ln_gamma;
    let b = 0.5 * (d as f64 + 1.0);
    let ln_beta = ln_gamma(0.5) + ln_gamma(b) - ln_gamma(0.5 + b);
    T::lit(2.0 / ((d as f64 + 1.0) * ln_beta.exp()))
}

fn mass_ratios<T: Real>(part: &Partition<T>, nb: &[usize]) -> Vec<T> {
    let total: T = nb.iter().map(|&j| part.cells()[j].measure).sum();
    nb.iter()
        .map(|&j| part.cells()[j].measure / total)
        .collect()
}

/// `b(ξ) = Σ (η̄ - ξ̌) m(η)/m(O_ξ)`, minus `β_d ρ ν(ξ̂)` on boundary cells.
pub fn drift_b<T: Real>(part: &Partition<T>, id: usize, nb: &[usize]) -> Result<Vec<T>> {
    let cell = part.cell(id)?;
    let d = part.dim();
    let anchor = cell.anchor_point();
    let mut b = vec![T::zero(); d];
    for (&j, &w) in nb.iter().zip(&mass_ratios(part, nb)) {
        let eta = &part.cells()[j].centroid;
        for i in 0..d {
            b[i] = b[i] + (eta[i] - anchor[i]) * w;
        }
    }
    if cell.is_boundary {
        let nu = &cell
            .boundary_anchor
            .as_ref()
            .ok_or(Error::ScalesMissing)?
            .inward_normal;
        let s = beta_d::<T>(d) * part.rho(id);
        for i in 0..d {
            b[i] = b[i] - s * nu[i];
        }
    }
    Ok(b)
}

/// `Q(ξ) = Σ (η̄ - ξ̌)⊗(η̄ - ξ̌) m(η)/m(O_ξ)` and `q = tr Q / d`.
pub fn second_moment_q<T: Real>(
    part: &Partition<T>,
    id: usize,
    nb: &[usize],
) -> Result<(Vec<T>, T)> {
    let d = part.dim();
    let anchor = part.cell(id)?.anchor_point();
    let mut q = vec![T::zero(); d * d];
    for (&j, &w) in nb.iter().zip(&mass_ratios(part, nb)) {
        let eta = &part.cells()[j].centroid;
        for r in 0..d {
            for c in 0..d {
                q[r * d + c] = q[r * d + c] + (eta[r] - anchor[r]) * (eta[c] - anchor[c]) * w;
            }
        }
    }
    let tr = (0..d).map(|i| q[i * d + i]).sum::<T>() / T::of_usize(d);
    Ok((q, tr))
}

/// `c(ξ) = A⁺(ξ) b(ξ)` with `A_{ij} = (η̄_j - ξ̌)_i m(η_j)/m(O_ξ)`.
/// Returns the corrector and `rank(A)`.
pub fn corrector_c<T: Real>(
    part: &Partition<T>,
    id: usize,
    nb: &[usize],
    b: &[T],
    rank_tol: T,
) -> Result<(Vec<T>, usize)> {
    let d = part.dim();
    let anchor = part.cell(id)?.anchor_point();
    let mass = mass_ratios(part, nb);
    let n = nb.len();
    let mut a = DenseMatrix::zeros(d, n);
    for (col, (&j, &w)) in nb.iter().zip(&mass).enumerate() {
        let eta = &part.cells()[j].centroid;
        for i in 0..d {
            a[(i, col)] = (eta[i] - anchor[i]) * w;
        }
    }
    let pinv = a.pseudoinverse(rank_tol)?;
    Ok((pinv.matvec(b), a.rank(rank_tol)?))
}

fn bisect_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `a₁(t) = (1/(d+2)) (1-t)^{d+2} / (1+t)^d - t²`.
pub fn a1(d: usize, t: f64) -> f64 {
    (1.0 - t).powi(d as i32 + 2) / (1.0 + t).powi(d as i32) / (d as f64 + 2.0) - t * t
}

/// `a₂(t) = R_D^{-(d+2)} / (d+2) / (1+t)^d - t² - 2t`.
pub fn a2(d: usize, r_d: f64, t: f64) -> f64 {
    r_d.powi(-(d as i32 + 2)) / (d as f64 + 2.0) / (1.0 + t).powi(d as i32) - t * t - 2.0 * t
}

/// Admissible interior bound on `ε/ρ`: `0.99 ×` the smallest positive root of `a₁`.
pub fn threshold_c1<T: Real>(d: usize) -> Result<T> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    // a₁(0+) > 0 and a₁(1) = -1; a₁ is decreasing on (0, 1)
    Ok(T::lit(0.99 * bisect_root(|t| a1(d, t), 0.0, 1.0)))
}

/// Admissible boundary bound on `ε/ρ`: `0.99 ×` the smallest positive root of `a₂`.
pub fn threshold_c2<T: Real>(d: usize, r_d: T) -> Result<T> {
    let r = r_d.as_f64();
    if d == 0 || !(r > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and R_D > 1, got R_D = {r}"
        )));
    }
    if !(a2(d, r, 0.0) > 0.0) || a2(d, r, 1.0) >= 0.0 {
        return Err(Error::NoSignChange { upper: 1.0 });
    }
    Ok(T::lit(0.99 * bisect_root(|t| a2(d, r, t), 0.0, 1.0)))
}

/// Ratio `ρ / r` for the largest ball `B(e, r) ⊂ O_ξ` among the trial
/// centres `ξ̂ + sρν`, `s ∈ {0.3, 0.4, 0.5}`. The ball must stay inside
/// `D` and contain no quadrature node of a cell outside `N_ξ`.
fn inscribed_ratio<T: Real>(part: &Partition<T>, id: usize) -> Result<T> {
    let cell = part.cell(id)?;
    let bp = cell.boundary_anchor.as_ref().ok_or(Error::ScalesMissing)?;
    let rho = part.rho(id);
    let nb = part.neighbours(id)?;
    let d = part.dim();
    let mut best = T::zero();
    for s in [0.3, 0.4, 0.5] {
        let e: Vec<T> = (0..d)
            .map(|i| bp.location[i] + T::lit(s) * rho * bp.inward_normal[i])
            .collect();
        let mut r = part.domain().signed_distance_unchecked(&e).min(rho);
        if r <= T::zero() {
            continue;
        }
        for j in part.cells_meeting_ball(&e, r) {
            if nb.binary_search(&j).is_ok() {
                continue;
            }
            let other = &part.cells()[j];
            for k in 0..other.quad_len() {
                r = r.min(dist(other.quad_point(k), &e));
            }
        }
        best = best.max(r);
    }
    if best > T::zero() {
        Ok(rho / best)
    } else {
        Err(Error::NoInscribedBall(id))
    }
}

/// `R_D = 1.1 × max_ξ ρ/r` over boundary cells; `1` without boundary cells.
pub fn estimate_r_d<T: Real>(part: &Partition<T>) -> Result<T> {
    let ratios: Vec<T> = (0..part.len())
        .into_par_iter()
        .filter(|&id| part.cells()[id].is_boundary)
        .map(|id| inscribed_ratio(part, id))
        .collect::<Result<_>>()?;
    if ratios.is_empty() {
        return Ok(T::one());
    }
    Ok(T::lit(1.1) * ratios.into_iter().fold(T::zero(), T::max))
}

fn check_scale_relation<T: Real>(part: &Partition<T>) -> Result<()> {
    for c in part.cells() {
        let (delta, rho) = (part.delta(c.id), part.rho(c.id));
        let ok = if c.is_boundary {
            rho > delta
        } else {
            (rho - delta).abs() <= T::lit(1e-12) * delta
        };
        if !ok {
            return Err(Error::ScaleRelation {
                cell: c.id,
                rho: rho.as_f64(),
                delta: delta.as_f64(),
            });
        }
    }
    Ok(())
}

/// Assembles the generator data of one cell.
pub fn cell_generator<T: Real>(
    part: &Partition<T>,
    id: usize,
    rank_tol: T,
) -> Result<CellGenerator<T>> {
    let d = part.dim();
    let nb = neighbor_set(part, id)?;
    let mass = mass_ratios(part, &nb);
    let b = drift_b(part, id, &nb)?;
    let (c, rank) = corrector_c(part, id, &nb, &b, rank_tol)?;
    let (q_matrix, q) = second_moment_q(part, id, &nb)?;
    let mut q_tilde_matrix = q_matrix.clone();
    for (&j, &w) in nb.iter().zip(&mass) {
        for (qt, &cov) in q_tilde_matrix.iter_mut().zip(&part.cells()[j].covariance) {
            *qt = *qt + w * cov;
        }
    }
    let q_tilde = (0..d).map(|i| q_tilde_matrix[i * d + i]).sum::<T>() / T::of_usize(d);
    let weights: Vec<T> = c
        .iter()
        .zip(&mass)
        .map(|(&ci, &m)| (T::one() - ci) * m)
        .collect();
    let cell = &part.cells()[id];
    let max_c = c.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    Ok(CellGenerator {
        cell_id: id,
        is_boundary: cell.is_boundary,
        active: part.inside_window(id),
        valid: ValidityFlags {
            q_positive: q > T::zero(),
            c_below_one: max_c < T::one(),
            rank_full: rank == d,
        },
        neighbors: nb,
        mass,
        c,
        weights,
        b,
        q_matrix,
        q,
        q_tilde_matrix,
        q_tilde,
        anchor_used: cell.anchor_point().to_vec(),
        epsilon: part.epsilon(id)?,
        rho: part.rho(id),
        rank,
    })
}

/// Builds the generator for every cell of `part`.
///
/// Fails when scales are missing, when `ρ = δ` does not hold on interior
/// cells or `ρ > δ` on boundary cells, or when a neighbour set is empty.
/// Invalid cells are recorded in the report, not rejected.
pub fn assemble<T: Real>(part: &Partition<T>, rank_tol: T) -> Result<GeneratorTable<T>> {
    if !part.has_scales() {
        return Err(Error::ScalesMissing);
    }
    check_scale_relation(part)?;
    let cells: Vec<CellGenerator<T>> = (0..part.len())
        .into_par_iter()
        .map(|id| cell_generator(part, id, rank_tol))
        .collect::<Result<_>>()?;
    let d = part.dim();
    let c1 = threshold_c1(d)?;
    let r_d = estimate_r_d(part)?;
    let c2 = threshold_c2(d, r_d).ok();
    let alpha = part.domain().holder_alpha();
    let report = GeneratorReport::compute(d, &cells, c1, c2, r_d, alpha);
    Ok(GeneratorTable {
        dim: d,
        cells,
        report,
    })
}

impl<T: Real> GeneratorReport<T> {
    pub fn compute(
        d: usize,
        cells: &[CellGenerator<T>],
        c1: T,
        c2: Option<T>,
        r_d: T,
        alpha: T,
    ) -> Self {
        let zero = T::zero();
        let mut r = GeneratorReport {
            n_cells: cells.len(),
            n_active: 0,
            n_boundary: 0,
            n_invalid: 0,
            n_rank_deficient: 0,
            n_absorbing: 0,
            max_eps_over_rho_interior: zero,
            max_eps_over_rho_boundary: zero,
            max_abs_c: zero,
            min_q: T::infinity(),
            min_q_over_rho2: T::infinity(),
            min_qeig_over_rho2_interior: T::infinity(),
            c1,
            c2,
            r_d,
            alpha,
            condition_2_12_holds: false,
            interior_eps_within_c1: false,
            boundary_eps_within_c2: false,
            c_constant_interior: zero,
            c_constant_boundary: zero,
            tracker_q_qtilde: zero,
            tracker_q_rho: zero,
            tracker_qtilde_identity: zero,
        };
        let dd = T::of_usize(d);
        for g in cells.iter().filter(|g| g.active) {
            r.n_active += 1;
            let eps_rho = g.epsilon / g.rho;
            let rho2 = g.rho * g.rho;
            let max_c = g.max_abs_c();
            r.n_boundary += usize::from(g.is_boundary);
            r.n_invalid += usize::from(!g.valid.is_valid());
            r.n_rank_deficient += usize::from(!g.valid.rank_full);
            r.n_absorbing += usize::from(g.off_diagonal_weight() <= zero);
            r.max_abs_c = r.max_abs_c.max(max_c);
            r.min_q = r.min_q.min(g.q);
            r.min_q_over_rho2 = r.min_q_over_rho2.min(g.q / rho2);
            r.tracker_q_qtilde = r
                .tracker_q_qtilde
                .max((g.q - g.q_tilde).abs() / ((g.epsilon + T::lit(2.0) * g.rho) * g.epsilon));
            if g.is_boundary {
                r.max_eps_over_rho_boundary = r.max_eps_over_rho_boundary.max(eps_rho);
                if g.valid.rank_full {
                    r.c_constant_boundary = r
                        .c_constant_boundary
                        .max(max_c / (eps_rho + g.rho.powf(alpha)));
                }
                continue;
            }
            r.max_eps_over_rho_interior = r.max_eps_over_rho_interior.max(eps_rho);
            if g.valid.rank_full {
                r.c_constant_interior = r.c_constant_interior.max(max_c / eps_rho);
            }
            r.tracker_q_rho = r
                .tracker_q_rho
                .max((g.q - rho2 / (dd + T::lit(2.0))).abs() / (g.epsilon * g.rho));
            if let Ok(qm) = DenseMatrix::new(d, d, g.q_matrix.clone()) {
                if let Ok(l) = qm.min_quadratic_form() {
                    r.min_qeig_over_rho2_interior = r.min_qeig_over_rho2_interior.min(l / rho2);
                }
            }
            if g.q > zero {
                let mut m = g
                    .q_tilde_matrix
                    .iter()
                    .map(|&x| x / g.q)
                    .collect::<Vec<_>>();
                for i in 0..d {
                    m[i * d + i] = m[i * d + i] - T::one();
                }
                if let Ok(ev) = DenseMatrix::new(d, d, m).and_then(|m| m.symmetric_eigenvalues()) {
                    let nrm = ev.iter().fold(zero, |a, &x| a.max(x.abs()));
                    r.tracker_qtilde_identity = r.tracker_qtilde_identity.max(nrm / eps_rho);
                }
            } else {
                r.tracker_qtilde_identity = T::infinity();
            }
        }
        r.condition_2_12_holds = r.n_active > 0 && r.min_q > zero && r.max_abs_c < T::one();
        r.interior_eps_within_c1 = r.max_eps_over_rho_interior <= c1;
        r.boundary_eps_within_c2 =
            r.n_boundary == 0 || c2.is_some_and(|c2| r.max_eps_over_rho_boundary <= c2);
        r
    }

    /// `(key, value)` pairs for tabular output.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<T>| v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into());
        vec![
            ("n_cells", self.n_cells.to_string()),
            ("n_active", self.n_active.to_string()),
            ("n_boundary", self.n_boundary.to_string()),
            ("n_invalid", self.n_invalid.to_string()),
            ("n_rank_deficient", self.n_rank_deficient.to_string()),
            ("n_absorbing", self.n_absorbing.to_string()),
            (
                "max_eps_over_rho_interior",
                self.max_eps_over_rho_interior.to_string(),
            ),
            (
                "max_eps_over_rho_boundary",
                self.max_eps_over_rho_boundary.to_string(),
            ),
            ("max_abs_c", self.max_abs_c.to_string()),
            ("min_q", self.min_q.to_string()),
            ("min_q_over_rho2", self.min_q_over_rho2.to_string()),
            (
                "min_qeig_over_rho2_interior",
                self.min_qeig_over_rho2_interior.to_string(),
            ),
            ("c1", self.c1.to_string()),
            ("c2", opt(self.c2)),
            ("r_d", self.r_d.to_string()),
            ("alpha", self.alpha.to_string()),
            (
                "condition_2_12_holds",
                self.condition_2_12_holds.to_string(),
            ),
            (
                "interior_eps_within_c1",
                self.interior_eps_within_c1.to_string(),
            ),
            (
                "boundary_eps_within_c2",
                self.boundary_eps_within_c2.to_string(),
            ),
            ("c_constant_interior", self.c_constant_interior.to_string()),
            ("c_constant_boundary", self.c_constant_boundary.to_string()),
            ("tracker_q_qtilde", self.tracker_q_qtilde.to_string()),
            ("tracker_q_rho", self.tracker_q_rho.to_string()),
            (
                "tracker_qtilde_identity",
                self.tracker_qtilde_identity.to_string(),
            ),
        ]
    }
}

impl<T: Real> GeneratorTable<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[CellGenerator<T>] {
        &self.cells
    }

    pub fn cell(&self, id: usize) -> Result<&CellGenerator<T>> {
        self.cells.get(id).ok_or(Error::NoSuchCell(id))
    }

    pub fn report(&self) -> &GeneratorReport<T> {
        &self.report
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// `Lf(ξ) = (1/q(ξ)) Σ_η (f(η) - f(ξ)) w(ξ, η)`.
    pub fn apply(&self, f: &[T], id: usize) -> Result<T> {
        let g = self.cell(id)?;
        if !g.valid.is_valid() {
            return Err(Error::InvalidCell(id));
        }
        if f.len() != self.cells.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cells.len(),
                got: f.len(),
            });
        }
        let fx = f[id];
        let s: T = g
            .neighbors
            .iter()
            .zip(&g.weights)
            .map(|(&j, &w)| (f[j] - fx) * w)
            .sum();
        Ok(s / g.q)
    }

    /// Writes the edge list and per-cell table.
    pub fn write_csv(&self, edges_path: &Path, cells_path: &Path, header: &[String]) -> Result<()> {
        let d = self.dim;
        let mut e = BufWriter::new(std::fs::File::create(edges_path)?);
        for line in header {
            writeln!(e, "# {line}")?;
        }
        writeln!(e, "from,to,mass,c,weight")?;
        for g in &self.cells {
            for k in 0..g.neighbors.len() {
                writeln!(
                    e,
                    "{},{},{},{},{}",
                    g.cell_id, g.neighbors[k], g.mass[k], g.c[k], g.weights[k]
                )?;
            }
        }
        e.flush()?;

        let mut w = BufWriter::new(std::fs::File::create(cells_path)?);
        for line in header {
            writeln!(w, "# {line}")?;
        }
        for (k, v) in self.report.entries() {
            writeln!(w, "# report {k} = {v}")?;
        }
        let axes = |p: &str| {
            (1..=d)
                .map(|i| format!("{p}{i}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mat = |p: &str| {
            (1..=d)
                .flat_map(|i| (1..=d).map(move |j| format!("{p}{i}{j}")))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(
            w,
            "id,is_boundary,active,n_neighbors,q,q_tilde,eps,rho,max_abs_c,b_norm,q_positive,c_below_one,rank_full,rank,{},{},{},{}",
            axes("anchor"),
            axes("b"),
            mat("Q"),
            mat("Qt")
        )?;
        let join = |v: &[T]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        for g in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                g.cell_id,
                u8::from(g.is_boundary),
                u8::from(g.active),
                g.neighbors.len(),
                g.q,
                g.q_tilde,
                g.epsilon,
                g.rho,
                g.max_abs_c(),
                norm(&g.b),
                u8::from(g.valid.q_positive),
                u8::from(g.valid.c_below_one),
                u8::from(g.valid.rank_full),
                g.rank,
                join(&g.anchor_used),
                join(&g.b),
                join(&g.q_matrix),
                join(&g.q_tilde_matrix)
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads tables written by [`Self::write_csv`].
    pub fn read_csv(dim: usize, edges_path: &Path, cells_path: &Path) -> Result<Self> {
        for p in [edges_path, cells_path] {
            if !p.exists() {
                return Err(Error::MissingArtifact(p.display().to_string()));
            }
        }
        let d = dim;
        let art = |p: &Path, line: usize, msg: &str| Error::Artifact {
            path: p.display().to_string(),
            msg: format!("line {line}: {msg}"),
        };

        let mut meta: BTreeMap<String, String> = BTreeMap::new();
        let mut cells = Vec::new();
        let mut seen_header = false;
        for (ln, line) in BufReader::new(std::fs::File::open(cells_path)?)
            .lines()
            .enumerate()
        {
            let line = line?;
            if let Some(kv) = line.strip_prefix("# report ") {
                if let Some((k, v)) = kv.split_once(" = ") {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !seen_header {
                seen_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 + 2 * d + 2 * d * d {
                return Err(art(cells_path, ln + 1, "wrong field count"));
            }
            let num = |s: &str| {
                s.parse::<T>()
                    .map_err(|_| art(cells_path, ln + 1, "bad number"))
            };
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| art(cells_path, ln + 1, "bad integer"))
            };
            let vec_at = |a: usize, n: usize| {
                f[a..a + n]
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<Vec<T>>>()
            };
            let id = int(f[0])?;
            if id != cells.len() {
                return Err(art(cells_path, ln + 1, "ids must be consecutive"));
            }
            cells.push(CellGenerator {
                cell_id: id,
                is_boundary: f[1] == "1",
                active: f[2] == "1",
                neighbors: Vec::with_capacity(int(f[3])?),
                mass: Vec::new(),
                c: Vec::new(),
                weights: Vec::new(),
                q: num(f[4])?,
                q_tilde: num(f[5])?,
                epsilon: num(f[6])?,
                rho: num(f[7])?,
                valid: ValidityFlags {
                    q_positive: f[10] == "1",
                    c_below_one: f[11] == "1",
                    rank_full: f[12] == "1",
                },
                rank: int(f[13])?,
                anchor_used: vec_at(14, d)?,
                b: vec_at(14 + d, d)?,
                q_matrix: vec_at(14 + 2 * d, d * d)?,
                q_tilde_matrix: vec_at(14 + 2 * d + d * d, d * d)?,
            });
        }

        let mut seen_header = false;
        for (ln, line) in BufReader::new(std::fs::File::open(edges_path)?)
            .lines()
            .enumerate()
        {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !seen_header {
                seen_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(art(edges_path, ln + 1, "wrong field count"));
            }
            let num = |s: &str| {
                s.parse::<T>()
                    .map_err(|_| art(edges_path, ln + 1, "bad number"))
            };
            let from: usize = f[0]
                .parse()
                .map_err(|_| art(edges_path, ln + 1, "bad id"))?;
            let to: usize = f[1]
                .parse()
                .map_err(|_| art(edges_path, ln + 1, "bad id"))?;
            let g = cells
                .get_mut(from)
                .ok_or_else(|| art(edges_path, ln + 1, "unknown cell"))?;
            g.neighbors.push(to);
            g.mass.push(num(f[2])?);
            g.c.push(num(f[3])?);
            g.weights.push(num(f[4])?);
        }

        let get = |k: &str| -> Result<T> {
            meta.get(k)
                .and_then(|v| v.parse::<T>().ok())
                .ok_or_else(|| art(cells_path, 0, &format!("missing report entry {k}")))
        };
        let c2 = get("c2").ok().filter(|v| v.is_finite());
        let report =
            GeneratorReport::compute(d, &cells, get("c1")?, c2, get("r_d")?, get("alpha")?);
        Ok(GeneratorTable {
            dim: d,
            cells,
            report,
        })
    }
}
