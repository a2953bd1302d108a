//! Partitions of `closure(D)` and per-cell geometry.
//!
//! Two builders are provided. Cubic lattice cells are exact: measure,
//! centroid, radius bound and second moments come from closed forms, and
//! cells clipped by a box domain are handled exactly as well. Voronoi cells
//! of sampled sites are represented by Monte-Carlo quadrature: `D` is
//! sampled uniformly, every sample is assigned to its nearest site, and the
//! cell quantities are sample statistics.
//!
//! After construction the scales `δ` and `ρ` are attached with
//! [`Partition::assign_scales`], which also classifies boundary cells.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryPoint, Domain};
use crate::real::{dist, dist2, Real};
use crate::rng::{streams, substream};
use crate::spatial::KdTree;

/// Samples drawn per Monte-Carlo batch; batches are the unit of parallelism.
const MC_BATCH: usize = 1 << 15;

/// One element of a partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell<T> {
    pub id: usize,
    /// Voronoi site or lattice point.
    pub site: Vec<T>,
    pub measure: T,
    /// Monte-Carlo standard error of `measure` (zero for exact cells).
    pub measure_sigma: T,
    pub centroid: Vec<T>,
    /// `d × d` second-moment tensor about the centroid, `⨍ (y-ȳ)⊗(y-ȳ)`.
    pub covariance: Vec<T>,
    /// Upper bound for `sup_{y ∈ ξ} |y - ξ̄|`.
    pub radius_bound: T,
    pub is_boundary: bool,
    /// Nearest boundary point of the centroid; present iff `is_boundary`.
    pub boundary_anchor: Option<BoundaryPoint<T>>,
    /// Flat quadrature nodes (`d` coordinates each).
    pub quad_points: Vec<T>,
    pub quad_weights: Vec<T>,
}

impl<T: Real> Cell<T> {
    pub fn quad_len(&self) -> usize {
        self.quad_weights.len()
    }

    pub fn quad_point(&self, k: usize) -> &[T] {
        let d = self.centroid.len();
        &self.quad_points[k * d..(k + 1) * d]
    }

    /// `ξ̌`: the boundary anchor for boundary cells, the centroid otherwise.
    pub fn anchor_point(&self) -> &[T] {
        match &self.boundary_anchor {
            Some(bp) if self.is_boundary => &bp.location,
            _ => &self.centroid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionKind {
    Lattice {
        n: usize,
    },
    Voronoi {
        n: usize,
        mc_per_cell: usize,
        seed: u64,
    },
}

/// Scale parameters recorded for a refinement level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelParams<T> {
    pub n: usize,
    pub a_n: T,
    pub b_n: T,
}

/// Scale sequences `(a_n, b_n)` for a refinement study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ScaleSchedule {
    /// `a_n = k_a (log n / n)^{1/d} · L_n`, `b_n = b_factor · a_n · L_n`
    /// with `L_n = log log max(n, 3)`.
    LogLog {
        k_a: f64,
        #[serde(default = "one")]
        b_factor: f64,
    },
    /// `a_n = k_a / n`, `b_n = 2 a_n`: lattice scaling in units of the
    /// mesh width.
    Mesh { k_a: f64 },
    /// `a_n = k_a (log n / n)^{gamma/d}`, `b_n = k_b · a_n^theta`.
    Power {
        k_a: f64,
        gamma: f64,
        k_b: f64,
        theta: f64,
    },
    /// Explicit values, one per level.
    Explicit { a: Vec<f64>, b: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl ScaleSchedule {
    /// `(a_n, b_n)` for level `n` (index `level` in the study).
    pub fn scales(&self, n: usize, level: usize, dim: usize) -> Result<(f64, f64)> {
        match self {
            ScaleSchedule::LogLog { k_a, b_factor } => {
                let nf = n as f64;
                let ll = (nf.max(3.0)).ln().ln();
                let a = k_a * (nf.ln().max(1.0) / nf).powf(1.0 / dim as f64) * ll;
                Ok((a, b_factor * a * ll))
            }
            ScaleSchedule::Power {
                k_a,
                gamma,
                k_b,
                theta,
            } => {
                let nf = n as f64;
                let a = k_a * (nf.ln().max(1.0) / nf).powf(gamma / dim as f64);
                Ok((a, k_b * a.powf(*theta)))
            }
            ScaleSchedule::Mesh { k_a } => {
                let a = k_a / n as f64;
                Ok((a, 2.0 * a))
            }
            ScaleSchedule::Explicit { a, b } => match (a.get(level), b.get(level)) {
                (Some(&a), Some(&b)) => Ok((a, b)),
                _ => Err(Error::Config(format!(
                    "explicit scale list has no entry for level {level}"
                ))),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Partition<T> {
    domain: Domain<T>,
    kind: PartitionKind,
    cells: Vec<Cell<T>>,
    centroid_index: KdTree<T>,
    max_radius_bound: T,
    /// Window of a whole-space lattice.
    window: Option<(Vec<T>, Vec<T>)>,
    delta: Vec<T>,
    rho: Vec<T>,
    level: Option<LevelParams<T>>,
}

impl<T: Real> Partition<T> {
    fn from_cells(
        domain: Domain<T>,
        kind: PartitionKind,
        cells: Vec<Cell<T>>,
        window: Option<(Vec<T>, Vec<T>)>,
    ) -> Self {
        let dim = domain.dim();
        let flat: Vec<T> = cells
            .iter()
            .flat_map(|c| c.centroid.iter().copied())
            .collect();
        let max_radius_bound = cells.iter().map(|c| c.radius_bound).fold(T::zero(), T::max);
        Partition {
            centroid_index: KdTree::new(flat, dim),
            domain,
            kind,
            cells,
            max_radius_bound,
            window,
            delta: Vec::new(),
            rho: Vec::new(),
            level: None,
        }
    }

    /// Cubic cells `∏[x_i - 1/(2n), x_i + 1/(2n)]`, `x ∈ n⁻¹ℤ^d`.
    ///
    /// For a box domain the cells meeting the box are clipped to it. For the
    /// whole space `window` selects the lattice points kept (closed box).
    /// Every cell carries a `quad_per_axis^d` midpoint quadrature.
    pub fn lattice(
        domain: &Domain<T>,
        n: usize,
        window: Option<(Vec<T>, Vec<T>)>,
        quad_per_axis: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "lattice resolution must be at least 1".into(),
            ));
        }
        let d = domain.dim();
        let nn = T::of_usize(n);
        let h = T::one() / (T::lit(2.0) * nn);
        let (ranges, clip): (Vec<(i64, i64)>, Option<(Vec<T>, Vec<T>)>) = match domain {
            Domain::Box { lo, hi } => {
                let r = lo
                    .iter()
                    .zip(hi)
                    .map(|(&l, &u)| {
                        let kmin = (l * nn - T::lit(0.5)).floor().to_i64().expect("finite") + 1;
                        let kmax = (u * nn + T::lit(0.5)).ceil().to_i64().expect("finite") - 1;
                        (kmin, kmax)
                    })
                    .collect();
                (r, Some((lo.clone(), hi.clone())))
            }
            Domain::WholeSpace { .. } => {
                let (lo, hi) = window.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("whole-space lattices need a window".into())
                })?;
                if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(Error::InvalidArgument(
                        "window must be a non-degenerate box of the domain dimension".into(),
                    ));
                }
                let r = lo
                    .iter()
                    .zip(hi)
                    .map(|(&l, &u)| {
                        (
                            (l * nn).ceil().to_i64().expect("finite"),
                            (u * nn).floor().to_i64().expect("finite"),
                        )
                    })
                    .collect();
                (r, None)
            }
            _ => {
                return Err(Error::Unsupported(
                    "lattice partitions need a box or whole-space domain".into(),
                ))
            }
        };
        if ranges.iter().any(|&(a, b)| b < a) {
            return Err(Error::InvalidArgument(
                "window contains no lattice point".into(),
            ));
        }
        let q = quad_per_axis.max(1);
        let mut cells = Vec::new();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        loop {
            let site: Vec<T> = idx.iter().map(|&k| T::lit(k as f64) / nn).collect();
            let mut lo_c = Vec::with_capacity(d);
            let mut hi_c = Vec::with_capacity(d);
            let mut clipped = false;
            for (i, &x) in site.iter().enumerate() {
                let (mut a, mut b) = (x - h, x + h);
                if let Some((lo, hi)) = &clip {
                    if a < lo[i] {
                        a = lo[i];
                        clipped = true;
                    }
                    if b > hi[i] {
                        b = hi[i];
                        clipped = true;
                    }
                }
                lo_c.push(a);
                hi_c.push(b);
            }
            let (centroid, measure, radius_bound) = if clipped {
                let c: Vec<T> = lo_c
                    .iter()
                    .zip(&hi_c)
                    .map(|(&a, &b)| (a + b) / T::lit(2.0))
                    .collect();
                let m = lo_c
                    .iter()
                    .zip(&hi_c)
                    .fold(T::one(), |acc, (&a, &b)| acc * (b - a));
                let r = lo_c
                    .iter()
                    .zip(&hi_c)
                    .map(|(&a, &b)| (b - a) * (b - a))
                    .sum::<T>()
                    .sqrt()
                    / T::lit(2.0);
                (c, m, r)
            } else {
                (
                    site.clone(),
                    (T::one() / nn).powi(d as i32),
                    T::of_usize(d).sqrt() / (T::lit(2.0) * nn),
                )
            };
            let mut covariance = vec![T::zero(); d * d];
            for i in 0..d {
                let len = hi_c[i] - lo_c[i];
                covariance[i * d + i] = len * len / T::lit(12.0);
            }
            let total = q.pow(d as u32);
            let mut quad_points = Vec::with_capacity(total * d);
            for flat in 0..total {
                let mut rem = flat;
                for i in 0..d {
                    let j = rem % q;
                    rem /= q;
                    let frac = (T::of_usize(j) + T::lit(0.5)) / T::of_usize(q);
                    quad_points.push(lo_c[i] + (hi_c[i] - lo_c[i]) * frac);
                }
            }
            cells.push(Cell {
                id: cells.len(),
                site,
                measure,
                measure_sigma: T::zero(),
                centroid,
                covariance,
                radius_bound,
                is_boundary: false,
                boundary_anchor: None,
                quad_points,
                quad_weights: vec![measure / T::of_usize(total); total],
            });
            // odometer, last axis fastest
            let mut axis = d;
            loop {
                if axis == 0 {
                    let window = if domain.is_bounded() { None } else { window };
                    return Ok(Self::from_cells(
                        domain.clone(),
                        PartitionKind::Lattice { n },
                        cells,
                        window,
                    ));
                }
                axis -= 1;
                if idx[axis] < ranges[axis].1 {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = ranges[axis].0;
            }
        }
    }

    /// Voronoi partition of `closure(D)` for `sites`, with cell geometry
    /// estimated from `mc_per_cell · #sites` uniform samples.
    pub fn voronoi(
        domain: &Domain<T>,
        sites: &[Vec<T>],
        mc_per_cell: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = domain.dim();
        let m_d = domain.measure().ok_or(Error::Unbounded)?;
        if sites.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one site is required".into(),
            ));
        }
        if mc_per_cell == 0 {
            return Err(Error::InvalidArgument(
                "mc_per_cell must be positive".into(),
            ));
        }
        for (i, s) in sites.iter().enumerate() {
            if !domain.contains(s)? {
                return Err(Error::SiteOutsideDomain(i));
            }
        }
        let site_tree = KdTree::new(sites.concat(), d);
        // half distance to the nearest other site; duplicates are fatal
        let mut half_spacing = vec![T::infinity(); sites.len()];
        for (i, s) in sites.iter().enumerate() {
            let (j, _) = site_tree.nearest(s).expect("non-empty");
            if j != i {
                return Err(Error::DuplicateSite(i.max(j)));
            }
            if sites.len() == 1 {
                continue;
            }
            // grow the query radius until another site is found
            let mut near = Vec::new();
            let mut r = T::lit(1e-3) * domain.diameter();
            while near.len() < 2 {
                site_tree.within_into(s, r, &mut near);
                r = r * T::lit(2.0);
            }
            half_spacing[i] = near
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| dist(s, &sites[j]))
                .fold(T::infinity(), T::min)
                / T::lit(2.0);
        }

        let total = mc_per_cell * sites.len();
        let batches = total.div_ceil(MC_BATCH);
        let batch_out: Vec<(Vec<T>, Vec<u32>)> = (0..batches)
            .into_par_iter()
            .map(|b| -> Result<(Vec<T>, Vec<u32>)> {
                let count = MC_BATCH.min(total - b * MC_BATCH);
                let mut rng = substream(seed, streams::MC_BASE + b as u64);
                let mut pts = Vec::with_capacity(count * d);
                domain.sample_uniform_into(count, &mut rng, &mut pts)?;
                let owner = pts
                    .chunks_exact(d)
                    .map(|p| site_tree.nearest(p).expect("non-empty").0 as u32)
                    .collect();
                Ok((pts, owner))
            })
            .collect::<Result<_>>()?;

        let mut counts = vec![0usize; sites.len()];
        for (_, owner) in &batch_out {
            for &o in owner {
                counts[o as usize] += 1;
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyCell { cell: empty });
        }
        let mut grouped: Vec<Vec<T>> = counts.iter().map(|&c| Vec::with_capacity(c * d)).collect();
        for (pts, owner) in &batch_out {
            for (p, &o) in pts.chunks_exact(d).zip(owner) {
                grouped[o as usize].extend_from_slice(p);
            }
        }
        drop(batch_out);

        let w = m_d / T::of_usize(total);
        let cells: Vec<Cell<T>> = grouped
            .into_par_iter()
            .enumerate()
            .map(|(id, quad_points)| {
                let k = counts[id];
                let kt = T::of_usize(k);
                let mut centroid = vec![T::zero(); d];
                for p in quad_points.chunks_exact(d) {
                    for i in 0..d {
                        centroid[i] = centroid[i] + p[i];
                    }
                }
                centroid.iter_mut().for_each(|c| *c = *c / kt);
                let mut covariance = vec![T::zero(); d * d];
                let mut max_d2 = T::zero();
                for p in quad_points.chunks_exact(d) {
                    for i in 0..d {
                        for j in 0..d {
                            covariance[i * d + j] =
                                covariance[i * d + j] + (p[i] - centroid[i]) * (p[j] - centroid[j]);
                        }
                    }
                    max_d2 = max_d2.max(dist2(p, &centroid));
                }
                covariance.iter_mut().for_each(|c| *c = *c / kt);
                let frac = kt / T::of_usize(total);
                let hs = if half_spacing[id].is_finite() {
                    half_spacing[id]
                } else {
                    max_d2.sqrt()
                };
                Cell {
                    id,
                    site: sites[id].clone(),
                    measure: m_d * frac,
                    measure_sigma: m_d * (frac * (T::one() - frac) / T::of_usize(total)).sqrt(),
                    centroid,
                    covariance,
                    radius_bound: max_d2.sqrt() + T::lit(2.0) * hs / kt.sqrt(),
                    is_boundary: false,
                    boundary_anchor: None,
                    quad_points,
                    quad_weights: vec![w; k],
                }
            })
            .collect();
        Ok(Self::from_cells(
            domain.clone(),
            PartitionKind::Voronoi {
                n: sites.len(),
                mc_per_cell,
                seed,
            },
            cells,
            None,
        ))
    }

    pub fn domain(&self) -> &Domain<T> {
        &self.domain
    }

    pub fn kind(&self) -> &PartitionKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn cells(&self) -> &[Cell<T>] {
        &self.cells
    }

    pub fn cell(&self, id: usize) -> Result<&Cell<T>> {
        self.cells.get(id).ok_or(Error::NoSuchCell(id))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn max_radius_bound(&self) -> T {
        self.max_radius_bound
    }

    pub fn window(&self) -> Option<&(Vec<T>, Vec<T>)> {
        self.window.as_ref()
    }

    pub fn level_params(&self) -> Option<&LevelParams<T>> {
        self.level.as_ref()
    }

    pub fn has_scales(&self) -> bool {
        self.rho.len() == self.cells.len() && !self.cells.is_empty()
    }

    pub fn delta(&self, id: usize) -> T {
        self.delta[id]
    }

    pub fn rho(&self, id: usize) -> T {
        self.rho[id]
    }

    /// Total measure `Σ m(ξ)` and its combined Monte-Carlo σ.
    pub fn total_measure(&self) -> (T, T) {
        let m = self.cells.iter().map(|c| c.measure).sum();
        let s = self
            .cells
            .iter()
            .map(|c| c.measure_sigma * c.measure_sigma)
            .sum::<T>()
            .sqrt();
        (m, s)
    }

    /// Sets `δ`, classifies boundary cells and sets `ρ` without checking the
    /// scale relation; [`crate::generator::assemble`] rejects inconsistent
    /// input.
    pub fn set_scales(&mut self, delta: Vec<T>, rho: Vec<T>) -> Result<()> {
        if delta.len() != self.cells.len() || rho.len() != self.cells.len() {
            return Err(Error::InvalidArgument(
                "one scale value per cell required".into(),
            ));
        }
        if delta
            .iter()
            .chain(&rho)
            .any(|&v| !(v > T::zero()) || !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "scales must be positive and finite".into(),
            ));
        }
        self.delta = delta;
        self.classify_boundary()?;
        self.rho = rho;
        Ok(())
    }

    /// `δ ≡ a_n`; `ρ = a_n` on interior cells and `b_n` on boundary cells.
    pub fn assign_scales(&mut self, a_n: T, b_n: T) -> Result<()> {
        if !(a_n > T::zero() && a_n < b_n) {
            return Err(Error::ScaleOrder {
                a: a_n.as_f64(),
                b: b_n.as_f64(),
            });
        }
        let n = self.cells.len();
        self.delta = vec![a_n; n];
        self.classify_boundary()?;
        self.rho = self
            .cells
            .iter()
            .map(|c| if c.is_boundary { b_n } else { a_n })
            .collect();
        let level_n = match self.kind {
            PartitionKind::Lattice { n } | PartitionKind::Voronoi { n, .. } => n,
        };
        self.level = Some(LevelParams {
            n: level_n,
            a_n,
            b_n,
        });
        Ok(())
    }

    /// A cell is a boundary cell iff `B(ξ̄, δ(ξ)) ⊄ D`, i.e. the centroid is
    /// closer than `δ` to `∂D` or lies outside `D`.
    pub fn classify_boundary(&mut self) -> Result<()> {
        if self.delta.len() != self.cells.len() {
            return Err(Error::ScalesMissing);
        }
        if !self.domain.is_bounded() {
            for c in &mut self.cells {
                c.is_boundary = false;
                c.boundary_anchor = None;
            }
            return Ok(());
        }
        let domain = &self.domain;
        let delta = &self.delta;
        self.cells.par_iter_mut().for_each(|c| {
            let sd = domain.signed_distance_unchecked(&c.centroid);
            c.is_boundary = sd < delta[c.id];
            c.boundary_anchor = c
                .is_boundary
                .then(|| domain.project_to_boundary(&c.centroid));
        });
        Ok(())
    }

    /// Ids of cells whose centroid lies in the open ball `B(x, r)`, ascending.
    pub fn centroids_within(&self, x: &[T], r: T) -> Vec<usize> {
        self.centroid_index.within(x, r)
    }

    /// Ids of cells that may meet `B(x, r)`: every cell with
    /// `|η̄ - x| < r + radius_bound(η)`. Over-inclusive by construction.
    pub fn cells_meeting_ball(&self, x: &[T], r: T) -> Vec<usize> {
        let mut cand = self.centroid_index.within(x, r + self.max_radius_bound);
        cand.retain(|&j| dist(&self.cells[j].centroid, x) < r + self.cells[j].radius_bound);
        cand
    }

    /// `N_ξ`: cells whose centroid lies in `B(ξ̌, ρ(ξ))`.
    ///
    /// Centroids within a few ulps of the sphere count as on it, so exact
    /// lattice ties are excluded regardless of rounding.
    pub fn neighbours(&self, id: usize) -> Result<Vec<usize>> {
        if !self.has_scales() {
            return Err(Error::ScalesMissing);
        }
        let c = self.cell(id)?;
        let r = self.rho[id] * (T::one() - T::lit(64.0) * T::epsilon());
        let nb = self.centroids_within(c.anchor_point(), r);
        if nb.is_empty() {
            return Err(Error::EmptyNeighbourhood(id));
        }
        Ok(nb)
    }

    /// `ε(ξ)`: largest radius bound over `N_ξ ∪ Ñ_ξ`.
    pub fn epsilon(&self, id: usize) -> Result<T> {
        let nb = self.neighbours(id)?;
        let c = &self.cells[id];
        let meeting = self.cells_meeting_ball(c.anchor_point(), self.rho[id]);
        Ok(nb
            .iter()
            .chain(&meeting)
            .map(|&j| self.cells[j].radius_bound)
            .fold(T::zero(), T::max))
    }

    /// Whether the `ρ`-ball of the cell stays inside the lattice window
    /// (always true for bounded domains).
    pub fn inside_window(&self, id: usize) -> bool {
        match (&self.window, self.rho.get(id)) {
            (Some((lo, hi)), Some(&r)) => {
                let c = &self.cells[id].centroid;
                c.iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(&x, (&l, &u))| x - r >= l && x + r <= u)
            }
            (Some(_), None) => false,
            (None, _) => true,
        }
    }

    /// Hausdorff distance between a cell (via its quadrature nodes) and a
    /// point: `max_y |y - z|`.
    pub fn hausdorff_to_point(&self, id: usize, z: &[T]) -> Result<T> {
        let c = self.cell(id)?;
        Ok((0..c.quad_len())
            .map(|k| dist(c.quad_point(k), z))
            .fold(T::zero(), T::max))
    }

    /// Fitted constant `C = max_ξ diam(ξ) / (log n / n)^{1/d}` using
    /// `diam(ξ) <= 2 · radius_bound(ξ)`.
    pub fn diameter_constant(&self) -> T {
        let n = T::of_usize(self.cells.len());
        let scale = (n.ln().max(T::one()) / n).powf(T::one() / T::of_usize(self.dim()));
        T::lit(2.0) * self.max_radius_bound / scale
    }

    /// Writes `cells.csv` and the binary quadrature companion.
    pub fn write_artifacts(
        &self,
        csv_path: &Path,
        quad_path: &Path,
        header: &[String],
    ) -> Result<()> {
        let d = self.dim();
        let mut w = BufWriter::new(std::fs::File::create(csv_path)?);
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(
            w,
            "# partition_kind = {}",
            toml::to_string(&self.kind)
                .unwrap_or_default()
                .replace('\n', "; ")
        )?;
        if let Some(lp) = &self.level {
            writeln!(
                w,
                "# level n = {}, a_n = {}, b_n = {}",
                lp.n, lp.a_n, lp.b_n
            )?;
        }
        let axes = |p: &str| {
            (1..=d)
                .map(|i| format!("{p}{i}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let cov = (1..=d)
            .flat_map(|i| (1..=d).map(move |j| format!("cov{i}{j}")))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            w,
            "id,{},{},measure,radius_bound,is_boundary,{},{},delta,rho,measure_sigma,{},quad_count",
            axes("site"),
            axes("centroid"),
            axes("anchor"),
            axes("normal"),
            cov
        )?;
        let join = |v: &[T]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let blanks = vec![""; d].join(",");
        for c in &self.cells {
            let (anchor, normal) = match &c.boundary_anchor {
                Some(bp) => (join(&bp.location), join(&bp.inward_normal)),
                None => (blanks.clone(), blanks.clone()),
            };
            let (delta, rho) = if self.has_scales() {
                (self.delta[c.id].to_string(), self.rho[c.id].to_string())
            } else {
                (String::new(), String::new())
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.id,
                join(&c.site),
                join(&c.centroid),
                c.measure,
                c.radius_bound,
                u8::from(c.is_boundary),
                anchor,
                normal,
                delta,
                rho,
                c.measure_sigma,
                join(&c.covariance),
                c.quad_len()
            )?;
        }
        w.flush()?;

        let mut q = BufWriter::new(std::fs::File::create(quad_path)?);
        q.write_all(QUAD_MAGIC)?;
        q.write_all(&(d as u32).to_le_bytes())?;
        q.write_all(&(self.cells.len() as u64).to_le_bytes())?;
        for c in &self.cells {
            q.write_all(&(c.quad_len() as u64).to_le_bytes())?;
            for k in 0..c.quad_len() {
                for &x in c.quad_point(k) {
                    q.write_all(&x.as_f64().to_le_bytes())?;
                }
                q.write_all(&c.quad_weights[k].as_f64().to_le_bytes())?;
            }
        }
        q.flush()?;
        Ok(())
    }

    /// Reads artifacts written by [`Self::write_artifacts`]. The domain and
    /// partition kind come from the run configuration.
    pub fn read_artifacts(
        domain: &Domain<T>,
        kind: PartitionKind,
        window: Option<(Vec<T>, Vec<T>)>,
        csv_path: &Path,
        quad_path: &Path,
    ) -> Result<Self> {
        let d = domain.dim();
        let art = |p: &Path, msg: String| Error::Artifact {
            path: p.display().to_string(),
            msg,
        };
        if !csv_path.exists() {
            return Err(Error::MissingArtifact(csv_path.display().to_string()));
        }
        if !quad_path.exists() {
            return Err(Error::MissingArtifact(quad_path.display().to_string()));
        }
        let reader = BufReader::new(std::fs::File::open(csv_path)?);
        let mut cells = Vec::new();
        let mut delta = Vec::new();
        let mut rho = Vec::new();
        let mut level: Option<LevelParams<T>> = None;
        let mut seen_header = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if let Some(meta) = line.strip_prefix("# level ") {
                let mut vals = meta
                    .split(',')
                    .map(|kv| kv.split('=').nth(1).unwrap_or("").trim().to_string());
                let (n, a, b) = (vals.next(), vals.next(), vals.next());
                if let (Some(n), Some(a), Some(b)) = (n, a, b) {
                    level = Some(LevelParams {
                        n: n.parse().map_err(|_| {
                            art(csv_path, format!("line {}: bad level", lineno + 1))
                        })?,
                        a_n: a
                            .parse()
                            .map_err(|_| art(csv_path, format!("line {}: bad a_n", lineno + 1)))?,
                        b_n: b
                            .parse()
                            .map_err(|_| art(csv_path, format!("line {}: bad b_n", lineno + 1)))?,
                    });
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
            let expect = 1 + 2 * d + 3 + 2 * d + 3 + d * d + 1;
            if f.len() != expect {
                return Err(art(
                    csv_path,
                    format!(
                        "line {}: expected {expect} fields, found {}",
                        lineno + 1,
                        f.len()
                    ),
                ));
            }
            let num = |s: &str| -> Result<T> {
                s.parse::<T>()
                    .map_err(|_| art(csv_path, format!("line {}: cannot parse '{s}'", lineno + 1)))
            };
            let vec_at = |start: usize, len: usize| -> Result<Vec<T>> {
                f[start..start + len].iter().map(|s| num(s)).collect()
            };
            let id: usize = f[0]
                .parse()
                .map_err(|_| art(csv_path, format!("line {}: bad id", lineno + 1)))?;
            let mut at = 1;
            let site = vec_at(at, d)?;
            at += d;
            let centroid = vec_at(at, d)?;
            at += d;
            let measure = num(f[at])?;
            let radius_bound = num(f[at + 1])?;
            let is_boundary = f[at + 2] == "1";
            at += 3;
            let boundary_anchor = if is_boundary {
                Some(BoundaryPoint {
                    location: vec_at(at, d)?,
                    inward_normal: vec_at(at + d, d)?,
                })
            } else {
                None
            };
            at += 2 * d;
            if !f[at].is_empty() {
                delta.push(num(f[at])?);
                rho.push(num(f[at + 1])?);
            }
            let measure_sigma = num(f[at + 2])?;
            at += 3;
            let covariance = vec_at(at, d * d)?;
            if id != cells.len() {
                return Err(art(
                    csv_path,
                    format!("line {}: ids must be consecutive", lineno + 1),
                ));
            }
            cells.push(Cell {
                id,
                site,
                measure,
                measure_sigma,
                centroid,
                covariance,
                radius_bound,
                is_boundary,
                boundary_anchor,
                quad_points: Vec::new(),
                quad_weights: Vec::new(),
            });
        }

        let mut bytes = Vec::new();
        std::fs::File::open(quad_path)?.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor {
            bytes: &bytes,
            at: 0,
        };
        let bad = |m: &str| art(quad_path, m.to_string());
        if cur.take(4).ok_or_else(|| bad("truncated"))? != QUAD_MAGIC {
            return Err(bad("bad magic"));
        }
        if cur.u32().ok_or_else(|| bad("truncated"))? as usize != d {
            return Err(bad("dimension mismatch"));
        }
        if cur.u64().ok_or_else(|| bad("truncated"))? as usize != cells.len() {
            return Err(bad("cell count differs from cells.csv"));
        }
        for c in &mut cells {
            let k = cur.u64().ok_or_else(|| bad("truncated"))? as usize;
            c.quad_points.reserve(k * d);
            c.quad_weights.reserve(k);
            for _ in 0..k {
                for _ in 0..d {
                    c.quad_points
                        .push(T::lit(cur.f64().ok_or_else(|| bad("truncated"))?));
                }
                c.quad_weights
                    .push(T::lit(cur.f64().ok_or_else(|| bad("truncated"))?));
            }
        }
        let mut part = Self::from_cells(domain.clone(), kind, cells, window);
        if !delta.is_empty() {
            if delta.len() != part.cells.len() {
                return Err(art(csv_path, "scales present on some rows only".into()));
            }
            part.delta = delta;
            part.rho = rho;
            part.level = level;
        }
        Ok(part)
    }
}

const QUAD_MAGIC: &[u8; 4] = b"PCQ1";

struct ByteCursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl ByteCursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// `n` i.i.d. uniform sites of `D` drawn from the site stream of `seed`.
pub fn sample_sites<T: Real>(domain: &Domain<T>, n: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    domain.sample_uniform(n, &mut substream(seed, streams::SITES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(lo: f64, hi: f64) -> Domain<f64> {
        Domain::cuboid(vec![lo], vec![hi]).unwrap()
    }

    #[test]
    fn clipped_unit_interval_lattice() {
        let p = Partition::lattice(&line(0.0, 1.0), 2, None, 4).unwrap();
        let sites: Vec<f64> = p.cells().iter().map(|c| c.site[0]).collect();
        assert_eq!(sites, vec![0.0, 0.5, 1.0]);
        assert_eq!(p.cells()[1].measure, 0.5);
        assert_eq!(p.cells()[0].measure, 0.25);
        assert_eq!(p.cells()[0].centroid, vec![0.125]);
        assert_eq!(p.total_measure().0, 1.0);
    }

    #[test]
    fn lattice_radius_bound_and_exact_centroids() {
        let ws = Domain::<f64>::whole_space(2).unwrap();
        let p = Partition::lattice(&ws, 4, Some((vec![-1.0, -1.0], vec![1.0, 1.0])), 2).unwrap();
        assert_eq!(p.len(), 81);
        for c in p.cells() {
            assert_eq!(c.radius_bound, 2f64.sqrt() / 8.0);
            assert_eq!(c.centroid, c.site);
            assert_eq!(c.measure, 1.0 / 16.0);
        }
        let ws1 = Domain::<f64>::whole_space(1).unwrap();
        let p = Partition::lattice(&ws1, 1, Some((vec![-3.0], vec![3.0])), 1).unwrap();
        for (k, c) in p.cells().iter().enumerate() {
            assert_eq!(c.centroid[0], k as f64 - 3.0);
        }
    }

    #[test]
    fn lattice_is_bit_identical_on_rebuild() {
        let b = Domain::cuboid(vec![0.0, 0.0], vec![1.0, 0.7]).unwrap();
        let a = Partition::lattice(&b, 7, None, 3).unwrap();
        let c = Partition::lattice(&b, 7, None, 3).unwrap();
        assert_eq!(a.cells(), c.cells());
        assert_abs_diff_eq!(a.total_measure().0, 0.7, epsilon = 1e-14);
    }

    #[test]
    fn voronoi_two_sites_on_interval() {
        let dom = line(0.0, 1.0);
        let p = Partition::voronoi(&dom, &[vec![0.25], vec![0.75]], 20_000, 3).unwrap();
        let c = p.cells();
        // exact bisector at 0.5: cells [0, .5] and [.5, 1]
        for (cell, centre) in c.iter().zip([0.25, 0.75]) {
            let sigma_m = cell.measure_sigma;
            assert!(
                (cell.measure - 0.5).abs() < 3.0 * sigma_m,
                "measure {}",
                cell.measure
            );
            // centroid σ = (0.5/√12)/√k
            let sigma_c = 0.5 / 12f64.sqrt() / (cell.quad_len() as f64).sqrt();
            assert!((cell.centroid[0] - centre).abs() < 3.0 * sigma_c);
            assert!(cell.quad_points.iter().all(|&x| (x - centre).abs() <= 0.25));
        }
        assert_abs_diff_eq!(p.total_measure().0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn voronoi_errors() {
        let dom = line(0.0, 1.0);
        assert!(matches!(
            Partition::voronoi(&dom, &[vec![0.3], vec![0.3]], 10, 1),
            Err(Error::DuplicateSite(1))
        ));
        assert!(matches!(
            Partition::voronoi(&dom, &[vec![1.3]], 10, 1),
            Err(Error::SiteOutsideDomain(0))
        ));
        // a sliver cell between two close sites gets no samples at this budget
        let sites = vec![vec![0.5], vec![0.5 + 1e-9], vec![0.5 + 2e-9]];
        assert!(matches!(
            Partition::voronoi(&dom, &sites, 2, 1),
            Err(Error::EmptyCell { .. })
        ));
    }

    #[test]
    fn scales_and_boundary_classification() {
        let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let sites = vec![vec![0.0, 0.0], vec![0.95, 0.0], vec![-0.5, 0.5]];
        let mut p = Partition::voronoi(&disk, &sites, 2000, 9).unwrap();
        assert!(matches!(
            p.assign_scales(0.1, 0.1),
            Err(Error::ScaleOrder { .. })
        ));
        p.set_scales(vec![0.1; 3], vec![0.1; 3]).unwrap();
        // centroid of the cell around the origin is well inside
        assert!(!p.cells()[0].is_boundary);
        p.assign_scales(0.05, 0.2).unwrap();
        for c in p.cells() {
            if c.is_boundary {
                assert!(p.rho(c.id) > p.delta(c.id));
                assert!(c.boundary_anchor.is_some());
            } else {
                assert_eq!(p.rho(c.id), p.delta(c.id));
            }
        }
        // δ = diameter forces every cell onto the boundary
        p.assign_scales(2.0, 3.0).unwrap();
        assert!(p.cells().iter().all(|c| c.is_boundary));
    }

    #[test]
    fn classify_point_cells() {
        // single lattice-like checks with hand-placed centroids in the disk
        let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let sites = vec![vec![0.0, 0.0], vec![0.95, 0.0]];
        let mut p = Partition::voronoi(&disk, &sites, 10, 2).unwrap();
        // pin the centroids exactly
        p.cells[0].centroid = vec![0.0, 0.0];
        p.cells[1].centroid = vec![0.95, 0.0];
        p.set_scales(vec![0.1; 2], vec![0.1; 2]).unwrap();
        assert!(!p.cells()[0].is_boundary);
        assert!(p.cells()[1].is_boundary);
        let bp = p.cells()[1].boundary_anchor.as_ref().unwrap();
        assert_abs_diff_eq!(bp.location[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bp.location[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn epsilon_on_lattice_and_single_cell() {
        let ws = Domain::<f64>::whole_space(2).unwrap();
        let mut p =
            Partition::lattice(&ws, 4, Some((vec![-1.0, -1.0], vec![1.0, 1.0])), 2).unwrap();
        p.assign_scales(0.6, 1.2).unwrap();
        let centre = p.centroids_within(&[0.0, 0.0], 1e-9)[0];
        assert_eq!(p.epsilon(centre).unwrap(), 2f64.sqrt() / 8.0);

        let sq = Domain::cuboid(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut single = Partition::lattice(&sq, 1, None, 2).unwrap();
        // n = 1 on the unit square: four clipped quarter cells
        assert_eq!(single.len(), 4);
        single.assign_scales(0.1, 10.0).unwrap();
        let eps = single.epsilon(0).unwrap();
        assert_abs_diff_eq!(eps, single.max_radius_bound(), epsilon = 1e-15);
    }

    #[test]
    fn empty_neighbourhood_is_an_error() {
        let sq = Domain::cuboid(vec![0.0], vec![1.0]).unwrap();
        let mut p = Partition::lattice(&sq, 4, None, 1).unwrap();
        // interior cell at 0.5 with small ρ still contains itself
        p.set_scales(vec![0.07; 5], vec![0.05; 5]).unwrap();
        assert_eq!(p.neighbours(2).unwrap(), vec![2]);
        // boundary cell 0 has centroid 1/16 and anchor 0: ρ = 0.05 reaches nothing
        assert!(p.cells()[0].is_boundary);
        assert!(matches!(p.neighbours(0), Err(Error::EmptyNeighbourhood(0))));
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let sites = sample_sites(&disk, 50, 4).unwrap();
        let mut p = Partition::voronoi(&disk, &sites, 30, 4).unwrap();
        p.assign_scales(0.3, 0.5).unwrap();
        let (csv, bin) = (dir.path().join("cells.csv"), dir.path().join("quad.bin"));
        p.write_artifacts(&csv, &bin, &["test".into()]).unwrap();
        let q = Partition::read_artifacts(&disk, p.kind().clone(), None, &csv, &bin).unwrap();
        assert_eq!(p.cells(), q.cells());
        assert_eq!(p.delta, q.delta);
        assert_eq!(p.rho, q.rho);
        assert_eq!(p.level_params(), q.level_params());
        assert!(matches!(
            Partition::read_artifacts(
                &disk,
                p.kind().clone(),
                None,
                &dir.path().join("nope.csv"),
                &bin
            ),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn schedules() {
        let s = ScaleSchedule::LogLog {
            k_a: 1.0,
            b_factor: 1.0,
        };
        let (a, b) = s.scales(1000, 0, 2).unwrap();
        let ll = (1000f64).ln().ln();
        assert_abs_diff_eq!(a, ((1000f64).ln() / 1000.0).sqrt() * ll, epsilon = 1e-15);
        assert_abs_diff_eq!(b, a * ll, epsilon = 1e-15);
        assert!(ScaleSchedule::Explicit {
            a: vec![0.1],
            b: vec![0.2]
        }
        .scales(10, 1, 1)
        .is_err());
    }
}
