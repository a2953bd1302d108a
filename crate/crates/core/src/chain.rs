//! Continuous-time Markov chain generated by a [`GeneratorTable`].
//!
//! Holding times are exponential with rate `λ(ξ) = (1/q) Σ_{η≠ξ} w(ξ,η)`
//! and jumps go to `η ≠ ξ` with probability proportional to `w(ξ,η)`.
//! Cells with no outgoing weight, inactive window cells and cells with
//! `q ≤ 0` are absorbing: the chain freezes there and the trajectory is
//! flagged.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::GeneratorTable;
use crate::partition::Partition;
use crate::real::Real;
use crate::rng::{streams, substream};

/// Holding rate of cell `id`; `0` for absorbing cells.
pub fn jump_rate<T: Real>(gen: &GeneratorTable<T>, id: usize) -> Result<T> {
    let g = gen.cell(id)?;
    let total = g.off_diagonal_weight();
    if total == T::zero() {
        return Ok(T::zero());
    }
    if !g.valid.is_valid() {
        return Err(Error::InvalidCell(id));
    }
    Ok(total / g.q)
}

/// Jump probabilities `(η, p(η))` over `N_ξ \ {ξ}`.
pub fn jump_distribution<T: Real>(gen: &GeneratorTable<T>, id: usize) -> Result<Vec<(usize, T)>> {
    let g = gen.cell(id)?;
    let mut out = Vec::with_capacity(g.neighbors.len());
    let mut total = T::zero();
    for (&j, &w) in g.neighbors.iter().zip(&g.weights) {
        if j == id {
            continue;
        }
        if w < T::zero() {
            return Err(Error::NegativeWeight {
                cell: id,
                weight: w.as_f64(),
            });
        }
        total = total + w;
        out.push((j, w));
    }
    if !(total > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "cell {id} is absorbing; no jump distribution"
        )));
    }
    for (_, p) in &mut out {
        *p = *p / total;
    }
    Ok(out)
}

/// Flattened jump tables for fast simulation.
#[derive(Clone, Debug)]
pub struct ChainKernel<T> {
    dim: usize,
    rates: Vec<T>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    /// Cumulative unnormalized weights per cell.
    cumulative: Vec<T>,
    centroids: Vec<T>,
}

impl<T: Real> ChainKernel<T> {
    /// Fails if an active cell carries a negative off-diagonal weight.
    pub fn new(gen: &GeneratorTable<T>, part: &Partition<T>) -> Result<Self> {
        if gen.len() != part.len() {
            return Err(Error::DimensionMismatch {
                expected: part.len(),
                got: gen.len(),
            });
        }
        let mut rates = Vec::with_capacity(gen.len());
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut cumulative = Vec::new();
        for g in gen.cells() {
            let mut acc = T::zero();
            let usable = g.active && g.q > T::zero();
            if usable {
                for (&j, &w) in g.neighbors.iter().zip(&g.weights) {
                    if j == g.cell_id {
                        continue;
                    }
                    if w < T::zero() {
                        return Err(Error::NegativeWeight {
                            cell: g.cell_id,
                            weight: w.as_f64(),
                        });
                    }
                    acc = acc + w;
                    targets.push(j);
                    cumulative.push(acc);
                }
            }
            rates.push(if usable { acc / g.q } else { T::zero() });
            offsets.push(targets.len());
        }
        Ok(ChainKernel {
            dim: part.dim(),
            rates,
            offsets,
            targets,
            cumulative,
            centroids: part
                .cells()
                .iter()
                .flat_map(|c| c.centroid.iter().copied())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self, id: usize) -> T {
        self.rates[id]
    }

    pub fn is_absorbing(&self, id: usize) -> bool {
        !(self.rates[id] > T::zero())
    }

    pub fn centroid(&self, id: usize) -> &[T] {
        &self.centroids[id * self.dim..(id + 1) * self.dim]
    }

    fn jump<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> usize {
        let (a, b) = (self.offsets[id], self.offsets[id + 1]);
        let cum = &self.cumulative[a..b];
        let u = T::lit(rng.random::<f64>()) * cum[cum.len() - 1];
        let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        self.targets[a + k]
    }

    /// Next jump from `id`: holding time and target, or `None` if absorbing.
    fn step<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> Option<(T, usize)> {
        if self.is_absorbing(id) {
            return None;
        }
        let e: f64 = rng.sample(Exp1);
        Some((T::lit(e) / self.rates[id], self.jump(id, rng)))
    }

    /// State at time `t` without recording the path: `(cell, jumps, absorbed)`.
    pub fn run_to<R: Rng + ?Sized>(&self, start: usize, t: T, rng: &mut R) -> (usize, usize, bool) {
        let (mut cell, mut now, mut jumps) = (start, T::zero(), 0);
        loop {
            match self.step(cell, rng) {
                None => return (cell, jumps, true),
                Some((h, next)) => {
                    now = now + h;
                    if now > t {
                        return (cell, jumps, false);
                    }
                    cell = next;
                    jumps += 1;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub start_cell: usize,
    /// `(jump time, new cell)`, strictly increasing times.
    pub events: Vec<(T, usize)>,
    pub horizon: T,
    pub seed: u64,
    pub stream: u64,
    /// Set when an absorbing cell was reached before the horizon.
    pub absorbed: bool,
}

impl<T: Real> Trajectory<T> {
    /// Occupied cell at time `t` (right-continuous).
    pub fn cell_at(&self, t: T) -> usize {
        let k = self.events.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            self.start_cell
        } else {
            self.events[k - 1].1
        }
    }
}

/// One trajectory on `[0, horizon]` driven by substream `stream` of `seed`.
pub fn simulate<T: Real>(
    kernel: &ChainKernel<T>,
    start: usize,
    horizon: T,
    seed: u64,
    stream: u64,
) -> Result<Trajectory<T>> {
    if start >= kernel.len() {
        return Err(Error::NoSuchCell(start));
    }
    if !(horizon >= T::zero()) {
        return Err(Error::InvalidArgument(
            "horizon must be non-negative".into(),
        ));
    }
    let mut rng = substream(seed, stream);
    let mut traj = Trajectory {
        start_cell: start,
        events: Vec::new(),
        horizon,
        seed,
        stream,
        absorbed: false,
    };
    let (mut cell, mut now) = (start, T::zero());
    loop {
        match kernel.step(cell, &mut rng) {
            None => {
                traj.absorbed = true;
                log::warn!("trajectory from cell {start} frozen in absorbing cell {cell}");
                break;
            }
            Some((h, next)) => {
                now = now + h;
                if now > horizon {
                    break;
                }
                cell = next;
                traj.events.push((now, cell));
            }
        }
    }
    Ok(traj)
}

/// Trajectories for replicas `0..replicas`; replica `r` uses stream
/// `CHAIN_BASE + r`.
pub fn simulate_replicas<T: Real>(
    kernel: &ChainKernel<T>,
    start: usize,
    horizon: T,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Trajectory<T>>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| simulate(kernel, start, horizon, seed, streams::CHAIN_BASE + r as u64))
        .collect()
}

/// Centroids `Y_t` of the occupied cell at time `t` for independent
/// replicas, ordered by replica index. Also returns how many replicas
/// froze in an absorbing cell.
pub fn marginal_positions<T: Real>(
    kernel: &ChainKernel<T>,
    start: usize,
    t: T,
    replicas: usize,
    seed: u64,
) -> Result<(Vec<Vec<T>>, usize)> {
    if start >= kernel.len() {
        return Err(Error::NoSuchCell(start));
    }
    let out: Vec<(usize, bool)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, streams::CHAIN_BASE + r as u64);
            let (cell, _, absorbed) = kernel.run_to(start, t, &mut rng);
            (cell, absorbed)
        })
        .collect();
    let absorbed = out.iter().filter(|o| o.1).count();
    if absorbed > 0 {
        log::warn!("{absorbed} of {replicas} replicas reached an absorbing cell");
    }
    Ok((
        out.into_iter()
            .map(|(c, _)| kernel.centroid(c).to_vec())
            .collect(),
        absorbed,
    ))
}

/// Writes `replica,time,cell_id,x1..xd`; each replica starts with a row at
/// time 0 for its start cell.
pub fn write_trajectories_csv<T: Real>(
    path: &Path,
    kernel: &ChainKernel<T>,
    trajs: &[Trajectory<T>],
    header: &[String],
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in header {
        writeln!(w, "# {line}")?;
    }
    let axes: Vec<String> = (1..=kernel.dim()).map(|i| format!("x{i}")).collect();
    writeln!(w, "replica,time,cell_id,{}", axes.join(","))?;
    let row = |w: &mut dyn Write, r: usize, t: T, c: usize| -> std::io::Result<()> {
        let x: Vec<String> = kernel.centroid(c).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{r},{t},{c},{}", x.join(","))
    };
    for (r, tr) in trajs.iter().enumerate() {
        row(&mut w, r, T::zero(), tr.start_cell)?;
        for &(t, c) in &tr.events {
            row(&mut w, r, t, c)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::assemble;
    use crate::geometry::Domain;
    use approx::assert_abs_diff_eq;

    fn line_chain(n: usize, half_width: f64) -> (Partition<f64>, GeneratorTable<f64>) {
        let ws = Domain::whole_space(1).unwrap();
        let mut p =
            Partition::lattice(&ws, n, Some((vec![-half_width], vec![half_width])), 2).unwrap();
        p.assign_scales(1.5 / n as f64, 3.0 / n as f64).unwrap();
        let g = assemble(&p, 1e-12).unwrap();
        (p, g)
    }

    #[test]
    fn lattice_rate_and_distribution() {
        let n = 6;
        let (p, g) = line_chain(n, 1.0);
        let mid = p.centroids_within(&[0.0], 1e-9)[0];
        assert_abs_diff_eq!(jump_rate(&g, mid).unwrap(), (n * n) as f64, epsilon = 1e-9);
        let dist = jump_distribution(&g, mid).unwrap();
        assert_eq!(dist.len(), 2);
        for (_, pr) in dist {
            assert_abs_diff_eq!(pr, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn absorbing_singleton() {
        let ws = Domain::whole_space(1).unwrap();
        let mut p = Partition::lattice(&ws, 4, Some((vec![-1.0], vec![1.0])), 1).unwrap();
        p.assign_scales(0.1, 0.2).unwrap();
        let g = assemble(&p, 1e-12).unwrap();
        assert_eq!(jump_rate(&g, 4).unwrap(), 0.0);
        let k = ChainKernel::new(&g, &p).unwrap();
        assert!(k.is_absorbing(4));
        let tr = simulate(&k, 4, 1.0, 1, 0).unwrap();
        assert!(tr.absorbed && tr.events.is_empty());
    }

    #[test]
    fn horizon_zero_and_determinism() {
        let (p, g) = line_chain(8, 1.0);
        let k = ChainKernel::new(&g, &p).unwrap();
        let mid = p.centroids_within(&[0.0], 1e-9)[0];
        assert!(simulate(&k, mid, 0.0, 3, 0).unwrap().events.is_empty());
        let a = simulate(&k, mid, 0.05, 3, 7).unwrap();
        let b = simulate(&k, mid, 0.05, 3, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.events.windows(2).all(|w| w[0].0 < w[1].0));
        let (pts, _) = marginal_positions(&k, mid, 0.0, 10, 1).unwrap();
        assert!(pts.iter().all(|x| x == &p.cells()[mid].centroid));
    }

    #[test]
    fn poisson_event_counts() {
        // far from the window edge the rate is n² everywhere
        let n = 10;
        let (p, g) = line_chain(n, 3.0);
        let k = ChainKernel::new(&g, &p).unwrap();
        let mid = p.centroids_within(&[0.0], 1e-9)[0];
        let horizon = 0.05;
        let reps = 1000;
        let counts: Vec<f64> = simulate_replicas(&k, mid, horizon, reps, 11)
            .unwrap()
            .iter()
            .map(|t| t.events.len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / reps as f64;
        let expect = (n * n) as f64 * horizon;
        let sigma = (expect / reps as f64).sqrt();
        assert!(
            (mean - expect).abs() < 3.0 * sigma,
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn measure_ratio_distribution() {
        // c ≡ 0 case: two neighbours with measures 1 and 3 in a hand-built table
        let ws = Domain::whole_space(1).unwrap();
        let mut p = Partition::lattice(&ws, 1, Some((vec![-1.0], vec![1.0])), 1).unwrap();
        p.assign_scales(1.5, 3.0).unwrap();
        let mut g = assemble(&p, 1e-12).unwrap();
        // rebuild through the CSV path with edited weights
        let dir = tempfile::tempdir().unwrap();
        let (e, c) = (dir.path().join("e.csv"), dir.path().join("c.csv"));
        g.write_csv(&e, &c, &[]).unwrap();
        let text = std::fs::read_to_string(&e).unwrap();
        let edited: String = text
            .lines()
            .map(|l| match l {
                l if l.starts_with("1,0,") => "1,0,0.25,0,0.25".to_string(),
                l if l.starts_with("1,2,") => "1,2,0.75,0,0.75".to_string(),
                l => l.to_string(),
            })
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(&e, edited).unwrap();
        g = GeneratorTable::read_csv(1, &e, &c).unwrap();
        let dist = jump_distribution(&g, 1).unwrap();
        assert_eq!(dist, vec![(0, 0.25), (2, 0.75)]);
    }

    #[test]
    fn negative_weight_rejected() {
        let ws = Domain::whole_space(1).unwrap();
        let mut p = Partition::lattice(&ws, 1, Some((vec![-2.0], vec![2.0])), 1).unwrap();
        p.assign_scales(1.5, 3.0).unwrap();
        let g = assemble(&p, 1e-12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (e, c) = (dir.path().join("e.csv"), dir.path().join("c.csv"));
        g.write_csv(&e, &c, &[]).unwrap();
        let text = std::fs::read_to_string(&e).unwrap().replace(
            "2,1,0.3333333333333333,0,0.3333333333333333",
            "2,1,0.3333333333333333,1.5,-0.1",
        );
        std::fs::write(&e, text).unwrap();
        let g = GeneratorTable::read_csv(1, &e, &c).unwrap();
        assert!(matches!(
            jump_distribution(&g, 2),
            Err(Error::NegativeWeight { cell: 2, .. })
        ));
        assert!(matches!(
            ChainKernel::new(&g, &p),
            Err(Error::NegativeWeight { cell: 2, .. })
        ));
    }

    /// Distribution of the chain at time `t` by uniformization of the
    /// dense rate matrix.
    fn uniformized(k: &ChainKernel<f64>, start: usize, t: f64) -> Vec<f64> {
        let n = k.len();
        let lam = (0..n).map(|i| k.rate(i)).fold(0.0, f64::max);
        let mut p = vec![0.0; n];
        p[start] = 1.0;
        let mut out = vec![0.0; n];
        let mut coef = (-lam * t).exp();
        let mut kk = 0usize;
        let mut mass = 0.0;
        while mass < 1.0 - 1e-14 && kk < 100_000 {
            for i in 0..n {
                out[i] += coef * p[i];
            }
            mass += coef;
            // p ← p P with P = I + R/Λ
            let mut next = p.clone();
            for i in 0..n {
                if p[i] == 0.0 || k.is_absorbing(i) {
                    continue;
                }
                let (a, b) = (k.offsets[i], k.offsets[i + 1]);
                let tot = k.cumulative[b - 1];
                let mut prev = 0.0;
                for idx in a..b {
                    let w = k.cumulative[idx] - prev;
                    prev = k.cumulative[idx];
                    let flow = p[i] * k.rate(i) / lam * w / tot;
                    next[k.targets[idx]] += flow;
                    next[i] -= flow;
                }
            }
            p = next;
            kk += 1;
            coef *= lam * t / kk as f64;
        }
        out
    }

    #[test]
    fn variance_matches_uniformization_oracle() {
        let n = 20;
        let (p, g) = line_chain(n, 2.5);
        let k = ChainKernel::new(&g, &p).unwrap();
        assert!(k.len() <= 200);
        let mid = p.centroids_within(&[0.0], 1e-9)[0];
        let t = 0.05;
        let probs = uniformized(&k, mid, t);
        let x: Vec<f64> = p.cells().iter().map(|c| c.centroid[0]).collect();
        let m1: f64 = probs.iter().zip(&x).map(|(p, x)| p * x).sum();
        let m2: f64 = probs.iter().zip(&x).map(|(p, x)| p * x * x).sum();
        let m4: f64 = probs.iter().zip(&x).map(|(p, x)| p * x.powi(4)).sum();
        let var = m2 - m1 * m1;
        // exact Δ/2 generator: variance is t away from the window edge
        assert_abs_diff_eq!(var, t, epsilon = 1e-6);
        let reps = 4000;
        let (pts, absorbed) = marginal_positions(&k, mid, t, reps, 5).unwrap();
        assert_eq!(absorbed, 0);
        let mean2 = pts.iter().map(|p| p[0] * p[0]).sum::<f64>() / reps as f64;
        let sigma = ((m4 - m2 * m2) / reps as f64).sqrt();
        assert!(
            (mean2 - m2).abs() < 3.0 * sigma,
            "{mean2} vs {m2} ± {sigma}"
        );
    }

    #[test]
    fn empirical_generator_matches_apply() {
        let n = 10;
        let (p, g) = line_chain(n, 2.0);
        let k = ChainKernel::new(&g, &p).unwrap();
        let mid = p.centroids_within(&[0.3], 1e-9)[0];
        let f: Vec<f64> = p
            .cells()
            .iter()
            .map(|c| (2.0 * c.centroid[0]).cos())
            .collect();
        let lf = g.apply(&f, mid).unwrap();
        let h = 1e-3;
        let reps = 20_000;
        let (pts, _) = marginal_positions(&k, mid, h, reps, 9).unwrap();
        let diffs: Vec<f64> = pts
            .iter()
            .map(|x| ((2.0 * x[0]).cos() - f[mid]) / h)
            .collect();
        let mean = diffs.iter().sum::<f64>() / reps as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        // second-order bias h·L²f/2 with |L²f| ≤ 4 for cos(2x)
        assert!(
            (mean - lf).abs() < 3.0 * sd / (reps as f64).sqrt() + 2.0 * h,
            "{mean} vs {lf}"
        );
    }

    #[test]
    fn boundary_jump_frequencies() {
        let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let sites = crate::partition::sample_sites(&disk, 300, 3).unwrap();
        let mut p = Partition::voronoi(&disk, &sites, 100, 3).unwrap();
        p.assign_scales(0.35, 0.6).unwrap();
        let g = assemble(&p, 1e-12).unwrap();
        let k = ChainKernel::new(&g, &p).unwrap();
        let id = (0..p.len()).find(|&i| p.cells()[i].is_boundary).unwrap();
        let dist = jump_distribution(&g, id).unwrap();
        let draws = 100_000;
        let mut rng = substream(1, 1);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            *counts.entry(k.jump(id, &mut rng)).or_insert(0usize) += 1;
        }
        // Pearson χ² over all neighbours against mean df and 3σ = 3√(2 df)
        let df = (dist.len() - 1) as f64;
        let chi2: f64 = dist
            .iter()
            .map(|&(j, pj)| {
                let e = draws as f64 * pj;
                (*counts.get(&j).unwrap_or(&0) as f64 - e).powi(2) / e
            })
            .sum();
        assert!(
            chi2 <= df + 3.0 * (2.0 * df).sqrt(),
            "χ² = {chi2}, df = {df}"
        );
    }

    #[test]
    fn doubling_measures_keeps_rate() {
        let ws = Domain::whole_space(2).unwrap();
        let mut p =
            Partition::lattice(&ws, 5, Some((vec![-1.0, -1.0], vec![1.0, 1.0])), 1).unwrap();
        p.assign_scales(0.45, 0.9).unwrap();
        let g1 = assemble(&p, 1e-12).unwrap();
        let mid = p.centroids_within(&[0.0, 0.0], 1e-9)[0];
        let r1 = jump_rate(&g1, mid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (csv, bin) = (dir.path().join("c.csv"), dir.path().join("q.bin"));
        p.write_artifacts(&csv, &bin, &[]).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        // measure column sits after id, site1..2, centroid1..2
        let edited: String = text
            .lines()
            .map(|l| {
                if l.starts_with('#') || l.starts_with("id") {
                    return l.to_string();
                }
                let mut f: Vec<String> = l.split(',').map(str::to_string).collect();
                f[5] = (f[5].parse::<f64>().unwrap() * 2.0).to_string();
                f.join(",")
            })
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(&csv, edited).unwrap();
        let q = Partition::read_artifacts(
            p.domain(),
            p.kind().clone(),
            p.window().cloned(),
            &csv,
            &bin,
        )
        .unwrap();
        let g2 = assemble(&q, 1e-12).unwrap();
        assert_abs_diff_eq!(jump_rate(&g2, mid).unwrap(), r1, epsilon = 1e-9 * r1);
    }
}
