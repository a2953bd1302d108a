//! Pipeline stages driven by a [`RunConfig`]: partition, generator,
//! simulate, diagnose and the end-to-end study.
//!
//! Every stage is a pure function of the configuration (seed included) and
//! the artifacts of earlier stages. Output layout under the output directory:
//!
//! ```text
//! level_<n>/cells.csv, quad.bin          partition
//! level_<n>/edges.csv, generator.csv     generator
//! level_<n>/trajectories.csv             simulate
//! level_<n>/marginals.csv                simulate
//! reference_marginals.csv                simulate
//! diagnostics.csv, summary.txt           diagnose
//! study.csv, checks.csv                  study
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::chain::{marginal_positions, simulate_replicas, write_trajectories_csv, ChainKernel};
use crate::config::{PartitionFamily, RunConfig};
use crate::diagnostics::{
    bound_trackers, boundary_symdiff_check, consistency_error, halfball_moment_check,
    hausdorff_check, permutation_test, test_functions, two_sample_distance, PermutationTest,
    TrackerReport,
};
use crate::error::{Error, Result};
use crate::generator::{assemble, GeneratorReport, GeneratorTable};
use crate::geometry::Domain;
use crate::partition::{sample_sites, Partition, PartitionKind};
use crate::real::dist2;
use crate::reference::{terminal_marginals, RbmConfig};
use crate::rng::{substream, RNG_NAME};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Subset of levels a stage runs on; `None` means all.
pub type LevelFilter = Option<Vec<usize>>;

mod tags {
    pub const PARTITION: u64 = 1;
    pub const TRAJECTORIES: u64 = 2;
    pub const MARGINALS: u64 = 3;
    pub const REFERENCE: u64 = 4;
    pub const PERMUTATION: u64 = 5;
    pub const UNIFORM: u64 = 6;
    pub const DIAGNOSTICS: u64 = 7;
}

/// SplitMix64 finalizer over `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z =
        seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Metadata lines written at the top of every output file.
pub fn header(cfg: &RunConfig, stage: &str) -> Vec<String> {
    vec![
        format!("config = {}", cfg.name),
        format!("config_hash = {}", cfg.hash()),
        format!("seed = {}", cfg.seed),
        format!("rng = {RNG_NAME}"),
        format!("version = {VERSION}"),
        format!("stage = {stage}"),
    ]
}

pub fn level_dir(out: &Path, n: usize) -> PathBuf {
    out.join(format!("level_{n}"))
}

fn selected_levels(cfg: &RunConfig, filter: &LevelFilter) -> Result<Vec<(usize, usize)>> {
    let all: Vec<(usize, usize)> = cfg.partition.levels.iter().copied().enumerate().collect();
    match filter {
        None => Ok(all),
        Some(keep) => {
            if let Some(bad) = keep.iter().find(|n| !cfg.partition.levels.contains(n)) {
                return Err(Error::Config(format!(
                    "level filter {bad} is not a configured level"
                )));
            }
            Ok(all.into_iter().filter(|(_, n)| keep.contains(n)).collect())
        }
    }
}

fn partition_kind(cfg: &RunConfig, n: usize) -> PartitionKind {
    match cfg.partition.kind {
        PartitionFamily::Lattice => PartitionKind::Lattice { n },
        PartitionFamily::Voronoi => PartitionKind::Voronoi {
            n,
            mc_per_cell: cfg.partition.mc_per_cell,
            seed: derive_seed(cfg.seed, tags::PARTITION, n as u64),
        },
    }
}

fn window(cfg: &RunConfig) -> Option<(Vec<f64>, Vec<f64>)> {
    cfg.partition
        .window
        .as_ref()
        .map(|w| (w.lo.clone(), w.hi.clone()))
}

/// `(a_n, b_n)` for a level, rejecting `a_n ≥ b_n` before any work is done.
pub fn level_scales(cfg: &RunConfig, level: usize, n: usize) -> Result<(f64, f64)> {
    let (a, b) = cfg.scales.scales(n, level, cfg.dim())?;
    if !(a > 0.0 && a < b) {
        return Err(Error::ScaleOrder { a, b });
    }
    Ok((a, b))
}

/// Builds the partition of one level with scales assigned.
pub fn build_partition(cfg: &RunConfig, level: usize, n: usize) -> Result<Partition<f64>> {
    let (a, b) = level_scales(cfg, level, n)?;
    let mut p = match partition_kind(cfg, n) {
        PartitionKind::Lattice { n } => {
            Partition::lattice(&cfg.domain, n, window(cfg), cfg.partition.quad_per_axis)?
        }
        PartitionKind::Voronoi {
            n,
            mc_per_cell,
            seed,
        } => {
            let sites = sample_sites(&cfg.domain, n, seed)?;
            Partition::voronoi(&cfg.domain, &sites, mc_per_cell, seed)?
        }
    };
    p.assign_scales(a, b)?;
    Ok(p)
}

pub fn load_partition(cfg: &RunConfig, out: &Path, n: usize) -> Result<Partition<f64>> {
    let dir = level_dir(out, n);
    Partition::read_artifacts(
        &cfg.domain,
        partition_kind(cfg, n),
        window(cfg),
        &dir.join("cells.csv"),
        &dir.join("quad.bin"),
    )
}

pub fn load_generator(cfg: &RunConfig, out: &Path, n: usize) -> Result<GeneratorTable<f64>> {
    let dir = level_dir(out, n);
    GeneratorTable::read_csv(
        cfg.dim(),
        &dir.join("edges.csv"),
        &dir.join("generator.csv"),
    )
}

/// Writes `level_<n>/cells.csv` and `quad.bin` for every selected level.
pub fn cmd_partition(cfg: &RunConfig, out: &Path, filter: &LevelFilter) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (level, n) in selected_levels(cfg, filter)? {
        let p = build_partition(cfg, level, n)?;
        let dir = level_dir(out, n);
        std::fs::create_dir_all(&dir)?;
        p.write_artifacts(
            &dir.join("cells.csv"),
            &dir.join("quad.bin"),
            &header(cfg, "partition"),
        )?;
        log::info!("partition n = {n}: {} cells", p.len());
        written.push(dir.join("cells.csv"));
    }
    Ok(written)
}

/// Assembles the generator of every selected level from the stored
/// partition and writes `edges.csv`, `generator.csv` and `validity.csv`.
pub fn cmd_generator(
    cfg: &RunConfig,
    out: &Path,
    filter: &LevelFilter,
) -> Result<Vec<(usize, GeneratorReport<f64>)>> {
    let levels = selected_levels(cfg, filter)?;
    let scales: Vec<(f64, f64)> = levels
        .iter()
        .map(|&(l, n)| level_scales(cfg, l, n))
        .collect::<Result<_>>()?;
    let mut reports = Vec::new();
    for (&(_, n), &(a, b)) in levels.iter().zip(&scales) {
        let mut p = load_partition(cfg, out, n)?;
        p.assign_scales(a, b)?;
        let g = assemble(&p, cfg.generator.rank_tol)?;
        let dir = level_dir(out, n);
        let mut h = header(cfg, "generator");
        h.push(format!("level n = {n}, a_n = {a}, b_n = {b}"));
        g.write_csv(&dir.join("edges.csv"), &dir.join("generator.csv"), &h)?;
        let r = g.report().clone();
        log::info!(
            "generator n = {n}: invalid {}, max |c| {:.4}, min q/rho^2 {:.4}, interior eps/rho {:.4} (c1 {:.4})",
            r.n_invalid,
            r.max_abs_c,
            r.min_q_over_rho2,
            r.max_eps_over_rho_interior,
            r.c1
        );
        reports.push((n, r));
    }
    let mut w = create(&out.join("validity.csv"), &header(cfg, "generator"))?;
    writeln!(w, "n,key,value")?;
    for (n, r) in &reports {
        for (k, v) in r.entries() {
            writeln!(w, "{n},{k},{v}")?;
        }
    }
    w.flush()?;
    Ok(reports)
}

fn create(path: &Path, header: &[String]) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in header {
        writeln!(w, "# {line}")?;
    }
    Ok(w)
}

/// Index of the cell whose centroid is nearest to `x` (lowest id on ties).
pub fn nearest_cell(p: &Partition<f64>, x: &[f64]) -> Result<usize> {
    if x.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: x.len(),
        });
    }
    p.cells()
        .iter()
        .map(|c| dist2(&c.centroid, x))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or(Error::EmptySample)
}

/// All marginal times simulated for a config: the marginal times followed by
/// the stationary time, if any.
pub fn simulated_times(cfg: &RunConfig) -> Vec<f64> {
    let mut t = cfg.simulation.marginal_times.clone();
    t.extend(cfg.simulation.stationary_time);
    t
}

/// A marginals table: `(time, points)` in file order.
pub type Marginals = Vec<(f64, Vec<Vec<f64>>)>;

fn write_marginals(path: &Path, header: &[String], d: usize, data: &Marginals) -> Result<()> {
    let mut w = create(path, header)?;
    let axes: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    writeln!(w, "time,replica,{}", axes.join(","))?;
    for (t, pts) in data {
        for (r, p) in pts.iter().enumerate() {
            let x: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{t},{r},{}", x.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a marginals table written by the simulate stage.
pub fn read_marginals(path: &Path, d: usize) -> Result<Marginals> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let art = |line: usize, msg: &str| Error::Artifact {
        path: path.display().to_string(),
        msg: format!("line {line}: {msg}"),
    };
    let text = std::fs::read_to_string(path)?;
    let mut out: Marginals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("time,") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| art(i + 1, "bad number"))?;
        if f.len() != d + 2 {
            return Err(art(i + 1, "wrong column count"));
        }
        let t = f[0];
        match out.last_mut() {
            Some((lt, pts)) if *lt == t => pts.push(f[2..].to_vec()),
            _ => out.push((t, vec![f[2..].to_vec()])),
        }
    }
    Ok(out)
}

/// Chain trajectories and marginals per level, and reference marginals.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, filter: &LevelFilter) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let times = simulated_times(cfg);
    let d = cfg.dim();
    for (_, n) in selected_levels(cfg, filter)? {
        let p = load_partition(cfg, out, n)?;
        let g = load_generator(cfg, out, n)?;
        let k = ChainKernel::new(&g, &p)?;
        let start = nearest_cell(&p, &cfg.simulation.start)?;
        let dir = level_dir(out, n);
        let mut h = header(cfg, "simulate");
        h.push(format!("level n = {n}, start_cell = {start}"));
        let trajs = simulate_replicas(
            &k,
            start,
            cfg.simulation.horizon,
            cfg.simulation.trajectories,
            derive_seed(cfg.seed, tags::TRAJECTORIES, n as u64),
        )?;
        write_trajectories_csv(&dir.join("trajectories.csv"), &k, &trajs, &h)?;
        let mut data = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            let seed = derive_seed(cfg.seed, tags::MARGINALS, (n as u64) << 8 | i as u64);
            let (pts, absorbed) = marginal_positions(&k, start, t, cfg.simulation.replicas, seed)?;
            h.push(format!("absorbed at t = {t}: {absorbed}"));
            data.push((t, pts));
        }
        write_marginals(&dir.join("marginals.csv"), &h, d, &data)?;
        log::info!("simulate n = {n}: start cell {start}");
        written.push(dir.join("marginals.csv"));
    }
    if cfg.diagnostics.two_sample {
        let data = reference_marginals(cfg)?;
        let path = out.join("reference_marginals.csv");
        let mut h = header(cfg, "simulate");
        h.push(format!(
            "reference dt = {}",
            cfg.reference
                .dt
                .map_or("1e-4 * t".to_string(), |v| v.to_string())
        ));
        write_marginals(&path, &h, d, &data)?;
        written.push(path);
    }
    Ok(written)
}

fn reference_marginals(cfg: &RunConfig) -> Result<Marginals> {
    cfg.simulation
        .marginal_times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let rc = RbmConfig::new(cfg.domain.clone(), t, cfg.reference.dt)?;
            let pts = terminal_marginals(
                &rc,
                &cfg.simulation.start,
                cfg.reference.replicas,
                derive_seed(cfg.seed, tags::REFERENCE, i as u64),
            )?;
            Ok((t, pts))
        })
        .collect()
}

/// One row of `diagnostics.csv`. `level` is `None` for level-free checks.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagRow {
    pub level: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub bound: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSummary {
    pub description: String,
    pub sup_all: f64,
    pub sup_interior: f64,
    pub sup_boundary: f64,
    pub fitted_c_interior: f64,
    pub fitted_c_boundary: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoSampleSummary {
    pub time: f64,
    pub energy: f64,
    pub test: PermutationTest,
}

#[derive(Clone, Debug)]
pub struct LevelDiagnostics {
    pub n: usize,
    pub a_n: f64,
    pub b_n: f64,
    pub report: GeneratorReport<f64>,
    pub consistency: Vec<FunctionSummary>,
    pub hausdorff_violations: Option<usize>,
    pub two_sample: Vec<TwoSampleSummary>,
    pub stationarity: Option<TwoSampleSummary>,
}

#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub levels: Vec<LevelDiagnostics>,
    pub trackers: Option<TrackerReport>,
    /// Largest half-ball moment deviation in σ units over `d ∈ {1,2,3}`, `r ∈ {0.5,1,2}`.
    pub halfball_max_z: Option<f64>,
    pub rows: Vec<DiagRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Runs the enabled diagnostics on stored artifacts and writes
/// `diagnostics.csv` and `summary.txt`.
pub fn cmd_diagnose(cfg: &RunConfig, out: &Path, filter: &LevelFilter) -> Result<Diagnostics> {
    diagnose(cfg, out, filter, true)
}

/// `samples = false` skips every check that needs simulated marginals.
fn diagnose(
    cfg: &RunConfig,
    out: &Path,
    filter: &LevelFilter,
    samples: bool,
) -> Result<Diagnostics> {
    let mut ds = cfg.diagnostics.clone();
    ds.two_sample &= samples;
    ds.stationarity &= samples;
    let ds = &ds;
    let d = cfg.dim();
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    let reference = if ds.two_sample {
        Some(read_marginals(&out.join("reference_marginals.csv"), d)?)
    } else {
        None
    };
    let fs = if ds.consistency {
        test_functions(&cfg.domain)?
    } else {
        Vec::new()
    };
    for (level, n) in selected_levels(cfg, filter)? {
        let (a, b) = level_scales(cfg, level, n)?;
        let p = load_partition(cfg, out, n)?;
        let g = load_generator(cfg, out, n)?;
        let report = g.report().clone();
        let mut row = |metric: String, value: f64, bound: Option<f64>, sigma: Option<f64>| {
            rows.push(DiagRow {
                level: Some(n),
                metric,
                value,
                bound,
                sigma,
            })
        };
        for (k, v) in report.entries() {
            if let Ok(x) = v.parse::<f64>() {
                row(format!("generator.{k}"), x, None, None);
            }
        }
        let mut consistency = Vec::new();
        for (i, f) in fs.iter().enumerate() {
            let r = consistency_error(&g, &p, f)?;
            row(format!("consistency[{i}].sup"), r.sup_all, None, None);
            row(
                format!("consistency[{i}].sup_interior"),
                r.sup_interior,
                None,
                None,
            );
            row(
                format!("consistency[{i}].sup_boundary"),
                r.sup_boundary,
                None,
                None,
            );
            row(
                format!("consistency[{i}].fitted_c_interior"),
                r.fitted_c_interior,
                None,
                None,
            );
            row(
                format!("consistency[{i}].fitted_c_boundary"),
                r.fitted_c_boundary,
                None,
                None,
            );
            consistency.push(FunctionSummary {
                description: f.description.clone(),
                sup_all: r.sup_all,
                sup_interior: r.sup_interior,
                sup_boundary: r.sup_boundary,
                fitted_c_interior: r.fitted_c_interior,
                fitted_c_boundary: r.fitted_c_boundary,
            });
        }
        let hausdorff_violations = if ds.hausdorff {
            let h = hausdorff_check(
                &p,
                ds.hausdorff_pairs,
                derive_seed(cfg.seed, tags::DIAGNOSTICS, n as u64),
            )?;
            row(
                "hausdorff.violations".into(),
                h.violations as f64,
                Some(0.0),
                None,
            );
            row("hausdorff.max_excess".into(), h.max_excess, Some(0.0), None);
            Some(h.violations)
        } else {
            None
        };
        let mut two_sample = Vec::new();
        let mut stationarity = None;
        if ds.two_sample || ds.stationarity {
            let chain = read_marginals(&level_dir(out, n).join("marginals.csv"), d)?;
            let find = |t: f64| chain.iter().find(|(ct, _)| *ct == t).map(|(_, p)| p);
            if let Some(reference) = &reference {
                for (i, (t, rp)) in reference.iter().enumerate() {
                    let cp = find(*t).ok_or_else(|| {
                        Error::MissingArtifact(format!("chain marginals at t = {t} for level {n}"))
                    })?;
                    let energy = two_sample_distance(cp, rp)?.energy;
                    let test = permutation_test(
                        cp,
                        rp,
                        ds.permutations,
                        derive_seed(cfg.seed, tags::PERMUTATION, (n as u64) << 8 | i as u64),
                    )?;
                    row(format!("energy[t={t}]"), energy, Some(test.null_q95), None);
                    row(
                        format!("energy_p[t={t}]"),
                        test.p_value,
                        Some(cfg.study.significance),
                        None,
                    );
                    two_sample.push(TwoSampleSummary {
                        time: *t,
                        energy,
                        test,
                    });
                }
            }
            if let (true, Some(ts)) = (ds.stationarity, cfg.simulation.stationary_time) {
                let cp = find(ts).ok_or_else(|| {
                    Error::MissingArtifact(format!("chain marginals at t = {ts} for level {n}"))
                })?;
                let uni = cfg.domain.sample_uniform(
                    ds.uniform_samples,
                    &mut substream(derive_seed(cfg.seed, tags::UNIFORM, 0), 0),
                )?;
                let energy = two_sample_distance(cp, &uni)?.energy;
                let test = permutation_test(
                    cp,
                    &uni,
                    ds.permutations,
                    derive_seed(cfg.seed, tags::PERMUTATION, (n as u64) << 8 | 0xff),
                )?;
                row(
                    "stationary.energy".into(),
                    energy,
                    Some(test.null_q95),
                    None,
                );
                row(
                    "stationary.p".into(),
                    test.p_value,
                    Some(cfg.study.significance),
                    None,
                );
                stationarity = Some(TwoSampleSummary {
                    time: ts,
                    energy,
                    test,
                });
            }
        }
        log::info!("diagnose n = {n} done");
        levels.push(LevelDiagnostics {
            n,
            a_n: a,
            b_n: b,
            report,
            consistency,
            hausdorff_violations,
            two_sample,
            stationarity,
        });
    }
    let trackers = (ds.trackers && levels.len() >= 2)
        .then(|| bound_trackers(&levels.iter().map(|l| &l.report).collect::<Vec<_>>()));
    if let Some(t) = &trackers {
        for (l, vals) in levels.iter().zip(&t.values) {
            for (name, v) in t.names.iter().zip(vals) {
                rows.push(DiagRow {
                    level: Some(l.n),
                    metric: format!("tracker.{name}"),
                    value: *v,
                    bound: None,
                    sigma: None,
                });
            }
        }
        for (name, g) in t.names.iter().zip(t.growth.iter().flatten()) {
            rows.push(DiagRow {
                level: None,
                metric: format!("tracker_growth.{name}"),
                value: *g,
                bound: Some(cfg.study.tracker_growth),
                sigma: None,
            });
        }
    }
    let mut halfball_max_z = None;
    if ds.halfball {
        let mut zmax: f64 = 0.0;
        for dd in 1..=3 {
            for (j, r) in [0.5, 1.0, 2.0].into_iter().enumerate() {
                let c = halfball_moment_check(
                    dd,
                    r,
                    ds.halfball_samples,
                    derive_seed(cfg.seed, tags::DIAGNOSTICS, 100 + 3 * dd as u64 + j as u64),
                )?;
                let s = c.first_sigma[dd - 1];
                rows.push(DiagRow {
                    level: None,
                    metric: format!("halfball[d={dd},r={r}].first"),
                    value: c.first_moment[dd - 1],
                    bound: Some(c.first_target[dd - 1]),
                    sigma: Some(s),
                });
                rows.push(DiagRow {
                    level: None,
                    metric: format!("halfball[d={dd},r={r}].second"),
                    value: c.second_moment[0],
                    bound: Some(c.second_target[0]),
                    sigma: Some(c.second_sigma[0]),
                });
                zmax = zmax.max(c.max_z);
            }
        }
        rows.push(DiagRow {
            level: None,
            metric: "halfball.max_z".into(),
            value: zmax,
            bound: Some(3.0),
            sigma: None,
        });
        halfball_max_z = Some(zmax);
    }
    if ds.symdiff
        && matches!(
            cfg.domain,
            Domain::Ball { .. } | Domain::Radial { .. } | Domain::Box { .. }
        )
    {
        let (lo, hi) = cfg.domain.bounding_box()?;
        let mut x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        x[0] = hi[0];
        let bp = cfg.domain.nearest_boundary_point(&x)?;
        for (j, r) in [0.4, 0.2, 0.1, 0.05].into_iter().enumerate() {
            let e = boundary_symdiff_check(
                &cfg.domain,
                &bp.location,
                r,
                100_000,
                derive_seed(cfg.seed, tags::DIAGNOSTICS, 200 + j as u64),
            )?;
            rows.push(DiagRow {
                level: None,
                metric: format!("symdiff_ratio[r={r}]"),
                value: e.ratio,
                bound: None,
                sigma: Some(e.sigma / e.measure.max(f64::MIN_POSITIVE) * e.ratio),
            });
        }
    }

    let mut w = create(&out.join("diagnostics.csv"), &header(cfg, "diagnose"))?;
    writeln!(w, "level,metric,value,bound,sigma")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.level.map_or(String::new(), |n| n.to_string()),
            r.metric,
            r.value,
            opt(r.bound),
            opt(r.sigma)
        )?;
    }
    w.flush()?;
    let diags = Diagnostics {
        levels,
        trackers,
        halfball_max_z,
        rows,
    };
    write_summary(
        cfg,
        out,
        &diags,
        &fs.iter().map(|f| f.description.clone()).collect::<Vec<_>>(),
    )?;
    Ok(diags)
}

fn write_summary(
    cfg: &RunConfig,
    out: &Path,
    diags: &Diagnostics,
    fnames: &[String],
) -> Result<()> {
    let mut w = create(&out.join("summary.txt"), &header(cfg, "diagnose"))?;
    for (i, f) in fnames.iter().enumerate() {
        writeln!(w, "test function {i}: {f}")?;
    }
    for l in &diags.levels {
        let r = &l.report;
        writeln!(
            w,
            "\nlevel n = {} (a_n = {:.6}, b_n = {:.6})",
            l.n, l.a_n, l.b_n
        )?;
        writeln!(
            w,
            "  cells {} active {} boundary {} invalid {} | max eps/rho interior {:.4} boundary {:.4} | c1 {:.4} | max|c| {:.4} | min q/rho^2 {:.4}",
            r.n_cells, r.n_active, r.n_boundary, r.n_invalid, r.max_eps_over_rho_interior, r.max_eps_over_rho_boundary, r.c1, r.max_abs_c, r.min_q_over_rho2
        )?;
        for (i, c) in l.consistency.iter().enumerate() {
            writeln!(
                w,
                "  consistency[{i}]: sup {:.5} (interior {:.5}, boundary {:.5}), fitted C interior {:.4}, boundary {:.4}",
                c.sup_all, c.sup_interior, c.sup_boundary, c.fitted_c_interior, c.fitted_c_boundary
            )?;
        }
        for t in &l.two_sample {
            writeln!(
                w,
                "  energy at t = {}: {:.6} (null q95 {:.6}, p = {:.3})",
                t.time, t.energy, t.test.null_q95, t.test.p_value
            )?;
        }
        if let Some(s) = &l.stationarity {
            writeln!(
                w,
                "  stationarity at t = {}: energy {:.6} (null q95 {:.6}, p = {:.3})",
                s.time, s.energy, s.test.null_q95, s.test.p_value
            )?;
        }
        if let Some(v) = l.hausdorff_violations {
            writeln!(w, "  hausdorff violations: {v}")?;
        }
    }
    if let Some(t) = &diags.trackers {
        writeln!(
            w,
            "\ntrackers {:?}: growth {:?}, q-qtilde bound holds: {}",
            t.names, t.growth, t.q_qtilde_bound_holds
        )?;
    }
    if let Some(z) = diags.halfball_max_z {
        writeln!(w, "half-ball moments: max |z| = {z:.3}")?;
    }
    w.flush()?;
    Ok(())
}

/// One named pass/fail assertion of the study.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct StudyOutcome {
    pub diagnostics: Diagnostics,
    pub checks: Vec<Check>,
}

impl StudyOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Evaluates the study assertions on diagnostics already computed.
pub fn study_checks(cfg: &RunConfig, diags: &Diagnostics) -> Vec<Check> {
    let s = &cfg.study;
    let mut checks = Vec::new();
    let mut push = |name: String, passed: bool, detail: String| {
        checks.push(Check {
            name,
            passed,
            detail,
        })
    };
    let (Some(first), Some(last)) = (diags.levels.first(), diags.levels.last()) else {
        return checks;
    };
    let r = &last.report;
    push(
        "validity".into(),
        r.n_invalid == 0 && r.min_q_over_rho2 > 0.0 && r.max_abs_c < 1.0 && r.interior_eps_within_c1,
        format!(
            "n = {}: invalid {}, min q/rho^2 {:.4}, max|c| {:.4}, interior eps/rho {:.4} vs c1 {:.4}",
            last.n, r.n_invalid, r.min_q_over_rho2, r.max_abs_c, r.max_eps_over_rho_interior, r.c1
        ),
    );
    if diags.levels.len() >= 2 {
        for (i, (f0, f1)) in first.consistency.iter().zip(&last.consistency).enumerate() {
            let ratio = f0.sup_all / f1.sup_all;
            push(
                format!("consistency_decay[{i}]"),
                ratio >= s.decay_factor,
                format!(
                    "{}: sup {:.5} -> {:.5}, ratio {:.3} (need >= {})",
                    f0.description, f0.sup_all, f1.sup_all, ratio, s.decay_factor
                ),
            );
            let cs: Vec<f64> = diags
                .levels
                .iter()
                .map(|l| l.consistency[i].fitted_c_interior)
                .collect();
            let (lo, hi) = cs
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
            push(
                format!("constant_stability[{i}]"),
                lo > 0.0 && hi / lo <= s.constant_spread,
                format!(
                    "{}: fitted interior C {:?}, spread {:.3} (need <= {})",
                    f0.description,
                    cs,
                    hi / lo,
                    s.constant_spread
                ),
            );
        }
    }
    if let Some(t) = &diags.trackers {
        push(
            "trackers".into(),
            t.bounded(s.tracker_growth) && t.q_qtilde_bound_holds,
            format!(
                "growth {:?} (need <= {}), q-qtilde bound holds: {}",
                t.growth, s.tracker_growth, t.q_qtilde_bound_holds
            ),
        );
    }
    if diags
        .levels
        .iter()
        .any(|l| l.hausdorff_violations.is_some())
    {
        let v: usize = diags
            .levels
            .iter()
            .filter_map(|l| l.hausdorff_violations)
            .sum();
        push("hausdorff".into(), v == 0, format!("{v} violations"));
    }
    let times: Vec<f64> = last.two_sample.iter().map(|t| t.time).collect();
    for (k, t) in times.iter().enumerate() {
        let series: Vec<&TwoSampleSummary> =
            diags.levels.iter().map(|l| &l.two_sample[k]).collect();
        let monotone = series
            .windows(2)
            .all(|w| w[1].energy <= w[0].energy.max(w[1].test.null_q95));
        push(
            format!("energy_monotone[t={t}]"),
            monotone,
            format!(
                "energy {:?}, null q95 {:?}",
                series.iter().map(|x| x.energy).collect::<Vec<_>>(),
                series.iter().map(|x| x.test.null_q95).collect::<Vec<_>>()
            ),
        );
    }
    if let Some(fin) = last
        .two_sample
        .iter()
        .max_by(|a, b| a.time.total_cmp(&b.time))
    {
        push(
            format!("equal_law[t={}]", fin.time),
            !fin.test.rejects(s.significance),
            format!(
                "n = {}: p = {:.3} (reject below {})",
                last.n, fin.test.p_value, s.significance
            ),
        );
    }
    if let Some(st) = &last.stationarity {
        push(
            "stationarity".into(),
            !st.test.rejects(s.significance),
            format!(
                "n = {}, t = {}: energy {:.6}, p = {:.3} (reject below {})",
                last.n, st.time, st.energy, st.test.p_value, s.significance
            ),
        );
    }
    if let Some(z) = diags.halfball_max_z {
        push("halfball".into(), z < 3.0, format!("max |z| = {z:.3}"));
    }
    checks
}

/// End-to-end run of all stages plus `study.csv` and `checks.csv`.
pub fn cmd_study(cfg: &RunConfig, out: &Path, filter: &LevelFilter) -> Result<StudyOutcome> {
    cmd_partition(cfg, out, filter)?;
    let reports = cmd_generator(cfg, out, filter)?;
    let invalid: Vec<usize> = reports
        .iter()
        .filter(|(_, r)| r.n_invalid > 0)
        .map(|(n, _)| *n)
        .collect();
    if invalid.is_empty() {
        cmd_simulate(cfg, out, filter)?;
    } else {
        log::warn!("generator has invalid cells at levels {invalid:?}; skipping simulation");
    }
    let diags = diagnose(cfg, out, filter, invalid.is_empty())?;
    let mut checks = study_checks(cfg, &diags);
    if !invalid.is_empty() {
        checks.push(Check {
            name: "simulation".into(),
            passed: false,
            detail: format!("skipped: invalid cells at levels {invalid:?}"),
        });
    }

    let mut w = create(&out.join("study.csv"), &header(cfg, "study"))?;
    let nf = diags.levels.first().map_or(0, |l| l.consistency.len());
    let times: Vec<f64> = diags.levels.first().map_or(Vec::new(), |l| {
        l.two_sample.iter().map(|t| t.time).collect()
    });
    let mut cols = vec![
        "n",
        "a_n",
        "b_n",
        "max_eps_over_rho_interior",
        "max_eps_over_rho_boundary",
        "max_abs_c",
        "min_q_over_rho2",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    cols.extend((0..nf).map(|i| format!("sup_consistency_f{i}")));
    cols.extend(times.iter().map(|t| format!("energy_t{t}")));
    writeln!(w, "{}", cols.join(","))?;
    for l in &diags.levels {
        let r = &l.report;
        let mut v = vec![
            l.n.to_string(),
            l.a_n.to_string(),
            l.b_n.to_string(),
            r.max_eps_over_rho_interior.to_string(),
            r.max_eps_over_rho_boundary.to_string(),
            r.max_abs_c.to_string(),
            r.min_q_over_rho2.to_string(),
        ];
        v.extend(l.consistency.iter().map(|c| c.sup_all.to_string()));
        v.extend(l.two_sample.iter().map(|t| t.energy.to_string()));
        writeln!(w, "{}", v.join(","))?;
    }
    w.flush()?;

    let mut w = create(&out.join("checks.csv"), &header(cfg, "study"))?;
    writeln!(w, "check,passed,detail")?;
    for c in &checks {
        writeln!(
            w,
            "{},{},\"{}\"",
            c.name,
            c.passed,
            c.detail.replace('"', "'")
        )?;
    }
    w.flush()?;
    Ok(StudyOutcome {
        diagnostics: diags,
        checks,
    })
}
