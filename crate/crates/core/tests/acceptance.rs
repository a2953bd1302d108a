//! Acceptance suite. Each test prints one `PASS`/`FAIL` line; run with
//! `cargo test -p partition-chain --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use partition_chain::config::RunConfig;
use partition_chain::diagnostics::{halfball_moment_check, hausdorff_check, test_functions};
use partition_chain::generator::{assemble, beta_d};
use partition_chain::pipeline::{
    build_partition, cmd_diagnose, cmd_generator, cmd_partition, cmd_simulate, cmd_study,
    load_generator, load_partition, study_checks, Check, Diagnostics,
};
use partition_chain::{DenseMatrix, Domain, Partition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "{} criterion {id:>2} {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} {name}: {detail}");
}

fn bundled(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.toml"));
    RunConfig::from_path(&path).unwrap()
}

struct Study {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    out: PathBuf,
    diags: Diagnostics,
    checks: Vec<Check>,
    build_time: Duration,
    simulate_time: Duration,
    diagnose_time: Duration,
}

impl Study {
    fn check(&self, name: &str) -> &Check {
        self.checks
            .iter()
            .find(|c| c.name == name)
            .unwrap_or_else(|| panic!("no check {name}"))
    }
}

/// The bundled disk study, run once and shared.
fn disk_study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let cfg = bundled("disk-voronoi");
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_path_buf();
        let t0 = Instant::now();
        cmd_partition(&cfg, &out, &None).unwrap();
        cmd_generator(&cfg, &out, &None).unwrap();
        let build_time = t0.elapsed();
        let t1 = Instant::now();
        cmd_simulate(&cfg, &out, &None).unwrap();
        let simulate_time = t1.elapsed();
        let t2 = Instant::now();
        let diags = cmd_diagnose(&cfg, &out, &None).unwrap();
        let diagnose_time = t2.elapsed();
        let checks = study_checks(&cfg, &diags);
        Study {
            _dir: dir,
            cfg,
            out,
            diags,
            checks,
            build_time,
            simulate_time,
            diagnose_time,
        }
    })
}

fn unit_ball_volume(d: usize) -> f64 {
    std::f64::consts::PI.powf(d as f64 / 2.0) / statrs::function::gamma::gamma(d as f64 / 2.0 + 1.0)
}

#[test]
fn criterion_01_half_ball_constant() {
    let t = Instant::now();
    let closed = [0.5, 4.0 / (3.0 * std::f64::consts::PI), 0.375];
    let mut worst_exact = 0.0f64;
    let mut worst_z = 0.0f64;
    for d in 1..=3 {
        let oracle = 2.0 * unit_ball_volume(d - 1) / ((d + 1) as f64 * unit_ball_volume(d));
        let b: f64 = beta_d(d);
        worst_exact = worst_exact
            .max((b - closed[d - 1]).abs())
            .max((b - oracle).abs());

        // independent rejection sampler on the upper half of B(0, r)
        let r = 1.5;
        let samples = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE + d as u64);
        let mut pts = Vec::with_capacity(samples);
        while pts.len() < samples {
            let mut y: Vec<f64> = (0..d)
                .map(|_| r * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            if y.iter().map(|v| v * v).sum::<f64>() <= r * r {
                y[d - 1] = y[d - 1].abs();
                pts.push(y);
            }
        }
        let nf = samples as f64;
        let z = |vals: &mut dyn Iterator<Item = f64>, target: f64| {
            let v: Vec<f64> = vals.collect();
            let mean = v.iter().sum::<f64>() / nf;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            (mean - target).abs() / (var / nf).sqrt()
        };
        for i in 0..d {
            let target = if i == d - 1 { oracle } else { 0.0 };
            worst_z = worst_z.max(z(&mut pts.iter().map(|p| p[i] / r), target));
            for j in 0..d {
                let target = if i == j { r * r / (d + 2) as f64 } else { 0.0 };
                worst_z = worst_z.max(z(&mut pts.iter().map(|p| p[i] * p[j]), target));
            }
        }
        let lib = halfball_moment_check(d, r, samples, 7).unwrap();
        worst_z = worst_z.max(lib.max_z);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        1,
        "half-ball constant",
        worst_exact <= 1e-12 && worst_z < 3.0 && secs < 10.0,
        &format!("max |beta - oracle| {worst_exact:.2e} (<= 1e-12), max |z| {worst_z:.3} (< 3), {secs:.2}s (< 10s)"),
    );
}

#[test]
fn criterion_02_lattice_exactness() {
    let t = Instant::now();
    let ws = Domain::<f64>::whole_space(1).unwrap();
    let mut worst_c = 0.0f64;
    let mut worst_q = 0.0f64;
    let mut worst_l = 0.0f64;
    let mut worst_sq = 0.0f64;
    let mut active = 0;
    for n in [8usize, 20, 50] {
        let nf = n as f64;
        for rho_units in [1.01, 1.5, 1.99, 2.0] {
            let rho = rho_units / nf;
            let mut p = Partition::lattice(&ws, n, Some((vec![-1.0], vec![1.0])), 4).unwrap();
            p.assign_scales(rho, 2.0 * rho).unwrap();
            let g = assemble(&p, 1e-12).unwrap();
            let x: Vec<f64> = p.cells().iter().map(|c| c.centroid[0]).collect();
            let f: Vec<f64> = x.iter().map(|&x| (3.0 * x).cos() + x.powi(4)).collect();
            let sq: Vec<f64> = x.iter().map(|&x| x * x).collect();
            for cell in g.cells().iter().filter(|c| c.active) {
                let k = cell.cell_id;
                active += 1;
                worst_c = worst_c.max(cell.max_abs_c());
                worst_q = worst_q.max((cell.q - 2.0 / (3.0 * nf * nf)).abs() * nf * nf);
                let second = nf * nf / 2.0 * (f[k + 1] + f[k - 1] - 2.0 * f[k]);
                worst_l =
                    worst_l.max((g.apply(&f, k).unwrap() - second).abs() / second.abs().max(1.0));
                worst_sq = worst_sq.max((g.apply(&sq, k).unwrap() - 1.0).abs());
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = active > 0
        && worst_c <= 1e-12
        && worst_q <= 1e-12
        && worst_l <= 1e-12
        && worst_sq <= 1e-12
        && secs < 1.0;
    verdict(
        2,
        "lattice exactness",
        ok,
        &format!(
            "{active} cells: max|c| {worst_c:.1e}, max n^2|q - 2/(3n^2)| {worst_q:.1e}, second difference {worst_l:.1e}, L(x^2) - 1 {worst_sq:.1e}, {secs:.3}s (< 1s)"
        ),
    );
}

fn naive_mul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            for j in 0..m {
                c[i * m + j] += a[i * k + l] * b[l * m + j];
            }
        }
    }
    c
}

fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            t[j * n + i] = a[i * m + j];
        }
    }
    t
}

fn rel_diff(x: &[f64], y: &[f64], scale: &[f64]) -> f64 {
    let s = scale
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    x.iter()
        .zip(y)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / s
}

#[test]
fn criterion_03_pseudoinverse_suite() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9E11);
    let mut worst = 0.0f64;
    let mut worst_id = 0.0f64;
    let mut full_row = 0;
    for k in 0..1000 {
        let r = rng.random_range(1..=8usize);
        let c = rng.random_range(1..=64usize);
        // every fourth matrix is a product of thinner factors and so rank deficient
        let a: Vec<f64> = if k % 4 == 3 && r.min(c) > 1 {
            let rank = rng.random_range(1..r.min(c));
            let u: Vec<f64> = (0..r * rank).map(|_| rng.sample(StandardNormal)).collect();
            let v: Vec<f64> = (0..rank * c).map(|_| rng.sample(StandardNormal)).collect();
            naive_mul(&u, &v, r, rank, c)
        } else {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            (0..r * c)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let p = DenseMatrix::new(r, c, a.clone())
            .unwrap()
            .pseudoinverse(1e-12)
            .unwrap();
        let p = p.as_slice().to_vec();
        let ap = naive_mul(&a, &p, r, c, r);
        let pa = naive_mul(&p, &a, c, r, c);
        worst = worst
            .max(rel_diff(&naive_mul(&ap, &a, r, r, c), &a, &a))
            .max(rel_diff(&naive_mul(&pa, &p, c, c, r), &p, &p))
            .max(rel_diff(&transpose(&ap, r, r), &ap, &ap))
            .max(rel_diff(&transpose(&pa, c, c), &pa, &pa));
        if k % 4 != 3 && r <= c {
            full_row += 1;
            let id: Vec<f64> = (0..r * r)
                .map(|i| if i / r == i % r { 1.0 } else { 0.0 })
                .collect();
            worst_id = worst_id.max(rel_diff(&ap, &id, &id));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        3,
        "pseudoinverse suite",
        worst <= 1e-10 && worst_id <= 1e-10 && secs < 10.0,
        &format!("1000 matrices: max Penrose residual {worst:.2e}, {full_row} full-row-rank: max |AA+ - I| {worst_id:.2e} (<= 1e-10), {secs:.2}s (< 10s)"),
    );
}

#[test]
fn criterion_04_validity() {
    let s = disk_study();
    let n = *s.cfg.partition.levels.last().unwrap();
    let g = load_generator(&s.cfg, &s.out, n).unwrap();
    let r = g.report();
    let cells: Vec<_> = g.cells().iter().filter(|c| c.active).collect();
    let min_q_rho2 = cells
        .iter()
        .map(|c| c.q / (c.rho * c.rho))
        .fold(f64::INFINITY, f64::min);
    let max_c = cells.iter().map(|c| c.max_abs_c()).fold(0.0, f64::max);
    let eps_rho = cells
        .iter()
        .filter(|c| !c.is_boundary)
        .map(|c| c.epsilon / c.rho)
        .fold(0.0, f64::max);
    let secs = s.build_time.as_secs_f64();
    verdict(
        4,
        "validity",
        min_q_rho2 > 0.0 && max_c < 1.0 && eps_rho < r.c1 && r.n_invalid == 0 && secs < 120.0,
        &format!(
            "n = {n}: min q/rho^2 {min_q_rho2:.4}, max|c| {max_c:.4}, interior eps/rho {eps_rho:.4} vs c1 {:.4}, build {secs:.1}s (< 120s)",
            r.c1
        ),
    );
}

#[test]
fn criterion_05_consistency_decay() {
    let s = disk_study();
    let levels = &s.cfg.partition.levels;
    let (first, last) = (levels[0], *levels.last().unwrap());
    let dom = s.cfg.domain.clone();
    let funcs = test_functions(&dom).unwrap();
    let sup = |n: usize, f: &partition_chain::NeumannTestFunction<f64>| {
        let p = load_partition(&s.cfg, &s.out, n).unwrap();
        let g = load_generator(&s.cfg, &s.out, n).unwrap();
        let pf: Vec<f64> = p.cells().iter().map(|c| f.value(&c.centroid)).collect();
        g.cells()
            .iter()
            .filter(|c| c.active && c.valid.is_valid())
            .map(|c| {
                (g.apply(&pf, c.cell_id).unwrap()
                    - 0.5 * f.laplacian(&p.cells()[c.cell_id].centroid))
                .abs()
            })
            .fold(0.0, f64::max)
    };
    let mut ok = s.diagnose_time.as_secs_f64() < 300.0;
    let mut parts = Vec::new();
    for (i, f) in funcs.iter().enumerate() {
        let (e0, e1) = (sup(first, f), sup(last, f));
        let ratio = e0 / e1;
        let cs: Vec<f64> = s
            .diags
            .levels
            .iter()
            .map(|l| l.consistency[i].fitted_c_interior)
            .collect();
        let spread = cs.iter().fold(0.0f64, |m, &v| m.max(v))
            / cs.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        ok &= ratio >= 1.5 && spread <= 2.0;
        parts.push(format!("f{i}: sup {e0:.4} -> {e1:.4} ratio {ratio:.3} (>= 1.5), interior C spread {spread:.3} (<= 2)"));
    }
    parts.push(format!(
        "diagnose {:.1}s (< 300s)",
        s.diagnose_time.as_secs_f64()
    ));
    verdict(5, "consistency decay", ok, &parts.join("; "));
}

#[test]
fn criterion_06_bound_trackers() {
    let s = disk_study();
    let mut worst = 0.0f64;
    for &n in &s.cfg.partition.levels {
        let g = load_generator(&s.cfg, &s.out, n).unwrap();
        for c in g.cells().iter().filter(|c| c.active) {
            worst = worst.max((c.q - c.q_tilde).abs() / ((c.epsilon + 2.0 * c.rho) * c.epsilon));
        }
    }
    let t = s.diags.trackers.as_ref().expect("trackers enabled");
    let growth = t.growth.clone().unwrap_or_default();
    verdict(
        6,
        "bound trackers",
        worst <= 1.0 && t.bounded(2.0),
        &format!("max |q - qtilde| / ((eps + 2 rho) eps) {worst:.4} (<= 1), tracker growth {growth:?} (<= 2)"),
    );
}

#[test]
fn criterion_07_weak_convergence_proxy() {
    let s = disk_study();
    let mut ok = s.simulate_time.as_secs_f64() < 600.0;
    let mut parts = Vec::new();
    for t in [0.1, 0.5] {
        let c = s.check(&format!("energy_monotone[t={t}]"));
        ok &= c.passed;
        parts.push(format!("t = {t} monotone {}: {}", c.passed, c.detail));
    }
    let eq = s.check("equal_law[t=0.5]");
    ok &= eq.passed;
    parts.push(format!("equality {}", eq.detail));
    parts.push(format!(
        "simulate {:.1}s (< 600s)",
        s.simulate_time.as_secs_f64()
    ));
    verdict(7, "weak convergence proxy", ok, &parts.join("; "));
}

#[test]
fn criterion_08_stationarity() {
    let s = disk_study();
    let c = s.check("stationarity");
    verdict(8, "stationarity", c.passed, &c.detail);
}

#[test]
fn criterion_09_hausdorff() {
    let t = Instant::now();
    let cfg = bundled("disk-voronoi");
    let p = build_partition(&cfg, 1, cfg.partition.levels[1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4A05);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let id = rng.random_range(0..p.len());
        let z = p.domain().sample_uniform(1, &mut rng).unwrap().remove(0);
        let cell = &p.cells()[id];
        let d_h = (0..cell.quad_len())
            .map(|k| {
                cell.quad_point(k)
                    .iter()
                    .zip(&z)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        let centre = cell
            .centroid
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max((d_h - centre).abs() - p.epsilon(id).unwrap());
    }
    let lib = hausdorff_check(&p, 200, 11).unwrap();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        9,
        "hausdorff inequality",
        worst <= 0.0 && lib.violations == 0 && secs < 5.0,
        &format!("200 pairs: max excess {worst:.4} (<= 0), library check {} violations, {secs:.2}s (< 5s)", lib.violations),
    );
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_10_determinism() {
    let mut cfg = bundled("disk-voronoi");
    cfg.partition.levels = vec![200, 400];
    cfg.partition.mc_per_cell = 50;
    cfg.simulation.replicas = 150;
    cfg.simulation.stationary_time = Some(1.0);
    cfg.reference.replicas = 150;
    cfg.reference.dt = Some(1e-3);
    cfg.diagnostics.permutations = 20;
    cfg.diagnostics.hausdorff_pairs = 20;
    cfg.diagnostics.halfball_samples = 10_000;
    cfg.diagnostics.uniform_samples = 150;
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| cmd_study(&cfg, dir.path(), &None)).unwrap();
        (read_tree(dir.path()), dir)
    };
    let (a, _da) = run(1);
    let (b, _db) = run(4);
    let names: Vec<String> = a.iter().map(|(p, _)| p.display().to_string()).collect();
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let ok = a.len() == b.len() && differing.is_empty() && a.len() >= 12;
    verdict(
        10,
        "determinism",
        ok,
        &format!(
            "{} files from every stage compared across 1 and 4 threads, differing: {differing:?}",
            names.len()
        ),
    );
}
