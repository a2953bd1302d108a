//! Structural invariants of partitions, generators, chains and the
//! reference process, checked against brute-force computations.

use partition_chain::chain::simulate;
use partition_chain::config::RunConfig;
use partition_chain::diagnostics::permutation_test;
use partition_chain::generator::assemble;
use partition_chain::partition::sample_sites;
use partition_chain::pipeline::build_partition;
use partition_chain::reference::terminal_marginals;
use partition_chain::{ChainKernel, DenseMatrix, Domain, Partition, RbmConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn disk() -> Domain<f64> {
    Domain::ball(vec![0.0, 0.0], 1.0).unwrap()
}

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_site(sites: &[Vec<f64>], x: &[f64]) -> usize {
    (0..sites.len())
        .min_by(|&i, &j| d2(&sites[i], x).total_cmp(&d2(&sites[j], x)))
        .unwrap()
}

fn voronoi_disk(n: usize, seed: u64) -> (Partition<f64>, Vec<Vec<f64>>) {
    let sites = sample_sites(&disk(), n, seed).unwrap();
    (
        Partition::voronoi(&disk(), &sites, 200, seed).unwrap(),
        sites,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn voronoi_cells_cover_the_disk(n in 20usize..120, seed in 0u64..1000) {
        let (p, sites) = voronoi_disk(n, seed);
        let (total, sigma) = p.total_measure();
        prop_assert!((total - std::f64::consts::PI).abs() <= 4.0 * sigma + 1e-9, "total {total} sigma {sigma}");
        for c in p.cells() {
            for k in 0..c.quad_len() {
                prop_assert_eq!(nearest_site(&sites, c.quad_point(k)), c.id);
            }
        }
        // fresh points are claimed by exactly one site
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
        for x in disk().sample_uniform(10_000, &mut rng).unwrap() {
            let best = nearest_site(&sites, &x);
            let dmin = d2(&sites[best], &x);
            prop_assert_eq!(sites.iter().filter(|s| d2(s, &x) == dmin).count(), 1);
        }
    }

    #[test]
    fn neighbourhood_sandwich(seed in 0u64..1000) {
        let (mut p, sites) = voronoi_disk(200, seed);
        p.assign_scales(0.35, 0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = (0..p.len()).step_by(17).collect();
        let samples = disk().sample_uniform(20_000, &mut rng).unwrap();
        let mut checked = 0;
        for id in ids {
            let (rho, eps) = (p.rho(id), p.epsilon(id).unwrap());
            if rho <= eps {
                continue;
            }
            checked += 1;
            let anchor = p.cells()[id].anchor_point().to_vec();
            let nb = p.neighbours(id).unwrap();
            for x in samples.iter().filter(|x| d2(x, &anchor).sqrt() < rho - eps) {
                prop_assert!(nb.contains(&nearest_site(&sites, x)));
            }
            for &j in &nb {
                let c = &p.cells()[j];
                for k in 0..c.quad_len() {
                    let y = c.quad_point(k);
                    prop_assert!(d2(y, &[0.0, 0.0]) <= 1.0);
                    prop_assert!(d2(y, &anchor).sqrt() <= rho + eps);
                }
            }
        }
        prop_assert!(checked >= 4, "only {checked} cells with rho > eps");
    }

    #[test]
    fn generator_rows_conserve_mass(n in 60usize..200, seed in 0u64..1000) {
        let (mut p, _) = voronoi_disk(n, seed);
        p.assign_scales(0.45, 0.8).unwrap();
        let g = assemble(&p, 1e-12).unwrap();
        let ones = vec![1.0; p.len()];
        let affine: Vec<f64> = p.cells().iter().map(|c| 2.0 + 0.5 * c.centroid[0]).collect();
        for c in g.cells().iter().filter(|c| c.valid.is_valid()) {
            prop_assert_eq!(g.apply(&ones, c.cell_id).unwrap(), 0.0);
            prop_assert!(c.q > 0.0);
            let q = DenseMatrix::new(2, 2, c.q_matrix.clone()).unwrap();
            prop_assert!(q.min_quadratic_form().unwrap() > 0.0);
            // rate matrix row: off-diagonal rates sum to the holding rate
            let rate: f64 = c.neighbors.iter().zip(&c.weights).filter(|(&j, _)| j != c.cell_id).map(|(_, w)| w / c.q).sum();
            prop_assert!((rate - c.off_diagonal_weight() / c.q).abs() <= 1e-12 * rate.abs());
            if !c.is_boundary {
                // corrected interior cells reproduce affine functions to first order
                prop_assert!(g.apply(&affine, c.cell_id).unwrap().abs() < 1e-8);
            }
        }
    }

    #[test]
    fn jumps_stay_in_neighbourhoods(seed in 0u64..1000, start in 0usize..150) {
        let (mut p, _) = voronoi_disk(150, 3);
        p.assign_scales(0.45, 0.8).unwrap();
        let g = assemble(&p, 1e-12).unwrap();
        prop_assert_eq!(g.report().n_invalid, 0);
        let k = ChainKernel::new(&g, &p).unwrap();
        let t = simulate(&k, start, 0.5, seed, 0).unwrap();
        let mut prev = start;
        let mut last_time = 0.0;
        for &(time, cell) in &t.events {
            prop_assert!(time > last_time && time <= 0.5);
            prop_assert!(cell != prev && cell < p.len());
            prop_assert!(g.cell(prev).unwrap().neighbors.contains(&cell));
            prev = cell;
            last_time = time;
        }
    }
}

#[test]
fn interior_bounds_stay_stable_across_levels() {
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/disk-voronoi.toml");
    let cfg = RunConfig::from_path(&path).unwrap();
    let reports: Vec<_> = cfg.partition.levels[..2]
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            assemble(&build_partition(&cfg, l, n).unwrap(), 1e-12)
                .unwrap()
                .report()
                .clone()
        })
        .collect();
    let (r0, r1) = (&reports[0], &reports[1]);
    assert!(
        r1.c_constant_interior <= 2.0 * r0.c_constant_interior,
        "{} -> {}",
        r0.c_constant_interior,
        r1.c_constant_interior
    );
    assert!(r1.tracker_qtilde_identity <= 2.0 * r0.tracker_qtilde_identity);
    for r in &reports {
        assert!(r.min_q_over_rho2 > 0.1, "{}", r.min_q_over_rho2);
        assert!(
            r.min_qeig_over_rho2_interior > 0.1,
            "{}",
            r.min_qeig_over_rho2_interior
        );
    }
}

#[test]
fn halving_the_reference_step_stays_within_noise() {
    let dom = disk();
    let coarse = RbmConfig::new(dom.clone(), 0.5, Some(2e-3)).unwrap();
    let fine = RbmConfig::new(dom, 0.5, Some(1e-3)).unwrap();
    let a = terminal_marginals(&coarse, &[0.5, 0.0], 1000, 21).unwrap();
    let b = terminal_marginals(&fine, &[0.5, 0.0], 1000, 22).unwrap();
    let t = permutation_test(&a, &b, 200, 23).unwrap();
    assert!(
        t.statistic <= t.null_q95,
        "energy {} above noise floor {}",
        t.statistic,
        t.null_q95
    );
}
