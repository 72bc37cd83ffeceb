use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn chain(n: usize) -> AdjacencyGraph {
    AdjacencyGraph::from_edges(n, (0..n.saturating_sub(1)).map(|i| (i, i + 1))).unwrap()
}

fn no_ramp() -> GmpConfig {
    GmpConfig {
        ramp: 1.0,
        ..GmpConfig::default()
    }
}

#[test]
fn helper_formulas() {
    assert_eq!(lambda_from_normalized(0.0, 3.0).unwrap(), 0.0);
    assert_abs_diff_eq!(
        lambda_from_normalized(1.0, 5.0).unwrap(),
        0.05,
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        lambda_from_normalized(2.0, 4.0).unwrap(),
        0.125,
        epsilon = 1e-15
    );
    assert!(lambda_from_normalized(1.0, 0.0).is_err());

    assert_eq!(min_superpoint_size(1.0, 50).unwrap(), 50);
    assert_eq!(min_superpoint_size(0.2, 50).unwrap(), 33);
    assert_eq!(min_superpoint_size(6.0, 50).unwrap(), 70);
    assert_eq!(min_superpoint_size(0.001, 50).unwrap(), 25);
    assert!(min_superpoint_size(0.0, 50).is_err());
}

#[test]
fn edge_weight_formula() {
    let g = chain(3);
    let e = array![[0.0, 0.0], [0.0, 0.0], [0.6, 0.8]];
    let w = gmp_edge_weights(e.view(), &g, 1.0, 0.5).unwrap();
    assert_eq!(w[0], 1.0);
    assert_abs_diff_eq!(w[1], 0.1353353, epsilon = 1e-7);
    assert_eq!(
        gmp_edge_weights(e.view(), &g, 0.0, 0.5).unwrap(),
        vec![0.0, 0.0]
    );
    assert!(gmp_edge_weights(e.view(), &g, 1.0, 0.0).is_err());
}

#[test]
fn augmented_features() {
    let e = array![[1.0, 0.0]];
    let x = augment_features(e.view(), &[[1.0, 2.0, 3.0]], 0.2).unwrap();
    assert_eq!(x.row(0).to_vec()[..2], [1.0, 0.0]);
    for (got, want) in x.row(0).iter().skip(2).zip([0.2, 0.4, 0.6]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
    }
    let zero = augment_features(e.view(), &[[1.0, 2.0, 3.0]], 0.0).unwrap();
    assert_eq!(zero, array![[1.0, 0.0, 0.0, 0.0, 0.0]]);
}

#[test]
fn energy_of_two_vertices() {
    let g = chain(2);
    let x = array![[0.0], [1.0]];
    let merged = Partition::new(vec![0, 0]).unwrap();
    let f = array![[0.5], [0.5]];
    assert_abs_diff_eq!(
        gmp_energy(f.view(), x.view(), &g, &[3.0], &merged).unwrap(),
        0.5,
        epsilon = 1e-15
    );
    let apart = Partition::new(vec![0, 1]).unwrap();
    assert_eq!(
        gmp_energy(x.view(), x.view(), &g, &[3.0], &apart).unwrap(),
        3.0
    );
    assert_eq!(
        gmp_energy(x.view(), x.view(), &g, &[0.0], &apart).unwrap(),
        0.0
    );
}

#[test]
fn trivial_instances() {
    let g = chain(1);
    let x = array![[0.3, 0.7]];
    let s = solve_gmp(x.view(), &g, &[], 0, &GmpConfig::default()).unwrap();
    assert_eq!(s.f, x);
    assert_eq!(s.partition.num_superpoints(), 1);
    assert_eq!(s.energy, 0.0);

    let g = chain(2);
    let same = array![[1.0], [1.0]];
    for w in [0.0, 0.1, 10.0] {
        let s = solve_gmp(same.view(), &g, &[w], 1, &GmpConfig::default()).unwrap();
        assert_eq!(s.partition.num_superpoints(), 1);
    }
}

#[test]
fn two_vertices_split_iff_cheaper() {
    let g = chain(2);
    let x = array![[0.0], [1.0]];
    for (w, parts) in [(0.3, 2), (0.49, 2), (0.51, 1), (2.0, 1)] {
        let s = solve_gmp(x.view(), &g, &[w], 1, &GmpConfig::default()).unwrap();
        assert_eq!(s.partition.num_superpoints(), parts, "w = {w}");
    }
}

#[test]
fn extract_examples() {
    let g = chain(4);
    assert_eq!(
        extract_partition(Array2::zeros((4, 2)).view(), &g)
            .unwrap()
            .num_superpoints(),
        1
    );
    let distinct = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
    assert_eq!(
        extract_partition(distinct.view(), &g)
            .unwrap()
            .num_superpoints(),
        4
    );
    let halves = array![[0.0], [0.0], [1.0], [1.0]];
    assert_eq!(
        extract_partition(halves.view(), &g).unwrap().assignment(),
        &[0, 0, 1, 1]
    );
}

#[test]
fn n_min_at_least_n_returns_components_with_flag() {
    let g = chain(5);
    let x = Array2::from_shape_fn((5, 1), |(i, _)| i as f64 * 10.0);
    let s = solve_gmp(x.view(), &g, &[0.0; 4], 5, &GmpConfig::default()).unwrap();
    assert!(s.n_min_exceeded);
    assert_eq!(s.partition.num_superpoints(), 1);
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    p_edge: f64,
) -> (AdjacencyGraph, Array2<f64>, Vec<f64>) {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p_edge) {
                pairs.push((i, j));
            }
        }
    }
    let g = AdjacencyGraph::from_edges(n, pairs).unwrap();
    let x = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0));
    let w = (0..g.num_edges())
        .map(|_| rng.gen_range(0.0..0.8))
        .collect();
    (g, x, w)
}

/// All set partitions of `0..n` as restricted growth strings.
fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; n];
    fn rec(i: usize, max: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=max + 1 {
            cur[i] = v;
            rec(i + 1, max.max(v), cur, out);
        }
    }
    if n > 0 {
        rec(1, 0, &mut cur, &mut out);
    }
    out
}

fn brute_force_optimum(x: &Array2<f64>, g: &AdjacencyGraph, w: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for labels in set_partitions(x.nrows()) {
        let p = Partition::from_labels(&labels);
        if !p.is_connected_in(g) {
            continue;
        }
        let e = partition_energy(x.view(), g, w, p.assignment(), p.num_superpoints(), 1.0);
        best = best.min(e);
    }
    best
}

#[test]
fn set_partition_enumeration_counts() {
    // Bell numbers
    assert_eq!(set_partitions(4).len(), 15);
    assert_eq!(set_partitions(6).len(), 203);
}

#[test]
fn near_optimal_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 1.0;
    for trial in 0..300 {
        let n = rng.gen_range(2..=8);
        let dim = rng.gen_range(1..=3);
        let (g, x, w) = random_instance(&mut rng, n, dim, 0.45);
        let opt = brute_force_optimum(&x, &g, &w);
        let s = solve_gmp(x.view(), &g, &w, 1, &GmpConfig::default()).unwrap();
        assert!(s.partition.is_connected_in(&g));
        let ratio = s.energy / opt.max(1e-12);
        worst = worst.max(ratio);
        assert!(
            s.energy <= 1.05 * opt + 1e-9,
            "trial {trial} n={n}: solver {} optimum {opt}",
            s.energy
        );
    }
    assert!(worst <= 1.05);
}

#[test]
fn solution_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..40 {
        let (g, x, w) = random_instance(&mut rng, 30, 3, 0.15);
        let s = solve_gmp(x.view(), &g, &w, 1, &GmpConfig::default()).unwrap();
        // f is the component mean
        for members in s.partition.members() {
            let mean = members
                .iter()
                .fold(Array1::zeros(3), |acc: Array1<f64>, &i| acc + x.row(i))
                / members.len() as f64;
            for &i in &members {
                for c in 0..3 {
                    assert_abs_diff_eq!(s.f[[i, c]], mean[c], epsilon = 1e-12);
                }
            }
        }
        assert_abs_diff_eq!(
            s.energy,
            gmp_energy(s.f.view(), x.view(), &g, &w, &s.partition).unwrap(),
            epsilon = 1e-9
        );
        assert!(s.partition.is_connected_in(&g));
        let single = connected_components(&g, &[]);
        let e_single = partition_energy(
            x.view(),
            &g,
            &w,
            single.assignment(),
            single.num_superpoints(),
            1.0,
        );
        let e_singletons: f64 = w.iter().sum();
        assert!(s.energy <= e_single + 1e-9);
        assert!(s.energy <= e_singletons + 1e-9);
        assert!(s.energy_history.windows(2).all(|p| p[1] <= p[0]));
    }
}

use ndarray::Array1;

#[test]
fn exact_recovery_of_separated_pieces() {
    // 6×6 grid split into three vertical bands with well separated constant features
    let (nx, ny) = (6usize, 6usize);
    let idx = |x: usize, y: usize| y * nx + x;
    let mut pairs = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            if x + 1 < nx {
                pairs.push((idx(x, y), idx(x + 1, y)));
            }
            if y + 1 < ny {
                pairs.push((idx(x, y), idx(x, y + 1)));
            }
        }
    }
    let g = AdjacencyGraph::from_edges(nx * ny, pairs).unwrap();
    let band = |v: usize| (v % nx) / 2;
    let centers = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
    let x = Array2::from_shape_fn((nx * ny, 2), |(v, c)| centers[band(v)][c]);
    // boundary of a band is at most 2·6 = 12 edges; min distance 1
    let w = vec![0.5 / 12.0 * 0.9; g.num_edges()];
    for config in [GmpConfig::default(), no_ramp()] {
        let s = solve_gmp(x.view(), &g, &w, 1, &config).unwrap();
        let want =
            Partition::from_labels(&(0..nx * ny).map(|v| band(v) as u32).collect::<Vec<_>>());
        assert_eq!(s.partition, want);
    }
}

#[test]
fn small_components_are_absorbed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 60;
    let g = chain(n);
    let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
    let w = vec![0.05; n - 1];
    let free = solve_gmp(x.view(), &g, &w, 1, &GmpConfig::default()).unwrap();
    let forced = solve_gmp(x.view(), &g, &w, 8, &GmpConfig::default()).unwrap();
    assert!(free.partition.members().iter().any(|m| m.len() < 8));
    assert!(forced.partition.members().iter().all(|m| m.len() >= 8));
    assert!(forced.energy_history.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn isolated_small_component_is_left_alone() {
    // two disconnected pieces: 10-chain and a lone vertex
    let g = AdjacencyGraph::from_edges(11, (0..9).map(|i| (i, i + 1))).unwrap();
    let x = Array2::from_shape_fn((11, 1), |(i, _)| i as f64 * 0.1);
    let s = solve_gmp(x.view(), &g, &[0.01; 9], 4, &GmpConfig::default()).unwrap();
    assert_eq!(s.partition.members().last().unwrap(), &vec![10]);
    assert!(!s.n_min_exceeded);
}

#[test]
fn deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (g, x, w) = random_instance(&mut rng, 80, 4, 0.06);
    let a = solve_gmp(x.view(), &g, &w, 3, &GmpConfig::default()).unwrap();
    let b = solve_gmp(x.view(), &g, &w, 3, &GmpConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn path_count_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 400;
    let g = {
        let mut pairs = Vec::new();
        for i in 0..n {
            for d in [1usize, 2, 20] {
                if i + d < n {
                    pairs.push((i, i + d));
                }
            }
        }
        AdjacencyGraph::from_edges(n, pairs).unwrap()
    };
    let x = Array2::from_shape_fn((n, 3), |(i, _)| {
        (i / 40) as f64 * 0.4 + rng.gen_range(-0.2..0.2)
    });
    let unit = gmp_edge_weights(x.view(), &g, 1.0, 0.5).unwrap();
    let lambdas = [6.0, 0.2, 1.0, 0.5, 3.0, 2.0];
    let config = GmpConfig {
        n_min_1: 10,
        ..GmpConfig::default()
    };
    let path = solve_gmp_path(x.view(), &g, &unit, &lambdas, &config).unwrap();
    let mut by_lambda: Vec<(f64, usize)> = lambdas
        .iter()
        .zip(&path)
        .map(|(&l, s)| (l, s.partition.num_superpoints()))
        .collect();
    by_lambda.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(
        by_lambda.windows(2).all(|p| p[1].1 <= p[0].1),
        "{by_lambda:?}"
    );
    assert!(by_lambda[0].1 > by_lambda[5].1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn energy_history_never_increases(seed in 0u64..10_000, n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, x, w) = random_instance(&mut rng, n, 2, 0.2);
        let n_min = rng.gen_range(1..4);
        let s = solve_gmp(x.view(), &g, &w, n_min, &GmpConfig::default()).unwrap();
        prop_assert!(s.energy_history.windows(2).all(|p| p[1] <= p[0]));
        prop_assert!(s.partition.is_connected_in(&g));
    }
}
