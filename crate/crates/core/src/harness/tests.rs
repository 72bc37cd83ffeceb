use ndarray::{array, Array2};

use super::*;

fn small_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        room_min: [3.0, 3.0, 2.5],
        room_max: [3.5, 3.5, 2.6],
        density: 60.0,
        ..SceneSpec::default()
    }
}

#[test]
fn empty_room_has_six_objects() {
    let spec = SceneSpec {
        box_count: (0, 0),
        board_count: (0, 0),
        ..small_spec(1)
    };
    let cloud = generate_synthetic_scene(&spec).unwrap();
    let mut objects = cloud.object_ids().unwrap().to_vec();
    objects.sort_unstable();
    objects.dedup();
    assert_eq!(objects, (0..6).collect::<Vec<u32>>());
}

#[test]
fn scenes_are_deterministic_per_seed() {
    let a = generate_synthetic_scene(&small_spec(3)).unwrap();
    let b = generate_synthetic_scene(&small_spec(3)).unwrap();
    let c = generate_synthetic_scene(&small_spec(4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn floor_count_follows_density() {
    let spec = SceneSpec {
        room_min: [4.0, 4.0, 2.5],
        room_max: [4.0, 4.0, 2.5],
        density: 100.0,
        box_count: (0, 0),
        board_count: (0, 0),
        ..SceneSpec::default()
    };
    for seed in 0..5 {
        let cloud = generate_synthetic_scene(&SceneSpec {
            seed,
            ..spec.clone()
        })
        .unwrap();
        let floor = cloud
            .class_labels()
            .unwrap()
            .iter()
            .filter(|&&c| c == CLASS_FLOOR)
            .count() as f64;
        assert!(
            (floor - 1600.0).abs() <= 0.05 * 1600.0,
            "seed {seed}: {floor}"
        );
    }
}

#[test]
fn every_point_is_labeled_and_colors_are_valid() {
    let cloud = generate_synthetic_scene(&small_spec(5)).unwrap();
    assert!(cloud
        .class_labels()
        .unwrap()
        .iter()
        .all(|&c| c <= CLASS_BOARD));
    assert!(cloud.radiometry().iter().all(|c| (0.0..=1.0).contains(c)));
    let classes = cloud.class_labels().unwrap();
    assert!(classes.contains(&CLASS_BOX));
    assert!(classes.contains(&CLASS_BOARD));
}

#[test]
fn objects_are_connected_in_the_adjacency_graph() {
    for seed in 0..3 {
        let cloud = generate_synthetic_scene(&SceneSpec {
            seed,
            ..SceneSpec::default()
        })
        .unwrap();
        let prepared = prepare_cloud(cloud, 20, 5).unwrap();
        let cls = ground_truth(&prepared).unwrap();
        let parts = connected_components(&prepared.graph, &cls.inter);
        let mut objects = prepared.cloud.object_ids().unwrap().to_vec();
        objects.sort_unstable();
        objects.dedup();
        assert_eq!(parts.num_superpoints(), objects.len(), "seed {seed}");
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let flat = SceneSpec {
        room_min: [0.0, 3.0, 2.5],
        ..SceneSpec::default()
    };
    assert!(generate_synthetic_scene(&flat).is_err());
    let empty = SceneSpec {
        density: 0.0,
        ..SceneSpec::default()
    };
    assert!(generate_synthetic_scene(&empty).is_err());
}

/// Regular grid on the plane z = 0.
fn grid_plane(nx: usize, ny: usize, spacing: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            out.push([x as f64 * spacing, y as f64 * spacing, 0.0]);
        }
    }
    out
}

#[test]
fn planar_interior_points_have_planarity_near_one() {
    let cloud = PointCloud::from_positions(grid_plane(15, 15, 0.1)).unwrap();
    let table = build_knn(&cloud, 8).unwrap();
    let f = geometric_features(&cloud, &table).unwrap();
    for y in 3..12 {
        for x in 3..12 {
            let i = y * 15 + x;
            // the 3x3 block around an interior grid point is isotropic
            assert!((f[[i, 1]] - 1.0).abs() < 1e-9, "planarity {}", f[[i, 1]]);
            assert!(f[[i, 2]].abs() < 1e-12);
            // horizontal plane: normal is vertical
            assert!(f[[i, 3]].abs() < 1e-9);
        }
    }
}

#[test]
fn eigen_features_match_a_hand_covariance() {
    // line along x: linearity 1
    let positions: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
    let cloud = PointCloud::from_positions(positions).unwrap();
    let table = build_knn(&cloud, 3).unwrap();
    let f = geometric_features(&cloud, &table).unwrap();
    assert!((f[[5, 0]] - 1.0).abs() < 1e-12);
    // vertical wall: normal is horizontal
    let wall: Vec<[f64; 3]> = grid_plane(8, 8, 0.1)
        .into_iter()
        .map(|p| [p[0], 0.0, p[1]])
        .collect();
    let cloud = PointCloud::from_positions(wall).unwrap();
    let table = build_knn(&cloud, 8).unwrap();
    let f = geometric_features(&cloud, &table).unwrap();
    assert!((f[[3 * 8 + 3, 3]] - 1.0).abs() < 1e-9);
}

/// 10-point strip, left half dark, right half bright.
fn two_color_strip() -> (PointCloud, NeighborhoodTable, AdjacencyGraph) {
    let positions: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 * 0.05, 0.0, 0.0]).collect();
    let rad = Array2::from_shape_fn((10, 3), |(i, _)| if i < 5 { 0.1 } else { 0.9 });
    let cloud = PointCloud::new(positions, rad, None, None).unwrap();
    let table = build_knn(&cloud, 2).unwrap();
    let graph = AdjacencyGraph::from_edges(10, (0..9).map(|i| (i, i + 1))).unwrap();
    (cloud, table, graph)
}

#[test]
fn raw_baseline_cuts_at_the_color_boundary() {
    let (cloud, table, graph) = two_color_strip();
    let config = GmpConfig {
        lambda_tilde: 0.5,
        alpha_spat: 0.0,
        n_min_1: 1,
        ..GmpConfig::default()
    };
    let p = baseline_partition(&cloud, &table, &graph, BaselineMode::RawFeatures, &config).unwrap();
    // exhaustive check over the 2^9 cut sets of the chain
    let e = cloud.radiometry();
    let lambda = lambda_from_normalized(0.5, graph.connectivity()).unwrap();
    let w = gmp_edge_weights(e.view(), &graph, lambda, 0.5).unwrap();
    let mut best = (f64::INFINITY, 0u32);
    for mask in 0u32..(1 << 9) {
        let cuts: Vec<usize> = (0..9).filter(|b| mask >> b & 1 == 1).collect();
        let part = connected_components(&graph, &cuts);
        let energy = crate::gmp::gmp_energy(
            ndarray::ArrayView2::from(&mean_rows(e, &part)),
            e.view(),
            &graph,
            &w,
            &part,
        )
        .unwrap();
        if energy < best.0 {
            best = (energy, mask);
        }
    }
    assert_eq!(best.1, 1 << 4);
    assert_eq!(p.assignment(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
}

fn mean_rows(x: &Array2<f64>, p: &Partition) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for members in p.members() {
        let mut mean = ndarray::Array1::zeros(x.ncols());
        for &i in &members {
            mean += &x.row(i);
        }
        mean /= members.len() as f64;
        for &i in &members {
            out.row_mut(i).assign(&mean);
        }
    }
    out
}

#[test]
fn single_color_plane_is_one_superpoint_at_large_lambda() {
    let positions = grid_plane(6, 6, 0.1);
    let cloud = PointCloud::new(positions, Array2::from_elem((36, 3), 0.4), None, None).unwrap();
    let table = build_knn(&cloud, 4).unwrap();
    let graph = build_adjacency(&cloud, 4).unwrap();
    let config = GmpConfig {
        lambda_tilde: 50.0,
        n_min_1: 2,
        ..GmpConfig::default()
    };
    let p = baseline_partition(&cloud, &table, &graph, BaselineMode::RawFeatures, &config).unwrap();
    assert_eq!(p.num_superpoints(), 1);
}

#[test]
fn sweep_rows_follow_the_path() {
    let cloud = generate_synthetic_scene(&small_spec(7)).unwrap();
    let prepared = prepare_cloud(cloud, 10, 5).unwrap();
    let signal = baseline_features(
        &prepared.cloud,
        &prepared.table,
        BaselineMode::HandcraftedGeometry,
    )
    .unwrap();
    let config = GmpConfig {
        n_min_1: 50,
        ..GmpConfig::default()
    };
    let lts = [0.2, 1.0, 6.0];
    let rows = sweep_signal(
        signal.view(),
        &prepared.cloud,
        &prepared.graph,
        &lts,
        &config,
    )
    .unwrap();
    assert_eq!(
        rows.iter().map(|r| r.n_min).collect::<Vec<_>>(),
        vec![33, 50, 70]
    );
    assert!(rows
        .windows(2)
        .all(|w| w[1].report.num_superpoints <= w[0].report.num_superpoints));
    let one = sweep_signal(
        signal.view(),
        &prepared.cloud,
        &prepared.graph,
        &[1.0],
        &config,
    )
    .unwrap();
    assert_eq!(one.len(), 1);
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("lambda_tilde,n_min,n_superpoints,ooa,br,bp\n0.2,33,"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn count_search_lands_near_target() {
    let cloud = generate_synthetic_scene(&small_spec(8)).unwrap();
    let prepared = prepare_cloud(cloud, 10, 5).unwrap();
    let signal = prepared.cloud.radiometry().clone();
    let config = GmpConfig {
        n_min_1: 10,
        ..GmpConfig::default()
    };
    let (p, _) = partition_near_count(
        signal.view(),
        prepared.cloud.positions(),
        &prepared.graph,
        60,
        0.1,
        &config,
    )
    .unwrap();
    let n = p.num_superpoints() as f64;
    assert!((n - 60.0).abs() <= 6.0, "{n}");
}

#[test]
fn rgb_projection_conventions() {
    let constant = Array2::from_elem((5, 4), 0.3);
    assert!(project_embeddings_rgb(constant.view())
        .iter()
        .all(|&c| c == 0.5));

    // two antipodal clusters: channel 0 separates them fully, the rest carry no variance
    let two = array![
        [1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0]
    ];
    let rgb = project_embeddings_rgb(two.view());
    assert_eq!(rgb.column(0).to_vec(), vec![1.0, 1.0, 0.0, 0.0]);
    assert!(rgb
        .column(1)
        .iter()
        .chain(rgb.column(2).iter())
        .all(|&c| c == 0.5));

    // negating the input must not flip colors: sign follows the largest loading
    let neg = two.mapv(|v| -v);
    let rgb_neg = project_embeddings_rgb(neg.view());
    assert_eq!(rgb_neg.column(0).to_vec(), vec![0.0, 0.0, 1.0, 1.0]);

    // fewer than three columns are padded
    let narrow = array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]];
    let rgb = project_embeddings_rgb(narrow.view());
    assert_eq!(rgb.dim(), (3, 3));
    assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)));
}
