//! Synthetic rooms, baselines, regularization sweeps and embedding colors.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{build_knn, NeighborhoodTable, PointCloud};
use crate::embed::{embed_cloud, EmbedderParams};
use crate::error::{arg_err, Result};
use crate::gmp::{
    augment_features, gmp_edge_weights, lambda_from_normalized, min_superpoint_size, solve_gmp,
    solve_gmp_path, GmpConfig, GmpSolution,
};
use crate::graph::{
    build_adjacency, classify_edges, connected_components, AdjacencyGraph, EdgeClassification,
    Partition,
};
use crate::metrics::{evaluate, MetricsReport};
use crate::train::TrainingCloud;

pub const CLASS_FLOOR: u32 = 0;
pub const CLASS_CEILING: u32 = 1;
pub const CLASS_WALL: u32 = 2;
pub const CLASS_BOX: u32 = 3;
pub const CLASS_BOARD: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// smallest and largest room size along x, y, z in meters
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    /// standard deviation of the offset of points from their surface, meters
    pub thickness: f64,
    pub box_count: (usize, usize),
    pub board_count: (usize, usize),
    /// expected points per square meter of visible surface
    pub density: f64,
    /// base colors per class, indexed by class id
    pub palettes: Vec<Vec<[f64; 3]>>,
    pub color_jitter: f64,
    pub class_names: Vec<String>,
    /// points cut off from the rest of their object in this k-nn adjacency graph are
    /// dropped; 0 keeps everything
    pub connect_k: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            room_min: [4.0, 3.5, 2.6],
            room_max: [5.5, 4.5, 3.0],
            thickness: 0.005,
            box_count: (2, 5),
            board_count: (1, 3),
            density: 200.0,
            palettes: vec![
                vec![[0.45, 0.35, 0.25], [0.55, 0.5, 0.45]],
                vec![[0.92, 0.92, 0.9], [0.85, 0.85, 0.88]],
                vec![[0.88, 0.88, 0.86], [0.8, 0.82, 0.78], [0.9, 0.86, 0.8]],
                vec![
                    [0.6, 0.3, 0.2],
                    [0.2, 0.35, 0.6],
                    [0.3, 0.55, 0.3],
                    [0.75, 0.7, 0.3],
                ],
                // near-white boards on near-white walls
                vec![[0.95, 0.95, 0.95], [0.84, 0.86, 0.86]],
            ],
            color_jitter: 0.02,
            class_names: ["floor", "ceiling", "wall", "box", "board"]
                .map(String::from)
                .to_vec(),
            connect_k: 5,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let extents_ok =
            (0..3).all(|a| self.room_min[a] > 0.0 && self.room_min[a] <= self.room_max[a]);
        if !extents_ok {
            return arg_err("room extents must be positive with min <= max");
        }
        if !(self.density > 0.0) {
            return arg_err("density must be positive");
        }
        if self.box_count.0 > self.box_count.1 || self.board_count.0 > self.board_count.1 {
            return arg_err("count ranges must have min <= max");
        }
        if self.palettes.len() < 5 || self.palettes.iter().any(|p| p.is_empty()) {
            return arg_err("every class needs at least one palette color");
        }
        if !(self.thickness >= 0.0 && self.color_jitter >= 0.0) {
            return arg_err("noise levels must be non-negative");
        }
        Ok(())
    }
}

/// Axis-aligned rectangle on a plane: `origin + s·u + t·v` for s in [0, su], t in [0, tv].
struct Rect {
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
    su: f64,
    tv: f64,
    normal: [f64; 3],
}

struct SceneBuilder {
    rng: ChaCha8Rng,
    positions: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
    classes: Vec<u32>,
    objects: Vec<u32>,
    next_object: u32,
}

impl SceneBuilder {
    fn color(&mut self, spec: &SceneSpec, class: u32) -> [f64; 3] {
        let palette = &spec.palettes[class as usize];
        palette[self.rng.gen_range(0..palette.len())]
    }

    /// Samples a rectangle on a jittered grid of about `density` points per square meter,
    /// dropping points for which `hidden` holds.
    fn sample(
        &mut self,
        spec: &SceneSpec,
        rect: &Rect,
        class: u32,
        base: [f64; 3],
        hidden: &dyn Fn(&[f64; 3]) -> bool,
    ) {
        let object = self.next_object;
        self.next_object += 1;
        let spacing = spec.density.sqrt().recip();
        let nu = (rect.su / spacing).round().max(1.0) as usize;
        let nv = (rect.tv / spacing).round().max(1.0) as usize;
        let (du, dv) = (rect.su / nu as f64, rect.tv / nv as f64);
        let offset = Normal::new(0.0, spec.thickness.max(1e-12)).expect("positive deviation");
        let jitter = Normal::new(0.0, spec.color_jitter.max(1e-12)).expect("positive deviation");
        for a in 0..nu {
            for b in 0..nv {
                let s = (a as f64 + 0.5 + self.rng.gen_range(-GRID_JITTER..GRID_JITTER)) * du;
                let t = (b as f64 + 0.5 + self.rng.gen_range(-GRID_JITTER..GRID_JITTER)) * dv;
                let h = if spec.thickness > 0.0 {
                    offset.sample(&mut self.rng)
                } else {
                    0.0
                };
                let p: [f64; 3] = std::array::from_fn(|k| {
                    rect.origin[k] + s * rect.u[k] + t * rect.v[k] + h * rect.normal[k]
                });
                if hidden(&p) {
                    continue;
                }
                let c: [f64; 3] = std::array::from_fn(|k| {
                    let j = if spec.color_jitter > 0.0 {
                        jitter.sample(&mut self.rng)
                    } else {
                        0.0
                    };
                    (base[k] + j).clamp(0.0, 1.0)
                });
                self.positions.push(p);
                self.colors.push(c);
                self.classes.push(class);
                self.objects.push(object);
            }
        }
    }
}

/// Displacement of grid samples within their cell, as a fraction of the cell size. Fully
/// random placement leaves small islands in k-nn graphs.
const GRID_JITTER: f64 = 0.35;

struct BoxShape {
    lo: [f64; 3],
    hi: [f64; 3],
}

/// Board on wall `wall` (0: y=0, 1: x=X, 2: y=Y, 3: x=0), spanning `a0..a1` along the wall
/// and `z0..z1` in height.
struct Board {
    wall: usize,
    a0: f64,
    a1: f64,
    z0: f64,
    z1: f64,
}

const BOARD_OFFSET: f64 = 0.01;

/// Samples a labeled room: floor, ceiling, four walls, boxes standing on the floor and thin
/// boards flush against the walls. Every surface is its own object.
pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let room: [f64; 3] =
        std::array::from_fn(|a| rng.gen_range(spec.room_min[a]..=spec.room_max[a]));
    let [rx, ry, rz] = room;

    let n_boxes = rng.gen_range(spec.box_count.0..=spec.box_count.1);
    let mut boxes: Vec<BoxShape> = Vec::new();
    for _ in 0..n_boxes {
        for _attempt in 0..100 {
            let w = rng.gen_range(0.4..1.2f64).min(rx - 0.8);
            let d = rng.gen_range(0.4..1.2f64).min(ry - 0.8);
            let h = rng.gen_range(0.4..1.0f64).min(rz - 0.5);
            if w <= 0.1 || d <= 0.1 || h <= 0.1 {
                break;
            }
            let x = rng.gen_range(0.3..rx - 0.3 - w);
            let y = rng.gen_range(0.3..ry - 0.3 - d);
            let cand = BoxShape {
                lo: [x, y, 0.0],
                hi: [x + w, y + d, h],
            };
            // keep a gap so that boxes stay separate objects
            let clear = boxes.iter().all(|b| {
                cand.lo[0] > b.hi[0] + 0.2
                    || b.lo[0] > cand.hi[0] + 0.2
                    || cand.lo[1] > b.hi[1] + 0.2
                    || b.lo[1] > cand.hi[1] + 0.2
            });
            if clear {
                boxes.push(cand);
                break;
            }
        }
    }

    let wall_len = [rx, ry, rx, ry];
    let n_boards = rng.gen_range(spec.board_count.0..=spec.board_count.1);
    let mut boards: Vec<Board> = Vec::new();
    for _ in 0..n_boards {
        for _attempt in 0..100 {
            let wall = rng.gen_range(0..4);
            let len = wall_len[wall];
            let width = rng.gen_range(0.8..2.0f64).min(len - 0.6);
            let height = rng.gen_range(0.6..1.2f64).min(rz - 1.2);
            if width <= 0.2 || height <= 0.2 {
                break;
            }
            let a0 = rng.gen_range(0.3..len - 0.3 - width);
            let z0 = rng.gen_range(0.8..(rz - 0.3 - height).max(0.81));
            let cand = Board {
                wall,
                a0,
                a1: a0 + width,
                z0,
                z1: z0 + height,
            };
            let clear = boards
                .iter()
                .filter(|b| b.wall == wall)
                .all(|b| cand.a0 > b.a1 + 0.2 || b.a0 > cand.a1 + 0.2);
            if clear {
                boards.push(cand);
                break;
            }
        }
    }

    let mut sb = SceneBuilder {
        rng,
        positions: Vec::new(),
        colors: Vec::new(),
        classes: Vec::new(),
        objects: Vec::new(),
        next_object: 0,
    };
    let under_box = |p: &[f64; 3]| {
        boxes
            .iter()
            .any(|b| p[0] > b.lo[0] && p[0] < b.hi[0] && p[1] > b.lo[1] && p[1] < b.hi[1])
    };
    let nothing = |_: &[f64; 3]| false;

    let floor = Rect {
        origin: [0.0; 3],
        u: [1.0, 0.0, 0.0],
        v: [0.0, 1.0, 0.0],
        su: rx,
        tv: ry,
        normal: [0.0, 0.0, 1.0],
    };
    let c = sb.color(spec, CLASS_FLOOR);
    sb.sample(spec, &floor, CLASS_FLOOR, c, &under_box);
    let ceiling = Rect {
        origin: [0.0, 0.0, rz],
        normal: [0.0, 0.0, -1.0],
        ..floor
    };
    let c = sb.color(spec, CLASS_CEILING);
    sb.sample(spec, &ceiling, CLASS_CEILING, c, &nothing);

    // walls run counter-clockwise; coordinate along the wall is measured from its origin
    let walls = [
        ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        ([rx, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]),
        ([rx, ry, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]),
        ([0.0, ry, 0.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]),
    ];
    let along = |wall: usize, p: &[f64; 3]| {
        let (o, u, _) = walls[wall];
        (p[0] - o[0]) * u[0] + (p[1] - o[1]) * u[1]
    };
    for (wi, &(origin, u, normal)) in walls.iter().enumerate() {
        let rect = Rect {
            origin,
            u,
            v: [0.0, 0.0, 1.0],
            su: wall_len[wi],
            tv: rz,
            normal,
        };
        let behind_board = |p: &[f64; 3]| {
            boards.iter().any(|b| {
                let a = along(wi, p);
                b.wall == wi && a > b.a0 && a < b.a1 && p[2] > b.z0 && p[2] < b.z1
            })
        };
        let c = sb.color(spec, CLASS_WALL);
        sb.sample(spec, &rect, CLASS_WALL, c, &behind_board);
    }

    for b in &boxes {
        let c = sb.color(spec, CLASS_BOX);
        let [x0, y0, _] = b.lo;
        let [x1, y1, h] = b.hi;
        let faces = [
            Rect {
                origin: [x0, y0, h],
                u: [1.0, 0.0, 0.0],
                v: [0.0, 1.0, 0.0],
                su: x1 - x0,
                tv: y1 - y0,
                normal: [0.0, 0.0, 1.0],
            },
            Rect {
                origin: [x0, y0, 0.0],
                u: [1.0, 0.0, 0.0],
                v: [0.0, 0.0, 1.0],
                su: x1 - x0,
                tv: h,
                normal: [0.0, -1.0, 0.0],
            },
            Rect {
                origin: [x0, y1, 0.0],
                u: [1.0, 0.0, 0.0],
                v: [0.0, 0.0, 1.0],
                su: x1 - x0,
                tv: h,
                normal: [0.0, 1.0, 0.0],
            },
            Rect {
                origin: [x0, y0, 0.0],
                u: [0.0, 1.0, 0.0],
                v: [0.0, 0.0, 1.0],
                su: y1 - y0,
                tv: h,
                normal: [-1.0, 0.0, 0.0],
            },
            Rect {
                origin: [x1, y0, 0.0],
                u: [0.0, 1.0, 0.0],
                v: [0.0, 0.0, 1.0],
                su: y1 - y0,
                tv: h,
                normal: [1.0, 0.0, 0.0],
            },
        ];
        // all faces of a box share one object id
        let object = sb.next_object;
        for f in &faces {
            sb.next_object = object;
            sb.sample(spec, f, CLASS_BOX, c, &nothing);
        }
    }

    for b in &boards {
        let (o, u, normal) = walls[b.wall];
        let rect = Rect {
            origin: std::array::from_fn(|a| {
                o[a] + b.a0 * u[a] + BOARD_OFFSET * normal[a] + if a == 2 { b.z0 } else { 0.0 }
            }),
            u,
            v: [0.0, 0.0, 1.0],
            su: b.a1 - b.a0,
            tv: b.z1 - b.z0,
            normal,
        };
        let c = sb.color(spec, CLASS_BOARD);
        sb.sample(spec, &rect, CLASS_BOARD, c, &nothing);
    }

    let n = sb.positions.len();
    let radiometry = Array2::from_shape_fn((n, 3), |(i, a)| sb.colors[i][a]);
    let cloud = PointCloud::new(sb.positions, radiometry, Some(sb.classes), Some(sb.objects))?;
    if spec.connect_k == 0 || cloud.len() <= spec.connect_k {
        return Ok(cloud);
    }
    drop_stray_points(cloud, spec.connect_k)
}

/// Keeps, for every object, only its largest connected piece in the k-nn adjacency graph.
/// Stray points show up where three surfaces meet and their nearest neighbors all belong
/// to the other two.
fn drop_stray_points(cloud: PointCloud, k_adj: usize) -> Result<PointCloud> {
    let graph = build_adjacency(&cloud, k_adj)?;
    let objects = cloud.object_ids().expect("scenes carry object ids");
    let cls = classify_edges(&graph, objects)?;
    let pieces = connected_components(&graph, &cls.inter);
    let mut size = vec![0usize; pieces.num_superpoints()];
    for &p in pieces.assignment() {
        size[p as usize] += 1;
    }
    let mut largest: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    for (i, &p) in pieces.assignment().iter().enumerate() {
        let best = largest.entry(objects[i]).or_insert(p);
        if size[p as usize] > size[*best as usize] {
            *best = p;
        }
    }
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| largest[&objects[i]] == pieces.assignment()[i])
        .collect();
    if keep.len() == cloud.len() {
        return Ok(cloud);
    }
    // dropping points can orphan others in turn
    drop_stray_points(cloud.select(&keep), k_adj)
}

/// Neighborhood table and adjacency graph for a cloud.
pub fn prepare_cloud(cloud: PointCloud, k: usize, k_adj: usize) -> Result<TrainingCloud> {
    let table = build_knn(&cloud, k)?;
    let graph = build_adjacency(&cloud, k_adj)?;
    Ok(TrainingCloud {
        cloud,
        table,
        graph,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// colors as the signal
    RawFeatures,
    /// linearity, planarity, scattering and verticality of the k-neighborhood
    HandcraftedGeometry,
}

impl std::str::FromStr for BaselineMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "raw_features" => Ok(BaselineMode::RawFeatures),
            "handcrafted" | "handcrafted_geometry" | "geometry" => {
                Ok(BaselineMode::HandcraftedGeometry)
            }
            other => arg_err(format!("unknown baseline mode {other:?}")),
        }
    }
}

/// Normalized covariance eigen-features per point over the point and its neighbors:
/// `[linearity, planarity, scattering, verticality]`.
pub fn geometric_features(cloud: &PointCloud, table: &NeighborhoodTable) -> Result<Array2<f64>> {
    if table.len() != cloud.len() {
        return arg_err("neighborhood table does not match the cloud");
    }
    let pos = cloud.positions();
    let mut out = Array2::zeros((cloud.len(), 4));
    for i in 0..cloud.len() {
        let members = std::iter::once(i).chain(table.row(i).iter().map(|&j| j as usize));
        let pts: Vec<[f64; 3]> = members.map(|j| pos[j]).collect();
        let k = pts.len() as f64;
        let mean: [f64; 3] = std::array::from_fn(|a| pts.iter().map(|p| p[a]).sum::<f64>() / k);
        let mut cov = Matrix3::<f64>::zeros();
        for p in &pts {
            for r in 0..3 {
                for c in 0..3 {
                    cov[(r, c)] += (p[r] - mean[r]) * (p[c] - mean[c]) / k;
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let l: [f64; 3] = std::array::from_fn(|t| eig.eigenvalues[order[t]].max(0.0));
        if l[0] <= 0.0 {
            // all points coincide
            out.row_mut(i).assign(&ndarray::arr1(&[0.0, 0.0, 1.0, 0.0]));
            continue;
        }
        let normal = eig.eigenvectors.column(order[2]);
        out[[i, 0]] = (l[0] - l[1]) / l[0];
        out[[i, 1]] = (l[1] - l[2]) / l[0];
        out[[i, 2]] = l[2] / l[0];
        out[[i, 3]] = 1.0 - normal[2].abs();
    }
    Ok(out)
}

/// Per-point signal a baseline partitions on.
pub fn baseline_features(
    cloud: &PointCloud,
    table: &NeighborhoodTable,
    mode: BaselineMode,
) -> Result<Array2<f64>> {
    match mode {
        BaselineMode::RawFeatures => Ok(cloud.radiometry().clone()),
        BaselineMode::HandcraftedGeometry => geometric_features(cloud, table),
    }
}

/// Solves the partition problem on an arbitrary per-point signal at `config.lambda_tilde`,
/// with coordinates appended at `config.alpha_spat`.
pub fn partition_signal(
    signal: ArrayView2<f64>,
    positions: &[[f64; 3]],
    graph: &AdjacencyGraph,
    config: &GmpConfig,
) -> Result<Partition> {
    Ok(solve_signal(signal, positions, graph, config)?.partition)
}

/// Like [`partition_signal`] but returns the full solution.
pub fn solve_signal(
    signal: ArrayView2<f64>,
    positions: &[[f64; 3]],
    graph: &AdjacencyGraph,
    config: &GmpConfig,
) -> Result<GmpSolution> {
    let c = graph.connectivity();
    let lambda = if c > 0.0 {
        lambda_from_normalized(config.lambda_tilde, c)?
    } else {
        0.0
    };
    let w = gmp_edge_weights(signal, graph, lambda, config.sigma)?;
    let features = augment_features(signal, positions, config.alpha_spat)?;
    let n_min = min_superpoint_size(config.lambda_tilde, config.n_min_1)?;
    solve_gmp(features.view(), graph, &w, n_min, config)
}

/// Partition of a baseline signal, no learning involved.
pub fn baseline_partition(
    cloud: &PointCloud,
    table: &NeighborhoodTable,
    graph: &AdjacencyGraph,
    mode: BaselineMode,
    config: &GmpConfig,
) -> Result<Partition> {
    let signal = baseline_features(cloud, table, mode)?;
    partition_signal(signal.view(), cloud.positions(), graph, config)
}

/// One row of a regularization sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub lambda_tilde: f64,
    pub n_min: usize,
    pub report: MetricsReport,
}

/// Metrics along a regularization path on a given signal. Rows follow `lambda_tildes`.
pub fn sweep_signal(
    signal: ArrayView2<f64>,
    cloud: &PointCloud,
    graph: &AdjacencyGraph,
    lambda_tildes: &[f64],
    config: &GmpConfig,
) -> Result<Vec<SweepRow>> {
    let objects = cloud
        .object_ids()
        .ok_or_else(|| crate::Error::Argument("sweeps need object ids".into()))?;
    let cls = classify_edges(graph, objects)?;
    let unit = gmp_edge_weights(signal, graph, 1.0, config.sigma)?;
    let features = augment_features(signal, cloud.positions(), config.alpha_spat)?;
    let solutions = solve_gmp_path(features.view(), graph, &unit, lambda_tildes, config)?;
    lambda_tildes
        .iter()
        .zip(solutions)
        .map(|(&lt, sol)| {
            Ok(SweepRow {
                lambda_tilde: lt,
                n_min: min_superpoint_size(lt, config.n_min_1)?,
                report: evaluate(graph, &sol.partition, &cls, cloud.class_labels())?,
            })
        })
        .collect()
}

/// Embeds the cloud with `params` and sweeps the regularization strength.
pub fn sweep_regularization(
    params: &EmbedderParams,
    prepared: &TrainingCloud,
    lambda_tildes: &[f64],
    config: &GmpConfig,
) -> Result<Vec<SweepRow>> {
    let e = embed_cloud(&prepared.cloud, &prepared.table, params)?;
    sweep_signal(
        e.as_array().view(),
        &prepared.cloud,
        &prepared.graph,
        lambda_tildes,
        config,
    )
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "lambda_tilde,n_min,n_superpoints,ooa,br,bp")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.lambda_tilde,
            r.n_min,
            r.report.num_superpoints,
            r.report.ooa,
            r.report.br,
            r.report.bp
        )?;
    }
    Ok(())
}

/// Searches `λ̃` for a partition of the signal with about `target` superpoints, starting
/// from `config.lambda_tilde`. Steps are secant steps on log count against log `λ̃`, kept
/// inside the bracket found so far (bisection otherwise), over `λ̃ ∈ [1e-4, 1e4]`. Returns
/// the partition whose count is closest, with its `λ̃`.
pub fn partition_near_count(
    signal: ArrayView2<f64>,
    positions: &[[f64; 3]],
    graph: &AdjacencyGraph,
    target: usize,
    tolerance: f64,
    config: &GmpConfig,
) -> Result<(Partition, f64)> {
    if target == 0 {
        return arg_err("target superpoint count must be positive");
    }
    // typical slope of log count against log λ̃
    const SLOPE: f64 = -0.7;
    let (mut lo, mut hi) = (-4.0f64, 4.0f64);
    let mut x = config.lambda_tilde.log10().clamp(lo, hi);
    let mut last: Option<(f64, f64)> = None;
    let mut best: Option<(usize, Partition, f64)> = None;
    let goal = (target as f64).ln();
    for _ in 0..24 {
        let lt = 10f64.powf(x);
        let cfg = GmpConfig {
            lambda_tilde: lt,
            ..config.clone()
        };
        let p = partition_signal(signal, positions, graph, &cfg)?;
        let count = p.num_superpoints();
        let gap = count.abs_diff(target);
        if best.as_ref().map_or(true, |(g, _, _)| gap < *g) {
            best = Some((gap, p, lt));
        }
        if (gap as f64) <= tolerance * target as f64 {
            break;
        }
        // more regularization, fewer superpoints
        if count > target {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-6 {
            break;
        }
        let y = (count.max(1) as f64).ln();
        let slope = match last {
            Some((x0, y0)) if (x - x0).abs() > 1e-9 && (y - y0) / (x - x0) < 0.0 => {
                (y - y0) / (x - x0)
            }
            _ => SLOPE * std::f64::consts::LN_10,
        };
        last = Some((x, y));
        let step = x + (goal - y) / slope;
        x = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
    }
    let (_, p, lt) = best.expect("at least one evaluation");
    Ok((p, lt))
}

/// Colors from the first three principal components of the embeddings, each channel
/// min-max scaled to [0, 1]. The largest-magnitude loading of each component is positive.
/// Embeddings with fewer than three columns are zero-padded; constant channels map to 0.5.
pub fn project_embeddings_rgb(embeddings: ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = embeddings.dim();
    let mut out = Array2::from_elem((n, 3), 0.5);
    if n == 0 {
        return out;
    }
    let cols = m.max(3);
    let mut x = DMatrix::<f64>::zeros(n, cols);
    for i in 0..n {
        for j in 0..m {
            x[(i, j)] = embeddings[[i, j]];
        }
    }
    for j in 0..cols {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    for (channel, &k) in order.iter().take(3).enumerate() {
        let mut axis = eig.eigenvectors.column(k).into_owned();
        let lead = axis
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            axis.neg_mut();
        }
        let proj = &x * axis;
        let (lo, hi) = proj
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        let span = hi - lo;
        // degenerate spread: leave the channel at mid gray
        if span <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
            continue;
        }
        for i in 0..n {
            out[[i, channel]] = (proj[i] - lo) / span;
        }
    }
    out
}

/// Ground-truth edge split of a prepared, labeled cloud.
pub fn ground_truth(prepared: &TrainingCloud) -> Result<EdgeClassification> {
    let objects = prepared
        .cloud
        .object_ids()
        .ok_or_else(|| crate::Error::Argument("cloud has no object ids".into()))?;
    classify_edges(&prepared.graph, objects)
}

#[cfg(test)]
mod tests;
