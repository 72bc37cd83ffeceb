use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use serde::Serialize;

use ssp_core::cloud::ply::{load_superpoints, save_cloud_with, PlyExtras};
use ssp_core::cloud::{build_knn, save_cloud, voxel_prune, PointCloud};
use ssp_core::embed::{embed_cloud, load_params, save_params, EmbedderParams};
use ssp_core::gmp::GmpConfig;
use ssp_core::graph::{build_adjacency_with_radius, classify_edges, Partition};
use ssp_core::harness::{
    baseline_features, generate_synthetic_scene, partition_near_count, project_embeddings_rgb,
    solve_signal, sweep_signal, write_sweep_csv, BaselineMode,
};
use ssp_core::metrics::evaluate;
use ssp_core::train::{load_checkpoint, resume, train, TrainConfig, TrainingCloud};

use crate::cache::{load_prepared, save_prepared, sniff, DataKind, Prepared};
use crate::{
    BaselineArgs, Cli, CliError, Command, EmbedArgs, EvalArgs, PartitionArgs, PipelineConfig,
    PrepArgs, SweepArgs, SynthArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

/// tolerance on the superpoint count when matching a target
const MATCH_TOLERANCE: f64 = 0.1;

pub fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            PipelineConfig::parse(&text)?
        }
        None => PipelineConfig::default(),
    };
    config.train.seed = cli.seed;
    Ok(config)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth(a) => synth(a, &config, cli.seed),
        Command::Prep(a) => prep(a, &config),
        Command::Train(a) => train_cmd(a, &config),
        Command::Embed(a) => embed(a, &config),
        Command::Partition(a) => partition(a, &config),
        Command::Eval(a) => eval(a, &config),
        Command::Sweep(a) => sweep(a, &config),
        Command::Baseline(a) => baseline(a, &config),
        Command::Config => {
            print!("{}", config.render());
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    match path {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Voxel subsampling, neighborhoods and adjacency per the config.
pub fn prepare(cloud: PointCloud, config: &PipelineConfig) -> Result<Prepared> {
    let cloud = if config.voxel > 0.0 {
        let before = cloud.len();
        let (pruned, _) = voxel_prune(&cloud, config.voxel)?;
        info!("voxel pruning kept {} of {before} points", pruned.len());
        pruned
    } else {
        cloud
    };
    let table = build_knn(&cloud, config.k)?;
    let radius = (config.adj_radius > 0.0).then_some(config.adj_radius);
    let graph = build_adjacency_with_radius(&cloud, config.k_adj, radius)?;
    Ok(Prepared {
        data: TrainingCloud {
            cloud,
            table,
            graph,
        },
        k_adj: config.k_adj,
    })
}

/// A cache as written by `prep`, or a PLY file prepared on the fly.
pub fn load_data(path: &Path, config: &PipelineConfig) -> Result<TrainingCloud> {
    let kind = sniff(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let prepared = match kind {
        DataKind::Cache => {
            let p = load_prepared(path)?;
            if p.data.table.k() != config.k || p.k_adj != config.k_adj {
                log::warn!(
                    "{} was prepared with k={}, k_adj={}; the config says k={}, k_adj={}",
                    path.display(),
                    p.data.table.k(),
                    p.k_adj,
                    config.k,
                    config.k_adj
                );
            }
            p
        }
        DataKind::Ply => prepare(ssp_core::cloud::load_cloud(path)?, config)?,
    };
    Ok(prepared.data)
}

fn synth(a: &SynthArgs, config: &PipelineConfig, seed: u64) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let spec = config.scene_spec(seed.wrapping_add(i as u64));
        let cloud = generate_synthetic_scene(&spec)?;
        let path = a.out.join(format!("scene_{i:03}.ply"));
        save_cloud(&path, &cloud, config.ply_format)?;
        info!("{}: {} points", path.display(), cloud.len());
    }
    Ok(())
}

fn prep(a: &PrepArgs, config: &PipelineConfig) -> Result<()> {
    let cloud = ssp_core::cloud::load_cloud(&a.input)?;
    let p = prepare(cloud, config)?;
    info!(
        "{} points, {} edges",
        p.data.cloud.len(),
        p.data.graph.num_edges()
    );
    save_prepared(&p, &a.out)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, config: &PipelineConfig) -> Result<()> {
    let data = a
        .data
        .iter()
        .map(|p| load_data(p, config))
        .collect::<Result<Vec<_>>>()?;
    let tc: &TrainConfig = &config.train;
    let (params, log) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.params.config() != &config.embed {
                return Err(CliError::Config(format!(
                    "checkpoint {} was written for a different network configuration",
                    path.display()
                )));
            }
            let (ck, log) = resume(&data, ck, tc, a.checkpoint.as_deref())?;
            (ck.params, log)
        }
        None => train(&data, &config.embed, tc, a.checkpoint.as_deref())?,
    };
    for r in &log.epochs {
        info!("epoch {} loss {:.6} lr {:.3e}", r.epoch, r.loss, r.lr);
    }
    save_params(&params, &a.out)?;
    if let Some(path) = &a.log {
        log.write_csv(BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

fn embed_points(data: &TrainingCloud, params: &EmbedderParams) -> Result<ndarray::Array2<f64>> {
    Ok(embed_cloud(&data.cloud, &data.table, params)?.into_array())
}

fn embed(a: &EmbedArgs, config: &PipelineConfig) -> Result<()> {
    let data = load_data(&a.data, config)?;
    let params = load_params(&a.model)?;
    let e = embed_points(&data, &params)?;
    let rgb = project_embeddings_rgb(e.view());
    save_cloud_with(
        &a.out,
        &data.cloud,
        config.ply_format,
        PlyExtras {
            superpoint: None,
            embedding_rgb: Some(&rgb),
        },
    )?;
    if let Some(path) = &a.raw {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<String> = (0..e.ncols()).map(|j| format!("e{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in e.rows() {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PartitionSummary {
    num_superpoints: usize,
    energy: f64,
    lambda_tilde: f64,
    n_min_exceeded: bool,
}

fn gmp_with(config: &PipelineConfig, lambda_tilde: Option<f64>) -> Result<GmpConfig> {
    let mut g = config.train.gmp.clone();
    if let Some(lt) = lambda_tilde {
        g.lambda_tilde = lt;
    }
    g.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(g)
}

fn partition(a: &PartitionArgs, config: &PipelineConfig) -> Result<()> {
    let gmp = gmp_with(config, a.lambda_tilde)?;
    let data = load_data(&a.data, config)?;
    let params = load_params(&a.model)?;
    let e = embed_points(&data, &params)?;
    let sol = solve_signal(e.view(), data.cloud.positions(), &data.graph, &gmp)?;
    let rgb = project_embeddings_rgb(e.view());
    save_cloud_with(
        &a.out,
        &data.cloud,
        config.ply_format,
        PlyExtras {
            superpoint: Some(sol.partition.assignment()),
            embedding_rgb: Some(&rgb),
        },
    )?;
    info!("{} superpoints", sol.partition.num_superpoints());
    let summary = PartitionSummary {
        num_superpoints: sol.partition.num_superpoints(),
        energy: sol.energy,
        lambda_tilde: gmp.lambda_tilde,
        n_min_exceeded: sol.n_min_exceeded,
    };
    write_json(&summary, a.summary.as_deref())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    ooa: f64,
    br: f64,
    bp: f64,
    n_superpoints: usize,
    lambda_tilde: Option<f64>,
    br_undefined: bool,
    zero_prediction: bool,
}

fn eval(a: &EvalArgs, config: &PipelineConfig) -> Result<()> {
    let data = load_data(&a.data, config)?;
    let (cloud, labels) = load_superpoints(&a.partition)?;
    if cloud.len() != data.cloud.len() {
        return Err(CliError::Data(format!(
            "partition has {} points, data has {}",
            cloud.len(),
            data.cloud.len()
        )));
    }
    let objects = data
        .cloud
        .object_ids()
        .ok_or_else(|| CliError::Data("evaluation needs object ids".into()))?;
    let cls = classify_edges(&data.graph, objects)?;
    let part = Partition::from_labels(&labels);
    let r = evaluate(&data.graph, &part, &cls, data.cloud.class_labels())?;
    let report = EvalReport {
        ooa: r.ooa,
        br: r.br,
        bp: r.bp,
        n_superpoints: r.num_superpoints,
        lambda_tilde: a.lambda_tilde,
        br_undefined: r.br_undefined,
        zero_prediction: r.zero_prediction,
    };
    write_json(&report, a.out.as_deref())
}

fn parse_mode(s: &str) -> Result<BaselineMode> {
    s.parse()
        .map_err(|e: ssp_core::Error| CliError::Usage(e.to_string()))
}

fn sweep(a: &SweepArgs, config: &PipelineConfig) -> Result<()> {
    let gmp = gmp_with(config, None)?;
    if a.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(CliError::Usage("--lambdas must be positive".into()));
    }
    let data = load_data(&a.data, config)?;
    let signal = match (&a.model, &a.baseline) {
        (Some(model), _) => embed_points(&data, &load_params(model)?)?,
        (None, Some(mode)) => baseline_features(&data.cloud, &data.table, parse_mode(mode)?)?,
        (None, None) => return Err(CliError::Usage("--model or --baseline is required".into())),
    };
    let rows = sweep_signal(signal.view(), &data.cloud, &data.graph, &a.lambdas, &gmp)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BaselineSummary {
    mode: String,
    num_superpoints: usize,
    lambda_tilde: f64,
}

fn baseline(a: &BaselineArgs, config: &PipelineConfig) -> Result<()> {
    let mode = parse_mode(&a.mode)?;
    let gmp = gmp_with(config, a.lambda_tilde)?;
    if a.match_count == Some(0) {
        return Err(CliError::Usage("--match-count must be positive".into()));
    }
    let data = load_data(&a.data, config)?;
    let signal = baseline_features(&data.cloud, &data.table, mode)?;
    let pos = data.cloud.positions();
    let (part, lt) = match a.match_count {
        Some(target) => partition_near_count(
            signal.view(),
            pos,
            &data.graph,
            target,
            MATCH_TOLERANCE,
            &gmp,
        )?,
        None => (
            solve_signal(signal.view(), pos, &data.graph, &gmp)?.partition,
            gmp.lambda_tilde,
        ),
    };
    save_cloud_with(
        &a.out,
        &data.cloud,
        config.ply_format,
        PlyExtras {
            superpoint: Some(part.assignment()),
            embedding_rgb: None,
        },
    )?;
    let summary = BaselineSummary {
        mode: a.mode.clone(),
        num_superpoints: part.num_superpoints(),
        lambda_tilde: lt,
    };
    write_json(&summary, a.summary.as_deref())
}
