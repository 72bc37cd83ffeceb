//! Flat `key = value` pipeline configuration. Lines starting with `#` are comments; unknown
//! and repeated keys are rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use ssp_core::cloud::PlyFormat;
use ssp_core::embed::{EmbedderConfig, NormMode};
use ssp_core::harness::SceneSpec;
use ssp_core::loss::Weighting;
use ssp_core::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// neighborhood size
    pub k: usize,
    /// adjacency graph neighbors
    pub k_adj: usize,
    /// voxel edge for subsampling in `prep`; 0 keeps every point
    pub voxel: f64,
    /// extra adjacency edges between points closer than this; 0 disables
    pub adj_radius: f64,
    pub embed: EmbedderConfig,
    /// training, loss and solver settings
    pub train: TrainConfig,
    pub scene_density: f64,
    pub scene_boxes: (usize, usize),
    pub scene_boards: (usize, usize),
    pub ply_format: PlyFormat,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 20,
            k_adj: 5,
            voxel: 0.0,
            adj_radius: 0.0,
            embed: EmbedderConfig::default(),
            train: TrainConfig::default(),
            scene_density: SceneSpec::default().density,
            scene_boxes: SceneSpec::default().box_count,
            scene_boards: SceneSpec::default().board_count,
            ply_format: PlyFormat::BinaryLittleEndian,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn range(key: &str, v: &str) -> Result<(usize, usize), String> {
    match list::<usize>(key, v)?.as_slice() {
        [a] => Ok((*a, *a)),
        [a, b] if a <= b => Ok((*a, *b)),
        _ => Err(format!("{key} expects 'min,max' with min <= max")),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl PipelineConfig {
    /// Every key with its current value, in the format [`PipelineConfig::parse`] reads.
    pub fn render(&self) -> String {
        let e = &self.embed;
        let t = &self.train;
        let g = &t.gmp;
        let mut s = String::new();
        let lpe_hidden = &e.lpe_point[..e.lpe_point.len().saturating_sub(1)];
        let norm = match e.norm {
            NormMode::None => "none".to_string(),
            NormMode::Batch => "batch".to_string(),
            NormMode::Group(n) => format!("group{n}"),
        };
        let weighting = match t.loss.weighting {
            Weighting::CrossPartition => "cross_partition",
            Weighting::Seal => "seal",
            Weighting::Proportional => "proportional",
        };
        let fmt = match self.ply_format {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("k", self.k.to_string()),
            ("k_adj", self.k_adj.to_string()),
            ("voxel", self.voxel.to_string()),
            ("adj_radius", self.adj_radius.to_string()),
            ("m", e.embedding_dim().to_string()),
            ("stn_set", join(&e.stn_set)),
            ("stn_point", join(&e.stn_point)),
            ("lpe_set", join(&e.lpe_set)),
            ("lpe_point", join(lpe_hidden)),
            ("norm", norm),
            ("lambda_tilde", g.lambda_tilde.to_string()),
            ("sigma", g.sigma.to_string()),
            ("alpha_spat", g.alpha_spat.to_string()),
            ("n_min_1", g.n_min_1.to_string()),
            ("ramp", g.ramp.to_string()),
            ("max_iters", g.max_iters.to_string()),
            ("delta", t.loss.delta.to_string()),
            ("mu_tilde", t.loss.mu_tilde.to_string()),
            ("weighting", weighting.to_string()),
            ("epochs", t.epochs.to_string()),
            ("decay_epochs", join(&t.decay_epochs)),
            ("decay_factor", t.decay_factor.to_string()),
            ("batch_clouds", t.batch_clouds.to_string()),
            ("subgraph_size", t.subgraph_size.to_string()),
            ("steps_per_epoch", t.steps_per_epoch.to_string()),
            ("lr", t.lr.to_string()),
            ("clip", t.clip.to_string()),
            ("noise_std", t.noise_std.to_string()),
            ("noise_clamp", t.noise_clamp.to_string()),
            ("scene_density", self.scene_density.to_string()),
            (
                "scene_boxes",
                format!("{},{}", self.scene_boxes.0, self.scene_boxes.1),
            ),
            (
                "scene_boards",
                format!("{},{}", self.scene_boards.0, self.scene_boards.1),
            ),
            ("ply_format", fmt.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Defaults overridden by the keys in `text`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = Self::default();
        let mut seen = HashSet::new();
        // `lpe_point` holds the hidden widths; `m` the output width. Applied at the end so
        // the keys can come in any order.
        let mut lpe_hidden: Option<Vec<usize>> = None;
        let mut m: Option<usize> = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::Config(format!("line {}: {msg}", ln + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("key {key} given twice")));
            }
            let t = &mut c.train;
            let r: Result<(), String> = (|| {
                match key {
                    "k" => c.k = num(key, v)?,
                    "k_adj" => c.k_adj = num(key, v)?,
                    "voxel" => c.voxel = num(key, v)?,
                    "adj_radius" => c.adj_radius = num(key, v)?,
                    "m" => m = Some(num(key, v)?),
                    "stn_set" => c.embed.stn_set = list(key, v)?,
                    "stn_point" => c.embed.stn_point = list(key, v)?,
                    "lpe_set" => c.embed.lpe_set = list(key, v)?,
                    "lpe_point" => lpe_hidden = Some(list(key, v)?),
                    "norm" => {
                        c.embed.norm = v.parse().map_err(|e: ssp_core::Error| e.to_string())?
                    }
                    "lambda_tilde" => t.gmp.lambda_tilde = num(key, v)?,
                    "sigma" => t.gmp.sigma = num(key, v)?,
                    "alpha_spat" => t.gmp.alpha_spat = num(key, v)?,
                    "n_min_1" => t.gmp.n_min_1 = num(key, v)?,
                    "ramp" => t.gmp.ramp = num(key, v)?,
                    "max_iters" => t.gmp.max_iters = num(key, v)?,
                    "delta" => t.loss.delta = num(key, v)?,
                    "mu_tilde" => t.loss.mu_tilde = num(key, v)?,
                    "weighting" => {
                        t.loss.weighting = v.parse().map_err(|e: ssp_core::Error| e.to_string())?
                    }
                    "epochs" => t.epochs = num(key, v)?,
                    "decay_epochs" => t.decay_epochs = list(key, v)?,
                    "decay_factor" => t.decay_factor = num(key, v)?,
                    "batch_clouds" => t.batch_clouds = num(key, v)?,
                    "subgraph_size" => t.subgraph_size = num(key, v)?,
                    "steps_per_epoch" => t.steps_per_epoch = num(key, v)?,
                    "lr" => t.lr = num(key, v)?,
                    "clip" => t.clip = num(key, v)?,
                    "noise_std" => t.noise_std = num(key, v)?,
                    "noise_clamp" => t.noise_clamp = num(key, v)?,
                    "scene_density" => c.scene_density = num(key, v)?,
                    "scene_boxes" => c.scene_boxes = range(key, v)?,
                    "scene_boards" => c.scene_boards = range(key, v)?,
                    "ply_format" => {
                        c.ply_format = match v {
                            "ascii" => PlyFormat::Ascii,
                            "binary" => PlyFormat::BinaryLittleEndian,
                            _ => {
                                return Err(format!(
                                    "ply_format must be ascii or binary, got {v:?}"
                                ))
                            }
                        }
                    }
                    _ => return Err(format!("unknown key {key}")),
                }
                Ok(())
            })();
            r.map_err(at)?;
        }
        if let Some(hidden) = lpe_hidden {
            let out = m.unwrap_or(c.embed.embedding_dim());
            c.embed.lpe_point = hidden.into_iter().chain([out]).collect();
        } else if let Some(m) = m {
            c.embed = c.embed.with_embedding_dim(m);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: ssp_core::Error| CliError::Config(e.to_string());
        if self.k == 0 || self.k_adj == 0 {
            return Err(CliError::Config("k and k_adj must be positive".into()));
        }
        if !(self.voxel >= 0.0 && self.adj_radius >= 0.0) {
            return Err(CliError::Config(
                "voxel and adj_radius must be non-negative".into(),
            ));
        }
        if !(self.scene_density > 0.0) {
            return Err(CliError::Config("scene_density must be positive".into()));
        }
        self.embed.validate().map_err(bad)?;
        self.train.validate().map_err(bad)
    }

    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            density: self.scene_density,
            box_count: self.scene_boxes,
            board_count: self.scene_boards,
            ..SceneSpec::default()
        }
    }
}
