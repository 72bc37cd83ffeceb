use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{LayoutBuilder, Mlp};
use crate::error::{arg_err, Error, Result};

pub(crate) const WEIGHTS_MAGIC: &[u8; 4] = b"SSPW";
pub(crate) const WEIGHTS_VERSION: u32 = 1;

/// Normalization applied after each hidden ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    None,
    /// batch statistics in training, running statistics at inference
    Batch,
    /// per-sample statistics over channel groups
    Group(usize),
}

impl NormMode {
    fn code(self) -> (u8, u32) {
        match self {
            NormMode::None => (0, 0),
            NormMode::Batch => (1, 0),
            NormMode::Group(g) => (2, g as u32),
        }
    }

    fn from_code(code: u8, groups: u32) -> Result<Self> {
        match code {
            0 => Ok(NormMode::None),
            1 => Ok(NormMode::Batch),
            2 if groups > 0 => Ok(NormMode::Group(groups as usize)),
            _ => Err(Error::Format(format!(
                "unknown normalization code {code}/{groups}"
            ))),
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormMode::None),
            "batch" => Ok(NormMode::Batch),
            "group" => Ok(NormMode::Group(4)),
            other => match other.strip_prefix("group") {
                Some(n) => n
                    .parse()
                    .ok()
                    .filter(|&g| g > 0)
                    .map(NormMode::Group)
                    .ok_or_else(|| Error::Argument(format!("bad normalization mode {other:?}"))),
                None => Err(Error::Argument(format!("bad normalization mode {other:?}"))),
            },
        }
    }
}

/// Widths of the spatial transform net and the local point embedder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedderConfig {
    pub radiometry_dim: usize,
    pub stn_set: Vec<usize>,
    /// must end in 4 (the flattened 2×2 matrix)
    pub stn_point: Vec<usize>,
    pub lpe_set: Vec<usize>,
    /// last width is the embedding dimension
    pub lpe_point: Vec<usize>,
    pub norm: NormMode,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            radiometry_dim: 3,
            stn_set: vec![16, 64],
            stn_point: vec![32, 16, 4],
            lpe_set: vec![32, 128],
            lpe_point: vec![64, 32, 32, 4],
            norm: NormMode::Batch,
        }
    }
}

impl EmbedderConfig {
    pub fn with_embedding_dim(mut self, m: usize) -> Self {
        if let Some(last) = self.lpe_point.last_mut() {
            *last = m;
        }
        self
    }

    pub fn embedding_dim(&self) -> usize {
        self.lpe_point.last().copied().unwrap_or(0)
    }

    /// Columns of the set-feature `[P̃, R]`.
    pub fn set_feature_dim(&self) -> usize {
        3 + self.radiometry_dim
    }

    /// Length of the point-feature `[p̃, r]`.
    pub fn point_feature_dim(&self) -> usize {
        6 + self.radiometry_dim
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            &self.stn_set,
            &self.stn_point,
            &self.lpe_set,
            &self.lpe_point,
        ];
        if lists.iter().any(|l| l.is_empty() || l.contains(&0)) {
            return arg_err("embedder widths must be non-empty and positive");
        }
        if self.stn_point.last() != Some(&4) {
            return arg_err("spatial transform must end with 4 outputs");
        }
        if let NormMode::Group(g) = self.norm {
            let hidden = self
                .stn_set
                .iter()
                .chain(&self.lpe_set)
                .chain(&self.stn_point[..self.stn_point.len() - 1])
                .chain(&self.lpe_point[..self.lpe_point.len() - 1]);
            for &w in hidden {
                if w % g != 0 {
                    return arg_err(format!("width {w} is not divisible into {g} groups"));
                }
            }
        }
        Ok(())
    }
}

/// Offsets of every layer in the flat parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub stn_set: Mlp,
    pub stn_point: Mlp,
    pub lpe_set: Mlp,
    pub lpe_point: Mlp,
    pub num_values: usize,
    pub num_running: usize,
    pub tensors: Vec<(String, usize, usize)>,
}

impl Layout {
    pub fn new(config: &EmbedderConfig) -> Self {
        let mut b = LayoutBuilder::default();
        let mode = config.norm;
        let stn_set = b.mlp("stn.set", 3, &config.stn_set, mode, false);
        let stn_point = b.mlp(
            "stn.point",
            stn_set.fan_out(),
            &config.stn_point,
            mode,
            true,
        );
        let lpe_set = b.mlp(
            "lpe.set",
            config.set_feature_dim(),
            &config.lpe_set,
            mode,
            false,
        );
        let lpe_point = b.mlp(
            "lpe.point",
            lpe_set.fan_out() + config.point_feature_dim(),
            &config.lpe_point,
            mode,
            true,
        );
        Self {
            stn_set,
            stn_point,
            lpe_set,
            lpe_point,
            num_values: b.values,
            num_running: b.running,
            tensors: b.tensors,
        }
    }

    fn mlps(&self) -> [&Mlp; 4] {
        [
            &self.stn_set,
            &self.stn_point,
            &self.lpe_set,
            &self.lpe_point,
        ]
    }
}

/// Trainable values and running normalization statistics of an embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    config: EmbedderConfig,
    pub(crate) layout: Layout,
    pub(crate) values: Vec<f64>,
    pub(crate) running: Vec<f64>,
}

impl EmbedderParams {
    /// All-zero values with identity-initialized running statistics.
    pub fn zeros(config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut running = vec![0.0; layout.num_running];
        for mlp in layout.mlps() {
            for layer in &mlp.layers {
                if let Some(n) = &layer.norm {
                    running[n.run_var..n.run_var + layer.fan_out].fill(1.0);
                }
            }
        }
        Ok(Self {
            values: vec![0.0; layout.num_values],
            running,
            layout,
            config,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn running_stats(&self) -> &[f64] {
        &self.running
    }

    /// (name, offset, length) of each trainable tensor in declaration order.
    pub fn tensors(&self) -> &[(String, usize, usize)] {
        &self.layout.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .chain(&self.running)
            .all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights, zero biases, unit norm scales; the last spatial-transform layer
/// has zero weights and an identity bias so that the initial transform is the identity.
pub fn init_params(seed: u64, config: &EmbedderConfig) -> Result<EmbedderParams> {
    let mut params = EmbedderParams::zeros(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = params.layout.clone();
    for mlp in layout.mlps() {
        for layer in &mlp.layers {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for v in &mut params.values[layer.weight..layer.weight + layer.fan_in * layer.fan_out] {
                *v = rng.gen_range(-bound..=bound);
            }
            if let Some(n) = &layer.norm {
                params.values[n.gamma..n.gamma + layer.fan_out].fill(1.0);
            }
        }
    }
    let last = layout.stn_point.layers.last().expect("non-empty");
    params.values[last.weight..last.weight + last.fan_in * 4].fill(0.0);
    params.values[last.bias..last.bias + 4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    Ok(params)
}

fn write_widths<W: Write>(w: &mut W, widths: &[usize]) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(widths.len() as u32)?;
    for &x in widths {
        w.write_u32::<LittleEndian>(x as u32)?;
    }
    Ok(())
}

fn read_widths<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    if n > 64 {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    (0..n)
        .map(|_| Ok(r.read_u32::<LittleEndian>()? as usize))
        .collect()
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(xs.len() as u64)?;
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, expected: usize) -> Result<Vec<f64>> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    if n != expected {
        return Err(Error::Format(format!(
            "expected {expected} values, file holds {n}"
        )));
    }
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

/// Writes the weight blob (magic, version, config, values, running statistics).
pub fn write_params<W: Write>(params: &EmbedderParams, w: &mut W) -> Result<()> {
    let c = &params.config;
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_u32::<LittleEndian>(WEIGHTS_VERSION)?;
    w.write_u32::<LittleEndian>(c.radiometry_dim as u32)?;
    let (code, groups) = c.norm.code();
    w.write_u8(code)?;
    w.write_u32::<LittleEndian>(groups)?;
    for widths in [&c.stn_set, &c.stn_point, &c.lpe_set, &c.lpe_point] {
        write_widths(w, widths)?;
    }
    write_f64s(w, &params.values)?;
    write_f64s(w, &params.running)?;
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<EmbedderParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format("not an embedder weight file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "weight file version {version}, this build reads version {WEIGHTS_VERSION}"
        )));
    }
    let radiometry_dim = r.read_u32::<LittleEndian>()? as usize;
    let code = r.read_u8()?;
    let groups = r.read_u32::<LittleEndian>()?;
    let config = EmbedderConfig {
        radiometry_dim,
        norm: NormMode::from_code(code, groups)?,
        stn_set: read_widths(r)?,
        stn_point: read_widths(r)?,
        lpe_set: read_widths(r)?,
        lpe_point: read_widths(r)?,
    };
    let mut params = EmbedderParams::zeros(config).map_err(|e| Error::Format(e.to_string()))?;
    params.values = read_f64s(r, params.layout.num_values)?;
    params.running = read_f64s(r, params.layout.num_running)?;
    if !params.is_finite() {
        return Err(Error::NonFinite(
            "weight file holds non-finite values".into(),
        ));
    }
    Ok(params)
}

pub fn save_params(params: &EmbedderParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<EmbedderParams> {
    let mut r = BufReader::new(File::open(path)?);
    let params = read_params(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after weights".into()));
    }
    Ok(params)
}

/// Loads weights and checks that they were written for `expected`.
pub fn load_params_for(
    path: impl AsRef<Path>,
    expected: &EmbedderConfig,
) -> Result<EmbedderParams> {
    let params = load_params(path)?;
    if params.config() != expected {
        return Err(Error::Format(format!(
            "weights were written for {:?}, expected {:?}",
            params.config(),
            expected
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        // independent count: Σ (fan_in+1)·fan_out + 2·fan_out per normalized layer
        fn count(fan_in: usize, widths: &[usize], linear_last: bool) -> usize {
            let mut prev = fan_in;
            let mut total = 0;
            for (i, &w) in widths.iter().enumerate() {
                total += (prev + 1) * w;
                if !(linear_last && i + 1 == widths.len()) {
                    total += 2 * w;
                }
                prev = w;
            }
            total
        }
        let config = EmbedderConfig::default();
        let want = count(3, &[16, 64], false)
            + count(64, &[32, 16, 4], true)
            + count(6, &[32, 128], false)
            + count(128 + 9, &[64, 32, 32, 4], true);
        let params = init_params(0, &config).unwrap();
        assert_eq!(params.num_parameters(), want);
        assert_eq!(want, 21_208);
        let no_norm = EmbedderConfig {
            norm: NormMode::None,
            ..config
        };
        assert_eq!(init_params(0, &no_norm).unwrap().num_parameters(), 20_376);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let config = EmbedderConfig::default();
        let a = init_params(7, &config).unwrap();
        let b = init_params(7, &config).unwrap();
        let c = init_params(8, &config).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        for mlp in a.layout.mlps() {
            for l in &mlp.layers {
                let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
                assert!(a.values[l.weight..l.weight + l.fan_in * l.fan_out]
                    .iter()
                    .all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = init_params(3, &EmbedderConfig::default()).unwrap();
        params.running[5] = 0.25;
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        save_params(&params, &p1).unwrap();
        let loaded = load_params(&p1).unwrap();
        assert_eq!(loaded, params);
        save_params(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_and_foreign_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let params = init_params(3, &EmbedderConfig::default()).unwrap();
        let path = dir.path().join("w.bin");
        save_params(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load_params(&path).is_err());

        let mut bumped = bytes.clone();
        bumped[4] = 9;
        std::fs::write(&path, &bumped).unwrap();
        let err = load_params(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        std::fs::write(&path, &bytes).unwrap();
        let other = EmbedderConfig::default().with_embedding_dim(8);
        assert!(load_params_for(&path, &other).is_err());
        assert!(load_params_for(&path, &EmbedderConfig::default()).is_ok());
    }

    #[test]
    fn group_widths_must_divide() {
        let config = EmbedderConfig {
            norm: NormMode::Group(5),
            ..EmbedderConfig::default()
        };
        assert!(init_params(0, &config).is_err());
        assert_eq!("group".parse::<NormMode>().unwrap(), NormMode::Group(4));
        assert_eq!("group2".parse::<NormMode>().unwrap(), NormMode::Group(2));
        assert!("layer".parse::<NormMode>().is_err());
    }
}
