//! Binary cache of a prepared cloud: positions, radiometry, labels, neighborhood table and
//! adjacency edges, little-endian.
//!
//! ```text
//! "SSPP" u32 version  u64 n  u32 k  u32 k_adj  u32 flags  u32 d
//! f64 positions[n*3]  f64 radiometry[n*d]
//! u32 classes[n] (flags & 1)  u32 objects[n] (flags & 2)
//! u32 knn[n*k]  u64 e  u32 edges[e*2]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use ssp_core::cloud::{load_cloud, NeighborhoodTable, PointCloud};
use ssp_core::graph::AdjacencyGraph;
use ssp_core::train::TrainingCloud;
use ssp_core::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SSPP";
pub const VERSION: u32 = 1;

/// A prepared cloud with the adjacency degree it was built with.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: TrainingCloud,
    pub k_adj: usize,
}

pub fn write_prepared<W: Write>(p: &Prepared, w: &mut W) -> Result<()> {
    let TrainingCloud {
        cloud,
        table,
        graph,
    } = &p.data;
    let n = cloud.len();
    let d = cloud.radiometry_dim();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(n as u64)?;
    w.write_u32::<LittleEndian>(table.k() as u32)?;
    w.write_u32::<LittleEndian>(p.k_adj as u32)?;
    let flags = cloud.class_labels().is_some() as u32 | (cloud.object_ids().is_some() as u32) << 1;
    w.write_u32::<LittleEndian>(flags)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    for x in cloud.positions().iter().flatten() {
        w.write_f64::<LittleEndian>(*x)?;
    }
    for x in cloud.radiometry().iter() {
        w.write_f64::<LittleEndian>(*x)?;
    }
    for v in cloud
        .class_labels()
        .into_iter()
        .chain(cloud.object_ids())
        .flatten()
    {
        w.write_u32::<LittleEndian>(*v)?;
    }
    for v in table.as_slice() {
        w.write_u32::<LittleEndian>(*v)?;
    }
    w.write_u64::<LittleEndian>(graph.num_edges() as u64)?;
    for &(a, b) in graph.edges() {
        w.write_u32::<LittleEndian>(a)?;
        w.write_u32::<LittleEndian>(b)?;
    }
    Ok(())
}

fn u32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<u32>> {
    let mut v = vec![0u32; n];
    r.read_u32_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

fn f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0f64; n];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

pub fn read_prepared<R: Read>(r: &mut R) -> Result<Prepared> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a prepared-cloud cache".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "cache version {version}, expected {VERSION}"
        )));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let k = r.read_u32::<LittleEndian>()? as usize;
    let k_adj = r.read_u32::<LittleEndian>()? as usize;
    let flags = r.read_u32::<LittleEndian>()?;
    let d = r.read_u32::<LittleEndian>()? as usize;
    if flags > 3 {
        return Err(Error::Format(format!("unknown cache flags {flags:#x}")));
    }
    let pos = f64s(r, n * 3)?;
    let positions = pos.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let radiometry = Array2::from_shape_vec((n, d), f64s(r, n * d)?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let classes = if flags & 1 != 0 {
        Some(u32s(r, n)?)
    } else {
        None
    };
    let objects = if flags & 2 != 0 {
        Some(u32s(r, n)?)
    } else {
        None
    };
    let cloud = PointCloud::new(positions, radiometry, classes, objects)?;
    let table = NeighborhoodTable::from_raw(k, u32s(r, n * k)?)?;
    let e = r.read_u64::<LittleEndian>()? as usize;
    let ends = u32s(r, e * 2)?;
    let graph = AdjacencyGraph::from_edges(
        n,
        ends.chunks_exact(2).map(|c| (c[0] as usize, c[1] as usize)),
    )?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after cache".into()));
    }
    Ok(Prepared {
        data: TrainingCloud {
            cloud,
            table,
            graph,
        },
        k_adj,
    })
}

pub fn save_prepared(p: &Prepared, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_prepared(p, &mut w)?;
    w.flush()?;
    Ok(())
}

/// What a data file holds, judged from its first bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Cache,
    Ply,
}

pub fn sniff(path: &Path) -> Result<DataKind> {
    let mut head = [0u8; 4];
    let mut f = File::open(path)?;
    let got = f.read(&mut head)?;
    if got == 4 && &head == MAGIC {
        Ok(DataKind::Cache)
    } else if got >= 3 && &head[..3] == b"ply" {
        Ok(DataKind::Ply)
    } else {
        Err(Error::Format(format!(
            "{} is neither a PLY file nor a prepared cache",
            path.display()
        )))
    }
}

pub fn load_prepared(path: &Path) -> Result<Prepared> {
    read_prepared(&mut BufReader::new(File::open(path)?))
}

/// Cloud from either a PLY file or a cache.
pub fn load_any_cloud(path: &Path) -> Result<PointCloud> {
    match sniff(path)? {
        DataKind::Cache => Ok(load_prepared(path)?.data.cloud),
        DataKind::Ply => load_cloud(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ssp_core::harness::{generate_synthetic_scene, prepare_cloud, SceneSpec};

    fn small() -> Prepared {
        let spec = SceneSpec {
            room_min: [2.0, 2.0, 2.0],
            room_max: [2.0, 2.0, 2.0],
            density: 30.0,
            ..SceneSpec::default()
        };
        let cloud = generate_synthetic_scene(&spec).unwrap();
        Prepared {
            data: prepare_cloud(cloud, 6, 3).unwrap(),
            k_adj: 3,
        }
    }

    #[test]
    fn blob_round_trips() {
        let p = small();
        let mut buf = Vec::new();
        write_prepared(&p, &mut buf).unwrap();
        let q = read_prepared(&mut buf.as_slice()).unwrap();
        assert_eq!(q.k_adj, 3);
        assert_eq!(q.data.cloud, p.data.cloud);
        assert_eq!(q.data.table.as_slice(), p.data.table.as_slice());
        assert_eq!(q.data.graph.edges(), p.data.graph.edges());
        let mut again = Vec::new();
        write_prepared(&q, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn damaged_blobs_are_rejected() {
        let mut buf = Vec::new();
        write_prepared(&small(), &mut buf).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            read_prepared(&mut bad_magic.as_slice()),
            Err(Error::Format(_))
        ));
        let mut bad_version = buf.clone();
        bad_version[4] = 9;
        assert!(matches!(
            read_prepared(&mut bad_version.as_slice()),
            Err(Error::Format(_))
        ));
        assert!(read_prepared(&mut &buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_prepared(&mut long.as_slice()).is_err());
    }
}
