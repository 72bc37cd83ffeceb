//! Minimal PLY reader/writer for vertex clouds (ASCII and binary little-endian).
//!
//! Reading accepts any scalar property type; every vertex property is kept as a column of
//! `f64` values, which represents all PLY scalar types exactly. Non-vertex elements are
//! parsed and skipped. Writing emits the fixed schema used by the pipeline:
//!
//! ```text
//! x y z            float
//! red green blue   uchar    (radiometry with d = 3)
//! intensity        float    (radiometry with d = 1)
//! object_id        uint     (optional)
//! class_id         uchar    (optional)
//! superpoint       uint     (optional)
//! emb_r emb_g emb_b uchar   (optional)
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::PointCloud;
use crate::error::{arg_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> u64 {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_binary<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            Self::I8 => r.read_i8()? as f64,
            Self::U8 => r.read_u8()? as f64,
            Self::I16 => r.read_i16::<LittleEndian>()? as f64,
            Self::U16 => r.read_u16::<LittleEndian>()? as f64,
            Self::I32 => r.read_i32::<LittleEndian>()? as f64,
            Self::U32 => r.read_u32::<LittleEndian>()? as f64,
            Self::F32 => r.read_f32::<LittleEndian>()? as f64,
            Self::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, ScalarType),
    List(String, ScalarType, ScalarType),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Vertex properties of a PLY file, one `f64` column per property.
#[derive(Debug, Clone, Default)]
pub struct PlyVertices {
    pub count: usize,
    names: Vec<String>,
    columns: HashMap<String, Vec<f64>>,
}

impl PlyVertices {
    pub fn property(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(|c| c.as_slice())
    }

    pub fn property_names(&self) -> &[String] {
        &self.names
    }

    /// Column converted to `u32`, failing on negative or fractional entries.
    pub fn property_u32(&self, name: &str) -> Result<Option<Vec<u32>>> {
        let Some(col) = self.property(name) else {
            return Ok(None);
        };
        col.iter()
            .enumerate()
            .map(|(i, &v)| {
                if v >= 0.0 && v <= u32::MAX as f64 && v.fract() == 0.0 {
                    Ok(v as u32)
                } else {
                    Err(Error::Format(format!(
                        "vertex {i}: {name}={v} is not a valid id"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// lines consumed including `end_header`
    lines: usize,
    /// bytes consumed including the final newline
    bytes: u64,
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut lines = 0usize;
    let mut bytes = 0u64;
    let mut next = |line: &mut String| -> Result<Option<usize>> {
        line.clear();
        let n = r.read_line(line)?;
        if n == 0 {
            return Ok(None);
        }
        lines += 1;
        bytes += n as u64;
        Ok(Some(lines))
    };

    match next(&mut line)? {
        Some(_) if line.trim_end() == "ply" => {}
        _ => return Err(Error::parse_at_line(1, "missing 'ply' magic")),
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some(ln) = next(&mut line)? else {
            return Err(Error::parse_at_line(
                lines + 1,
                "header ends without end_header",
            ));
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse_at_line(
                            ln,
                            format!("unsupported format '{other}'"),
                        ))
                    }
                });
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| {
                    Error::parse_at_line(ln, format!("bad element count '{count}'"))
                })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse_at_line(ln, "property before any element"))?;
                let c = ScalarType::parse(count_ty).ok_or_else(|| {
                    Error::parse_at_line(ln, format!("unknown type '{count_ty}'"))
                })?;
                let t = ScalarType::parse(item_ty)
                    .ok_or_else(|| Error::parse_at_line(ln, format!("unknown type '{item_ty}'")))?;
                el.properties.push(Property::List(name.to_string(), c, t));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse_at_line(ln, "property before any element"))?;
                let t = ScalarType::parse(ty)
                    .ok_or_else(|| Error::parse_at_line(ln, format!("unknown type '{ty}'")))?;
                el.properties.push(Property::Scalar(name.to_string(), t));
            }
            ["end_header"] => break,
            _ => {
                return Err(Error::parse_at_line(
                    ln,
                    format!("unrecognized header line '{}'", line.trim_end()),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| Error::parse_at_line(lines, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        lines,
        bytes,
    })
}

/// Reads every vertex property of a PLY stream.
pub fn read_vertices<R: BufRead>(mut r: R) -> Result<PlyVertices> {
    let header = read_header(&mut r)?;
    let mut out = PlyVertices::default();
    let mut seen_vertex = false;
    match header.format {
        PlyFormat::Ascii => {
            let mut line_no = header.lines;
            let mut lines = r.lines();
            for el in &header.elements {
                let is_vertex = el.name == "vertex" && !seen_vertex;
                if is_vertex {
                    seen_vertex = true;
                    init_columns(&mut out, el);
                }
                for _ in 0..el.count {
                    line_no += 1;
                    let line = lines
                        .next()
                        .ok_or_else(|| Error::parse_at_line(line_no, "unexpected end of data"))??;
                    let mut tokens = line.split_whitespace();
                    for prop in &el.properties {
                        match prop {
                            Property::Scalar(name, _) => {
                                let v = parse_token(tokens.next(), line_no, name)?;
                                if is_vertex {
                                    out.columns.get_mut(name).unwrap().push(v);
                                }
                            }
                            Property::List(name, _, _) => {
                                let n = parse_token(tokens.next(), line_no, name)? as usize;
                                for _ in 0..n {
                                    parse_token(tokens.next(), line_no, name)?;
                                }
                            }
                        }
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut offset = header.bytes;
            for el in &header.elements {
                let is_vertex = el.name == "vertex" && !seen_vertex;
                if is_vertex {
                    seen_vertex = true;
                    init_columns(&mut out, el);
                }
                for _ in 0..el.count {
                    for prop in &el.properties {
                        match prop {
                            Property::Scalar(name, ty) => {
                                let v = ty.read_binary(&mut r).map_err(|_| {
                                    Error::parse_at_byte(
                                        offset,
                                        format!("truncated payload reading '{name}'"),
                                    )
                                })?;
                                offset += ty.size();
                                if is_vertex {
                                    out.columns.get_mut(name).unwrap().push(v);
                                }
                            }
                            Property::List(name, count_ty, item_ty) => {
                                let n = count_ty.read_binary(&mut r).map_err(|_| {
                                    Error::parse_at_byte(
                                        offset,
                                        format!("truncated payload reading '{name}'"),
                                    )
                                })? as u64;
                                offset += count_ty.size();
                                let skip = n * item_ty.size();
                                let copied =
                                    std::io::copy(&mut (&mut r).take(skip), &mut std::io::sink())?;
                                if copied != skip {
                                    return Err(Error::parse_at_byte(
                                        offset + copied,
                                        format!("truncated payload reading '{name}'"),
                                    ));
                                }
                                offset += skip;
                            }
                        }
                    }
                }
            }
        }
    }
    if !seen_vertex {
        return Err(Error::parse_at_line(header.lines, "no vertex element"));
    }
    Ok(out)
}

fn init_columns(out: &mut PlyVertices, el: &Element) {
    out.count = el.count;
    for prop in &el.properties {
        if let Property::Scalar(name, _) = prop {
            out.names.push(name.clone());
            out.columns
                .insert(name.clone(), Vec::with_capacity(el.count));
        }
    }
}

fn parse_token(tok: Option<&str>, line: usize, name: &str) -> Result<f64> {
    let tok =
        tok.ok_or_else(|| Error::parse_at_line(line, format!("missing value for '{name}'")))?;
    tok.parse::<f64>()
        .map_err(|_| Error::parse_at_line(line, format!("bad value '{tok}' for '{name}'")))
}

/// Builds a [`PointCloud`] from parsed vertex properties.
pub fn cloud_from_vertices(v: &PlyVertices) -> Result<PointCloud> {
    let coord = |name: &str| {
        v.property(name)
            .ok_or_else(|| Error::Format(format!("required property '{name}' missing")))
    };
    let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
    let positions: Vec<[f64; 3]> = (0..v.count).map(|i| [x[i], y[i], z[i]]).collect();

    let radiometry = match (v.property("red"), v.property("green"), v.property("blue")) {
        (Some(r), Some(g), Some(b)) => {
            Array2::from_shape_fn((v.count, 3), |(i, c)| [r, g, b][c][i] / 255.0)
        }
        _ => match v.property("intensity") {
            Some(it) => Array2::from_shape_fn((v.count, 1), |(i, _)| it[i]),
            None => Array2::zeros((v.count, 0)),
        },
    };
    let classes = v.property_u32("class_id")?;
    let objects = v.property_u32("object_id")?;
    PointCloud::new(positions, radiometry, classes, objects)
}

/// Loads a PLY point cloud; the encoding is taken from the file header.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let file = File::open(path)?;
    cloud_from_vertices(&read_vertices(BufReader::new(file))?)
}

/// Optional per-point channels appended after the cloud's own properties.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlyExtras<'a> {
    pub superpoint: Option<&'a [u32]>,
    /// `N x 3` colors in `[0, 1]`
    pub embedding_rgb: Option<&'a Array2<f64>>,
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    save_cloud_with(path, cloud, format, PlyExtras::default())
}

pub fn save_cloud_with(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    format: PlyFormat,
    extras: PlyExtras<'_>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cloud(&mut w, cloud, format, extras)?;
    w.flush()?;
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_cloud<W: Write>(
    w: &mut W,
    cloud: &PointCloud,
    format: PlyFormat,
    extras: PlyExtras<'_>,
) -> Result<()> {
    let n = cloud.len();
    let d = cloud.radiometry_dim();
    if d != 0 && d != 1 && d != 3 {
        return arg_err(format!("cannot write radiometry with {d} channels"));
    }
    if extras.superpoint.is_some_and(|s| s.len() != n) {
        return arg_err("superpoint array length differs from cloud size");
    }
    if extras.embedding_rgb.is_some_and(|e| e.dim() != (n, 3)) {
        return arg_err("embedding colors must be N x 3");
    }
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {n}")?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    match d {
        3 => writeln!(
            w,
            "property uchar red\nproperty uchar green\nproperty uchar blue"
        )?,
        1 => writeln!(w, "property float intensity")?,
        _ => {}
    }
    let objects = cloud.object_ids();
    let classes = cloud.class_labels();
    if objects.is_some() {
        writeln!(w, "property uint object_id")?;
    }
    if let Some(c) = classes {
        if let Some(bad) = c.iter().find(|&&c| c > u8::MAX as u32) {
            return arg_err(format!("class id {bad} does not fit in uchar"));
        }
        writeln!(w, "property uchar class_id")?;
    }
    if extras.superpoint.is_some() {
        writeln!(w, "property uint superpoint")?;
    }
    if extras.embedding_rgb.is_some() {
        writeln!(
            w,
            "property uchar emb_r\nproperty uchar emb_g\nproperty uchar emb_b"
        )?;
    }
    writeln!(w, "end_header")?;

    let rad = cloud.radiometry();
    for i in 0..n {
        let p = cloud.positions()[i];
        match format {
            PlyFormat::Ascii => {
                let mut fields: Vec<String> = p.iter().map(|&c| format!("{}", c as f32)).collect();
                match d {
                    3 => fields.extend((0..3).map(|c| to_u8(rad[[i, c]]).to_string())),
                    1 => fields.push(format!("{}", rad[[i, 0]] as f32)),
                    _ => {}
                }
                if let Some(o) = objects {
                    fields.push(o[i].to_string());
                }
                if let Some(c) = classes {
                    fields.push(c[i].to_string());
                }
                if let Some(s) = extras.superpoint {
                    fields.push(s[i].to_string());
                }
                if let Some(e) = extras.embedding_rgb {
                    fields.extend((0..3).map(|c| to_u8(e[[i, c]]).to_string()));
                }
                writeln!(w, "{}", fields.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in p {
                    w.write_f32::<LittleEndian>(c as f32)?;
                }
                match d {
                    3 => {
                        for c in 0..3 {
                            w.write_u8(to_u8(rad[[i, c]]))?;
                        }
                    }
                    1 => w.write_f32::<LittleEndian>(rad[[i, 0]] as f32)?,
                    _ => {}
                }
                if let Some(o) = objects {
                    w.write_u32::<LittleEndian>(o[i])?;
                }
                if let Some(c) = classes {
                    w.write_u8(c[i] as u8)?;
                }
                if let Some(s) = extras.superpoint {
                    w.write_u32::<LittleEndian>(s[i])?;
                }
                if let Some(e) = extras.embedding_rgb {
                    for c in 0..3 {
                        w.write_u8(to_u8(e[[i, c]]))?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Reads a `superpoint` vertex property written by [`save_cloud_with`].
pub fn load_superpoints(path: impl AsRef<Path>) -> Result<(PointCloud, Vec<u32>)> {
    let v = read_vertices(BufReader::new(File::open(path)?))?;
    let sp = v
        .property_u32("superpoint")?
        .ok_or_else(|| Error::Format("required property 'superpoint' missing".into()))?;
    Ok((cloud_from_vertices(&v)?, sp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::UNLABELED;
    use std::io::Cursor;

    fn parse(s: &[u8]) -> Result<PointCloud> {
        cloud_from_vertices(&read_vertices(Cursor::new(s))?)
    }

    #[test]
    fn single_point_ascii() {
        let c = parse(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.positions()[0], [1.0, 2.0, 3.0]);
        assert_eq!(c.radiometry_dim(), 0);
        assert!(c.class_labels().is_none() && c.object_ids().is_none());
    }

    #[test]
    fn colors_are_scaled_to_unit_interval() {
        let c = parse(b"ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 51\n1 1 1 0 255 102\n").unwrap();
        assert_eq!(c.radiometry().row(0).to_vec(), vec![1.0, 0.0, 0.2]);
        assert_eq!(c.radiometry().row(1).to_vec(), vec![0.0, 1.0, 0.4]);
    }

    #[test]
    fn skips_face_elements() {
        let c = parse(b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn missing_coordinate_is_an_error() {
        let err = parse(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n");
        assert!(matches!(err, Err(Error::Format(_))));
    }

    #[test]
    fn bad_header_line_reports_line() {
        let err = parse(
            b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nbogus stuff\nend_header\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("line 5"), "{err}");
    }

    #[test]
    fn truncated_ascii_reports_line() {
        let err = parse(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n").unwrap_err();
        assert!(err.to_string().contains("line 9"), "{err}");
    }

    #[test]
    fn truncated_binary_reports_byte_offset() {
        let mut data = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        let header_len = data.len();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            data.extend_from_slice(&v.to_le_bytes());
        }
        let err = parse(&data).unwrap_err();
        let want = format!("byte offset {}", header_len + 16);
        assert!(err.to_string().contains(&want), "{err}");
    }

    #[test]
    fn binary_round_trip_with_extras() {
        let cloud = PointCloud::new(
            vec![[0.5, -1.25, 3.0], [0.125, 2.0, -7.5]],
            Array2::from_shape_vec(
                (2, 3),
                vec![
                    1.0,
                    0.0,
                    128.0 / 255.0,
                    51.0 / 255.0,
                    102.0 / 255.0,
                    153.0 / 255.0,
                ],
            )
            .unwrap(),
            Some(vec![3, 4]),
            Some(vec![10, UNLABELED]),
        )
        .unwrap();
        let sp = [7u32, 9];
        let emb = Array2::from_shape_vec((2, 3), vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_cloud(
            &mut buf,
            &cloud,
            PlyFormat::BinaryLittleEndian,
            PlyExtras {
                superpoint: Some(&sp),
                embedding_rgb: Some(&emb),
            },
        )
        .unwrap();
        let v = read_vertices(Cursor::new(&buf)).unwrap();
        let back = cloud_from_vertices(&v).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(v.property_u32("superpoint").unwrap().unwrap(), sp.to_vec());
        assert_eq!(v.property("emb_g").unwrap(), &[128.0, 128.0]);
    }
}
