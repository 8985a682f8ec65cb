//! OBJ / PLY mesh files and the JSON label sidecar.
//!
//! The sidecar lives next to the mesh as `<stem>.labels.json` and maps each
//! label name to an ordered list of vertex indices.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;

use super::{LabelPolylines, TriMesh};
use crate::error::{Error, Result};
use crate::labels::AnatomicalLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Sidecar label path for a mesh file.
pub fn labels_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("labels.json")
}

/// Loads an OBJ or PLY mesh; a label sidecar is attached when present.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (verts, faces) = match ext.as_str() {
        "obj" => read_obj(path)?,
        "ply" => read_ply(path)?,
        other => return Err(Error::UnsupportedFormat(other.to_string())),
    };
    let mut mesh = TriMesh::new(verts, faces)?.with_source(path.to_path_buf());
    let sidecar = labels_path(path);
    if sidecar.exists() {
        mesh = mesh.with_labels(load_labels(&sidecar)?)?;
    }
    Ok(mesh)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelPolylines> {
    let raw: BTreeMap<String, Vec<usize>> = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
    raw.into_iter()
        .map(|(k, v)| {
            let label = k
                .parse::<AnatomicalLabel>()
                .map_err(Error::InvalidConfig)?;
            Ok((label, v))
        })
        .collect()
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelPolylines) -> Result<()> {
    let raw: BTreeMap<&str, &Vec<usize>> = labels.iter().map(|(k, v)| (k.name(), v)).collect();
    fs::write(path, serde_json::to_string_pretty(&raw)?)?;
    Ok(())
}

/// Saves by extension (OBJ, or binary PLY); labels go to the sidecar.
pub fn save_mesh(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => save_obj(path, mesh)?,
        Some("ply") => save_ply(path, mesh, PlyFormat::BinaryLittleEndian)?,
        other => return Err(Error::UnsupportedFormat(other.unwrap_or("").to_string())),
    }
    if !mesh.labels().is_empty() {
        save_labels(labels_path(path), mesh.labels())?;
    }
    Ok(())
}

pub fn save_obj(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in mesh.vertices() {
        // `{}` on f64 prints the shortest representation that round-trips
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_ply(path: impl AsRef<Path>, mesh: &TriMesh, format: PlyFormat) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    )?;
    match format {
        PlyFormat::Ascii => {
            for v in mesh.vertices() {
                writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
            }
            for f in mesh.faces() {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for v in mesh.vertices() {
                for c in [v.x, v.y, v.z] {
                    w.write_all(&c.to_le_bytes())?;
                }
            }
            for f in mesh.faces() {
                w.write_all(&[3u8])?;
                for &i in f {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

type Geometry = (Vec<Point3<f64>>, Vec<[usize; 3]>);

fn read_obj(path: &Path) -> Result<Geometry> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = ln + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = it.next().ok_or_else(|| err(lineno, "vertex needs 3 coordinates".into()))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| err(lineno, format!("bad coordinate `{tok}`")))?;
                }
                verts.push(Point3::from(c));
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(4);
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| err(lineno, format!("bad face index `{tok}`")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        verts.len() as i64 + i
                    } else {
                        return Err(err(lineno, "face index 0 is invalid".into()));
                    };
                    if resolved < 0 {
                        return Err(err(lineno, format!("face index {i} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(err(lineno, "face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
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

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => rd!(i16, 2),
            Self::U16 => rd!(u16, 2),
            Self::I32 => rd!(i32, 4),
            Self::U32 => rd!(u32, 4),
            Self::F32 => rd!(f32, 4),
            Self::F64 => rd!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Binary { big_endian: bool },
}

fn read_ply(path: &Path) -> Result<Geometry> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut lineno = 0usize;
    let mut header_bytes = 0u64;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            return Err(perr(lineno, "unexpected end of header".into()));
        }
        header_bytes += n as u64;
        lineno += 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if lineno == 1 {
            if toks != ["ply"] {
                return Err(perr(1, "missing `ply` magic".into()));
            }
            continue;
        }
        match toks.as_slice() {
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Binary { big_endian: false },
                    "binary_big_endian" => Encoding::Binary { big_endian: true },
                    other => return Err(perr(lineno, format!("unknown format `{other}`"))),
                });
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| perr(lineno, format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(lineno, "property before element".into()))?;
                let (count, item) = Scalar::parse(c)
                    .zip(Scalar::parse(i))
                    .ok_or_else(|| perr(lineno, "bad list property type".into()))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(lineno, "property before element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| perr(lineno, format!("bad property type `{ty}`")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(perr(lineno, format!("unrecognized header line `{}`", line.trim()))),
        }
    }
    let encoding = encoding.ok_or_else(|| perr(lineno, "missing format line".into()))?;

    let mut verts = Vec::new();
    let mut faces = Vec::new();
    match encoding {
        Encoding::Ascii => {
            let mut lines = reader.lines();
            for el in &elements {
                for _ in 0..el.count {
                    lineno += 1;
                    let line = lines
                        .next()
                        .ok_or_else(|| perr(lineno, "unexpected end of file".into()))??;
                    let mut toks = line.split_whitespace().map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| perr(lineno, format!("bad number `{t}`")))
                    });
                    let mut next = || toks.next().unwrap_or_else(|| Err(perr(lineno, "too few values".into())));
                    let mut record = Record::default();
                    for p in &el.props {
                        match p {
                            Property::Scalar { name, .. } => record.scalar(name, next()?),
                            Property::List { name, .. } => {
                                let n = next()? as usize;
                                let items = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
                                record.list(name, items);
                            }
                        }
                    }
                    record
                        .commit(&el.name, &mut verts, &mut faces)
                        .map_err(|m| perr(lineno, m))?;
                }
            }
        }
        Encoding::Binary { big_endian } => {
            let mut data = Vec::new();
            reader.read_to_end(&mut data)?;
            let mut pos = 0usize;
            let berr = |pos: usize, message: String| Error::BinaryParse {
                path: path.to_path_buf(),
                offset: header_bytes + pos as u64,
                message,
            };
            let take = |pos: &mut usize, ty: Scalar| -> Result<f64> {
                let end = *pos + ty.size();
                if end > data.len() {
                    return Err(berr(*pos, "unexpected end of file".into()));
                }
                let v = ty.decode(&data[*pos..end], big_endian);
                *pos = end;
                Ok(v)
            };
            for el in &elements {
                for _ in 0..el.count {
                    let start = pos;
                    let mut record = Record::default();
                    for p in &el.props {
                        match p {
                            Property::Scalar { name, ty } => record.scalar(name, take(&mut pos, *ty)?),
                            Property::List { name, count, item } => {
                                let n = take(&mut pos, *count)? as usize;
                                let items = (0..n).map(|_| take(&mut pos, *item)).collect::<Result<Vec<_>>>()?;
                                record.list(name, items);
                            }
                        }
                    }
                    record
                        .commit(&el.name, &mut verts, &mut faces)
                        .map_err(|m| berr(start, m))?;
                }
            }
        }
    }
    Ok((verts, faces))
}

#[derive(Default)]
struct Record {
    xyz: [Option<f64>; 3],
    indices: Option<Vec<f64>>,
}

impl Record {
    fn scalar(&mut self, name: &str, v: f64) {
        match name {
            "x" => self.xyz[0] = Some(v),
            "y" => self.xyz[1] = Some(v),
            "z" => self.xyz[2] = Some(v),
            _ => {}
        }
    }

    fn list(&mut self, name: &str, items: Vec<f64>) {
        if name == "vertex_indices" || name == "vertex_index" {
            self.indices = Some(items);
        }
    }

    fn commit(self, element: &str, verts: &mut Vec<Point3<f64>>, faces: &mut Vec<[usize; 3]>) -> Result<(), String> {
        match element {
            "vertex" => {
                let [x, y, z] = self.xyz;
                match (x, y, z) {
                    (Some(x), Some(y), Some(z)) => verts.push(Point3::new(x, y, z)),
                    _ => return Err("vertex lacks x/y/z".into()),
                }
            }
            "face" => {
                let idx = self.indices.ok_or("face lacks vertex_indices")?;
                if idx.len() < 3 {
                    return Err("face needs at least 3 vertices".into());
                }
                if idx.iter().any(|&i| i < 0.0) {
                    return Err("negative face index".into());
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0] as usize, idx[k] as usize, idx[k + 1] as usize]);
                }
            }
            _ => {}
        }
        Ok(())
    }
}
