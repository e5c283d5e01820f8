//! OBJ and PLY mesh loading, plus an ASCII PLY writer for fixtures.

use std::fs;
use std::io::Write;
use std::path::Path;

use voxify_core::geometry::{Mesh, MeshError};
use voxify_core::{Rgb, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum MeshIoError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: String, source: std::io::Error },
    #[error("unsupported mesh format {0:?} (expected .obj or .ply)")]
    UnsupportedFormat(String),
    #[error("missing vertex colors")]
    MissingColors,
    #[error("mesh is empty")]
    Empty,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed PLY: {0}")]
    Ply(String),
    #[error(transparent)]
    Invalid(MeshError),
}

fn finish(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, colors: Vec<Rgb>) -> Result<Mesh, MeshIoError> {
    if vertices.is_empty() || triangles.is_empty() {
        return Err(MeshIoError::Empty);
    }
    Mesh::new(vertices, triangles, colors).map_err(|e| match e {
        MeshError::NoTriangles => MeshIoError::Empty,
        e => MeshIoError::Invalid(e),
    })
}

/// Loads an `.obj` or `.ply` file by extension.
pub fn load_mesh(path: &Path) -> Result<Mesh, MeshIoError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext != "obj" && ext != "ply" {
        return Err(MeshIoError::UnsupportedFormat(ext));
    }
    let bytes =
        fs::read(path).map_err(|source| MeshIoError::Unreadable { path: path.display().to_string(), source })?;
    if ext == "obj" {
        parse_obj(&String::from_utf8_lossy(&bytes))
    } else {
        parse_ply(&bytes)
    }
}

/// OBJ with the `v x y z r g b` color extension. Faces are fan-triangulated.
pub fn parse_obj(text: &str) -> Result<Mesh, MeshIoError> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();
    let mut uncolored = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            Some("v") => {
                let vals: Vec<f64> = it
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| MeshIoError::Parse { line, msg: e.to_string() })?;
                match vals.len() {
                    3 | 4 => uncolored = true,
                    6 | 7 => colors.push([vals[3], vals[4], vals[5]]),
                    k => return Err(MeshIoError::Parse { line, msg: format!("vertex with {k} fields") }),
                }
                vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in it {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| MeshIoError::Parse { line, msg: format!("bad index {t:?}") })?;
                    let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if resolved < 0 {
                        return Err(MeshIoError::Parse { line, msg: format!("bad index {t:?}") });
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(MeshIoError::Parse { line, msg: "face with fewer than 3 vertices".into() });
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() {
        return Err(MeshIoError::Empty);
    }
    if uncolored {
        return Err(MeshIoError::MissingColors);
    }
    finish(vertices, triangles, colors)
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
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
    Little,
    Big,
}

/// Reads values either from ASCII tokens or a binary cursor.
struct Reader<'a> {
    enc: Encoding,
    bytes: &'a [u8],
    pos: usize,
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl Reader<'_> {
    fn read(&mut self, t: Scalar) -> Result<f64, MeshIoError> {
        if self.enc == Encoding::Ascii {
            let tok = self.tokens.next().ok_or_else(|| MeshIoError::Ply("unexpected end of data".into()))?;
            return tok.parse::<f64>().map_err(|_| MeshIoError::Ply(format!("bad number {tok:?}")));
        }
        let n = t.size();
        let b = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| MeshIoError::Ply("unexpected end of data".into()))?;
        self.pos += n;
        let mut a = [0u8; 8];
        a[..n].copy_from_slice(b);
        if self.enc == Encoding::Big {
            a[..n].reverse();
        }
        Ok(match t {
            Scalar::I8 => a[0] as i8 as f64,
            Scalar::U8 => a[0] as f64,
            Scalar::I16 => i16::from_le_bytes([a[0], a[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([a[0], a[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([a[0], a[1], a[2], a[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([a[0], a[1], a[2], a[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([a[0], a[1], a[2], a[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(a),
        })
    }
}

/// ASCII or binary PLY with `x y z` and `red green blue` vertex properties
/// (integer colors are divided by 255) and a `vertex_indices` face list.
pub fn parse_ply(bytes: &[u8]) -> Result<Mesh, MeshIoError> {
    let end = find_header_end(bytes).ok_or_else(|| MeshIoError::Ply("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end.0]).map_err(|_| MeshIoError::Ply("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(MeshIoError::Ply("missing ply magic".into()));
    }
    let mut enc = None;
    let mut elements: Vec<Element> = Vec::new();
    for l in lines {
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["format", f, _] => {
                enc = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    _ => return Err(MeshIoError::Ply(format!("unknown format {f}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| MeshIoError::Ply(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (c, i) = (scalar(ct)?, scalar(it)?);
                last(&mut elements)?.props.push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let s = scalar(ty)?;
                last(&mut elements)?.props.push(Property::Scalar(name.to_string(), s));
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(MeshIoError::Ply(format!("unexpected header line {l:?}"))),
        }
    }
    let enc = enc.ok_or_else(|| MeshIoError::Ply("missing format line".into()))?;
    let body = &bytes[end.1..];
    let text = if enc == Encoding::Ascii { std::str::from_utf8(body).unwrap_or("") } else { "" };
    let mut rd = Reader { enc, bytes: body, pos: 0, tokens: text.split_ascii_whitespace() };

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();
    let mut saw_colors = false;
    for el in &elements {
        let pos_of = |n: &str| el.props.iter().position(|p| matches!(p, Property::Scalar(s, _) if s == n));
        let xyz = [pos_of("x"), pos_of("y"), pos_of("z")];
        let rgb = [pos_of("red"), pos_of("green"), pos_of("blue")];
        if el.name == "vertex" {
            if xyz.iter().any(Option::is_none) {
                return Err(MeshIoError::Ply("vertex element lacks x/y/z".into()));
            }
            saw_colors = rgb.iter().all(Option::is_some);
        }
        for _ in 0..el.count {
            let mut vals = vec![0.0; el.props.len()];
            let mut list = Vec::new();
            for (k, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar(_, t) => vals[k] = rd.read(*t)?,
                    Property::List(name, ct, it) => {
                        let n = rd.read(*ct)? as usize;
                        let items: Vec<f64> = (0..n).map(|_| rd.read(*it)).collect::<Result<_, _>>()?;
                        if name == "vertex_indices" || name == "vertex_index" {
                            list = items;
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vec3::new(vals[xyz[0].unwrap()], vals[xyz[1].unwrap()], vals[xyz[2].unwrap()]));
                if saw_colors {
                    let c = rgb.map(|i| {
                        let i = i.unwrap();
                        let integer = matches!(&el.props[i], Property::Scalar(_, t) if t.is_integer());
                        if integer { vals[i] / 255.0 } else { vals[i] }
                    });
                    colors.push(c);
                }
            } else if el.name == "face" {
                if list.len() < 3 {
                    return Err(MeshIoError::Ply("face with fewer than 3 vertices".into()));
                }
                for k in 1..list.len() - 1 {
                    triangles.push([list[0] as u32, list[k] as u32, list[k + 1] as u32]);
                }
            }
        }
    }
    if vertices.is_empty() {
        return Err(MeshIoError::Empty);
    }
    if !saw_colors {
        return Err(MeshIoError::MissingColors);
    }
    finish(vertices, triangles, colors)
}

fn scalar(s: &str) -> Result<Scalar, MeshIoError> {
    Scalar::parse(s).ok_or_else(|| MeshIoError::Ply(format!("unknown property type {s}")))
}

fn last(elements: &mut [Element]) -> Result<&mut Element, MeshIoError> {
    elements.last_mut().ok_or_else(|| MeshIoError::Ply("property before element".into()))
}

/// Returns (header length, body start).
fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let key = b"end_header";
    let i = bytes.windows(key.len()).position(|w| w == key)?;
    let mut j = i + key.len();
    if bytes.get(j) == Some(&b'\r') {
        j += 1;
    }
    if bytes.get(j) == Some(&b'\n') {
        j += 1;
    }
    Some((i + key.len(), j))
}

/// ASCII PLY with uchar vertex colors.
pub fn write_ply_mesh(mesh: &Mesh, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "ply\nformat ascii 1.0")?;
    writeln!(out, "element vertex {}", mesh.vertices().len())?;
    writeln!(out, "property float x\nproperty float y\nproperty float z")?;
    writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    writeln!(out, "element face {}", mesh.triangles().len())?;
    writeln!(out, "property list uchar int vertex_indices\nend_header")?;
    for (v, c) in mesh.vertices().iter().zip(mesh.colors()) {
        let c = c.map(voxify_core::pixelart::to_u8);
        writeln!(out, "{} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2])?;
    }
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}
