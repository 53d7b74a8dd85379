//! Binary little-endian PLY for point clouds and triangle meshes.
//!
//! Writers emit `x y z` as float32, optional `red green blue` as uchar, and
//! faces as `list uchar int vertex_indices`. The reader accepts any scalar
//! property types plus `ascii` bodies, keeping only those fields.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Rgb, TriangleMesh};

#[derive(Clone, Copy, Debug, PartialEq)]
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

    fn read_le(self, r: &mut impl Read) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        Ok(match self {
            Scalar::I8 => {
                r.read_exact(&mut b[..1])?;
                f64::from(b[0] as i8)
            }
            Scalar::U8 => {
                r.read_exact(&mut b[..1])?;
                f64::from(b[0])
            }
            Scalar::I16 => {
                r.read_exact(&mut b[..2])?;
                f64::from(i16::from_le_bytes([b[0], b[1]]))
            }
            Scalar::U16 => {
                r.read_exact(&mut b[..2])?;
                f64::from(u16::from_le_bytes([b[0], b[1]]))
            }
            Scalar::I32 => {
                r.read_exact(&mut b[..4])?;
                f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            }
            Scalar::U32 => {
                r.read_exact(&mut b[..4])?;
                f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            }
            Scalar::F32 => {
                r.read_exact(&mut b[..4])?;
                f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            }
            Scalar::F64 => {
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

fn parse_header(path: &Path, r: &mut impl BufRead) -> Result<(Encoding, Vec<Element>)> {
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::format(path, "unexpected end of PLY header"));
        }
        Ok(())
    };
    read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::format(path, "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        read_line(&mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", other, _] => return Err(Error::format(path, format!("unsupported PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::format(path, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::format(path, "property before element"))?;
                let ct = Scalar::parse(ct).ok_or_else(|| Error::format(path, "bad list count type"))?;
                let it = Scalar::parse(it).ok_or_else(|| Error::format(path, "bad list item type"))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::format(path, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| Error::format(path, format!("bad property type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            [] => {}
            _ => return Err(Error::format(path, format!("unrecognized header line '{}'", line.trim()))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format(path, "missing format line"))?;
    Ok((encoding, elements))
}

#[derive(Default)]
struct Parsed {
    points: Vec<Vector3<f64>>,
    colors: Option<Vec<Rgb>>,
    faces: Vec<Vec<u32>>,
}

fn read_ply(path: &Path) -> Result<Parsed> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let (encoding, elements) = parse_header(path, &mut r)?;
    let mut out = Parsed::default();
    let mut ascii_tokens: Vec<f64> = Vec::new();
    let mut ascii_pos = 0usize;
    if encoding == Encoding::Ascii {
        let mut body = String::new();
        r.read_to_string(&mut body).map_err(|e| Error::io(path, e))?;
        ascii_tokens = body
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, format!("bad ascii value '{t}'"))))
            .collect::<Result<_>>()?;
    }
    let mut next = |ty: Scalar, r: &mut BufReader<File>| -> Result<f64> {
        match encoding {
            Encoding::BinaryLe => ty.read_le(r).map_err(|e| Error::io(path, e)),
            Encoding::Ascii => {
                let v = ascii_tokens.get(ascii_pos).copied().ok_or_else(|| Error::format(path, "truncated ascii body"))?;
                ascii_pos += 1;
                Ok(v)
            }
        }
    };
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let has_color = is_vertex
            && ["red", "green", "blue"]
                .iter()
                .all(|c| el.props.iter().any(|p| matches!(p, Property::Scalar(n, _) if n == c)));
        if is_vertex {
            out.points.reserve(el.count);
            if has_color {
                out.colors = Some(Vec::with_capacity(el.count));
            }
        }
        for _ in 0..el.count {
            let mut xyz = [0.0f64; 3];
            let mut rgb = [0u8; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = next(*ty, &mut r)?;
                        if is_vertex {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                "red" => rgb[0] = v as u8,
                                "green" => rgb[1] = v as u8,
                                "blue" => rgb[2] = v as u8,
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = next(*ct, &mut r)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(next(*it, &mut r)? as u32);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            out.faces.push(idx);
                        }
                    }
                }
            }
            if is_vertex {
                out.points.push(Vector3::from(xyz));
                if let Some(c) = &mut out.colors {
                    c.push(rgb);
                }
            }
        }
    }
    Ok(out)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let p = read_ply(path)?;
    Ok(PointCloud { points: p.points, colors: p.colors })
}

/// Reads a mesh; polygons with more than three vertices are fan-triangulated.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let p = read_ply(path)?;
    let n = p.points.len();
    let mut triangles = Vec::with_capacity(p.faces.len());
    for f in &p.faces {
        if f.iter().any(|&i| i as usize >= n) {
            return Err(Error::format(path, "face index out of range"));
        }
        for k in 1..f.len().saturating_sub(1) {
            triangles.push([f[0], f[k], f[k + 1]]);
        }
    }
    let vertex_colors = p.colors.unwrap_or_else(|| vec![[128, 128, 128]; n]);
    Ok(TriangleMesh { vertices: p.points, vertex_colors, triangles })
}

fn write_vertices(w: &mut impl Write, points: &[Vector3<f64>], colors: Option<&[Rgb]>) -> std::io::Result<()> {
    for (i, p) in points.iter().enumerate() {
        for c in p.iter() {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        if let Some(colors) = colors {
            w.write_all(&colors[i])?;
        }
    }
    Ok(())
}

fn vertex_header(n: usize, color: bool) -> String {
    let mut h = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\n"
    );
    if color {
        h.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    h
}

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        let mut h = vertex_header(cloud.len(), cloud.colors.is_some());
        h.push_str("end_header\n");
        w.write_all(h.as_bytes())?;
        write_vertices(w, &cloud.points, cloud.colors.as_deref())?;
        w.flush()
    };
    io(&mut w).map_err(|e| Error::io(path, e))
}

/// Serializes a mesh; identical meshes produce identical bytes.
pub fn mesh_to_bytes(mesh: &TriangleMesh) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + mesh.vertices.len() * 15 + mesh.triangles.len() * 13);
    let mut h = vertex_header(mesh.vertices.len(), true);
    h.push_str(&format!("element face {}\nproperty list uchar int vertex_indices\nend_header\n", mesh.triangles.len()));
    buf.extend_from_slice(h.as_bytes());
    write_vertices(&mut buf, &mesh.vertices, Some(&mesh.vertex_colors)).expect("writing to a Vec cannot fail");
    for t in &mesh.triangles {
        buf.push(3);
        for i in t {
            buf.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    buf
}

pub fn write_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    std::fs::write(path, mesh_to_bytes(mesh)).map_err(|e| Error::io(path, e))
}
