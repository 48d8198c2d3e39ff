//! PLY mesh reader and writer (ASCII and binary little-endian).
//!
//! Covers the subset used by BOP object models: float/double vertex
//! positions, optional uchar RGB, and triangle faces. Unknown properties
//! are skipped. Big-endian payloads are rejected with a distinct error.

use super::{DataError, TexturedMesh};
use nalgebra::Vector3;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
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
    fn parse(s: &str) -> Result<Self, DataError> {
        Ok(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            other => {
                return Err(DataError::PlyHeader(format!(
                    "unsupported property type '{other}'"
                )))
            }
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count_ty: ScalarType, item_ty: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Header, DataError> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(DataError::PlyHeader("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(DataError::PlyHeader("header ended before end_header".into()));
        }
        let trimmed = line.trim_end();
        let mut tokens = trimmed.split_whitespace();
        match tokens.next() {
            Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let kind = tokens.next().unwrap_or("");
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => return Err(DataError::PlyBigEndian),
                    other => {
                        return Err(DataError::PlyHeader(format!("unknown format '{other}'")))
                    }
                });
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| DataError::PlyHeader("element without name".into()))?
                    .to_string();
                let count: usize = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| DataError::PlyHeader("element without count".into()))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| DataError::PlyHeader("property before element".into()))?;
                let first = tokens
                    .next()
                    .ok_or_else(|| DataError::PlyHeader("property without type".into()))?;
                if first == "list" {
                    let count_ty = ScalarType::parse(tokens.next().unwrap_or(""))?;
                    let item_ty = ScalarType::parse(tokens.next().unwrap_or(""))?;
                    tokens
                        .next()
                        .ok_or_else(|| DataError::PlyHeader("list property without name".into()))?;
                    element.properties.push(Property::List { count_ty, item_ty });
                } else {
                    let ty = ScalarType::parse(first)?;
                    let name = tokens
                        .next()
                        .ok_or_else(|| DataError::PlyHeader("property without name".into()))?
                        .to_string();
                    element.properties.push(Property::Scalar { name, ty });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(DataError::PlyHeader(format!("unknown keyword '{other}'")))
            }
            None => {}
        }
    }
    let format = format.ok_or_else(|| DataError::PlyHeader("missing format line".into()))?;
    Ok(Header { format, elements })
}

fn read_exact_or_truncated<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<(), DataError> {
    reader
        .read_exact(buf)
        .map_err(|_| DataError::PlyTruncated)
}

/// Reads a textured triangle mesh from a PLY file.
pub fn read_ply_model(path: &Path) -> Result<TexturedMesh, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::FileOpen {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut reader = BufReader::new(file);
    let header = parse_header(&mut reader)?;

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut colors: Vec<Vector3<f64>> = Vec::new();
    let mut has_color = false;
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        if is_vertex {
            has_color = element.properties.iter().any(|p| matches!(p, Property::Scalar { name, .. } if name == "red"));
            vertices.reserve(element.count);
        }

        for _ in 0..element.count {
            let mut values: Vec<(String, f64)> = Vec::new();
            let mut list_values: Vec<f64> = Vec::new();
            match header.format {
                PlyFormat::Ascii => {
                    let mut line = String::new();
                    loop {
                        line.clear();
                        if reader.read_line(&mut line)? == 0 {
                            return Err(DataError::PlyTruncated);
                        }
                        if !line.trim().is_empty() {
                            break;
                        }
                    }
                    let mut tokens = line.split_whitespace();
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar { name, .. } => {
                                let tok = tokens.next().ok_or(DataError::PlyTruncated)?;
                                let v: f64 =
                                    tok.parse().map_err(|_| {
                                        DataError::PlyHeader(format!("bad scalar '{tok}'"))
                                    })?;
                                values.push((name.clone(), v));
                            }
                            Property::List { .. } => {
                                let tok = tokens.next().ok_or(DataError::PlyTruncated)?;
                                let count: usize = tok.parse().map_err(|_| {
                                    DataError::PlyHeader(format!("bad list count '{tok}'"))
                                })?;
                                for _ in 0..count {
                                    let tok = tokens.next().ok_or(DataError::PlyTruncated)?;
                                    let v: f64 = tok.parse().map_err(|_| {
                                        DataError::PlyHeader(format!("bad list item '{tok}'"))
                                    })?;
                                    list_values.push(v);
                                }
                            }
                        }
                    }
                }
                PlyFormat::BinaryLittleEndian => {
                    let mut scratch = [0u8; 8];
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar { name, ty } => {
                                let buf = &mut scratch[..ty.size()];
                                read_exact_or_truncated(&mut reader, buf)?;
                                values.push((name.clone(), ty.read_le(buf)));
                            }
                            Property::List { count_ty, item_ty, .. } => {
                                let buf = &mut scratch[..count_ty.size()];
                                read_exact_or_truncated(&mut reader, buf)?;
                                let count = count_ty.read_le(buf) as usize;
                                for _ in 0..count {
                                    let buf = &mut scratch[..item_ty.size()];
                                    read_exact_or_truncated(&mut reader, buf)?;
                                    list_values.push(item_ty.read_le(buf));
                                }
                            }
                        }
                    }
                }
            }

            if is_vertex {
                let find = |n: &str| values.iter().find(|(name, _)| name == n).map(|&(_, v)| v);
                let x = find("x").ok_or_else(|| DataError::PlyHeader("vertex missing x".into()))?;
                let y = find("y").ok_or_else(|| DataError::PlyHeader("vertex missing y".into()))?;
                let z = find("z").ok_or_else(|| DataError::PlyHeader("vertex missing z".into()))?;
                vertices.push(Vector3::new(x, y, z));
                if has_color {
                    let r = find("red").unwrap_or(0.0);
                    let g = find("green").unwrap_or(0.0);
                    let b = find("blue").unwrap_or(0.0);
                    colors.push(Vector3::new(r / 255.0, g / 255.0, b / 255.0));
                }
            } else if is_face {
                if list_values.len() < 3 {
                    return Err(DataError::PlyHeader(format!(
                        "face with {} indices",
                        list_values.len()
                    )));
                }
                // fan-triangulate polygons
                let idx: Vec<u32> = list_values.iter().map(|&v| v as u32).collect();
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
        }
    }

    TexturedMesh::new(vertices, triangles, if has_color { Some(colors) } else { None })
}

/// Writes a mesh as PLY; positions are stored as float32 (BOP convention).
pub fn write_ply_model(path: &Path, mesh: &TexturedMesh, binary: bool) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::FileOpen {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = std::io::BufWriter::new(file);
    let has_color = mesh.colors.is_some();
    writeln!(w, "ply")?;
    writeln!(
        w,
        "format {} 1.0",
        if binary { "binary_little_endian" } else { "ascii" }
    )?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if has_color {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar uint vertex_indices")?;
    writeln!(w, "end_header")?;

    let to_byte = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    if binary {
        for (i, v) in mesh.vertices.iter().enumerate() {
            w.write_all(&(v.x as f32).to_le_bytes())?;
            w.write_all(&(v.y as f32).to_le_bytes())?;
            w.write_all(&(v.z as f32).to_le_bytes())?;
            if let Some(colors) = &mesh.colors {
                let c = colors[i];
                w.write_all(&[to_byte(c.x), to_byte(c.y), to_byte(c.z)])?;
            }
        }
        for t in &mesh.triangles {
            w.write_all(&[3u8])?;
            for &idx in t {
                w.write_all(&idx.to_le_bytes())?;
            }
        }
    } else {
        for (i, v) in mesh.vertices.iter().enumerate() {
            write!(w, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
            if let Some(colors) = &mesh.colors {
                let c = colors[i];
                write!(w, " {} {} {}", to_byte(c.x), to_byte(c.y), to_byte(c.z))?;
            }
            writeln!(w)?;
        }
        for t in &mesh.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
    }
    Ok(())
}
