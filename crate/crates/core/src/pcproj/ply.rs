//! Minimal PLY reader: ASCII and binary little-endian, vertex x/y/z plus
//! optional red/green/blue.

use std::path::Path;

use crate::error::{Error, Result};
use crate::pcproj::{Point, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
    has_list: bool,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body_start: usize,
    /// 1-based line number of the first body line (ASCII).
    body_line: usize,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::PlyParse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| perr(line_no + 1, "header ended without end_header"))?;
        line_no += 1;
        let raw = &bytes[pos..pos + end];
        pos += end + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| perr(line_no, "header is not valid text"))?
            .trim_end_matches('\r')
            .trim();
        let mut tok = line.split_whitespace();
        let Some(kw) = tok.next() else { continue };
        match (line_no, kw) {
            (1, "ply") => {}
            (1, _) => return Err(perr(1, "missing 'ply' magic")),
            (_, "format") => {
                format = Some(match tok.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some(other) => {
                        return Err(Error::UnsupportedFormat(format!("ply format '{other}'")))
                    }
                    None => return Err(perr(line_no, "format line without a value")),
                });
            }
            (_, "comment") | (_, "obj_info") => {}
            (_, "element") => {
                let name = tok.next().ok_or_else(|| perr(line_no, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| perr(line_no, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    has_list: false,
                });
            }
            (_, "property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(line_no, "property before any element"))?;
                let ty = tok.next().ok_or_else(|| perr(line_no, "property without type"))?;
                if ty == "list" {
                    el.has_list = true;
                    continue;
                }
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::UnsupportedFormat(format!("property type '{ty}'")))?;
                let name = tok.next().ok_or_else(|| perr(line_no, "property without name"))?;
                el.props.push((name.to_string(), scalar));
            }
            (_, "end_header") => break,
            (_, other) => return Err(perr(line_no, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| perr(line_no, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
        body_line: line_no + 1,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    if el.has_list {
        return Err(Error::UnsupportedFormat("list property on vertex element".into()));
    }
    let find = |n: &str| el.props.iter().position(|(p, _)| p == n);
    let mut xyz = [0; 3];
    for (k, n) in ["x", "y", "z"].iter().enumerate() {
        let i = find(n).ok_or_else(|| perr(0, format!("vertex has no '{n}' property")))?;
        if !matches!(el.props[i].1, Scalar::F32 | Scalar::F64) {
            return Err(Error::UnsupportedFormat(format!(
                "coordinate '{n}' must be float or double"
            )));
        }
        xyz[k] = i;
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => {
            for i in [r, g, b] {
                if el.props[i].1 != Scalar::U8 {
                    return Err(Error::UnsupportedFormat("color channels must be uchar".into()));
                }
            }
            Some([r, g, b])
        }
        (None, None, None) => None,
        _ => return Err(perr(0, "vertex has a partial red/green/blue set")),
    };
    Ok(VertexLayout { xyz, rgb })
}

fn make_point(vals: &[f64], layout: &VertexLayout) -> Point {
    let color = match layout.rgb {
        Some(idx) => idx.map(|i| vals[i] as u8),
        None => [255, 255, 255],
    };
    Point {
        pos: layout.xyz.map(|i| vals[i]),
        color,
    }
}

/// Parses a PLY document held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| perr(header.body_line - 1, "no vertex element"))?;
    let vertex = &header.elements[vi];
    let layout = vertex_layout(vertex)?;
    if vertex.count == 0 {
        return Err(Error::EmptyCloud);
    }
    let body = &bytes[header.body_start..];
    let mut points = Vec::with_capacity(vertex.count);
    match header.format {
        Format::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| perr(header.body_line, "ascii body is not valid text"))?;
            let mut lines = text
                .lines()
                .enumerate()
                .map(|(i, l)| (header.body_line + i, l.trim()))
                .filter(|(_, l)| !l.is_empty());
            for el in &header.elements[..vi] {
                for _ in 0..el.count {
                    lines.next().ok_or_else(|| {
                        perr(header.body_line, format!("body ends inside element '{}'", el.name))
                    })?;
                }
            }
            let mut last_line = header.body_line;
            for k in 0..vertex.count {
                let (ln, l) = lines.next().ok_or_else(|| {
                    perr(
                        last_line + 1,
                        format!(
                            "header declares {} vertices but body has {}",
                            vertex.count, k
                        ),
                    )
                })?;
                last_line = ln;
                let vals = l
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| perr(ln, format!("non-numeric vertex value in '{l}'")))?;
                if vals.len() != vertex.props.len() {
                    return Err(perr(
                        ln,
                        format!("expected {} values, found {}", vertex.props.len(), vals.len()),
                    ));
                }
                points.push(make_point(&vals, &layout));
            }
        }
        Format::BinaryLe => {
            let mut off = 0;
            for el in &header.elements[..vi] {
                if el.has_list {
                    return Err(Error::UnsupportedFormat(format!(
                        "list property on element '{}' before vertices",
                        el.name
                    )));
                }
                off += el.count * el.props.iter().map(|(_, s)| s.size()).sum::<usize>();
            }
            let stride: usize = vertex.props.iter().map(|(_, s)| s.size()).sum();
            let need = off + stride * vertex.count;
            if body.len() < need {
                return Err(perr(
                    header.body_line,
                    format!(
                        "header declares {} vertices but body has {}",
                        vertex.count,
                        body.len().saturating_sub(off) / stride.max(1)
                    ),
                ));
            }
            let mut vals = vec![0.0; vertex.props.len()];
            for k in 0..vertex.count {
                let mut p = off + k * stride;
                for (v, (_, s)) in vals.iter_mut().zip(&vertex.props) {
                    *v = s.read_le(&body[p..p + s.size()]);
                    p += s.size();
                }
                points.push(make_point(&vals, &layout));
            }
        }
    }
    PointCloud::new(points)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Serializes a cloud; used by examples and tests.
pub fn write_ply(pc: &PointCloud, binary: bool) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = if binary {
        "binary_little_endian"
    } else {
        "ascii"
    };
    out.extend_from_slice(
        format!(
            "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
            pc.len()
        )
        .as_bytes(),
    );
    for p in pc.points() {
        if binary {
            for c in p.pos {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&p.color);
        } else {
            out.extend_from_slice(
                format!(
                    "{:?} {:?} {:?} {} {} {}\n",
                    p.pos[0], p.pos[1], p.pos[2], p.color[0], p.color[1], p.color[2]
                )
                .as_bytes(),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_RED: &str = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n";

    #[test]
    fn single_red_vertex() {
        let pc = parse_ply(ONE_RED.as_bytes()).unwrap();
        assert_eq!(pc.len(), 1);
        assert_eq!(pc.points()[0].pos, [0.0, 0.0, 0.0]);
        assert_eq!(pc.points()[0].color, [255, 0, 0]);
    }

    #[test]
    fn ascii_and_binary_agree() {
        let pc = PointCloud::new(vec![
            Point {
                pos: [0.25, -1.5, 3.0],
                color: [1, 2, 3],
            },
            Point {
                pos: [7.0, 0.125, -0.5],
                color: [200, 100, 50],
            },
        ])
        .unwrap();
        let a = parse_ply(&write_ply(&pc, false)).unwrap();
        let b = parse_ply(&write_ply(&pc, true)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, pc);
    }

    #[test]
    fn missing_color_defaults_to_white() {
        let doc = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n4 5 6\n";
        let pc = parse_ply(doc.as_bytes()).unwrap();
        assert!(pc.points().iter().all(|p| p.color == [255, 255, 255]));
    }

    #[test]
    fn short_body_is_a_parse_error() {
        let mut doc = String::from("ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\nproperty float y\nproperty float z\nend_header\n");
        for i in 0..9 {
            doc.push_str(&format!("{i} 0 0\n"));
        }
        match parse_ply(doc.as_bytes()) {
            Err(Error::PlyParse { line, msg }) => {
                assert_eq!(line, 17);
                assert!(msg.contains("10 vertices"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_names_line() {
        let doc = "ply\nformat ascii 1.0\nelement vertex two\nend_header\n";
        match parse_ply(doc.as_bytes()) {
            Err(Error::PlyParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_vertices_and_bad_types() {
        let doc = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(matches!(parse_ply(doc.as_bytes()), Err(Error::EmptyCloud)));
        let doc = "ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(matches!(parse_ply(doc.as_bytes()), Err(Error::UnsupportedFormat(_))));
        let doc = "ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n";
        assert!(matches!(parse_ply(doc.as_bytes()), Err(Error::UnsupportedFormat(_))));
        let doc = "ply\nformat binary_big_endian 1.0\nelement vertex 1\nend_header\n";
        assert!(matches!(parse_ply(doc.as_bytes()), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn faces_after_vertices_are_ignored() {
        let doc = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(parse_ply(doc.as_bytes()).unwrap().len(), 3);
    }
}
