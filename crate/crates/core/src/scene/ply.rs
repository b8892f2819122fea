//! PLY point-cloud reader/writer (ASCII and binary little-endian).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(name: &str) -> Option<Scalar> {
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Ply {
        offset: offset as u64,
        message: message.into(),
    }
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let line_start = pos;
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(err(pos, "header not terminated by end_header"));
        };
        let raw = &bytes[pos..pos + nl];
        pos += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| err(line_start, "header line is not UTF-8"))?
            .trim_end_matches('\r');
        let mut words = line.split_whitespace();
        let Some(key) = words.next() else {
            continue;
        };
        if first {
            if key != "ply" {
                return Err(err(line_start, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        match key {
            "format" => {
                format = Some(match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(err(line_start, format!("unsupported format '{other}'")))
                    }
                    None => return Err(err(line_start, "format line without a format")),
                })
            }
            "comment" | "obj_info" => {}
            "element" => {
                let name = words
                    .next()
                    .ok_or_else(|| err(line_start, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| err(line_start, "element without a valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(line_start, "property before any element"))?;
                let ty = words
                    .next()
                    .ok_or_else(|| err(line_start, "property without type"))?;
                let prop = if ty == "list" {
                    let ct = words.next().and_then(Scalar::parse);
                    let it = words.next().and_then(Scalar::parse);
                    match (ct, it) {
                        (Some(count), Some(item)) if !count.is_float() => {
                            Property::List { count, item }
                        }
                        _ => return Err(err(line_start, "unsupported list property type")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| {
                        err(line_start, format!("unsupported property type '{ty}'"))
                    })?;
                    let name = words
                        .next()
                        .ok_or_else(|| err(line_start, "property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                el.props.push(prop);
            }
            "end_header" => break,
            other => return Err(err(line_start, format!("unknown header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| err(0, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<([usize; 3], [Scalar; 3])>,
}

fn vertex_layout(el: &Element, offset: usize) -> Result<VertexLayout> {
    let find = |key: &str| {
        el.props.iter().position(
            |p| matches!(p, Property::Scalar { name, .. } if name == key),
        )
    };
    let ty = |i: usize| match &el.props[i] {
        Property::Scalar { ty, .. } => *ty,
        Property::List { .. } => unreachable!(),
    };
    let (Some(x), Some(y), Some(z)) = (find("x"), find("y"), find("z")) else {
        return Err(err(offset, "vertex element lacks x, y, z properties"));
    };
    for i in [x, y, z] {
        if !ty(i).is_float() {
            return Err(err(offset, "vertex coordinates must be float or double"));
        }
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let tys = [ty(r), ty(g), ty(b)];
            if tys.iter().any(|t| !(t.is_float() || *t == Scalar::U8)) {
                return Err(err(offset, "color properties must be uchar or float"));
            }
            Some(([r, g, b], tys))
        }
        _ => None,
    };
    Ok(VertexLayout { xyz: [x, y, z], rgb })
}

fn color_value(v: f64, ty: Scalar) -> f32 {
    if ty == Scalar::U8 {
        v as f32 / 255.0
    } else {
        v as f32
    }
}

/// Parses a PLY document from memory.
pub fn read_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(header.body_start, "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vi], header.body_start)?;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut record = Vec::new();
    match header.format {
        PlyFormat::Ascii => {
            let mut tokens = AsciiTokens::new(bytes, header.body_start);
            for (ei, el) in header.elements.iter().enumerate() {
                for row in 0..el.count {
                    record.clear();
                    for prop in &el.props {
                        match prop {
                            Property::Scalar { .. } => {
                                record.push(tokens.number(&el.name, el.count, row)?)
                            }
                            Property::List { .. } => {
                                let n = tokens.number(&el.name, el.count, row)?;
                                for _ in 0..n as usize {
                                    tokens.number(&el.name, el.count, row)?;
                                }
                                record.push(n);
                            }
                        }
                    }
                    if ei == vi {
                        push_vertex(&layout, &record, &mut positions, &mut colors);
                    }
                }
                if ei == vi {
                    break;
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut pos = header.body_start;
            for (ei, el) in header.elements.iter().enumerate() {
                for row in 0..el.count {
                    record.clear();
                    for prop in &el.props {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                let b = take(bytes, &mut pos, ty.size(), &el.name, el.count, row)?;
                                record.push(ty.read_le(b));
                            }
                            Property::List { count, item } => {
                                let b =
                                    take(bytes, &mut pos, count.size(), &el.name, el.count, row)?;
                                let n = count.read_le(b);
                                take(
                                    bytes,
                                    &mut pos,
                                    n as usize * item.size(),
                                    &el.name,
                                    el.count,
                                    row,
                                )?;
                                record.push(n);
                            }
                        }
                    }
                    if ei == vi {
                        push_vertex(&layout, &record, &mut positions, &mut colors);
                    }
                }
                if ei == vi {
                    break;
                }
            }
        }
    }
    let colors = layout.rgb.map(|_| colors);
    PointCloud::new(positions, colors).map_err(|e| err(header.body_start, e.to_string()))
}

fn push_vertex(
    layout: &VertexLayout,
    record: &[f64],
    positions: &mut Vec<[f32; 3]>,
    colors: &mut Vec<[f32; 3]>,
) {
    let [x, y, z] = layout.xyz;
    positions.push([record[x] as f32, record[y] as f32, record[z] as f32]);
    if let Some((idx, tys)) = &layout.rgb {
        colors.push([
            color_value(record[idx[0]], tys[0]),
            color_value(record[idx[1]], tys[1]),
            color_value(record[idx[2]], tys[2]),
        ]);
    }
}

fn take<'a>(
    bytes: &'a [u8],
    pos: &mut usize,
    n: usize,
    element: &str,
    count: usize,
    row: usize,
) -> Result<&'a [u8]> {
    if *pos + n > bytes.len() {
        return Err(err(
            bytes.len(),
            format!("element count mismatch: header declares {count} '{element}' records, body ends in record {row}"),
        ));
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

struct AsciiTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> AsciiTokens<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        AsciiTokens { bytes, pos }
    }

    fn number(&mut self, element: &str, count: usize, row: usize) -> Result<f64> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(err(
                self.bytes.len(),
                format!("element count mismatch: header declares {count} '{element}' records, body ends in record {row}"),
            ));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| err(start, "malformed number"))
    }
}

pub fn load_ply(path: &Path) -> Result<PointCloud> {
    read_ply(&fs::read(path)?)
}

/// Serializes a cloud with `float x,y,z` and optional `uchar red,green,blue`.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    let colors = cloud.colors();
    if colors.is_some() {
        out.extend_from_slice(
            b"property uchar red\nproperty uchar green\nproperty uchar blue\n",
        );
    }
    out.extend_from_slice(b"end_header\n");
    let to_u8 = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    for (i, p) in cloud.positions().iter().enumerate() {
        match format {
            PlyFormat::Ascii => {
                // `{:?}` prints the shortest representation that round-trips.
                let _ = write!(out, "{:?} {:?} {:?}", p[0], p[1], p[2]);
                if let Some(c) = colors {
                    let _ = write!(out, " {} {} {}", to_u8(c[i][0]), to_u8(c[i][1]), to_u8(c[i][2]));
                }
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = colors {
                    out.extend(c[i].iter().map(|&v| to_u8(v)));
                }
            }
        }
    }
    out
}

pub fn save_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    fs::write(path, write_ply(cloud, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THREE: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n";

    #[test]
    fn ascii_three_vertices() {
        let c = read_ply(THREE.as_bytes()).unwrap();
        assert_eq!(c.positions(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(c.colors().is_none());
    }

    #[test]
    fn uchar_colors_normalized() {
        let src = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n1 2 3 255 0 0\n";
        let c = read_ply(src.as_bytes()).unwrap();
        assert_eq!(c.colors().unwrap()[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn truncated_body_is_count_error() {
        let mut src = String::from("ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\nproperty float y\nproperty float z\nend_header\n");
        for i in 0..9 {
            src.push_str(&format!("{i} 0 0\n"));
        }
        let e = read_ply(src.as_bytes()).unwrap_err();
        match e {
            Error::Ply { offset, message } => {
                assert_eq!(offset as usize, src.len());
                assert!(message.contains("count mismatch"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        // Same for binary.
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]; 10], None).unwrap();
        let mut bin = write_ply(&cloud, PlyFormat::BinaryLittleEndian);
        bin.truncate(bin.len() - 12);
        assert!(matches!(read_ply(&bin), Err(Error::Ply { .. })));
    }

    #[test]
    fn header_errors_carry_offsets() {
        let e = read_ply(b"plx\n").unwrap_err();
        assert!(matches!(e, Error::Ply { offset: 0, .. }));
        let src = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float128 x\nend_header\n";
        match read_ply(src.as_bytes()).unwrap_err() {
            Error::Ply { offset, message } => {
                assert_eq!(offset as usize, src.find("property").unwrap());
                assert!(message.contains("unsupported property type"));
            }
            other => panic!("unexpected {other}"),
        }
        let be = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(read_ply(be.as_bytes()).is_err());
    }

    #[test]
    fn skips_face_elements_and_double_coordinates() {
        let src = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty float nx\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0.5 1 2 9\n3 4 5 9\n3 0 1 1\n";
        let c = read_ply(src.as_bytes()).unwrap();
        assert_eq!(c.positions(), &[[0.5, 1.0, 2.0], [3.0, 4.0, 5.0]]);
    }

    fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
        (1usize..40, any::<bool>()).prop_flat_map(|(n, with_colors)| {
            let pos = prop::collection::vec(prop::array::uniform3(-1e4f32..1e4f32), n);
            let col = prop::collection::vec(prop::array::uniform3(0u8..=255u8), n);
            (pos, col).prop_map(move |(p, c)| {
                let colors = with_colors.then(|| {
                    c.iter()
                        .map(|rgb| rgb.map(|v| v as f32 / 255.0))
                        .collect::<Vec<_>>()
                });
                PointCloud::new(p, colors).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn save_then_load_is_identity(cloud in cloud_strategy(), binary in any::<bool>()) {
            let fmt = if binary { PlyFormat::BinaryLittleEndian } else { PlyFormat::Ascii };
            let back = read_ply(&write_ply(&cloud, fmt)).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
