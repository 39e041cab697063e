use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::cloud::{check_intensity, Point, PointCloud, TreeSegment};
use crate::error::{Error, Result};

use super::SegmentLabels;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Encoding {
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    X,
    Y,
    Z,
    Intensity(usize),
    Normal(usize),
    Ignored,
}

struct Header {
    encoding: Encoding,
    vertex_count: usize,
    properties: Vec<(Role, Scalar)>,
    labels: SegmentLabels,
    body_offset: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut encoding = None;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut seen_vertex = false;
    let mut properties = Vec::new();
    let mut labels = SegmentLabels::default();
    let mut lineno = 0;

    loop {
        lineno += 1;
        let loc = format!("line {lineno}");
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::malformed(path, loc.clone(), "unterminated header"))?;
        let line = std::str::from_utf8(&bytes[offset..offset + end])
            .map_err(|_| Error::malformed(path, loc.clone(), "non-UTF-8 header"))?
            .trim_end_matches('\r');
        offset += end + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if lineno == 1 {
            if tokens != ["ply"] {
                return Err(Error::malformed(path, loc, "missing `ply` magic"));
            }
            continue;
        }
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLittleEndian),
            ["format", other, _] => {
                return Err(Error::Unsupported(format!("PLY format `{other}`")));
            }
            ["comment", key, rest @ ..] => {
                labels
                    .set(key, &rest.join(" "))
                    .map_err(|e| Error::malformed(path, loc, e.to_string()))?;
            }
            ["comment"] | ["obj_info", ..] => {}
            ["element", name, count] => {
                if *name == "vertex" && !seen_vertex {
                    vertex_count = Some(count.parse::<usize>().map_err(|_| {
                        Error::malformed(path, loc.clone(), format!("bad vertex count `{count}`"))
                    })?);
                    in_vertex = true;
                    seen_vertex = true;
                } else if !seen_vertex {
                    return Err(Error::Unsupported(format!(
                        "PLY element `{name}` before vertex"
                    )));
                } else {
                    // trailing elements (faces, ...) are ignored
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Unsupported("list property on vertex".into()));
            }
            ["property", ty, name] if in_vertex => {
                let scalar = Scalar::parse(ty).ok_or_else(|| {
                    Error::malformed(path, loc.clone(), format!("unknown type `{ty}`"))
                })?;
                let role = match *name {
                    "x" => Role::X,
                    "y" => Role::Y,
                    "z" => Role::Z,
                    "intensity" | "intensity1" => Role::Intensity(0),
                    "intensity2" => Role::Intensity(1),
                    "intensity3" => Role::Intensity(2),
                    "nx" => Role::Normal(0),
                    "ny" => Role::Normal(1),
                    "nz" => Role::Normal(2),
                    _ => Role::Ignored,
                };
                properties.push((role, scalar));
            }
            ["property", ..] => {}
            _ => return Err(Error::malformed(path, loc, format!("unexpected `{line}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::malformed(path, "header", "missing format"))?;
    let vertex_count =
        vertex_count.ok_or_else(|| Error::malformed(path, "header", "missing vertex element"))?;
    for axis in [Role::X, Role::Y, Role::Z] {
        if !properties.iter().any(|(r, _)| *r == axis) {
            return Err(Error::malformed(path, "header", format!("missing {axis:?} property")));
        }
    }
    Ok(Header {
        encoding,
        vertex_count,
        properties,
        labels,
        body_offset: offset,
    })
}

pub(super) fn parse(path: &Path, bytes: &[u8]) -> Result<(PointCloud, SegmentLabels)> {
    let header = parse_header(path, bytes)?;
    let channels = {
        let mut present = [false; 3];
        for (role, _) in &header.properties {
            if let Role::Intensity(c) = role {
                present[*c] = true;
            }
        }
        match present {
            [false, false, false] => 0,
            [true, false, false] => 1,
            [true, true, true] => 3,
            _ => {
                return Err(Error::malformed(
                    path,
                    "header",
                    "intensity channels must be intensity1 or intensity1..3",
                ))
            }
        }
    };
    let normal_props = header
        .properties
        .iter()
        .filter(|(r, _)| matches!(r, Role::Normal(_)))
        .count();
    if normal_props != 0 && normal_props != 3 {
        return Err(Error::malformed(path, "header", "partial normal properties"));
    }
    if header.vertex_count == 0 {
        return Err(Error::EmptyCloud);
    }

    let mut points = Vec::with_capacity(header.vertex_count);
    let mut values = vec![0.0f64; header.properties.len()];
    let body = &bytes[header.body_offset..];
    match header.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::malformed(path, "body", "non-UTF-8 ascii body"))?;
            let header_lines = bytes[..header.body_offset].iter().filter(|&&b| b == b'\n').count();
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for _ in 0..header.vertex_count {
                let (i, line) = lines.next().ok_or_else(|| {
                    Error::malformed(path, "body", format!("expected {} vertices", header.vertex_count))
                })?;
                let loc = || format!("line {}", header_lines + i + 1);
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < values.len() {
                    return Err(Error::malformed(path, loc(), "too few values"));
                }
                for (slot, f) in values.iter_mut().zip(&fields) {
                    *slot = f
                        .parse::<f64>()
                        .map_err(|_| Error::malformed(path, loc(), format!("bad number `{f}`")))?;
                }
                points.push(make_point(path, &loc(), &header.properties, &values)?);
            }
        }
        Encoding::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|(_, s)| s.size()).sum();
            let needed = stride * header.vertex_count;
            if body.len() < needed {
                return Err(Error::malformed(
                    path,
                    format!("byte {}", header.body_offset + body.len()),
                    format!("truncated body: need {needed} bytes, have {}", body.len()),
                ));
            }
            for (i, record) in body[..needed].chunks_exact(stride).enumerate() {
                let mut at = 0;
                for (slot, (_, scalar)) in values.iter_mut().zip(&header.properties) {
                    *slot = scalar.read_le(&record[at..]);
                    at += scalar.size();
                }
                let loc = format!("byte {}", header.body_offset + i * stride);
                points.push(make_point(path, &loc, &header.properties, &values)?);
            }
        }
    }
    Ok((PointCloud::new(points, channels), header.labels))
}

fn make_point(path: &Path, loc: &str, props: &[(Role, Scalar)], values: &[f64]) -> Result<Point> {
    let mut p = Point::new(0.0, 0.0, 0.0);
    let mut normal = Vector3::zeros();
    let mut has_normal = false;
    for ((role, _), &v) in props.iter().zip(values) {
        if !v.is_finite() {
            return Err(Error::malformed(path, loc, "non-finite value"));
        }
        match role {
            Role::X => p.position.x = v,
            Role::Y => p.position.y = v,
            Role::Z => p.position.z = v,
            Role::Intensity(c) => {
                p.intensity[*c] =
                    check_intensity(v).map_err(|e| Error::malformed(path, loc, e.to_string()))?
            }
            Role::Normal(c) => {
                normal[*c] = v;
                has_normal = true;
            }
            Role::Ignored => {}
        }
    }
    if has_normal {
        p.normal = Some(normal);
    }
    Ok(p)
}

pub(super) fn encode(segment: &TreeSegment, encoding: Encoding) -> Vec<u8> {
    let cloud = &segment.cloud;
    let channels = cloud.channels;
    let with_normals = cloud.has_normals();
    // uint16 whenever every value fits; 65536 and fractional values need a wider type.
    let fits_u16 = cloud.points.iter().all(|p| {
        p.intensity[..channels]
            .iter()
            .all(|&v| v.fract() == 0.0 && v <= u16::MAX as f64)
    });
    let mut header = String::from("ply\n");
    let _ = writeln!(
        header,
        "format {} 1.0",
        match encoding {
            Encoding::Ascii => "ascii",
            Encoding::BinaryLittleEndian => "binary_little_endian",
        }
    );
    let _ = writeln!(header, "comment id {}", segment.id);
    let _ = writeln!(header, "comment scan_id {}", segment.scan_id);
    let _ = writeln!(header, "comment species {}", segment.species);
    let _ = writeln!(header, "element vertex {}", cloud.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(header, "property double {axis}");
    }
    let int_ty = if fits_u16 { "uint16" } else { "double" };
    for c in 1..=channels {
        let _ = writeln!(header, "property {int_ty} intensity{c}");
    }
    if with_normals {
        for n in ["nx", "ny", "nz"] {
            let _ = writeln!(header, "property double {n}");
        }
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    for p in &cloud.points {
        let normal = p.normal.unwrap_or_else(Vector3::zeros);
        match encoding {
            Encoding::Ascii => {
                let mut line = format!("{} {} {}", p.position.x, p.position.y, p.position.z);
                for v in &p.intensity[..channels] {
                    let _ = write!(line, " {v}");
                }
                if with_normals {
                    let _ = write!(line, " {} {} {}", normal.x, normal.y, normal.z);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            Encoding::BinaryLittleEndian => {
                for c in p.position.iter() {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                for &v in &p.intensity[..channels] {
                    if fits_u16 {
                        out.extend_from_slice(&(v as u16).to_le_bytes());
                    } else {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                if with_normals {
                    for c in normal.iter() {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
            }
        }
    }
    out
}
