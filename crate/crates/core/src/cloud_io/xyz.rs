use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::{check_intensity, Point, PointCloud, TreeSegment};
use crate::error::{Error, Result};

use super::SegmentLabels;

/// Parses `x y z [i1 [i2 i3]]` lines. `# key: value` comments carry labels.
pub(super) fn parse(path: &Path, bytes: &[u8]) -> Result<(PointCloud, SegmentLabels)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::malformed(path, format!("byte {}", e.valid_up_to()), "invalid UTF-8"))?;
    let mut labels = SegmentLabels::default();
    let mut points = Vec::new();
    let mut channels: Option<usize> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line_loc = || format!("line {}", lineno + 1);
        let (data, comment) = match raw.find('#') {
            Some(pos) => (&raw[..pos], Some(&raw[pos + 1..])),
            None => (raw, None),
        };
        if let Some((key, value)) = comment.and_then(|c| c.split_once(':')) {
            labels
                .set(key.trim(), value.trim())
                .map_err(|e| Error::malformed(path, line_loc(), e.to_string()))?;
        }
        let fields: Vec<&str> = data.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let n_chan = match fields.len() {
            3 => 0,
            4 => 1,
            6 => 3,
            n => {
                return Err(Error::malformed(
                    path,
                    line_loc(),
                    format!("expected 3, 4 or 6 columns, found {n}"),
                ))
            }
        };
        match channels {
            None => channels = Some(n_chan),
            Some(c) if c != n_chan => {
                return Err(Error::malformed(
                    path,
                    line_loc(),
                    format!("mixed channel counts: {c} then {n_chan}"),
                ))
            }
            _ => {}
        }
        let mut values = [0.0f64; 6];
        for (slot, field) in values.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::malformed(path, line_loc(), format!("bad number `{field}`")))?;
        }
        for &v in &values[3..3 + n_chan] {
            check_intensity(v).map_err(|e| Error::malformed(path, line_loc(), e.to_string()))?;
        }
        points.push(Point::new(values[0], values[1], values[2]).with_intensity(&values[3..3 + n_chan]));
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok((PointCloud::new(points, channels.unwrap_or(0)), labels))
}

pub(super) fn encode(segment: &TreeSegment) -> Vec<u8> {
    let mut out = String::new();
    let _ = writeln!(out, "# id: {}", segment.id);
    let _ = writeln!(out, "# scan_id: {}", segment.scan_id);
    let _ = writeln!(out, "# species: {}", segment.species);
    let cloud = &segment.cloud;
    for p in &cloud.points {
        let _ = write!(out, "{} {} {}", p.position.x, p.position.y, p.position.z);
        for v in &p.intensity[..cloud.channels] {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out.into_bytes()
}
