//! Minimal LAS support: versions 1.2–1.4, point data formats 0–3.
//!
//! Only coordinates and the single intensity field are used. A file whose
//! intensities are all zero reads back with no intensity channel, since LAS
//! cannot distinguish "absent" from "zero".

use std::path::Path;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

const HEADER_SIZE_12: u16 = 227;
const FORMAT0_RECORD_LEN: u16 = 20;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn i32_at(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub(super) fn parse(path: &Path, b: &[u8]) -> Result<PointCloud> {
    if b.len() < HEADER_SIZE_12 as usize || &b[..4] != b"LASF" {
        return Err(Error::malformed(path, "byte 0", "not a LAS file"));
    }
    let (major, minor) = (b[24], b[25]);
    if major != 1 || !(2..=4).contains(&minor) {
        return Err(Error::Unsupported(format!("LAS version {major}.{minor}")));
    }
    let header_size = u16_at(b, 94) as usize;
    let offset = u32_at(b, 96) as usize;
    let format_byte = b[104];
    if format_byte & 0xC0 != 0 {
        return Err(Error::Unsupported("compressed (LAZ) point data".into()));
    }
    if format_byte > 3 {
        return Err(Error::Unsupported(format!("LAS point format {format_byte}")));
    }
    let record_len = u16_at(b, 105) as usize;
    let min_len = if matches!(format_byte, 1 | 3) { 28 } else { 20 };
    if record_len < min_len {
        return Err(Error::malformed(path, "byte 105", format!("record length {record_len}")));
    }
    let mut count = u32_at(b, 107) as u64;
    if minor == 4 && header_size >= 375 && b.len() >= 255 {
        let wide = u64_at(b, 247);
        if count == 0 || wide > count {
            count = wide;
        }
    }
    let count = count as usize;
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    let scale = [f64_at(b, 131), f64_at(b, 139), f64_at(b, 147)];
    let origin = [f64_at(b, 155), f64_at(b, 163), f64_at(b, 171)];
    let end = offset + count * record_len;
    if b.len() < end {
        return Err(Error::malformed(
            path,
            format!("byte {}", b.len()),
            format!("truncated: {count} records need {end} bytes"),
        ));
    }
    let mut any_intensity = false;
    let points: Vec<Point> = b[offset..end]
        .chunks_exact(record_len)
        .map(|r| {
            let coord = |axis: usize| i32_at(r, axis * 4) as f64 * scale[axis] + origin[axis];
            let intensity = u16_at(r, 12) as f64;
            any_intensity |= intensity != 0.0;
            Point::new(coord(0), coord(1), coord(2)).with_intensity(&[intensity])
        })
        .collect();
    Ok(PointCloud::new(points, usize::from(any_intensity)))
}

/// Picks the finest power-of-ten scale that keeps `extent` inside i32 range.
fn scale_for(extent: f64) -> f64 {
    let mut scale = 1e-7;
    while extent / scale >= i32::MAX as f64 * 0.99 {
        scale *= 10.0;
    }
    scale
}

pub(super) fn encode(cloud: &PointCloud) -> Result<Vec<u8>> {
    if cloud.channels > 1 {
        return Err(Error::Unsupported(format!(
            "LAS stores one intensity channel, segment has {}",
            cloud.channels
        )));
    }
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let count = u32::try_from(cloud.len())
        .map_err(|_| Error::Unsupported("more than 2^32 points".into()))?;

    let origin = [lo.x.floor(), lo.y.floor(), lo.z.floor()];
    let scale = [0, 1, 2].map(|a| scale_for(hi[a] - origin[a]));

    let mut h = vec![0u8; HEADER_SIZE_12 as usize];
    h[..4].copy_from_slice(b"LASF");
    h[24] = 1;
    h[25] = 2;
    h[26..31].copy_from_slice(b"OTHER");
    h[58..68].copy_from_slice(b"normalview");
    h[94..96].copy_from_slice(&HEADER_SIZE_12.to_le_bytes());
    h[96..100].copy_from_slice(&(HEADER_SIZE_12 as u32).to_le_bytes());
    h[104] = 0;
    h[105..107].copy_from_slice(&FORMAT0_RECORD_LEN.to_le_bytes());
    h[107..111].copy_from_slice(&count.to_le_bytes());
    h[111..115].copy_from_slice(&count.to_le_bytes());
    for a in 0..3 {
        h[131 + 8 * a..139 + 8 * a].copy_from_slice(&scale[a].to_le_bytes());
        h[155 + 8 * a..163 + 8 * a].copy_from_slice(&origin[a].to_le_bytes());
        h[179 + 16 * a..187 + 16 * a].copy_from_slice(&hi[a].to_le_bytes());
        h[187 + 16 * a..195 + 16 * a].copy_from_slice(&lo[a].to_le_bytes());
    }

    let mut out = h;
    out.reserve(cloud.len() * FORMAT0_RECORD_LEN as usize);
    for p in &cloud.points {
        for a in 0..3 {
            let q = ((p.position[a] - origin[a]) / scale[a]).round() as i32;
            out.extend_from_slice(&q.to_le_bytes());
        }
        let intensity = if cloud.channels == 1 { p.intensity[0] } else { 0.0 };
        if intensity > u16::MAX as f64 || intensity.fract() != 0.0 {
            return Err(Error::Unsupported(format!(
                "intensity {intensity} does not fit LAS u16"
            )));
        }
        out.extend_from_slice(&(intensity as u16).to_le_bytes());
        out.push(0b0000_1001); // return 1 of 1
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    Ok(out)
}
