//! PNG encoding and the on-disk image dataset.
//!
//! Images land in `<out>/<split>/<species>/<scan>__<tree>__a<angle>__<full|slice>.png`,
//! with the angle rounded to whole degrees and zero-padded to three digits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::Species;
use crate::cloud_io::{read_segment_auto, DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::normals::{estimate_normals, orient_outward, NormalParams};
use crate::preprocess::estimate_trunk;

use super::{render_view, Coloring, ImageMeta, ProjectionImage, RenderConfig};

pub fn encode_png(img: &ProjectionImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(img: &ProjectionImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}

/// Decodes an 8-bit RGB (or greyscale / RGBA, converted) PNG into
/// `(width, height, rgb)`.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let rgb = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
        png::ColorType::Indexed => return Err(Error::Png("unexpanded palette".into())),
    };
    Ok((w, h, rgb))
}

/// Reads a dataset PNG; metadata is recovered from the file name.
pub fn read_png(path: &Path, coloring: Coloring) -> Result<ProjectionImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, pixels) = decode_png(&bytes).map_err(|e| match e {
        Error::Png(m) => Error::Png(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_image_name)
        .ok_or_else(|| Error::BadLayout(path.to_path_buf()))?;
    Ok(ProjectionImage {
        width,
        height,
        pixels,
        meta: ImageMeta {
            tree_id: name.tree_id,
            scan_id: name.scan_id,
            angle_deg: name.angle_deg as f64,
            sliced: name.sliced,
            coloring,
            channel_selection: Vec::new(),
        },
        empty_before_smoothing: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageName {
    pub scan_id: String,
    pub tree_id: String,
    pub angle_deg: u32,
    pub sliced: bool,
}

pub fn image_file_name(meta: &ImageMeta) -> String {
    format!(
        "{}__{}__a{:03}__{}.png",
        meta.scan_id,
        meta.tree_id,
        meta.angle_deg.round() as u32,
        if meta.sliced { "slice" } else { "full" }
    )
}

/// Inverse of [`image_file_name`]. Tree ids may contain `__`; scan ids may not.
pub fn parse_image_name(name: &str) -> Option<ImageName> {
    let stem = name.strip_suffix(".png")?;
    let (scan_id, rest) = stem.split_once("__")?;
    let (rest, kind) = rest.rsplit_once("__")?;
    let (tree_id, angle) = rest.rsplit_once("__")?;
    let sliced = match kind {
        "full" => false,
        "slice" => true,
        _ => return None,
    };
    let angle_deg = angle.strip_prefix('a')?.parse().ok()?;
    if scan_id.is_empty() || tree_id.is_empty() {
        return None;
    }
    Some(ImageName {
        scan_id: scan_id.to_string(),
        tree_id: tree_id.to_string(),
        angle_deg,
        sliced,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub segments_rendered: usize,
    pub segments_failed: usize,
    pub images_written: usize,
    pub images_per_species: BTreeMap<Species, usize>,
    pub images_per_split: BTreeMap<String, usize>,
    /// `path: error` for every segment that could not be rendered.
    pub failures: Vec<String>,
}

fn render_entry(
    entry: &ManifestEntry,
    cfg: &RenderConfig,
    normal_params: NormalParams,
    out_root: &Path,
) -> Result<Vec<PathBuf>> {
    let mut segment = read_segment_auto(&entry.path)?;
    segment.id = entry.id.clone();
    segment.scan_id = entry.scan_id.clone();
    segment.species = entry.species;
    let trunk = estimate_trunk(&segment)?;
    if cfg.coloring == Coloring::Nv && !segment.cloud.has_normals() {
        let est = estimate_normals(&segment.cloud, normal_params)?;
        segment.cloud = orient_outward(&est.cloud, trunk)?;
    }
    let dir = out_root
        .join(entry.split.as_str())
        .join(entry.species.as_str());
    let mut written = Vec::with_capacity(2 * cfg.angles_deg.len());
    for &angle in &cfg.angles_deg {
        for sliced in [false, true] {
            let img = render_view(&segment, trunk, angle, sliced, cfg)?;
            let path = dir.join(image_file_name(&img.meta));
            write_png(&img, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Renders every manifest entry and writes its PNGs. Segments that fail are
/// logged, skipped and counted. Runs on the current rayon pool.
pub fn emit_dataset(
    manifest: &DatasetManifest,
    cfg: &RenderConfig,
    normal_params: NormalParams,
    out_root: &Path,
) -> Result<DatasetSummary> {
    cfg.validate()?;
    let results: Vec<Result<Vec<PathBuf>>> = manifest
        .entries
        .par_iter()
        .map(|e| render_entry(e, cfg, normal_params, out_root))
        .collect();

    let mut summary = DatasetSummary::default();
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(paths) => {
                summary.segments_rendered += 1;
                summary.images_written += paths.len();
                *summary.images_per_species.entry(entry.species).or_default() += paths.len();
                *summary
                    .images_per_split
                    .entry(entry.split.to_string())
                    .or_default() += paths.len();
            }
            Err(err) => {
                log::warn!("skipping {}: {err}", entry.path.display());
                summary.segments_failed += 1;
                summary
                    .failures
                    .push(format!("{}: {err}", entry.path.display()));
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_name_round_trip() {
        let meta = ImageMeta {
            tree_id: "t__7".into(),
            scan_id: "mls01".into(),
            angle_deg: 72.0,
            sliced: true,
            coloring: Coloring::Nv,
            channel_selection: vec![],
        };
        let name = image_file_name(&meta);
        assert_eq!(name, "mls01__t__7__a072__slice.png");
        let parsed = parse_image_name(&name).unwrap();
        assert_eq!(parsed.tree_id, "t__7");
        assert_eq!(parsed.scan_id, "mls01");
        assert_eq!(parsed.angle_deg, 72);
        assert!(parsed.sliced);
        assert!(parse_image_name("a__b__a000__side.png").is_none());
        assert!(parse_image_name("nonsense.png").is_none());
    }

    #[test]
    fn png_round_trip() {
        let img = ProjectionImage {
            width: 3,
            height: 2,
            pixels: (0..18).map(|i| (i * 13) as u8).collect(),
            meta: ImageMeta {
                tree_id: "t".into(),
                scan_id: "s".into(),
                angle_deg: 0.0,
                sliced: false,
                coloring: Coloring::Op,
                channel_selection: vec![1],
            },
            empty_before_smoothing: None,
        };
        let bytes = encode_png(&img).unwrap();
        assert_eq!(decode_png(&bytes).unwrap(), (3, 2, img.pixels.clone()));
        assert_eq!(bytes, encode_png(&img).unwrap());
    }
}
