//! Orthographic multi-view rendering of tree segments.
//!
//! A view rotates the cloud about the z axis and projects it onto the xz
//! plane, with the viewer on the +y side. Row 0 is the top of the tree. The
//! raster frame is a square around the full cloud's (x, z) extent; slice
//! images reuse the full image's frame so the two stay pixel-aligned.

mod dataset;
mod filter;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, TreeSegment, MAX_INTENSITY};
use crate::error::{Error, Result};
use crate::preprocess::{estimate_trunk, TrunkEstimate};

pub use dataset::{
    decode_png, emit_dataset, encode_png, image_file_name, parse_image_name, read_png,
    write_png, DatasetSummary, ImageName,
};
pub use filter::{gaussian_kernel, gaussian_smooth, resize_bilinear, GAUSSIAN_SIGMA};

/// Fraction by which the square raster side exceeds the larger of the x and
/// z extents (split evenly between the two borders).
pub const RASTER_MARGIN: f64 = 0.02;

pub const TRAINING_ANGLES: [f64; 5] = [0.0, 72.0, 144.0, 216.0, 288.0];

/// `count` angles evenly spaced over the full turn, starting at 0°.
pub fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count).map(|i| 360.0 * i as f64 / count as f64).collect()
}

/// 25 inference views in 14.4° steps.
pub fn inference_angles() -> Vec<f64> {
    uniform_angles(25)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Coloring {
    /// Binary silhouette.
    Wop,
    /// Intensity.
    Op,
    /// Normal components as RGB.
    Nv,
}

impl fmt::Display for Coloring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coloring::Wop => "WOP",
            Coloring::Op => "OP",
            Coloring::Nv => "NV",
        })
    }
}

impl FromStr for Coloring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WOP" => Ok(Coloring::Wop),
            "OP" => Ok(Coloring::Op),
            "NV" => Ok(Coloring::Nv),
            other => Err(Error::InvalidParameter(format!("unknown coloring `{other}`"))),
        }
    }
}

/// Which point colours a pixel hit by several points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthRule {
    /// Greatest y, i.e. nearest the viewer.
    #[default]
    NearestViewer,
    LastWrite,
    /// Largest intensity sum over the selected channels.
    MaxIntensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub image_size: usize,
    pub angles_deg: Vec<f64>,
    /// Slice keeps points with `y <= t_y + slice_offset` in the rotated frame.
    pub slice_offset: f64,
    pub coloring: Coloring,
    /// Intensity channels (1-based) used by OP images.
    pub channel_selection: Vec<u8>,
    pub smoothing: bool,
    pub depth_rule: DepthRule,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            image_size: 1024,
            angles_deg: TRAINING_ANGLES.to_vec(),
            slice_offset: 0.7,
            coloring: Coloring::Wop,
            channel_selection: vec![1],
            smoothing: true,
            depth_rule: DepthRule::NearestViewer,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::InvalidParameter(format!(
                "image_size {} < 8",
                self.image_size
            )));
        }
        if let Some(a) = self.angles_deg.iter().find(|a| !(0.0..360.0).contains(*a)) {
            return Err(Error::InvalidParameter(format!("angle {a} outside [0, 360)")));
        }
        if self.coloring == Coloring::Op {
            if self.channel_selection.is_empty() {
                return Err(Error::InvalidParameter("empty channel selection".into()));
            }
            if self.channel_selection.iter().any(|c| !(1..=3).contains(c)) {
                return Err(Error::InvalidParameter(format!(
                    "channel selection {:?} outside 1..=3",
                    self.channel_selection
                )));
            }
        }
        if self.slice_offset.is_nan() {
            return Err(Error::InvalidParameter("slice_offset is NaN".into()));
        }
        Ok(())
    }

    fn selection(&self) -> Vec<usize> {
        let mut sel: Vec<usize> = self.channel_selection.iter().map(|&c| c as usize).collect();
        sel.sort_unstable();
        sel.dedup();
        sel
    }

    fn check_attributes(&self, cloud: &PointCloud) -> Result<()> {
        match self.coloring {
            Coloring::Wop => Ok(()),
            Coloring::Nv if !cloud.has_normals() => Err(Error::MissingAttribute("normals")),
            Coloring::Nv => Ok(()),
            Coloring::Op => {
                let needed = self.selection().into_iter().max().unwrap_or(1);
                if cloud.channels < needed {
                    Err(Error::MissingAttribute("the selected intensity channels"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub tree_id: String,
    pub scan_id: String,
    pub angle_deg: f64,
    pub sliced: bool,
    pub coloring: Coloring,
    pub channel_selection: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB bytes.
    pub pixels: Vec<u8>,
    pub meta: ImageMeta,
    /// Number of all-zero pixels before smoothing; `None` after resampling.
    pub empty_before_smoothing: Option<usize>,
}

impl ProjectionImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn count_empty(&self) -> usize {
        self.pixels.chunks_exact(3).filter(|p| p == &[0, 0, 0]).count()
    }

    /// Pixels that received at least one point (pre-smoothing when known).
    pub fn occupied_pixels(&self) -> usize {
        self.width * self.height - self.empty_before_smoothing.unwrap_or_else(|| self.count_empty())
    }
}

/// Fraction of pixels whose channels are all zero, taken before smoothing
/// when the image still carries that count.
pub fn empty_pixel_ratio(img: &ProjectionImage) -> f64 {
    let total = img.width * img.height;
    if total == 0 {
        return 1.0;
    }
    img.empty_before_smoothing.unwrap_or_else(|| img.count_empty()) as f64 / total as f64
}

/// Right-handed rotation about the z axis. Normals rotate with the points.
pub fn rotate_z(cloud: &PointCloud, angle_deg: f64) -> PointCloud {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let mut out = cloud.clone();
    for p in &mut out.points {
        let (x, y) = (p.position.x, p.position.y);
        p.position.x = c * x - s * y;
        p.position.y = s * x + c * y;
        if let Some(n) = p.normal.as_mut() {
            let (nx, ny) = (n.x, n.y);
            n.x = c * nx - s * ny;
            n.y = s * nx + c * ny;
        }
    }
    out
}

/// Keeps the points with `y <= t_y + k` (boundary inclusive).
pub fn slice_points(cloud: &PointCloud, trunk: TrunkEstimate, k: f64) -> PointCloud {
    let limit = trunk.t_y + k;
    cloud.filter(|p| p.position.y <= limit)
}

/// Square raster window in the projection plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub center_x: f64,
    pub center_z: f64,
    /// Side length in metres.
    pub side: f64,
}

impl Frame {
    pub fn for_cloud(cloud: &PointCloud) -> Result<Frame> {
        let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
        let extent = (hi.x - lo.x).max(hi.z - lo.z);
        let side = if extent > 0.0 {
            extent * (1.0 + RASTER_MARGIN)
        } else {
            1.0
        };
        Ok(Frame {
            center_x: 0.5 * (lo.x + hi.x),
            center_z: 0.5 * (lo.z + hi.z),
            side,
        })
    }

    /// `(row, col)` of the pixel containing projected point `(x, z)`.
    pub fn pixel_of(&self, x: f64, z: f64, size: usize) -> (usize, usize) {
        let half = 0.5 * self.side;
        let to_index = |u: f64| ((u / self.side * size as f64).floor().max(0.0) as usize).min(size - 1);
        let col = to_index(x - (self.center_x - half));
        let row = to_index((self.center_z + half) - z);
        (row, col)
    }
}

/// Ground size of one pixel: raster side over image size, in the cloud's
/// own (unrotated) frame.
pub fn pixel_ground_size(cloud: &PointCloud, cfg: &RenderConfig) -> Result<f64> {
    Ok(Frame::for_cloud(cloud)?.side / cfg.image_size as f64)
}

#[inline]
fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Intensity byte: `round(i / 65536 * 255)`.
pub fn intensity_byte(i: f64) -> u8 {
    round_half_up(i / MAX_INTENSITY * 255.0)
}

/// Normal component byte: `round((n + 1) / 2 * 255)`.
pub fn normal_byte(n: f64) -> u8 {
    round_half_up((n + 1.0) * 0.5 * 255.0)
}

/// Projects an already-rotated cloud into `frame`.
pub fn rasterize(
    cloud: &PointCloud,
    frame: &Frame,
    cfg: &RenderConfig,
    meta: ImageMeta,
) -> Result<ProjectionImage> {
    cfg.validate()?;
    cfg.check_attributes(cloud)?;
    let size = cfg.image_size;
    let selection = cfg.selection();

    let depth_key = |i: usize| -> f64 {
        let p = &cloud.points[i];
        match cfg.depth_rule {
            DepthRule::NearestViewer => p.position.y,
            DepthRule::LastWrite => i as f64,
            DepthRule::MaxIntensity => selection.iter().map(|&c| p.intensity[c - 1]).sum(),
        }
    };
    let mut winner: Vec<Option<usize>> = vec![None; size * size];
    for (i, p) in cloud.points.iter().enumerate() {
        let (row, col) = frame.pixel_of(p.position.x, p.position.z, size);
        let slot = &mut winner[row * size + col];
        match *slot {
            Some(j) if depth_key(i) <= depth_key(j) => {}
            _ => *slot = Some(i),
        }
    }

    let mut pixels = vec![0u8; 3 * size * size];
    for (px, w) in pixels.chunks_exact_mut(3).zip(&winner) {
        let Some(i) = *w else { continue };
        let p = &cloud.points[i];
        let rgb = match cfg.coloring {
            Coloring::Wop => [255; 3],
            Coloring::Nv => {
                let n = p.normal.expect("checked above");
                [normal_byte(n.x), normal_byte(n.y), normal_byte(n.z)]
            }
            Coloring::Op => {
                if selection.len() == 1 {
                    [intensity_byte(p.intensity[selection[0] - 1]); 3]
                } else {
                    let mut rgb = [0u8; 3];
                    for &c in &selection {
                        rgb[c - 1] = intensity_byte(p.intensity[c - 1]);
                    }
                    rgb
                }
            }
        };
        px.copy_from_slice(&rgb);
    }
    let mut img = ProjectionImage {
        width: size,
        height: size,
        pixels,
        meta,
        empty_before_smoothing: None,
    };
    img.empty_before_smoothing = Some(img.count_empty());
    if cfg.smoothing && cfg.coloring != Coloring::Wop {
        img.pixels = gaussian_smooth(&img.pixels, size, size);
    }
    Ok(img)
}

/// One view of a segment: rotate by `angle_deg`, frame on the full rotated
/// cloud, optionally slice, rasterize. `trunk` is in the unrotated frame.
pub fn render_view(
    segment: &TreeSegment,
    trunk: TrunkEstimate,
    angle_deg: f64,
    sliced: bool,
    cfg: &RenderConfig,
) -> Result<ProjectionImage> {
    let rotated = rotate_z(&segment.cloud, angle_deg);
    let frame = Frame::for_cloud(&rotated)?;
    let meta = ImageMeta {
        tree_id: segment.id.clone(),
        scan_id: segment.scan_id.clone(),
        angle_deg,
        sliced,
        coloring: cfg.coloring,
        channel_selection: cfg.channel_selection.clone(),
    };
    if sliced {
        let kept = slice_points(&rotated, trunk.rotated(angle_deg), cfg.slice_offset);
        rasterize(&kept, &frame, cfg, meta)
    } else {
        rasterize(&rotated, &frame, cfg, meta)
    }
}

/// A full and a sliced image per configured angle, angle-major.
pub fn render_tree(segment: &TreeSegment, cfg: &RenderConfig) -> Result<Vec<ProjectionImage>> {
    cfg.validate()?;
    cfg.check_attributes(&segment.cloud)?;
    let trunk = estimate_trunk(segment)?;
    let views: Vec<(f64, bool)> = cfg
        .angles_deg
        .iter()
        .flat_map(|&a| [(a, false), (a, true)])
        .collect();
    views
        .par_iter()
        .map(|&(a, sliced)| render_view(segment, trunk, a, sliced, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{Point, Species};
    use nalgebra::Vector3;

    fn meta() -> ImageMeta {
        ImageMeta {
            tree_id: "t".into(),
            scan_id: "s".into(),
            angle_deg: 0.0,
            sliced: false,
            coloring: Coloring::Wop,
            channel_selection: vec![1],
        }
    }

    fn cfg(coloring: Coloring, size: usize) -> RenderConfig {
        RenderConfig {
            image_size: size,
            coloring,
            smoothing: false,
            ..RenderConfig::default()
        }
    }

    #[test]
    fn rotation_basics() {
        let c = PointCloud::from_positions([[1.0, 0.0, 0.0], [0.3, -2.0, 5.0]]);
        assert_eq!(rotate_z(&c, 0.0), c);
        let r = rotate_z(&c, 90.0);
        assert!((r.points[0].position - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-12);
        let mut q = c.clone();
        for _ in 0..4 {
            q = rotate_z(&q, 90.0);
        }
        for (a, b) in c.points.iter().zip(&q.points) {
            assert!((a.position - b.position).amax() < 1e-9);
        }
        assert_eq!(r.points[1].position.z, 5.0);
    }

    #[test]
    fn slice_is_inclusive() {
        let trunk = TrunkEstimate { t_x: 0.0, t_y: 1.0 };
        let c = PointCloud::from_positions([[0.0, 1.7, 0.0], [1.0, 1.7, 2.0]]);
        assert_eq!(slice_points(&c, trunk, 0.7).len(), 2);
        assert_eq!(slice_points(&c, trunk, f64::INFINITY), c);
        assert_eq!(slice_points(&c, trunk, 0.69).len(), 0);
    }

    #[test]
    fn byte_quantisation() {
        assert_eq!(intensity_byte(0.0), 0);
        assert_eq!(intensity_byte(65536.0), 255);
        assert_eq!(intensity_byte(32768.0), 128);
        assert_eq!(
            [normal_byte(0.0), normal_byte(0.0), normal_byte(1.0)],
            [128, 128, 255]
        );
        assert_eq!(normal_byte(-1.0), 0);
    }

    #[test]
    fn single_point_lands_in_centre() {
        let c = PointCloud::from_positions([[3.0, 4.0, 5.0]]);
        let frame = Frame::for_cloud(&c).unwrap();
        let img = rasterize(&c, &frame, &cfg(Coloring::Wop, 64), meta()).unwrap();
        let lit: Vec<usize> = img
            .pixels
            .chunks_exact(3)
            .enumerate()
            .filter(|(_, p)| p != &[0, 0, 0])
            .map(|(i, _)| i)
            .collect();
        assert_eq!(lit, vec![32 * 64 + 32]);
        assert_eq!(img.pixel(32, 32), [255, 255, 255]);
        assert_eq!(empty_pixel_ratio(&img), (64.0 * 64.0 - 1.0) / (64.0 * 64.0));
    }

    #[test]
    fn top_row_is_max_z() {
        let c = PointCloud::from_positions([[0.0, 0.0, 0.0], [0.0, 0.0, 10.0]]);
        let frame = Frame::for_cloud(&c).unwrap();
        assert_eq!(frame.pixel_of(0.0, 10.0, 100).0, 0);
        assert_eq!(frame.pixel_of(0.0, 0.0, 100).0, 99);
    }

    #[test]
    fn nearest_viewer_wins_conflicts() {
        let pts = vec![
            Point::new(0.0, -1.0, 0.0).with_intensity(&[65536.0]),
            Point::new(0.0, 2.0, 0.0).with_intensity(&[0.0]),
            Point::new(0.0, 1.0, 0.0).with_intensity(&[32768.0]),
        ];
        let c = PointCloud::new(pts, 1);
        let frame = Frame::for_cloud(&c).unwrap();
        let mut config = cfg(Coloring::Op, 16);
        let img = rasterize(&c, &frame, &config, meta()).unwrap();
        assert_eq!(img.pixel(8, 8), [0, 0, 0]); // y = 2 is nearest the viewer
        assert_eq!(img.empty_before_smoothing, Some(256));
        config.depth_rule = DepthRule::MaxIntensity;
        assert_eq!(rasterize(&c, &frame, &config, meta()).unwrap().pixel(8, 8), [255; 3]);
        config.depth_rule = DepthRule::LastWrite;
        assert_eq!(rasterize(&c, &frame, &config, meta()).unwrap().pixel(8, 8), [128; 3]);
    }

    #[test]
    fn op_channel_slots() {
        let p = Point::new(0.0, 0.0, 0.0).with_intensity(&[65536.0, 32768.0, 0.0]);
        let c = PointCloud::new(vec![p], 3);
        let frame = Frame::for_cloud(&c).unwrap();
        let mut config = cfg(Coloring::Op, 8);
        for (sel, expected) in [
            (vec![2], [128, 128, 128]),
            (vec![1, 2], [255, 128, 0]),
            (vec![1, 3], [255, 0, 0]),
            (vec![1, 2, 3], [255, 128, 0]),
        ] {
            config.channel_selection = sel;
            let img = rasterize(&c, &frame, &config, meta()).unwrap();
            assert_eq!(img.pixel(4, 4), expected);
        }
    }

    #[test]
    fn missing_attributes_are_errors() {
        let c = PointCloud::from_positions([[0.0; 3]]);
        let frame = Frame::for_cloud(&c).unwrap();
        assert!(matches!(
            rasterize(&c, &frame, &cfg(Coloring::Nv, 8), meta()),
            Err(Error::MissingAttribute(_))
        ));
        assert!(matches!(
            rasterize(&c, &frame, &cfg(Coloring::Op, 8), meta()),
            Err(Error::MissingAttribute(_))
        ));
        let mut bad = cfg(Coloring::Wop, 4);
        assert!(bad.validate().is_err());
        bad.image_size = 8;
        bad.angles_deg = vec![360.0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pixel_size_arithmetic() {
        let cube = PointCloud::from_positions([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let at100 = pixel_ground_size(&cube, &cfg(Coloring::Wop, 100)).unwrap();
        assert!((at100 - 0.0102).abs() < 1e-12);
        let a = pixel_ground_size(&cube, &cfg(Coloring::Wop, 1024)).unwrap();
        let b = pixel_ground_size(&cube, &cfg(Coloring::Wop, 512)).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn view_counts() {
        let seg = TreeSegment::new(
            "t",
            "s",
            Species::Oak,
            PointCloud::from_positions((0..50).map(|i| [i as f64 * 0.1, 0.0, i as f64])),
        );
        let mut config = cfg(Coloring::Wop, 16);
        config.angles_deg = vec![0.0];
        assert_eq!(render_tree(&seg, &config).unwrap().len(), 2);
        config.angles_deg = TRAINING_ANGLES.to_vec();
        let imgs = render_tree(&seg, &config).unwrap();
        assert_eq!(imgs.len(), 10);
        assert_eq!(imgs[3].meta.angle_deg, 72.0);
        assert!(imgs[3].meta.sliced && !imgs[2].meta.sliced);
        config.angles_deg = inference_angles();
        assert_eq!(render_tree(&seg, &config).unwrap().len(), 50);
    }
}
