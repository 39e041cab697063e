//! Point, point cloud and tree segment types shared by every stage.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of the raw intensity range.
pub const MAX_INTENSITY: f64 = 65536.0;

/// Maximum number of intensity channels a point can carry.
pub const MAX_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    /// Raw intensities; only the first `PointCloud::channels` entries are meaningful.
    pub intensity: [f64; MAX_CHANNELS],
    pub normal: Option<Vector3<f64>>,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point {
            position: Vector3::new(x, y, z),
            intensity: [0.0; MAX_CHANNELS],
            normal: None,
        }
    }

    pub fn with_intensity(mut self, values: &[f64]) -> Self {
        for (slot, v) in self.intensity.iter_mut().zip(values) {
            *slot = *v;
        }
        self
    }

    pub fn with_normal(mut self, normal: Vector3<f64>) -> Self {
        self.normal = Some(normal);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// Number of intensity channels carried by every point (0, 1 or 3).
    pub channels: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, channels: usize) -> Self {
        PointCloud { points, channels }
    }

    pub fn from_positions<I>(positions: I) -> Self
    where
        I: IntoIterator<Item = [f64; 3]>,
    {
        PointCloud {
            points: positions
                .into_iter()
                .map(|[x, y, z]| Point::new(x, y, z))
                .collect(),
            channels: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [p.position.x, p.position.y, p.position.z])
            .collect()
    }

    /// True when every point carries a normal.
    pub fn has_normals(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.normal.is_some())
    }

    /// Keeps the points whose indices are listed, in the listed order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            channels: self.channels,
        }
    }

    pub fn filter<F>(&self, mut keep: F) -> PointCloud
    where
        F: FnMut(&Point) -> bool,
    {
        PointCloud {
            points: self.points.iter().filter(|p| keep(p)).copied().collect(),
            channels: self.channels,
        }
    }

    /// Axis-aligned bounds as `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?.position;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(&p.position), hi.sup(&p.position))
        }))
    }

    /// Checks the point-level invariants: finite coordinates, intensities in
    /// `[0, 65536]`, unit normals and a channel count of 0, 1 or 3.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if !matches!(self.channels, 0 | 1 | 3) {
            return Err(Error::InvalidParameter(format!(
                "channel count {} (expected 0, 1 or 3)",
                self.channels
            )));
        }
        for p in &self.points {
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "non-finite coordinate {:?}",
                    p.position
                )));
            }
            for &v in &p.intensity[..self.channels] {
                check_intensity(v)?;
            }
            if let Some(n) = p.normal {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidParameter(format!(
                        "normal {:?} is not unit length",
                        n
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn check_intensity(v: f64) -> Result<f64> {
    if (0.0..=MAX_INTENSITY).contains(&v) {
        Ok(v)
    } else {
        Err(Error::IntensityOutOfRange(v))
    }
}

/// Closed set of species labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Pine,
    Spruce,
    Birch,
    Maple,
    Aspen,
    Rowan,
    Oak,
    Lime,
    Alder,
    Unknown,
}

impl Species {
    pub const ALL: [Species; 10] = [
        Species::Pine,
        Species::Spruce,
        Species::Birch,
        Species::Maple,
        Species::Aspen,
        Species::Rowan,
        Species::Oak,
        Species::Lime,
        Species::Alder,
        Species::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Species::Pine => "pine",
            Species::Spruce => "spruce",
            Species::Birch => "birch",
            Species::Maple => "maple",
            Species::Aspen => "aspen",
            Species::Rowan => "rowan",
            Species::Oak => "oak",
            Species::Lime => "lime",
            Species::Alder => "alder",
            Species::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Species::ALL
            .iter()
            .copied()
            .find(|sp| sp.as_str() == lower)
            .ok_or_else(|| Error::UnknownSpecies(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSegment {
    pub id: String,
    pub scan_id: String,
    pub species: Species,
    pub cloud: PointCloud,
}

impl TreeSegment {
    pub fn new(
        id: impl Into<String>,
        scan_id: impl Into<String>,
        species: Species,
        cloud: PointCloud,
    ) -> Self {
        TreeSegment {
            id: id.into(),
            scan_id: scan_id.into(),
            species,
            cloud,
        }
    }

    pub fn with_cloud(&self, cloud: PointCloud) -> Self {
        TreeSegment {
            id: self.id.clone(),
            scan_id: self.scan_id.clone(),
            species: self.species,
            cloud,
        }
    }
}
