//! Synthetic point clouds: analytic surfaces with known normals and simple
//! conifer-like / broadleaf-like tree shapes for end-to-end runs.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{Point, PointCloud, Species, TreeSegment};

/// Uniform random points on the square `[-size/2, size/2]^2` at `z = 0`.
pub fn plane_patch(n: usize, size: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::from_positions((0..n).map(|_| {
        [
            (rng.random::<f64>() - 0.5) * size,
            (rng.random::<f64>() - 0.5) * size,
            0.0,
        ]
    }))
}

/// Fibonacci lattice on the unit sphere.
pub fn sphere(n: usize) -> PointCloud {
    let golden = PI * (3.0 - 5f64.sqrt());
    PointCloud::from_positions((0..n).map(|i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let a = golden * i as f64;
        [r * a.cos(), r * a.sin(), z]
    }))
}

/// Staggered grid on the open cylinder of the given radius about the z axis,
/// `z` in `[0, height]`, with roughly square cells.
pub fn cylinder(n: usize, radius: f64, height: f64) -> PointCloud {
    let circumference = TAU * radius;
    let cell = (circumference * height / n as f64).sqrt();
    let around = (circumference / cell).round().max(3.0) as usize;
    let rings = n.div_ceil(around);
    let mut pts = Vec::with_capacity(rings * around);
    for r in 0..rings {
        let z = height * (r as f64 + 0.5) / rings as f64;
        let stagger = if r % 2 == 0 { 0.0 } else { 0.5 };
        for k in 0..around {
            let a = TAU * (k as f64 + stagger) / around as f64;
            pts.push([radius * a.cos(), radius * a.sin(), z]);
        }
    }
    PointCloud::from_positions(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeShape {
    /// Narrow trunk under a conical crown.
    Conifer,
    /// Taller bare trunk under an ellipsoidal crown.
    Broadleaf,
}

impl TreeShape {
    pub fn species(self) -> Species {
        match self {
            TreeShape::Conifer => Species::Spruce,
            TreeShape::Broadleaf => Species::Birch,
        }
    }
}

/// Generates one synthetic tree at a random planimetric position, with a
/// single intensity channel. Deterministic in `seed`.
pub fn tree(shape: TreeShape, points: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.03).unwrap();
    let origin = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..5.0));

    let (height, crown_base, crown_radius) = match shape {
        TreeShape::Conifer => {
            let h: f64 = rng.random_range(12.0..22.0);
            (h, h * rng.random_range(0.1..0.25), h * rng.random_range(0.15..0.22))
        }
        TreeShape::Broadleaf => {
            let h: f64 = rng.random_range(10.0..20.0);
            (h, h * rng.random_range(0.3..0.4), h * rng.random_range(0.28..0.4))
        }
    };
    let squash = rng.random_range(0.8..1.0); // crown ellipticity in y
    let trunk_radius = 0.02 * height;

    let trunk_points = points / 10;
    let mut pts = Vec::with_capacity(points);
    for _ in 0..trunk_points {
        let a = rng.random_range(0.0..TAU);
        let z = rng.random_range(0.0..crown_base + 0.3 * (height - crown_base));
        pts.push(Vector3::new(trunk_radius * a.cos(), trunk_radius * a.sin(), z));
    }
    let crown_len = height - crown_base;
    while pts.len() < points {
        let interior = rng.random::<f64>() < 0.2;
        let shrink = if interior { rng.random::<f64>().sqrt() } else { 1.0 };
        let a = rng.random_range(0.0..TAU);
        let p = match shape {
            TreeShape::Conifer => {
                // area-uniform on the cone: distance from apex ~ sqrt(u)
                let s = rng.random::<f64>().sqrt();
                let r = crown_radius * s * shrink;
                Vector3::new(r * a.cos(), squash * r * a.sin(), height - s * crown_len)
            }
            TreeShape::Broadleaf => {
                let z = rng.random_range(-1.0..1.0f64);
                let r = (1.0 - z * z).sqrt() * shrink;
                let center = crown_base + 0.5 * crown_len;
                Vector3::new(
                    crown_radius * r * a.cos(),
                    squash * crown_radius * r * a.sin(),
                    center + 0.5 * crown_len * z * shrink,
                )
            }
        };
        pts.push(p);
    }
    let cloud_points = pts
        .into_iter()
        .map(|p| {
            let q = p
                + origin
                + Vector3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng));
            let intensity = match shape {
                TreeShape::Conifer => rng.random_range(8000.0..30000.0f64),
                TreeShape::Broadleaf => rng.random_range(20000.0..50000.0f64),
            }
            .round();
            Point::new(q.x, q.y, q.z.max(origin.z)).with_intensity(&[intensity])
        })
        .collect();
    PointCloud::new(cloud_points, 1)
}

pub fn tree_segment(shape: TreeShape, index: usize, points: usize, seed: u64) -> TreeSegment {
    let prefix = match shape {
        TreeShape::Conifer => "c",
        TreeShape::Broadleaf => "b",
    };
    TreeSegment::new(
        format!("{prefix}{index:03}"),
        "synth",
        shape.species(),
        tree(shape, points, seed),
    )
}
