//! Rigid registration from anchor pairs and mutual-nearest-neighbour tree matching.

use std::io::Write;

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::KdTree;

/// `x_global = rotation * x_local + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Largest deviation from `RᵀR = I` and `det R = 1`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        gram.max((self.rotation.determinant() - 1.0).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidFit {
    pub transform: RigidTransform,
    /// Root mean square of the per-anchor 3D residual distances.
    pub rms_residual: f64,
    pub anchor_count: usize,
}

/// Least-squares rigid fit (Kabsch with translation): centre both sets,
/// take the SVD of the cross-covariance and fix the sign so `det R = +1`.
pub fn fit_rigid(local: &[Vector3<f64>], global: &[Vector3<f64>]) -> Result<RigidFit> {
    if local.len() != global.len() {
        return Err(Error::LengthMismatch(local.len(), global.len()));
    }
    let n = local.len();
    if n < 3 {
        return Err(Error::TooFewAnchors(n));
    }
    let centroid = |pts: &[Vector3<f64>]| pts.iter().sum::<Vector3<f64>>() / n as f64;
    let (cl, cg) = (centroid(local), centroid(global));

    for pts in [local, global] {
        let c = centroid(pts);
        let spread = pts.iter().fold(Matrix3::zeros(), |acc, p| {
            let d = p - c;
            acc + d * d.transpose()
        });
        let sv = spread.singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        // rank < 2 means all anchors lie on one line (or coincide)
        if s[0] <= 0.0 || s[1] <= 1e-12 * s[0] {
            return Err(Error::DegenerateAnchors);
        }
    }

    let h = local
        .iter()
        .zip(global)
        .fold(Matrix3::zeros(), |acc, (l, g)| acc + (l - cl) * (g - cg).transpose());
    let svd = SVD::new(h, true, true);
    let u = svd.u.ok_or(Error::DegenerateAnchors)?;
    let v_t = svd.v_t.ok_or(Error::DegenerateAnchors)?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cg - rotation * cl;
    let transform = RigidTransform {
        rotation,
        translation,
    };
    let sq: f64 = local
        .iter()
        .zip(global)
        .map(|(l, g)| (transform.apply(l) - g).norm_squared())
        .sum();
    Ok(RigidFit {
        transform,
        rms_residual: (sq / n as f64).sqrt(),
        anchor_count: n,
    })
}

/// Maps coordinates and rotates normals; intensities are carried over.
pub fn apply_transform(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    let mut out = cloud.clone();
    for p in &mut out.points {
        p.position = transform.apply(&p.position);
        if let Some(n) = p.normal.as_mut() {
            *n = transform.rotation * *n;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Sorted by `index_a`.
    pub pairs: Vec<MatchPair>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

/// Pairs `a` and `b` when each is the other's nearest neighbour and their
/// distance is strictly below `threshold`. Equal distances resolve to the
/// lowest index.
pub fn mutual_nn_match<const D: usize>(
    a: &[[f64; D]],
    b: &[[f64; D]],
    threshold: f64,
) -> Result<MatchResult> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidParameter(format!("threshold {threshold} must be > 0")));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(MatchResult {
            pairs: Vec::new(),
            unmatched_a: (0..a.len()).collect(),
            unmatched_b: (0..b.len()).collect(),
        });
    }
    let tree_a = KdTree::new(a.to_vec());
    let tree_b = KdTree::new(b.to_vec());
    let nearest_in_a: Vec<usize> = b.iter().map(|q| tree_a.nearest(q).unwrap().index).collect();

    let mut matched_b = vec![false; b.len()];
    let mut result = MatchResult::default();
    for (ia, q) in a.iter().enumerate() {
        let nb = tree_b.nearest(q).unwrap();
        let distance = nb.dist_sq.sqrt();
        if nearest_in_a[nb.index] == ia && distance < threshold {
            matched_b[nb.index] = true;
            result.pairs.push(MatchPair {
                index_a: ia,
                index_b: nb.index,
                distance,
            });
        } else {
            result.unmatched_a.push(ia);
        }
    }
    result.unmatched_b = (0..b.len()).filter(|&i| !matched_b[i]).collect();
    Ok(result)
}

/// Writes `id_A,id_B,distance_m` rows followed by `# unmatched_A` and
/// `# unmatched_B` sections listing one id per line.
pub fn write_match_csv<W: Write>(
    mut out: W,
    result: &MatchResult,
    ids_a: &[String],
    ids_b: &[String],
) -> std::io::Result<()> {
    writeln!(out, "id_A,id_B,distance_m")?;
    for p in &result.pairs {
        writeln!(out, "{},{},{:.6}", ids_a[p.index_a], ids_b[p.index_b], p.distance)?;
    }
    writeln!(out, "# unmatched_A")?;
    for &i in &result.unmatched_a {
        writeln!(out, "{}", ids_a[i])?;
    }
    writeln!(out, "# unmatched_B")?;
    for &i in &result.unmatched_b {
        writeln!(out, "{}", ids_b[i])?;
    }
    Ok(())
}
