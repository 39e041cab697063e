//! Per-point normals from k-nearest-neighbour plane fits, and outward
//! orientation relative to the trunk axis.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::preprocess::TrunkEstimate;
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalParams {
    pub neighbor_count: usize,
}

impl Default for NormalParams {
    fn default() -> Self {
        NormalParams { neighbor_count: 20 }
    }
}

/// Relative gap below which the two smallest eigenvalues count as equal.
const EIGEN_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Indices whose neighbourhood was coincident or had no unique plane.
    pub degenerate: Vec<usize>,
}

/// Fits a plane to each point's `N` nearest neighbours (the point itself
/// excluded) and stores the unit eigenvector of the smallest covariance
/// eigenvalue. Signs are left as the eigen-solver returns them.
pub fn estimate_normals(cloud: &PointCloud, params: NormalParams) -> Result<NormalEstimate> {
    let n = params.neighbor_count;
    if n < 3 {
        return Err(Error::InvalidParameter(format!("neighbor_count {n} < 3")));
    }
    if cloud.len() < n + 1 {
        return Err(Error::TooFewPoints {
            needed: n + 1,
            found: cloud.len(),
        });
    }
    let positions = cloud.positions();
    let tree = KdTree::new(positions.clone());
    let fitted: Vec<(Vector3<f64>, bool)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nbrs = tree.nearest_k(&positions[i], n, Some(i));
            plane_normal(nbrs.iter().map(|nb| Vector3::from(positions[nb.index])))
        })
        .collect();

    let mut out = cloud.clone();
    let mut degenerate = Vec::new();
    for (i, (normal, flag)) in fitted.into_iter().enumerate() {
        out.points[i].normal = Some(normal);
        if flag {
            degenerate.push(i);
        }
    }
    Ok(NormalEstimate {
        cloud: out,
        degenerate,
    })
}

/// Smallest-eigenvalue eigenvector of the neighbourhood covariance, with a
/// degeneracy flag.
pub fn plane_normal<I>(neighbors: I) -> (Vector3<f64>, bool)
where
    I: IntoIterator<Item = Vector3<f64>>,
{
    let pts: Vec<Vector3<f64>> = neighbors.into_iter().collect();
    let count = pts.len() as f64;
    let centroid = pts.iter().sum::<Vector3<f64>>() / count;
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    }) / count;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if l2 <= f64::MIN_POSITIVE || !l2.is_finite() {
        return (Vector3::z(), true);
    }
    let pick = |k: usize| -> Vector3<f64> { eig.eigenvectors.column(order[k]).normalize() };
    if (l1 - l0) <= EIGEN_TIE_TOLERANCE * l2 {
        let (a, b) = (pick(0), pick(1));
        let best = if b.z.abs() > a.z.abs() { b } else { a };
        return (best, true);
    }
    (pick(0), false)
}

/// Flips every normal with a positive component toward the trunk axis, so
/// that `dot(n, (t_x - x, t_y - y, 0)) <= 0`. Points on the axis keep their sign.
pub fn orient_outward(cloud: &PointCloud, trunk: TrunkEstimate) -> Result<PointCloud> {
    if !cloud.has_normals() {
        return Err(Error::MissingAttribute("normals"));
    }
    let mut out = cloud.clone();
    for p in &mut out.points {
        let to_trunk = Vector3::new(trunk.t_x - p.position.x, trunk.t_y - p.position.y, 0.0);
        if to_trunk.norm() < 1e-9 {
            continue;
        }
        if let Some(n) = p.normal.as_mut() {
            if n.dot(&to_trunk) > 0.0 {
                *n = -*n;
            }
        }
    }
    Ok(out)
}
