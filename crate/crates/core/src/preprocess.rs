//! Outlier removal, minimum-spacing thinning and trunk position estimation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, TreeSegment};
use crate::error::{Error, Result};
use crate::spatial::KdTree;

/// Statistical outlier removal parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SorParams {
    pub k_neighbors: usize,
    pub n_sigma: f64,
}

impl Default for SorParams {
    fn default() -> Self {
        SorParams {
            k_neighbors: 8,
            n_sigma: 1.0,
        }
    }
}

/// Mean distance from each point to its `k` nearest neighbours (self excluded).
pub fn mean_neighbor_distances(cloud: &PointCloud, k: usize) -> Vec<f64> {
    let tree = KdTree::new(cloud.positions());
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nn = tree.nearest_k(tree.point(i), k, Some(i));
            nn.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / nn.len() as f64
        })
        .collect()
}

/// Removes points whose mean k-neighbour distance exceeds
/// `mean + n_sigma * std` of those means over the cloud. The standard
/// deviation uses the `n - 1` denominator. Survivors keep their order.
pub fn sor_filter(cloud: &PointCloud, params: SorParams) -> Result<PointCloud> {
    if params.k_neighbors == 0 {
        return Err(Error::InvalidParameter("k_neighbors must be >= 1".into()));
    }
    if params.n_sigma.is_nan() || params.n_sigma < 0.0 {
        return Err(Error::InvalidParameter("n_sigma must be non-negative".into()));
    }
    if cloud.len() <= params.k_neighbors {
        return Err(Error::TooFewPoints {
            needed: params.k_neighbors + 1,
            found: cloud.len(),
        });
    }
    let means = mean_neighbor_distances(cloud, params.k_neighbors);
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / (n - 1.0);
    let threshold = mu + params.n_sigma * var.sqrt();
    let keep: Vec<usize> = means
        .iter()
        .enumerate()
        .filter(|(_, &m)| m <= threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}

/// Greedy thinning over a seeded random visiting order: a point is accepted
/// when no previously accepted point lies closer than `spacing`. The result
/// keeps the input order.
pub fn min_spacing_subsample(cloud: &PointCloud, spacing: f64, seed: u64) -> Result<PointCloud> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidParameter(format!("spacing {spacing} must be > 0")));
    }
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let cell_of = |i: usize| {
        let p = cloud.points[i].position;
        [
            (p.x / spacing).floor() as i64,
            (p.y / spacing).floor() as i64,
            (p.z / spacing).floor() as i64,
        ]
    };
    let spacing_sq = spacing * spacing;
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut accepted = Vec::new();
    for i in order {
        let c = cell_of(i);
        let p = cloud.points[i].position;
        let mut clear = true;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if bucket
                            .iter()
                            .any(|&j| (cloud.points[j].position - p).norm_squared() < spacing_sq)
                        {
                            clear = false;
                            break 'search;
                        }
                    }
                }
            }
        }
        if clear {
            grid.entry(c).or_default().push(i);
            accepted.push(i);
        }
    }
    accepted.sort_unstable();
    Ok(cloud.select(&accepted))
}

/// Planimetric trunk position in the cloud's current frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrunkEstimate {
    pub t_x: f64,
    pub t_y: f64,
}

impl TrunkEstimate {
    /// Rotates the trunk position about the z axis, matching `projection::rotate_z`.
    pub fn rotated(self, angle_deg: f64) -> TrunkEstimate {
        let (s, c) = angle_deg.to_radians().sin_cos();
        TrunkEstimate {
            t_x: c * self.t_x - s * self.t_y,
            t_y: s * self.t_x + c * self.t_y,
        }
    }
}

pub const TRUNK_SLAB_HEIGHT: f64 = 0.5;
pub const TRUNK_MIN_POINTS: usize = 20;

/// Median xy of the basal 0.5 m slab, falling back to the lowest 10 % of
/// points and then to the whole cloud when fewer than 20 points qualify.
pub fn estimate_trunk(segment: &TreeSegment) -> Result<TrunkEstimate> {
    estimate_trunk_cloud(&segment.cloud)
}

pub fn estimate_trunk_cloud(cloud: &PointCloud) -> Result<TrunkEstimate> {
    let (lo, _) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let slab: Vec<usize> = (0..cloud.len())
        .filter(|&i| cloud.points[i].position.z <= lo.z + TRUNK_SLAB_HEIGHT)
        .collect();
    let chosen = if slab.len() >= TRUNK_MIN_POINTS {
        slab
    } else {
        let mut by_z: Vec<usize> = (0..cloud.len()).collect();
        by_z.sort_by(|&a, &b| {
            cloud.points[a]
                .position
                .z
                .total_cmp(&cloud.points[b].position.z)
                .then(a.cmp(&b))
        });
        by_z.truncate(cloud.len().div_ceil(10));
        if by_z.len() >= TRUNK_MIN_POINTS {
            by_z
        } else {
            (0..cloud.len()).collect()
        }
    };
    let xs: Vec<f64> = chosen.iter().map(|&i| cloud.points[i].position.x).collect();
    let ys: Vec<f64> = chosen.iter().map(|&i| cloud.points[i].position.y).collect();
    Ok(TrunkEstimate {
        t_x: median(xs),
        t_y: median(ys),
    })
}

/// Median with the mean of the two middle values for even counts.
pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Species;
    use crate::spatial::dist_sq;
    use proptest::prelude::*;
    use rand::Rng;

    fn cube() -> Vec<[f64; 3]> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    v.push([x, y, z]);
                }
            }
        }
        v
    }

    #[test]
    fn sor_keeps_symmetric_cube() {
        let c = PointCloud::from_positions(cube());
        let out = sor_filter(&c, SorParams { k_neighbors: 3, n_sigma: 1.0 }).unwrap();
        assert_eq!(out.len(), 8);
    }

    #[test]
    fn sor_removes_exactly_the_outlier() {
        let mut pts = cube();
        pts.push([100.0, 100.0, 100.0]);
        let c = PointCloud::from_positions(pts.clone());

        // Hand oracle: cube vertices see three unit-distance neighbours; the
        // outlier sees (1,1,1) then three vertices at sqrt(100^2 + 2*99^2).
        let outlier_mean = (99.0 * 3f64.sqrt() + 2.0 * (100.0f64.powi(2) + 2.0 * 99.0f64.powi(2)).sqrt()) / 3.0;
        let means = mean_neighbor_distances(&c, 3);
        for m in &means[..8] {
            assert!((m - 1.0).abs() < 1e-12);
        }
        assert!((means[8] - outlier_mean).abs() < 1e-9);

        let out = sor_filter(&c, SorParams { k_neighbors: 3, n_sigma: 1.0 }).unwrap();
        assert_eq!(out.positions(), cube());
    }

    #[test]
    fn sor_huge_sigma_is_identity_and_too_few_points_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = PointCloud::from_positions((0..200).map(|_| [rng.random(), rng.random(), rng.random::<f64>() * 5.0]));
        let out = sor_filter(&c, SorParams { k_neighbors: 8, n_sigma: 1e300 }).unwrap();
        assert_eq!(out, c);
        let tiny = PointCloud::from_positions([[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(
            sor_filter(&tiny, SorParams { k_neighbors: 3, n_sigma: 1.0 }),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn subsample_close_pair() {
        let c = PointCloud::from_positions([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]]);
        assert_eq!(min_spacing_subsample(&c, 0.02, 1).unwrap().len(), 1);
    }

    #[test]
    fn subsample_coarse_grid_is_identity() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..5 {
                    pts.push([i as f64 * 0.1, j as f64 * 0.1, k as f64 * 0.1]);
                }
            }
        }
        let c = PointCloud::from_positions(pts);
        assert_eq!(min_spacing_subsample(&c, 0.02, 9).unwrap(), c);
    }

    #[test]
    fn subsample_random_cube_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 3]> = (0..10_000).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let c = PointCloud::from_positions(pts.clone());
        let out = min_spacing_subsample(&c, 0.02, 5).unwrap().positions();
        // O(n^2) oracle: spacing respected and every rejected point is covered.
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                assert!(dist_sq(&out[i], &out[j]).sqrt() >= 0.02);
            }
        }
        for p in pts.iter().filter(|p| !out.contains(p)) {
            assert!(out.iter().any(|q| dist_sq(p, q).sqrt() < 0.02));
        }
    }

    #[test]
    fn subsample_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = PointCloud::from_positions((0..2000).map(|_| [rng.random(), rng.random(), rng.random::<f64>()]));
        assert_eq!(
            min_spacing_subsample(&c, 0.05, 42).unwrap(),
            min_spacing_subsample(&c, 0.05, 42).unwrap()
        );
        assert!(min_spacing_subsample(&c, 0.0, 1).is_err());
    }

    fn seg(pts: Vec<[f64; 3]>) -> TreeSegment {
        TreeSegment::new("t", "s", Species::Pine, PointCloud::from_positions(pts))
    }

    #[test]
    fn trunk_of_vertical_line() {
        let t = estimate_trunk(&seg((0..100).map(|i| [1.0, 2.0, i as f64 * 0.1]).collect())).unwrap();
        assert_eq!((t.t_x, t.t_y), (1.0, 2.0));
    }

    #[test]
    fn trunk_of_cone_with_dense_base() {
        let mut pts = Vec::new();
        for ring in 0..40 {
            let z = ring as f64 * 0.25;
            let r = 2.0 * (1.0 - z / 10.0);
            let n = if ring < 2 { 400 } else { 60 };
            for k in 0..n {
                let a = k as f64 / n as f64 * std::f64::consts::TAU;
                pts.push([r * a.cos(), r * a.sin(), z]);
            }
        }
        let t = estimate_trunk(&seg(pts)).unwrap();
        assert!(t.t_x.abs() < 1e-3 && t.t_y.abs() < 1e-3, "{t:?}");
    }

    #[test]
    fn trunk_degenerate_slab_uses_whole_cloud() {
        let pts = vec![[0.0, 0.0, 10.0], [1.0, 5.0, 10.0], [2.0, 1.0, 10.0], [3.0, 2.0, 10.0], [9.0, 3.0, 10.0]];
        let t = estimate_trunk(&seg(pts)).unwrap();
        assert_eq!((t.t_x, t.t_y), (2.0, 2.0));
    }

    #[test]
    fn trunk_falls_back_to_lowest_decile() {
        // 5 points in the basal slab, 300 above it; the lowest 10 % (31
        // points) are the slab plus the bottom of the column at x = 4.
        let mut pts: Vec<[f64; 3]> = (0..5).map(|i| [100.0, 100.0, i as f64 * 0.01]).collect();
        pts.extend((0..300).map(|i| [4.0, -3.0, 1.0 + i as f64 * 0.01]));
        let t = estimate_trunk(&seg(pts)).unwrap();
        assert_eq!((t.t_x, t.t_y), (4.0, -3.0));
    }

    #[test]
    fn trunk_commutes_with_quarter_turns() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.random::<f64>() * 3.0 + 1.0, rng.random::<f64>() * 2.0 - 4.0, rng.random::<f64>() * 8.0])
            .collect();
        let base = estimate_trunk(&seg(pts.clone())).unwrap();
        for angle in [90.0, 180.0, 270.0] {
            let rotated = crate::projection::rotate_z(&PointCloud::from_positions(pts.clone()), angle);
            let t = estimate_trunk_cloud(&rotated).unwrap();
            let expected = base.rotated(angle);
            assert!((t.t_x - expected.t_x).abs() < 1e-9 && (t.t_y - expected.t_y).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn sor_output_grows_with_sigma(seed in 0u64..1000, n1 in 0.0f64..3.0, dn in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = PointCloud::from_positions((0..120).map(|_| {
                let s: f64 = if rng.random::<f64>() < 0.1 { 10.0 } else { 1.0 };
                [rng.random::<f64>() * s, rng.random::<f64>() * s, rng.random::<f64>() * s]
            }));
            let small = sor_filter(&c, SorParams { k_neighbors: 6, n_sigma: n1 }).unwrap().positions();
            let large = sor_filter(&c, SorParams { k_neighbors: 6, n_sigma: n1 + dn }).unwrap().positions();
            prop_assert!(small.iter().all(|p| large.contains(p)));
        }

        #[test]
        fn subsample_spacing_and_maximality_hold_for_any_seed(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
            let pts: Vec<[f64; 3]> = (0..400).map(|_| [rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3]).collect();
            let out = min_spacing_subsample(&PointCloud::from_positions(pts.clone()), 0.05, seed).unwrap().positions();
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    prop_assert!(dist_sq(&out[i], &out[j]) >= 0.05 * 0.05);
                }
            }
            for p in &pts {
                prop_assert!(out.iter().any(|q| dist_sq(p, q) < 0.05 * 0.05 || p == q));
            }
        }
    }
}
