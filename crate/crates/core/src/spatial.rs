//! Exact k-nearest-neighbour search over a static point set.
//!
//! Neighbours are ordered by `(squared distance, index)`, so equal distances
//! always resolve to the lowest index and results do not depend on build or
//! query order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Implicit kd-tree: a permutation of point indices where each sub-range is
/// split at its median along `depth % D`.
#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64; D] {
        &self.points[index]
    }

    /// The `k` nearest points to `query`, closest first. `exclude` removes
    /// one index (usually the query point itself) from consideration.
    pub fn nearest_k(&self, query: &[f64; D], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(query, k, exclude, 0, self.order.len(), 0, &mut heap);
        heap.into_sorted_vec()
    }

    pub fn nearest(&self, query: &[f64; D]) -> Option<Neighbor> {
        self.nearest_k(query, 1, None).into_iter().next()
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        query: &[f64; D],
        k: usize,
        exclude: Option<usize>,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &idx in &self.order[lo..hi] {
                self.offer(query, idx, k, exclude, heap);
            }
            return;
        }
        let axis = depth % D;
        let mid = lo + (hi - lo) / 2;
        let pivot = self.order[mid];
        let diff = query[axis] - self.points[pivot][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(query, k, exclude, near.0, near.1, depth + 1, heap);
        self.offer(query, pivot, k, exclude, heap);
        // `<=` keeps equal-distance candidates reachable for the index tie-break.
        if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |n| n.dist_sq) {
            self.search(query, k, exclude, far.0, far.1, depth + 1, heap);
        }
    }

    fn offer(
        &self,
        query: &[f64; D],
        idx: usize,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        if exclude == Some(idx) {
            return;
        }
        let cand = Neighbor {
            index: idx,
            dist_sq: dist_sq(query, &self.points[idx]),
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }
    }
}

fn build<const D: usize>(points: &[[f64; D]], order: &mut [usize], depth: usize) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let axis = depth % D;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

pub fn dist_sq<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute<const D: usize>(pts: &[[f64; D]], q: &[f64; D], k: usize, ex: Option<usize>) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = pts
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != ex)
            .map(|(i, p)| Neighbor { index: i, dist_sq: dist_sq(q, p) })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 3]> = (0..600)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let tree = KdTree::new(pts.clone());
        for i in (0..pts.len()).step_by(13) {
            assert_eq!(tree.nearest_k(&pts[i], 20, Some(i)), brute(&pts, &pts[i], 20, Some(i)));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // integer grid: many equal distances
        let pts: Vec<[f64; 2]> = (0..20)
            .flat_map(|x| (0..20).map(move |y| [x as f64, y as f64]))
            .collect();
        let tree = KdTree::new(pts.clone());
        for q in [[3.5, 3.5], [0.0, 0.0], [10.5, 7.0]] {
            assert_eq!(tree.nearest_k(&q, 9, None), brute(&pts, &q, 9, None));
        }
        let dup = vec![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert_eq!(KdTree::new(dup).nearest(&[1.0, 1.0]).unwrap().index, 0);
    }

    #[test]
    fn k_larger_than_set() {
        let tree = KdTree::new(vec![[0.0], [1.0]]);
        assert_eq!(tree.nearest_k(&[0.2], 5, None).len(), 2);
        assert!(KdTree::<2>::new(vec![]).nearest(&[0.0, 0.0]).is_none());
    }
}
