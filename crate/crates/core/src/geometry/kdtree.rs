//! Exact kd-tree over a fixed point set.
//!
//! The tree is stored implicitly: `order` is a permutation of point indices where
//! each range `lo..hi` is split at its midpoint on the axis recorded in `axes`.
//! All distances are compared squared; ties are broken by lowest point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::cloud::Vec3;

const LEAF_SIZE: usize = 8;

/// A neighbor returned by a query: point index and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist2.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
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

/// Immutable acceleration structure for nearest-neighbor and radius queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl SpatialIndex {
    pub fn build(points: &[Vec3]) -> Self {
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axes: vec![0; points.len()],
        };
        index.build_range(0, points.len());
        index
    }

    fn build_range(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let axis = self.widest_axis(lo, hi);
        let mid = lo + (hi - lo) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        self.axes[mid] = axis as u8;
        self.build_range(lo, mid);
        self.build_range(mid + 1, hi);
    }

    fn widest_axis(&self, lo: usize, hi: usize) -> usize {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        (max - min).imax()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Exact nearest point to `q`; `None` only for an empty index.
    pub fn nearest(&self, q: &Vec3) -> Option<Neighbor> {
        if self.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.nearest_range(0, self.len(), q, &mut best);
        Some(best)
    }

    fn nearest_range(&self, lo: usize, hi: usize, q: &Vec3, best: &mut Neighbor) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let cand = Neighbor {
                    index: i,
                    dist2: (self.points[i] - q).norm_squared(),
                };
                if cand < *best {
                    *best = cand;
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pivot = self.order[mid];
        let cand = Neighbor {
            index: pivot,
            dist2: (self.points[pivot] - q).norm_squared(),
        };
        if cand < *best {
            *best = cand;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_range(near.0, near.1, q, best);
        if diff * diff <= best.dist2 {
            self.nearest_range(far.0, far.1, q, best);
        }
    }

    /// The `k` nearest points sorted by (distance, index).
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<Neighbor> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_range(0, self.len(), q, k, &mut heap);
        }
        heap.into_sorted_vec()
    }

    fn knn_offer(heap: &mut BinaryHeap<Neighbor>, k: usize, cand: Neighbor) {
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }
    }

    fn knn_range(
        &self,
        lo: usize,
        hi: usize,
        q: &Vec3,
        k: usize,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let dist2 = (self.points[i] - q).norm_squared();
                Self::knn_offer(heap, k, Neighbor { index: i, dist2 });
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pivot = self.order[mid];
        let dist2 = (self.points[pivot] - q).norm_squared();
        Self::knn_offer(heap, k, Neighbor { index: pivot, dist2 });
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_range(near.0, near.1, q, k, heap);
        let bound = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.peek().map_or(f64::INFINITY, |w| w.dist2)
        };
        if diff * diff <= bound {
            self.knn_range(far.0, far.1, q, k, heap);
        }
    }

    /// All points with squared distance `<= r * r`, sorted by (distance, index).
    pub fn radius(&self, q: &Vec3, r: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if r >= 0.0 && !self.is_empty() {
            self.radius_range(0, self.len(), q, r * r, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_range(&self, lo: usize, hi: usize, q: &Vec3, r2: f64, out: &mut Vec<Neighbor>) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let dist2 = (self.points[i] - q).norm_squared();
                if dist2 <= r2 {
                    out.push(Neighbor { index: i, dist2 });
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pivot = self.order[mid];
        let dist2 = (self.points[pivot] - q).norm_squared();
        if dist2 <= r2 {
            out.push(Neighbor {
                index: pivot,
                dist2,
            });
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[pivot][axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.radius_range(lo, mid, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.radius_range(mid + 1, hi, q, r2, out);
        }
    }
}
