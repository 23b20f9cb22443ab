//! Exact nearest-neighbor search over a point cloud.
//!
//! A median-split k-d tree whose queries return exactly the brute-force
//! k-nearest / radius sets, with distance ties broken by the lower point
//! index. The exactness contract matters: the statistical outlier filter and
//! the ICP pairing are both specified against a brute-force oracle.

use crate::geometry::PointCloud;
use nalgebra::Vector3;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("cannot index an empty cloud")]
    EmptyCloud,
}

const LEAF_SIZE: usize = 16;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Immutable spatial index over the positions of one cloud.
#[derive(Debug)]
pub struct NeighborIndex {
    points: Vec<Vector3<f64>>,
    /// Point indices permuted so that every leaf owns a contiguous range.
    order: Vec<u32>,
    root: Node,
}

impl NeighborIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self, IndexError> {
        Self::from_positions(cloud.positions())
    }

    pub fn from_positions(points: Vec<Vector3<f64>>) -> Result<Self, IndexError> {
        if points.is_empty() {
            return Err(IndexError::EmptyCloud);
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let root = build_node(&points, &mut order, 0, points.len());
        Ok(Self { points, order, root })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn position(&self, index: usize) -> Vector3<f64> {
        self.points[index]
    }

    /// The `k` nearest points to `query`, as `(point_index, distance)`
    /// sorted by ascending distance (ties by ascending index). Returns fewer
    /// than `k` entries only when the cloud is smaller than `k`.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_node(&self.root, query, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.index as usize, c.dist2.sqrt()))
            .collect()
    }

    fn knn_node(&self, node: &Node, query: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &idx in &self.order[*start..*end] {
                    let d2 = (self.points[idx as usize] - query).norm_squared();
                    let cand = Candidate { dist2: d2, index: idx };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if let Some(worst) = heap.peek() {
                        if cand.beats(worst) {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = query[*axis] - value;
                let (near, far) = if delta <= 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, query, k, heap);
                // The far side can still hold an equal-distance, lower-index
                // point, so prune only on strict inequality.
                let worst = heap.peek().map(|c| c.dist2).unwrap_or(f64::INFINITY);
                if heap.len() < k || delta * delta <= worst {
                    self.knn_node(far, query, k, heap);
                }
            }
        }
    }

    /// All points within `radius` of `query` (inclusive), sorted by
    /// ascending `(distance, index)`. Radius zero returns exact duplicates.
    pub fn radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.radius_node(&self.root, query, radius * radius, &mut out);
        out.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
        out
    }

    fn radius_node(&self, node: &Node, query: &Vector3<f64>, r2: f64, out: &mut Vec<(usize, f64)>) {
        match node {
            Node::Leaf { start, end } => {
                for &idx in &self.order[*start..*end] {
                    let d2 = (self.points[idx as usize] - query).norm_squared();
                    if d2 <= r2 {
                        out.push((idx as usize, d2.sqrt()));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = query[*axis] - value;
                let (near, far) = if delta <= 0.0 { (left, right) } else { (right, left) };
                self.radius_node(near, query, r2, out);
                if delta * delta <= r2 {
                    self.radius_node(far, query, r2, out);
                }
            }
        }
    }

    /// Nearest single neighbor, or `None` only on an (impossible) empty tree.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        self.knn(query, 1).into_iter().next()
    }
}

/// Max-heap entry: the "largest" candidate is the worst one, i.e. the
/// farthest, with higher index losing the tie.
#[derive(Copy, Clone, PartialEq)]
struct Candidate {
    dist2: f64,
    index: u32,
}

impl Candidate {
    fn beats(&self, worst: &Candidate) -> bool {
        (self.dist2, self.index) < (worst.dist2, worst.index)
    }
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.dist2, self.index)
            .partial_cmp(&(other.dist2, other.index))
            .expect("finite distances")
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn build_node(points: &[Vector3<f64>], order: &mut [u32], start: usize, end: usize) -> Node {
    let slice_len = end - start;
    if slice_len <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    // Split on the axis with the largest spread; all-identical slices
    // degenerate to a leaf.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &idx in order[..slice_len].iter() {
        let p = points[idx as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap()).unwrap();
    if hi[axis] - lo[axis] <= 0.0 {
        return Node::Leaf { start, end };
    }
    let mid = slice_len / 2;
    order[..slice_len].select_nth_unstable_by(mid, |&a, &b| {
        (points[a as usize][axis], a)
            .partial_cmp(&(points[b as usize][axis], b))
            .unwrap()
    });
    let value = points[order[mid] as usize][axis];
    let (left_slice, right_slice) = order.split_at_mut(mid);
    let left = Box::new(build_node(points, left_slice, start, start + mid));
    let right = Box::new(build_node(points, right_slice, start + mid, end));
    Node::Split { axis, value, left, right }
}
