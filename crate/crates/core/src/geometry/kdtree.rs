//! Exact kd-tree over 3-D points.
//!
//! Queries are exact (no approximation); distance ties break by ascending
//! point id so downstream golden tests stay deterministic.

use nalgebra::Vector3;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{GeometryError, PointCloud};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Immutable spatial index supporting k-nearest and radius queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    nodes: Vec<Node>,
    // points permuted into leaf order, paired with their original ids
    items: Vec<(Vector3<f64>, u32)>,
    root: u32,
}

/// Max-heap entry ordered by (distance, id); the lexicographically largest
/// candidate sits on top and is evicted first.
#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    id: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NeighborIndex {
    /// Builds the index over the positions of `cloud`.
    pub fn build(cloud: &PointCloud) -> NeighborIndex {
        Self::build_from_points(cloud.positions())
    }

    pub fn build_from_points(points: &[Vector3<f64>]) -> NeighborIndex {
        let mut items: Vec<(Vector3<f64>, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, i as u32))
            .collect();
        let mut nodes = Vec::new();
        let n = items.len();
        let root = build_node(&mut items, 0, n, &mut nodes);
        NeighborIndex { nodes, items, root }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Exactly `k` nearest neighbours sorted by ascending (distance, id).
    pub fn nn_query(
        &self,
        query: &Vector3<f64>,
        k: usize,
    ) -> Result<Vec<(usize, f64)>, GeometryError> {
        if k > self.items.len() {
            return Err(GeometryError::KTooLarge {
                k,
                size: self.items.len(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(self.root, query, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|e| (e.id as usize, e.dist))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }

    /// Single nearest neighbour (id, distance).
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        self.nn_query(query, 1).expect("index is non-empty")[0]
    }

    /// All points with distance ≤ `radius`, sorted by ascending id.
    pub fn radius_query(&self, query: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.radius_visit(self.root, query, radius, &mut out);
        out.sort_by_key(|&(id, _)| id);
        out
    }

    fn knn_visit(&self, node: u32, query: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<HeapEntry>) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for (p, id) in &self.items[*start as usize..*end as usize] {
                    let dist = (p - query).norm();
                    let entry = HeapEntry { dist, id: *id };
                    if heap.len() < k {
                        heap.push(entry);
                    } else if entry < *heap.peek().expect("heap non-empty") {
                        heap.pop();
                        heap.push(entry);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[*axis as usize] - value;
                let (near, far) = if delta <= 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.knn_visit(near, query, k, heap);
                // Visit the far side unless the splitting plane is strictly
                // beyond the current worst distance; = keeps boundary ties
                // reachable so id tie-breaking stays exact.
                let worst = heap.peek().map(|e| e.dist).unwrap_or(f64::INFINITY);
                if heap.len() < k || delta.abs() <= worst {
                    self.knn_visit(far, query, k, heap);
                }
            }
        }
    }

    fn radius_visit(
        &self,
        node: u32,
        query: &Vector3<f64>,
        radius: f64,
        out: &mut Vec<(usize, f64)>,
    ) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for (p, id) in &self.items[*start as usize..*end as usize] {
                    let dist = (p - query).norm();
                    if dist <= radius {
                        out.push((*id as usize, dist));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[*axis as usize] - value;
                if delta <= radius {
                    self.radius_visit(*left, query, radius, out);
                }
                if -delta <= radius {
                    self.radius_visit(*right, query, radius, out);
                }
            }
        }
    }
}

fn build_node(
    items: &mut [(Vector3<f64>, u32)],
    offset: usize,
    len: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    if len <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + len) as u32,
        });
        return (nodes.len() - 1) as u32;
    }
    let slice = &mut items[offset..offset + len];
    // Split the widest axis; (coord, id) ordering makes the median unique.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (p, _) in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut axis = 0;
    for a in 1..3 {
        if hi[a] - lo[a] > hi[axis] - lo[axis] {
            axis = a;
        }
    }
    let mid = len / 2;
    slice.select_nth_unstable_by(mid, |a, b| {
        a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1))
    });
    let value = slice[mid].0[axis];
    let placeholder = nodes.len();
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_node(items, offset, mid, nodes);
    let right = build_node(items, offset + mid, len - mid, nodes);
    nodes[placeholder] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    placeholder as u32
}
