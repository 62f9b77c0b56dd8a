//! Exact nearest-neighbour search with a k-d tree.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable k-d tree over a point set. Queries exclude the query point's
/// own index, so duplicates at other indices are found at distance 0.
#[derive(Debug, Clone)]
pub struct NNIndex {
    values: Vec<f64>,
    dims: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

/// Nearest distinct-index neighbour of one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn better(d2: f64, idx: usize, best: (f64, usize)) -> bool {
    d2 < best.0 || (d2 == best.0 && idx < best.1)
}

impl NNIndex {
    pub fn build(points: &Dataset) -> Self {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &Dataset, leaf_size: usize) -> Self {
        let mut idx = Self {
            values: points.values().to_vec(),
            dims: points.dims(),
            order: (0..points.rows()).collect(),
            nodes: Vec::new(),
            leaf_size: leaf_size.max(1),
        };
        idx.build_node(0, points.rows());
        idx
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= self.leaf_size {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the dimension of largest spread
        let mut dim = 0;
        let mut spread = -1.0;
        for d in 0..self.dims {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.values[i * self.dims + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > spread {
                spread = hi - lo;
                dim = d;
            }
        }
        if spread <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let values = &self.values;
        let dims = self.dims;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            values[a * dims + dim]
                .total_cmp(&values[b * dims + dim])
                .then(a.cmp(&b))
        });
        let value = self.values[self.order[mid] * dims + dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest neighbour of `query` among indices other than `exclude`.
    pub fn nearest(&self, query: &[f64], exclude: Option<usize>) -> Option<Neighbor> {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, query, exclude, &mut best);
        (best.1 != usize::MAX).then(|| Neighbor {
            index: best.1,
            distance: best.0.sqrt(),
        })
    }

    fn search(&self, node: usize, q: &[f64], exclude: Option<usize>, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let d2 = sq_dist(q, self.point(i));
                    if better(d2, i, *best) {
                        *best = (d2, i);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, exclude, best);
                // `<=` keeps equal-distance candidates with lower indices reachable
                if diff * diff <= best.0 {
                    self.search(far, q, exclude, best);
                }
            }
        }
    }
}

fn check_size(points: &Dataset) -> Result<()> {
    if points.rows() < 2 {
        return Err(Error::invalid("nearest neighbours need at least two points"));
    }
    Ok(())
}

/// Exact nearest distinct-index neighbour of every point.
pub fn nearest_neighbors(points: &Dataset) -> Result<Vec<Neighbor>> {
    check_size(points)?;
    let index = NNIndex::build(points);
    Ok((0..points.rows())
        .into_par_iter()
        .map(|i| index.nearest(points.row(i), Some(i)).expect("at least two points"))
        .collect())
}

/// O(n^2) reference implementation of [`nearest_neighbors`].
pub fn brute_force_neighbors(points: &Dataset) -> Result<Vec<Neighbor>> {
    check_size(points)?;
    let n = points.rows();
    Ok((0..n)
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..n {
                if j != i {
                    let d2 = sq_dist(points.row(i), points.row(j));
                    if better(d2, j, best) {
                        best = (d2, j);
                    }
                }
            }
            Neighbor {
                index: best.1,
                distance: best.0.sqrt(),
            }
        })
        .collect())
}
