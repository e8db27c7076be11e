//! Exact k-d tree for two-nearest-neighbor queries.
//!
//! Pruning compares the squared distance to a splitting plane against the
//! current second-best squared distance. Both come from coordinate differences
//! of the same stored values, and [`sq_dist`] accumulates non-negative terms,
//! so a pruned subtree can never hold a strictly closer point: results equal an
//! exhaustive scan using [`sq_dist`] exactly.

const LEAF_SIZE: usize = 16;

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

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

/// A k-d tree over row-major points.
pub struct KdTree<'a> {
    data: &'a [f64],
    dim: usize,
    index: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    /// Builds over `data.len() / dim` points stored row-major.
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        assert!(
            dim > 0 && data.len().is_multiple_of(dim),
            "data is not a whole number of points"
        );
        let n = data.len() / dim;
        let mut tree = KdTree {
            data,
            dim,
            index: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let (mut best_dim, mut best_spread) = (0, 0.0);
        for d in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.index[start..end] {
                let v = self.data[i * self.dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            return id;
        }
        let mid = start + (end - start) / 2;
        let (data, dim) = (self.data, self.dim);
        self.index[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * dim + best_dim].total_cmp(&data[b * dim + best_dim])
        });
        let value = data[self.index[mid] * dim + best_dim];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            dim: best_dim,
            value,
            left,
            right,
        };
        id
    }

    /// Squared distances from point `i` to its two nearest other points.
    pub fn nearest_two(&self, i: usize) -> (f64, f64) {
        let q = self.point(i);
        let mut best = [f64::INFINITY; 2];
        self.search(0, i, q, &mut best);
        (best[0], best[1])
    }

    fn search(&self, node: usize, skip: usize, q: &[f64], best: &mut [f64; 2]) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.index[start..end] {
                    if j == skip {
                        continue;
                    }
                    let d = sq_dist(q, self.point(j));
                    if d < best[0] {
                        best[1] = best[0];
                        best[0] = d;
                    } else if d < best[1] {
                        best[1] = d;
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
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, skip, q, best);
                if diff * diff <= best[1] {
                    self.search(far, skip, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_line() {
        let pts = [0.0, 1.0, 3.0, 6.0];
        let t = KdTree::new(&pts, 1);
        assert_eq!(t.nearest_two(0), (1.0, 9.0));
        assert_eq!(t.nearest_two(3), (9.0, 25.0));
    }

    #[test]
    fn matches_scan_beyond_leaf_size() {
        let pts: Vec<f64> = (0..400)
            .map(|i| ((i * 7919) % 997) as f64 / 997.0)
            .collect();
        let t = KdTree::new(&pts, 2);
        for i in 0..200 {
            let mut d: Vec<f64> = (0..200)
                .filter(|&j| j != i)
                .map(|j| sq_dist(t.point(i), t.point(j)))
                .collect();
            d.sort_by(f64::total_cmp);
            assert_eq!(t.nearest_two(i), (d[0], d[1]));
        }
    }
}
