//! Static kd-tree over a flat point buffer.
//!
//! Answers nearest-point and fixed-radius queries; used for nearest-site
//! assignment during Voronoi construction and for centroid ball queries
//! during generator assembly.

use crate::real::Real;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum Node<T> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: T,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree<T> {
    dim: usize,
    points: Vec<T>,
    /// Permutation of point indices; leaves own contiguous ranges.
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> KdTree<T> {
    /// Builds a tree over `points` (flat, `dim` coordinates per point).
    pub fn new(points: Vec<T>, dim: usize) -> Self {
        assert!(
            dim > 0 && points.len().is_multiple_of(dim),
            "flat buffer must hold whole points"
        );
        let n = points.len() / dim;
        let mut tree = KdTree {
            dim,
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn coord(&self, i: usize, axis: usize) -> T {
        self.points[i * self.dim + axis]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the widest axis at the median
        let mut axis = 0;
        let mut widest = T::neg_infinity();
        for a in 0..self.dim {
            let (lo, hi) = self.order[start..end].iter().fold(
                (T::infinity(), T::neg_infinity()),
                |(lo, hi), &i| {
                    let v = self.coord(i, a);
                    (lo.min(v), hi.max(v))
                },
            );
            if hi - lo > widest {
                widest = hi - lo;
                axis = a;
            }
        }
        let mid = (start + end) / 2;
        {
            let (dim, points) = (self.dim, &self.points);
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a * dim + axis]
                    .partial_cmp(&points[b * dim + axis])
                    .expect("finite coordinates")
            });
        }
        let value = self.coord(self.order[mid], axis);
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index and squared distance of the nearest point. Ties resolve to the
    /// smallest index.
    pub fn nearest(&self, q: &[T]) -> Option<(usize, T)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, T::infinity());
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &[T], best: &mut (usize, T)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = crate::real::dist2(self.point(i), q);
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// Indices of all points with `|p - q| < r`, sorted ascending.
    pub fn within(&self, q: &[T], r: T) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_into(q, r, &mut out);
        out
    }

    pub fn within_into(&self, q: &[T], r: T, out: &mut Vec<usize>) {
        out.clear();
        if !self.is_empty() {
            self.within_rec(0, q, r * r, r, out);
        }
        out.sort_unstable();
    }

    fn within_rec(&self, node: usize, q: &[T], r2: T, r: T, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if crate::real::dist2(self.point(i), q) < r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                if diff < r {
                    self.within_rec(left, q, r2, r, out);
                }
                if -diff <= r {
                    self.within_rec(right, q, r2, r, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::dist2;
    use proptest::prelude::*;

    fn brute_nearest(points: &[f64], dim: usize, q: &[f64]) -> (usize, f64) {
        points
            .chunks_exact(dim)
            .enumerate()
            .map(|(i, p)| (i, dist2(p, q)))
            .fold(
                (usize::MAX, f64::INFINITY),
                |b, c| if c.1 < b.1 { c } else { b },
            )
    }

    #[test]
    fn empty_tree() {
        let t = KdTree::<f64>::new(vec![], 2);
        assert!(t.nearest(&[0.0, 0.0]).is_none());
        assert!(t.within(&[0.0, 0.0], 1.0).is_empty());
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let t = KdTree::new(vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0], 2);
        assert_eq!(t.nearest(&[0.9, 0.9]).unwrap().0, 0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in proptest::collection::vec(-1.0f64..1.0, 3..600),
            q in proptest::collection::vec(-1.2f64..1.2, 3),
            r in 0.0f64..1.0,
        ) {
            let dim = 3;
            let n = pts.len() / dim;
            let pts = pts[..n * dim].to_vec();
            let tree = KdTree::new(pts.clone(), dim);
            let (bi, bd) = brute_nearest(&pts, dim, &q);
            let (ti, td) = tree.nearest(&q).unwrap();
            prop_assert_eq!(bd, td);
            prop_assert_eq!(bi, ti);
            let expect: Vec<usize> = pts.chunks_exact(dim).enumerate()
                .filter(|(_, p)| dist2(p, &q) < r * r).map(|(i, _)| i).collect();
            prop_assert_eq!(tree.within(&q, r), expect);
        }
    }
}
