//! Static k-d tree for nearest-neighbour queries over labelled points.

use alloc::vec::Vec;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    labels: Vec<usize>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds a tree over `points`, each tagged with `labels[i]`.
    pub fn new<'a, I>(points: I, labels: Vec<usize>, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut coords = Vec::with_capacity(labels.len() * dim);
        for p in points {
            coords.extend_from_slice(&p[..dim]);
        }
        assert_eq!(coords.len(), labels.len() * dim, "one label per point");
        let mut order: Vec<usize> = (0..labels.len()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            let n = order.len();
            build(&coords, dim, &mut order, 0, n, &mut nodes);
        }
        Self {
            dim,
            coords,
            labels,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Nearest point as `(index, distance)`.
    pub fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        self.nearest_where(x, |_| true)
    }

    /// Nearest point whose label differs from `label`.
    pub fn nearest_other_label(&self, x: &[f64], label: usize) -> Option<(usize, f64)> {
        self.nearest_where(x, |l| l != label)
    }

    pub fn nearest_where<F: Fn(usize) -> bool>(
        &self,
        x: &[f64],
        accept: F,
    ) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, x, &accept, &mut best);
        (best.0 != usize::MAX).then(|| (best.0, libm::sqrt(best.1)))
    }

    fn search<F: Fn(usize) -> bool>(
        &self,
        node: usize,
        x: &[f64],
        accept: &F,
        best: &mut (usize, f64),
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if !accept(self.labels[i]) {
                        continue;
                    }
                    let p = self.point(i);
                    let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
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
                let diff = x[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, x, accept, best);
                if diff * diff <= best.1 {
                    self.search(far, x, accept, best);
                }
            }
        }
    }
}

fn build(
    coords: &[f64],
    dim: usize,
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    // Split on the widest axis at the median.
    let slice = &mut order[start..end];
    let mut axis = 0;
    let mut widest = -1.0;
    for a in 0..dim {
        let (lo, hi) = slice
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = coords[i * dim + a];
                (lo.min(v), hi.max(v))
            });
        if hi - lo > widest {
            widest = hi - lo;
            axis = a;
        }
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        coords[a * dim + axis]
            .total_cmp(&coords[b * dim + axis])
            .then(a.cmp(&b))
    });
    let value = coords[slice[mid] * dim + axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(coords, dim, order, start, start + mid, nodes);
    let right = build(coords, dim, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}
