use alloc::vec::Vec;
use core::cmp::Ordering;

/// Static k-d tree over a point set, median split on the widest axis.
///
/// Points are stored flattened; queries return indices into the original
/// point order.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    /// Permutation of point indices laid out as an implicit balanced tree:
    /// the node for `[lo, hi)` sits at `mid = (lo + hi) / 2`.
    order: Vec<usize>,
    /// Split axis of the node stored at each slot of `order`.
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new<'a, I>(dim: usize, points: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut coords = Vec::new();
        for p in points {
            assert_eq!(p.len(), dim, "point dimension");
            coords.extend_from_slice(p);
        }
        let n = if dim == 0 { 0 } else { coords.len() / dim };
        let mut tree = KdTree {
            dim,
            coords,
            order: (0..n).collect(),
            axis: alloc::vec![0; n],
        };
        tree.build(0, n);
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let axis = self.widest_axis(lo, hi);
        let mid = (lo + hi) / 2;
        let (dim, coords) = (self.dim, &self.coords);
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            coords[a * dim + axis].total_cmp(&coords[b * dim + axis])
        });
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    fn widest_axis(&self, lo: usize, hi: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for d in 0..self.dim {
            let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[lo..hi] {
                let v = self.coords[i * self.dim + d];
                min = min.min(v);
                max = max.max(v);
            }
            if max - min > best.1 {
                best = (d, max - min);
            }
        }
        best.0
    }

    /// Indices of all points `p` with `lo ≤ p ≤ hi` coordinate-wise, sorted.
    pub fn range(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        let mut out = Vec::new();
        self.range_into(lo, hi, &mut out);
        out.sort_unstable();
        out
    }

    /// Unsorted variant of [`KdTree::range`] that appends to `out`.
    pub fn range_into(&self, lo: &[f64], hi: &[f64], out: &mut Vec<usize>) {
        let mut stack = alloc::vec![(0usize, self.len())];
        while let Some((a, b)) = stack.pop() {
            if a >= b {
                continue;
            }
            let mid = (a + b) / 2;
            let idx = self.order[mid];
            let p = self.point(idx);
            if p.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h) {
                out.push(idx);
            }
            let ax = self.axis[mid] as usize;
            if lo[ax] <= p[ax] {
                stack.push((a, mid));
            }
            if hi[ax] >= p[ax] {
                stack.push((mid + 1, b));
            }
        }
    }

    /// The `k` nearest points to `x` by Euclidean distance, nearest first.
    /// Ties are broken by index. Returns `(index, squared distance)`.
    pub fn nearest(&self, x: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.nearest_rec(x, k, 0, self.len(), &mut best);
        }
        best
    }

    fn nearest_rec(&self, x: &[f64], k: usize, a: usize, b: usize, best: &mut Vec<(usize, f64)>) {
        if a >= b {
            return;
        }
        let mid = (a + b) / 2;
        let idx = self.order[mid];
        let p = self.point(idx);
        let d2: f64 = p.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum();
        insert_candidate(best, k, (idx, d2));
        let ax = self.axis[mid] as usize;
        let diff = x[ax] - p[ax];
        let (near, far) = if diff <= 0.0 {
            ((a, mid), (mid + 1, b))
        } else {
            ((mid + 1, b), (a, mid))
        };
        self.nearest_rec(x, k, near.0, near.1, best);
        // `<=` keeps equal-distance candidates on the far side reachable for
        // the index tie-break.
        if best.len() < k || diff * diff <= best[best.len() - 1].1 {
            self.nearest_rec(x, k, far.0, far.1, best);
        }
    }
}

fn cmp_candidate(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

fn insert_candidate(best: &mut Vec<(usize, f64)>, k: usize, c: (usize, f64)) {
    if best.len() == k && cmp_candidate(&c, &best[k - 1]) != Ordering::Less {
        return;
    }
    let pos = best.partition_point(|b| cmp_candidate(b, &c) == Ordering::Less);
    best.insert(pos, c);
    best.truncate(k);
}
