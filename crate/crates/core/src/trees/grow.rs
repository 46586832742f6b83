//! Greedy depth-first tree growth over presorted feature orders.
//!
//! Each node owns the same contiguous range in every per-feature sorted
//! array; a split stably partitions those ranges, so no re-sorting happens
//! below the root.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use super::TreeNode;

/// Row indices of a table, sorted by each feature's value.
pub(crate) struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(features: &[f32], width: usize) -> Self {
        let n = features.len().checked_div(width).unwrap_or(0);
        let order = (0..width)
            .map(|f| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| features[a as usize * width + f].total_cmp(&features[b as usize * width + f]));
                idx
            })
            .collect();
        Self { order }
    }
}

pub(crate) enum Target<'a> {
    /// 0/1 label per sample position.
    Class(&'a [u8]),
    /// Residual `y - p` and hessian `p(1-p)` per sample position.
    Newton { residual: &'a [f64], hessian: &'a [f64], clamp: f64 },
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per split; `None` considers all of them.
    pub max_features: Option<usize>,
}

pub(crate) struct Grower<'a> {
    x: &'a [f32],
    width: usize,
    /// Table row behind each sample position.
    rows: Vec<usize>,
    sorted: Vec<Vec<u32>>,
    target: Target<'a>,
    params: &'a GrowParams,
    rng: Option<&'a mut ChaCha8Rng>,
    go_left: Vec<bool>,
    scratch: Vec<u32>,
}

/// Best split found for a node.
struct Candidate {
    feature: usize,
    threshold: f32,
    /// Sample count on the left.
    n_left: usize,
}

/// Exact score `num / den` for classification splits, compared by
/// cross-multiplication so tie-breaking never depends on rounding.
#[derive(Clone, Copy)]
struct Ratio {
    num: u128,
    den: u128,
}

impl Ratio {
    fn gt(self, other: Ratio) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Weighted purity `sum_c count_c^2 / n`; maximizing its sum over both
/// children is the same as maximizing Gini decrease.
fn purity(c0: u64, c1: u64) -> (u128, u128) {
    let (c0, c1) = (c0 as u128, c1 as u128);
    (c0 * c0 + c1 * c1, c0 + c1)
}

fn split_score(l: [u64; 2], r: [u64; 2]) -> Ratio {
    let (ln, ld) = purity(l[0], l[1]);
    let (rn, rd) = purity(r[0], r[1]);
    Ratio { num: ln * rd + rn * ld, den: ld * rd }
}

/// Threshold strictly separating `lo < hi` with `lo <= t < hi` in f32.
pub(crate) fn midpoint(lo: f32, hi: f32) -> f32 {
    let m = ((lo as f64 + hi as f64) / 2.0) as f32;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

impl<'a> Grower<'a> {
    /// `rows[p]` is the table row at sample position `p` (repeats allowed).
    pub fn new(
        x: &'a [f32],
        width: usize,
        presorted: &Presorted,
        rows: Vec<usize>,
        target: Target<'a>,
        params: &'a GrowParams,
        rng: Option<&'a mut ChaCha8Rng>,
    ) -> Self {
        let n_table = x.len().checked_div(width).unwrap_or(0);
        // Positions grouped by table row, so sorted orders follow from the
        // table-wide presort by expansion.
        let mut start = vec![0usize; n_table + 1];
        for &r in &rows {
            start[r + 1] += 1;
        }
        for i in 0..n_table {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut by_row = vec![0u32; rows.len()];
        for (p, &r) in rows.iter().enumerate() {
            by_row[fill[r]] = p as u32;
            fill[r] += 1;
        }
        let sorted = presorted
            .order
            .iter()
            .map(|ord| {
                let mut v = Vec::with_capacity(rows.len());
                for &r in ord {
                    v.extend_from_slice(&by_row[start[r as usize]..start[r as usize + 1]]);
                }
                v
            })
            .collect();
        let m = rows.len();
        Self { x, width, rows, sorted, target, params, rng, go_left: vec![false; m], scratch: Vec::with_capacity(m) }
    }

    fn value(&self, pos: u32, f: usize) -> f32 {
        self.x[self.rows[pos as usize] * self.width + f]
    }

    pub fn grow(mut self) -> TreeNode {
        let n = self.rows.len();
        self.node(0, n, 0)
    }

    fn node(&mut self, lo: usize, hi: usize, depth: usize) -> TreeNode {
        let n = hi - lo;
        let leaf = self.leaf_value(lo, hi);
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf || self.is_pure(lo, hi) {
            return TreeNode::leaf(leaf);
        }
        let features = self.draw_features();
        let best = match self.target {
            Target::Class(labels) => self.best_class_split(labels, lo, hi, &features),
            Target::Newton { residual, .. } => self.best_newton_split(residual, lo, hi, &features),
        };
        let Some(c) = best else {
            return TreeNode::leaf(leaf);
        };
        self.partition(lo, hi, c.feature, c.threshold);
        let mid = lo + c.n_left;
        let left = self.node(lo, mid, depth + 1);
        let right = self.node(mid, hi, depth + 1);
        TreeNode::Internal { feature: c.feature, threshold: c.threshold, left: Box::new(left), right: Box::new(right) }
    }

    fn positions(&self, lo: usize, hi: usize) -> &[u32] {
        // Any feature's range holds the node's positions.
        &self.sorted[0][lo..hi]
    }

    fn is_pure(&self, lo: usize, hi: usize) -> bool {
        match self.target {
            Target::Class(labels) => {
                let p = self.positions(lo, hi);
                let first = labels[p[0] as usize];
                p.iter().all(|&i| labels[i as usize] == first)
            }
            Target::Newton { residual, .. } => {
                let p = self.positions(lo, hi);
                let first = residual[p[0] as usize];
                p.iter().all(|&i| residual[i as usize] == first)
            }
        }
    }

    fn leaf_value(&self, lo: usize, hi: usize) -> f32 {
        let p = self.positions(lo, hi);
        match self.target {
            Target::Class(labels) => {
                let ones = p.iter().filter(|&&i| labels[i as usize] == 1).count();
                (ones as f64 / p.len() as f64) as f32
            }
            Target::Newton { residual, hessian, clamp } => {
                let r: f64 = p.iter().map(|&i| residual[i as usize]).sum();
                let h: f64 = p.iter().map(|&i| hessian[i as usize]).sum();
                if h > 0.0 {
                    ((r / h).clamp(-clamp, clamp)) as f32
                } else {
                    0.0
                }
            }
        }
    }

    fn draw_features(&mut self) -> Vec<usize> {
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < self.width => {
                let mut f = index::sample(rng, self.width, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.width).collect(),
        }
    }

    fn best_class_split(&self, labels: &[u8], lo: usize, hi: usize, features: &[usize]) -> Option<Candidate> {
        let n = hi - lo;
        let min_leaf = self.params.min_leaf;
        let mut total = [0u64; 2];
        for &p in self.positions(lo, hi) {
            total[labels[p as usize] as usize] += 1;
        }
        let mut best: Option<(Ratio, Candidate)> = None;
        for &f in features {
            let arr = &self.sorted[f][lo..hi];
            let mut left = [0u64; 2];
            for i in 0..n - 1 {
                left[labels[arr[i] as usize] as usize] += 1;
                let n_left = i + 1;
                if n_left < min_leaf {
                    continue;
                }
                if n - n_left < min_leaf {
                    break;
                }
                let (v, next) = (self.value(arr[i], f), self.value(arr[i + 1], f));
                if v == next {
                    continue;
                }
                let score = split_score(left, [total[0] - left[0], total[1] - left[1]]);
                if best.as_ref().is_none_or(|(b, _)| score.gt(*b)) {
                    best = Some((score, Candidate { feature: f, threshold: midpoint(v, next), n_left }));
                }
            }
        }
        // A zero-decrease split is still taken in an impure node: it can
        // unlock gains one level down (XOR-shaped data).
        best.map(|(_, c)| c)
    }

    fn best_newton_split(&self, residual: &[f64], lo: usize, hi: usize, features: &[usize]) -> Option<Candidate> {
        let n = hi - lo;
        let min_leaf = self.params.min_leaf;
        let total: f64 = self.positions(lo, hi).iter().map(|&p| residual[p as usize]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(f64, Candidate)> = None;
        for &f in features {
            let arr = &self.sorted[f][lo..hi];
            let mut left = 0.0f64;
            for i in 0..n - 1 {
                left += residual[arr[i] as usize];
                let n_left = i + 1;
                if n_left < min_leaf {
                    continue;
                }
                if n - n_left < min_leaf {
                    break;
                }
                let (v, next) = (self.value(arr[i], f), self.value(arr[i + 1], f));
                if v == next {
                    continue;
                }
                let right = total - left;
                // Sum of squares reduction up to the constant sum r^2 term.
                let score = left * left / n_left as f64 + right * right / (n - n_left) as f64;
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, Candidate { feature: f, threshold: midpoint(v, next), n_left }));
                }
            }
        }
        best.filter(|(s, _)| *s > parent).map(|(_, c)| c)
    }

    fn partition(&mut self, lo: usize, hi: usize, feature: usize, threshold: f32) {
        for i in lo..hi {
            let p = self.sorted[feature][i];
            self.go_left[p as usize] = self.value(p, feature) <= threshold;
        }
        for f in 0..self.width {
            self.scratch.clear();
            let arr = &mut self.sorted[f][lo..hi];
            let mut w = 0;
            for i in 0..arr.len() {
                let p = arr[i];
                if self.go_left[p as usize] {
                    arr[w] = p;
                    w += 1;
                } else {
                    self.scratch.push(p);
                }
            }
            arr[w..].copy_from_slice(&self.scratch);
        }
    }
}
