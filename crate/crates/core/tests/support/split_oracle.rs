//! Exhaustive Gini split enumeration in exact rational arithmetic.
#![allow(dead_code)]

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frac {
    pub num: i128,
    pub den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    pub fn new(num: i128, den: i128) -> Self {
        let g = gcd(num, den).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Frac { num: s * num / g, den: s * den / g }
    }
    pub fn int(v: i128) -> Self {
        Frac::new(v, 1)
    }
    pub fn add(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }
    pub fn sub(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den - o.num * self.den, self.den * o.den)
    }
    pub fn mul(self, o: Frac) -> Frac {
        Frac::new(self.num * o.num, self.den * o.den)
    }
    pub fn cmp(self, o: Frac) -> std::cmp::Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// `1 - sum_k (c_k / n)^2`.
pub fn gini(labels: &[u8]) -> Frac {
    let n = labels.len() as i128;
    let ones = labels.iter().filter(|&&l| l == 1).count() as i128;
    let p1 = Frac::new(ones, n);
    let p0 = Frac::new(n - ones, n);
    Frac::int(1).sub(p0.mul(p0)).sub(p1.mul(p1))
}

pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f32,
    pub decrease: Frac,
}

/// Every (feature, midpoint) pair whose children both hold `min_leaf` rows,
/// scored by Gini decrease; the maximum wins, ties to the lowest feature and
/// then the lowest threshold.
pub fn best_split(x: &[f32], width: usize, labels: &[u8], min_leaf: usize) -> Option<OracleSplit> {
    let n = labels.len();
    let parent = gini(labels);
    let mut best: Option<OracleSplit> = None;
    for f in 0..width {
        let mut values: Vec<f32> = (0..n).map(|i| x[i * width + f]).collect();
        values.sort_by(f32::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let t = ((pair[0] as f64 + pair[1] as f64) / 2.0) as f32;
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for i in 0..n {
                if x[i * width + f] <= t {
                    l.push(labels[i]);
                } else {
                    r.push(labels[i]);
                }
            }
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let wl = Frac::new(l.len() as i128, n as i128);
            let wr = Frac::new(r.len() as i128, n as i128);
            let decrease = parent.sub(wl.mul(gini(&l))).sub(wr.mul(gini(&r)));
            let better = match &best {
                None => true,
                Some(b) => decrease.cmp(b.decrease) == std::cmp::Ordering::Greater,
            };
            if better {
                best = Some(OracleSplit { feature: f, threshold: t, decrease });
            }
        }
    }
    best
}
