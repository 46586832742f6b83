use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{OversampleError, Result};
use crate::tabular::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteConfig {
    pub k: usize,
    /// Rows per class after resampling; `None` raises the smaller class to
    /// the larger one's count.
    pub target: Option<usize>,
    pub seed: u64,
    /// Test hook: use this interpolation gap instead of drawing it.
    #[serde(skip)]
    pub fixed_gap: Option<f64>,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k: 5, target: None, seed: 0, fixed_gap: None }
    }
}

/// Where a synthetic row came from: `parent + gap * (neighbor - parent)`,
/// with both indices into the input table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub parent: usize,
    pub neighbor: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    /// Input rows verbatim, followed by the synthetic rows.
    pub table: Table,
    /// One record per synthetic row, in output order.
    pub synthetic: Vec<SyntheticRecord>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// For each of `members` (row indices of `table`), its `k` nearest other
/// members by squared L2 over all encoded features, nearest first. Equal
/// distances order by row index.
pub fn k_nearest(table: &Table, members: &[usize], k: usize) -> Vec<Vec<usize>> {
    members
        .iter()
        .map(|&i| {
            let mut d: Vec<(f64, usize)> =
                members.iter().filter(|&&j| j != i).map(|&j| (sq_dist(table.row(i), table.row(j)), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Interpolating oversampler. Every class below the target count gains
/// synthetic rows: a seeded-random member `x`, one of its `k` nearest
/// same-class neighbours `y` chosen uniformly, and `x + u (y - x)` with
/// `u ~ U(0,1)`. Categorical codes are rounded and clamped to their range.
pub fn smote(table: &Table, cfg: &SmoteConfig) -> Result<SmoteOutput> {
    if cfg.k == 0 {
        return Err(OversampleError::InvalidConfig("k must be at least 1".into()));
    }
    let counts = table.class_counts();
    if counts.contains(&0) {
        return Err(OversampleError::MissingClass);
    }
    let target = cfg.target.unwrap_or(counts[0].max(counts[1]));
    if target < counts[0].max(counts[1]) {
        return Err(OversampleError::InvalidConfig(format!(
            "target {target} is below the larger class count {}",
            counts[0].max(counts[1])
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = table.width();
    let mut features = table.features().to_vec();
    let mut labels = table.labels().to_vec();
    let mut synthetic = Vec::new();
    for class in [0u8, 1] {
        let need = target - counts[class as usize];
        if need == 0 {
            continue;
        }
        let members: Vec<usize> = (0..table.len()).filter(|&i| table.label(i) == class).collect();
        if cfg.k >= members.len() {
            return Err(OversampleError::TooFewNeighbours { k: cfg.k, class, count: members.len() });
        }
        let neighbours = k_nearest(table, &members, cfg.k);
        for _ in 0..need {
            let m = rng.random_range(0..members.len());
            let nb = neighbours[m][rng.random_range(0..cfg.k)];
            let gap = match cfg.fixed_gap {
                Some(g) => g,
                None => rng.random::<f64>(),
            };
            let (x, y) = (table.row(members[m]), table.row(nb));
            for c in 0..width {
                let (a, b) = (x[c] as f64, y[c] as f64);
                let v = (a + gap * (b - a)).clamp(a.min(b), a.max(b));
                let v = match table.cardinality(c) {
                    Some(card) => v.round().clamp(0.0, (card - 1) as f64),
                    None => v,
                };
                features.push(v as f32);
            }
            labels.push(class);
            synthetic.push(SyntheticRecord { parent: members[m], neighbor: nb, gap });
        }
    }
    let table = Table::from_rows_like(table, features, labels)?;
    Ok(SmoteOutput { table, synthetic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnSpec, Schema};

    fn table(features: Vec<f32>, labels: Vec<u8>) -> Table {
        let schema = Schema::new(vec![ColumnSpec::continuous("a"), ColumnSpec::continuous("b")], "y").unwrap();
        Table::new(schema, features, labels, None).unwrap()
    }

    #[test]
    fn forced_half_gap_gives_midpoint() {
        let t = table(vec![0., 0., 2., 2., 9., 9., 8., 8., 7., 9.], vec![1, 1, 0, 0, 0]);
        let out = smote(&t, &SmoteConfig { k: 1, fixed_gap: Some(0.5), ..Default::default() }).unwrap();
        assert_eq!(out.table.class_counts(), [3, 3]);
        assert_eq!(out.table.row(5), &[1.0, 1.0]);
        assert_eq!(&out.table.features()[..10], t.features());
    }

    #[test]
    fn k_must_be_below_class_size() {
        let t = table(vec![0., 0., 2., 2., 9., 9., 8., 8., 7., 9.], vec![1, 1, 0, 0, 0]);
        assert!(matches!(
            smote(&t, &SmoteConfig { k: 2, ..Default::default() }),
            Err(OversampleError::TooFewNeighbours { k: 2, class: 1, count: 2 })
        ));
    }

    #[test]
    fn neighbour_ties_go_to_lower_index() {
        let t = table(vec![0., 0., 1., 0., -1., 0., 0., 1.], vec![1, 1, 1, 1]);
        assert_eq!(k_nearest(&t, &[0, 1, 2, 3], 2)[0], vec![1, 2]);
    }
}
