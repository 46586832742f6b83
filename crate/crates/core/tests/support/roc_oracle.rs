//! ROC curve over every distinct threshold, integrated with trapezoids.
#![allow(dead_code)]

pub fn trapezoid_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    // Start at (0, 0): nothing predicted positive.
    let mut pts = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, &l)| **s >= t && l == 1).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, &l)| **s >= t && l == 0).count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    Some(pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum())
}
