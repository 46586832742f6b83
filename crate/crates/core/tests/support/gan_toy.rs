//! Known two-cluster table for checking GAN marginals.
#![allow(dead_code)]

use advforge::tabular::{ColumnSpec, Schema, Table};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Two continuous feature columns drawn from two Gaussian clusters, the
/// label naming the cluster: 70% around (-2, 1), 30% around (3, -1), sd 0.5.
/// The marginal means (-0.5, 0.4) sit well away from the range midpoints, so
/// a collapsed generator cannot pass by accident.
pub fn two_gaussian_toy(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, d) = (Normal::new(-2.0f32, 0.5).unwrap(), Normal::new(3.0f32, 0.5).unwrap(), Normal::new(0.0f32, 0.5).unwrap());
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let one = rng.random_bool(0.3);
        if one {
            x.push(b.sample(&mut rng));
            x.push(-1.0 + d.sample(&mut rng));
        } else {
            x.push(a.sample(&mut rng));
            x.push(1.0 + d.sample(&mut rng));
        }
        y.push(u8::from(one));
    }
    Table::new(Schema::new(vec![ColumnSpec::continuous("u"), ColumnSpec::continuous("v")], "y").unwrap(), x, y, None).unwrap()
}
