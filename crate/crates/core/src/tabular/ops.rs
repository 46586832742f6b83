use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result, Table};

/// Undersamples the majority class: every minority row plus a seeded
/// without-replacement sample of the majority, shuffled together.
///
/// The majority sample has the minority's size unless `majority_cap` is set,
/// in which case it has `min(cap, majority count)` rows.
pub fn balance_classes(table: &Table, seed: u64, majority_cap: Option<usize>) -> Result<Table> {
    let [zeros, ones] = table.class_counts();
    if zeros == 0 {
        return Err(DataError::MissingClass(0));
    }
    if ones == 0 {
        return Err(DataError::MissingClass(1));
    }
    let minority_label = if ones <= zeros { 1 } else { 0 };
    let (minority, majority): (Vec<usize>, Vec<usize>) =
        (0..table.len()).partition(|&i| table.label(i) == minority_label);
    let take = majority_cap.unwrap_or(minority.len()).min(majority.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, majority.len(), take).into_iter().map(|i| majority[i]).collect();
    picked.sort_unstable();
    let mut all = minority;
    all.extend(picked);
    all.shuffle(&mut rng);
    Ok(table.select(&all))
}

/// Seeded shuffle then split; the test part holds `round(fraction · n)` rows.
pub fn train_test_split(table: &Table, test_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidFraction(test_fraction));
    }
    let n = table.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (test, train) = order.split_at(n_test);
    Ok((table.select(train), table.select(test)))
}
