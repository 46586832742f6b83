use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ColumnSpec, EncoderMap, Result, Schema, Table};

/// Mean shift applied to informative continuous features of fraud rows.
const CLASS_OFFSET: f32 = 1.0;
/// Share of continuous features that carry the class offset.
const INFORMATIVE_SHARE: f64 = 0.5;
/// Log-scale spread of the fraud-vs-legit categorical reweighting.
const CATEGORICAL_SKEW: f64 = 1.5;

const NAMED_CATEGORICALS: [(&str, &[&str]); 4] = [
    ("payment_type", &["AA", "AB", "AC", "AD", "AE"]),
    ("employment_status", &["CA", "CB", "CC", "CD", "CE", "CF", "CG"]),
    ("housing_status", &["BA", "BB", "BC", "BD", "BE", "BF", "BG"]),
    ("device_os", &["linux", "macintosh", "other", "windows", "x11"]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthFraudConfig {
    pub n: usize,
    pub n_continuous: usize,
    pub n_categorical: usize,
    pub fraud_rate: f64,
    pub seed: u64,
}

impl Default for SynthFraudConfig {
    fn default() -> Self {
        Self { n: 20_000, n_continuous: 28, n_categorical: 4, fraud_rate: 0.011, seed: 0 }
    }
}

fn categorical_levels(i: usize) -> (String, Vec<String>) {
    match NAMED_CATEGORICALS.get(i) {
        Some((name, levels)) => (name.to_string(), levels.iter().map(|s| s.to_string()).collect()),
        None => (format!("cat_{i:02}"), (0..5).map(|v| format!("v{v}")).collect()),
    }
}

/// Seeded fraud-style table: class-conditional unit-variance Gaussians whose
/// means differ by 1.0 on a random half of the continuous features, and
/// categorical columns with class-skewed level frequencies. Exactly
/// `round(n · fraud_rate)` rows are labelled fraud (1).
pub fn synth_fraud(cfg: &SynthFraudConfig) -> Result<Table> {
    if !(cfg.fraud_rate > 0.0 && cfg.fraud_rate < 1.0) {
        return Err(super::DataError::InvalidFraction(cfg.fraud_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_informative = ((cfg.n_continuous as f64 * INFORMATIVE_SHARE).round() as usize).min(cfg.n_continuous);
    let mut informative = vec![false; cfg.n_continuous];
    for i in index::sample(&mut rng, cfg.n_continuous, n_informative) {
        informative[i] = true;
    }

    let mut columns: Vec<ColumnSpec> = (0..cfg.n_continuous).map(|i| ColumnSpec::continuous(format!("num_{i:02}"))).collect();
    let mut encoder = EncoderMap { label: vec!["0".into(), "1".into()], ..Default::default() };
    let mut samplers = Vec::with_capacity(cfg.n_categorical);
    for c in 0..cfg.n_categorical {
        let (name, levels) = categorical_levels(c);
        let legit: Vec<f64> = (0..levels.len()).map(|_| rng.random_range(0.5..1.5)).collect();
        let fraud: Vec<f64> = legit
            .iter()
            .map(|&p| {
                let z: f64 = rng.sample(StandardNormal);
                p * (CATEGORICAL_SKEW * z).exp()
            })
            .collect();
        samplers.push([WeightedIndex::new(&legit).expect("positive weights"), WeightedIndex::new(&fraud).expect("positive weights")]);
        columns.push(ColumnSpec::categorical(name.clone()));
        encoder.columns.insert(name, levels);
    }
    let schema = Schema::new(columns, "fraud_bool")?;

    let n_fraud = (cfg.n as f64 * cfg.fraud_rate).round() as usize;
    let mut labels = vec![0u8; cfg.n];
    for i in index::sample(&mut rng, cfg.n, n_fraud.min(cfg.n)) {
        labels[i] = 1;
    }

    let width = schema.width();
    let mut features = Vec::with_capacity(cfg.n * width);
    for &label in &labels {
        for &inf in &informative {
            let z: f32 = rng.sample(StandardNormal);
            features.push(if inf && label == 1 { z + CLASS_OFFSET } else { z });
        }
        for s in &samplers {
            features.push(s[label as usize].sample(&mut rng) as f32);
        }
    }
    Table::new(schema, features, labels, Some(encoder))
}
