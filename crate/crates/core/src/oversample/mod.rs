//! Boundary-point extraction, SMOTE, a conditional tabular GAN, and
//! assembly and evaluation of the tabular attack set.

mod gan;
mod smote;

pub use gan::{
    sample_gan, scale_continuous, train_tabular_gan, unscale_continuous, ColumnTransform, CondColumn, EpochLoss,
    GanConfig, GanMeta, GanModel,
};
pub use smote::{k_nearest, smote, SmoteConfig, SmoteOutput, SyntheticRecord};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{evaluate_binary, report_timestamp, AttackReport, MetricsError, Phase};
use crate::tabular::{write_table_csv, DataError, Table};
use crate::tensor::TensorError;
use crate::trees::{TreeEnsembleModel, TreeError};

#[derive(Debug, Error)]
pub enum OversampleError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("SMOTE needs both classes present")]
    MissingClass,
    #[error("k = {k} neighbours need more than {count} rows in class {class}")]
    TooFewNeighbours { k: usize, class: u8, count: usize },
    #[error("{0} is empty")]
    Empty(String),
    #[error("GAN loss became non-finite in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid GAN model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OversampleError>;

/// Test rows that every model gets wrong, true labels kept.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet {
    pub table: Table,
    /// Row index of each boundary row in the test table.
    pub source_rows: Vec<usize>,
}

impl BoundarySet {
    pub fn class_counts(&self) -> [usize; 2] {
        self.table.class_counts()
    }
}

pub fn find_boundary_points(models: &[&TreeEnsembleModel], test: &Table) -> Result<BoundarySet> {
    if models.is_empty() {
        return Err(OversampleError::InvalidConfig("need at least one model".into()));
    }
    let preds = models.iter().map(|m| m.predict(test)).collect::<std::result::Result<Vec<_>, _>>()?;
    let source_rows: Vec<usize> = (0..test.len()).filter(|&i| preds.iter().all(|p| p[i] != test.label(i))).collect();
    let table = test.select(&source_rows);
    let [zeros, ones] = table.class_counts();
    if source_rows.is_empty() {
        log::warn!("no test row is misclassified by every model; the attack cannot proceed");
    } else {
        log::info!("boundary set: {ones} class-1 and {zeros} class-0 rows");
    }
    Ok(BoundarySet { table, source_rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Smote,
    Gan,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Smote => "smote",
            Provenance::Gan => "gan",
        }
    }
}

/// How GAN rows are labelled in the attack set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Labeling {
    /// Keep the label column the generator produced.
    #[default]
    Carry,
    /// Take the label of the nearest SMOTE-output row, which holds the
    /// boundary points and their interpolations.
    BoundaryTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSet {
    pub table: Table,
    pub provenance: Vec<Provenance>,
}

impl AttackSet {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }

    /// CSV with an extra `provenance` column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let tags: Vec<&str> = self.provenance.iter().map(|p| p.as_str()).collect();
        write_table_csv(&self.table, path, Some(("provenance", &tags)))?;
        Ok(())
    }
}

fn nearest_label(reference: &Table, row: &[f32]) -> u8 {
    let mut best = (f64::INFINITY, 0u8);
    for (i, r) in reference.rows().enumerate() {
        let d: f64 = r.iter().zip(row).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
        if d < best.0 {
            best = (d, reference.label(i));
        }
    }
    best.1
}

/// Concatenates SMOTE and GAN rows, tags provenance, and shuffles with
/// `seed`.
pub fn build_attack_set(smote_out: &Table, gan_out: &Table, labeling: Labeling, seed: u64) -> Result<AttackSet> {
    smote_out.check_same_schema(gan_out)?;
    let gan_rows = match labeling {
        Labeling::Carry => gan_out.clone(),
        Labeling::BoundaryTruth => {
            if smote_out.is_empty() && !gan_out.is_empty() {
                return Err(OversampleError::Empty("SMOTE output needed for boundary-truth labels".into()));
            }
            let labels = gan_out.rows().map(|r| nearest_label(smote_out, r)).collect();
            Table::from_rows_like(gan_out, gan_out.features().to_vec(), labels)?
        }
    };
    let all = smote_out.concat(&gan_rows)?;
    let mut tags = vec![Provenance::Smote; smote_out.len()];
    tags.extend(std::iter::repeat_n(Provenance::Gan, gan_rows.len()));
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(AttackSet { table: all.select(&order), provenance: order.iter().map(|&i| tags[i]).collect() })
}

/// Before = the original test set, after = the attack set. With
/// `mix_test`, the attack rows are evaluated together with the test rows.
pub fn evaluate_tabular_attack(
    models: &[&TreeEnsembleModel],
    original_test: &Table,
    attack_set: &Table,
    mix_test: bool,
    attack_config: serde_json::Value,
) -> Result<Vec<AttackReport>> {
    if attack_set.is_empty() {
        return Err(OversampleError::Empty("attack set".into()));
    }
    let after_rows = if mix_test { original_test.concat(attack_set)? } else { attack_set.clone() };
    models
        .iter()
        .map(|m| {
            let eval = |t: &Table, phase| -> Result<_> {
                let scores = m.predict_proba(t)?;
                let pred: Vec<u8> = scores.iter().map(|&p| u8::from(p >= 0.5)).collect();
                Ok(evaluate_binary(&pred, &scores, t.labels())?.with_phase(phase))
            };
            Ok(AttackReport {
                model: m.name().to_owned(),
                before: eval(original_test, Phase::Before)?,
                after: eval(&after_rows, Phase::After)?,
                attack: attack_config.clone(),
                timestamp: report_timestamp(),
                extra: Default::default(),
            })
        })
        .collect()
}
