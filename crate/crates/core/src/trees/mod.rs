//! Decision tree, random forest and Newton-step gradient boosting over
//! encoded tables, with JSON persistence.

mod grow;
mod learners;

pub use learners::{
    boosted_log_loss,
    train_decision_tree, train_gradient_boosting, train_random_forest, DecisionTreeConfig, GradientBoostingConfig,
    RandomForestConfig,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::Table;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("need at least {needed} training rows (2 x min_leaf), got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
    #[error("rows do not match the training schema: {0}")]
    SchemaMismatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TreeError>;

/// Rows go left when `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Internal { feature: usize, threshold: f32, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { leaf_value: f32 },
}

impl TreeNode {
    pub fn leaf(value: f32) -> Self {
        TreeNode::Leaf { leaf_value: value }
    }

    pub fn evaluate(&self, row: &[f32]) -> f32 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { leaf_value } => return *leaf_value,
                TreeNode::Internal { feature, threshold, left, right } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// `(feature, threshold)` of an internal node.
    pub fn split(&self) -> Option<(usize, f32)> {
        match self {
            TreeNode::Internal { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn validate(&self, width: usize, probability_leaves: bool) -> Result<()> {
        match self {
            TreeNode::Leaf { leaf_value } => {
                let ok = if probability_leaves { (0.0..=1.0).contains(leaf_value) } else { leaf_value.is_finite() };
                if ok {
                    Ok(())
                } else {
                    Err(TreeError::InvalidModel(format!("leaf value {leaf_value} out of range")))
                }
            }
            TreeNode::Internal { feature, threshold, left, right } => {
                if *feature >= width || !threshold.is_finite() {
                    return Err(TreeError::InvalidModel(format!("bad split on feature {feature} at {threshold}")));
                }
                left.validate(width, probability_leaves)?;
                right.validate(width, probability_leaves)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Single,
    Bagged,
    Boosted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparameters {
    DecisionTree(DecisionTreeConfig),
    RandomForest(RandomForestConfig),
    GradientBoosting(GradientBoostingConfig),
}

/// Trained tabular classifier. Single and bagged trees hold class-1
/// probabilities in their leaves; boosted trees hold additive log-odds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub kind: ModelKind,
    pub columns: Vec<String>,
    pub trees: Vec<TreeNode>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub hyperparameters: Hyperparameters,
}

/// Smallest distance from 0 and 1 a boosted probability is allowed to reach,
/// so saturated log-odds still give a value strictly inside (0, 1).
const PROBABILITY_MARGIN: f64 = 1e-12;

pub(crate) fn sigmoid64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl TreeEnsembleModel {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::Single => "decision_tree",
            ModelKind::Bagged => "random_forest",
            ModelKind::Boosted => "gradient_boosting",
        }
    }

    /// Class-1 probability of one encoded row.
    pub fn predict_row(&self, row: &[f32]) -> f64 {
        match self.kind {
            ModelKind::Single | ModelKind::Bagged => {
                let sum: f64 = self.trees.iter().map(|t| t.evaluate(row) as f64).sum();
                sum / self.trees.len() as f64
            }
            ModelKind::Boosted => {
                let z: f64 = self.trees.iter().map(|t| t.evaluate(row) as f64).sum();
                sigmoid64(self.base_score + self.learning_rate * z).clamp(PROBABILITY_MARGIN, 1.0 - PROBABILITY_MARGIN)
            }
        }
    }

    pub fn check_schema(&self, rows: &Table) -> Result<()> {
        let names: Vec<&str> = rows.schema().columns().iter().map(|c| c.name.as_str()).collect();
        if names != self.columns.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(TreeError::SchemaMismatch(format!("expected {:?}, got {:?}", self.columns, names)));
        }
        Ok(())
    }

    pub fn predict_proba(&self, rows: &Table) -> Result<Vec<f64>> {
        self.check_schema(rows)?;
        Ok(rows.rows().map(|r| self.predict_row(r)).collect())
    }

    /// Hard labels, `p >= 0.5` mapping to class 1.
    pub fn predict(&self, rows: &Table) -> Result<Vec<u8>> {
        Ok(self.predict_proba(rows)?.into_iter().map(|p| u8::from(p >= 0.5)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() && self.kind != ModelKind::Boosted {
            return Err(TreeError::InvalidModel("no trees".into()));
        }
        for t in &self.trees {
            t.validate(self.width(), self.kind != ModelKind::Boosted)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
