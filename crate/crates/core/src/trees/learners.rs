use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grow::{GrowParams, Grower, Presorted, Target};
use super::{sigmoid64, Hyperparameters, ModelKind, Result, TreeEnsembleModel, TreeError, TreeNode};
use crate::tabular::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionTreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for DecisionTreeConfig {
    fn default() -> Self {
        Self { max_depth: 12, min_leaf: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `floor(sqrt(width))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_leaf: 1, max_features: None, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientBoostingConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Bound on each leaf's Newton step, in log-odds.
    pub leaf_clamp: f64,
    pub seed: u64,
}

impl Default for GradientBoostingConfig {
    fn default() -> Self {
        Self { n_rounds: 100, max_depth: 4, learning_rate: 0.1, min_leaf: 1, leaf_clamp: 4.0, seed: 0 }
    }
}

fn column_names(t: &Table) -> Vec<String> {
    t.schema().columns().iter().map(|c| c.name.clone()).collect()
}

fn check_rows(train: &Table, min_leaf: usize, max_depth: usize) -> Result<()> {
    if min_leaf == 0 || max_depth == 0 {
        return Err(TreeError::InvalidParam("max_depth and min_leaf must be positive".into()));
    }
    if train.len() < 2 * min_leaf {
        return Err(TreeError::TooFewRows { rows: train.len(), needed: 2 * min_leaf });
    }
    Ok(())
}

/// Single-class training data gives a one-leaf model that is not an error.
fn note_degenerate(train: &Table, what: &str) {
    let [zeros, ones] = train.class_counts();
    if zeros == 0 || ones == 0 {
        log::info!("{what}: training set has a single class; model is a single leaf");
    }
}

/// CART with Gini impurity. The seed is recorded but growth is fully
/// deterministic, since every split considers all features.
pub fn train_decision_tree(train: &Table, cfg: &DecisionTreeConfig) -> Result<TreeEnsembleModel> {
    check_rows(train, cfg.min_leaf, cfg.max_depth)?;
    note_degenerate(train, "decision tree");
    let presorted = Presorted::new(train.features(), train.width());
    let params = GrowParams { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf, max_features: None };
    let rows: Vec<usize> = (0..train.len()).collect();
    let tree =
        Grower::new(train.features(), train.width(), &presorted, rows, Target::Class(train.labels()), &params, None)
            .grow();
    Ok(TreeEnsembleModel {
        kind: ModelKind::Single,
        columns: column_names(train),
        trees: vec![tree],
        base_score: 0.0,
        learning_rate: 1.0,
        hyperparameters: Hyperparameters::DecisionTree(cfg.clone()),
    })
}

/// Bagged CART: each tree sees a seeded bootstrap sample and a fresh random
/// feature subset at every split.
pub fn train_random_forest(train: &Table, cfg: &RandomForestConfig) -> Result<TreeEnsembleModel> {
    check_rows(train, cfg.min_leaf, cfg.max_depth)?;
    if cfg.n_trees == 0 {
        return Err(TreeError::InvalidParam("n_trees must be positive".into()));
    }
    note_degenerate(train, "random forest");
    let width = train.width();
    let max_features = cfg.max_features.unwrap_or_else(|| ((width as f64).sqrt().floor() as usize).max(1));
    if max_features == 0 {
        return Err(TreeError::InvalidParam("max_features must be positive".into()));
    }
    let presorted = Presorted::new(train.features(), width);
    let params = GrowParams { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf, max_features: Some(max_features) };
    let n = train.len();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64);
        let rows: Vec<usize> = if cfg.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
        let labels: Vec<u8> = rows.iter().map(|&r| train.label(r)).collect();
        let tree = Grower::new(train.features(), width, &presorted, rows, Target::Class(&labels), &params, Some(&mut rng))
            .grow();
        trees.push(tree);
    }
    Ok(TreeEnsembleModel {
        kind: ModelKind::Bagged,
        columns: column_names(train),
        trees,
        base_score: 0.0,
        learning_rate: 1.0,
        hyperparameters: Hyperparameters::RandomForest(cfg.clone()),
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logistic-loss boosting. Starts from the log-odds of the class-1
/// prevalence; each round fits a regression tree to the residuals `y - p`
/// and sets every leaf to its clamped Newton step `sum r / sum p(1-p)`.
pub fn train_gradient_boosting(train: &Table, cfg: &GradientBoostingConfig) -> Result<TreeEnsembleModel> {
    check_rows(train, cfg.min_leaf, cfg.max_depth)?;
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) || !(cfg.leaf_clamp > 0.0) {
        return Err(TreeError::InvalidParam("learning_rate and leaf_clamp must be positive".into()));
    }
    note_degenerate(train, "gradient boosting");
    let n = train.len();
    let width = train.width();
    let ones = train.class_counts()[1];
    // Single-class data would give infinite log-odds; keep it finite.
    let prevalence = (ones as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = logit(prevalence);

    let presorted = Presorted::new(train.features(), width);
    let params = GrowParams { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf, max_features: None };
    let y: Vec<f64> = train.labels().iter().map(|&l| l as f64).collect();
    let mut margin = vec![base_score; n];
    let mut trees = Vec::with_capacity(cfg.n_rounds);
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];
    for _ in 0..cfg.n_rounds {
        for i in 0..n {
            let p = sigmoid64(margin[i]);
            residual[i] = y[i] - p;
            hessian[i] = p * (1.0 - p);
        }
        let target = Target::Newton { residual: &residual, hessian: &hessian, clamp: cfg.leaf_clamp };
        let tree = Grower::new(train.features(), width, &presorted, (0..n).collect(), target, &params, None).grow();
        for (i, row) in train.rows().enumerate() {
            margin[i] += cfg.learning_rate * tree.evaluate(row) as f64;
        }
        trees.push(tree);
    }
    Ok(TreeEnsembleModel {
        kind: ModelKind::Boosted,
        columns: column_names(train),
        trees,
        base_score,
        learning_rate: cfg.learning_rate,
        hyperparameters: Hyperparameters::GradientBoosting(cfg.clone()),
    })
}

/// Mean log-loss of `model` on `data` after the first `rounds` boosted trees.
pub fn boosted_log_loss(model: &TreeEnsembleModel, data: &Table, rounds: usize) -> f64 {
    let mut total = 0.0;
    for (i, row) in data.rows().enumerate() {
        let z: f64 = model.trees[..rounds].iter().map(|t: &TreeNode| t.evaluate(row) as f64).sum();
        let p = sigmoid64(model.base_score + model.learning_rate * z);
        let y = data.label(i) as f64;
        total -= y * p.max(1e-300).ln() + (1.0 - y) * (1.0 - p).max(1e-300).ln();
    }
    total / data.len() as f64
}
