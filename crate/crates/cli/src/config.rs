//! Run configuration. One JSON file; every key is optional and command-line
//! flags win over the file.

use std::path::{Path, PathBuf};

use advforge::attacks::{AttackMethod, AttackParams, TargetRule};
use advforge::oversample::{GanConfig, Labeling};
use advforge::tabular::SynthFraudConfig;
use advforge::trees::{DecisionTreeConfig, GradientBoostingConfig, RandomForestConfig};
use advforge::vision::{CnnConfig, FaceSynthConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "ADVFORGE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every stochastic stage. The `seed` keys inside sections are
    /// overwritten with this value.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub tabular: TabularConfig,
    pub vision: VisionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("advforge-out"),
            data: DataConfig::default(),
            tabular: TabularConfig::default(),
            vision: VisionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Synthetic fraud table for `data synth`.
    pub fraud: SynthFraudConfig,
    /// Synthetic face set for `data synth`.
    pub faces: FaceSynthConfig,
    /// Undersample the majority class before splitting.
    pub balance: bool,
    pub majority_cap: Option<usize>,
    pub test_fraction: f64,
    /// Inputs for `data load`.
    pub csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub faces_dir: Option<PathBuf>,
    /// Defaults to `manifest.csv` inside `faces_dir`.
    pub faces_manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            fraud: SynthFraudConfig { fraud_rate: 0.5, ..Default::default() },
            faces: FaceSynthConfig::default(),
            balance: true,
            majority_cap: None,
            test_fraction: 0.2,
            csv: None,
            schema: None,
            faces_dir: None,
            faces_manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularConfig {
    pub decision_tree: DecisionTreeConfig,
    pub random_forest: RandomForestConfig,
    pub gradient_boosting: GradientBoostingConfig,
    pub smote_k: usize,
    pub gan: GanConfig,
    /// Share of GAN rows in the attack set; the rest are SMOTE rows.
    pub gan_fraction: f64,
    pub labeling: Labeling,
    /// Evaluate the attack rows together with the clean test rows.
    pub mix_test: bool,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            decision_tree: DecisionTreeConfig::default(),
            random_forest: RandomForestConfig::default(),
            gradient_boosting: GradientBoostingConfig::default(),
            smote_k: 5,
            gan: GanConfig::default(),
            gan_fraction: 0.5,
            labeling: Labeling::Carry,
            mix_test: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionConfig {
    pub cnn: CnnConfig,
    pub attack: AttackParams,
    /// Methods run by `vision attack-eval` and `demo`.
    pub methods: Vec<AttackMethod>,
    pub target_rule: TargetRule,
    /// Number of test images exported as PGM per attack.
    pub export_images: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            cnn: CnnConfig::default(),
            attack: AttackParams::default(),
            methods: vec![AttackMethod::Targeted, AttackMethod::Fgsm],
            target_rule: TargetRule::NextClass,
            export_images: 8,
        }
    }
}

impl RunConfig {
    /// Reads a config file; a missing path gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))
    }

    /// Applies `ADVFORGE_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Copies the global seed into every section.
    pub fn propagate_seed(&mut self) {
        let s = self.seed;
        self.data.fraud.seed = s;
        self.data.faces.seed = s;
        self.tabular.decision_tree.seed = s;
        self.tabular.random_forest.seed = s;
        self.tabular.gradient_boosting.seed = s;
        self.tabular.gan.seed = s;
        self.vision.cnn.seed = s;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return bad(format!("data.test_fraction {} outside (0, 1)", self.data.test_fraction));
        }
        if !(0.0..1.0).contains(&self.tabular.gan_fraction) {
            return bad(format!("tabular.gan_fraction {} outside [0, 1)", self.tabular.gan_fraction));
        }
        if self.tabular.smote_k == 0 {
            return bad("tabular.smote_k must be at least 1".into());
        }
        if self.vision.methods.is_empty() {
            return bad("vision.methods is empty".into());
        }
        self.vision.attack.validate().map_err(|e| CliError::Validation(format!("vision.attack: {e}")))
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
