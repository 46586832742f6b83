//! The subcommand stages. Each stage reads the artifacts of earlier stages
//! from the output directory, replaces its own directory, and returns the
//! paths it produced.

use std::path::{Path, PathBuf};

use advforge::attacks::{evaluate_vision_attack, write_image_records, AttackMethod};
use advforge::metrics::{read_report, write_report, AttackReport, REPORT_FILE, SUMMARY_FILE};
use advforge::oversample::{
    build_attack_set, evaluate_tabular_attack, find_boundary_points, sample_gan, smote, train_tabular_gan, GanModel,
    SmoteConfig,
};
use advforge::tabular::{
    balance_classes, label_encode, load_csv, read_table_csv, synth_fraud, train_test_split, write_table_csv,
    EncoderMap, Schema, Table,
};
use advforge::trees::{train_decision_tree, train_gradient_boosting, train_random_forest, TreeEnsembleModel};
use advforge::vision::{
    gradcam_batch, load_faces, split_faces, synth_faces_with, threshold_mask, train_cnn, write_faces, write_pgm,
    CnnModel, FaceDataset,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, Context, Result};

/// Where every stage keeps its artifacts, relative to the output directory.
pub struct Layout {
    root: PathBuf,
}

pub const MODEL_FILES: [&str; 3] = ["decision_tree.json", "random_forest.json", "gradient_boosting.json"];

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_owned() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn tabular_data(&self) -> PathBuf {
        self.data().join("tabular")
    }
    pub fn faces(&self, part: &str) -> PathBuf {
        self.data().join("faces").join(part)
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("tabular").join("models")
    }
    pub fn boundary(&self) -> PathBuf {
        self.root.join("tabular").join("boundary")
    }
    pub fn smote(&self) -> PathBuf {
        self.root.join("tabular").join("smote")
    }
    pub fn gan(&self) -> PathBuf {
        self.root.join("tabular").join("gan")
    }
    pub fn gan_sample(&self) -> PathBuf {
        self.root.join("tabular").join("gan-sample")
    }
    pub fn tabular_attack(&self) -> PathBuf {
        self.root.join("tabular").join("attack")
    }
    pub fn cnn(&self) -> PathBuf {
        self.root.join("vision").join("model")
    }
    pub fn gradcam(&self) -> PathBuf {
        self.root.join("vision").join("gradcam")
    }
    pub fn vision_attack(&self, m: AttackMethod) -> PathBuf {
        self.root.join("vision").join(format!("attack-{}", m.as_str()))
    }
    pub fn vision_eval(&self) -> PathBuf {
        self.root.join("vision").join("eval")
    }
    pub fn root(&self) -> &Path {
        &self.root
    }
}

/// Which halves of the data stage to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataPart {
    #[default]
    All,
    Tabular,
    Vision,
}

fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).context(dir.display())?;
    }
    std::fs::create_dir_all(dir).context(dir.display())
}

fn need(path: &Path, what: &str, command: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "missing {what} artifact {}; run `advforge {command}` first",
            path.display()
        )))
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context(path.display())?;
    text.push('\n');
    std::fs::write(path, text).context(path.display())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).context(path.display())?;
    serde_json::from_str(&text).context(path.display())
}

// ---- data ----

fn write_tabular_split(cfg: &RunConfig, table: &Table, encoder: &EncoderMap, layout: &Layout) -> Result<()> {
    let dir = layout.tabular_data();
    std::fs::create_dir_all(&dir).context(dir.display())?;
    let table = if cfg.data.balance {
        balance_classes(table, cfg.seed, cfg.data.majority_cap).context("balancing classes")?
    } else {
        table.clone()
    };
    let (train, test) = train_test_split(&table, cfg.data.test_fraction, cfg.seed).context("splitting")?;
    write_json(&dir.join("schema.json"), table.schema())?;
    write_json(&dir.join("encoder.json"), encoder)?;
    write_table_csv(&train, &dir.join("train.csv"), None).context("train.csv")?;
    write_table_csv(&test, &dir.join("test.csv"), None).context("test.csv")?;
    log::info!("tabular data: {} train rows, {} test rows", train.len(), test.len());
    Ok(())
}

fn write_face_split(ds: &FaceDataset, layout: &Layout) -> Result<()> {
    let (train, test) = split_faces(ds).context("splitting faces")?;
    write_faces(&train, &layout.faces("train"), "face").context("writing faces")?;
    write_faces(&test, &layout.faces("test"), "face").context("writing faces")?;
    log::info!("faces: {} train images, {} test images", train.len(), test.len());
    Ok(())
}

pub fn data_synth(cfg: &RunConfig, part: DataPart) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    fresh_dir(&layout.data())?;
    if part != DataPart::Vision {
        let table = synth_fraud(&cfg.data.fraud).context("synthesizing fraud table")?;
        let encoder = table.encoder().cloned().expect("synthetic tables carry an encoder");
        write_tabular_split(cfg, &table, &encoder, &layout)?;
    }
    if part != DataPart::Tabular {
        write_face_split(&synth_faces_with(&cfg.data.faces), &layout)?;
    }
    Ok(vec![layout.data()])
}

pub fn data_load(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let d = &cfg.data;
    if d.csv.is_none() && d.faces_dir.is_none() {
        return Err(CliError::Validation("data load needs data.csv (with data.schema) or data.faces_dir".into()));
    }
    if d.csv.is_some() != d.schema.is_some() {
        return Err(CliError::Validation("data.csv and data.schema must be given together".into()));
    }
    let layout = Layout::new(&cfg.out_dir);
    let schema = match &d.schema {
        Some(p) => Some(Schema::from_json_file(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?),
        None => None,
    };
    fresh_dir(&layout.data())?;
    if let (Some(csv), Some(schema)) = (&d.csv, &schema) {
        let raw = load_csv(csv, schema).map_err(|e| CliError::Validation(format!("{}: {e}", csv.display())))?;
        let (table, encoder) = label_encode(&raw).map_err(|e| CliError::Validation(format!("{}: {e}", csv.display())))?;
        write_tabular_split(cfg, &table, &encoder, &layout)?;
    }
    if let Some(dir) = &d.faces_dir {
        let manifest = d.faces_manifest.clone().unwrap_or_else(|| dir.join("manifest.csv"));
        let ds = load_faces(dir, &manifest).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
        write_face_split(&ds, &layout)?;
    }
    Ok(vec![layout.data()])
}

// ---- tabular ----

fn load_split(layout: &Layout, name: &str) -> Result<Table> {
    let dir = layout.tabular_data();
    let path = dir.join(name);
    need(&path, "tabular data", "data synth")?;
    let schema: Schema = read_json(&dir.join("schema.json"))?;
    let encoder: EncoderMap = read_json(&dir.join("encoder.json"))?;
    read_table_csv(&path, &schema, Some(&encoder)).context(path.display())
}

fn load_table_like(path: &Path, template: &Table, what: &str, command: &str) -> Result<Table> {
    need(path, what, command)?;
    read_table_csv(path, template.schema(), template.encoder()).context(path.display())
}

fn load_models(layout: &Layout) -> Result<Vec<TreeEnsembleModel>> {
    MODEL_FILES
        .iter()
        .map(|f| {
            let path = layout.models().join(f);
            need(&path, "model", "tabular train")?;
            TreeEnsembleModel::load(&path).context(path.display())
        })
        .collect()
}

pub fn tabular_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let train = load_split(&layout, "train.csv")?;
    let test = load_split(&layout, "test.csv")?;
    let t = &cfg.tabular;
    let models = [
        train_decision_tree(&train, &t.decision_tree).context("decision tree")?,
        train_random_forest(&train, &t.random_forest).context("random forest")?,
        train_gradient_boosting(&train, &t.gradient_boosting).context("gradient boosting")?,
    ];
    let dir = layout.models();
    fresh_dir(&dir)?;
    let mut accuracy = serde_json::Map::new();
    for (m, file) in models.iter().zip(MODEL_FILES) {
        m.save(&dir.join(file)).context(file)?;
        let pred = m.predict(&test).context(m.name())?;
        let correct = pred.iter().zip(test.labels()).filter(|(a, b)| a == b).count();
        let acc = correct as f64 / test.len() as f64;
        log::info!("{}: test accuracy {acc:.4}", m.name());
        accuracy.insert(m.name().to_owned(), json!(acc));
    }
    write_json(&dir.join("test_accuracy.json"), &accuracy)?;
    Ok(vec![dir])
}

pub fn tabular_boundary(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let models = load_models(&layout)?;
    let test = load_split(&layout, "test.csv")?;
    let refs: Vec<&TreeEnsembleModel> = models.iter().collect();
    let b = find_boundary_points(&refs, &test).context("boundary points")?;
    let dir = layout.boundary();
    fresh_dir(&dir)?;
    write_table_csv(&b.table, &dir.join("boundary.csv"), None).context("boundary.csv")?;
    let [zeros, ones] = b.class_counts();
    write_json(&dir.join("boundary.json"), &json!({ "class_0": zeros, "class_1": ones, "source_rows": b.source_rows }))?;
    Ok(vec![dir])
}

fn load_boundary(layout: &Layout, template: &Table) -> Result<Table> {
    let path = layout.boundary().join("boundary.json");
    need(&path, "boundary set", "tabular boundary")?;
    let counts: serde_json::Value = read_json(&path)?;
    if counts["source_rows"].as_array().is_none_or(|r| r.is_empty()) {
        return Err(CliError::Runtime("the boundary set is empty: no test row is misclassified by every model".into()));
    }
    load_table_like(&layout.boundary().join("boundary.csv"), template, "boundary set", "tabular boundary")
}

pub fn tabular_smote(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let test = load_split(&layout, "test.csv")?;
    let boundary = load_boundary(&layout, &test)?;
    let minority = boundary.class_counts().into_iter().min().unwrap_or(0);
    let dir = layout.smote();
    fresh_dir(&dir)?;
    let out = if minority < 2 {
        log::warn!("boundary minority class has {minority} rows; SMOTE skipped, boundary rows used as they are");
        boundary
    } else {
        let mut k = cfg.tabular.smote_k;
        if k >= minority {
            k = minority - 1;
            log::warn!("SMOTE k reduced from {} to {k}: the minority class has {minority} rows", cfg.tabular.smote_k);
        }
        smote(&boundary, &SmoteConfig { k, seed: cfg.seed, ..Default::default() }).context("SMOTE")?.table
    };
    write_table_csv(&out, &dir.join("smote.csv"), None).context("smote.csv")?;
    Ok(vec![dir])
}

pub fn tabular_gan_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let test = load_split(&layout, "test.csv")?;
    let boundary = load_boundary(&layout, &test)?;
    let gan = train_tabular_gan(&boundary, &cfg.tabular.gan).context("GAN training")?;
    let dir = layout.gan();
    fresh_dir(&dir)?;
    gan.save(&dir.join("gan.advf")).context("gan.advf")?;
    let mut log = String::from("epoch,generator,discriminator\n");
    for (i, e) in gan.log().iter().enumerate() {
        log.push_str(&format!("{},{},{}\n", i + 1, e.generator, e.discriminator));
    }
    std::fs::write(dir.join("losses.csv"), log).context("losses.csv")?;
    Ok(vec![dir])
}

/// GAN rows needed so they make up `gan_fraction` of the attack set.
pub fn gan_rows(smote_rows: usize, gan_fraction: f64) -> usize {
    (smote_rows as f64 * gan_fraction / (1.0 - gan_fraction)).round() as usize
}

pub fn tabular_gan_sample(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let test = load_split(&layout, "test.csv")?;
    let smote_out = load_table_like(&layout.smote().join("smote.csv"), &test, "SMOTE output", "tabular smote")?;
    let path = layout.gan().join("gan.advf");
    need(&path, "GAN model", "tabular gan-train")?;
    let gan = GanModel::load(&path).context(path.display())?;
    let n = gan_rows(smote_out.len(), cfg.tabular.gan_fraction);
    let rows = sample_gan(&gan, n, cfg.seed).context("GAN sampling")?;
    let dir = layout.gan_sample();
    fresh_dir(&dir)?;
    write_table_csv(&rows, &dir.join("gan_samples.csv"), None).context("gan_samples.csv")?;
    Ok(vec![dir])
}

pub fn tabular_attack_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let models = load_models(&layout)?;
    let test = load_split(&layout, "test.csv")?;
    let smote_out = load_table_like(&layout.smote().join("smote.csv"), &test, "SMOTE output", "tabular smote")?;
    let gan_out =
        load_table_like(&layout.gan_sample().join("gan_samples.csv"), &test, "GAN sample", "tabular gan-sample")?;
    let t = &cfg.tabular;
    let set = build_attack_set(&smote_out, &gan_out, t.labeling, cfg.seed).context("attack set")?;
    // The GAN settings in effect when it was trained, not the current ones.
    let gan_json = layout.gan().join("gan.json");
    need(&gan_json, "GAN model", "tabular gan-train")?;
    let gan: serde_json::Value = read_json(&gan_json)?;
    let attack = json!({
        "method": "smote+gan",
        "smote_k": t.smote_k,
        "gan_fraction": t.gan_fraction,
        "labeling": t.labeling,
        "mix_test": t.mix_test,
        "gan": gan["config"],
        "smote_rows": smote_out.len(),
        "gan_rows": gan_out.len(),
    });
    let refs: Vec<&TreeEnsembleModel> = models.iter().collect();
    let reports = evaluate_tabular_attack(&refs, &test, &set.table, t.mix_test, attack).context("evaluation")?;
    let dir = layout.tabular_attack();
    fresh_dir(&dir)?;
    set.write_csv(&dir.join("attack_set.csv")).context("attack_set.csv")?;
    write_report(&reports, &dir).context("report")?;
    for r in &reports {
        log::info!("{}: accuracy {:.4} -> {:.4}", r.model, r.before.accuracy, r.after.accuracy);
    }
    Ok(vec![dir])
}

// ---- vision ----

fn load_face_split(layout: &Layout, part: &str) -> Result<FaceDataset> {
    let dir = layout.faces(part);
    let manifest = dir.join("manifest.csv");
    need(&manifest, "face data", "data synth")?;
    load_faces(&dir, &manifest).context(dir.display())
}

fn load_cnn(layout: &Layout) -> Result<CnnModel> {
    let path = layout.cnn().join("cnn.advf");
    need(&path, "CNN model", "vision train")?;
    CnnModel::load(&path).context(path.display())
}

pub fn vision_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let train = load_face_split(&layout, "train")?;
    let test = load_face_split(&layout, "test")?;
    let model = train_cnn(&train, &cfg.vision.cnn).context("CNN training")?;
    let dir = layout.cnn();
    fresh_dir(&dir)?;
    model.save(&dir.join("cnn.advf")).context("cnn.advf")?;
    let mut log = String::from("epoch,loss,accuracy\n");
    for (i, e) in model.log.iter().enumerate() {
        log.push_str(&format!("{},{},{}\n", i + 1, e.loss, e.accuracy));
    }
    std::fs::write(dir.join("training.csv"), log).context("training.csv")?;
    let acc = model.accuracy(&test).context("evaluation")?;
    log::info!("CNN clean test accuracy {acc:.4}");
    write_json(&dir.join("test_accuracy.json"), &json!({ "accuracy": acc }))?;
    Ok(vec![dir])
}

fn masks_for(cfg: &RunConfig, model: &CnnModel, test: &FaceDataset, n: usize) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
    let idx: Vec<usize> = (0..n).collect();
    let subset = test.select(&idx);
    let heatmaps = gradcam_batch(model, subset.images(), subset.labels()).context("GradCAM")?;
    heatmaps
        .iter()
        .map(|h| {
            let mask = threshold_mask(h, cfg.vision.attack.threshold).context("mask")?;
            Ok((h.values.clone(), mask.as_f32()))
        })
        .collect()
}

pub fn vision_gradcam(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let model = load_cnn(&layout)?;
    let test = load_face_split(&layout, "test")?;
    let heatmaps = gradcam_batch(&model, test.images(), test.labels()).context("GradCAM")?;
    let dir = layout.gradcam();
    fresh_dir(&dir)?;
    let side = test.side;
    let mut counts = String::from("index,true,mask_pixels\n");
    for (i, h) in heatmaps.iter().enumerate() {
        let mask = threshold_mask(h, cfg.vision.attack.threshold).context("mask")?;
        counts.push_str(&format!("{i},{},{}\n", test.labels()[i], mask.count()));
        if i < cfg.vision.export_images {
            write_pgm(&dir.join(format!("heatmap_{i:03}.pgm")), side, side, &h.values).context("heatmap")?;
            write_pgm(&dir.join(format!("mask_{i:03}.pgm")), side, side, &mask.as_f32()).context("mask")?;
        }
    }
    std::fs::write(dir.join("masks.csv"), counts).context("masks.csv")?;
    Ok(vec![dir])
}

/// Runs one method and writes its records and sample images into `dir`.
fn run_vision_attack(
    cfg: &RunConfig,
    model: &CnnModel,
    test: &FaceDataset,
    method: AttackMethod,
    dir: &Path,
) -> Result<AttackReport> {
    let v = &cfg.vision;
    let out = evaluate_vision_attack(model, test, method, &v.attack, v.target_rule).context(method.as_str())?;
    fresh_dir(dir)?;
    write_image_records(&out.results, &dir.join("records.jsonl")).context("records.jsonl")?;
    let n = v.export_images.min(out.results.len());
    let masks = if method == AttackMethod::Targeted { masks_for(cfg, model, test, n)? } else { Vec::new() };
    let side = test.side;
    for (i, r) in out.results.iter().take(n).enumerate() {
        write_pgm(&dir.join(format!("perturbed_{i:03}.pgm")), side, side, &r.perturbed).context("image")?;
        let shifted: Vec<f32> = r.delta.iter().map(|d| d + 0.5).collect();
        write_pgm(&dir.join(format!("delta_{i:03}.pgm")), side, side, &shifted).context("image")?;
        if let Some((_, mask)) = masks.get(i) {
            write_pgm(&dir.join(format!("mask_{i:03}.pgm")), side, side, mask).context("image")?;
        }
    }
    let mut report = out.report;
    report.model = format!("cnn-{}", method.as_str());
    Ok(report)
}

pub fn vision_attack(cfg: &RunConfig, method: AttackMethod) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let model = load_cnn(&layout)?;
    let test = load_face_split(&layout, "test")?;
    let dir = layout.vision_attack(method);
    let report = run_vision_attack(cfg, &model, &test, method, &dir)?;
    write_report(&[report], &dir).context("report")?;
    Ok(vec![dir])
}

pub fn vision_attack_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let model = load_cnn(&layout)?;
    let test = load_face_split(&layout, "test")?;
    let dir = layout.vision_eval();
    fresh_dir(&dir)?;
    let reports = cfg
        .vision
        .methods
        .iter()
        .map(|&m| run_vision_attack(cfg, &model, &test, m, &dir.join(m.as_str())))
        .collect::<Result<Vec<_>>>()?;
    write_report(&reports, &dir).context("report")?;
    Ok(vec![dir])
}

// ---- report ----

/// Collects the tabular and vision evaluation reports into the top-level
/// `report.json` and `summary.csv`.
pub fn report(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out_dir);
    let sources = [layout.tabular_attack().join(REPORT_FILE), layout.vision_eval().join(REPORT_FILE)];
    let mut all = Vec::new();
    for s in sources.iter().filter(|s| s.exists()) {
        all.extend(read_report(s).context(s.display())?);
    }
    if all.is_empty() {
        return Err(CliError::Validation(format!(
            "missing evaluation artifacts {} and {}; run `advforge tabular attack-eval` or `advforge vision attack-eval` first",
            sources[0].display(),
            sources[1].display()
        )));
    }
    write_report(&all, layout.root()).context("report")?;
    Ok(vec![layout.root().join(REPORT_FILE), layout.root().join(SUMMARY_FILE)])
}

// ---- demo ----

/// Both pipelines end to end on synthetic data.
pub fn demo(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let stages: [fn(&RunConfig) -> Result<Vec<PathBuf>>; 11] = [
        |c| data_synth(c, DataPart::All),
        tabular_train,
        tabular_boundary,
        tabular_smote,
        tabular_gan_train,
        tabular_gan_sample,
        tabular_attack_eval,
        vision_train,
        vision_gradcam,
        vision_attack_eval,
        report,
    ];
    let mut produced = Vec::new();
    for stage in stages {
        produced.extend(stage(cfg)?);
    }
    Ok(produced)
}
