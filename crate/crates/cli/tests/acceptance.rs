//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The desk-scale criteria run the real `advforge demo` binary; criteria 6,
//! 7, 8 and 10 read the artifacts of the first demo run and criterion 9
//! compares it byte for byte with a second run.

#[path = "../../core/tests/support/gan_toy.rs"]
mod gan_toy;
#[path = "../../core/tests/support/knn_oracle.rs"]
mod knn_oracle;
#[path = "../../core/tests/support/model_oracle.rs"]
mod model_oracle;
#[path = "../../core/tests/support/reference.rs"]
mod reference;
#[path = "../../core/tests/support/split_oracle.rs"]
mod split_oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use advforge::attacks::{cw_attack, fgsm, AttackParams};
use advforge::metrics::{metrics, read_report, AttackReport, ConfusionCounts, REPORT_FILE, SUMMARY_FILE};
use advforge::oversample::{k_nearest, sample_gan, smote, train_tabular_gan, GanConfig, SmoteConfig};
use advforge::tabular::{read_table_csv, ColumnSpec, EncoderMap, Schema, Table};
use advforge::trees::{train_decision_tree, DecisionTreeConfig};
use advforge::vision::{load_faces, CnnArch, CnnModel, Layer};
use advforge_cli::pipeline::{self, DataPart, Layout};
use advforge_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs() < limit_s, || format!("took {:.0}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

// ---- 1: metric identity ----

fn c1_metric_identity() -> Outcome {
    let acc = |c: ConfusionCounts| metrics(c, &[], &[]).accuracy;
    let dt_before = acc(ConfusionCounts::new(1822, 1827, 165, 186));
    ensure((dt_before - 0.91225).abs() <= 1e-9, || format!("decision tree before {dt_before}"))?;
    let dt_after = acc(ConfusionCounts::new(1211, 1535, 1074, 174));
    ensure((dt_after - 0.68753).abs() <= 1e-4, || format!("decision tree after {dt_after}"))?;
    let rf = acc(ConfusionCounts::new(1304, 1177, 1432, 81));
    ensure((rf * 100.0 - 62.11).abs() <= 0.05, || format!("random forest after {rf}"))?;
    let xgb = acc(ConfusionCounts::new(1255, 1379, 1230, 130));
    ensure((xgb * 100.0 - 65.94).abs() <= 0.05, || format!("boosting after {xgb}"))?;
    Ok(format!("{dt_before:.5} {dt_after:.5} {rf:.5} {xgb:.5}"))
}

// ---- 2: gradients ----

fn c2_gradients() -> Outcome {
    let (res, elapsed) = timed(|| {
        let mut worst = 0.0f64;
        let mut counts = Vec::new();
        for seed in 0..5 {
            for (what, c) in [("cnn", model_oracle::check_cnn(seed, 20)), ("discriminator", model_oracle::check_discriminator(seed, 25))] {
                ensure(c.checked >= 100, || format!("{what} seed {seed}: only {} coordinates", c.checked))?;
                ensure(c.failures.is_empty(), || format!("{what} seed {seed}: {:?}", c.failures))?;
                worst = worst.max(c.worst);
                counts.push(c.checked);
            }
        }
        Ok::<_, String>((worst, counts.iter().min().copied().unwrap_or(0)))
    });
    let (worst, min_checked) = res?;
    within(elapsed, 60)?;
    Ok(format!("5 seeds, >= {min_checked} coordinates per model and seed, worst relative error {worst:.2e}"))
}

// ---- 3: SMOTE ----

fn random_table(rng: &mut ChaCha8Rng, n: usize, w: usize, minority: usize) -> Table {
    let cats: Vec<Option<usize>> = (0..w).map(|_| rng.random_bool(0.3).then(|| rng.random_range(2..6))).collect();
    let cols = cats
        .iter()
        .enumerate()
        .map(|(i, c)| if c.is_some() { ColumnSpec::categorical(format!("c{i}")) } else { ColumnSpec::continuous(format!("x{i}")) })
        .collect();
    let mut x = Vec::with_capacity(n * w);
    for _ in 0..n {
        for c in &cats {
            x.push(match c {
                Some(card) => rng.random_range(0..*card) as f32,
                None => rng.random_range(-8i32..8) as f32 * 0.25,
            });
        }
    }
    let mut labels = vec![0u8; n];
    for i in rand::seq::index::sample(rng, n, minority) {
        labels[i] = 1;
    }
    Table::new(Schema::new(cols, "y").unwrap(), x, labels, None).unwrap()
}

fn c3_smote() -> Outcome {
    let (res, elapsed) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let mut synthetic = 0;
        for trial in 0..20 {
            let n = rng.random_range(20..=500);
            let w = rng.random_range(1..=8);
            let minority = rng.random_range(7..n / 2);
            let t = random_table(&mut rng, n, w, minority);
            let k = rng.random_range(1..=5);
            let out = smote(&t, &SmoteConfig { k, seed: trial, ..Default::default() }).map_err(|e| e.to_string())?;
            ensure(out.table.class_counts() == [n - minority; 2], || format!("trial {trial}: counts {:?}", out.table.class_counts()))?;
            ensure(&out.table.features()[..t.features().len()] == t.features(), || format!("trial {trial}: originals changed"))?;

            let wide: Vec<Vec<f64>> = t.rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let members: Vec<usize> = (0..n).filter(|&i| t.label(i) == 1).collect();
            let oracle = knn_oracle::all_pairs_knn(&wide, &members, k);
            ensure(k_nearest(&t, &members, k) == oracle, || format!("trial {trial}: neighbour sets differ"))?;
            for (s, rec) in out.synthetic.iter().enumerate() {
                let pos = members.iter().position(|&m| m == rec.parent).ok_or("parent outside minority")?;
                ensure(oracle[pos].contains(&rec.neighbor), || format!("trial {trial}: neighbour not among the k nearest"))?;
                let row = out.table.row(n + s);
                let (a, b) = (t.row(rec.parent), t.row(rec.neighbor));
                for c in 0..w {
                    let (lo, hi) = (a[c].min(b[c]), a[c].max(b[c]));
                    ensure(lo <= row[c] && row[c] <= hi, || format!("trial {trial}: column {c} outside its segment"))?;
                }
                synthetic += 1;
            }
        }
        // boundary counts at full-data scale
        let t = random_table(&mut rng, 153, 6, 14);
        let out = smote(&t, &SmoteConfig::default()).map_err(|e| e.to_string())?;
        ensure(out.table.class_counts() == [139, 139], || format!("14/139 gave {:?}", out.table.class_counts()))?;
        Ok::<_, String>(synthetic)
    });
    let synthetic = res?;
    within(elapsed, 30)?;
    Ok(format!("20 tables, {synthetic} synthetic rows checked, 14+139 -> 139/139"))
}

// ---- 4: tree splits ----

fn c4_tree_splits() -> Outcome {
    let (res, elapsed) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut done = 0;
        while done < 20 {
            let n = rng.random_range(4..=50);
            let w = rng.random_range(1..=4);
            let grid: Vec<bool> = (0..w).map(|_| rng.random_bool(0.5)).collect();
            let mut x = Vec::with_capacity(n * w);
            for _ in 0..n {
                for &g in &grid {
                    x.push(if g { rng.random_range(0..4) as f32 } else { rng.random_range(-2.0f32..2.0) });
                }
            }
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
            let schema = Schema::new((0..w).map(|i| ColumnSpec::continuous(format!("x{i}"))).collect(), "y").unwrap();
            let t = Table::new(schema, x, labels, None).unwrap();
            let min_leaf = rng.random_range(1..=3);
            if t.len() < 2 * min_leaf || t.class_counts().contains(&0) {
                continue;
            }
            let m = train_decision_tree(&t, &DecisionTreeConfig { max_depth: 1, min_leaf, seed: 0 }).map_err(|e| e.to_string())?;
            let oracle = split_oracle::best_split(t.features(), w, t.labels(), min_leaf).map(|o| (o.feature, o.threshold));
            ensure(m.trees[0].split() == oracle, || format!("table {done}: split {:?}, oracle {oracle:?}", m.trees[0].split()))?;
            done += 1;
        }
        Ok::<_, String>(())
    });
    res?;
    within(elapsed, 30)?;
    Ok("20 tables, every root split equals the exhaustive Gini optimum".into())
}

// ---- 5: tabular pipeline ----

fn tabular_run(seed: u64, out: &Path) -> Result<Vec<AttackReport>, String> {
    let mut cfg = RunConfig { seed, out_dir: out.to_owned(), ..Default::default() };
    cfg.propagate_seed();
    cfg.validate().map_err(|e| e.to_string())?;
    let stages: [fn(&RunConfig) -> advforge_cli::Result<Vec<PathBuf>>; 7] = [
        |c| pipeline::data_synth(c, DataPart::Tabular),
        pipeline::tabular_train,
        pipeline::tabular_boundary,
        pipeline::tabular_smote,
        pipeline::tabular_gan_train,
        pipeline::tabular_gan_sample,
        pipeline::tabular_attack_eval,
    ];
    for stage in stages {
        stage(&cfg).map_err(|e| e.to_string())?;
    }
    read_report(&Layout::new(out).tabular_attack().join(REPORT_FILE)).map_err(|e| e.to_string())
}

fn c5_tabular_drop() -> Outcome {
    let mut lines = Vec::new();
    for seed in 1..=5 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (reports, elapsed) = timed(|| tabular_run(seed, dir.path()));
        let reports = reports?;
        within(elapsed, 600)?;
        ensure(reports.len() == 3, || format!("seed {seed}: {} reports", reports.len()))?;
        for r in &reports {
            ensure(r.before.accuracy >= 0.85, || format!("seed {seed} {}: before accuracy {:.4}", r.model, r.before.accuracy))?;
            ensure(r.accuracy_drop() >= 0.15, || format!("seed {seed} {}: drop {:.4}", r.model, r.accuracy_drop()))?;
        }
        let min_before = reports.iter().map(|r| r.before.accuracy).fold(1.0, f64::min);
        let min_drop = reports.iter().map(|r| r.accuracy_drop()).fold(1.0, f64::min);
        lines.push(format!("seed {seed}: min before {min_before:.3}, min drop {min_drop:.3} ({:.0}s)", elapsed.as_secs_f64()));
    }
    Ok(lines.join("; "))
}

// ---- demo runs ----

fn run_demo(out: &Path) -> Result<Duration, String> {
    let (status, elapsed) = timed(|| {
        Command::new(env!("CARGO_BIN_EXE_advforge"))
            .args(["--out-dir", out.to_str().unwrap(), "--seed", "7", "demo"])
            .env_remove("ADVFORGE_SEED")
            .env("RUST_LOG", "warn")
            .status()
    });
    let status = status.map_err(|e| e.to_string())?;
    ensure(status.success(), || format!("demo exited with {status}"))?;
    Ok(elapsed)
}

struct DemoArtifacts {
    out: PathBuf,
    elapsed: Duration,
}

impl DemoArtifacts {
    fn layout(&self) -> Layout {
        Layout::new(&self.out)
    }

    fn model(&self) -> Result<CnnModel, String> {
        CnnModel::load(&self.layout().cnn().join("cnn.advf")).map_err(|e| e.to_string())
    }

    fn test_faces(&self) -> Result<advforge::vision::FaceDataset, String> {
        let dir = self.layout().faces("test");
        load_faces(&dir, &dir.join("manifest.csv")).map_err(|e| e.to_string())
    }
}

// ---- 6: vision pipeline ----

fn c6_vision_drop(demo: &DemoArtifacts) -> Outcome {
    within(demo.elapsed, 900)?;
    let reports = read_report(&demo.layout().vision_eval().join(REPORT_FILE)).map_err(|e| e.to_string())?;
    let r = reports.iter().find(|r| r.model == "cnn-targeted").ok_or("no targeted report")?;
    let success = *r.extra.get("targeted_success_rate").ok_or("no success rate")?;
    let detail = format!(
        "clean {:.4}, attacked {:.4}, drop {:.1} pp, target success {:.1}%",
        r.before.accuracy,
        r.after.accuracy,
        100.0 * r.accuracy_drop(),
        100.0 * success
    );
    ensure(r.attack["params"]["steps"] == 500 && r.attack["params"]["threshold"] == 0.4, || "non-default attack".into())?;
    ensure(r.before.accuracy >= 0.9, || detail.clone())?;
    ensure(r.accuracy_drop() >= 0.25, || detail.clone())?;
    ensure(success >= 0.5, || detail.clone())?;
    Ok(detail)
}

// ---- 7: FGSM ----

fn c7_fgsm(demo: &DemoArtifacts) -> Outcome {
    let (res, elapsed) = timed(|| {
        let model = demo.model()?;
        let test = demo.test_faces()?;
        let labels = test.labels();
        let mut accs = Vec::new();
        for eps in [0.0f32, 0.02, 0.05, 0.1, 0.2] {
            let res = fgsm(&model, test.images(), labels, eps).map_err(|e| e.to_string())?;
            for (i, r) in res.iter().enumerate() {
                if eps == 0.0 {
                    ensure(r.perturbed == test.image(i) && r.after == r.before, || format!("image {i} moved at eps 0"))?;
                }
                ensure(r.delta.iter().all(|d| d.abs() <= eps), || format!("image {i}: |eta| > {eps}"))?;
                ensure(r.linf <= eps as f64 + 1e-6, || format!("image {i}: linf {} > {eps}", r.linf))?;
            }
            accs.push(res.iter().filter(|r| r.after == r.true_label).count() as f64 / res.len() as f64);
        }
        for w in accs.windows(2) {
            ensure(w[1] <= w[0] + 0.02, || format!("accuracy rose beyond 2 pp: {accs:?}"))?;
        }
        Ok::<_, String>(accs)
    });
    let accs = res?;
    within(elapsed, 300)?;
    Ok(format!("accuracy over eps 0/.02/.05/.1/.2: {}", accs.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(" ")))
}

// ---- 8: CW ----

fn c8_cw(demo: &DemoArtifacts) -> Outcome {
    let (res, elapsed) = timed(|| {
        // Already the target with zero margin needed: nothing to do.
        let model = demo.model()?;
        let test = demo.test_faces()?.select(&(0..16).collect::<Vec<_>>());
        let pred = model.predict(test.images()).map_err(|e| e.to_string())?;
        let p = AttackParams { cw_steps: 20, ..Default::default() };
        for (i, r) in cw_attack(&model, test.images(), test.labels(), &pred, &p).map_err(|e| e.to_string())?.iter().enumerate() {
            ensure(r.success && r.l2 == 0.0 && r.delta.iter().all(|&d| d == 0.0), || format!("image {i}: delta moved"))?;
        }

        // Two-class linear logits on 4x4 inputs: the smallest successful L2
        // change is the distance to the hyperplane.
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        let mut worst = 0.0f64;
        let mut cases = 0;
        while cases < 8 {
            let w: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let gap: f64 = rng.random_range(0.3..1.5);
            let dw: Vec<f64> = (0..16).map(|q| w[q * 2] as f64 - w[q * 2 + 1] as f64).collect();
            let norm = dw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dist = gap / norm;
            if norm <= 0.5 || dw.iter().any(|v| (v / norm * dist).abs() >= 0.45) {
                continue;
            }
            let mut m = CnnModel::new(CnnArch { side: 4, layers: vec![Layer::Flatten, Layer::Dense { units: 2 }] }, 0)
                .map_err(|e| e.to_string())?;
            m.params.get_mut("l1.weight").unwrap().data_mut().copy_from_slice(&w);
            let raw: f64 = dw.iter().map(|v| v * 0.5).sum();
            m.params.get_mut("l1.bias").unwrap().data_mut().copy_from_slice(&[(gap - raw) as f32, 0.0]);
            let p = AttackParams { c: 10.0, cw_steps: 3000, cw_step_size: 1e-3, ..Default::default() };
            let r = &cw_attack(&m, &[0.5; 16], &[0], &[1], &p).map_err(|e| e.to_string())?[0];
            ensure(r.success, || format!("toy {cases}: no success"))?;
            let rel = (r.l2 - dist).abs() / dist;
            ensure(rel <= 0.05, || format!("toy {cases}: l2 {} vs distance {dist}", r.l2))?;
            worst = worst.max(rel);
            cases += 1;
        }
        Ok::<_, String>(worst)
    });
    let worst = res?;
    within(elapsed, 60)?;
    Ok(format!("delta = 0 on 16 satisfied inputs; 8 linear toys within {:.2}% of the hyperplane distance", 100.0 * worst))
}

// ---- 9: determinism ----

fn c9_determinism(first: &DemoArtifacts, second: &Path) -> Outcome {
    let elapsed = run_demo(second)?;
    within(first.elapsed, 1200)?;
    within(elapsed, 1200)?;
    for f in [REPORT_FILE, SUMMARY_FILE] {
        let a = std::fs::read(first.out.join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(second.join(f)).map_err(|e| e.to_string())?;
        ensure(!a.is_empty() && a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!(
        "report.json and summary.csv identical; demo took {:.0}s and {:.0}s",
        first.elapsed.as_secs_f64(),
        elapsed.as_secs_f64()
    ))
}

// ---- 10: GAN ----

fn c10_gan(demo: &DemoArtifacts) -> Outcome {
    let (res, elapsed) = timed(|| {
        let data = demo.layout().tabular_data();
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| e.to_string());
        let schema: Schema = serde_json::from_str(&read(&data.join("schema.json"))?).map_err(|e| e.to_string())?;
        let encoder: EncoderMap = serde_json::from_str(&read(&data.join("encoder.json"))?).map_err(|e| e.to_string())?;
        let boundary = read_table_csv(&demo.layout().boundary().join("boundary.csv"), &schema, Some(&encoder))
            .map_err(|e| e.to_string())?;
        let gan = train_tabular_gan(&boundary, &GanConfig { seed: 7, ..Default::default() }).map_err(|e| e.to_string())?;
        ensure(gan.log().len() == 100, || format!("{} epochs logged", gan.log().len()))?;
        ensure(gan.log().iter().all(|e| e.generator.is_finite() && e.discriminator.is_finite()), || "non-finite loss".into())?;

        let toy = gan_toy::two_gaussian_toy(2000, 11);
        let gan = train_tabular_gan(&toy, &GanConfig { seed: 3, ..Default::default() }).map_err(|e| e.to_string())?;
        let s = sample_gan(&gan, 4000, 5).map_err(|e| e.to_string())?;
        let mut errs = Vec::new();
        for c in 0..2 {
            let mean = |t: &Table| t.rows().map(|r| r[c] as f64).sum::<f64>() / t.len() as f64;
            let err = (mean(&toy) - mean(&s)).abs();
            ensure(err < 0.25, || format!("column {c}: marginal mean off by {err:.3}"))?;
            errs.push(err);
        }
        Ok::<_, String>((boundary.len(), errs))
    });
    let (rows, errs) = res?;
    within(elapsed, 300)?;
    Ok(format!("100 finite epochs on the {rows}-row boundary set; toy mean errors {:.3}, {:.3}", errs[0], errs[1]))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let (o, elapsed) = timed(|| guarded(f));
        let secs = elapsed.as_secs_f64();
        match o {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.1}s): {why}");
            }
        }
    };

    report(1, "metric identities on fixed confusion counts", &mut c1_metric_identity);
    report(2, "CNN and discriminator gradients vs finite differences", &mut c2_gradients);
    report(3, "SMOTE vs brute-force neighbours", &mut c3_smote);
    report(4, "tree splits vs exhaustive Gini", &mut c4_tree_splits);
    report(5, "tabular pipeline accuracy drop, seeds 1-5", &mut c5_tabular_drop);

    let first = scratch.path().join("demo-a");
    let demo = run_demo(&first).map(|elapsed| DemoArtifacts { out: first.clone(), elapsed });
    let with_demo = |f: fn(&DemoArtifacts) -> Outcome| {
        let demo = &demo;
        move || match demo {
            Ok(d) => f(d),
            Err(e) => Err(format!("demo failed: {e}")),
        }
    };
    report(6, "vision pipeline accuracy drop and target success", &mut with_demo(c6_vision_drop));
    report(7, "FGSM identity, bound and monotonicity", &mut with_demo(c7_fgsm));
    report(8, "CW analytic checks", &mut with_demo(c8_cw));
    let second = scratch.path().join("demo-b");
    report(9, "demo determinism", &mut || match &demo {
        Ok(d) => c9_determinism(d, &second),
        Err(e) => Err(format!("demo failed: {e}")),
    });
    report(10, "GAN finite losses and toy marginals", &mut with_demo(c10_gan));

    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
