use std::ffi::OsString;
use std::path::PathBuf;

use advforge::attacks::{AttackMethod, Norm, TargetRule};
use advforge::oversample::Labeling;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest;
use crate::pipeline::{self, DataPart};

#[derive(Debug, Parser)]
#[command(name = "advforge", version, about = "Adversarial attack pipelines for tabular tree ensembles and CNN face recognizers")]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (config key `out_dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Global seed; wins over ADVFORGE_SEED and the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create or import the datasets.
    Data {
        #[command(subcommand)]
        action: DataCmd,
    },
    /// Fraud pipeline: trees, boundary points, SMOTE, GAN, attack evaluation.
    Tabular {
        #[command(subcommand)]
        action: TabularCmd,
    },
    /// Face pipeline: CNN, GradCAM and image attacks.
    Vision {
        #[command(subcommand)]
        action: VisionCmd,
    },
    /// Merge the evaluation reports into report.json and summary.csv.
    Report,
    /// Run both pipelines on synthetic data.
    Demo,
    /// Print the effective configuration as JSON.
    PrintConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PartArg {
    All,
    Tabular,
    Vision,
}

#[derive(Debug, Subcommand)]
enum DataCmd {
    /// Synthetic fraud table and face set.
    Synth {
        #[arg(long, value_enum, default_value = "all")]
        only: PartArg,
        /// Rows in the fraud table before balancing.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        fraud_rate: Option<f64>,
    },
    /// A labelled CSV with a JSON schema, and/or a directory of 64x64 PGM faces.
    Load {
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        faces_dir: Option<PathBuf>,
        #[arg(long)]
        faces_manifest: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LabelingArg {
    Carry,
    BoundaryTruth,
}

#[derive(Debug, Subcommand)]
enum TabularCmd {
    /// Decision tree, random forest and gradient boosting.
    Train,
    /// Test rows every model misclassifies.
    Boundary,
    /// Balance the boundary set with SMOTE.
    Smote {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train the conditional GAN on the boundary set.
    GanTrain {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Draw GAN rows for the attack set.
    GanSample {
        #[arg(long)]
        gan_fraction: Option<f64>,
    },
    /// Build the attack set and evaluate the models before and after.
    AttackEval {
        #[arg(long)]
        gan_fraction: Option<f64>,
        /// Evaluate attack rows together with the clean test rows.
        #[arg(long)]
        mix_test: bool,
        #[arg(long, value_enum)]
        labeling: Option<LabelingArg>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Fgsm,
    Targeted,
    Cw,
}

impl From<MethodArg> for AttackMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fgsm => AttackMethod::Fgsm,
            MethodArg::Targeted => AttackMethod::Targeted,
            MethodArg::Cw => AttackMethod::Cw,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    Linf,
}

#[derive(Debug, Args)]
struct AttackFlags {
    /// FGSM strength.
    #[arg(long)]
    epsilon: Option<f32>,
    /// Targeted-attack iterations.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f32>,
    /// Weight of the original-class term in the targeted loss.
    #[arg(long)]
    lambda: Option<f32>,
    /// GradCAM heatmap threshold.
    #[arg(long)]
    threshold: Option<f32>,
    /// CW trade-off constant.
    #[arg(long)]
    c: Option<f32>,
    #[arg(long)]
    kappa: Option<f32>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long)]
    cw_steps: Option<usize>,
    #[arg(long)]
    cw_step_size: Option<f32>,
    /// Attack every image towards this class instead of the next class.
    #[arg(long)]
    target_class: Option<usize>,
    /// Draw targets at random with this seed.
    #[arg(long, conflicts_with = "target_class")]
    random_targets: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum VisionCmd {
    /// Train the CNN.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Heatmaps and masks for the true class of each test image.
    Gradcam {
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// One attack over the test set.
    Attack {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Every configured method, with a combined report.
    AttackEval {
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Option<Vec<MethodArg>>,
        #[command(flatten)]
        flags: AttackFlags,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl AttackFlags {
    fn apply(self, cfg: &mut RunConfig) {
        let a = &mut cfg.vision.attack;
        set(&mut a.epsilon, self.epsilon);
        set(&mut a.steps, self.steps);
        set(&mut a.step_size, self.step_size);
        set(&mut a.lambda_orig, self.lambda);
        set(&mut a.threshold, self.threshold);
        set(&mut a.c, self.c);
        set(&mut a.kappa, self.kappa);
        set(
            &mut a.norm,
            self.norm.map(|n| match n {
                NormArg::L2 => Norm::L2,
                NormArg::Linf => Norm::Linf,
            }),
        );
        set(&mut a.cw_steps, self.cw_steps);
        set(&mut a.cw_step_size, self.cw_step_size);
        set(&mut cfg.vision.target_rule, self.target_class.map(|class| TargetRule::Fixed { class }));
        set(&mut cfg.vision.target_rule, self.random_targets.map(|seed| TargetRule::RandomSeeded { seed }));
    }
}

/// What to run once the configuration is settled.
enum Job {
    DataSynth(DataPart),
    DataLoad,
    Stage(&'static str, fn(&RunConfig) -> Result<Vec<PathBuf>>),
    VisionAttack(AttackMethod),
    Demo,
    PrintConfig,
}

fn plan(command: Command, cfg: &mut RunConfig) -> Job {
    match command {
        Command::Data { action: DataCmd::Synth { only, rows, fraud_rate } } => {
            set(&mut cfg.data.fraud.n, rows);
            set(&mut cfg.data.fraud.fraud_rate, fraud_rate);
            Job::DataSynth(match only {
                PartArg::All => DataPart::All,
                PartArg::Tabular => DataPart::Tabular,
                PartArg::Vision => DataPart::Vision,
            })
        }
        Command::Data { action: DataCmd::Load { csv, schema, faces_dir, faces_manifest } } => {
            let d = &mut cfg.data;
            d.csv = csv.or(d.csv.take());
            d.schema = schema.or(d.schema.take());
            d.faces_dir = faces_dir.or(d.faces_dir.take());
            d.faces_manifest = faces_manifest.or(d.faces_manifest.take());
            Job::DataLoad
        }
        Command::Tabular { action } => match action {
            TabularCmd::Train => Job::Stage("tabular train", pipeline::tabular_train),
            TabularCmd::Boundary => Job::Stage("tabular boundary", pipeline::tabular_boundary),
            TabularCmd::Smote { k } => {
                set(&mut cfg.tabular.smote_k, k);
                Job::Stage("tabular smote", pipeline::tabular_smote)
            }
            TabularCmd::GanTrain { epochs, batch } => {
                set(&mut cfg.tabular.gan.epochs, epochs);
                set(&mut cfg.tabular.gan.batch, batch);
                Job::Stage("tabular gan-train", pipeline::tabular_gan_train)
            }
            TabularCmd::GanSample { gan_fraction } => {
                set(&mut cfg.tabular.gan_fraction, gan_fraction);
                Job::Stage("tabular gan-sample", pipeline::tabular_gan_sample)
            }
            TabularCmd::AttackEval { gan_fraction, mix_test, labeling } => {
                set(&mut cfg.tabular.gan_fraction, gan_fraction);
                cfg.tabular.mix_test |= mix_test;
                set(
                    &mut cfg.tabular.labeling,
                    labeling.map(|l| match l {
                        LabelingArg::Carry => Labeling::Carry,
                        LabelingArg::BoundaryTruth => Labeling::BoundaryTruth,
                    }),
                );
                Job::Stage("tabular attack-eval", pipeline::tabular_attack_eval)
            }
        },
        Command::Vision { action } => match action {
            VisionCmd::Train { epochs, batch, lr } => {
                set(&mut cfg.vision.cnn.epochs, epochs);
                set(&mut cfg.vision.cnn.batch, batch);
                set(&mut cfg.vision.cnn.lr, lr);
                Job::Stage("vision train", pipeline::vision_train)
            }
            VisionCmd::Gradcam { threshold } => {
                set(&mut cfg.vision.attack.threshold, threshold);
                Job::Stage("vision gradcam", pipeline::vision_gradcam)
            }
            VisionCmd::Attack { method, flags } => {
                flags.apply(cfg);
                Job::VisionAttack(method.into())
            }
            VisionCmd::AttackEval { methods, flags } => {
                flags.apply(cfg);
                set(&mut cfg.vision.methods, methods.map(|m| m.into_iter().map(Into::into).collect()));
                Job::Stage("vision attack-eval", pipeline::vision_attack_eval)
            }
        },
        Command::Report => Job::Stage("report", pipeline::report),
        Command::Demo => Job::Demo,
        Command::PrintConfig => Job::PrintConfig,
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_env()?;
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.out_dir, cli.out_dir);
    let job = plan(cli.command, &mut cfg);
    cfg.propagate_seed();
    cfg.validate()?;

    let (name, produced) = match job {
        Job::PrintConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            return Ok(());
        }
        Job::DataSynth(part) => ("data synth".to_owned(), pipeline::data_synth(&cfg, part)?),
        Job::DataLoad => ("data load".to_owned(), pipeline::data_load(&cfg)?),
        Job::Stage(name, f) => (name.to_owned(), f(&cfg)?),
        Job::VisionAttack(m) => (format!("vision attack {}", m.as_str()), pipeline::vision_attack(&cfg, m)?),
        Job::Demo => ("demo".to_owned(), pipeline::demo(&cfg)?),
    };
    let path = manifest::record(&cfg, &name, &produced)?;
    println!("{name}: done, manifest {}", path.display());
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

