//! The `mqc` command: corpus synthesis, training, evaluation and analysis.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mqc_core::dataset::{synthesize_corpus, CorpusConfig, LabelPolicy, Manifest, Split, Task};
use mqc_core::harness::{
    evaluate, export_activations, flag_suspect_labels, layer_discriminability, load_checkpoint, save_checkpoint, train,
    TrainConfig, DEFAULT_TAU,
};
use mqc_core::metrics::{jaccard_matrix, roc_csv, RocCurve};
use mqc_core::nn::gradcheck;
use mqc_core::nn::Architecture;
use mqc_core::pgm::Gray8;
use mqc_core::{dataset, Error};

/// Process outcome: 0 success, 1 runtime failure, 2 usage error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Failure,
    Usage,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Failure => 1,
            ExitStatus::Usage => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mqc",
    version,
    about = "Motion-artifact image quality classification pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a motion-corrupted phantom corpus and its manifest.
    Synth {
        /// Output directory (receives images/ and manifest.csv).
        #[arg(long)]
        out: PathBuf,
        /// Number of images.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Image side in pixels (power of two, >= 32).
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Shares of classes poor, diagnostic, excellent.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = dataset::DEFAULT_PROPORTIONS)]
        proportions: Vec<f64>,
        /// Probability that rater B moves a near-threshold image one class.
        #[arg(long, default_value_t = 0.15)]
        rater_noise: f64,
    },
    /// Train a classifier and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// convnet4 or resnet10.
        #[arg(long)]
        arch: Architecture,
        /// binary or three.
        #[arg(long)]
        task: Task,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Input side in pixels; must match the images.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Steps between curve points.
        #[arg(long, default_value_t = 100)]
        eval_interval: u64,
        /// Training labels: rater-a, rater-b or mean-round.
        #[arg(long, default_value = "rater-a")]
        labels: LabelPolicy,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split and write a metrics JSON.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// test or eval.
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        task: Task,
        /// Expected input size; must match the checkpoint when given.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value = "rater-a")]
        labels: LabelPolicy,
        #[arg(long)]
        out: PathBuf,
        /// ROC points CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Jaccard agreement matrix between rater A and rater B.
    Agreement {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-layer activation maps for one image.
    Activations {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output directory for layer<k>.pgm.
        #[arg(long)]
        out: PathBuf,
        /// Second image; also writes per-layer discriminability scores.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// List confidently contradicted labels.
    Suspects {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Minimum probability of the contradicting prediction, in (0.5, 1).
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value = "rater-a")]
        labels: LabelPolicy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of every layer and both networks.
    Gradcheck {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Random draws per check.
        #[arg(long, default_value_t = 20)]
        draws: usize,
    },
}

type CliResult<T = ()> = std::result::Result<T, Error>;

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn read_manifest(path: &Path) -> CliResult<Manifest> {
    Manifest::read(path)
}

/// Binary ROC as `threshold,fpr,tpr`; one-vs-rest curves with a leading
/// `class` column.
fn roc_bytes(curves: &[RocCurve]) -> CliResult<Vec<u8>> {
    if let [single] = curves {
        return roc_csv(&single.points);
    }
    let mut out = b"class,threshold,fpr,tpr\n".to_vec();
    for (class, curve) in curves.iter().enumerate() {
        let body = roc_csv(&curve.points)?;
        let text = String::from_utf8_lossy(&body);
        for line in text.lines().skip(1) {
            out.extend_from_slice(format!("{class},{line}\n").as_bytes());
        }
    }
    Ok(out)
}

fn synth(out: &Path, n: usize, seed: u64, size: usize, proportions: &[f64], rater_noise: f64) -> CliResult {
    let mut config = CorpusConfig::new(n, seed);
    config.size = size;
    config.rater_noise = rater_noise;
    config.proportions = proportions
        .try_into()
        .map_err(|_| Error::InvalidArgument("--proportions needs three values".into()))?;
    log::info!("synthesizing {n} images of {size}x{size} into {}", out.display());
    let manifest = synthesize_corpus(&config, out)?;
    log::info!(
        "wrote {} records to {}",
        manifest.records.len(),
        out.join("manifest.csv").display()
    );
    Ok(())
}

fn agreement(manifest: &Path, out: &Path) -> CliResult {
    #[derive(serde::Serialize)]
    struct Agreement {
        images: usize,
        jaccard: Vec<Vec<f64>>,
    }
    let m = read_manifest(manifest)?;
    let a: Vec<usize> = m.records.iter().map(|r| r.rater_a).collect();
    let b: Vec<usize> = m.records.iter().map(|r| r.rater_b).collect();
    write_json(
        out,
        &Agreement {
            images: a.len(),
            jaccard: jaccard_matrix(&a, &b, 3)?,
        },
    )
}

fn load_image(path: &Path) -> CliResult<Vec<f32>> {
    Ok(dataset::normalize_image(&Gray8::read(path)?))
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Synth {
            out,
            n,
            seed,
            size,
            proportions,
            rater_noise,
        } => synth(&out, n, seed, size, &proportions, rater_noise),
        Command::Train {
            manifest,
            arch,
            task,
            seed,
            steps,
            batch,
            lr,
            size,
            eval_interval,
            labels,
            out,
            curve,
        } => {
            let m = read_manifest(&manifest)?;
            let mut config = TrainConfig::new(arch, task, seed);
            config.steps = steps;
            config.batch_size = batch;
            config.lr = lr;
            config.input_size = size;
            config.eval_interval = eval_interval;
            config.label_policy = labels;
            log::info!("training {arch} on the {task} task for {steps} steps");
            let (net, training_curve) = train(&config, &m)?;
            save_checkpoint(&net, &out)?;
            if let Some(path) = curve {
                training_curve.write(&path)?;
            }
            log::info!("checkpoint written to {}", out.display());
            Ok(())
        }
        Command::Eval {
            manifest,
            ckpt,
            split,
            task,
            size,
            labels,
            out,
            roc,
        } => {
            let net = load_checkpoint(&ckpt)?;
            if let Some(size) = size {
                if size != net.input_size {
                    return Err(Error::ShapeMismatch {
                        op: "eval input size",
                        expected: format!("{} ({} checkpoint)", net.input_size, net.arch),
                        actual: size.to_string(),
                    });
                }
            }
            let m = read_manifest(&manifest)?;
            let (bundle, curves) = evaluate(&net, &m, split, task, labels)?;
            log::info!("{split} accuracy {:.4}", bundle.accuracy);
            write_json(&out, &bundle)?;
            if let Some(path) = roc {
                write_file(&path, &roc_bytes(&curves)?)?;
            }
            Ok(())
        }
        Command::Agreement { manifest, out } => agreement(&manifest, &out),
        Command::Activations {
            ckpt,
            image,
            out,
            compare,
        } => {
            let net = load_checkpoint(&ckpt)?;
            let pixels = load_image(&image)?;
            let written = export_activations(&net, &pixels, &out)?;
            log::info!("wrote {} activation maps to {}", written.len(), out.display());
            if let Some(other) = compare {
                let scores = layer_discriminability(&net, &pixels, &load_image(&other)?)?;
                write_json(&out.join("discriminability.json"), &scores)?;
            }
            Ok(())
        }
        Command::Suspects {
            manifest,
            ckpt,
            tau,
            split,
            labels,
            out,
        } => {
            let net = load_checkpoint(&ckpt)?;
            let m = read_manifest(&manifest)?;
            let flagged = flag_suspect_labels(&net, &m, split, labels, tau)?;
            log::info!("{} suspect labels at tau {tau}", flagged.len());
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["id", "given", "predicted", "confidence"])?;
            for s in &flagged {
                w.serialize((&s.id, s.given, s.predicted, s.confidence))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::InvalidArgument(format!("suspect buffer: {e}")))?;
            write_file(&out, &bytes)
        }
        Command::Gradcheck { seed, draws } => {
            let reports = gradcheck::run_suite(draws, seed)?;
            let mut failed = Vec::new();
            for r in &reports {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                println!("{:<24} draws {:>3}  worst {:.3e}  {verdict}", r.name, r.draws, r.worst);
                if !r.passed() {
                    failed.push(r.name.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "gradient check failed for {}",
                    failed.join(", ")
                )))
            }
        }
    }
}

/// Parses `argv` (program name first) and runs the command. Usage errors
/// print the usage text; runtime errors print one `error:` line.
pub fn run<I, T>(argv: I) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() {
                ExitStatus::Usage
            } else {
                ExitStatus::Success
            };
            let _ = e.print();
            return status;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitStatus::Success,
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::Failure
        }
    }
}
