//! `edgeface`: cost accounting, weight containers, embedding, verification
//! metrics, gradient checks and toy training from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation or format error,
//! 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use edgeface_core::accounting::{count_spec, sweep_csv};
use edgeface_core::eval::{cosine, score_pairs, verification_report};
use edgeface_core::gradcheck::{run_gradient_suite, SUITE_EPS};
use edgeface_core::io::{format_scores, load_file, load_image, read_pairs, save_file};
use edgeface_core::losses::{MarginKind, MarginLossConfig};
use edgeface_core::train::{history_csv, toy_train, ToyTrainConfig};
use edgeface_core::{gamma_sweep, EdgeFaceModel, Error, Tensor, Variant};

#[derive(Parser)]
#[command(name = "edgeface", version, about = "EdgeFace inference, cost accounting and verification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter and MAC census of a variant (JSON report, or per-layer CSV)
    Count {
        #[arg(long)]
        variant: Variant,
        /// Rank-ratio for every linear layer; dense when omitted
        #[arg(long)]
        gamma: Option<f64>,
        /// Print the per-layer table as CSV instead of the JSON report
        #[arg(long)]
        csv: bool,
    },
    /// Cost of a variant across rank-ratios, relative to the dense model (CSV)
    Sweep {
        #[arg(long)]
        variant: Variant,
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
    },
    /// Initialize a model and write it as a weight container
    Init {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 512-d embedding of one image as little-endian f32
    Embed {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the cosine similarity of two images
    Verify {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Score a pair list and write a verification report
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        /// `<ref_a> <ref_b> <label>` per line; relative references resolve
        /// against the pair file's directory
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 1e-6])]
        far: Vec<f64>,
        /// Also write `<ref_a> <ref_b> <score>` lines here
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Replace every linear layer by its truncated-SVD LoRaLin factorization
    Factorize {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the LoRaLin MLP on the synthetic blob task and write its history
    TrainToy {
        /// JSON with optional `train` and `loss` sections
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Validation(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Numeric(_) | Error::Diverged { .. } | Error::SvdNonConvergence { .. }) => Failure::Numeric(e),
            _ => Failure::Validation(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    train: ToyTrainConfig,
    loss: LossSection,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LossSection {
    kind: MarginKind,
    scale: Option<f64>,
    margin: Option<f64>,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            kind: MarginKind::CosFace,
            scale: None,
            margin: None,
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<EdgeFaceModel> {
    load_file(path).with_context(|| format!("loading weights {}", path.display()))
}

fn embed_one(model: &EdgeFaceModel, path: &Path) -> anyhow::Result<Vec<f32>> {
    let img = load_image(path).with_context(|| format!("reading image {}", path.display()))?;
    let side = model.spec.input_side;
    let batch = img.reshape(&[1, 3, side, side])?;
    Ok(model.embed(&batch)?.into_data())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Count { variant, gamma, csv } => {
            let report = count_spec(&variant.spec(), gamma)?;
            if csv {
                print!("{}", report.to_csv());
            } else {
                println!("{}", report.to_json());
            }
        }
        Command::Sweep { variant, gammas } => {
            print!("{}", sweep_csv(&gamma_sweep(&variant.spec(), &gammas)?));
        }
        Command::Init { variant, gamma, seed, out } => {
            let model = EdgeFaceModel::build(&variant.spec(), gamma, seed)?;
            save_file(&model, &out)?;
        }
        Command::Embed { weights, input, out } => {
            let model = load_model(&weights)?;
            let emb = embed_one(&model, &input)?;
            let bytes: Vec<u8> = emb.iter().flat_map(|v| v.to_le_bytes()).collect();
            write(&out, bytes)?;
        }
        Command::Verify { weights, a, b } => {
            let model = load_model(&weights)?;
            let (ea, eb) = (embed_one(&model, &a)?, embed_one(&model, &b)?);
            println!("{:.6}", cosine(&ea, &eb));
        }
        Command::Evaluate {
            weights,
            pairs,
            report,
            folds,
            far,
            scores,
        } => {
            let model = load_model(&weights)?;
            let list = read_pairs(&pairs).with_context(|| format!("reading pairs {}", pairs.display()))?;
            let base = pairs.parent().map(Path::to_path_buf).unwrap_or_default();
            let loader = |r: &str| -> edgeface_core::Result<Tensor> {
                let p = Path::new(r);
                load_image(if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
            };
            let outcome = score_pairs(&model, &list, loader)?;
            for r in &outcome.rejects {
                eprintln!("rejected {}: {}", r.reference, r.reason);
            }
            if outcome.pairs.is_empty() {
                return Err(Failure::Validation(anyhow!("no pair could be scored")));
            }
            let rep = verification_report(&outcome.scores(), &outcome.labels(), folds, &far)?;
            let json = serde_json::to_string_pretty(&rep).map_err(anyhow::Error::from)?;
            write(&report, json + "\n")?;
            if let Some(path) = scores {
                write(&path, format_scores(&outcome.pairs))?;
            }
        }
        Command::Factorize { weights, gamma, out } => {
            let model = load_model(&weights)?;
            let (low, layers) = model.factorize(gamma)?;
            for l in &layers {
                println!("{} rank={} frobenius_error={:.6e}", l.name, l.rank, l.frobenius_error);
            }
            save_file(&low, &out)?;
        }
        Command::Gradcheck { points, seed } => {
            if points == 0 {
                return Err(Failure::Usage(anyhow!("--points must be at least 1")));
            }
            let results = run_gradient_suite(points, seed, SUITE_EPS);
            for r in &results {
                println!(
                    "{} {} points={} max_rel_error={:.3e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.points,
                    r.max_rel_error
                );
            }
            if let Some(bad) = results.iter().find(|r| !r.passed) {
                return Err(Failure::Numeric(anyhow!("gradient check `{}` failed", bad.name)));
            }
        }
        Command::TrainToy { config, out } => {
            let file: TrainFile = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => TrainFile::default(),
            };
            let classes = file.train.classes;
            let base = match file.loss.kind {
                MarginKind::CosFace => MarginLossConfig::cosface(classes),
                MarginKind::ArcFace => MarginLossConfig::arcface(classes),
            };
            let loss = MarginLossConfig {
                scale: file.loss.scale.unwrap_or(base.scale),
                margin: file.loss.margin.unwrap_or(base.margin),
                ..base
            };
            let (_, history) = toy_train(&file.train, &loss)?;
            write(&out, history_csv(&history))?;
            if let Some(last) = history.last() {
                eprintln!("final loss {:.6} accuracy {:.4}", last.loss, last.accuracy);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Validation(e) | Failure::Numeric(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
