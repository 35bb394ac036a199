use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use saliq::data::Source;
use saliq::harness::{self, ConfigOverrides, EvalSource};
use saliq::model::BitConfig;
use saliq::saliency;
use saliq::train::TrainMode;
use saliq::Error;

#[derive(Parser)]
#[command(name = "saliq", version, about = "Saliency-guided quantization-aware training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run-config JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding mnist/ and fashion/ IDX files (falls back to $SALIQ_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation.
    #[arg(long)]
    threads: Option<usize>,
    /// Make every output byte-reproducible (zeroes timing columns).
    #[arg(long)]
    deterministic: bool,
    /// Use only the first N images of the relevant split.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write a run directory.
    Train(TrainArgs),
    /// Test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Input, saliency and masked PGM images for chosen test images.
    Saliency(SaliencyArgs),
    /// Accuracy as the most salient pixels are replaced with noise.
    Degrade(DegradeArgs),
    /// Per-layer FLOPs for bit-width configurations.
    Flops(FlopsArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<Source>,
    /// regular, or layer bit-widths such as 4,2
    #[arg(long)]
    bits: Option<BitConfig>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Features masked per image.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Cross-entropy only, no saliency masking.
    #[arg(long)]
    plain: bool,
    /// Use only the first N test images.
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: Option<Source>,
}

#[derive(Args)]
struct SaliencyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: Option<Source>,
    /// Test image indices, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    indices: Vec<usize>,
    /// Fraction of least salient pixels replaced in the masked image.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct DegradeArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoints to compare.
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    dataset: Option<Source>,
    /// Fractions removed, comma separated, starting at 0.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
}

#[derive(Args)]
struct FlopsArgs {
    #[command(flatten)]
    common: Common,
    /// Configurations, e.g. regular 2,2 4,2 4,4 (default: all four).
    #[arg(long = "bits", num_args = 1..)]
    bits: Vec<BitConfig>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", harness::describe(&e));
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}

fn init_threads(common: &Common) -> saliq::Result<()> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Dataset and data directory for the read-only commands.
fn eval_source(common: &Common, dataset: Option<Source>, checkpoint: Option<&PathBuf>) -> saliq::Result<EvalSource> {
    let file = match &common.config {
        Some(p) => ConfigOverrides::from_file(p)?,
        None => ConfigOverrides::default(),
    };
    let dataset = dataset
        .or(file.dataset)
        .or_else(|| checkpoint.and_then(|c| harness::sibling_dataset(c)))
        .unwrap_or(Source::Mnist);
    let data_dir = common
        .data_dir
        .clone()
        .or(file.data_dir)
        .or_else(|| std::env::var_os(harness::DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(harness::DEFAULT_DATA_DIR));
    Ok(EvalSource {
        data_dir,
        dataset,
        limit: common.limit.or(file.test_limit),
    })
}

fn run(cli: Cli) -> saliq::Result<()> {
    match cli.command {
        Command::Train(a) => {
            init_threads(&a.common)?;
            let file = match &a.common.config {
                Some(p) => ConfigOverrides::from_file(p)?,
                None => ConfigOverrides::default(),
            };
            let flags = ConfigOverrides {
                dataset: a.dataset,
                bits: a.bits,
                k: a.k,
                lambda: a.lambda,
                lr: a.lr,
                batch_size: a.batch_size,
                epochs: a.epochs,
                seed: a.common.seed,
                mode: a.plain.then_some(TrainMode::Plain),
                data_dir: a.common.data_dir.clone(),
                out_dir: a.common.out.clone(),
                deterministic: a.common.deterministic.then_some(true),
                train_limit: a.common.limit,
                test_limit: a.test_limit,
                run_id: a.run_id,
                ..Default::default()
            };
            let cfg = flags.over(file).resolve()?;
            eprintln!("training {} -> {}", cfg.run_id(), cfg.run_dir().display());
            let outcome = harness::cmd_train(&cfg, |r| {
                eprintln!(
                    "epoch {:>3}  ce {:.4}  kl {:.4}  train {:.2}%  test {:.2}%  ({:.1}s)",
                    r.epoch,
                    r.ce_loss,
                    r.kl_loss,
                    100.0 * r.train_acc,
                    100.0 * r.test_acc,
                    r.seconds
                );
            })?;
            println!(
                "{}\ttest_acc={:.6}",
                outcome.run_dir.display(),
                outcome.manifest.metrics.test_acc
            );
        }
        Command::Eval(a) => {
            init_threads(&a.common)?;
            let source = eval_source(&a.common, a.dataset, Some(&a.checkpoint))?;
            let report = harness::cmd_eval(&a.checkpoint, &source)?;
            println!("accuracy={} images={} bits={}", report.accuracy, report.images, report.bits);
        }
        Command::Saliency(a) => {
            init_threads(&a.common)?;
            let source = eval_source(&a.common, a.dataset, Some(&a.checkpoint))?;
            let out = a.common.out.clone().unwrap_or_else(|| {
                a.checkpoint.parent().map(|p| p.join("saliency")).unwrap_or_else(|| PathBuf::from("saliency"))
            });
            let files = harness::cmd_saliency(&a.checkpoint, &source, &a.indices, a.threshold, &out, a.common.seed.unwrap_or(0))?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Degrade(a) => {
            init_threads(&a.common)?;
            let source = eval_source(&a.common, a.dataset, a.checkpoints.first())?;
            let fractions = a.fractions.unwrap_or_else(saliency::default_fractions);
            let out = a.common.out.clone().unwrap_or_else(|| PathBuf::from("curves"));
            let outcome = harness::cmd_degrade(&a.checkpoints, &source, &fractions, a.common.seed.unwrap_or(0), &out)?;
            for curve in &outcome.curves {
                let m = saliency::curve_metrics(curve)?;
                eprintln!(
                    "{}: drop@50% {:.4}  auc {:.4}",
                    curve.model_id, m.drop_at_50pct, m.area_under_curve
                );
            }
            for f in outcome.files {
                println!("{}", f.display());
            }
        }
        Command::Flops(a) => {
            let configs = if a.bits.is_empty() {
                BitConfig::all_presets().to_vec()
            } else {
                a.bits
            };
            let csv = harness::flops_csv(&configs);
            match &a.common.out {
                Some(path) => harness::write_atomic(path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            let ratio = harness::regular_to_lowest_ratio();
            eprintln!(
                "total(regular)/total(2,2) = {ratio:.4} ({} the 8x target)",
                if ratio >= 8.0 { "meets" } else { "below" }
            );
        }
    }
    Ok(())
}
