use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ttn_core::harness::{
    self, evaluate_checkpoint, load_digits, split, DatasetSpec, RunConfig, StartPoint,
};
use ttn_core::learning::LabeledSample;
use ttn_core::optim::{HessianChoice, ProjectorChoice, Termination};
use ttn_core::retraction::RetractionKind;
use ttn_core::DimensionTree;

#[derive(Parser)]
#[command(name = "ttn", version, about = "Riemannian training of tree tensor network classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the digits CSV and write metrics, loss trace and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one side of the seeded split.
    Evaluate(EvaluateArgs),
    /// Print the balanced dimension tree and its parameter counts.
    Tree(TreeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Rgd,
    Rtr,
}

#[derive(Clone, Copy, ValueEnum)]
enum Projector {
    None,
    Tangent,
    Cartesian,
    Orthogonal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Hessian {
    CartH,
    OrthHess,
    TotalHess,
}

#[derive(Clone, Copy, ValueEnum)]
enum Retraction {
    Qr,
    Polar,
    Cayley,
}

#[derive(Clone, Copy, ValueEnum)]
enum Start {
    Principal,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct SplitArgs {
    /// Headerless CSV, 64 pixels in 0..=16 then the label.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, value_enum, default_value = "rgd")]
    optimizer: Optimizer,
    /// RGD search direction (defaults to cartesian).
    #[arg(long, value_enum)]
    projector: Option<Projector>,
    /// RTR model Hessian (defaults to cart-h).
    #[arg(long, value_enum)]
    hessian: Option<Hessian>,
    #[arg(long, value_enum, default_value = "qr")]
    retraction: Retraction,
    #[arg(long, default_value_t = 8)]
    kmax: usize,
    /// Defaults to 2000 for rgd and 200 for rtr.
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Initial Armijo step.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, value_enum, default_value = "principal")]
    start: Start,
    /// Write zero wall-clock stamps so that reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    side: Side,
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long, default_value_t = 64)]
    modes: usize,
    #[arg(long, default_value_t = 2)]
    local_dim: usize,
    #[arg(long, default_value_t = 10)]
    labels: usize,
    #[arg(long, default_value_t = 8)]
    kmax: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Tree(args) => tree(args),
    }
}

fn load_split(args: &SplitArgs) -> Result<(Vec<LabeledSample<f64>>, Vec<LabeledSample<f64>>)> {
    let data = load_digits::<f64>(&DatasetSpec::digits(&args.data))
        .with_context(|| format!("loading {}", args.data.display()))?;
    Ok(split(&data, args.train_frac, args.seed)?)
}

fn train(args: TrainArgs) -> Result<()> {
    let retraction = match args.retraction {
        Retraction::Qr => RetractionKind::Qr,
        Retraction::Polar => RetractionKind::Polar,
        Retraction::Cayley => RetractionKind::Cayley,
    };
    let projector = args.projector.map(|p| match p {
        Projector::None => ProjectorChoice::None,
        Projector::Tangent => ProjectorChoice::Tangent,
        Projector::Cartesian => ProjectorChoice::CartesianHorizontal,
        Projector::Orthogonal => ProjectorChoice::OrthogonalHorizontal,
    });
    let hessian = args.hessian.map(|h| match h {
        Hessian::CartH => HessianChoice::CartH,
        Hessian::OrthHess => HessianChoice::OrthHess,
        Hessian::TotalHess => HessianChoice::TotalHess,
    });
    let mut config = match args.optimizer {
        Optimizer::Rgd => {
            if hessian.is_some() {
                bail!("--hessian applies to rtr only");
            }
            RunConfig::rgd(projector.unwrap_or(ProjectorChoice::CartesianHorizontal), retraction)
        }
        Optimizer::Rtr => {
            let mut c = RunConfig::rtr(hessian.unwrap_or(HessianChoice::CartH), retraction);
            c.projector = projector;
            c
        }
    };
    if let Some(n) = args.max_iter {
        config.max_iter = n;
    }
    if let Some(step) = args.step {
        config.armijo.initial_step = step;
    }
    config.k_max = args.kmax;
    config.tol = args.tol;
    config.seed = args.split.seed;
    config.train_frac = args.split.train_frac;
    config.out = Some(args.out.clone());
    config.timing = !args.no_timing;
    config.start = match args.start {
        Start::Principal => StartPoint::Principal,
        Start::Random => StartPoint::Random,
    };
    config.validate()?;

    let (train_set, test_set) = load_split(&args.split)?;
    let outcome = harness::train(&config, &train_set, &test_set)?;
    let s = &outcome.summary;
    println!(
        "{}: {} iterations, final loss {:.6e}, train accuracy {:.4}, test accuracy {}, {}",
        config.label(),
        outcome.report.iterations(),
        outcome.report.final_loss(),
        s.train_acc,
        s.test_acc.map_or("n/a".into(), |a| format!("{a:.4}")),
        s.termination
    );
    println!("outputs in {}", args.out.display());
    if let Termination::Error(msg) = &outcome.report.termination {
        bail!("optimizer stopped with an error: {msg}");
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let (train_set, test_set) = load_split(&args.split)?;
    let data = match args.side {
        Side::Train => train_set,
        Side::Test => test_set,
        Side::All => train_set.into_iter().chain(test_set).collect(),
    };
    let ev = evaluate_checkpoint(&args.checkpoint, &data)
        .with_context(|| format!("evaluating {}", args.checkpoint.display()))?;
    println!("accuracy {:.4} ({}/{})", ev.accuracy, ev.correct, ev.total);
    println!("confusion (rows: true class, columns: predicted)");
    for (c, row) in ev.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|n| format!("{n:4}")).collect();
        println!("{c}: {}", cells.join(""));
    }
    Ok(())
}

fn tree(args: TreeArgs) -> Result<()> {
    let tree = DimensionTree::build_balanced(&vec![args.local_dim; args.modes], args.labels, args.kmax)?;
    println!("{}", tree.to_text());
    println!("parameters {}", tree.param_count());
    println!("vertical dimension {}", tree.vertical_dim());
    println!("horizontal dimension {}", tree.horizontal_dim());
    Ok(())
}
