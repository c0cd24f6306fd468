//! `eth` — train, evaluate, ablate, analyze, and synthesize temporal
//! knowledge graph data with the hybrid-geometry engine.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eth_cli::run::{MSpec, RunConfig, Settings};
use eth_cli::{commands, exit_code};

#[derive(Parser)]
#[command(
    name = "eth",
    version,
    about = "Temporal knowledge graph extrapolation with hybrid \
             Euclidean/hyperbolic scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes the best checkpoint, a JSONL log, and the
    /// effective config to --out
    Train(CommonArgs),
    /// Rank all test queries with a checkpoint and print MRR / Hits@k
    Eval(CommonArgs),
    /// Train matched ablation variants and print a comparison table
    Ablate(CommonArgs),
    /// Hierarchy statistics of a dataset, or diagnostics CSVs of a
    /// checkpoint
    Analyze(CommonArgs),
    /// Write a synthetic dataset to --out as loadable split files
    Synth(CommonArgs),
}

/// Every setting of every command; irrelevant flags are ignored by the
/// command that receives them, and each one may instead come from the
/// --config file (flags win) or a --preset (file wins).
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON config file; these flags override its values
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Training split: tab-separated `subject relation object time` ids
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,
    /// Validation split
    #[arg(long, value_name = "FILE")]
    valid: Option<PathBuf>,
    /// Test split
    #[arg(long, value_name = "FILE")]
    test: Option<PathBuf>,
    /// Stat file holding `<num_entities> <num_relations>`
    #[arg(long, value_name = "FILE")]
    stat: Option<PathBuf>,
    /// Generate data instead of reading files: `cycle` or
    /// `cycle:entities,relations,times,shift`
    #[arg(long, value_name = "SPEC")]
    synthetic: Option<String>,
    /// Benchmark defaults: icews14 | icews0515 | yago | wiki
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Trained checkpoint (eval, ablate, analyze)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Embedding dimension
    #[arg(long)]
    d: Option<usize>,
    /// Mixing-vector dimension
    #[arg(long)]
    w: Option<usize>,
    /// Graph-convolution layers per snapshot
    #[arg(long)]
    layers: Option<usize>,
    /// History length; a comma list makes `train` grid-search it
    #[arg(long, value_name = "M[,M...]")]
    m: Option<String>,
    /// Tangent-transform activation: relu | identity
    #[arg(long, value_name = "KIND")]
    gamma: Option<String>,
    /// Score mixing: query_specific | fixed_zero | fixed_one |
    /// per_relation_learned
    #[arg(long, value_name = "MODE")]
    beta_mode: Option<String>,
    /// Training objective: softmax | binary
    #[arg(long, value_name = "KIND")]
    loss: Option<String>,
    /// Comma list of ablations: se, tst, q, beta0, beta1, beta-learned
    #[arg(long, value_name = "MODES")]
    ablate: Option<String>,
    /// Candidate filtering for metrics: time | raw
    #[arg(long, value_name = "KIND")]
    filter: Option<String>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Epoch cap
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many validation epochs without improvement
    #[arg(long)]
    patience: Option<usize>,
    /// Gradient-clipping global norm; 0 disables clipping
    #[arg(long, value_name = "NORM")]
    grad_clip: Option<f64>,
    /// Seed for parameter init and training-time randomness
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts [default: eth-out]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn settings(&self) -> Settings {
        Settings {
            train: self.train.clone(),
            valid: self.valid.clone(),
            test: self.test.clone(),
            stat: self.stat.clone(),
            synthetic: self.synthetic.clone(),
            preset: self.preset.clone(),
            checkpoint: self.checkpoint.clone(),
            d: self.d,
            w: self.w,
            layers: self.layers,
            m: self.m.clone().map(MSpec::Text),
            gamma: self.gamma.clone(),
            beta_mode: self.beta_mode.clone(),
            loss: self.loss.clone(),
            ablate: self.ablate.clone(),
            filter: self.filter.clone(),
            lr: self.lr,
            epochs: self.epochs,
            patience: self.patience,
            grad_clip: self.grad_clip,
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

fn dispatch(cli: &Cli) -> eth_core::Result<()> {
    let (args, cmd): (&CommonArgs, fn(&RunConfig) -> eth_core::Result<()>) = match &cli.command {
        Cmd::Train(a) => (a, commands::cmd_train),
        Cmd::Eval(a) => (a, commands::cmd_eval),
        Cmd::Ablate(a) => (a, commands::cmd_ablate),
        Cmd::Analyze(a) => (a, commands::cmd_analyze),
        Cmd::Synth(a) => (a, commands::cmd_synth),
    };
    let run = RunConfig::resolve(args.settings(), args.config.as_deref())?;
    cmd(&run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
