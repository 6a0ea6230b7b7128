use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aggre::commands::{self, EvalRequest};
use aggre::config::parse_eval_mode;
use aggre::{AppError, ContextPolicy, RunConfig, SplitFiles};
use aggre_core::Split;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aggre", version, about = "Relation prediction with attentive context aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse train/valid/test files into a binary bundle.
    Preprocess {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle path [default: <out>/graph.bundle].
        #[arg(long)]
        bundle_out: Option<PathBuf>,
    },
    /// Train a model and write the log and checkpoints into --out.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rank the relations of every triple in a split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// [default: <out>/best.ckpt]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Hit@K values to report besides MRR and MR.
        #[arg(long, value_delimiter = ',', default_value = "3")]
        hits: Vec<usize>,
        /// Include every query's rank in the JSON report.
        #[arg(long)]
        per_query: bool,
        /// Report path [default: <out>/eval_<split>_<mode>.json]; a .txt table is written beside it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the top-k relations between two entities.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        /// [default: <out>/best.ckpt]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        head: String,
        #[arg(long)]
        tail: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
    },
}

/// Settings shared by all subcommands; flags override the config file.
#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_eval_mode)]
    eval_mode: Option<aggre_core::EvalMode>,
    /// Context source splits: train or train+valid.
    #[arg(long)]
    context: Option<ContextPolicy>,
    #[arg(long)]
    exclude_self: bool,
    /// Worker threads, 0 for one per core.
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded, bitwise reproducible execution.
    #[arg(long)]
    strict: bool,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("expected train, valid or test, got {s:?}"))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, AppError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.train;
        if let Some(v) = &self.data_dir {
            cfg.data_dir = Some(v.clone());
            cfg.bundle = None;
        }
        if let Some(v) = &self.bundle {
            cfg.bundle = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        macro_rules! set {
            ($($flag:ident => $field:expr),*) => {$(if let Some(v) = self.$flag { $field = v; })*};
        }
        set!(seed => t.seed, layers => t.num_layers, dim => t.dim, lr => t.learning_rate, l2 => t.l2_lambda,
             batch_size => t.batch_size, epochs => t.max_epochs, eval_mode => t.eval_mode,
             context => cfg.context, threads => cfg.threads);
        t.exclude_self |= self.exclude_self;
        t.strict_determinism |= self.strict;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<(), AppError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

fn run(cli: Cli) -> Result<(), AppError> {
    let run = match &cli.command {
        Command::Preprocess { run, .. } | Command::Train { run } | Command::Eval { run, .. } | Command::Predict { run, .. } => run,
    };
    let cfg = run.resolve()?;
    let threads = if cfg.train.strict_determinism { 1 } else { cfg.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    let checkpoint = |c: &Option<PathBuf>| c.clone().unwrap_or_else(|| cfg.out.join(commands::BEST_CHECKPOINT));

    match cli.command {
        Command::Preprocess { bundle_out, .. } => {
            let dir = cfg.data_dir.as_ref().ok_or_else(|| AppError::Config("preprocess needs --data-dir".into()))?;
            let out = bundle_out.unwrap_or_else(|| cfg.out.join("graph.bundle"));
            if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
            }
            let bundle = commands::preprocess(&SplitFiles::in_dir(dir), &out, cfg.context)?;
            print!("{}", commands::summary(&bundle.graph));
            println!("bundle: {}", out.display());
        }
        Command::Train { .. } => {
            let summary = commands::train(&cfg)?;
            println!("epochs: {}", summary.epochs.len());
            println!("best epoch: {}", summary.best_epoch);
            println!("checkpoint: {}", summary.best_checkpoint.display());
        }
        Command::Eval {
            checkpoint: ckpt,
            split,
            hits,
            per_query,
            report,
            ..
        } => {
            let ckpt = checkpoint(&ckpt);
            let mode = cfg.train.eval_mode;
            let req = EvalRequest {
                checkpoint: &ckpt,
                split,
                mode,
                hits: &hits,
                per_query,
            };
            let rep = commands::eval(&cfg, &req)?;
            let path = report.unwrap_or_else(|| cfg.out.join(format!("eval_{}_{}.json", split.name(), mode.name())));
            let name = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let table = rep.table(&name);
            write(&path, &serde_json::to_string_pretty(&rep).expect("report serializes"))?;
            write(&path.with_extension("txt"), &table)?;
            print!("{table}");
        }
        Command::Predict {
            checkpoint: ckpt, head, tail, k, ..
        } => {
            for (label, score) in commands::predict(&cfg, &checkpoint(&ckpt), &head, &tail, k)? {
                println!("{label}\t{score}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
