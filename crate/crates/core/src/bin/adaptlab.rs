use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use adaptlab::experiment::{self, parse_strategies, ExperimentConfig, SweepSelection};
use adaptlab::Result;

/// Meta-learned few-shot domain adaptation for small translation models.
#[derive(Parser, Debug)]
#[command(name = "adaptlab", version)]
struct Cli {
    /// Experiment config (JSON). Missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single-threaded, with wall-clock columns zeroed.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or load corpora and build the vocabulary.
    Prepare,
    /// Sample meta-train, meta-validation and meta-test manifests.
    MakeTasks,
    /// Pretrain the base model on the general-domain corpora.
    Pretrain {
        /// Continue from an existing checkpoint and its optimizer state.
        #[arg(long)]
        resume: bool,
    },
    /// Meta-train the adapters of the pretrained model.
    MetaTrain,
    /// Adapt to each meta-test task and write per-task scores.
    Adapt {
        /// Comma-separated strategy letters (A,B,C,D).
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Strategy-by-domain BLEU table over the meta-test replicates.
    Compare {
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Support-size and query-size sweeps.
    Sweep {
        #[arg(long, value_enum, default_value_t = Axis::Both)]
        axis: Axis,
    },
    /// Finite-difference gradient check on a fresh model.
    Gradcheck {
        /// Negate the analytic gradient; the check must then fail.
        #[arg(long)]
        corrupt: bool,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Axis {
    Support,
    Query,
    Both,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = load_config(cli)?;
    let det = cli.deterministic;
    let strategies = |o: &Option<Vec<String>>| match o {
        Some(list) => parse_strategies(list),
        None => cfg.strategies(),
    };
    Ok(match &cli.command {
        Command::Prepare => experiment::prepare(&cfg)?,
        Command::MakeTasks => {
            let (ds, written) = experiment::make_tasks(&cfg)?;
            println!(
                "tasks: {} meta-train, {} meta-validation, {} meta-test",
                ds.meta_train.len(),
                ds.meta_validation.len(),
                ds.meta_test.len()
            );
            written
        }
        Command::Pretrain { resume } => {
            let out = experiment::pretrain_stage(&cfg, *resume, det)?;
            if let Some(r) = out.records.last() {
                println!("pretrain: step {} loss {:.4}", r.step, r.loss);
            }
            out.written
        }
        Command::MetaTrain => {
            let (log, written) = experiment::meta_train_stage(&cfg, det)?;
            println!("meta-train: {} task updates, selected epoch {}", log.records.len(), log.selected_epoch);
            written
        }
        Command::Adapt { strategies: s } => {
            let (report, written) = experiment::adapt_stage(&cfg, &strategies(s)?)?;
            println!("adapt: {} task results", report.results.len());
            written
        }
        Command::Compare { strategies: s } => {
            let (report, written) = experiment::compare_stage(&cfg, &strategies(s)?)?;
            print!("{}", report.table());
            written
        }
        Command::Sweep { axis } => {
            let which = match axis {
                Axis::Support => SweepSelection::Support,
                Axis::Query => SweepSelection::Query,
                Axis::Both => SweepSelection::Both,
            };
            experiment::sweep_stage(&cfg, which, det)?.1
        }
        Command::Gradcheck { corrupt } => {
            let (report, written) = experiment::gradcheck_stage(&cfg, *corrupt)?;
            print!("{}", report.to_table());
            written
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .expect("rayon pool is configured once");
    }
    match run(&cli) {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
