use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedcode::files::{load_experiment, read_checkpoint, read_json, write_checkpoint, write_json, write_plan};
use fedcode::run::{read_run, render_table, simulate};
use fedcode::{Error, RegistryStore, Result};
use fedcode_core::governance::{GateConfig, Submission};
use fedcode_core::metrics::EvalBatch;
use fedcode_core::orchestrator::{self, Evaluator};
use fedcode_core::{
    local_train, model, synthetic, AggregationConfig, AggregationKind, CorpusConfig, Dataset, Mode, ModelSpec,
    RegistrySettings, TrainConfig, Verdict,
};

#[derive(Parser)]
#[command(name = "fedcode", version, about = "Federated-learning simulator and governed model registry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled corpus (or a slice of one) as a dataset file.
    Generate(GenerateArgs),
    /// Train a model on a dataset file and write a checkpoint.
    Train(TrainArgs),
    /// Write the partition plan an experiment config produces.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment and write its round reports.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Compare finished runs, given as LABEL=DIR.
    Compare {
        #[arg(required = true)]
        runs: Vec<String>,
        /// Print the table as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Score an evaluation batch, or a checkpoint on a dataset.
    Evaluate {
        #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
        batch: Option<PathBuf>,
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        data: Option<PathBuf>,
    },
    /// Governed model registry.
    #[command(subcommand)]
    Registry(RegistryCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Federated,
    Centralized,
    SingleClient,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Federated => Mode::Federated,
            ModeArg::Centralized => Mode::Centralized,
            ModeArg::SingleClient => Mode::SingleClient,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MergeArg {
    Fedavg,
    Fedtrimmedavg,
    Fedmedian,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerdictArg {
    Accept,
    Reject,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Corpus settings file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_examples: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    owners: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop this many examples from the front.
    #[arg(long, default_value_t = 0)]
    skip: usize,
    /// Keep at most this many examples after skipping.
    #[arg(long)]
    take: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to start from (also the proximal anchor).
    #[arg(long)]
    start: Option<PathBuf>,
    /// Hidden width; trains an MLP from scratch instead of logistic regression.
    #[arg(long, conflicts_with = "start")]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    prox_mu: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// Create a registry with a genesis checkpoint and a gate benchmark.
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        genesis: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        /// Gate settings file; the default gate is used when absent.
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Example count credited to the genesis model.
        #[arg(long)]
        genesis_examples: u64,
        #[arg(long, value_enum, default_value = "fedavg")]
        merge: MergeArg,
        #[arg(long, default_value_t = fedcode_core::governance::DEFAULT_TOKEN_REWARD)]
        token_reward: u64,
        #[arg(long, default_value = "founders")]
        by: String,
        /// Creation time in seconds since the epoch; defaults to now.
        #[arg(long)]
        at: Option<u64>,
    },
    /// Submit an update against a base version.
    Submit {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        update: PathBuf,
        #[arg(long)]
        by: String,
        /// Defaults to the current head.
        #[arg(long)]
        base: Option<u64>,
        #[arg(long)]
        claimed_examples: u64,
        #[arg(long)]
        test_set: Option<PathBuf>,
        #[arg(long, default_value = "")]
        notes: String,
    },
    /// Run the release gate on a pending contribution.
    Gate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        id: u64,
    },
    /// Accept or reject a gated contribution.
    Decide {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        id: u64,
        #[arg(long, value_enum)]
        verdict: VerdictArg,
        #[arg(long)]
        reviewer: String,
        #[arg(long)]
        at: Option<u64>,
    },
    /// Print the version chain with merged contributions.
    Log {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print token balances.
    Balances {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: "<stdout>".into(), source })?;
    println!("{text}");
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut cfg: CorpusConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => CorpusConfig::default(),
    };
    cfg.n_examples = args.n_examples.unwrap_or(cfg.n_examples);
    cfg.feature_dim = args.feature_dim.unwrap_or(cfg.feature_dim);
    cfg.num_classes = args.num_classes.unwrap_or(cfg.num_classes);
    cfg.n_owners = args.owners.unwrap_or(cfg.n_owners);
    cfg.cluster_spread = args.spread.unwrap_or(cfg.cluster_spread);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    let corpus = synthetic::generate(&cfg)?;
    let end = args.take.map_or(corpus.len(), |t| args.skip.saturating_add(t).min(corpus.len()));
    if args.skip >= end {
        return Err(Error::Usage("--skip/--take select no examples".into()));
    }
    let data = corpus.subset(&(args.skip..end).collect::<Vec<_>>())?;
    write_json(&args.out, &data)
}

fn train(args: TrainArgs) -> Result<()> {
    let data: Dataset = read_json(&args.data)?;
    let (spec, start) = match &args.start {
        Some(path) => read_checkpoint(path)?,
        None => {
            let spec = match args.hidden {
                Some(h) => ModelSpec::mlp(data.feature_dim(), h, data.num_classes()),
                None => ModelSpec::logistic(data.feature_dim(), data.num_classes()),
            };
            (spec, model::init_params(&spec, args.init_seed)?)
        }
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        prox_mu: args.prox_mu,
        seed: args.seed,
    };
    let (params, loss) = local_train(&spec, &start, data.examples(), &cfg, &start)?;
    write_checkpoint(&args.out, &spec, &params)?;
    println!("final epoch loss {loss}");
    Ok(())
}

fn compare(runs: &[String], as_json: bool) -> Result<()> {
    let runs = runs
        .iter()
        .map(|spec| {
            let (label, dir) =
                spec.split_once('=').ok_or_else(|| Error::Usage(format!("expected LABEL=DIR, got {spec}")))?;
            read_run(Path::new(dir), label)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = orchestrator::compare_runs(&runs)?;
    if as_json {
        print_json(&table)
    } else {
        print!("{}", render_table(&table));
        Ok(())
    }
}

fn registry(cmd: RegistryCommand) -> Result<()> {
    match cmd {
        RegistryCommand::Init { dir, genesis, benchmark, gate, genesis_examples, merge, token_reward, by, at } => {
            let (spec, params) = read_checkpoint(&genesis)?;
            let benchmark: Dataset = read_json(&benchmark)?;
            let gate: GateConfig = match gate {
                Some(path) => read_json(&path)?,
                None => GateConfig::default(),
            };
            let merge = match merge {
                MergeArg::Fedavg => AggregationConfig::fedavg(),
                MergeArg::Fedtrimmedavg => {
                    AggregationConfig { kind: AggregationKind::FedTrimmedAvg, ..Default::default() }
                }
                MergeArg::Fedmedian => AggregationConfig::median(),
            };
            let settings = RegistrySettings { spec, gate, merge, genesis_examples, token_reward };
            let store = RegistryStore::init(&dir, settings, params, &benchmark, &by, at.unwrap_or_else(now))?;
            println!("initialized registry at {} with version 0", store.dir().display());
        }
        RegistryCommand::Submit { dir, update, by, base, claimed_examples, test_set, notes } => {
            let mut store = RegistryStore::open(&dir)?;
            let (_, params) = read_checkpoint(&update)?;
            let new_test_set = test_set.as_deref().map(read_json::<Dataset>).transpose()?;
            let id = store.submit(Submission {
                contributor: by,
                base_version: base.unwrap_or(store.registry().head().version_id),
                update: params,
                claimed_num_examples: claimed_examples,
                new_test_set,
                new_test_set_ref: None,
                notes,
            })?;
            println!("contribution {id} pending");
        }
        RegistryCommand::Gate { dir, id } => {
            let report = RegistryStore::open(&dir)?.evaluate_gate(id)?;
            print_json(&report)?;
        }
        RegistryCommand::Decide { dir, id, verdict, reviewer, at } => {
            let verdict = match verdict {
                VerdictArg::Accept => Verdict::Accept,
                VerdictArg::Reject => Verdict::Reject,
            };
            match RegistryStore::open(&dir)?.decide(id, verdict, &reviewer, at.unwrap_or_else(now))? {
                Some(m) => println!(
                    "contribution {id} accepted as version {}; {} tokens to {}",
                    m.version.version_id, m.reward.tokens, m.reward.contributor
                ),
                None => println!("contribution {id} rejected"),
            }
        }
        RegistryCommand::Log { dir } => {
            let store = RegistryStore::open(&dir)?;
            for (v, c) in store.registry().history()? {
                let scores: Vec<String> = v.benchmark_scores.iter().map(|(k, s)| format!("{k}={s:.4}")).collect();
                let merged = c.map_or(String::new(), |c| format!(" contribution={}", c.contribution_id));
                println!(
                    "version {} parent={} by={} at={}{} {} {}",
                    v.version_id,
                    v.parent.map_or("-".to_string(), |p| p.to_string()),
                    v.contributor,
                    v.created_at,
                    merged,
                    scores.join(" "),
                    v.notes
                );
            }
        }
        RegistryCommand::Balances { dir } => {
            print_json(&RegistryStore::open(&dir)?.registry().ledger().balances())?;
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Train(args) => train(args),
        Command::Partition { config, out, seed } => {
            let mut cfg = load_experiment(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            write_plan(&out, &orchestrator::prepare(&cfg)?.plan)
        }
        Command::Simulate { config, seed, out_dir, mode } => {
            let mut cfg = load_experiment(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.mode = mode.map_or(cfg.mode, Mode::from);
            let reports = simulate(&cfg, &out_dir)?;
            if let Some(last) = reports.last() {
                let metrics: Vec<String> = last.global_metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                println!("{} rounds; final {}", reports.len(), metrics.join(" "));
            }
            Ok(())
        }
        Command::Compare { runs, json } => compare(&runs, json),
        Command::Evaluate { batch, checkpoint, data } => match (batch, checkpoint, data) {
            (Some(batch), _, _) => print_json(&read_json::<EvalBatch>(&batch)?.evaluate()?),
            (None, Some(ckpt), Some(data)) => {
                let (spec, params) = read_checkpoint(&ckpt)?;
                let data: Dataset = read_json(&data)?;
                print_json(&Evaluator::new(&spec, data.examples()).metrics(&params)?)
            }
            _ => Err(Error::Usage("pass --batch, or --checkpoint with --data".into())),
        },
        Command::Registry(cmd) => registry(cmd),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
