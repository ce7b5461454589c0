//! The `kgdebate` command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use kgdebate::fixtures::{nationality_rule_graph, RuleGraphConfig};
use kgdebate::kg::{load_triples_into, make_split_with, NegativeSampling, Snapshot, Triple, Vocab};
use kgdebate::rng::seeded;
use kgdebate::trainer::{checkpoint_metadata, evaluate, train, Runner, TrainConfig, TrainSinks, CONFIG_KEYS};

use crate::service::{LoadedModel, Service};
use crate::sessions::SessionStore;

#[derive(Debug, Parser)]
#[command(name = "kgdebate", version, about = "Classify knowledge-graph triples by debate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Build a graph snapshot with train/test queries.
    Ingest(IngestArgs),
    /// Train agents and judge on a snapshot.
    Train(TrainArgs),
    /// Score a checkpoint on a snapshot's queries.
    Evaluate(EvaluateArgs),
    /// Print the debates for one query.
    Debate(DebateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, clap::Args)]
pub struct IngestArgs {
    /// Tab-separated `subject relation object` files, merged into one graph.
    #[arg(long, num_args = 1.., required_unless_present = "synthetic")]
    pub triples: Vec<PathBuf>,
    /// Use the generated nationality graph instead of files.
    #[arg(long, conflicts_with = "triples")]
    pub synthetic: bool,
    /// Comma-separated relations to build queries for.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// `uniform` or `range`.
    #[arg(long, default_value = "uniform")]
    pub negatives: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// `key = value` file applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Receives `metrics.jsonl` and `model.ckpt`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigFlags,
}

/// One optional flag per configuration key, `--lr-agents 0.01` style.
/// `--seed` is required.
#[derive(Debug, Clone, Default)]
pub struct ConfigFlags {
    pub values: Vec<(&'static str, String)>,
}

fn flag_name(key: &'static str) -> &'static str {
    // clap wants 'static names; the set is fixed and tiny.
    Box::leak(key.replace('_', "-").into_boxed_str())
}

impl Args for ConfigFlags {
    fn augment_args(mut cmd: Command) -> Command {
        for &key in CONFIG_KEYS {
            let arg = Arg::new(key)
                .long(flag_name(key))
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help_heading("Configuration")
                .required(key == "seed");
            cmd = cmd.arg(arg);
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        let mut flags = Self::default();
        flags.update_from_arg_matches(matches)?;
        Ok(flags)
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        for &key in CONFIG_KEYS {
            if let Some(v) = matches.get_one::<String>(key) {
                self.values.retain(|(k, _)| *k != key);
                self.values.push((key, v.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the seed stored with the checkpoint.
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// `test` or `train`.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, clap::Args)]
pub struct DebateArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub subject: String,
    #[arg(long)]
    pub predicate: String,
    #[arg(long)]
    pub object: String,
    #[arg(long, default_value_t = 1)]
    pub rollouts: u64,
    #[arg(long)]
    pub eval_seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Without a checkpoint only graph browsing works.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// JSON-lines file sessions are kept in across restarts.
    #[arg(long)]
    pub sessions: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Ingest(a) => ingest(&a),
        Cmd::Train(a) => train_cmd(&a),
        Cmd::Evaluate(a) => evaluate_cmd(&a, &mut std::io::stdout().lock()),
        Cmd::Debate(a) => debate_cmd(&a, &mut std::io::stdout().lock()),
        Cmd::Serve(a) => serve(&a),
    }
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let negatives: NegativeSampling = args.negatives.parse()?;
    let (vocab, facts, default_targets): (Vocab, Vec<Triple>, Vec<String>) = if args.synthetic {
        let fx = nationality_rule_graph(&RuleGraphConfig::default())?;
        (fx.vocab, fx.facts, vec!["nationality".to_owned()])
    } else {
        let mut vocab = Vocab::new();
        let mut facts = Vec::new();
        for path in &args.triples {
            facts.extend(load_triples_into(&mut vocab, path).with_context(|| format!("reading {}", path.display()))?);
        }
        (vocab, facts, Vec::new())
    };
    let targets = if args.targets.is_empty() { default_targets } else { args.targets.clone() };
    if targets.is_empty() {
        bail!("--targets is required with --triples");
    }
    let target_ids = targets
        .iter()
        .map(|name| vocab.relation_id(name).with_context(|| format!("unknown relation {name:?}")))
        .collect::<Result<Vec<_>>>()?;
    let split = make_split_with(&vocab, &facts, &target_ids, args.test_fraction, negatives, &mut seeded(args.seed))?;
    log::info!(
        "{} entities, {} graph facts, {} train and {} test queries",
        vocab.num_entities(),
        split.graph_facts.len(),
        split.train.len(),
        split.test.len()
    );
    Snapshot { vocab, split }.save(&args.out)?;
    Ok(())
}

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config.apply(&text)?;
    }
    for (key, value) in &args.overrides.values {
        config.set(key, value)?;
    }
    config.validate()?;
    Ok(config)
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let config = train_config(args)?;
    let snapshot = Snapshot::load(&args.graph).with_context(|| format!("loading {}", args.graph.display()))?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut metrics = BufWriter::new(File::create(args.out_dir.join("metrics.jsonl"))?);
    let checkpoint = args.out_dir.join("model.ckpt");
    let outcome = train(
        &snapshot.vocab,
        &snapshot.split,
        &config,
        TrainSinks {
            metrics: Some(&mut metrics),
            checkpoint: Some(&checkpoint),
        },
    )?;
    metrics.flush()?;
    // Training only checkpoints at evaluations; make sure the final state
    // is on disk too.
    outcome.model.save(&checkpoint, &checkpoint_metadata(&config, config.epochs))?;
    if let Some(last) = outcome.history.last() {
        log::info!("epoch {}: accuracy {:.3}", last.epoch, last.eval.accuracy);
    }
    Ok(())
}

fn load_pair(graph: &Path, checkpoint: &Path) -> Result<(Snapshot, LoadedModel, TrainConfig)> {
    let snapshot = Snapshot::load(graph).with_context(|| format!("loading {}", graph.display()))?;
    let loaded = LoadedModel::load(checkpoint, &snapshot.vocab)?;
    let config = loaded.config.clone();
    Ok((snapshot, loaded, config))
}

pub fn evaluate_cmd(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let (snapshot, loaded, config) = load_pair(&args.graph, &args.checkpoint)?;
    let queries = match args.split.as_str() {
        "test" => &snapshot.split.test,
        "train" => &snapshot.split.train,
        other => bail!("unknown split {other:?} (expected test or train)"),
    };
    let index = snapshot.index()?;
    let eval = evaluate(
        &loaded.model,
        &snapshot.vocab,
        &index,
        queries,
        &loaded.debate,
        args.eval_seed.unwrap_or(config.eval_seed),
        &Runner::new(args.workers)?,
    )?;
    serde_json::to_writer_pretty(&mut *out, &eval.report)?;
    writeln!(out)?;
    Ok(())
}

pub fn debate_cmd(args: &DebateArgs, out: &mut dyn Write) -> Result<()> {
    let (snapshot, loaded, config) = load_pair(&args.graph, &args.checkpoint)?;
    let query = snapshot
        .vocab
        .resolve(&args.subject, &args.predicate, &args.object)
        .map_err(anyhow::Error::msg)?;
    let index = snapshot.index()?;
    let seed = args.eval_seed.unwrap_or(config.eval_seed);
    for k in 0..args.rollouts {
        let t = kgdebate::trainer::debate_query(&loaded.model, &index, &loaded.debate, seed, query, k)?;
        serde_json::to_writer(&mut *out, &t.to_record(&snapshot.vocab))?;
        writeln!(out)?;
    }
    Ok(())
}

/// Loads everything `serve` needs without binding a socket.
pub fn build_service(args: &ServeArgs) -> Result<Service> {
    let snapshot = Snapshot::load(&args.graph).with_context(|| format!("loading {}", args.graph.display()))?;
    let model = args
        .checkpoint
        .as_deref()
        .map(|path| LoadedModel::load(path, &snapshot.vocab))
        .transpose()?;
    let eval_seed = args
        .eval_seed
        .or_else(|| model.as_ref().map(|m| m.config.eval_seed))
        .unwrap_or_else(|| TrainConfig::default().eval_seed);
    let sessions = match &args.sessions {
        Some(path) => SessionStore::open(path)?,
        None => SessionStore::in_memory(),
    };
    Service::new(snapshot, model, eval_seed, sessions)
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let service = Arc::new(build_service(args)?);
    if service.model.is_none() {
        log::warn!("no checkpoint given: debate endpoints will answer 409");
    }
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, crate::api::router(service)).await?;
        Ok(())
    })
}
