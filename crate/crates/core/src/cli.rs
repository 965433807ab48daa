//! Command-line front end: `train`, `fit-domains`, `evaluate`, `predict`.
//!
//! Training settings resolve as preset, then `--config` TOML file, then
//! individual flags, each layer overriding the previous one.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::domains::{fit_all_domains_with_stats, DomainModel};
use crate::ellipsoid::FitConfig;
use crate::error::{Error, Result};
use crate::eval::{comparison_csv, comparison_text, evaluate, EvalOptions, TieMode};
use crate::graph::{load_graph, EntityId, KnowledgeGraph, Side, Triple, TripleFormat, Vocab};
use crate::model::{Dissimilarity, EmbeddingModel, Variant};
use crate::train::{train_with_report, EarlyStop, NegativeSampling, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "kgdomain", version, about = "Knowledge graph embeddings with ellipsoid domain penalties")]
pub struct Cli {
    /// Worker threads (default: 1 for training, all cores otherwise).
    #[arg(long, global = true, env = "KGDOMAIN_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a TransE, TransR or STransE model.
    Train(TrainArgs),
    /// Fit one ellipsoid per relation domain of a trained model.
    FitDomains(FitArgs),
    /// Link-prediction evaluation on the test split.
    Evaluate(EvalArgs),
    /// Rank candidates for `(h, r, ?)` or `(?, r, t)`.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding train.txt, valid.txt and test.txt.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long = "train-file")]
    pub train_file: Option<PathBuf>,
    #[arg(long = "valid-file")]
    pub valid_file: Option<PathBuf>,
    #[arg(long = "test-file")]
    pub test_file: Option<PathBuf>,
    /// Column order: hrt or htr.
    #[arg(long, default_value = "hrt")]
    pub format: TripleFormat,
}

impl DataArgs {
    pub fn load(&self) -> Result<KnowledgeGraph> {
        let pick = |explicit: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
            match (explicit, &self.dataset) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(dir)) => Ok(dir.join(name)),
                (None, None) => Err(Error::Config(format!(
                    "no dataset given: pass --dataset or --{}-file",
                    name.trim_end_matches(".txt")
                ))),
            }
        };
        load_graph(
            &pick(&self.train_file, "train.txt")?,
            &pick(&self.valid_file, "valid.txt")?,
            &pick(&self.test_file, "test.txt")?,
            self.format,
        )
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Named hyper-parameter preset, e.g. wn18-transe or fb15k-stranse.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file with a [train] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Entity dimension (also the relation dimension unless --rel-dim).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub rel_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// l1 or l2.
    #[arg(long)]
    pub dissim: Option<Dissimilarity>,
    #[arg(long)]
    /// Default: 1000 for TransE, 500 for TransR/STransE.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// uniform or bernoulli.
    #[arg(long)]
    pub sampling: Option<NegativeSampling>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep entity vectors inside the unit ball.
    #[arg(long)]
    pub normalize: bool,
    /// Check validation Hits@10 every N epochs and keep the best model.
    #[arg(long)]
    pub early_stop_every: Option<usize>,
    /// Early-stop patience, in evaluations without improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train for the full epoch budget without validation checks.
    #[arg(long, conflicts_with_all = ["early_stop_every", "patience"])]
    pub no_early_stop: bool,
    /// Trained TransE model to start TransR/STransE from.
    #[arg(long)]
    pub init_model: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// TOML file with a [fit] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_members: Option<usize>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Domain model; adds the augmented report and deltas.
    #[arg(long)]
    pub domains: Option<PathBuf>,
    /// optimistic or pessimistic.
    #[arg(long, default_value = "optimistic")]
    pub ties: TieMode,
    /// Output prefix; writes PREFIX.txt and PREFIX.csv.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub domains: Option<PathBuf>,
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub relation: String,
    #[arg(long)]
    pub tail: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

/// Hyper-parameters of the published baseline configurations.
pub const PRESETS: [(&str, Variant, usize, f64, f64, usize); 6] = [
    ("wn18-transe", Variant::TransE, 50, 0.001, 2.0, 120),
    ("fb15k-transe", Variant::TransE, 50, 0.001, 1.0, 120),
    ("wn18-transr", Variant::TransR, 50, 0.001, 4.0, 1440),
    ("fb15k-transr", Variant::TransR, 50, 0.001, 1.0, 4800),
    ("wn18-stranse", Variant::STransE, 50, 0.0005, 5.0, 120),
    ("fb15k-stranse", Variant::STransE, 100, 0.0001, 1.0, 120),
];

pub fn preset(name: &str) -> Result<TrainConfig> {
    let &(_, variant, dim, lr, margin, batch) = PRESETS
        .iter()
        .find(|p| p.0 == name)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            Error::Config(format!("unknown preset `{name}` (known: {})", names.join(", ")))
        })?;
    Ok(TrainConfig {
        variant,
        dim_entity: dim,
        dim_relation: dim,
        learning_rate: lr,
        margin,
        batch_size: batch,
        dissimilarity: Dissimilarity::L1,
        ..TrainConfig::default()
    })
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    train: Option<TrainSection>,
    fit: Option<FitSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    preset: Option<String>,
    variant: Option<String>,
    dim: Option<usize>,
    rel_dim: Option<usize>,
    lr: Option<f64>,
    margin: Option<f64>,
    batch: Option<usize>,
    dissim: Option<String>,
    epochs: Option<usize>,
    sampling: Option<String>,
    seed: Option<u64>,
    normalize: Option<bool>,
    early_stop_every: Option<usize>,
    patience: Option<usize>,
    early_stop: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSection {
    lr: Option<f64>,
    batch: Option<usize>,
    epochs: Option<usize>,
    seed: Option<u64>,
    min_members: Option<usize>,
}

fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

struct TrainLayer {
    variant: Option<Variant>,
    dim: Option<usize>,
    rel_dim: Option<usize>,
    lr: Option<f64>,
    margin: Option<f64>,
    batch: Option<usize>,
    dissim: Option<Dissimilarity>,
    epochs: Option<usize>,
    sampling: Option<NegativeSampling>,
    seed: Option<u64>,
    normalize: Option<bool>,
    early_stop_every: Option<usize>,
    patience: Option<usize>,
    early_stop: Option<bool>,
}

impl TrainLayer {
    fn apply(self, cfg: &mut TrainConfig) {
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(d) = self.dim {
            cfg.dim_entity = d;
            cfg.dim_relation = d;
        }
        if let Some(d) = self.rel_dim {
            cfg.dim_relation = d;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.margin {
            cfg.margin = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.dissim {
            cfg.dissimilarity = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.sampling {
            cfg.negative_sampling = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.normalize {
            cfg.normalize_entities = v;
        }
        if let Some(on) = self.early_stop {
            cfg.early_stop = on.then(EarlyStop::default);
        }
        if let Some(every) = self.early_stop_every {
            let base = cfg.early_stop.unwrap_or_default();
            cfg.early_stop = Some(EarlyStop { every, ..base });
        }
        if let Some(patience) = self.patience {
            let base = cfg.early_stop.unwrap_or_default();
            cfg.early_stop = Some(EarlyStop { patience, ..base });
        }
    }
}

fn parse_opt<T: std::str::FromStr<Err = Error>>(s: Option<String>) -> Result<Option<T>> {
    s.map(|s| s.parse()).transpose()
}

/// Resolve the effective training configuration. Validation early stopping
/// is on unless disabled; an unset epoch budget follows the final variant.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let file = match &args.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    let section = file.train.unwrap_or_default();
    let preset_name = args.preset.clone().or(section.preset.clone());
    let mut cfg = match preset_name {
        Some(name) => preset(&name)?,
        None => TrainConfig::default(),
    };
    cfg.early_stop = Some(EarlyStop::default());
    let epochs_given = section.epochs.is_some() || args.epochs.is_some();
    TrainLayer {
        variant: parse_opt(section.variant)?,
        dim: section.dim,
        rel_dim: section.rel_dim,
        lr: section.lr,
        margin: section.margin,
        batch: section.batch,
        dissim: parse_opt(section.dissim)?,
        epochs: section.epochs,
        sampling: parse_opt(section.sampling)?,
        seed: section.seed,
        normalize: section.normalize,
        early_stop_every: section.early_stop_every,
        patience: section.patience,
        early_stop: section.early_stop,
    }
    .apply(&mut cfg);
    TrainLayer {
        variant: args.variant,
        dim: args.dim,
        rel_dim: args.rel_dim,
        lr: args.lr,
        margin: args.margin,
        batch: args.batch,
        dissim: args.dissim,
        epochs: args.epochs,
        sampling: args.sampling,
        seed: args.seed,
        normalize: args.normalize.then_some(true),
        early_stop_every: args.early_stop_every,
        patience: args.patience,
        early_stop: args.no_early_stop.then_some(false),
    }
    .apply(&mut cfg);
    if !epochs_given {
        cfg.epochs = match cfg.variant {
            Variant::TransE => 1000,
            Variant::TransR | Variant::STransE => 500,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_fit_config(args: &FitArgs) -> Result<FitConfig> {
    let section = match &args.config {
        Some(p) => read_config(p)?.fit.unwrap_or_default(),
        None => FitSection::default(),
    };
    let mut cfg = FitConfig::default();
    for layer in [
        (section.lr, section.batch, section.epochs, section.seed, section.min_members),
        (args.lr, args.batch, args.epochs, args.seed, args.min_members),
    ] {
        let (lr, batch, epochs, seed, min_members) = layer;
        cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
        cfg.batch_size = batch.unwrap_or(cfg.batch_size);
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        cfg.seed = seed.unwrap_or(cfg.seed);
        cfg.min_members = min_members.unwrap_or(cfg.min_members);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Write through a temporary file in the target directory, so a failed run
/// never leaves a partial artifact behind.
fn write_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    fill(tmp.path())?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |tmp| fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e)))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn pool(threads: Option<usize>, default: usize) -> Result<rayon::ThreadPool> {
    let n = threads.unwrap_or(default);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))
}

fn check_vocab(model: &EmbeddingModel, graph: &KnowledgeGraph) -> Result<()> {
    if model.num_entities != graph.num_entities() || model.num_relations != graph.num_relations() {
        return Err(Error::Config(format!(
            "model covers {} entities / {} relations but the dataset has {} / {}",
            model.num_entities,
            model.num_relations,
            graph.num_entities(),
            graph.num_relations()
        )));
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, threads: Option<usize>) -> Result<()> {
    let config = resolve_train_config(args)?;
    let graph = args.data.load()?;
    let init = match &args.init_model {
        Some(p) => Some(EmbeddingModel::load(p)?),
        None if config.variant != Variant::TransE => {
            return Err(Error::Config(format!(
                "{} training starts from a TransE model: pass --init-model",
                config.variant
            )))
        }
        None => None,
    };
    log::info!(
        "training {} on {} triples: k={} d={} lr={} margin={} batch={} {} epochs={}",
        config.variant,
        graph.train.len(),
        config.dim_entity,
        config.dim_relation,
        config.learning_rate,
        config.margin,
        config.batch_size,
        config.dissimilarity,
        config.epochs
    );
    let (model, report) =
        pool(threads, 1)?.install(|| train_with_report(&graph, &config, init.as_ref()))?;
    if let Some(best) = report.best_epoch {
        log::info!("keeping parameters from epoch {best}");
    }
    write_bytes_atomic(&args.output, &model.to_bytes())?;
    write_atomic(&with_suffix(&args.output, ".entities.tsv"), |p| {
        graph.entities.write_id_map(p)
    })?;
    write_atomic(&with_suffix(&args.output, ".relations.tsv"), |p| {
        graph.relations.write_id_map(p)
    })?;
    log::info!("wrote {}", args.output.display());
    Ok(())
}

pub fn cmd_fit_domains(args: &FitArgs, threads: Option<usize>) -> Result<()> {
    let config = resolve_fit_config(args)?;
    let graph = args.data.load()?;
    let model = EmbeddingModel::load(&args.model)?;
    check_vocab(&model, &graph)?;
    let default_threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (domains, stats) =
        pool(threads, default_threads)?.install(|| fit_all_domains_with_stats(&graph, &model, &config))?;
    let mut skipped = Vec::new();
    for s in &stats {
        let rel = graph.relations.label(s.relation).unwrap_or("?");
        match s.final_mean {
            Some(m) => log::info!(
                "{rel} {}: {} members, mean f_train {:.6} -> {m:.6}{}",
                s.side,
                s.members,
                s.initial_mean.unwrap_or(f64::NAN),
                if s.reverted { " (kept initialization)" } else { "" }
            ),
            None => skipped.push(format!("{rel}/{}", s.side)),
        }
    }
    log::info!(
        "fitted {} domains, skipped {}: {}",
        domains.ellipsoids.len(),
        skipped.len(),
        skipped.join(" ")
    );
    write_bytes_atomic(&args.output, &domains.to_bytes())?;
    Ok(())
}

pub fn cmd_evaluate(args: &EvalArgs, threads: Option<usize>) -> Result<()> {
    let graph = args.data.load()?;
    let model = EmbeddingModel::load(&args.model)?;
    check_vocab(&model, &graph)?;
    let domains = args.domains.as_deref().map(DomainModel::load).transpose()?;
    let options = EvalOptions { tie_mode: args.ties };
    let default_threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pool = pool(threads, default_threads)?;
    let baseline = pool.install(|| evaluate(&model, None, &graph, &options))?;
    let (text, csv) = match &domains {
        None => (baseline.to_text(), baseline.to_csv()),
        Some(dm) => {
            let dre = pool.install(|| evaluate(&model, Some(dm), &graph, &options))?;
            (comparison_text(&baseline, &dre), comparison_csv(&baseline, &dre))
        }
    };
    write_bytes_atomic(&with_suffix(&args.output, ".txt"), text.as_bytes())?;
    write_bytes_atomic(&with_suffix(&args.output, ".csv"), csv.as_bytes())?;
    log::info!("wrote {}.txt and {}.csv", args.output.display(), args.output.display());
    Ok(())
}

/// One row of a `predict` listing.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub entity: EntityId,
    pub baseline: f64,
    pub penalty: f64,
    pub combined: f64,
    /// `None` when the domain has no ellipsoid.
    pub inside: Option<bool>,
}

/// Rank every entity for the open slot of `(anchor, relation, ?)` or
/// `(?, relation, anchor)` and keep the best `top` (clamped to |E|).
pub fn predict(
    model: &EmbeddingModel,
    domains: Option<&DomainModel>,
    anchor: EntityId,
    relation: u32,
    open: Side,
    top: usize,
) -> Result<Vec<Prediction>> {
    let bound = domains.map(|d| d.bind(model)).transpose()?;
    let probe = Triple::new(anchor, relation, anchor);
    model.score_triple(&probe)?;
    let mut rows: Vec<Prediction> = (0..model.num_entities as EntityId)
        .map(|c| {
            let t = probe.with_entity(open, c);
            let baseline = model.score_triple(&t)?;
            let penalty = bound.as_ref().map_or(0.0, |b| b.penalty(c, relation, open));
            Ok(Prediction {
                entity: c,
                baseline,
                penalty,
                combined: baseline + penalty,
                inside: bound.as_ref().and_then(|b| b.inside(c, relation, open)),
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.combined.total_cmp(&b.combined).then(a.entity.cmp(&b.entity)));
    rows.truncate(top.min(model.num_entities));
    Ok(rows)
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let graph = args.data.load()?;
    let model = EmbeddingModel::load(&args.model)?;
    check_vocab(&model, &graph)?;
    let domains = args.domains.as_deref().map(DomainModel::load).transpose()?;
    let relation = graph.relations.resolve(&args.relation, "relation")?;
    let (anchor, open) = match (&args.head, &args.tail) {
        (Some(h), None) => (graph.entities.resolve(h, "entity")?, Side::Tail),
        (None, Some(t)) => (graph.entities.resolve(t, "entity")?, Side::Head),
        _ => {
            return Err(Error::Config(
                "give exactly one of --head and --tail".into(),
            ))
        }
    };
    let rows = predict(&model, domains.as_ref(), anchor, relation, open, args.top)?;
    write_predictions(&graph.entities, &rows, out).map_err(|e| Error::io("<stdout>", e))
}

fn write_predictions(vocab: &Vocab, rows: &[Prediction], out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "rank\tentity\tbaseline\tpenalty\tcombined\tinside")?;
    for (i, r) in rows.iter().enumerate() {
        let inside = match r.inside {
            Some(true) => "yes",
            Some(false) => "no",
            None => "-",
        };
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{inside}",
            i + 1,
            vocab.label(r.entity).unwrap_or("?"),
            r.baseline,
            r.penalty,
            r.combined
        )?;
    }
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::FitDomains(a) => cmd_fit_domains(a, cli.threads),
        Command::Evaluate(a) => cmd_evaluate(a, cli.threads),
        Command::Predict(a) => cmd_predict(a, out),
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
