//! `tablegraph`: synthesize, train, predict, decode and evaluate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tablegraph::docmodel::{
    file_stem_for, label_stats, load_dataset, load_pages, save_dataset, write_atomic,
};
use tablegraph::eval::{crossval, evaluate, format_table, EvalConfig};
use tablegraph::features::EdgeFeatureSet;
use tablegraph::modelio::{load_model, save_model};
use tablegraph::neural::{DirectionMode, EcnVariant};
use tablegraph::pipeline::{fit, predict_pages, LearnerConfig, ModelKind};
use tablegraph::rowdecode::{decode, decode_gold, DecodeConfig, TableStructure};
use tablegraph::synthgen::{generate_dataset, Preset, SynthConfig};
use tablegraph::{build_graph, Dataset, GraphParams};

#[derive(Debug, Parser)]
#[command(
    name = "tablegraph",
    version,
    about = "Graph-based table row recognition"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "TABLEGRAPH_SEED", default_value_t = 0)]
    seed: u64,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with gold row structures.
    Synth(SynthArgs),
    /// Train a learner and write a model file.
    Train(TrainArgs),
    /// Tag every line of a dataset with a trained model.
    Predict(PredictArgs),
    /// Turn predicted (or gold) labels into table rows.
    Decode(DecodeArgs),
    /// Score predicted labels and decoded rows against the gold standard.
    Eval(EvalArgs),
    /// k-fold cross-validation of one learner.
    Crossval(CrossvalArgs),
    /// Label counts of a dataset.
    Stats(DataArg),
    /// Dump line-of-sight graphs.
    Graph(GraphArgs),
}

#[derive(Debug, Args)]
struct DataArg {
    /// Manifest file, directory holding manifest.json, or a page file.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    pages: usize,
    #[arg(long, value_enum, default_value_t = PresetArg::Writers)]
    preset: PresetArg,
    /// Output directory; receives page files, manifest.json and gold/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Easy,
    Writers,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Logit,
    #[value(name = "logit1conv")]
    Logit1Conv,
    Gcn,
    Ecn,
    Crf,
    Majority,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Logit => ModelKind::Logit,
            KindArg::Logit1Conv => ModelKind::Logit1Conv,
            KindArg::Gcn => ModelKind::Gcn,
            KindArg::Ecn => ModelKind::Ecn,
            KindArg::Crf => ModelKind::Crf,
            KindArg::Majority => ModelKind::Majority,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Fullstack,
    Sumstack,
    Adding,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    Both,
    Forward,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EdgeSetArg {
    Full,
    Constant,
    Orientation,
}

/// Learner hyper-parameters; unset flags keep the learner's defaults.
#[derive(Debug, Args)]
struct LearnerArgs {
    /// Network layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Edge convolutions per ECN layer.
    #[arg(long)]
    convs: Option<usize>,
    /// Projection width per layer.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    /// GCN: plain propagation instead of stacking each node with its convolution.
    #[arg(long)]
    plain: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// CRF subgradient iterations or logit gradient steps.
    #[arg(long)]
    iterations: Option<usize>,
    /// CRF regularization strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Logit L2 penalty.
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long, value_enum)]
    edge_features: Option<EdgeSetArg>,
    /// Quantile knots per feature.
    #[arg(long)]
    knots: Option<usize>,
}

impl LearnerArgs {
    fn resolve(&self, kind: ModelKind, seed: u64) -> LearnerConfig {
        let mut cfg = LearnerConfig::new(kind).with_seed(seed);
        let net = &mut cfg.network;
        if let Some(v) = self.layers {
            net.layers = v;
        }
        if let Some(v) = self.convs {
            net.convs = v;
        }
        if let Some(v) = self.hidden {
            net.hidden = v;
        }
        if let Some(v) = self.variant {
            net.variant = match v {
                VariantArg::Fullstack => EcnVariant::FullStacking,
                VariantArg::Sumstack => EcnVariant::SumStacking,
                VariantArg::Adding => EcnVariant::Adding,
            };
        }
        if let Some(v) = self.direction {
            net.direction = match v {
                DirectionArg::Both => DirectionMode::Both,
                DirectionArg::Forward => DirectionMode::Forward,
            };
        }
        if self.plain {
            net.stacked = false;
        }
        if let Some(v) = self.epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
            cfg.logit.learning_rate = v;
        }
        if let Some(v) = self.dropout {
            cfg.train.dropout = v;
        }
        if let Some(v) = self.validation_fraction {
            cfg.train.validation_fraction = v;
        }
        if let Some(v) = self.iterations {
            cfg.crf.iterations = v;
            cfg.logit.iterations = v;
        }
        if let Some(v) = self.lambda {
            cfg.crf.lambda = v;
        }
        if let Some(v) = self.l2 {
            cfg.logit.l2 = v;
        }
        if let Some(v) = self.edge_features {
            cfg.edge_features = match v {
                EdgeSetArg::Full => EdgeFeatureSet::Full,
                EdgeSetArg::Constant => EdgeFeatureSet::Constant,
                EdgeSetArg::Orientation => EdgeFeatureSet::Orientation,
            };
        }
        if let Some(v) = self.knots {
            cfg.knots = v;
        }
        cfg
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(value_enum)]
    kind: KindArg,
    #[command(flatten)]
    data: DataArg,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    learner: LearnerArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArg,
    /// Output directory for the tagged pages and their manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    data: DataArg,
    /// Output directory, one row structure per page.
    #[arg(long)]
    out: PathBuf,
    /// Decode the gold labels instead of the predictions.
    #[arg(long)]
    gold_labels: bool,
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Debug, Args)]
struct DecodeFlags {
    /// Share of columns a row separator must touch.
    #[arg(long)]
    column_fraction: Option<f64>,
    /// Clustering stop distance (defaults to the median line height).
    #[arg(long)]
    stop: Option<f64>,
}

impl DecodeFlags {
    fn resolve(&self) -> DecodeConfig {
        let mut cfg = DecodeConfig::default();
        if let Some(f) = self.column_fraction {
            cfg.column_fraction = f;
        }
        cfg.stop = self.stop;
        cfg
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArg,
    /// Directory of gold row structures; rows come from the gold labels otherwise.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Minimum Jaccard overlap for a row match.
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    #[arg(value_enum)]
    kind: KindArg,
    #[command(flatten)]
    data: DataArg,
    #[arg(long, default_value_t = 4)]
    folds: usize,
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    learner: LearnerArgs,
}

#[derive(Debug, Args)]
struct GraphArgs {
    #[command(flatten)]
    data: DataArg,
    /// Only this page.
    #[arg(long)]
    page: Option<String>,
    /// Output directory, one graph per page.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_overlap: Option<f64>,
    #[arg(long)]
    max_gap: Option<f64>,
}

fn load_input(path: &Path) -> Result<Dataset> {
    let manifest = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let bytes =
        fs::read(&manifest).with_context(|| format!("cannot read {}", manifest.display()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .with_context(|| format!("{} is not valid JSON", manifest.display()))?;
    let is_manifest = value.get("pages").is_some_and(|p| {
        p.as_array()
            .is_some_and(|a| a.iter().all(|e| e.is_string()))
    });
    let dataset = if is_manifest {
        load_dataset(&manifest)?
    } else {
        Dataset::new(
            load_pages(&bytes)
                .with_context(|| format!("cannot load pages from {}", manifest.display()))?,
        )
    };
    dataset.validate()?;
    log::info!(
        "loaded {} pages ({} lines) from {}",
        dataset.pages.len(),
        dataset.line_count(),
        manifest.display()
    );
    Ok(dataset)
}

fn load_structures(dir: &Path) -> Result<Vec<TableStructure>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            TableStructure::from_json(&bytes)
                .with_context(|| format!("bad row structure {}", p.display()))
        })
        .collect()
}

fn write_structures(dir: &Path, structures: &[TableStructure]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in structures {
        write_atomic(
            &dir.join(format!("{}.json", file_stem_for(&s.page))),
            &s.to_json(),
        )?;
    }
    Ok(())
}

fn log_config<T: serde::Serialize>(what: &str, config: &T) {
    log::info!(
        "{what}: {}",
        serde_json::to_string(config).unwrap_or_default()
    );
}

fn eval_config(threshold: Option<f64>, decode: &DecodeFlags) -> EvalConfig {
    let mut cfg = EvalConfig {
        decode: decode.resolve(),
        ..EvalConfig::default()
    };
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    cfg
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => {
            let config = SynthConfig::preset(match a.preset {
                PresetArg::Easy => Preset::Easy,
                PresetArg::Writers => Preset::Writers,
            });
            log_config(
                "synth config",
                &serde_json::json!({ "pages": a.pages, "seed": seed, "preset": config }),
            );
            let (dataset, gold) = generate_dataset(&config, a.pages, seed)?;
            let manifest = save_dataset(&dataset, &a.out)?;
            write_structures(&a.out.join("gold"), &gold)?;
            println!(
                "wrote {} pages to {}",
                dataset.pages.len(),
                manifest.display()
            );
        }
        Command::Train(a) => {
            let dataset = load_input(&a.data.data)?;
            let config = a.learner.resolve(a.kind.into(), seed);
            log_config("learner config", &config);
            let (model, summary) = fit(&dataset.pages, &config)?;
            write_atomic(&a.out, &save_model(&model)?)?;
            println!(
                "model: {} ({} pages, {} lines)",
                summary.kind, summary.pages, summary.lines
            );
            println!("train accuracy: {:.4}", summary.train_accuracy);
            if let Some(v) = summary.validation_loss {
                println!("validation loss: {v:.6}");
            }
            if let (Some(best), Some(run)) = (summary.best_epoch, summary.epochs_run) {
                println!("best epoch: {best} of {run}");
            }
            if let (Some(it), Some(obj)) = (summary.best_iteration, summary.objective) {
                println!("best iteration: {it}, objective {obj:.6}");
            }
            println!("wrote {}", a.out.display());
        }
        Command::Predict(a) => {
            let bytes =
                fs::read(&a.model).with_context(|| format!("cannot read {}", a.model.display()))?;
            let model = load_model(&bytes)
                .with_context(|| format!("cannot load model {}", a.model.display()))?;
            log_config("model config", &model.config);
            let dataset = load_input(&a.data.data)?;
            let pages = predict_pages(&model, &dataset.pages)?;
            let out = Dataset {
                pages,
                folds: dataset.folds,
            };
            let manifest = save_dataset(&out, &a.out)?;
            println!(
                "wrote {} tagged pages to {}",
                out.pages.len(),
                manifest.display()
            );
        }
        Command::Decode(a) => {
            let cfg = a.decode.resolve();
            log_config("decode config", &cfg);
            let dataset = load_input(&a.data.data)?;
            let structures = dataset
                .pages
                .iter()
                .map(|p| {
                    if a.gold_labels {
                        decode_gold(p, &cfg)
                    } else {
                        decode(p, &cfg)
                    }
                })
                .collect::<tablegraph::Result<Vec<_>>>()?;
            write_structures(&a.out, &structures)?;
            let rows: usize = structures.iter().map(|s| s.rows.len()).sum();
            println!(
                "decoded {rows} rows on {} pages into {}",
                structures.len(),
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let cfg = eval_config(a.threshold, &a.decode);
            log_config("eval config", &cfg);
            let dataset = load_input(&a.data.data)?;
            let gold = a.gold.as_deref().map(load_structures).transpose()?;
            let report = evaluate(&dataset.pages, gold.as_deref(), &cfg)?;
            print!("{}", format_table(&[("All".to_string(), &report)]));
            println!("accuracy: {:.4}", report.accuracy);
            println!(
                "row precision {:.4} recall {:.4} f1 {:.4}",
                report.row_precision, report.row_recall, report.row_f1
            );
            if let Some(out) = a.out {
                write_atomic(&out, &report.to_json())?;
            }
        }
        Command::Crossval(a) => {
            let dataset = load_input(&a.data.data)?;
            let learner = a.learner.resolve(a.kind.into(), seed);
            let cfg = eval_config(
                a.threshold,
                &DecodeFlags {
                    column_fraction: None,
                    stop: None,
                },
            );
            log_config("learner config", &learner);
            log_config("eval config", &cfg);
            let report = crossval(&dataset, &learner, a.folds, &cfg)?;
            print!("{}", report.table());
            if let Some(out) = a.out {
                let mut bytes = serde_json::to_vec_pretty(&report)?;
                bytes.push(b'\n');
                write_atomic(&out, &bytes)?;
            }
        }
        Command::Stats(a) => {
            let dataset = load_input(&a.data)?;
            let stats = label_stats(&dataset)?;
            println!("pages: {}", dataset.pages.len());
            println!("lines: {}", stats.lines);
            println!("cells: {}", stats.cells);
            for label in tablegraph::BiesoLabel::ALL {
                let c = stats.count(label);
                let share = if stats.lines == 0 {
                    0.0
                } else {
                    c as f64 / stats.lines as f64
                };
                println!("{}: {c} ({share:.3})", label.as_char());
            }
        }
        Command::Graph(a) => {
            let mut params = GraphParams::default();
            if let Some(v) = a.min_overlap {
                params.min_overlap = v;
            }
            params.max_gap = a.max_gap.or(params.max_gap);
            log_config("graph config", &params);
            let dataset = load_input(&a.data.data)?;
            let pages: Vec<_> = dataset
                .pages
                .iter()
                .filter(|p| a.page.as_ref().is_none_or(|id| &p.id == id))
                .collect();
            if pages.is_empty() {
                bail!("no page matches {:?}", a.page.unwrap_or_default());
            }
            fs::create_dir_all(&a.out)?;
            for page in pages {
                let graph = build_graph(page, &params);
                write_atomic(
                    &a.out.join(format!("{}.json", file_stem_for(&page.id))),
                    &graph.to_json(),
                )?;
                println!(
                    "{}: {} nodes, {} edges",
                    page.id,
                    graph.node_count(),
                    graph.edge_count()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        "warn"
    } else {
        match cli.verbose {
            0 => "info",
            1 => "debug",
            _ => "trace",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
