//! The `kgtod` command line.
//!
//! Every command reads an optional TOML config (`--config`); flags override
//! it. Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use kgtod::entities::EntitySlots;
use kgtod::ingest::{load_dataset, save_dataset, Format};
use kgtod::metrics::{render_main_table, render_stage_grid, EvalReport};
use kgtod::pipeline::{
    build_vocab, make_training_data, ranker_examples, sort_reports, train_models, write_predictions, Architecture,
    Engine, KnowledgeSource, MakeDataReport, ModelSet, PipelineConfig, StageSpec,
};
use kgtod::retrieval::{load_corpus, save_corpus, CorpusIndex};
use kgtod::select::{train_ranker, RankerConfig, RankerModel};
use kgtod::seqfmt::TrainingSequence;
use kgtod::stats::dataset_stats;
use kgtod::synth::{generate_synthetic, SynthSchema};
use kgtod::text::lm_text;
use kgtod::CoreError;
use kgtod_lm::LmConfig;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "kgtod", version, about = "Knowledge-enriched task-oriented dialogue workflow")]
pub struct Cli {
    #[command(flatten)]
    pub opts: Opts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// TOML config; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// JSON-lines article corpus.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// baseline, plus or combiner.
    #[arg(long, global = true)]
    pub arch: Option<String>,
    #[arg(long, global = true)]
    pub gold_tod: bool,
    #[arg(long, global = true)]
    pub gold_decision: bool,
    #[arg(long, global = true)]
    pub gold_knowledge: bool,
    /// lexical or trained.
    #[arg(long, global = true)]
    pub ranker: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output (artifact) directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset format: sgd or ketod.
    #[arg(long, global = true)]
    pub format: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset statistics.
    Stats,
    /// Generate a synthetic dataset and its corpus.
    Synth {
        /// Number of dialogues.
        #[arg(long)]
        n: Option<usize>,
        /// Declarative schema (TOML); the bundled one by default.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Build and summarize the corpus index.
    Index,
    /// Build training sequences (and the ranker) for an architecture.
    MakeData,
    /// Train the language model(s) on the sequences in --out.
    Train,
    /// Evaluate trained models on a dataset.
    Evaluate,
    /// Render evaluation reports as tables.
    Report {
        /// Report files or directories (default: <out>/eval).
        inputs: Vec<PathBuf>,
    },
}

/// Settings read from the config file. All optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub arch: Option<String>,
    pub ranker: Option<String>,
    pub seed: Option<u64>,
    pub format: Option<String>,
    pub gold_tod: Option<bool>,
    pub gold_decision: Option<bool>,
    pub gold_knowledge: Option<bool>,
    pub dialogues: Option<usize>,
    pub test_fraction: Option<f64>,
    pub schema: Option<PathBuf>,
    pub lm: Option<LmConfig>,
    pub pipeline: Option<PipelineConfig>,
    pub ranker_training: Option<RankerConfig>,
}

/// Flags merged over the config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub arch: Option<Architecture>,
    pub ranker: String,
    pub seed: Option<u64>,
    pub format: Format,
    pub stage: StageSpec,
    pub dialogues: usize,
    pub test_fraction: f64,
    pub schema: Option<PathBuf>,
    pub lm: LmConfig,
    pub pipeline: PipelineConfig,
    pub ranker_training: RankerConfig,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CoreError),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Parse { .. } | CoreError::Validation { .. } | CoreError::Config(_) => 2,
                CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<kgtod_lm::LmError> for CliError {
    fn from(e: kgtod_lm::LmError) -> Self {
        CliError::Core(CoreError::Lm(e))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

impl RunConfig {
    pub fn resolve(opts: &Opts) -> Result<Self> {
        let file = match &opts.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let arch = opts.arch.clone().or(file.arch).map(|a| a.parse::<Architecture>()).transpose()?;
        let ranker = opts.ranker.clone().or(file.ranker).unwrap_or_else(|| "lexical".into());
        if ranker != "lexical" && ranker != "trained" {
            return Err(usage(format!("unknown ranker {ranker:?} (lexical, trained)")));
        }
        let format =
            opts.format.clone().or(file.format).unwrap_or_else(|| "ketod".into()).parse::<Format>().map_err(usage)?;
        let stage = StageSpec::new(
            opts.gold_tod || file.gold_tod.unwrap_or(false),
            opts.gold_decision || file.gold_decision.unwrap_or(false),
            opts.gold_knowledge || file.gold_knowledge.unwrap_or(false),
        )?;
        let test_fraction = file.test_fraction.unwrap_or(0.2);
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(usage("test_fraction must lie in [0, 1)"));
        }
        Ok(RunConfig {
            dataset: opts.dataset.clone().or(file.dataset),
            corpus: opts.corpus.clone().or(file.corpus),
            out: opts.out.clone().or(file.out),
            arch,
            ranker,
            seed: opts.seed.or(file.seed),
            format,
            stage,
            dialogues: file.dialogues.unwrap_or(2000),
            test_fraction,
            schema: file.schema,
            lm: file.lm.unwrap_or_default(),
            pipeline: file.pipeline.unwrap_or_default(),
            ranker_training: file.ranker_training.unwrap_or_default(),
        })
    }

    fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        v.as_deref().ok_or_else(|| usage(format!("--{flag} is required")))
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| usage("--seed is required for this command"))
    }

    fn out_dir(&self) -> Result<&Path> {
        let d = Self::need(&self.out, "out")?;
        std::fs::create_dir_all(d).map_err(|e| CoreError::io(d, e))?;
        Ok(d)
    }
}

/// An input artifact another stage must have produced.
fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("missing {what}: {} (run the earlier stage first)", path.display())))
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e).into())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Entity slots from the config, else `entity_slots.json` next to the dataset.
fn entity_slots(cfg: &RunConfig, dataset: &Path) -> Result<EntitySlots> {
    if !cfg.pipeline.entity_slots.0.is_empty() {
        return Ok(cfg.pipeline.entity_slots.clone());
    }
    let side = dataset.parent().unwrap_or(Path::new(".")).join("entity_slots.json");
    if side.exists() {
        return read_json(&side);
    }
    log::warn!("no entity slots configured; knowledge retrieval will find no entities");
    Ok(EntitySlots::new())
}

fn pipeline_config(cfg: &RunConfig, dataset: &Path) -> Result<PipelineConfig> {
    Ok(PipelineConfig { entity_slots: entity_slots(cfg, dataset)?, ..cfg.pipeline.clone() })
}

fn load_index(cfg: &RunConfig) -> Result<Option<CorpusIndex>> {
    match &cfg.corpus {
        Some(p) => Ok(Some(CorpusIndex::build(load_corpus(p)?)?)),
        None => Ok(None),
    }
}

fn source(index: &Option<CorpusIndex>) -> KnowledgeSource<'_> {
    index.as_ref().map_or(KnowledgeSource::Dialogue, KnowledgeSource::Index)
}

#[derive(Serialize, Deserialize)]
struct MakeDataManifest {
    version: u32,
    arch: Architecture,
    ranker: String,
    dataset: PathBuf,
    report: MakeDataReport,
}

#[derive(Serialize, Deserialize)]
struct IndexSummary {
    version: u32,
    corpus: PathBuf,
    articles: usize,
    terms: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainSummary {
    version: u32,
    arch: Architecture,
    vocab: usize,
    models: Vec<ModelSummary>,
}

#[derive(Serialize, Deserialize)]
struct ModelSummary {
    initial_loss: f64,
    epoch_losses: Vec<f64>,
    truncated: usize,
}

fn cmd_stats(cfg: &RunConfig) -> Result<()> {
    let path = RunConfig::need(&cfg.dataset, "dataset")?;
    let ds = load_dataset(path, cfg.format)?;
    let s = dataset_stats(&ds);
    print!("{s}");
    let json = serde_json::to_string(&s).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{json}");
    if cfg.out.is_some() {
        write_json(&cfg.out_dir()?.join("stats.json"), &s)?;
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, n: Option<usize>, schema: Option<&Path>) -> Result<()> {
    let seed = cfg.seed()?;
    let out = cfg.out_dir()?;
    let schema = match schema.or(cfg.schema.as_deref()) {
        Some(p) => SynthSchema::load(p)?,
        None => SynthSchema::default_schema(),
    };
    let n = n.unwrap_or(cfg.dialogues);
    let s = generate_synthetic(&schema, n, seed)?;
    let n_test = ((n as f64) * cfg.test_fraction).round() as usize;
    let (train, test) = s.dialogues.split_at(n - n_test);
    save_dataset(&out.join("train.json"), train)?;
    save_dataset(&out.join("test.json"), test)?;
    save_corpus(&out.join("corpus.jsonl"), &s.corpus)?;
    write_json(&out.join("entity_slots.json"), &schema.entity_slots())?;
    write_json(&out.join("tallies.json"), &s.tallies)?;
    println!(
        "{} dialogues ({} train, {} test), {} turns, {} enriched, {} articles -> {}",
        n,
        train.len(),
        test.len(),
        s.tallies.turns,
        s.tallies.enriched_turns,
        s.corpus.len(),
        out.display()
    );
    Ok(())
}

fn cmd_index(cfg: &RunConfig) -> Result<()> {
    let corpus = RunConfig::need(&cfg.corpus, "corpus")?;
    let index = CorpusIndex::build(load_corpus(corpus)?)?;
    let summary = IndexSummary {
        version: ARTIFACT_VERSION,
        corpus: corpus.to_path_buf(),
        articles: index.len(),
        terms: index.terms(),
    };
    println!("{} articles, {} terms", summary.articles, summary.terms);
    if cfg.out.is_some() {
        write_json(&cfg.out_dir()?.join("index.json"), &summary)?;
    }
    Ok(())
}

fn cmd_make_data(cfg: &RunConfig) -> Result<()> {
    let dataset = RunConfig::need(&cfg.dataset, "dataset")?;
    let arch = cfg.arch.ok_or_else(|| usage("--arch is required"))?;
    let out = cfg.out_dir()?;
    let ds = load_dataset(dataset, cfg.format)?;
    let pc = pipeline_config(cfg, dataset)?;
    let index = load_index(cfg)?;
    let ranker = if cfg.ranker == "trained" {
        let rc = RankerConfig { seed: cfg.seed()?, ..cfg.ranker_training };
        let ex = ranker_examples(&ds, source(&index), &pc.entity_slots);
        let t = train_ranker(&ex, &rc)?;
        log::info!("ranker loss {:.4} -> {:.4}", t.losses[0], t.losses.last().unwrap());
        t.model
    } else {
        RankerModel::Lexical
    };
    ranker.save(&out.join("ranker.json"))?;
    let (seqs, report) = make_training_data(arch, &ds, source(&index), &ranker, &pc)?;
    let mut text = String::new();
    for s in &seqs {
        text.push_str(&serde_json::to_string(s).map_err(|e| CliError::Runtime(e.to_string()))?);
        text.push('\n');
    }
    let path = out.join("sequences.jsonl");
    std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
    println!("{} {} sequences -> {}", report.sequences, arch, path.display());
    write_json(
        &out.join("make_data.json"),
        &MakeDataManifest {
            version: ARTIFACT_VERSION,
            arch,
            ranker: cfg.ranker.clone(),
            dataset: dataset.to_path_buf(),
            report,
        },
    )
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let out = cfg.out_dir()?;
    let manifest_path = out.join("make_data.json");
    require(&manifest_path, "training-data manifest")?;
    let manifest: MakeDataManifest = read_json(&manifest_path)?;
    if cfg.arch.is_some_and(|a| a != manifest.arch) {
        return Err(usage(format!("--arch does not match the training data ({})", manifest.arch)));
    }
    let seq_path = out.join("sequences.jsonl");
    require(&seq_path, "training sequences")?;
    let text = std::fs::read_to_string(&seq_path).map_err(|e| CoreError::io(&seq_path, e))?;
    let seqs: Vec<TrainingSequence> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| usage(format!("{}: {e}", seq_path.display()))))
        .collect::<Result<_>>()?;
    let corpus_text: Vec<String> = match &cfg.corpus {
        Some(p) => load_corpus(p)?.iter().flat_map(|a| a.paragraphs.iter().map(|x| lm_text(x))).collect(),
        None => Vec::new(),
    };
    let vocab = build_vocab(&seqs, corpus_text.iter().map(String::as_str));
    let lm = LmConfig { seed, ..cfg.lm.clone() };
    let (models, reports) =
        train_models(manifest.arch, &seqs, &vocab, &lm, |m, e, l| log::info!("{m} epoch {e}: loss {l:.4}"))?;
    models.save(&out.join("models"))?;
    for (i, r) in reports.iter().enumerate() {
        println!("model {i}: loss {:.4} -> {:.4}", r.initial_loss, r.epoch_losses.last().copied().unwrap_or(f64::NAN));
    }
    write_json(
        &out.join("train.json"),
        &TrainSummary {
            version: ARTIFACT_VERSION,
            arch: manifest.arch,
            vocab: vocab.len(),
            models: reports
                .into_iter()
                .map(|r| ModelSummary {
                    initial_loss: r.initial_loss,
                    epoch_losses: r.epoch_losses,
                    truncated: r.truncated,
                })
                .collect(),
        },
    )
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect()
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let dataset = RunConfig::need(&cfg.dataset, "dataset")?;
    let out = cfg.out_dir()?;
    let models_dir = out.join("models");
    require(&models_dir.join("models.json"), "trained models")?;
    let models = ModelSet::load(&models_dir)?;
    if cfg.arch.is_some_and(|a| a != models.arch) {
        return Err(usage(format!("--arch does not match the trained models ({})", models.arch)));
    }
    let ranker_path = out.join("ranker.json");
    let (ranker, ranker_name) = if ranker_path.exists() {
        let r = RankerModel::load(&ranker_path)?;
        let name = if matches!(r, RankerModel::Lexical) { "lexical" } else { "trained" };
        (r, name.to_string())
    } else {
        (RankerModel::Lexical, "lexical".to_string())
    };
    if cfg.ranker == "trained" && ranker_name != "trained" {
        return Err(usage(format!("--ranker trained needs a trained ranker at {}", ranker_path.display())));
    }
    let ds = load_dataset(dataset, cfg.format)?;
    let pc = pipeline_config(cfg, dataset)?;
    let index = if models.arch.uses_knowledge() { load_index(cfg)? } else { None };
    let engine = Engine { models: &models, knowledge: source(&index), ranker: &ranker, config: &pc };
    let (report, preds) = engine.run_eval(&ds, cfg.stage, &ranker_name)?;
    let eval = out.join("eval");
    std::fs::create_dir_all(&eval).map_err(|e| CoreError::io(&eval, e))?;
    let stem = format!("{}__{}", models.arch, slug(&report.stage));
    write_json(&eval.join(format!("{stem}.json")), &report)?;
    write_predictions(&eval.join(format!("{stem}.jsonl")), &preds)?;
    print!("{}", render_main_table(std::slice::from_ref(&report)));
    Ok(())
}

fn collect_reports(inputs: &[PathBuf]) -> Result<Vec<EvalReport>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CoreError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            v.sort();
            files.extend(v);
        } else {
            require(p, "evaluation report")?;
            files.push(p.clone());
        }
    }
    files.iter().map(|f| read_json(f)).collect()
}

fn cmd_report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let inputs = if inputs.is_empty() {
        let d = RunConfig::need(&cfg.out, "out")?.join("eval");
        require(&d, "evaluation directory")?;
        vec![d]
    } else {
        inputs.to_vec()
    };
    let mut reports = collect_reports(&inputs)?;
    if reports.is_empty() {
        return Err(usage("no evaluation reports found"));
    }
    sort_reports(&mut reports);
    let text = format!("{}\n{}", render_main_table(&reports), render_stage_grid(&reports));
    print!("{text}");
    if cfg.out.is_some() {
        let p = cfg.out_dir()?.join("report.txt");
        std::fs::write(&p, &text).map_err(|e| CoreError::io(&p, e))?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli.opts)?;
    match &cli.command {
        Command::Stats => cmd_stats(&cfg),
        Command::Synth { n, schema } => cmd_synth(&cfg, *n, schema.as_deref()),
        Command::Index => cmd_index(&cfg),
        Command::MakeData => cmd_make_data(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Report { inputs } => cmd_report(&cfg, inputs),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(args: &[&str]) -> Opts {
        let mut v = vec!["kgtod"];
        v.extend_from_slice(args);
        v.push("stats");
        Cli::try_parse_from(v).unwrap().opts
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\narch = \"combiner\"\nranker = \"trained\"\n[lm]\nd_model = 32\n").unwrap();
        let c = RunConfig::resolve(&opts(&["--config", p.to_str().unwrap(), "--seed", "9"])).unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.arch, Some(Architecture::Combiner));
        assert_eq!(c.ranker, "trained");
        assert_eq!(c.lm.d_model, 32);
        assert_eq!(c.lm.n_layers, LmConfig::default().n_layers);
    }

    #[test]
    fn bad_stage_nesting_is_a_usage_error() {
        let e = RunConfig::resolve(&opts(&["--gold-knowledge"])).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "sed = 3\n").unwrap();
        assert!(RunConfig::resolve(&opts(&["--config", p.to_str().unwrap()])).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Core(CoreError::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::Training("x".into())).exit_code(), 3);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 3);
    }
}
