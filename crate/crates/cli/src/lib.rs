//! The `asmote` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 training failure.

use std::collections::{BTreeSet, HashSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use asmote::corpus::{
    build_dataset, merge_sentence_triplets, partition_dev, read_aste_file, read_split, split_stats, write_jsonl,
    write_split, write_triplets, DatasetSplit, SplitName, SplitStats,
};
use asmote::encoder::{EmbeddingEncoderFactory, EncoderFactory, EncoderRole};
use asmote::evaluation::{format_subtask_table, format_triplet_table, MetricReport, ResultRow};
use asmote::training::{
    average_metrics, run_experiment, saved_variant, EncoderRegime, ExperimentData, ModelVariant, RunMetrics,
    Selection, TrainConfig, TrainedPipeline,
};
use asmote_bert::BertEncoderFactory;
use clap::{Args, Parser, Subcommand};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;

/// Environment variable naming the data root directory.
pub const DATA_ROOT_ENV: &str = "ASMOTE_DATA_ROOT";

#[derive(Parser, Debug)]
#[command(name = "asmote", version, about = "Aspect-sentiment-multiple-opinion triplet extraction")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Directory holding built datasets (`<root>/<name>/{train,dev,test}.jsonl`).
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,

    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build train/dev/test files from SemEval XML and TOWE files.
    BuildData(BuildDataArgs),
    /// Print sentence, aspect, triplet and conflict counts per split.
    Stats {
        /// Dataset names (under the data root) or directories.
        #[arg(required = true)]
        datasets: Vec<String>,
    },
    /// Train and test every configured run, writing checkpoints and a manifest.
    ///
    /// Settings come from command-line flags first, then the config file, then
    /// built-in defaults.
    Train(TrainArgs),
    /// Score saved pipelines on a dataset split.
    Evaluate(EvaluateArgs),
    /// Write predicted triplets for the sentences of a dataset file.
    Predict {
        /// A saved pipeline directory (`run-<k>`).
        pipeline: PathBuf,
        /// Sentences in the dataset line format; annotations are ignored.
        input: PathBuf,
        /// Output triplet file.
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        restore: RestoreArgs,
    },
    /// Merge single-opinion triplets from a baseline into multi-opinion ones.
    MergeAste {
        /// Baseline output, JSON lines or `sentence####[...]` lines.
        input: PathBuf,
        /// Output triplet file.
        output: PathBuf,
    },
    /// Write attention weights for the aspects of a dataset file.
    ExportAttention {
        pipeline: PathBuf,
        /// Sentences in the dataset line format; gold aspects are used, or
        /// predicted ones when a sentence has none.
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Only this sentence id.
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        restore: RestoreArgs,
    },
}

#[derive(Args, Debug)]
struct BuildDataArgs {
    /// Dataset name, e.g. 14res.
    name: String,
    #[arg(long)]
    semeval_train: PathBuf,
    #[arg(long)]
    towe_train: PathBuf,
    #[arg(long)]
    semeval_test: PathBuf,
    #[arg(long)]
    towe_test: PathBuf,
    /// File with one dev sentence id per line; otherwise a seeded random
    /// fraction of train becomes dev.
    #[arg(long)]
    dev_ids: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    dev_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory [default: <data root>/<name>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset name (under the data root) or directory.
    dataset: String,
    /// TOML file with training settings.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Run directory [default: runs/<dataset>-<variant>].
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Model variant, e.g. AGF, AGF_S, AGF-p, AGF-t, AGF^B, AGF-t^BF.
    #[arg(long)]
    variant: Option<ModelVariant>,
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated seeds, one per run [default: 1..=runs].
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Treat attention weights as constants in the classifier loss.
    #[arg(long)]
    detach_attention: bool,
    /// Joint-phase dev criterion: accuracy_plus_f1, accuracy or f1.
    #[arg(long)]
    selection: Option<String>,
    /// Word-vector text file for the BiLSTM encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Pretrained transformer directory.
    #[arg(long)]
    pretrained_dir: Option<PathBuf>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// A run directory (with manifest.jsonl) or a single pipeline directory.
    model: PathBuf,
    /// Dataset name (under the data root) or directory.
    dataset: String,
    #[arg(long, default_value = "test")]
    split: SplitName,
    /// Also write one metrics record per pipeline to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    restore: RestoreArgs,
}

#[derive(Args, Debug)]
struct RestoreArgs {
    /// Pretrained transformer directory for transformer variants [default:
    /// taken from the run's config.toml].
    #[arg(long)]
    pretrained_dir: Option<PathBuf>,
}

/// An error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &asmote::Error) -> u8 {
    use asmote::Error as E;
    match e {
        E::Config(_) => EXIT_USAGE,
        E::Diverged(_) | E::Backend(_) => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

impl From<asmote::Error> for Failure {
    fn from(e: asmote::Error) -> Self {
        Failure::new(exit_code(&e), e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, S>(args: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let root = cli.data_root.as_deref();
    match cli.command {
        Command::BuildData(a) => build_data(a, root),
        Command::Stats { datasets } => stats(&datasets, root),
        Command::Train(a) => train(a, root),
        Command::Evaluate(a) => evaluate(a, root),
        Command::Predict {
            pipeline,
            input,
            out,
            restore,
        } => predict(&pipeline, &input, &out, &restore),
        Command::MergeAste { input, output } => merge(&input, &output),
        Command::ExportAttention {
            pipeline,
            input,
            out,
            id,
            restore,
        } => export_attention(&pipeline, &input, &out, id.as_deref(), &restore),
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_DATA, anyhow!("{} not found", path.display())))
    }
}

fn dataset_dir(arg: &str, root: Option<&Path>) -> CliResult<PathBuf> {
    let direct = PathBuf::from(arg);
    if direct.is_dir() {
        return Ok(direct);
    }
    match root {
        Some(r) if r.join(arg).is_dir() => Ok(r.join(arg)),
        Some(r) => Err(Failure::new(
            EXIT_DATA,
            anyhow!("dataset {arg} not found as a directory or under {}", r.display()),
        )),
        None => Err(Failure::new(
            EXIT_DATA,
            anyhow!("dataset {arg} is not a directory; set --data-root or {DATA_ROOT_ENV}"),
        )),
    }
}

fn split_path(dir: &Path, name: SplitName) -> PathBuf {
    dir.join(format!("{name}.jsonl"))
}

fn load_split(dir: &Path, name: SplitName) -> CliResult<DatasetSplit> {
    let path = split_path(dir, name);
    require_file(&path)?;
    Ok(read_split(&path, name)?)
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn load_data(dir: &Path) -> CliResult<ExperimentData> {
    Ok(ExperimentData {
        name: dataset_name(dir),
        train: load_split(dir, SplitName::Train)?,
        dev: load_split(dir, SplitName::Dev)?,
        test: load_split(dir, SplitName::Test)?,
    })
}

fn build_data(a: BuildDataArgs, root: Option<&Path>) -> CliResult<()> {
    for p in [&a.semeval_train, &a.towe_train, &a.semeval_test, &a.towe_test] {
        require_file(p)?;
    }
    let dev_ids: Option<HashSet<String>> = match &a.dev_ids {
        Some(p) => {
            require_file(p)?;
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(|e| Failure::new(EXIT_DATA, e))?;
            Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        }
        None => None,
    };
    let out = match (&a.out, root) {
        (Some(o), _) => o.clone(),
        (None, Some(r)) => r.join(&a.name),
        (None, None) => {
            return Err(Failure::new(
                EXIT_USAGE,
                anyhow!("give --out, --data-root or {DATA_ROOT_ENV}"),
            ))
        }
    };
    let full_train = build_dataset(&a.semeval_train, &a.towe_train, SplitName::Train)?;
    let test = build_dataset(&a.semeval_test, &a.towe_test, SplitName::Test)?;
    let (train, dev) = partition_dev(&full_train, dev_ids.as_ref(), a.dev_fraction, a.seed)?;
    std::fs::create_dir_all(&out).map_err(|e| asmote::Error::io(&out, e))?;
    for split in [&train, &dev, &test] {
        write_split(&split_path(&out, split.name), split)?;
    }
    let per = [&train, &dev, &test].map(|s| (s.name, split_stats(s))).to_vec();
    println!("{}", stats_table(&[(a.name, per)]));
    Ok(())
}

type DatasetStats = (String, Vec<(SplitName, SplitStats)>);

/// One row per split, one column group per dataset.
fn stats_table(rows: &[DatasetStats]) -> String {
    let mut out = format!("{:<8}", "split");
    for (name, _) in rows {
        for c in ["#s", "#a", "#t", "#tc"] {
            out.push_str(&format!(" {:>10}", format!("{name}/{c}")));
        }
    }
    for split in SplitName::ALL {
        out.push('\n');
        out.push_str(&format!("{:<8}", split.as_str()));
        for (_, stats) in rows {
            match stats.iter().find(|(s, _)| *s == split) {
                Some((_, st)) => {
                    let (s, a, t, tc) = st.as_tuple();
                    for v in [s, a, t, tc] {
                        out.push_str(&format!(" {v:>10}"));
                    }
                }
                None => out.push_str(&format!(" {:>10} {:>10} {:>10} {:>10}", "-", "-", "-", "-")),
            }
        }
    }
    out
}

fn stats(datasets: &[String], root: Option<&Path>) -> CliResult<()> {
    let mut rows = Vec::new();
    for d in datasets {
        let dir = dataset_dir(d, root)?;
        let mut per = Vec::new();
        for name in SplitName::ALL {
            per.push((name, split_stats(&load_split(&dir, name)?)));
        }
        rows.push((dataset_name(&dir), per));
    }
    println!("{}", stats_table(&rows));
    Ok(())
}

fn parse_selection(s: &str) -> CliResult<Selection> {
    match s {
        "accuracy_plus_f1" => Ok(Selection::AccuracyPlusF1),
        "accuracy" => Ok(Selection::Accuracy),
        "f1" => Ok(Selection::F1),
        other => Err(Failure::new(EXIT_USAGE, anyhow!("unknown selection {other:?}"))),
    }
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => {
            require_file(p).map_err(|f| Failure::new(EXIT_USAGE, f.error))?;
            let text = std::fs::read_to_string(p).map_err(|e| asmote::Error::io(p, e))?;
            TrainConfig::parse_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.variant {
        c.variant = v;
    }
    if let Some(r) = a.runs {
        c.runs = r;
    }
    if let Some(s) = &a.seeds {
        c.seeds = s.clone();
        if a.runs.is_none() {
            c.runs = s.len();
        }
    }
    if let Some(v) = a.max_epochs {
        c.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        c.learning_rate = Some(v);
    }
    if let Some(v) = a.patience {
        c.patience = v;
    }
    if let Some(v) = a.dropout {
        c.dropout = v;
    }
    if a.detach_attention {
        c.detach_attention = true;
    }
    if let Some(s) = &a.selection {
        c.selection = parse_selection(s)?;
    }
    if let Some(p) = &a.embeddings {
        c.encoder.embedding_path = Some(p.clone());
    }
    if let Some(p) = &a.pretrained_dir {
        c.encoder.pretrained_dir = Some(p.clone());
    }
    if let Some(h) = a.hidden_size {
        c.encoder.hidden_size = h;
    }
    if let Some(m) = a.max_len {
        c.encoder.max_len = m;
    }
    c.validate()?;
    Ok(c)
}

fn vocabulary(data: &ExperimentData) -> (BTreeSet<String>, HashSet<String>) {
    let words = |s: &DatasetSplit| -> Vec<String> { s.sentences.iter().flat_map(|x| x.tokens.iter().cloned()).collect() };
    let train: HashSet<String> = words(&data.train).into_iter().collect();
    let mut all: BTreeSet<String> = train.iter().cloned().collect();
    all.extend(words(&data.dev));
    all.extend(words(&data.test));
    (all, train)
}

fn training_factory(config: &TrainConfig, data: &ExperimentData) -> CliResult<Box<dyn EncoderFactory<f32>>> {
    if config.variant.regime == EncoderRegime::BilstmEmb {
        let path = config.encoder.embedding_path.as_ref().expect("validated");
        require_file(path)?;
        let (words, train) = vocabulary(data);
        Ok(Box::new(EmbeddingEncoderFactory::<f32>::load(
            config.encoder_config(EncoderRole::Ate),
            &words,
            &train,
        )?))
    } else {
        Ok(Box::new(BertEncoderFactory::from_train_config(config)?))
    }
}

fn result_row(method: &str, dataset: &str, m: &RunMetrics) -> ResultRow {
    let report = |p, r, f1| MetricReport {
        precision: p,
        recall: r,
        f1,
        ..MetricReport::default()
    };
    ResultRow {
        method: method.to_string(),
        dataset: dataset.to_string(),
        triplet: report(m.triplet_precision, m.triplet_recall, m.triplet_f1),
        atsa_accuracy: m.atsa_accuracy,
        towe: report(0.0, 0.0, m.towe_f1),
    }
}

fn train(a: TrainArgs, root: Option<&Path>) -> CliResult<()> {
    let config = train_config(&a)?;
    let dir = dataset_dir(&a.dataset, root)?;
    let data = load_data(&dir)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", data.name, config.variant)));
    let factory = training_factory(&config, &data)?;
    let manifest = run_experiment(&config, &data, factory.as_ref(), Some(&out)).map_err(|e| match e {
        asmote::Error::Config(_) => Failure::from(e),
        other => Failure::new(EXIT_TRAINING, other),
    })?;
    let row = result_row(&config.variant.to_string(), &data.name, &manifest.average);
    println!("{}", format_triplet_table(std::slice::from_ref(&row)));
    println!("{}", format_subtask_table(&[row]));
    println!("manifest: {}", out.join("manifest.jsonl").display());
    Ok(())
}

/// Pretrained directory for restoring a transformer variant: the flag, else
/// the `config.toml` of the run directory holding `pipeline`.
fn restore_factory(pipeline: &Path, restore: &RestoreArgs) -> CliResult<Box<dyn EncoderFactory<f32>>> {
    let variant = saved_variant(pipeline)?;
    if variant.regime == EncoderRegime::BilstmEmb {
        return Ok(Box::new(EmbeddingEncoderFactory::<f32>::restore_only()));
    }
    let mut config = [pipeline.join("config.toml"), pipeline.join("../config.toml")]
        .iter()
        .find(|p| p.is_file())
        .map(|p| TrainConfig::from_toml_file(p))
        .transpose()?
        .unwrap_or_default();
    config.variant = variant;
    if let Some(dir) = &restore.pretrained_dir {
        config.encoder.pretrained_dir = Some(dir.clone());
    }
    if config.encoder.pretrained_dir.is_none() {
        return Err(Failure::new(
            EXIT_USAGE,
            anyhow!("{variant} needs --pretrained-dir (no config.toml next to the pipeline)"),
        ));
    }
    Ok(Box::new(BertEncoderFactory::from_train_config(&config)?))
}

fn load_pipeline(dir: &Path, restore: &RestoreArgs) -> CliResult<TrainedPipeline<f32>> {
    if !dir.join("pipeline.json").is_file() {
        return Err(Failure::new(EXIT_DATA, anyhow!("{} is not a saved pipeline", dir.display())));
    }
    let factory = restore_factory(dir, restore)?;
    Ok(TrainedPipeline::load(dir, factory.as_ref())?)
}

fn pipelines_in(model: &Path) -> CliResult<Vec<PathBuf>> {
    if model.join("pipeline.json").is_file() {
        return Ok(vec![model.to_path_buf()]);
    }
    let mut runs: Vec<PathBuf> = std::fs::read_dir(model)
        .map_err(|e| asmote::Error::io(model, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("pipeline.json").is_file())
        .collect();
    runs.sort();
    if runs.is_empty() {
        return Err(Failure::new(EXIT_DATA, anyhow!("no saved pipelines in {}", model.display())));
    }
    Ok(runs)
}

fn evaluate(a: EvaluateArgs, root: Option<&Path>) -> CliResult<()> {
    let dir = dataset_dir(&a.dataset, root)?;
    let split = asmote::corpus::remove_conflict(&load_split(&dir, a.split)?);
    let name = dataset_name(&dir);
    let mut all = Vec::new();
    let mut records = Vec::new();
    for p in pipelines_in(&a.model)? {
        let pipeline = load_pipeline(&p, &a.restore)?;
        let (m, _) = pipeline.evaluate(&split)?;
        println!(
            "{}: triplet P {:.4} R {:.4} F1 {:.4}, sentiment accuracy {:.4}, opinion F1 {:.4}, aspect F1 {:.4}",
            p.display(),
            m.triplet_precision,
            m.triplet_recall,
            m.triplet_f1,
            m.atsa_accuracy,
            m.towe_f1,
            m.ate_f1
        );
        records.push(serde_json::json!({"pipeline": p, "dataset": name, "split": a.split, "variant": pipeline.variant, "metrics": m}));
        all.push((pipeline.variant, m));
    }
    let avg = average_metrics(&all.iter().map(|(_, m)| *m).collect::<Vec<_>>());
    let row = result_row(&all[0].0.to_string(), &name, &avg);
    println!("{}", format_triplet_table(std::slice::from_ref(&row)));
    println!("{}", format_subtask_table(&[row]));
    if let Some(out) = &a.out {
        write_jsonl(out, &records)?;
    }
    Ok(())
}

fn read_input(path: &Path) -> CliResult<DatasetSplit> {
    require_file(path)?;
    Ok(read_split(path, SplitName::Test)?)
}

fn predict(pipeline: &Path, input: &Path, out: &Path, restore: &RestoreArgs) -> CliResult<()> {
    let sentences = read_input(input)?;
    let model = load_pipeline(pipeline, restore)?;
    let triplets = model.predict_split(&sentences)?;
    write_triplets(out, &triplets)?;
    log::info!("{} triplets for {} sentences", triplets.len(), sentences.len());
    Ok(())
}

fn merge(input: &Path, output: &Path) -> CliResult<()> {
    require_file(input)?;
    let raw = read_aste_file(input)?;
    let merged = merge_sentence_triplets(&raw);
    write_triplets(output, &merged)?;
    println!("{} input triplets merged into {}", raw.len(), merged.len());
    Ok(())
}

fn export_attention(
    pipeline: &Path,
    input: &Path,
    out: &Path,
    only: Option<&str>,
    restore: &RestoreArgs,
) -> CliResult<()> {
    let sentences = read_input(input)?;
    let model = load_pipeline(pipeline, restore)?;
    if model.variant.stage_two_config(0.0, false).sla.is_none() {
        return Err(Failure::new(EXIT_USAGE, anyhow!("{} has no attention", model.variant)));
    }
    let mut records = Vec::new();
    for s in &sentences.sentences {
        if only.is_some_and(|id| id != s.id) {
            continue;
        }
        let aspects = if s.aspects.is_empty() {
            model.ate.predict(&s.id, &s.tokens)?.spans.into_iter().collect()
        } else {
            s.aspect_spans()
        };
        for a in aspects {
            records.extend(model.attention(&s.id, &s.tokens, a)?);
        }
    }
    if let Some(id) = only {
        if records.is_empty() {
            return Err(Failure::new(EXIT_DATA, anyhow!("no aspects for sentence {id}")));
        }
    }
    write_jsonl(out, &records)?;
    log::info!("{} attention records written to {}", records.len(), out.display());
    Ok(())
}
