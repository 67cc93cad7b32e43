//! Command-line front end.
//!
//! Every command reads a shared TOML run file (`--config`) whose tables
//! `[train]`, `[universe]` and `[scene]` hold defaults that flags override.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorenet::checkpoint;
use crate::synthbench::{
    gen_dataset, load_dataset, make_universe, split_ids, Manifest, SceneConfig, UniverseConfig,
};
use crate::textgraph::{
    extract_labels_with_stats, read_label_records, write_label_records, AttributeRegistry, ExtractStats,
    LabelRecord, Vocabulary,
};
use crate::trainer::{evaluate, gradcheck, prepare_scenes, train, LossMode, TrainConfig, TrainingScene};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "caption-wsod",
    version,
    about = "Caption-supervised weak object detection"
)]
pub struct Cli {
    /// TOML run file with [train], [universe] and [scene] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test synthetic splits and a manifest.
    Synth(SynthArgs),
    /// Extract object and attribute labels from captions.
    Parse(ParseArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    /// Class vocabulary TOML (built-in list when omitted).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Attribute registry TOML (built-in registry when omitted).
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

impl LexiconArgs {
    fn load(&self) -> Result<(Vocabulary, AttributeRegistry)> {
        let vocab = match &self.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::builtin(),
        };
        let registry = match &self.registry {
            Some(p) => AttributeRegistry::load(p)?,
            None => AttributeRegistry::builtin(),
        };
        Ok((vocab, registry))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Existing directory to write train.jsonl, val.jsonl, test.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 500)]
    pub val: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    /// Override the attribute mention probability.
    #[arg(long)]
    pub attr_mention_prob: Option<f64>,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// JSON lines with `image_id` and `captions` (dataset files qualify).
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
}

#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// `em` (object labels only) or `em+sg` (with scene-graph attributes).
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub nms_threshold: Option<f64>,
    #[arg(long)]
    pub score_floor: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        macro_rules! over {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        over!(
            seed,
            steps,
            learning_rate,
            batch_size,
            lambda1,
            num_heads,
            tau,
            nms_threshold,
            score_floor
        );
        match (self.loss_mode, self.lambda2) {
            (Some(mode), Some(l2)) => {
                if (mode == LossMode::Em) != (l2 == 0.0) {
                    return Err(Error::Config(format!(
                        "--loss-mode {mode} contradicts --lambda2 {l2}"
                    )));
                }
                cfg.set_lambda2(l2);
            }
            (Some(mode), None) => cfg.set_loss_mode(mode),
            (None, Some(l2)) => cfg.set_lambda2(l2),
            (None, None) => {}
        }
        cfg.validate()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the effective config is written beside it as `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss log (JSON lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Precomputed label file from `parse`; captions are parsed when omitted.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Metrics JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset manifest naming confusable classes (defaults to manifest.json beside the data).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub configs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Optional JSON report with every case.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub universe: UniverseConfig,
    pub scene: SceneConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(args: &SynthArgs, run: &RunConfig) -> Result<String> {
    if !args.out.is_dir() {
        return Err(Error::io(
            &args.out,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    let (vocab, registry) = args.lexicon.load()?;
    let mut scene_cfg = run.scene.clone();
    if let Some(rho) = args.attr_mention_prob {
        scene_cfg.captions.attr_mention_prob = rho;
    }
    scene_cfg.validate(vocab.num_classes())?;
    let universe = make_universe(&run.universe, &vocab, &registry, args.seed)?;
    let names = ["train", "val", "test"];
    let sizes = [args.train, args.val, args.test];
    for (split, name) in names.iter().enumerate() {
        let ids = split_ids(split, &sizes);
        if ids.is_empty() {
            continue;
        }
        gen_dataset(
            &universe,
            &scene_cfg,
            args.seed,
            ids,
            &args.out.join(format!("{name}.jsonl")),
        )?;
    }
    let splits = names.iter().zip(sizes).map(|(n, s)| (n.to_string(), s)).collect();
    Manifest::new(&universe, args.seed, splits).save(&args.out.join("manifest.json"))?;
    Ok(format!(
        "wrote {} train, {} val, {} test scenes to {}",
        args.train,
        args.val,
        args.test,
        args.out.display()
    ))
}

#[derive(Deserialize)]
struct CaptionRecord {
    image_id: u64,
    captions: Vec<String>,
}

pub fn cmd_parse(args: &ParseArgs) -> Result<String> {
    require_file(&args.captions)?;
    require_parent(&args.out)?;
    let (vocab, registry) = args.lexicon.load()?;
    let file = File::open(&args.captions).map_err(|e| Error::io(&args.captions, e))?;
    let mut records = Vec::new();
    let mut stats = ExtractStats::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&args.captions, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: args.captions.clone(),
            line: n + 1,
            message: e.to_string(),
        })?;
        let (labels, s) = extract_labels_with_stats(&rec.captions, &vocab, &registry);
        stats += s;
        records.push(LabelRecord::new(rec.image_id, &labels));
    }
    write_label_records(create(&args.out)?, &records).map_err(|e| Error::io(&args.out, e))?;
    Ok(format!(
        "parsed {} records: {} objects matched, {} unmatched, {} attributes kept, {} dropped",
        records.len(),
        stats.objects_matched,
        stats.objects_unmatched,
        stats.attributes_kept,
        stats.attributes_dropped
    ))
}

fn load_training_scenes(
    data: &Path,
    labels: Option<&Path>,
    vocab: &Vocabulary,
    registry: &AttributeRegistry,
) -> Result<Vec<TrainingScene>> {
    let scenes = load_dataset(data)?;
    let mut prepared = prepare_scenes(&scenes, vocab, registry);
    if let Some(path) = labels {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let records = read_label_records(BufReader::new(file), path)?;
        let by_id: std::collections::HashMap<u64, &LabelRecord> =
            records.iter().map(|r| (r.image_id, r)).collect();
        for s in &mut prepared {
            let r = by_id.get(&s.image_id).ok_or_else(|| {
                Error::Label(format!("{}: no labels for scene {}", path.display(), s.image_id))
            })?;
            s.labels = r.to_labels();
        }
    }
    Ok(prepared)
}

fn sidecar(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn cmd_train(args: &TrainArgs, run: &RunConfig) -> Result<String> {
    let mut cfg = run.train.clone();
    args.overrides.apply(&mut cfg)?;
    require_file(&args.data)?;
    if let Some(l) = &args.labels {
        require_file(l)?;
    }
    require_parent(&args.out)?;
    if let Some(l) = &args.log {
        require_parent(l)?;
    }
    let (vocab, registry) = args.lexicon.load()?;
    let scenes = load_training_scenes(&args.data, args.labels.as_deref(), &vocab, &registry)?;
    let out = train(&scenes, vocab.num_classes(), &registry.sizes(), &cfg)?;
    checkpoint::save(&out.params, &args.out)?;
    write_json(&sidecar(&args.out), &cfg)?;
    if let Some(path) = &args.log {
        let mut w = create(path)?;
        for entry in &out.log {
            serde_json::to_writer(&mut w, entry).expect("log entry serializes");
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let last = out.log.last().map_or(f64::NAN, |s| s.l_total);
    Ok(format!(
        "trained {} steps ({}), final loss {last:.6}; wrote {}",
        cfg.steps,
        cfg.loss_mode,
        args.out.display()
    ))
}

pub fn cmd_eval(args: &EvalArgs, run: &RunConfig) -> Result<String> {
    require_file(&args.data)?;
    require_file(&args.checkpoint)?;
    require_parent(&args.out)?;
    let side = sidecar(&args.checkpoint);
    let mut cfg = if side.is_file() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Record {
            path: side.clone(),
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        run.train.clone()
    };
    args.overrides.apply(&mut cfg)?;
    let (vocab, _) = args.lexicon.load()?;
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| args.data.parent().map(|d| d.join("manifest.json")));
    let confusable: Vec<usize> = match manifest_path {
        Some(p) if p.is_file() => Manifest::load(&p)?.confusable.iter().flatten().copied().collect(),
        _ => Vec::new(),
    };
    let params = checkpoint::load(&args.checkpoint)?;
    let scenes = load_dataset(&args.data)?;
    let metrics = evaluate(&params, &scenes, &cfg, vocab.class_names(), &confusable)?;
    write_json(&args.out, &metrics)?;
    Ok(format!(
        "mAP@0.5 {:.4}, CorLoc {:.4}, confusable mAP {} over {} scenes",
        metrics.map,
        metrics.corloc,
        metrics.confusable_map.map_or("n/a".into(), |v| format!("{v:.4}")),
        metrics.num_scenes
    ))
}

/// Runs the check; `Ok(Err(..))` carries the summary of a failed check.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<std::result::Result<String, String>> {
    if args.configs == 0 {
        return Err(Error::Config("--configs must be positive".into()));
    }
    if let Some(p) = &args.out {
        require_parent(p)?;
    }
    let report = gradcheck(args.configs, args.seed, args.tolerance)?;
    if let Some(p) = &args.out {
        write_json(p, &report)?;
    }
    let line = format!(
        "gradcheck: {} configurations, max relative error {:.3e} (tolerance {:.1e}): {}",
        report.cases.len(),
        report.max_rel_error,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(if report.passed { Ok(line) } else { Err(line) })
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Runs a parsed command, printing its summary; returns the exit status.
pub fn run(cli: &Cli) -> i32 {
    let outcome = RunConfig::load(cli.config.as_deref()).and_then(|run| match &cli.command {
        Command::Synth(a) => cmd_synth(a, &run).map(Ok),
        Command::Parse(a) => cmd_parse(a).map(Ok),
        Command::Train(a) => cmd_train(a, &run).map(Ok),
        Command::Eval(a) => cmd_eval(a, &run).map(Ok),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    });
    match outcome {
        Ok(Ok(line)) => {
            println!("{line}");
            0
        }
        Ok(Err(line)) => {
            println!("{line}");
            EXIT_NUMERICAL
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (program name first) and runs; usage errors exit with 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            code
        }
    }
}
