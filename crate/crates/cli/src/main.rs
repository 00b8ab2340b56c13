//! `cortexdec`: generate, preprocess, train, evaluate, ablate, report.

mod error;
mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cortexdec_core::data::{self, SynthConfig};
use cortexdec_core::model::{EncoderConfig, SkipCnnModel};
use cortexdec_core::signal::{self, PreprocessConfig};
use cortexdec_core::training::{self, Grouping, Metrics, TrainConfig};
use cortexdec_core::ClassVocabulary;

use error::CliError;
use manifest::RunManifest;

const PRECEDENCE: &str = "Settings resolve as: command-line flags, then the --config file \
(`key = value` lines), then built-in defaults. The seed falls back to CORTEXDEC_SEED when \
neither a flag nor the config file sets it.";

#[derive(Parser)]
#[command(name = "cortexdec", version, about = "Subject-independent spoken-word EEG decoding", after_help = PRECEDENCE)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (trial set, or a raw recording with --raw).
    Synth(SynthArgs),
    /// Filter, epoch and channel-select a raw recording.
    Preprocess(PreprocessArgs),
    /// Cross-validate the decoder; writes one checkpoint per fold.
    Train(TrainArgs),
    /// Score a checkpoint on a trial set.
    Eval(EvalArgs),
    /// Paired skip vs no-skip cross-validation over several seeds.
    Ablate(AblateArgs),
    /// Render a metrics CSV as a text confusion matrix.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    trials_per_class: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    sample_rate: Option<f64>,
    #[arg(long)]
    noise_exponent: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    mixing: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write a continuous recording with events instead of epoched trials.
    #[arg(long)]
    raw: bool,
    /// Also record the dataset in this plain-text corpus manifest.
    #[arg(long)]
    corpus_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    filter_order: Option<usize>,
    #[arg(long)]
    low_hz: Option<f64>,
    #[arg(long)]
    high_hz: Option<f64>,
    #[arg(long)]
    trial_seconds: Option<f64>,
    #[arg(long)]
    baseline_seconds: Option<f64>,
    /// Comma-separated channel names to keep, in order.
    #[arg(long)]
    channels: Option<String>,
    /// Single causal filter pass instead of forward-backward.
    #[arg(long)]
    causal: bool,
    #[arg(long)]
    corpus_manifest: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Disable the shortcut connections.
    #[arg(long)]
    no_skip: bool,
    /// Comma-separated 1-based blocks carrying shortcuts.
    #[arg(long)]
    skip_blocks: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    validate_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct CvFlags {
    #[arg(long)]
    folds: Option<usize>,
    /// `subject` or `trial`.
    #[arg(long)]
    grouping: Option<String>,
    /// Folds trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory for checkpoints, histories and metrics.
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    cv: CvFlags,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Metrics CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds, at least two.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    cv: CvFlags,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// Row-normalised percentages instead of counts.
    #[arg(long)]
    percent: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_config(path: &Option<PathBuf>) -> Result<String, CliError> {
    match path {
        None => Ok(String::new()),
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("config {}: {e}", p.display()))),
    }
}

/// `key = value` pairs with line numbers, comments and blanks skipped.
fn config_pairs(text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("CORTEXDEC_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("CORTEXDEC_SEED must be an integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn set_opt<T: ToString>(
    set: &mut dyn FnMut(&str, &str) -> Result<(), String>,
    key: &str,
    v: &Option<T>,
) -> Result<(), CliError> {
    if let Some(v) = v {
        set(key, &v.to_string()).map_err(CliError::Config)?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let mut m = RunManifest::start("synth");
    let mut cfg = SynthConfig::default();
    let mut seed_from_config = false;
    for (line, k, v) in config_pairs(&read_config(&a.config)?)? {
        seed_from_config |= k == "seed";
        cfg.set(&k, &v)
            .map_err(|r| CliError::Config(format!("config line {line}: {r}")))?;
    }
    if !seed_from_config {
        if let Some(s) = env_seed()? {
            cfg.seed = s;
        }
    }
    {
        let set = &mut |k: &str, v: &str| cfg.set(k, v);
        set_opt(set, "n_subjects", &a.subjects)?;
        set_opt(set, "trials_per_class_per_subject", &a.trials_per_class)?;
        set_opt(set, "n_channels", &a.channels)?;
        set_opt(set, "n_samples", &a.samples)?;
        set_opt(set, "sample_rate_hz", &a.sample_rate)?;
        set_opt(set, "noise_exponent", &a.noise_exponent)?;
        set_opt(set, "signature_snr", &a.snr)?;
        set_opt(set, "subject_mixing", &a.mixing)?;
        set_opt(set, "seed", &a.seed)?;
    }
    cfg.validate()?;
    m.seed(cfg.seed);
    m.config("synth", &cfg.to_text());
    m.set("raw", a.raw);
    if a.raw {
        let rec = data::synth_recording(&cfg)?;
        data::write_recording(&rec, &a.out)?;
        println!(
            "wrote recording {} ({} channels x {} samples, {} events)",
            a.out.display(),
            rec.n_channels(),
            rec.n_samples(),
            rec.events.len()
        );
    } else {
        let trials = data::synth_generate(&cfg)?;
        data::write_dataset(&trials, &a.out)?;
        if let Some(cm) = &a.corpus_manifest {
            data::update_manifest(cm, &a.out, &trials)?;
        }
        println!("wrote {} trials to {}", trials.n_trials(), a.out.display());
    }
    m.output(&a.out);
    m.finish(&manifest::beside(&a.out))
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<(), CliError> {
    let mut m = RunManifest::start("preprocess");
    let mut cfg = PreprocessConfig::default();
    for (line, k, v) in config_pairs(&read_config(&a.config)?)? {
        cfg.set(&k, &v)
            .map_err(|r| CliError::Config(format!("config line {line}: {r}")))?;
    }
    {
        let set = &mut |k: &str, v: &str| cfg.set(k, v);
        set_opt(set, "filter_order", &a.filter_order)?;
        set_opt(set, "low_hz", &a.low_hz)?;
        set_opt(set, "high_hz", &a.high_hz)?;
        set_opt(set, "trial_seconds", &a.trial_seconds)?;
        set_opt(set, "baseline_seconds", &a.baseline_seconds)?;
        set_opt(set, "channels", &a.channels)?;
        if a.causal {
            set("zero_phase", "false").map_err(CliError::Config)?;
        }
    }
    m.config("preprocess", &cfg.to_text());
    m.input(&a.input);
    let rec = data::read_recording(&a.input)?;
    let trials = signal::preprocess(&rec, &cfg)?;
    data::write_dataset(&trials, &a.out)?;
    if let Some(cm) = &a.corpus_manifest {
        data::update_manifest(cm, &a.out, &trials)?;
    }
    println!(
        "wrote {} trials of {} channels x {} samples to {}",
        trials.n_trials(),
        trials.n_channels(),
        trials.n_samples(),
        a.out.display()
    );
    m.output(&a.out);
    m.finish(&manifest::beside(&a.out))
}

struct Resolved {
    encoder: EncoderConfig,
    train: TrainConfig,
    folds: usize,
    grouping: Grouping,
}

/// Config file keys go to the encoder, the trainer, or the fold settings.
fn resolve(
    config: &Option<PathBuf>,
    seed_flag: Option<u64>,
    cv: &CvFlags,
    f: &ModelFlags,
) -> Result<Resolved, CliError> {
    let mut encoder = EncoderConfig::default();
    let mut train = TrainConfig::default();
    let mut folds = 5;
    let mut grouping = Grouping::BySubject;
    let mut seed_from_config = false;
    for (line, k, v) in config_pairs(&read_config(config)?)? {
        let err = |r: String| CliError::Config(format!("config line {line}: {r}"));
        match k.as_str() {
            "folds" => folds = v.parse().map_err(|_| err(format!("cannot parse folds from {v:?}")))?,
            "grouping" => grouping = v.parse().map_err(err)?,
            _ => match encoder.set(&k, &v) {
                Ok(()) => {}
                Err(r) if r.starts_with("unknown key") => {
                    seed_from_config |= k == "seed";
                    train.set(&k, &v).map_err(err)?
                }
                Err(r) => return Err(err(r)),
            },
        }
    }
    if !seed_from_config {
        if let Some(s) = env_seed()? {
            train.seed = s;
        }
    }
    if let Some(s) = seed_flag {
        train.seed = s;
    }
    {
        let set = &mut |k: &str, v: &str| encoder.set(k, v);
        set_opt(set, "n_blocks", &f.blocks)?;
        set_opt(set, "feature_channels", &f.features)?;
        set_opt(set, "kernel_size", &f.kernel_size)?;
        set_opt(set, "dropout_p", &f.dropout)?;
        set_opt(set, "head_hidden", &f.hidden)?;
        set_opt(set, "skip_blocks", &f.skip_blocks)?;
        if f.no_skip {
            set("skip_enabled", "false").map_err(CliError::Config)?;
        }
    }
    {
        let set = &mut |k: &str, v: &str| train.set(k, v);
        set_opt(set, "batch_size", &f.batch_size)?;
        set_opt(set, "max_epochs", &f.max_epochs)?;
        set_opt(set, "validate_every", &f.validate_every)?;
        set_opt(set, "patience", &f.patience)?;
        set_opt(set, "val_fraction", &f.val_fraction)?;
        set_opt(set, "lr", &f.lr)?;
    }
    if let Some(k) = cv.folds {
        folds = k;
    }
    if let Some(g) = &cv.grouping {
        grouping = g.parse().map_err(CliError::Config)?;
    }
    if cv.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    train.validate()?;
    Ok(Resolved {
        encoder,
        train,
        folds,
        grouping,
    })
}

fn record_resolved(m: &mut RunManifest, r: &Resolved, jobs: usize) {
    m.seed(r.train.seed);
    m.config("model", &r.encoder.to_text());
    m.config("train", &r.train.to_text());
    m.set("cv.folds", r.folds);
    m.set("cv.grouping", r.grouping);
    m.set("cv.jobs", jobs);
}

fn write_text(path: &Path, text: &str, m: &mut RunManifest) -> Result<(), CliError> {
    data::write_atomic(path, text.as_bytes())?;
    m.output(path);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut m = RunManifest::start("train");
    let r = resolve(&a.config, a.seed, &a.cv, &a.model)?;
    record_resolved(&mut m, &r, a.cv.jobs);
    m.input(&a.data);
    let trials = data::read_dataset(&a.data)?;
    let out = training::cross_validate(&trials, &r.encoder, &r.train, r.folds, r.grouping, a.cv.jobs)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let names = &trials.class_names;
    for f in &out.folds {
        let k = f.fold + 1;
        let ckpt = a.out_dir.join(format!("fold{k}.ckpt"));
        f.model.save(&ckpt)?;
        m.output(&ckpt);
        write_text(&a.out_dir.join(format!("fold{k}_history.csv")), &f.history.to_csv(), &mut m)?;
        write_text(&a.out_dir.join(format!("fold{k}_metrics.csv")), &f.metrics.to_csv(names)?, &mut m)?;
        let [acc, ..] = f.metrics.summary_percent();
        println!(
            "fold {k}: accuracy {acc}% after {} epochs",
            f.history.epochs_run()
        );
    }
    write_text(&a.out_dir.join("metrics.csv"), &out.pooled.to_csv(names)?, &mut m)?;
    let [acc, p, rc, f1] = out.pooled.summary_percent();
    println!("pooled: accuracy {acc}%, precision {p}%, recall {rc}%, F1 {f1}%");
    m.finish(&a.out_dir.join("run.manifest"))
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let mut m = RunManifest::start("eval");
    m.input(&a.checkpoint);
    m.input(&a.data);
    let mut model = SkipCnnModel::<f32>::load(&a.checkpoint)?;
    m.config("model", &model.config().to_text());
    let trials = data::read_dataset(&a.data)?;
    let all: Vec<usize> = (0..trials.n_trials()).collect();
    let metrics = training::evaluate(&mut model, &trials, &all)?;
    write_text(&a.out, &metrics.to_csv(&trials.class_names)?, &mut m)?;
    let [acc, p, rc, f1] = metrics.summary_percent();
    println!("accuracy {acc}%, precision {p}%, recall {rc}%, F1 {f1}%");
    m.finish(&manifest::beside(&a.out))
}

fn cmd_ablate(a: AblateArgs) -> Result<(), CliError> {
    let mut m = RunManifest::start("ablate");
    let seeds: Vec<u64> = a
        .seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad seed {s:?} in --seeds")))
        })
        .collect::<Result<_, _>>()?;
    if seeds.len() < 2 {
        return Err(CliError::Config("--seeds needs at least two seeds".into()));
    }
    let r = resolve(&a.config, None, &a.cv, &a.model)?;
    record_resolved(&mut m, &r, a.cv.jobs);
    m.set(
        "seeds",
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    );
    m.input(&a.data);
    let trials = data::read_dataset(&a.data)?;
    let out = training::run_ablation(
        &trials,
        &r.encoder,
        &r.train,
        r.folds,
        r.grouping,
        &seeds,
        a.cv.jobs,
    )?;
    write_text(&a.out, &training::ablation_csv(&out), &mut m)?;
    println!(
        "mean accuracy difference (skip - no skip): {:.2} points",
        100.0 * out.mean_difference
    );
    m.finish(&manifest::beside(&a.out))
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.metrics)?;
    let (names, metrics) = Metrics::from_csv(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.metrics.display())))?;
    let names = if names.is_empty() {
        ClassVocabulary::default().names().to_vec()
    } else {
        names
    };
    let rendered = report::render(&names, &metrics, a.percent);
    match &a.out {
        Some(p) => {
            let mut m = RunManifest::start("report");
            m.input(&a.metrics);
            m.set("percent", a.percent);
            write_text(p, &rendered, &mut m)?;
            m.finish(&manifest::beside(p))?;
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
