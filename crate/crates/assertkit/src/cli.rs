//! The `assertkit` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use assertkit_core::audio::{Key, Mode};
use assertkit_core::dsp::FeatureKind;
use assertkit_core::featmap::SegmenterConfig;
use assertkit_core::fusion::{greedy_select, CalibrationConfig, FusionMetric, GreedyConfig, PA_EFFECTIVE_PRIOR, LA_EFFECTIVE_PRIOR};
use assertkit_core::metrics::{MetricReport, ScoreSet, TdcfParams};
use assertkit_core::models::{Model, ModelConfig, ModelKind};
use assertkit_core::nn::OptimizerConfig;
use assertkit_core::synth::SynthConfig;
use assertkit_core::training::{score_utterance, train, LabelSpace, LabeledUtterance, Objective, Selection, TrainConfig};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{tdcf_params, KeyValues};
use crate::corpus::{read_protocol, split_protocol, synth_corpus, write_protocol, DEV_PROTOCOL_FILE, TRAIN_PROTOCOL_FILE};
use crate::features::{extract_all, load_all, FrontEnd};
use crate::pool::worker_pool;
use crate::scores::{read_scores, write_epoch_log, write_scores, write_text};

#[derive(Parser, Debug)]
#[command(name = "assertkit", version, about = "Anti-spoofing countermeasure pipeline")]
struct Cli {
    /// `key = value` file supplying defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic corpus with its protocol files.
    Synth(SynthArgs),
    /// Compute feature archives for every trial of a protocol.
    Extract(ExtractArgs),
    /// Train a countermeasure and write the selected checkpoint.
    Train(TrainArgs),
    /// Score every trial of a protocol with a checkpoint.
    Score(ScoreArgs),
    /// Print EER and minimum normalized t-DCF of a score file.
    Eval(EvalArgs),
    /// Greedy calibrated fusion of several score files.
    Fuse(FuseArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_bonafide: Option<usize>,
    #[arg(long)]
    spoof_per_class: Option<usize>,
    #[arg(long)]
    min_duration: Option<f64>,
    #[arg(long)]
    max_duration: Option<f64>,
    #[arg(long)]
    sample_rate: Option<u32>,
    /// Every n-th trial goes to the dev protocol.
    #[arg(long)]
    dev_every: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    wav_dir: PathBuf,
    #[arg(long, value_parser = parse_feature)]
    feature: Option<FeatureKind>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    train_protocol: PathBuf,
    #[arg(long)]
    dev_protocol: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Epoch log to write.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long, value_parser = parse_objective)]
    objective: Option<Objective>,
    #[arg(long = "select", value_parser = parse_selection)]
    selection: Option<Selection>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    segment_m: Option<usize>,
    #[arg(long)]
    segment_l: Option<usize>,
    /// Architecture override such as `units=1,1,1,1`; repeatable.
    #[arg(long = "model-opt", value_parser = parse_pair)]
    model_opts: Vec<(String, String)>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    protocol: PathBuf,
    /// `key = value` file of t-DCF priors, costs and ASV rates.
    #[arg(long)]
    tdcf: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    /// Dev protocol the fusion is fitted on.
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Effective prior; defaults to the condition's value.
    #[arg(long)]
    prior: Option<f64>,
    #[arg(long, value_parser = parse_metric)]
    metric: Option<FusionMetric>,
    #[arg(long)]
    tdcf: Option<PathBuf>,
    /// Fused score file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("expected pa or la, got `{s}`"))
}

fn parse_feature(s: &str) -> Result<FeatureKind, String> {
    FeatureKind::parse(s).ok_or_else(|| format!("expected logspec or cqcc, got `{s}`"))
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    Objective::parse(s).map_err(|e| e.to_string())
}

fn parse_selection(s: &str) -> Result<Selection, String> {
    Selection::parse(s).map_err(|e| e.to_string())
}

fn parse_metric(s: &str) -> Result<FusionMetric, String> {
    FusionMetric::parse(s).map_err(|e| e.to_string())
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

/// Flag, then config file, then `default`.
fn pick<T>(
    flag: Option<T>,
    kv: &KeyValues,
    key: &str,
    parse: fn(&str) -> Result<T, String>,
    default: T,
) -> anyhow::Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match kv.get_str(key) {
        Some(s) => parse(s).map_err(|e| anyhow::anyhow!("config `{key}`: {e}")),
        None => Ok(default),
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let kv = match &cli.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &kv, out),
        Command::Extract(a) => cmd_extract(a, &kv, out),
        Command::Train(a) => cmd_train(a, &kv, out),
        Command::Score(a) => cmd_score(a, out),
        Command::Eval(a) => cmd_eval(a, &kv, out),
        Command::Fuse(a) => cmd_fuse(a, &kv, out),
    }
}

fn cmd_synth(a: SynthArgs, kv: &KeyValues, out: &mut dyn Write) -> anyhow::Result<()> {
    let mode = pick(a.mode, kv, "mode", parse_mode, Mode::Pa)?;
    let mut cfg = SynthConfig::new(mode, kv.resolve(a.seed, "seed", 0)?);
    cfg.n_bonafide = kv.resolve(a.n_bonafide, "n_bonafide", cfg.n_bonafide)?;
    cfg.spoof_per_class = kv.resolve(a.spoof_per_class, "spoof_per_class", cfg.spoof_per_class)?;
    cfg.duration_range = (
        kv.resolve(a.min_duration, "min_duration", cfg.duration_range.0)?,
        kv.resolve(a.max_duration, "max_duration", cfg.duration_range.1)?,
    );
    cfg.sample_rate = kv.resolve(a.sample_rate, "sample_rate", cfg.sample_rate)?;
    let dev_every = kv.resolve(a.dev_every, "dev_every", 3)?;
    let protocol = synth_corpus(cfg, &a.out)?;
    let (tr, dev) = split_protocol(&protocol, dev_every);
    write_protocol(&a.out.join(TRAIN_PROTOCOL_FILE), &tr)?;
    write_protocol(&a.out.join(DEV_PROTOCOL_FILE), &dev)?;
    writeln!(out, "wrote {} utterances ({} train, {} dev) to {}", protocol.len(), tr.len(), dev.len(), a.out.display())?;
    Ok(())
}

fn cmd_extract(a: ExtractArgs, kv: &KeyValues, out: &mut dyn Write) -> anyhow::Result<()> {
    let kind = pick(a.feature, kv, "feature", parse_feature, FeatureKind::Logspec)?;
    let protocol = read_protocol(&a.protocol)?;
    extract_all(&protocol, &a.wav_dir, &FrontEnd::default_for(kind), &a.out)?;
    writeln!(out, "extracted {} {} archives to {}", protocol.len(), kind.as_str(), a.out.display())?;
    Ok(())
}

fn labeled(space: &LabelSpace, protocol_path: &Path, feature_dir: &Path) -> anyhow::Result<Vec<LabeledUtterance>> {
    let protocol = read_protocol(protocol_path)?;
    let feats = load_all(&protocol, feature_dir)?;
    protocol
        .iter()
        .zip(feats)
        .map(|(e, features)| {
            Ok(LabeledUtterance { utt_id: e.utt_id.clone(), features, label: space.class_of(e)? })
        })
        .collect()
}

fn cmd_train(a: TrainArgs, kv: &KeyValues, out: &mut dyn Write) -> anyhow::Result<()> {
    let mode = pick(a.mode, kv, "mode", parse_mode, Mode::Pa)?;
    let kind = pick(a.model, kv, "model", parse_model, ModelKind::SeNet34)?;
    let objective = pick(a.objective, kv, "objective", parse_objective, Objective::Binary)?;
    let mut cfg = TrainConfig::default();
    cfg.selection = pick(a.selection, kv, "select", parse_selection, cfg.selection)?;
    cfg.epochs = kv.resolve(a.epochs, "epochs", cfg.epochs)?;
    cfg.batch_size = kv.resolve(a.batch_size, "batch_size", cfg.batch_size)?;
    cfg.seed = kv.resolve(a.seed, "seed", cfg.seed)?;
    cfg.segmenter = SegmenterConfig::new(
        kv.resolve(a.segment_m, "segment_m", cfg.segmenter.m)?,
        kv.resolve(a.segment_l, "segment_l", cfg.segmenter.l)?,
    )?;
    cfg.optimizer = OptimizerConfig {
        peak_lr: kv.resolve(a.peak_lr, "peak_lr", cfg.optimizer.peak_lr)?,
        warmup_steps: kv.resolve(a.warmup, "warmup", cfg.optimizer.warmup_steps)?,
        ..cfg.optimizer
    };

    let space = LabelSpace::new(mode, objective);
    let train_data = labeled(&space, &a.train_protocol, &a.features)?;
    let dev_data = labeled(&space, &a.dev_protocol, &a.features)?;
    let first = &train_data.first().context("empty train protocol")?.features;
    let mut model_cfg = ModelConfig::new(kind, space.len(), first.dim());
    model_cfg.seed = cfg.seed;
    let mut pairs = model_cfg.to_pairs();
    let overridable: Vec<String> = pairs
        .iter()
        .map(|(k, _)| k.clone())
        .filter(|k| !matches!(k.as_str(), "kind" | "n_classes" | "input_dim" | "seed"))
        .collect();
    for k in overridable {
        if let Some(v) = kv.get_str(&k) {
            pairs.push((k, v.to_string()));
        }
    }
    pairs.extend(a.model_opts.iter().cloned());
    let model_cfg = ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let model = Model::<f32>::new(model_cfg)?;

    let outcome = train(model, &train_data, &dev_data, &space, &cfg)?;
    for r in &outcome.reports {
        writeln!(out, "{}", r.to_line())?;
    }
    if let Some(log) = &a.log {
        write_epoch_log(log, &outcome.reports)?;
    }
    let ckpt = Checkpoint::new(outcome.model)
        .with_meta("mode", mode.as_str())
        .with_meta("objective", objective.as_str())
        .with_meta("feature", first.kind().as_str())
        .with_meta("segment_m", cfg.segmenter.m)
        .with_meta("segment_l", cfg.segmenter.l)
        .with_meta("selection", cfg.selection.as_str())
        .with_meta("selected_epoch", outcome.selected_epoch);
    ckpt.save(&a.out)?;
    writeln!(
        out,
        "selected epoch {} ({} {:.6}); checkpoint {}",
        outcome.selected_epoch,
        cfg.selection.as_str(),
        outcome.selection_value,
        a.out.display()
    )?;
    Ok(())
}

/// Label space and segmenter recorded in a checkpoint.
pub fn checkpoint_setup(ckpt: &Checkpoint) -> anyhow::Result<(LabelSpace, SegmenterConfig)> {
    let get = |k: &str| ckpt.meta(k).with_context(|| format!("checkpoint has no `{k}` entry"));
    let mode = parse_mode(get("mode")?).map_err(anyhow::Error::msg)?;
    let objective = parse_objective(get("objective")?).map_err(anyhow::Error::msg)?;
    let seg = SegmenterConfig::new(get("segment_m")?.parse()?, get("segment_l")?.parse()?)?;
    Ok((LabelSpace::new(mode, objective), seg))
}

fn cmd_score(a: ScoreArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let (space, seg) = checkpoint_setup(&ckpt)?;
    let protocol = read_protocol(&a.protocol)?;
    let feats = load_all(&protocol, &a.features)?;
    if let (Some(want), Some(f)) = (ckpt.meta("feature"), feats.first()) {
        if want != f.kind().as_str() {
            bail!("checkpoint expects {want} features, archives hold {}", f.kind().as_str());
        }
    }
    let model = &ckpt.model;
    let values: Vec<f64> = worker_pool().install(|| {
        feats.par_iter().map(|f| score_utterance(model, f, &seg, &space)).collect::<Result<_, _>>()
    })?;
    let scores = ScoreSet::from_entries(protocol.iter().map(|e| e.utt_id.clone()).zip(values))?;
    write_scores(&a.out, &scores)?;
    writeln!(out, "scored {} trials to {}", scores.len(), a.out.display())?;
    Ok(())
}

fn load_tdcf(path: Option<&Path>, kv: &KeyValues) -> anyhow::Result<TdcfParams> {
    let path = path.map(Path::to_path_buf).or_else(|| kv.get_str("tdcf").map(PathBuf::from));
    Ok(match path {
        Some(p) => tdcf_params(&KeyValues::load(&p)?)?,
        None => TdcfParams::default(),
    })
}

fn cmd_eval(a: EvalArgs, kv: &KeyValues, out: &mut dyn Write) -> anyhow::Result<()> {
    let params = load_tdcf(a.tdcf.as_deref(), kv)?;
    let scores = read_scores(&a.scores)?;
    let protocol = read_protocol(&a.protocol)?;
    let report = MetricReport::compute(&scores.keyed(&protocol)?, &params)?;
    writeln!(out, "EER {:.4} %", report.eer * 100.0)?;
    writeln!(out, "min t-DCF {:.4}", report.min_tdcf_norm)?;
    writeln!(out, "{}", report.to_line())?;
    Ok(())
}

fn cmd_fuse(a: FuseArgs, kv: &KeyValues, out: &mut dyn Write) -> anyhow::Result<()> {
    let mode = pick(a.mode, kv, "mode", parse_mode, Mode::Pa)?;
    let default_prior = match mode {
        Mode::Pa => PA_EFFECTIVE_PRIOR,
        Mode::La => LA_EFFECTIVE_PRIOR,
    };
    let cfg = GreedyConfig {
        calibration: CalibrationConfig::with_prior(kv.resolve(a.prior, "prior", default_prior)?),
        metric: pick(a.metric, kv, "metric", parse_metric, FusionMetric::MinTdcf)?,
        tdcf: load_tdcf(a.tdcf.as_deref(), kv)?,
        ..GreedyConfig::default()
    };
    let protocol = read_protocol(&a.protocol)?;
    let labels: Vec<bool> = protocol.iter().map(|e| e.key == Key::Bonafide).collect();
    let utt_ids: Vec<String> = protocol.iter().map(|e| e.utt_id.clone()).collect();
    let mut named: Vec<(String, ScoreSet)> = Vec::new();
    for path in &a.scores {
        let stem = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let name = if named.iter().any(|(n, _)| *n == stem) { path.display().to_string() } else { stem };
        named.push((name, read_scores(path)?));
    }
    let columns: Vec<(String, Vec<f64>)> = named
        .iter()
        .map(|(name, set)| {
            let col = utt_ids
                .iter()
                .map(|id| set.get(id).with_context(|| format!("{name}: no score for trial `{id}`")))
                .collect::<anyhow::Result<Vec<f64>>>()?;
            Ok((name.clone(), col))
        })
        .collect::<anyhow::Result<_>>()?;
    let plan = greedy_select(&columns, &labels, &cfg)?;
    let fused = plan.apply(&named, &utt_ids)?;
    write_scores(&a.out, &fused)?;
    write_text(&a.report, &plan.to_report())?;
    write!(out, "{}", plan.to_report())?;
    Ok(())
}
