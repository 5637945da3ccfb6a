//! Subcommand drivers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dgmark_core::attack::{apply_attack, AttackSpec};
use dgmark_core::bridge::BridgePredictor;
use dgmark_core::calibrate::{calibrate_z_exact, calibrate_z_monte_carlo, calibrate_z_win, NullMethod};
use dgmark_core::decoder::{decode, DecodeConfig, DecodeMode};
use dgmark_core::detector::detect as detect_tokens;
use dgmark_core::eval::{evaluate, match_ratio_histogram, roc_csv, roc_points, ScoreSet};
use dgmark_core::null::NullModel;
use dgmark_core::parity::{ParityPartition, WatermarkKey};
use dgmark_core::predictor::{ContextMixToyModel, FactorizedToyModel, Predictor};
use dgmark_core::records::{
    read_jsonl, write_jsonl, AttackInfo, CorpusRecord, DecodeRecord, DetectionLine, DetectionRecord, RecordError,
    TokensRecord,
};
use dgmark_core::rng::derive_seed;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{CalibratedStatistic, ModelSpec, RunConfig, ScoreField};
use crate::{CliError, CommonArgs};

fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::empty(),
    };
    if let Some(key) = &args.key {
        config.key = Some(key.clone());
    }
    if let Some(input) = &args.input {
        config.input = Some(input.clone());
    }
    if let Some(out) = &args.out {
        config.output = Some(out.clone());
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.check_paths()?;
    Ok(config)
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    if workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))
}

fn build_model(spec: &ModelSpec) -> Result<Box<dyn Predictor>, CliError> {
    let stage = "model";
    Ok(match spec {
        ModelSpec::FactorizedUniform { .. } => {
            return Err(CliError::Config("factorized-uniform model needs a decode length".into()))
        }
        ModelSpec::Factorized { probs } => {
            Box::new(FactorizedToyModel::new(probs.clone()).map_err(|e| CliError::from_core(stage, e))?)
        }
        ModelSpec::ContextMix { corpus, alpha, vocab_size } => {
            let records: Vec<CorpusRecord> =
                read_jsonl(corpus).map_err(|e| CliError::Config(format!("corpus: {e}")))?;
            let sequences: Vec<_> = records.into_iter().map(|r| r.tokens).collect();
            let model = match vocab_size {
                Some(v) => ContextMixToyModel::train_with_vocab(&sequences, *alpha, *v),
                None => ContextMixToyModel::train(&sequences, *alpha),
            };
            Box::new(model.map_err(|e| CliError::Config(format!("training: {e}")))?)
        }
        ModelSpec::Bridge { command, top_k } => {
            let (program, rest) =
                command.split_first().ok_or_else(|| CliError::Config("bridge command is empty".into()))?;
            Box::new(
                BridgePredictor::spawn(program, rest, *top_k).map_err(|e| CliError::Runtime(format!("bridge: {e}")))?,
            )
        }
    })
}

fn model_for_length(spec: &ModelSpec, length: usize) -> Result<Box<dyn Predictor>, CliError> {
    match spec {
        ModelSpec::FactorizedUniform { vocab_size } => {
            Ok(Box::new(FactorizedToyModel::uniform(*vocab_size, length).map_err(|e| CliError::from_core("model", e))?))
        }
        other => build_model(other),
    }
}

/// Vocabulary size from the partition section, falling back to the model.
fn vocab_size(config: &RunConfig) -> Result<usize, CliError> {
    if let Some(v) = config.partition.vocab_size {
        return Ok(v);
    }
    match &config.model {
        Some(ModelSpec::FactorizedUniform { vocab_size }) => Ok(*vocab_size),
        Some(ModelSpec::ContextMix { vocab_size: Some(v), .. }) => Ok(*v),
        Some(spec) => Ok(build_model(spec)?.vocab_size()),
        None => Err(CliError::Config("set partition.vocab_size or a model section".into())),
    }
}

fn load_key(config: &RunConfig) -> Result<WatermarkKey, CliError> {
    let path = config.key.as_ref().ok_or_else(|| CliError::Config("a key file is required (--key)".into()))?;
    WatermarkKey::load(path).map_err(|e| CliError::Config(format!("key {}: {e}", path.display())))
}

fn partition(config: &RunConfig, vocab: usize) -> Result<ParityPartition, CliError> {
    ParityPartition::build(&load_key(config)?, vocab, config.partition.mode)
        .map_err(|e| CliError::from_core("partition", e))
}

fn input_path(config: &RunConfig) -> Result<&PathBuf, CliError> {
    config.input.as_ref().ok_or_else(|| CliError::Config("an input file is required (--in)".into()))
}

fn output_writer(config: &RunConfig) -> Result<Box<dyn Write>, CliError> {
    match &config.output {
        Some(path) => {
            let file =
                File::create(path).map_err(|e| CliError::Runtime(format!("creating {}: {e}", path.display())))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(BufWriter::new(std::io::stdout().lock()))),
    }
}

fn write_records<T: Serialize>(config: &RunConfig, records: &[T]) -> Result<(), CliError> {
    write_jsonl(output_writer(config)?, records).map_err(|e| CliError::Runtime(format!("writing output: {e}")))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn partial(failed: usize, total: usize) -> Result<(), CliError> {
    if failed > 0 {
        Err(CliError::Partial { failed, total })
    } else {
        Ok(())
    }
}

pub fn generate(args: &CommonArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let section = config.decode.as_ref().ok_or_else(|| CliError::Config("missing decode section".into()))?;
    let spec = config.model.as_ref().ok_or_else(|| CliError::Config("missing model section".into()))?;
    if config.seeds == 0 {
        return Err(CliError::Config("seeds must be at least 1".into()));
    }
    let base = DecodeConfig::new(section.length, section.strategy, 0)
        .with_block_size(section.block_size.unwrap_or(section.length))
        .with_beam(section.beam);
    base.validate().map_err(|e| CliError::from_core("decode", e))?;

    let model = model_for_length(spec, section.length)?;
    let partition = match section.mode {
        DecodeMode::Plain => None,
        _ => Some(partition(&config, model.vocab_size())?),
    };
    let prompts: Vec<CorpusRecord> = match &config.prompts {
        Some(path) => read_jsonl(path).map_err(|e| CliError::Config(format!("prompts: {e}")))?,
        None => vec![CorpusRecord { id: "p0".into(), tokens: Vec::new() }],
    };
    let jobs: Vec<(&CorpusRecord, usize)> =
        prompts.iter().flat_map(|p| (0..config.seeds).map(move |i| (p, i))).collect();

    let pool = thread_pool(args.workers)?;
    let records = pool.install(|| {
        jobs.par_iter()
            .map(|&(prompt, i)| {
                let id = format!("{}-s{i}", prompt.id);
                let seed = derive_seed(config.seed, &["generate", &prompt.id, &i.to_string()]);
                let cfg = base.with_seed(seed);
                let out = decode(&*model, &cfg, &prompt.tokens, partition.as_ref(), section.mode)
                    .map_err(|e| CliError::from_core(&format!("generate {id}"), e))?;
                Ok(DecodeRecord {
                    id,
                    mode: section.mode,
                    k: cfg.beam,
                    block_size: cfg.block_size,
                    seed,
                    tokens: out.tokens,
                    order: out.trace.order,
                    fallback_steps: out.trace.fallback_steps,
                    attack: None,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    write_records(&config, &records)
}

pub fn detect(args: &CommonArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let partition = partition(&config, vocab_size(&config)?)?;
    let detector = config.detector.config;
    detector.validate().map_err(|e| CliError::from_core("detector", e))?;
    let records: Vec<TokensRecord> =
        read_jsonl(input_path(&config)?).map_err(|e| CliError::Runtime(format!("input: {e}")))?;

    let pool = thread_pool(args.workers)?;
    let lines: Vec<DetectionLine> = pool.install(|| {
        records
            .par_iter()
            .map(|r| match detect_tokens(&r.tokens, &partition, &detector) {
                Ok(report) => DetectionLine::Report(DetectionRecord {
                    id: r.id.clone(),
                    n: report.global.n,
                    match_count: report.global.match_count,
                    z: report.global.z,
                    p_value: report.global.p_value,
                    z_win: report.scan.z_win,
                    decisions: report.decisions,
                    window_ratios: config.detector.window_ratios.then(|| report.scan.ratios()),
                }),
                Err(e) => DetectionLine::Error(RecordError { id: r.id.clone(), error: e.to_string() }),
            })
            .collect()
    });
    write_records(&config, &lines)?;
    let failed = lines.iter().filter(|l| matches!(l, DetectionLine::Error(_))).count();
    partial(failed, lines.len())
}

pub fn attack(args: &CommonArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    if config.attacks.is_empty() {
        return Err(CliError::Config("no attacks configured".into()));
    }
    let vocab = vocab_size(&config)?;
    let records: Vec<Value> = read_jsonl(input_path(&config)?).map_err(|e| CliError::Runtime(format!("input: {e}")))?;
    let jobs: Vec<(&Value, usize)> =
        records.iter().flat_map(|r| (0..config.attacks.len()).map(move |a| (r, a))).collect();

    let pool = thread_pool(args.workers)?;
    let lines: Vec<Result<Value, RecordError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(record, a)| {
                let entry = config.attacks[a];
                let parsed: TokensRecord = serde_json::from_value(record.clone())
                    .map_err(|e| RecordError { id: record["id"].to_string(), error: e.to_string() })?;
                let seed = derive_seed(config.seed, &["attack", &parsed.id, entry.kind.as_str(), &a.to_string()]);
                let spec = AttackSpec { kind: entry.kind, epsilon: entry.epsilon, seed, vocab_size: vocab };
                let tokens = apply_attack(&parsed.tokens, &spec)
                    .map_err(|e| RecordError { id: parsed.id.clone(), error: e.to_string() })?;
                let mut out = record.clone();
                out["tokens"] = serde_json::to_value(tokens).expect("token list");
                out["attack"] = serde_json::to_value(AttackInfo { kind: entry.kind, epsilon: entry.epsilon, seed })
                    .expect("attack info");
                Ok(out)
            })
            .collect()
    });
    let failed = lines.iter().filter(|l| l.is_err()).count();
    let values: Vec<Value> =
        lines.into_iter().map(|l| l.unwrap_or_else(|e| serde_json::to_value(e).expect("record error"))).collect();
    write_records(&config, &values)?;
    partial(failed, values.len())
}

struct ScoreFile {
    scores: Vec<f64>,
    window_ratios: Vec<f64>,
    errors: usize,
}

fn read_scores(path: &Path, field: ScoreField) -> Result<ScoreFile, CliError> {
    let lines: Vec<DetectionLine> =
        read_jsonl(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut scores = Vec::new();
    let mut window_ratios = Vec::new();
    let mut errors = 0;
    for line in lines {
        match line {
            DetectionLine::Report(r) => {
                scores.push(match field {
                    ScoreField::Z => r.z,
                    ScoreField::ZWin => r.z_win,
                });
                window_ratios.extend(r.window_ratios.into_iter().flatten());
            }
            DetectionLine::Error(_) => errors += 1,
        }
    }
    Ok(ScoreFile { scores, window_ratios, errors })
}

pub fn eval(args: &CommonArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let section = config.eval.as_ref().ok_or_else(|| CliError::Config("missing eval section".into()))?;
    let out = config.output.as_ref().ok_or_else(|| CliError::Config("eval needs an output path (--out)".into()))?;
    let positives = read_scores(&section.positives, section.score)?;
    let negatives = read_scores(&section.negatives, section.score)?;
    let scores = ScoreSet::new(positives.scores, negatives.scores);

    let mut report =
        evaluate(&scores, &section.thresholds, &section.levels).map_err(|e| CliError::from_core("eval", e))?;
    for (side, n) in [("positive", positives.errors), ("negative", negatives.errors)] {
        if n > 0 {
            report.anomalies.push(format!("{n} {side} records carried errors and were skipped"));
        }
    }
    if !positives.window_ratios.is_empty() {
        let hist = match_ratio_histogram(&positives.window_ratios, section.histogram_bins)
            .map_err(|e| CliError::from_core("eval", e))?;
        write_file(&out.with_extension("hist.csv"), &hist.to_csv())?;
        report.histogram = Some(hist);
    }
    report.external = section.external.clone();
    let points = roc_points(&scores).map_err(|e| CliError::from_core("eval", e))?;
    write_file(&out.with_extension("roc.csv"), &roc_csv(&points))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(out, &(json + "\n"))
}

pub fn calibrate(args: &CommonArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let section = config.calibrate.as_ref().ok_or_else(|| CliError::Config("missing calibrate section".into()))?;
    let null = if config.key.is_some() {
        NullModel::from_partition(&partition(&config, vocab_size(&config)?)?)
    } else {
        NullModel::FAIR
    };
    let seed = derive_seed(config.seed, &["calibrate"]);
    let stage = |e| CliError::from_core("calibrate", e);
    let mut emitted = RunConfig::empty();
    emitted.partition = config.partition.clone();
    emitted.detector = config.detector.clone();
    emitted.seed = config.seed;
    match section.statistic {
        CalibratedStatistic::Z => {
            let cal = match section.method {
                NullMethod::ExactBinomial => calibrate_z_exact(section.n, &null, section.target_fpr),
                NullMethod::MonteCarlo => {
                    calibrate_z_monte_carlo(section.n, &null, section.target_fpr, section.samples, seed)
                }
            }
            .map_err(stage)?;
            emitted.detector.config.thresholds.z = cal.z_threshold;
            emitted.calibration = Some(serde_json::to_value(cal).expect("calibration"));
        }
        CalibratedStatistic::ZWin => {
            let det = &config.detector.config;
            let cal =
                calibrate_z_win(section.n, det.window, det.stride, &null, section.target_fpr, section.samples, seed)
                    .map_err(stage)?;
            emitted.detector.config.thresholds.z_win = Some(cal.threshold);
            emitted.calibration = Some(serde_json::to_value(cal).expect("calibration"));
        }
    }
    let json = serde_json::to_string_pretty(&emitted).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut w = output_writer(&config)?;
    w.write_all(json.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Runtime(format!("writing output: {e}")))
}
