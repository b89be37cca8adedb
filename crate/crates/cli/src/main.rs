//! `vecomp` command-line tool.
//!
//! Exit codes: 0 success, 2 usage error, 3 I/O or malformed input, 4
//! numerical or training failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use vecomp::compensation;
use vecomp::corpus::{load_corpus, pair_utterances, save_corpus};
use vecomp::evaluation::{
    build_trials, compensate_loso, compute_eer, evaluate_conditions, export_report, score_trials,
    Condition, EerReport,
};
use vecomp::synth::{generate_corpus, SynthConfig};
use vecomp::{CompensationModel, EmConfig, Error, EstimatorKind, Mode, TrainParams};

#[derive(Parser)]
#[command(
    name = "vecomp",
    version,
    about = "Vocal-effort compensation of speaker embeddings"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "VECOMP_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired corpus.
    Synth(SynthArgs),
    /// Train a compensation model on paired data.
    Train(TrainArgs),
    /// Apply a model to a corpus.
    Compensate(CompensateArgs),
    /// Leave-one-speaker-out evaluation of one or more estimators.
    Evaluate(EvaluateArgs),
    /// Write the trial list of one condition.
    Trials(TrialsArgs),
    /// Equal error rate of a scored trial file.
    Eer(EerArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    speakers: Option<usize>,
    /// Utterances per speaker and mode.
    #[arg(long)]
    utts: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Non-neutral mode label.
    #[arg(long, default_value = "shouted")]
    mode: String,
    /// `key = value` file of generator settings, applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra generator setting, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct EmArgs {
    /// Master seed for EM initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
}

impl EmArgs {
    fn config(&self) -> EmConfig {
        EmConfig {
            max_iterations: self.max_iter,
            rel_tolerance: self.tol,
            seed: self.seed,
            n_init_restarts: self.restarts,
            ..EmConfig::default()
        }
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long, default_value = "mmse_v")]
    kind: EstimatorKind,
    /// Training corpus; not needed for `identity`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "shouted")]
    mode: String,
    /// Mixture components.
    #[arg(short = 'K', default_value_t = 8)]
    k: usize,
    /// PCA dimension.
    #[arg(short = 'L', default_value_t = 16)]
    l: usize,
    #[command(flatten)]
    em: EmArgs,
    #[arg(short, long, alias = "model")]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct CompensateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "shouted")]
    mode: String,
    /// Comma-separated estimator kinds.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "identity,mmse_v,mmse_x,memlin,memlin_pca"
    )]
    kinds: Vec<EstimatorKind>,
    #[arg(short = 'K', default_value_t = 8)]
    k: usize,
    #[arg(short = 'L', default_value_t = 16)]
    l: usize,
    /// Comma-separated PCA dimensions; overrides `-L`.
    #[arg(long = "sweep-L", value_delimiter = ',')]
    sweep_l: Vec<usize>,
    #[command(flatten)]
    em: EmArgs,
    /// Report CSV.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct TrialsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "shouted")]
    mode: String,
    #[arg(long)]
    condition: Condition,
    /// Add a cosine score column.
    #[arg(long)]
    score: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct EerArgs {
    /// CSV with `score` and `target` columns, e.g. from `trials --score`.
    #[arg(long)]
    scores: PathBuf,
    /// Write the result as JSON here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Written next to every output as `<output>.manifest.json`.
#[derive(Serialize)]
struct RunManifest {
    subcommand: &'static str,
    version: &'static str,
    args: Vec<String>,
    params: Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    duration_seconds: f64,
}

struct Run {
    start: Instant,
    subcommand: &'static str,
}

impl Run {
    fn finish(
        &self,
        params: Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        output: &Path,
    ) -> Result<(), Error> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            version: env!("CARGO_PKG_VERSION"),
            args: std::env::args().collect(),
            params,
            seed,
            inputs,
            outputs: vec![output.to_path_buf()],
            duration_seconds: self.start.elapsed().as_secs_f64(),
        };
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        write_json(Path::new(&name), &manifest)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

fn parse_mode(label: &str) -> Result<Mode, Error> {
    let m = Mode::new(label)?;
    if m.is_normal() {
        return Err(Error::InvalidParameter(
            "--mode must name a non-neutral mode".into(),
        ));
    }
    Ok(m)
}

fn cmd_synth(a: &SynthArgs, run: &Run) -> Result<(), Error> {
    // the preset scales the transfer norm with the dimension, so build it from
    // the flags; a config file or --set may then override any field
    let mut cfg = SynthConfig::vocal_effort(
        a.speakers.unwrap_or(22),
        a.utts.unwrap_or(24),
        a.dim.unwrap_or(256),
        a.seed.unwrap_or(0),
    );
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        cfg.apply_key_values(&text)?;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("--set expects KEY=VALUE, got {kv:?}"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(v) = a.speakers {
        cfg.n_speakers = v;
    }
    if let Some(v) = a.utts {
        cfg.utterances_per_mode = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let mode = parse_mode(&a.mode)?;
    let corpus = generate_corpus(&cfg, &mode)?;
    save_corpus(&corpus, &a.output)?;
    eprintln!("wrote {} records to {}", corpus.len(), a.output.display());
    let params = json!({ "generator": cfg, "mode": mode });
    run.finish(
        params,
        Some(cfg.seed),
        a.config.iter().cloned().collect(),
        &a.output,
    )
}

fn cmd_train(a: &TrainArgs, run: &Run) -> Result<(), Error> {
    let mode = parse_mode(&a.mode)?;
    let params = TrainParams {
        pca_dim: a.l,
        mixtures: a.k,
        em: a.em.config(),
    };
    let mut inputs = Vec::new();
    let model = match (&a.corpus, a.kind) {
        (None, EstimatorKind::Identity) => CompensationModel::identity(Some(mode), None),
        (None, kind) => {
            return Err(Error::InvalidParameter(format!(
                "--corpus is required for --kind {kind}"
            )));
        }
        (Some(path), kind) => {
            inputs.push(path.clone());
            let corpus = load_corpus(path, None)?;
            if kind.uses_pca() && (a.l == 0 || a.l > corpus.dimension()) {
                return Err(Error::InvalidParameter(format!(
                    "-L {} must be in 1..={} (embedding dimension)",
                    a.l,
                    corpus.dimension()
                )));
            }
            let pairs = pair_utterances(&corpus, &mode)?;
            if pairs.skipped > 0 {
                eprintln!(
                    "warning: {} records without a counterpart were skipped",
                    pairs.skipped
                );
            }
            let n = pairs.len();
            let (model, report) = compensation::train(kind, &pairs, &params)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(fit) = &report.fit {
                eprintln!(
                    "trained {kind} on {n} pairs: {} EM iterations, converged {}, log-likelihood {:.6}",
                    fit.iterations,
                    fit.converged,
                    fit.final_log_likelihood()
                );
            }
            model
        }
    };
    write_json(&a.output, &model)?;
    run.finish(serde_json::to_value(a)?, Some(a.em.seed), inputs, &a.output)
}

fn cmd_compensate(a: &CompensateArgs, run: &Run) -> Result<(), Error> {
    let text = std::fs::read_to_string(&a.model).map_err(|e| io_err(&a.model, e))?;
    let model: CompensationModel = serde_json::from_str(&text)?;
    let corpus = load_corpus(&a.corpus, None)?;
    if let Some(d) = model.embedding_dim() {
        if d != corpus.dimension() {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: corpus.dimension(),
            });
        }
    }
    let out = model.compensate_corpus(&corpus)?;
    let touched = corpus
        .records()
        .iter()
        .filter(|r| model.applies_to(&r.mode))
        .count();
    save_corpus(&out, &a.output)?;
    eprintln!("compensated {touched} of {} records", corpus.len());
    run.finish(
        serde_json::to_value(a)?,
        None,
        vec![a.model.clone(), a.corpus.clone()],
        &a.output,
    )
}

fn cmd_evaluate(a: &EvaluateArgs, run: &Run) -> Result<(), Error> {
    let mode = parse_mode(&a.mode)?;
    if a.kinds.is_empty() {
        return Err(Error::InvalidParameter("--kinds is empty".into()));
    }
    let corpus = load_corpus(&a.corpus, None)?;
    let sweep = if a.sweep_l.is_empty() {
        vec![a.l]
    } else {
        a.sweep_l.clone()
    };
    for &l in &sweep {
        if l == 0 || l > corpus.dimension() {
            return Err(Error::InvalidParameter(format!(
                "L={l} must be in 1..={} (embedding dimension)",
                corpus.dimension()
            )));
        }
    }
    if a.k == 0 {
        return Err(Error::InvalidParameter("-K must be positive".into()));
    }

    let mut reports: Vec<EerReport> = Vec::new();
    for &kind in &a.kinds {
        // estimators outside the PCA domain give the same result for every L
        let mut cached: Option<Vec<EerReport>> = None;
        for &l in &sweep {
            let params = TrainParams {
                pca_dim: l,
                mixtures: a.k,
                em: a.em.config(),
            };
            let rows = match &cached {
                Some(rows) if !kind.uses_pca() => rows
                    .iter()
                    .map(|r| EerReport {
                        pca_dim: l,
                        ..r.clone()
                    })
                    .collect(),
                _ => {
                    let (comp, folds) = compensate_loso(&corpus, &mode, kind, &params)?;
                    for f in &folds {
                        for w in &f.train.warnings {
                            eprintln!("warning: fold {}: {w}", f.speaker);
                        }
                    }
                    evaluate_conditions(&comp, &mode, kind, &params)?
                }
            };
            for r in &rows {
                eprintln!(
                    "{:>10} L={l:<3} {:<4} EER {:6.2}%  ({} trials)",
                    kind.as_str(),
                    r.condition.label(&mode),
                    100.0 * r.eer,
                    r.n_trials
                );
            }
            cached = Some(rows.clone());
            reports.extend(rows);
        }
    }
    export_report(&reports, &a.output)?;
    run.finish(
        serde_json::to_value(a)?,
        Some(a.em.seed),
        vec![a.corpus.clone()],
        &a.output,
    )
}

fn cmd_trials(a: &TrialsArgs, run: &Run) -> Result<(), Error> {
    let mode = parse_mode(&a.mode)?;
    let corpus = load_corpus(&a.corpus, None)?;
    let trials = build_trials(&corpus, a.condition, &mode)?;
    let scores = if a.score {
        Some(score_trials(&corpus, &trials)?)
    } else {
        None
    };
    let mut w = create(&a.output)?;
    let records = corpus.records();
    let mut write = || -> std::io::Result<()> {
        write!(w, "enroll_speaker,enroll_utterance,enroll_mode,test_speaker,test_utterance,test_mode,target")?;
        writeln!(w, "{}", if scores.is_some() { ",score" } else { "" })?;
        for (i, t) in trials.trials.iter().enumerate() {
            let (e, s) = (&records[t.enroll], &records[t.test]);
            write!(
                w,
                "{},{},{},{},{},{},{}",
                e.speaker_id,
                e.utterance_id,
                e.mode,
                s.speaker_id,
                s.utterance_id,
                s.mode,
                t.is_target as u8
            )?;
            match &scores {
                Some(sc) => writeln!(w, ",{}", sc[i])?,
                None => writeln!(w)?,
            }
        }
        w.flush()
    };
    write().map_err(|e| io_err(&a.output, e))?;
    eprintln!("{} trials ({} target)", trials.len(), trials.n_target());
    run.finish(
        serde_json::to_value(a)?,
        None,
        vec![a.corpus.clone()],
        &a.output,
    )
}

fn read_scores(path: &Path) -> Result<(Vec<f64>, Vec<bool>), Error> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let (si, ti) = (col("score")?, col("target")?);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        let s: f64 = rec[si]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad score {:?}", &rec[si])))?;
        let t = match rec[ti].trim() {
            "1" | "true" | "target" => true,
            "0" | "false" | "nontarget" => false,
            other => return Err(bad(format!("bad target flag {other:?}"))),
        };
        scores.push(s);
        labels.push(t);
    }
    Ok((scores, labels))
}

fn cmd_eer(a: &EerArgs, run: &Run) -> Result<(), Error> {
    let (scores, labels) = read_scores(&a.scores)?;
    let e = compute_eer(&scores, &labels)?;
    let result = json!({
        "eer": e.eer,
        "eer_percent": format!("{:.2}", 100.0 * e.eer),
        "threshold": e.threshold,
        "n_trials": scores.len(),
        "n_target": labels.iter().filter(|&&l| l).count(),
    });
    match &a.output {
        Some(path) => {
            write_json(path, &result)?;
            run.finish(serde_json::to_value(a)?, None, vec![a.scores.clone()], path)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Fold { source, .. } => exit_code(source),
        Error::InvalidParameter(_)
        | Error::UnknownSpeaker(_)
        | Error::UnknownMode(_)
        | Error::MissingMode(_) => 2,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Json(_)
        | Error::Csv(_)
        | Error::DuplicateKey(_)
        | Error::EmptyCorpus
        | Error::InvalidModel(_)
        | Error::MissingModelPart { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Compensate(_) => "compensate",
        Command::Evaluate(_) => "evaluate",
        Command::Trials(_) => "trials",
        Command::Eer(_) => "eer",
    };
    let run = Run {
        start: Instant::now(),
        subcommand: name,
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, &run),
        Command::Train(a) => cmd_train(a, &run),
        Command::Compensate(a) => cmd_compensate(a, &run),
        Command::Evaluate(a) => cmd_evaluate(a, &run),
        Command::Trials(a) => cmd_trials(a, &run),
        Command::Eer(a) => cmd_eer(a, &run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
