use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use dhdp::abnormality::{score_corpus, ScoreKind};
use dhdp::config::RunConfig;
use dhdp::corpus::{self, Grid, DEFAULT_MAGNITUDE_THRESHOLD};
use dhdp::eval::{join_scores, roc, summarize, write_roc};
use dhdp::sampler::{batch_fit, Mode, SamplerConfig};
use dhdp::synth::{generate_study, true_model_score, GeneratorParams, GroundTruth, StudyConfig};
use dhdp::{Error, Hyperparameters, ModelKind, ModelSnapshot};

#[derive(Parser, Debug)]
#[command(name = "dhdp", version, about = "Dynamic HDP topic models for abnormality detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantise an optical-flow CSV into a visual-word corpus.
    ExtractWords(ExtractArgs),
    /// Generate synthetic bar corpora with planted abnormal documents.
    GenerateSynthetic(SynthArgs),
    /// Fit a model with batch Gibbs sampling and save one snapshot per chain.
    Train(TrainArgs),
    /// Score documents in order with online inference.
    Score(ScoreArgs),
    /// ROC curve and AUC of scores against labels.
    Evaluate(EvalArgs),
    /// Scores under the true generating topics of a synthetic corpus.
    TrueScore(TrueScoreArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// key=value file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    cells_x: Option<usize>,
    #[arg(long)]
    cells_y: Option<usize>,
    #[arg(long)]
    frames_per_clip: Option<usize>,
    /// Minimum flow magnitude in px/frame
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_docs: Option<usize>,
    #[arg(long)]
    test_docs: Option<usize>,
    #[arg(long)]
    abnormal: Option<usize>,
    #[arg(long)]
    doc_len: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// dhdp or hdp
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Progress line every this many sweeps (0 = off)
    #[arg(long)]
    log_every: Option<usize>,
    /// Evaluate the next document's assignment probability exactly instead
    /// of the born-topic-free approximation
    #[arg(long)]
    exact_next_doc: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    online_sweeps: Option<usize>,
    /// Report p(x_j | past)/N_j instead of its logarithm per word
    #[arg(long)]
    literal_likelihood: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out_roc: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrueScoreArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Defaults to the noise recorded in the truth file
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Data(other),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "{}", record.args()))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ExtractWords(a) => extract_words(a),
        Command::GenerateSynthetic(a) => generate_synthetic(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Evaluate(a) => evaluate(a),
        Command::TrueScore(a) => true_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Option<PathBuf>, command: &str) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    cfg.record("command", command);
    Ok(cfg)
}

/// Seed from flags or file, else fresh entropy; always echoed.
fn resolve_seed(cfg: &mut RunConfig, flag: Option<u64>) -> std::result::Result<u64, Failure> {
    match cfg.resolve_optional("seed", flag)? {
        Some(s) => Ok(s),
        None => {
            let s: u64 = rand::random();
            info!("no seed given; drew seed={s}");
            cfg.record("seed", s);
            Ok(s)
        }
    }
}

fn path_arg(cfg: &mut RunConfig, key: &str, flag: Option<PathBuf>) -> std::result::Result<PathBuf, Failure> {
    let flag = flag.map(|p| p.display().to_string());
    Ok(PathBuf::from(cfg.resolve::<String>(key, flag, None)?))
}

fn finish(cfg: &RunConfig, dir: &Path) -> CmdResult {
    for k in cfg.unused_keys() {
        if k != "command" {
            warn!("config key {k} is not used by this command");
        }
    }
    cfg.echo(dir)?;
    Ok(())
}

/// Directory that receives `run.config` for commands writing a single file.
fn echo_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(Error::io(dir, e)))
}

fn extract_words(a: ExtractArgs) -> CmdResult {
    let mut cfg = load_config(&a.config, "extract-words")?;
    let flow = path_arg(&mut cfg, "flow", a.flow)?;
    let cells_x = cfg.resolve("cells-x", a.cells_x, None)?;
    let cells_y = cfg.resolve("cells-y", a.cells_y, None)?;
    let frames = cfg.resolve("frames-per-clip", a.frames_per_clip, Some(25))?;
    let threshold = cfg.resolve("threshold", a.threshold, Some(DEFAULT_MAGNITUDE_THRESHOLD))?;
    let out = path_arg(&mut cfg, "out", a.out)?;
    create_dir(&echo_dir(&out))?;

    let grid = Grid::new(cells_x, cells_y)?;
    let records = corpus::read_flow(&flow)?;
    let corpus = corpus::extract_words(&records, grid, frames, threshold)?;
    corpus::write_corpus(&corpus, &out)?;
    info!(
        "{} documents, {} tokens, vocab_size={}",
        corpus.len(),
        corpus.total_tokens(),
        corpus.vocab_size()
    );
    finish(&cfg, &echo_dir(&out))
}

fn generate_synthetic(a: SynthArgs) -> CmdResult {
    let mut cfg = load_config(&a.config, "generate-synthetic")?;
    let defaults = StudyConfig::default();
    let gen = GeneratorParams::default();
    let study_cfg = StudyConfig {
        train_docs: cfg.resolve("train-docs", a.train_docs, Some(defaults.train_docs))?,
        test_docs: cfg.resolve("test-docs", a.test_docs, Some(defaults.test_docs))?,
        abnormal: cfg.resolve("abnormal", a.abnormal, Some(defaults.abnormal))?,
        doc_len: cfg.resolve("doc-len", a.doc_len, Some(defaults.doc_len))?,
        noise: cfg.resolve("noise", a.noise, Some(defaults.noise))?,
        params: GeneratorParams {
            alpha: cfg.resolve("alpha", a.alpha, Some(gen.alpha))?,
            gamma: cfg.resolve("gamma", a.gamma, Some(gen.gamma))?,
            delta: cfg.resolve("delta", a.delta, Some(gen.delta))?,
        },
        seed: resolve_seed(&mut cfg, a.seed)?,
    };
    let out = path_arg(&mut cfg, "out-dir", a.out_dir)?;

    let study = generate_study(&study_cfg)?;
    create_dir(&out)?;
    corpus::write_corpus(&study.train, &out.join("train.corpus"))?;
    corpus::write_corpus(&study.test, &out.join("test.corpus"))?;
    corpus::write_labels(&study.test_labels(), &out.join("test.labels"))?;
    study.test_truth.save(&out.join("truth.json"))?;
    study.train_truth.save(&out.join("train_truth.json"))?;
    let topics = out.join("topics.txt");
    fs::write(&topics, study.topics.render()).map_err(|e| Failure::Data(Error::io(&topics, e)))?;
    info!(
        "wrote {} training and {} test documents ({} abnormal) to {}",
        study.train.len(),
        study.test.len(),
        study_cfg.abnormal,
        out.display()
    );
    finish(&cfg, &out)
}

fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(&a.config, "train")?;
    let corpus_path = path_arg(&mut cfg, "corpus", a.corpus)?;
    let model = cfg.resolve("model", a.model, Some(ModelKind::Dynamic))?;
    let hyper = Hyperparameters::new(
        cfg.resolve("alpha", a.alpha, Some(1.5))?,
        cfg.resolve("gamma", a.gamma, Some(2.0))?,
        cfg.resolve("eta", a.eta, Some(0.2))?,
        cfg.resolve("delta", a.delta, Some(0.5))?,
        model,
    )?;
    let defaults = SamplerConfig::default();
    let sampler = SamplerConfig {
        burn_in_sweeps: cfg.resolve("burn-in", a.burn_in, Some(defaults.burn_in_sweeps))?,
        chains: cfg.resolve("chains", a.chains, Some(defaults.chains))?,
        seed: resolve_seed(&mut cfg, a.seed)?,
        log_every: cfg.resolve("log-every", a.log_every, Some(100))?,
        batch_mode: if cfg.resolve("exact-next-doc", a.exact_next_doc.then_some(true), Some(false))? {
            Mode::BatchExact
        } else {
            Mode::Batch
        },
        ..defaults
    };
    let out = path_arg(&mut cfg, "out", a.out)?;

    let corpus = corpus::read_corpus(&corpus_path)?;
    let fits = batch_fit(&corpus, &hyper, &sampler)?;
    create_dir(&out)?;
    let mut log = String::new();
    for fit in &fits {
        fit.snapshot.save(&out.join(format!("chain{}.json", fit.chain)))?;
        let state = &fit.samples.last().expect("at least one sample").state;
        let line = format!(
            "chain={} seed={} sweeps={} K={} tables={} loglik={:.6}",
            fit.chain,
            fit.seed,
            sampler.burn_in_sweeps,
            fit.snapshot.num_topics(),
            state.total_tables(),
            state.log_likelihood(hyper.eta)
        );
        info!("{line}");
        log.push_str(&line);
        log.push('\n');
    }
    let log_path = out.join("train.log");
    fs::write(&log_path, log).map_err(|e| Failure::Data(Error::io(&log_path, e)))?;
    finish(&cfg, &out)
}

/// Snapshots `chain*.json` in a directory, ordered by chain index.
fn load_snapshots(dir: &Path) -> std::result::Result<Vec<ModelSnapshot>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Data(Error::io(dir, e)))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::Data(Error::io(dir, e)))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("chain") && name.ends_with(".json") {
            paths.push(path);
        }
    }
    let mut snaps = paths
        .iter()
        .map(|p| ModelSnapshot::load(p))
        .collect::<dhdp::Result<Vec<_>>>()?;
    snaps.sort_by_key(|s| s.chain);
    if snaps.is_empty() {
        return Err(Failure::Data(Error::Contract(format!(
            "no chain*.json snapshots in {}",
            dir.display()
        ))));
    }
    Ok(snaps)
}

fn score(a: ScoreArgs) -> CmdResult {
    let mut cfg = load_config(&a.config, "score")?;
    let model_dir = path_arg(&mut cfg, "model-dir", a.model_dir)?;
    let corpus_path = path_arg(&mut cfg, "corpus", a.corpus)?;
    let sweeps = cfg.resolve(
        "online-sweeps",
        a.online_sweeps,
        Some(SamplerConfig::default().online_sweeps),
    )?;
    let literal = cfg.resolve("literal-likelihood", a.literal_likelihood.then_some(true), Some(false))?;
    let out = path_arg(&mut cfg, "out", a.out)?;
    create_dir(&echo_dir(&out))?;

    let snaps = load_snapshots(&model_dir)?;
    let corpus = corpus::read_corpus(&corpus_path)?;
    let kind = if literal {
        ScoreKind::Literal
    } else {
        ScoreKind::PerWordLog
    };
    let (records, _) = score_corpus(&snaps, &corpus, sweeps, kind)?;
    let rows: Vec<_> = records.iter().map(|r| r.row()).collect();
    corpus::write_scores(&rows, &out)?;
    info!("scored {} documents with {} chains", rows.len(), snaps.len());
    finish(&cfg, &echo_dir(&out))
}

fn evaluate(a: EvalArgs) -> CmdResult {
    let mut cfg = load_config(&a.config, "evaluate")?;
    let scores_path = path_arg(&mut cfg, "scores", a.scores)?;
    let labels_path = path_arg(&mut cfg, "labels", a.labels)?;
    let out = path_arg(&mut cfg, "out-roc", a.out_roc)?;
    create_dir(&echo_dir(&out))?;

    let scores: Vec<(usize, f64)> = corpus::read_scores(&scores_path)?
        .into_iter()
        .map(|r| (r.doc_id, r.score))
        .collect();
    let labels = corpus::read_labels(&labels_path)?;
    let scored = join_scores(&scores, &labels).map_err(Failure::Data)?;
    if scored.excluded > 0 {
        warn!("{} documents without a defined score were excluded", scored.excluded);
    }
    write_roc(&roc(&scored.scores, &scored.labels), &out)?;
    println!("{}", summarize(&scored));
    finish(&cfg, &echo_dir(&out))
}

fn true_score(a: TrueScoreArgs) -> CmdResult {
    let mut cfg = load_config(&a.config, "true-score")?;
    let corpus_path = path_arg(&mut cfg, "corpus", a.corpus)?;
    let truth_path = path_arg(&mut cfg, "truth", a.truth)?;
    let truth = GroundTruth::load(&truth_path)?;
    let noise = cfg.resolve("noise", a.noise, Some(truth.noise))?;
    let out = path_arg(&mut cfg, "out", a.out)?;
    create_dir(&echo_dir(&out))?;

    if noise != truth.noise {
        warn!("noise {noise} differs from the generating noise {}", truth.noise);
    }
    let corpus = corpus::read_corpus(&corpus_path)?;
    if corpus.len() != truth.documents.len() {
        return Err(Failure::Data(Error::Contract(format!(
            "corpus has {} documents but the truth file describes {}",
            corpus.len(),
            truth.documents.len()
        ))));
    }
    let topics = dhdp::synth::bar_topics(noise)?;
    let rows: Vec<_> = corpus
        .documents()
        .iter()
        .zip(&truth.documents)
        .enumerate()
        .map(|(j, (doc, t))| corpus::ScoreRow {
            doc_id: j,
            score: true_model_score(&doc.tokens, t, &topics),
            n_tokens: doc.len(),
        })
        .collect();
    corpus::write_scores(&rows, &out)?;
    finish(&cfg, &echo_dir(&out))
}
