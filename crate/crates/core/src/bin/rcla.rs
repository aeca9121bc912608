//! Command-line harness: training runs, retention sweeps, inference
//! benchmarks, footprint reports, and synthetic data generation.
//!
//! Exit codes: 0 success, 2 validation error, 3 training aborted on a
//! non-finite loss, 1 anything else (I/O and the like).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use rcla_core::bench::{bench_sweep, retention_sweep, BenchRecord, RetentionRow, SweepSpec};
use rcla_core::cache::footprint_report;
use rcla_core::data::corpus::{Corpus, LmWindows};
use rcla_core::data::retrieval::{gen_dataset, read_jsonl, write_jsonl, RetrievalBatches};
use rcla_core::model::{load_checkpoint, Model, ModelConfig};
use rcla_core::routing::{SharingStrategy, TrainingRoutingMode};
use rcla_core::train::{
    self, stream_rng, streams, BatchSource, DecaySchedule, TrainConfig, TrainError, TrainRecord,
};

#[derive(Parser)]
#[command(
    name = "rcla",
    version,
    about = "Depth-wise KV cache sharing: training, evaluation, and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the LM corpus or the synthetic retrieval task.
    Train(TrainArgs),
    /// Evaluate checkpoints across cache retention levels.
    EvalRetention(EvalRetentionArgs),
    /// TTFT / decode-throughput / memory sweep over a (length, batch, group) grid.
    Bench(BenchArgs),
    /// Closed-form cache footprint report as JSON.
    Footprint(FootprintArgs),
    /// Generate a synthetic retrieval dataset (JSON lines).
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskKind {
    Lm,
    Retrieval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeKind {
    Baseline,
    Rcla,
    Cla,
    RdCla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RecipeKind {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecayKind {
    Cosine,
    Linear,
}

/// Optional JSON config file; CLI flags override its fields.
#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "lm")]
    task: TaskKind,
    /// LM: directory of .txt files, "bundled", or "synthetic"; retrieval: a
    /// .jsonl file.
    #[arg(long, default_value = "bundled")]
    data: String,
    /// Number of generated documents when --data synthetic.
    #[arg(long, default_value_t = 512)]
    synthetic_docs: usize,
    /// Held-out retrieval examples for eval.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Output directory for model.ckpt and records.csv.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with {"model": ..., "train": ...} defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from an existing checkpoint instead of random init.
    #[arg(long)]
    init_from: Option<PathBuf>,

    #[arg(long, value_enum)]
    mode: Option<ModeKind>,
    /// Self-attention probability for rcla / rd-cla.
    #[arg(long)]
    p: Option<f64>,
    /// Group size for cla / rd-cla.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value = "pretrain")]
    recipe: RecipeKind,

    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Window length for LM training data.
    #[arg(long, default_value_t = 48)]
    seq_len: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup_frac: Option<f64>,
    #[arg(long, value_enum)]
    decay: Option<DecayKind>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,

    // model shape overrides (applied over the preset / config file)
    #[arg(long, default_value = "toy")]
    model_preset: String,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    n_kv_heads: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,

    /// Print a progress line every N steps (0 = quiet).
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args)]
struct EvalRetentionArgs {
    /// Comma-separated checkpoint paths.
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    /// Comma-separated strategies: all | single | every:K | [0,2,4].
    #[arg(long, value_delimiter = ',', default_value = "all,every:2,every:4")]
    strategies: Vec<String>,
    /// Retrieval eval set (.jsonl).
    #[arg(long)]
    data: PathBuf,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot-friendly .dat next to the CSV.
    #[arg(long)]
    dat: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Model preset name, or use --model-config / --checkpoint.
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Bench a trained model instead of a random-initialized one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Raise the context window for long-sequence runs.
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "512")]
    lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    batches: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    group_sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 128)]
    decode_tokens: usize,
    /// Artificial memory cap in bytes; rows over it report status=oom.
    #[arg(long)]
    mem_cap_bytes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dat: bool,
}

#[derive(Args)]
struct FootprintArgs {
    /// llama2-7b | llama3-8b | qwen3-8b | toy, or use --config.
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    strategy: String,
    /// Prompt length T.
    #[arg(long, default_value_t = 1)]
    seq: usize,
    /// Generated tokens t.
    #[arg(long, default_value_t = 0)]
    generated: usize,
    /// Model weight bytes, for the cache-vs-weights ratio.
    #[arg(long)]
    weight_bytes: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2048)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    n_pairs: usize,
    #[arg(long, default_value_t = 4)]
    key_len: usize,
    #[arg(long, default_value_t = 4)]
    val_len: usize,
    /// Also write a disjoint eval split.
    #[arg(long)]
    eval_out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    eval_count: usize,
    #[arg(long)]
    seed: Option<u64>,
}

// ── Error plumbing ──────────────────────────────────────────────────────────

enum CliError {
    Validation(String),
    TrainingAborted(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::TrainingAborted(_) => ExitCode::from(3),
            CliError::Other(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::TrainingAborted(m) | CliError::Other(m) => m,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::EvalRetention(args) => cmd_eval_retention(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Footprint(args) => cmd_footprint(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

/// RCLA_SEED env var beats the flag beats the default.
fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Ok(s) = std::env::var("RCLA_SEED") {
        return s
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("RCLA_SEED is not an integer: {s:?}")));
    }
    Ok(flag.unwrap_or(0))
}

fn parse_strategy(text: &str, n_layers: usize) -> Result<SharingStrategy, CliError> {
    let t = text.trim();
    if t == "all" {
        return Ok(SharingStrategy::all(n_layers));
    }
    if t == "single" {
        return Ok(SharingStrategy::single(n_layers));
    }
    if let Some(k) = t.strip_prefix("every:") {
        let k: usize = k
            .parse()
            .map_err(|_| CliError::Validation(format!("bad group size in {t:?}")))?;
        return SharingStrategy::keep_every_k(n_layers, k).map_err(validation);
    }
    if t.starts_with('[') {
        return SharingStrategy::from_json(t, n_layers).map_err(validation);
    }
    Err(CliError::Validation(format!(
        "unknown strategy {t:?}; expected all | single | every:K | [0,2,...]"
    )))
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(other)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn resolve_model_config(
    preset: &str,
    file_model: Option<ModelConfig>,
    path: Option<&Path>,
) -> Result<ModelConfig, CliError> {
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(other)?;
        let cfg: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("bad model config: {e}")))?;
        return Ok(cfg);
    }
    if let Some(cfg) = file_model {
        return Ok(cfg);
    }
    ModelConfig::accounting_preset(preset)
        .ok_or_else(|| CliError::Validation(format!("unknown model preset {preset:?}")))
}

// ── Subcommands ─────────────────────────────────────────────────────────────

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file_cfg = load_file_config(args.config.as_deref())?;
    let seed = resolve_seed(args.seed.or(file_cfg.train.map(|t| t.seed)))?;

    let mut model_cfg = resolve_model_config(&args.model_preset, file_cfg.model, None)?;
    if let Some(v) = args.layers {
        model_cfg.n_layers = v;
    }
    if let Some(v) = args.d_model {
        model_cfg.d_model = v;
        model_cfg.head_dim = v / model_cfg.n_heads;
    }
    if let Some(v) = args.n_heads {
        model_cfg.n_heads = v;
        model_cfg.head_dim = model_cfg.d_model / v;
    }
    if let Some(v) = args.n_kv_heads {
        model_cfg.n_kv_heads = v;
    }
    if let Some(v) = args.max_seq_len {
        model_cfg.max_seq_len = v;
    }
    model_cfg.validate().map_err(validation)?;

    let mode = match (args.mode, args.p, args.k) {
        (None | Some(ModeKind::Baseline), _, _) => TrainingRoutingMode::Baseline,
        (Some(ModeKind::Rcla), p, _) => TrainingRoutingMode::Rcla { p: p.unwrap_or(0.6) },
        (Some(ModeKind::Cla), _, k) => TrainingRoutingMode::ClaAt { k: k.unwrap_or(2) },
        (Some(ModeKind::RdCla), p, k) => TrainingRoutingMode::RdClaAt {
            k: k.unwrap_or(2),
            p: p.unwrap_or(0.6),
        },
    };

    let steps = args.steps.or(file_cfg.train.map(|t| t.steps)).unwrap_or(1000);
    let mut train_cfg = match file_cfg.train {
        Some(mut t) => {
            t.mode = mode;
            t.steps = steps;
            t.seed = seed;
            t
        }
        None => match args.recipe {
            RecipeKind::Pretrain => TrainConfig::pretrain(mode, steps, seed),
            RecipeKind::Finetune => TrainConfig::finetune(mode, steps, seed),
        },
    };
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        train_cfg.lr_peak = v;
    }
    if let Some(v) = args.warmup_frac {
        train_cfg.warmup_frac = v;
    }
    if let Some(v) = args.decay {
        train_cfg.decay = match v {
            DecayKind::Cosine => DecaySchedule::Cosine,
            DecayKind::Linear => DecaySchedule::Linear,
        };
    }
    if let Some(v) = args.beta1 {
        train_cfg.beta1 = v;
    }
    if let Some(v) = args.beta2 {
        train_cfg.beta2 = v;
    }
    if let Some(v) = args.weight_decay {
        train_cfg.weight_decay = v;
    }
    if let Some(v) = args.clip_norm {
        train_cfg.clip_norm = v;
    }
    if let Some(v) = args.eval_every {
        train_cfg.eval_every = v;
    }
    train_cfg.validate().map_err(validation)?;

    let mut model = match &args.init_from {
        Some(path) => {
            let (m, _) = load_checkpoint::<f32>(path).map_err(other)?;
            m
        }
        None => {
            let mut rng = stream_rng(seed, streams::INIT);
            Model::<f32>::init(model_cfg, &mut rng).map_err(validation)?
        }
    };

    let mut data: Box<dyn BatchSource> = match args.task {
        TaskKind::Lm => {
            let corpus = match args.data.as_str() {
                "bundled" => Corpus::bundled(),
                "synthetic" => Corpus::synthetic(args.synthetic_docs, seed),
                dir => Corpus::load_dir(dir, 5).map_err(validation)?,
            };
            Box::new(LmWindows::new(&corpus, args.seq_len, 32).map_err(validation)?)
        }
        TaskKind::Retrieval => {
            let train_set = read_jsonl(&args.data).map_err(other)?;
            if train_set.is_empty() {
                return Err(CliError::Validation("empty retrieval training set".into()));
            }
            let eval_set = match &args.eval_data {
                Some(p) => read_jsonl(p).map_err(other)?,
                None => Vec::new(),
            };
            Box::new(RetrievalBatches::new(&train_set, &eval_set))
        }
    };

    fs::create_dir_all(&args.out).map_err(other)?;
    let ckpt_path = args.out.join("model.ckpt");
    let records_path = args.out.join("records.csv");
    let mut csv = String::from(TrainRecord::CSV_HEADER);
    csv.push('\n');

    println!(
        "training mode={} steps={} batch={} params={} seed={}",
        train_cfg.mode.label(),
        train_cfg.steps,
        train_cfg.batch_size,
        model.param_count(),
        seed
    );
    let log_every = args.log_every;
    let total_steps = train_cfg.steps;
    let outcome = train::train(
        &mut model,
        data.as_mut(),
        &train_cfg,
        Some(&ckpt_path),
        |r| {
            if log_every != 0 && (r.step % log_every == 0 || r.step + 1 == total_steps) {
                match r.eval_loss {
                    Some(e) => println!(
                        "step {:>6}  train_loss {:.4}  eval_loss {:.4}  lr {:.3e}",
                        r.step, r.train_loss, e, r.lr
                    ),
                    None => println!(
                        "step {:>6}  train_loss {:.4}  lr {:.3e}",
                        r.step, r.train_loss, r.lr
                    ),
                }
            }
        },
    );
    let records = match outcome {
        Ok(r) => r,
        Err(e) if e.is_instability() => return Err(CliError::TrainingAborted(e.to_string())),
        Err(e @ (TrainError::BadConfig(_) | TrainError::Routing(_))) => return Err(validation(e)),
        Err(e) => return Err(other(e)),
    };
    for r in &records {
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    fs::write(&records_path, csv).map_err(other)?;
    println!(
        "wrote {} and {} ({} steps)",
        ckpt_path.display(),
        records_path.display(),
        records.len()
    );
    Ok(())
}

fn cmd_eval_retention(args: EvalRetentionArgs) -> Result<(), CliError> {
    let examples = read_jsonl(&args.data).map_err(other)?;
    if examples.is_empty() {
        return Err(CliError::Validation(format!(
            "no examples in {}",
            args.data.display()
        )));
    }
    let mut loaded = Vec::new();
    for path in &args.checkpoints {
        let (model, mode) = load_checkpoint::<f32>(path).map_err(other)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        loaded.push((label, model, mode));
    }
    let n_layers = loaded[0].1.config.n_layers;
    let strategies = args
        .strategies
        .iter()
        .map(|s| parse_strategy(s, n_layers))
        .collect::<Result<Vec<_>, _>>()?;

    let rows = retention_sweep(&loaded, &strategies, &examples).map_err(validation)?;
    emit_csv(
        args.out.as_deref(),
        args.dat,
        RetentionRow::CSV_HEADER,
        rows.iter().map(RetentionRow::to_csv_row).collect(),
    )
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let model: Model<f32> = match &args.checkpoint {
        Some(path) => load_checkpoint(path).map_err(other)?.0,
        None => {
            let mut cfg = resolve_model_config(&args.preset, None, args.model_config.as_deref())?;
            if let Some(v) = args.max_seq_len {
                cfg.max_seq_len = v;
            }
            cfg.validate().map_err(validation)?;
            let mut rng = stream_rng(resolve_seed(args.seed)?, streams::INIT);
            Model::init(cfg, &mut rng).map_err(validation)?
        }
    };
    let spec = SweepSpec {
        lengths: args.lengths,
        batches: args.batches,
        group_sizes: args.group_sizes,
        repeats: args.repeats,
        warmup_iters: args.warmup,
        decode_tokens: args.decode_tokens,
        mem_cap_bytes: args.mem_cap_bytes,
    };
    let rows = bench_sweep(&model, &spec, |r| {
        eprintln!("bench {}", r.to_csv_row());
    })
    .map_err(validation)?;
    emit_csv(
        args.out.as_deref(),
        args.dat,
        BenchRecord::CSV_HEADER,
        rows.iter().map(BenchRecord::to_csv_row).collect(),
    )
}

fn cmd_footprint(args: FootprintArgs) -> Result<(), CliError> {
    let cfg = resolve_model_config(&args.preset, None, args.config.as_deref())?;
    cfg.validate().map_err(validation)?;
    let strategy = parse_strategy(&args.strategy, cfg.n_layers)?;
    let report = footprint_report(&cfg, &strategy, args.seq, args.generated, args.weight_bytes);
    let json = serde_json::to_string_pretty(&report).map_err(other)?;
    match &args.out {
        Some(p) => fs::write(p, json).map_err(other)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    if args.n_pairs == 0 || args.key_len == 0 || args.val_len == 0 {
        return Err(CliError::Validation(
            "n_pairs, key_len, val_len must be positive".into(),
        ));
    }
    let seed = resolve_seed(args.seed)?;
    let train = gen_dataset(args.count, args.n_pairs, args.key_len, args.val_len, seed);
    write_jsonl(&args.out, &train).map_err(other)?;
    println!("wrote {} examples to {}", train.len(), args.out.display());
    if let Some(eval_path) = &args.eval_out {
        // disjoint stream: offset the seed far past the train indices
        let eval_seed = seed.wrapping_add(args.count as u64);
        let eval = gen_dataset(args.eval_count, args.n_pairs, args.key_len, args.val_len, eval_seed);
        write_jsonl(eval_path, &eval).map_err(other)?;
        println!("wrote {} examples to {}", eval.len(), eval_path.display());
    }
    Ok(())
}

fn emit_csv(
    out: Option<&Path>,
    dat: bool,
    header: &str,
    rows: Vec<String>,
) -> Result<(), CliError> {
    let mut csv = String::from(header);
    csv.push('\n');
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    match out {
        Some(path) => {
            fs::write(path, &csv).map_err(other)?;
            println!("wrote {}", path.display());
            if dat {
                let dat_path = path.with_extension("dat");
                fs::write(&dat_path, rcla_core::bench::to_dat(header, &rows)).map_err(other)?;
                println!("wrote {}", dat_path.display());
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}
