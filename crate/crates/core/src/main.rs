use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use editor_core::config::RunConfig;
use editor_core::decoder::{decode_batch, DecodeConfig, DecodeMode, DecodeTrace};
use editor_core::eval::{parse_constraint_phrases, tokenize, EvalReport};
use editor_core::model::{load_checkpoint, random_grad_check, small_grad_check_config, EditorModel, GradCheckOptions};
use editor_core::oracle::{check_exhaustive, check_round_trips, OracleCheckReport};
use editor_core::tasks::{generate_splits, load_parallel_corpus, read_lines, read_vocab, write_task, TaskKind, TaskSpec, VocabPolicy};
use editor_core::types::{ConstraintMode, ConstraintSet};

#[derive(Parser)]
#[command(name = "editor", version, about = "Edit-based non-autoregressive sequence generation")]
struct Cli {
    /// Worker threads (1 keeps results bit-reproducible).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with dual-path imitation learning.
    Train(TrainArgs),
    /// Decode line by line, optionally seeded with lexical constraints.
    Decode(DecodeArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Compare the alignment oracle against brute force.
    OracleCheck(OracleCheckArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Write a synthetic task to a directory.
    MakeTask(MakeTaskArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    valid_src: PathBuf,
    #[arg(long)]
    valid_tgt: PathBuf,
    /// Checkpoint path. The metrics log goes next to it with a `.metrics`
    /// suffix unless `--metrics` is given.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Source vocabulary (one token per line); built from the training
    /// data when absent.
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    #[arg(long)]
    tgt_vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000)]
    max_vocab: usize,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// One line per input; phrases separated by tabs.
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long, requires = "constraints")]
    hard: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print one JSON record instead of `metric<TAB>value` lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleCheckArgs {
    #[arg(long)]
    max_len: usize,
    #[arg(long)]
    vocab: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Run configuration for the model shape; a d_model = 8, 1+1 layer
    /// model is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct MakeTaskArgs {
    /// copy, swap_translate or duplicate
    #[arg(long)]
    task: TaskKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    vocab: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    valid: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Whether a command ran to completion and its check (if any) passed.
enum Outcome {
    Ok,
    CheckFailed,
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(args: TrainArgs, threads: usize) -> Result<Outcome> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?.train,
        None => RunConfig::default().train,
    };
    cfg.threads = threads;
    let policy = match (&args.src_vocab, &args.tgt_vocab) {
        (Some(s), Some(t)) => VocabPolicy::Fixed {
            src: read_vocab(s)?,
            tgt: read_vocab(t)?,
        },
        (None, None) => VocabPolicy::Build {
            max_size: args.max_vocab,
        },
        _ => bail!("--src-vocab and --tgt-vocab must be given together"),
    };
    let max_len = cfg.model.max_len;
    let train_set = load_parallel_corpus(&args.train_src, &args.train_tgt, policy, max_len)?;
    let valid = load_parallel_corpus(
        &args.valid_src,
        &args.valid_tgt,
        VocabPolicy::Fixed {
            src: train_set.src_vocab.clone(),
            tgt: train_set.tgt_vocab.clone(),
        },
        max_len,
    )?;
    let model = EditorModel::new(cfg.model.clone(), train_set.src_vocab, train_set.tgt_vocab)?;
    cfg.model = model.config.clone();
    let outcome = editor_core::train::train(model, &train_set.pairs, &valid.pairs, &cfg, Some(&args.out))?;
    let metrics = args.metrics.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".metrics");
        p.into()
    });
    write_lines(&metrics, &outcome.log)?;
    match (outcome.best_step, outcome.best_bleu, outcome.best_exact) {
        (Some(s), Some(b), Some(e)) => println!("best\tstep={s}\tvalid_bleu={b:.4}\tvalid_exact={e:.4}"),
        _ => println!("no evaluation ran; saved initial parameters"),
    }
    Ok(Outcome::Ok)
}

fn decode(args: DecodeArgs, threads: usize) -> Result<Outcome> {
    let model = load_checkpoint(&args.ckpt)?;
    let mut cfg = DecodeConfig {
        threads,
        ..DecodeConfig::default()
    };
    if let Some(m) = args.max_iters {
        cfg.max_iters = m;
    }
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    let lines = read_lines(&args.input)?;
    let sources: Vec<_> = lines.iter().map(|l| model.src_vocab.encode(l)).collect();
    let constraints = match &args.constraints {
        Some(path) => {
            let mode = if args.hard {
                cfg.mode = DecodeMode::Hard;
                ConstraintMode::Hard
            } else {
                cfg.mode = DecodeMode::Soft;
                ConstraintMode::Soft
            };
            let c_lines = read_lines(path)?;
            Some(
                c_lines
                    .iter()
                    .map(|l| ConstraintSet::parse_line(&model.tgt_vocab, l, mode))
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };
    let outputs = decode_batch(&model.params, &sources, constraints.as_deref(), &cfg)?;
    let text: Vec<String> = outputs.iter().map(|(y, _)| model.tgt_vocab.decode_line(y)).collect();
    write_lines(&args.output, &text)?;
    if let Some(path) = &args.trace {
        let records: Vec<String> = outputs.iter().map(|(_, t)| t.to_record()).collect();
        write_lines(path, &records)?;
    }
    Ok(Outcome::Ok)
}

fn evaluate(args: EvaluateArgs) -> Result<Outcome> {
    let hyps: Vec<_> = read_lines(&args.hyp)?.iter().map(|l| tokenize(l)).collect();
    let refs: Vec<_> = read_lines(&args.reference)?.iter().map(|l| tokenize(l)).collect();
    let constraints = match &args.constraints {
        Some(p) => Some(read_lines(p)?.iter().map(|l| parse_constraint_phrases(l)).collect::<Vec<_>>()),
        None => None,
    };
    let traces = match &args.trace {
        Some(p) => Some(
            read_lines(p)?
                .iter()
                .enumerate()
                .map(|(i, l)| DecodeTrace::parse_record(l).with_context(|| format!("{}:{}", p.display(), i + 1)))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let report = EvalReport::compute(&hyps, &refs, constraints.as_deref(), traces.as_deref())?;
    if args.json {
        println!("{}", report.to_record());
    } else {
        print!("{}", report.to_tsv());
    }
    Ok(Outcome::Ok)
}

fn oracle_check(args: OracleCheckArgs) -> Result<Outcome> {
    if args.vocab == 0 {
        bail!("--vocab must be at least 1");
    }
    let mut report = OracleCheckReport::default();
    check_exhaustive(args.max_len, args.vocab, &mut report)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    check_round_trips(args.samples, args.max_len, args.vocab, &mut rng, &mut report);
    println!("pairs_checked\t{}", report.pairs_checked);
    println!("mismatches\t{}", report.mismatches.len());
    println!("round_trips\t{}", report.round_trips);
    println!("round_trip_failures\t{}", report.round_trip_failures.len());
    for (y, y_star, dp, brute) in &report.mismatches {
        println!("mismatch\t{y}\t{y_star}\tdp={dp}\tbrute={brute}");
    }
    for (y, y_star) in &report.round_trip_failures {
        println!("round_trip_failure\t{y}\t{y_star}");
    }
    Ok(if report.passed() { Outcome::Ok } else { Outcome::CheckFailed })
}

fn grad_check(args: GradCheckArgs) -> Result<Outcome> {
    let model_cfg = match &args.config {
        Some(p) => {
            let mut m = RunConfig::load(p)?.train.model;
            let small = small_grad_check_config();
            m.src_vocab_size = small.src_vocab_size;
            m.tgt_vocab_size = small.tgt_vocab_size;
            m.max_len = m.max_len.min(small.max_len);
            m
        }
        None => small_grad_check_config(),
    };
    let opts = GradCheckOptions {
        step: args.step,
        tol: args.tol,
        corrupt: args.corrupt,
    };
    let report = random_grad_check(&model_cfg, args.seed, &opts)?;
    println!("checked\t{}", report.checked);
    println!("max_rel_error\t{:e}", report.max_rel_error);
    println!("failures\t{}", report.failures.len());
    for (name, k, a, n, rel) in report.failures.iter().take(10) {
        println!("failure\t{name}[{k}]\tanalytic={a:e}\tnumeric={n:e}\trel={rel:e}");
    }
    Ok(if report.passed() { Outcome::Ok } else { Outcome::CheckFailed })
}

fn make_task(args: MakeTaskArgs) -> Result<Outcome> {
    let spec = TaskSpec {
        kind: args.task,
        vocab_size: args.vocab,
        len_range: (args.min_len, args.max_len),
        n_pairs: 0,
        seed: args.seed,
        ..TaskSpec::new(args.task, 0, args.seed)
    };
    let splits = generate_splits(&spec, args.train, args.valid, args.test)?;
    write_task(&args.out, &splits)?;
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let threads = cli.threads.max(1);
    let result = match cli.command {
        Command::Train(a) => train(a, threads),
        Command::Decode(a) => decode(a, threads),
        Command::Evaluate(a) => evaluate(a),
        Command::OracleCheck(a) => oracle_check(a),
        Command::GradCheck(a) => grad_check(a),
        Command::MakeTask(a) => make_task(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            // library errors already embed their source; avoid repeating it
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
