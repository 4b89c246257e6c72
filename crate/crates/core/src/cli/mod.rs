//! The `csrr` command line: prepare, train, generate, evaluate, chat, serve.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    encode_conversation, load_corpus, split_corpus, tokenize, write_jsonl, Conversation, RawConversation, Vocabulary,
    DEFAULT_MAX_CONV_LENGTH, DEFAULT_MAX_SIZE, DEFAULT_MIN_COUNT, DEFAULT_PAD_LENGTH, EOS,
};
use crate::error::{Error, Result};
use crate::inference::{batch_generate, ChatModel, GenerationOptions, LatentMode, Session, Speaker, Strategy, Turn, VOCAB_FILE};
use crate::metrics::{evaluate_files, load_embeddings};
use crate::model::{CsrrModel, ModelMode};
use crate::service::{AppState, ServiceConfig};
use crate::training::{Checkpoint, TrainConfig, Trainer, LAST_CHECKPOINT};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_ENV: &str = "CSRR_LOG_LEVEL";

#[derive(Debug, Parser)]
#[command(name = "csrr", version, about = "Hierarchical latent-variable dialogue model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, split and index a JSON-lines dialog corpus.
    Prepare(PrepareArgs),
    /// Train a model on prepared data.
    Train(TrainArgs),
    /// Generate one response per conversation of a split.
    Generate(GenerateArgs),
    /// Score responses against references.
    Evaluate(EvaluateArgs),
    /// Talk to a model in the terminal.
    Chat(ChatArgs),
    /// Run the HTTP chat API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// train:valid:test, e.g. `8:1:1` or `0.8,0.1,0.1`
    #[arg(long, default_value = "8:1:1")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_SIZE)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = DEFAULT_PAD_LENGTH)]
    pub pad_length: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_CONV_LENGTH)]
    pub max_conv_length: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Csrr,
    Hred,
}

impl From<ModeArg> for ModelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Csrr => ModelMode::Csrr,
            ModeArg::Hred => ModelMode::Hred,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// key=value training configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csrr")]
    pub mode: ModeArg,
    /// continue from `last.ckpt` in the output directory
    #[arg(long)]
    pub resume: bool,
    /// defaults to `<data-dir>/run-<mode>`
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl SplitArg {
    fn file(self) -> &'static str {
        match self {
            SplitArg::Train => "train.jsonl",
            SplitArg::Valid => "valid.jsonl",
            SplitArg::Test => "test.jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Greedy,
    Sample,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Sample => Strategy::Sample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LatentModeArg {
    Sample,
    Mean,
}

impl From<LatentModeArg> for LatentMode {
    fn from(s: LatentModeArg) -> Self {
        match s {
            LatentModeArg::Sample => LatentMode::Sample,
            LatentModeArg::Mean => LatentMode::Mean,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
    /// defaults to `<out>.refs`
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "greedy")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "mean")]
    pub latent_mode: LatentModeArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// write the report as JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, value_enum, default_value = "mean")]
    pub latent_mode: LatentModeArg,
    #[arg(long, value_enum, default_value = "greedy")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub counts: SplitCounts,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub pad_length: usize,
    pub max_conv_length: usize,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split([':', ','])
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bad ratios {s:?}")))?;
    if parts.len() != 3 {
        return Err(Error::invalid(format!("ratios need three parts, got {s:?}")));
    }
    let sum: f64 = parts.iter().sum();
    let integral = s.contains(':') && parts.iter().all(|p| p.fract() == 0.0);
    if integral && sum > 0.0 {
        return Ok((parts[0] / sum, parts[1] / sum, parts[2] / sum));
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("ratios must sum to 1, got {sum}")));
    }
    Ok((parts[0], parts[1], parts[2]))
}

pub fn prepare(args: &PrepareArgs) -> Result<Manifest> {
    let out = &args.output_dir;
    if out.join(MANIFEST_FILE).exists() && !args.force {
        return Err(Error::invalid(format!(
            "{} already holds prepared data; pass --force to overwrite",
            out.display()
        )));
    }
    let ratios = parse_ratios(&args.ratios)?;
    if args.pad_length < 2 {
        return Err(Error::invalid("pad_length must be >= 2"));
    }
    let convs = load_corpus(&args.input, args.max_conv_length)?;
    let split = split_corpus(&convs, ratios, args.seed)?;
    let vocab = Vocabulary::build(&split.train, args.vocab_size, DEFAULT_MIN_COUNT)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_jsonl(&out.join("train.jsonl"), &split.train)?;
    write_jsonl(&out.join("valid.jsonl"), &split.valid)?;
    write_jsonl(&out.join("test.jsonl"), &split.test)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    let manifest = Manifest {
        counts: SplitCounts {
            train: split.train.len(),
            valid: split.valid.len(),
            test: split.test.len(),
        },
        seed: args.seed,
        ratios: [ratios.0, ratios.1, ratios.2],
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        pad_length: args.pad_length,
        max_conv_length: args.max_conv_length,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    info!(
        "prepared {} / {} / {} conversations, vocabulary {}",
        manifest.counts.train,
        manifest.counts.valid,
        manifest.counts.test,
        vocab.len()
    );
    Ok(manifest)
}

fn read_split(path: &Path, vocab: &Vocabulary, manifest: &Manifest) -> Result<Vec<Conversation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawConversation = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(encode_conversation(&raw, vocab, manifest.pad_length)?);
    }
    Ok(out)
}

fn load_vocab(dir: &Path) -> Result<Vocabulary> {
    let path = dir.join(VOCAB_FILE);
    if !path.exists() {
        return Err(Error::invalid(format!("missing vocabulary {}", path.display())));
    }
    Vocabulary::load(&path)
}

pub fn train(args: &TrainArgs) -> Result<u64> {
    let manifest = Manifest::load(&args.data_dir)?;
    let vocab = load_vocab(&args.data_dir)?;
    if vocab.hash() != manifest.vocab_hash {
        return Err(Error::invalid("vocabulary does not match the manifest"));
    }
    let mode: ModelMode = args.mode.into();
    let out = args
        .output_dir
        .clone()
        .unwrap_or_else(|| args.data_dir.join(format!("run-{mode}")));
    let train = read_split(&args.data_dir.join("train.jsonl"), &vocab, &manifest)?;
    let valid = read_split(&args.data_dir.join("valid.jsonl"), &vocab, &manifest)?;

    let mut trainer = if args.resume {
        let ck = Checkpoint::load(&out.join(LAST_CHECKPOINT))?;
        if ck.vocab_hash != vocab.hash() {
            return Err(Error::Checkpoint("checkpoint was trained with a different vocabulary".into()));
        }
        if ck.model.mode != mode {
            return Err(Error::invalid(format!("checkpoint mode is {}, not {mode}", ck.model.mode)));
        }
        let mut t = Trainer::from_checkpoint(ck)?;
        if let Some(path) = &args.config {
            let cfg = TrainConfig::load(path)?;
            t.config.max_steps = cfg.max_steps;
            t.config.checkpoint_every = cfg.checkpoint_every;
        }
        t
    } else {
        let cfg = match &args.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        let mcfg = cfg.model_config(vocab.len(), manifest.pad_length, manifest.max_conv_length, mode);
        let (model, store) = CsrrModel::new(mcfg, cfg.seed)?;
        Trainer::new(model, store, cfg, vocab.hash())?
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    vocab.save(&out.join(VOCAB_FILE))?;
    info!(
        "training {mode} from step {} to {} in {}",
        trainer.state.global_step,
        trainer.config.max_steps,
        out.display()
    );
    trainer.run(&train, &valid, Some(&out), |r| {
        if r.step % 100 == 0 {
            info!("step {} loss {:.4} lambda {:.4}", r.step, r.breakdown.loss(), r.lambda);
        }
    })?;
    Ok(trainer.state.global_step)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn generate(args: &GenerateArgs) -> Result<usize> {
    let manifest = Manifest::load(&args.data_dir)?;
    let vocab = load_vocab(&args.data_dir)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let chat = ChatModel::from_checkpoint(&ck, vocab)?;
    let convs = read_split(&args.data_dir.join(args.split.file()), &chat.vocab, &manifest)?;
    let opts = GenerationOptions {
        strategy: args.strategy.into(),
        temperature: args.temperature,
        max_tokens: chat.config().pad_length,
        latent_mode: args.latent_mode.into(),
        num_candidates: 1,
        seed: args.seed,
    };
    let outputs = batch_generate(&chat.model, &chat.store, &convs, &opts)?;
    let responses: Vec<String> = outputs.iter().map(|t| chat.text_of(t)).collect();
    let references: Vec<String> = convs
        .iter()
        .map(|c| tokenize(&c.utterances.last().expect("non-empty").raw_text).join(" "))
        .collect();
    let refs_path = args
        .references
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.refs", args.out.display())));
    write_lines(&args.out, &responses)?;
    write_lines(&refs_path, &references)?;
    Ok(responses.len())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<crate::metrics::EvalReport> {
    let table = load_embeddings(&args.embeddings)?;
    let report = evaluate_files(&args.responses, &args.references, &table)?;
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json() + "\n").map_err(|e| Error::io(out, e))?;
    }
    Ok(report)
}

/// Interactive loop over `input`; `/reset` clears the history, `/quit` exits.
pub fn chat_loop(chat: &ChatModel, opts: &GenerationOptions, input: impl BufRead, mut output: impl Write) -> Result<Session> {
    let mut session = Session::new("terminal", chat.vocab.hash(), chat.config().max_conv_length)?;
    let werr = |e| Error::io("<stdout>", e);
    let mut turn = 0u64;
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let text = line.trim();
        match text {
            "" => continue,
            "/quit" => break,
            "/reset" => {
                session.clear();
                writeln!(output, "(history cleared)").map_err(werr)?;
                continue;
            }
            _ => {}
        }
        session.push(Turn {
            speaker: Speaker::User,
            text: text.to_string(),
            token_ids: chat.encode(text),
        });
        let o = GenerationOptions {
            seed: opts.seed.wrapping_add(turn),
            ..opts.clone()
        };
        turn += 1;
        let cand = chat.respond(&session.history(), &o)?.remove(0);
        let reply = chat.text_of(&cand.tokens);
        writeln!(output, "{reply}").map_err(werr)?;
        let mut ids = cand.tokens;
        ids.push(EOS);
        session.push(Turn {
            speaker: Speaker::Model,
            text: reply,
            token_ids: ids,
        });
    }
    Ok(session)
}

pub fn chat(args: &ChatArgs) -> Result<()> {
    let chat = ChatModel::load(&args.checkpoint, None)?;
    let opts = GenerationOptions {
        strategy: args.strategy.into(),
        temperature: args.temperature,
        max_tokens: chat.config().pad_length,
        latent_mode: args.latent_mode.into(),
        num_candidates: 1,
        seed: args.seed,
    };
    opts.validate(chat.config().pad_length)?;
    let stdin = std::io::stdin();
    chat_loop(&chat, &opts, stdin.lock(), std::io::stdout())?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    info!("shutting down");
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Other(e.to_string()))?;
    rt.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Error::Other(format!("cannot bind {addr}: {e}")))?;
        info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr));
        let state = AppState::new(ServiceConfig::default());
        let loader = {
            let state = Arc::clone(&state);
            let path = args.checkpoint.clone();
            tokio::task::spawn_blocking(move || -> Result<()> {
                let model = ChatModel::load(&path, None)?;
                info!("model loaded, checkpoint {}", model.checkpoint_hash);
                state.set_model(model);
                Ok(())
            })
        };
        let server = tokio::spawn(crate::service::serve(listener, state, shutdown_signal()));
        loader.await.map_err(|e| Error::Other(e.to_string()))??;
        server
            .await
            .map_err(|e| Error::Other(e.to_string()))?
            .map_err(|e| Error::Other(e.to_string()))
    })
}

pub fn init_logging() {
    let level = std::env::var(LOG_ENV).unwrap_or_else(|_| "info".into());
    let level = match level.to_ascii_lowercase().as_str() {
        l @ ("debug" | "info" | "warn" | "error") => l.to_string(),
        _ => "info".to_string(),
    };
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp_millis().try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => {
            let m = prepare(&a)?;
            println!("{}", serde_json::to_string(&m.counts).map_err(|e| Error::Other(e.to_string()))?);
        }
        Command::Train(a) => {
            let step = train(&a)?;
            println!("trained to step {step}");
        }
        Command::Generate(a) => {
            let n = generate(&a)?;
            println!("wrote {n} responses to {}", a.out.display());
        }
        Command::Evaluate(a) => {
            let report = evaluate(&a)?;
            println!("{report}");
        }
        Command::Chat(a) => chat(&a)?,
        Command::Serve(a) => serve(&a)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_forms() {
        assert_eq!(parse_ratios("8:1:1").unwrap(), (0.8, 0.1, 0.1));
        assert_eq!(parse_ratios("0.8,0.1,0.1").unwrap(), (0.8, 0.1, 0.1));
        assert!(parse_ratios("0.5,0.1,0.1").is_err());
        assert!(parse_ratios("8:1").is_err());
        assert!(parse_ratios("a:b:c").is_err());
    }

    #[test]
    fn cli_parses_flags() {
        let cli = Cli::try_parse_from([
            "csrr",
            "generate",
            "--checkpoint",
            "c.ckpt",
            "--data-dir",
            "d",
            "--out",
            "o.txt",
            "--strategy",
            "sample",
            "--latent-mode",
            "sample",
            "--temperature",
            "0.5",
        ])
        .unwrap();
        match cli.command {
            Command::Generate(g) => {
                assert_eq!(g.strategy, StrategyArg::Sample);
                assert_eq!(g.split, SplitArg::Test);
                assert_eq!(g.temperature, 0.5);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["csrr", "train", "--data-dir", "d", "--mode", "vhred"]).is_err());
    }
}
