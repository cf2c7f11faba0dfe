//! `wst` command-line tool: graph export, loss evaluation, transcript
//! corruption, WER scoring and toy training sweeps.
//!
//! Exit codes: 0 success, 1 domain or I/O error, 2 usage error.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use wst_core::corruption::{corpus_wer, corrupt_dataset, CorruptionKind, CorruptionSpec};
use wst_core::graphs::{
    build_rnnt_lattice, build_transcript_graph, build_ws_transcript_graph, build_wst_lattice, PenaltyConfig,
};
use wst_core::loss::{loss, Criterion};
use wst_core::oracle::brute_force_loss;
use wst_core::tensor::{LogProbTensor, TensorFile};
use wst_core::toytrain::{run_experiment, sweep, ExperimentConfig, SweepGrid, SweepRow, SWEEP_RATES};
use wst_core::vocab::{TokenId, Transcript, Vocab};
use wst_core::wfst::Wfst;

#[derive(Parser)]
#[command(name = "wst", version, about = "Weakly supervised transducer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a transcript graph or training lattice and print it as DOT or JSON.
    Graph(GraphArgs),
    /// Evaluate a training criterion on a tensor file.
    Loss(LossArgs),
    /// Corrupt a JSONL transcript corpus.
    Corrupt(CorruptArgs),
    /// Score hypothesis transcripts against references.
    Score(ScoreArgs),
    /// Run one toy training experiment from a JSON config.
    Train(TrainArgs),
    /// Run the criterion x error-kind x rate grid and write JSONL rows.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphType {
    Transcript,
    WsTranscript,
    Rnnt,
    Wst,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Dot,
    Json,
}

#[derive(clap::Args)]
struct PenaltyArgs {
    /// Token bypass penalty (log domain); accepts -inf.
    #[arg(long, allow_hyphen_values = true, default_value_t = PenaltyConfig::default().token_bypass)]
    lambda1: f64,
    /// Blank bypass penalty (log domain); accepts -inf.
    #[arg(long, allow_hyphen_values = true, default_value_t = PenaltyConfig::default().blank_bypass)]
    lambda2: f64,
}

impl PenaltyArgs {
    fn config(&self) -> Result<PenaltyConfig> {
        Ok(PenaltyConfig::new(self.lambda1, self.lambda2)?)
    }
}

#[derive(clap::Args)]
struct GraphArgs {
    #[arg(long = "type", value_enum)]
    graph_type: GraphType,
    /// Comma-separated token ids; an empty string is the empty transcript.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    tokens: String,
    /// Number of frames for lattices without a tensor file.
    #[arg(long)]
    frames: Option<usize>,
    /// Vocabulary size (blank included). Defaults to the tensor's or to max token + 1.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Tensor file with the log-probabilities to put on lattice arcs.
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[command(flatten)]
    penalties: PenaltyArgs,
    #[arg(long = "out", value_enum, default_value = "json")]
    format: GraphFormat,
    /// Write to this path instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct LossArgs {
    #[arg(long, value_parser = parse_criterion)]
    criterion: Criterion,
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    tokens: String,
    #[command(flatten)]
    penalties: PenaltyArgs,
    /// Include the gradient with respect to the logits.
    #[arg(long)]
    grad: bool,
    /// Also compute the loss by explicit path enumeration.
    #[arg(long)]
    oracle: bool,
}

#[derive(clap::Args)]
struct CorruptArgs {
    /// JSONL input, one {"id", "tokens"} object per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    kind: CorruptionKind,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vocabulary size (blank included).
    #[arg(long)]
    vocab_size: usize,
}

#[derive(clap::Args)]
struct ScoreArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    hypothesis: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// ExperimentConfig as JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SweepArgs {
    /// Base ExperimentConfig; criterion and corruption kind/rate are overridden per cell.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL output path; rows are appended and flushed one at a time.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Skip cells already present in the output file.
    #[arg(long, requires = "output")]
    resume: bool,
    #[arg(long, value_delimiter = ',', value_parser = parse_criterion)]
    criteria: Option<Vec<Criterion>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    kinds: Option<Vec<CorruptionKind>>,
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<CorruptionKind, String> {
    s.parse()
}

fn parse_tokens(s: &str) -> Result<Transcript> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Transcript::default());
    }
    s.split(',')
        .map(|t| t.trim().parse::<TokenId>().with_context(|| format!("invalid token id '{t}'")))
        .collect::<Result<Vec<_>>>()
        .map(Transcript::new)
}

fn read_tensor(path: &Path) -> Result<TensorFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TensorFile::from_json(&text)?)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn cmd_graph(args: &GraphArgs) -> Result<()> {
    let y = parse_tokens(&args.tokens)?;
    let tensor = args.tensor.as_deref().map(read_tensor).transpose()?;
    let vocab_size = match (args.vocab_size, &tensor) {
        (Some(v), _) => v,
        (None, Some(t)) => t.vocab,
        (None, None) => (y.iter().copied().max().unwrap_or(1) as usize + 1).max(2),
    };
    let vocab = Vocab::new(vocab_size)?;
    let penalties = args.penalties.config()?;

    let lattice_input = || -> Result<LogProbTensor> {
        match &tensor {
            Some(t) => {
                if let Some(f) = args.frames {
                    if f != t.frames {
                        bail!("--frames {f} disagrees with tensor T = {}", t.frames);
                    }
                }
                Ok(t.to_log_probs()?)
            }
            None => {
                let frames = args.frames.ok_or_else(|| anyhow!("lattices need --frames or --tensor"))?;
                if frames == 0 {
                    bail!("--frames must be at least 1");
                }
                Ok(LogProbTensor::uniform(frames, y.len() + 1, vocab.size()))
            }
        }
    };

    let g: Wfst = match args.graph_type {
        GraphType::Transcript => build_transcript_graph(&vocab, &y)?,
        GraphType::WsTranscript => build_ws_transcript_graph(&vocab, &y, &penalties)?,
        GraphType::Rnnt => build_rnnt_lattice(&vocab, &y, &lattice_input()?)?,
        GraphType::Wst => build_wst_lattice(&vocab, &y, &lattice_input()?, &penalties)?,
    };
    let mut text = match args.format {
        GraphFormat::Dot => g.to_dot(),
        GraphFormat::Json => g.to_json(),
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    write_output(args.output.as_deref(), &text)
}

#[derive(Serialize)]
struct LossReport {
    loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_discrepancy: Option<f64>,
}

fn cmd_loss(args: &LossArgs) -> Result<()> {
    let tensor = read_tensor(&args.tensor)?;
    let y = parse_tokens(&args.tokens)?;
    if y.len() != tensor.transcript_len {
        bail!(
            "shape mismatch: transcript has {} tokens but tensor U = {}",
            y.len(),
            tensor.transcript_len
        );
    }
    let logits = tensor.to_logits()?;
    let penalties = args.penalties.config()?;
    let out = loss(&logits, &y, args.criterion, &penalties)?;
    let oracle_loss = if args.oracle {
        Some(brute_force_loss(&logits, &y, args.criterion, &penalties)?)
    } else {
        None
    };
    let report = LossReport {
        loss: out.loss,
        grad: args.grad.then(|| out.grad.as_slice().to_vec()),
        oracle_loss,
        oracle_discrepancy: oracle_loss.map(|o| (o - out.loss).abs()),
    };
    write_output(None, &format!("{}\n", serde_json::to_string(&report)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: Value,
    tokens: Vec<TokenId>,
}

fn read_jsonl(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: malformed record", path.display(), n + 1))?;
        records.push(r);
    }
    Ok(records)
}

fn cmd_corrupt(args: &CorruptArgs) -> Result<()> {
    let vocab = Vocab::new(args.vocab_size)?;
    let spec = CorruptionSpec::new(args.kind, args.rate, args.seed)?;
    let records = read_jsonl(&args.input)?;
    let clean: Vec<Transcript> = records
        .iter()
        .map(|r| {
            let y = Transcript::new(r.tokens.clone());
            wst_core::vocab::validate_transcript(&vocab, &y)
                .with_context(|| format!("record {}", r.id))
                .map(|_| y)
        })
        .collect::<Result<_>>()?;
    let corrupted = corrupt_dataset(&vocab, &clean, &spec);
    let mut text = String::new();
    for (r, (y, _)) in records.iter().zip(corrupted) {
        let out = Record {
            id: r.id.clone(),
            tokens: y.into_inner(),
        };
        text.push_str(&serde_json::to_string(&out)?);
        text.push('\n');
    }
    write_output(args.output.as_deref(), &text)
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let refs = read_jsonl(&args.reference)?;
    let hyps = read_jsonl(&args.hypothesis)?;
    let mut by_id: HashMap<String, Transcript> = HashMap::new();
    for h in hyps {
        let key = h.id.to_string();
        if by_id.insert(key.clone(), Transcript::new(h.tokens)).is_some() {
            bail!("duplicate hypothesis id {key}");
        }
    }
    let mut pairs = Vec::with_capacity(refs.len());
    for r in &refs {
        let key = r.id.to_string();
        let h = by_id.remove(&key).ok_or_else(|| anyhow!("no hypothesis for id {key}"))?;
        pairs.push((Transcript::new(r.tokens.clone()), h));
    }
    if let Some(extra) = by_id.keys().next() {
        bail!("hypothesis id {extra} has no reference");
    }
    let report = corpus_wer(pairs.iter().map(|(r, h)| (r, h)));
    write_output(None, &format!("{}\n", serde_json::to_string(&report)?))
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = read_config(&args.config)?;
    let report = run_experiment(&config)?;
    write_output(args.output.as_deref(), &format!("{}\n", report.to_json()))
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let base = match &args.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    let defaults = SweepGrid::default();
    let grid = SweepGrid {
        criteria: args.criteria.clone().unwrap_or(defaults.criteria),
        kinds: args.kinds.clone().unwrap_or(defaults.kinds),
        rates: args.rates.clone().unwrap_or_else(|| SWEEP_RATES.to_vec()),
    };

    let done = if args.resume {
        let path = args.output.as_deref().expect("clap enforces --output with --resume");
        read_sweep_rows(path)?
    } else {
        Vec::new()
    };

    let mut sink: Box<dyn Write> = match &args.output {
        Some(p) => {
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .append(args.resume)
                .truncate(!args.resume)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?;
            Box::new(BufWriter::new(file))
        }
        None => Box::new(io::stdout().lock()),
    };
    sweep(&base, &grid, &done, |row| {
        writeln!(sink, "{}", serde_json::to_string(row).map_err(io::Error::other)?)?;
        sink.flush()
    })?;
    Ok(())
}

fn read_sweep_rows(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: SweepRow =
            serde_json::from_str(line).with_context(|| format!("{}:{}: malformed sweep row", path.display(), n + 1))?;
        if seen.insert(row.key()) {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Graph(a) => cmd_graph(a),
        Command::Loss(a) => cmd_loss(a),
        Command::Corrupt(a) => cmd_corrupt(a),
        Command::Score(a) => cmd_score(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
