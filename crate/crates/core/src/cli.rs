//! The `nic` command line.
//!
//! Every subcommand that writes a file also writes `<file>.manifest.json`
//! recording the command, resolved flags, seed and SHA-256 of each input
//! and output. Output sent to stdout gets a manifest only with `--manifest`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{
    load_dataset, load_feature_records, synth_dataset, tokenize, write_dataset, CaptionDataset,
    SynthConfig, Vocabulary, DEFAULT_MIN_COUNT,
};
use crate::embedding::nearest_neighbors;
use crate::inference::{
    decode, DecodeConfig, DecodeMode, Ensemble, DEFAULT_BEAM_WIDTH, DEFAULT_MAX_LEN,
};
use crate::metrics::{
    corpus_bleu, human_baseline_bleu, median_rank, perplexity, recall_at_k, retrieval_scores,
    Direction, EvalPair, ScoreMatrix, ScoreNorm, Smoothing,
};
use crate::model::{load_checkpoint, save_checkpoint, Dims, Parameters};
use crate::numerics::Rng;
use crate::training::{examples_from_dataset, train_with_observer, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "nic",
    about = "Train, run and evaluate LSTM image-caption models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic captioned dataset.
    Synth(SynthArgs),
    /// Train a model with SGD and write a checkpoint, vocabulary and loss log.
    Train(TrainArgs),
    /// Generate captions for feature vectors.
    Caption(CaptionArgs),
    /// Decode a captioned dataset and report BLEU and perplexity.
    Evaluate(EvaluateArgs),
    /// Rank captions given images and images given captions.
    Rank(RankArgs),
    /// Nearest neighbours of a word in the embedding space.
    Neighbors(NeighborsArgs),
    /// Leave-one-out BLEU of five human references per image.
    HumanBaseline(HumanBaselineArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    images: usize,
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    /// Number of distinct caption words.
    #[arg(long, default_value_t = 17)]
    words: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 7)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    min_captions: usize,
    #[arg(long, default_value_t = 5)]
    max_captions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 512)]
    hidden: usize,
    #[arg(long, default_value_t = 512)]
    embed: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Global-norm gradient clip; off when absent.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: usize,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    #[arg(long)]
    no_shuffle: bool,
    /// Use an existing vocabulary instead of building one from the data.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path; the vocabulary and loss log are written next to it
    /// with `.vocab` and `.log` extensions.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Beam,
    Greedy,
    Sample,
}

impl From<ModeArg> for DecodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Beam => DecodeMode::Beam,
            ModeArg::Greedy => DecodeMode::Greedy,
            ModeArg::Sample => DecodeMode::Sample,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    /// Checkpoint; repeat to decode with an ensemble.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Vocabulary file; defaults to the first model path with a `.vocab`
    /// extension.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DecodeArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Beam)]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DecodeArgs {
    fn config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_width: self.beam,
            max_len: self.max_len,
            mode: self.mode.into(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct OutputArgs {
    /// Write the primary output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest path when writing to stdout.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CaptionArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Print the N best beam hypotheses per image.
    #[arg(long, default_value_t = 1)]
    nbest: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    #[command(flatten)]
    decode: DecodeArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum NormArg {
    Raw,
    PerWord,
}

impl From<NormArg> for ScoreNorm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Raw => ScoreNorm::Raw,
            NormArg::PerWord => ScoreNorm::PerWord,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct RankArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = NormArg::PerWord)]
    annotation_norm: NormArg,
    #[arg(long, value_enum, default_value_t = NormArg::Raw)]
    search_norm: NormArg,
    /// Write both score matrices as JSON.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct NeighborsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    word: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct HumanBaselineArgs {
    /// Dataset whose records each carry exactly five captions.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    #[command(flatten)]
    output: OutputArgs,
}

/// Score matrices written by `rank --scores`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RankScores {
    pub annotation: ScoreMatrix,
    pub search: ScoreMatrix,
}

/// Recall cut-offs reported by `rank`; clamped to the candidate count.
pub const RANK_CUTOFFS: [usize; 3] = [1, 5, 10];

#[derive(Serialize)]
struct FileDigest {
    role: String,
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(files: &[(&str, &Path)]) -> Result<Vec<FileDigest>> {
    files
        .iter()
        .map(|(role, path)| {
            Ok(FileDigest {
                role: role.to_string(),
                path: path.to_path_buf(),
                sha256: sha256_file(path)?,
            })
        })
        .collect()
}

fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest<C: Serialize>(
    path: &Path,
    command: &str,
    config: &C,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
    outputs: &[(&str, &Path)],
) -> Result<()> {
    let manifest = Manifest {
        command,
        config,
        seed,
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
    };
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `text` to `--out` or stdout, then the manifest.
fn emit<C: Serialize>(
    output: &OutputArgs,
    text: &str,
    command: &str,
    config: &C,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
) -> Result<()> {
    match &output.out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
            let manifest = output
                .manifest
                .clone()
                .unwrap_or_else(|| manifest_path_for(path));
            write_manifest(
                &manifest,
                command,
                config,
                seed,
                inputs,
                &[("output", path)],
            )
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))?;
            match &output.manifest {
                Some(manifest) => write_manifest(manifest, command, config, seed, inputs, &[]),
                None => Ok(()),
            }
        }
    }
}

struct LoadedModels {
    vocab: Vocabulary,
    vocab_path: PathBuf,
    params: Vec<Parameters>,
}

impl LoadedModels {
    fn load(args: &ModelArgs) -> Result<Self> {
        let vocab_path = args
            .vocab
            .clone()
            .unwrap_or_else(|| args.models[0].with_extension("vocab"));
        let vocab = Vocabulary::read(&vocab_path)?;
        let params = args
            .models
            .iter()
            .map(|p| load_checkpoint(p, &vocab))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedModels {
            vocab,
            vocab_path,
            params,
        })
    }

    fn ensemble(&self) -> Result<Ensemble<'_>> {
        Ensemble::new(self.params.iter().collect())
    }

    fn inputs<'a>(&'a self, args: &'a ModelArgs) -> Vec<(&'a str, &'a Path)> {
        let mut inputs: Vec<(&str, &Path)> =
            args.models.iter().map(|m| ("model", m.as_path())).collect();
        inputs.push(("vocab", self.vocab_path.as_path()));
        inputs
    }
}

fn check_feature_dim(dataset: &CaptionDataset, ensemble_params: &[Parameters]) -> Result<()> {
    let expected = ensemble_params[0].dims().feature_dim;
    if dataset.feature_dim != expected {
        return Err(Error::shape(
            "input features",
            expected,
            dataset.feature_dim,
        ));
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        num_images: args.images,
        feature_dim: args.feature_dim,
        vocab_words: args.words,
        sentence_len: (args.min_len, args.max_len),
        captions_per_image: (args.min_captions, args.max_captions),
    };
    let dataset = synth_dataset(&config, &mut Rng::new(args.seed))?;
    write_dataset(&args.out, &dataset)?;
    write_manifest(
        &manifest_path_for(&args.out),
        "synth",
        args,
        Some(args.seed),
        &[],
        &[("dataset", &args.out)],
    )
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let vocab = match &args.vocab {
        Some(path) => Vocabulary::read(path)?,
        None => Vocabulary::build(&dataset.tokenized_captions(), args.min_count)?,
    };
    let examples = examples_from_dataset(&dataset, &vocab);
    let dims = Dims {
        feature_dim: dataset.feature_dim,
        embed_dim: args.embed,
        hidden_dim: args.hidden,
        vocab_size: vocab.len(),
    };
    let config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        dropout_rate: args.dropout,
        grad_clip: args.clip,
        seed: args.seed,
        shuffle: !args.no_shuffle,
        init_scale: args.init_scale,
    };
    let mut log = String::new();
    let report = train_with_observer(&examples, dims, &config, |epoch, loss| {
        let _ = writeln!(log, "{epoch}\t{loss}");
    })?;

    let vocab_path = args.out.with_extension("vocab");
    let log_path = args.out.with_extension("log");
    save_checkpoint(&args.out, &report.params, vocab.hash())?;
    vocab.write(&vocab_path)?;
    fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
    eprintln!(
        "trained {} pairs for {} epochs in {:.2}s; final loss/word {:.6}",
        examples.len(),
        args.epochs,
        report.wall_seconds,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let mut inputs: Vec<(&str, &Path)> = vec![("data", &args.data)];
    if let Some(v) = &args.vocab {
        inputs.push(("vocab", v));
    }
    write_manifest(
        &manifest_path_for(&args.out),
        "train",
        args,
        Some(args.seed),
        &inputs,
        &[
            ("checkpoint", &args.out),
            ("vocab", &vocab_path),
            ("log", &log_path),
        ],
    )
}

fn caption_text(vocab: &Vocabulary, tokens: &[usize]) -> Result<String> {
    Ok(vocab.decode(tokens)?.join(" "))
}

fn cmd_caption(args: &CaptionArgs) -> Result<()> {
    let models = LoadedModels::load(&args.model)?;
    let ensemble = models.ensemble()?;
    let records = load_feature_records(&args.features)?;
    check_feature_dim(&records, &models.params)?;
    let config = args.decode.config();
    if args.nbest == 0
        || (args.nbest > 1 && (config.mode != DecodeMode::Beam || args.nbest > config.beam_width))
    {
        return Err(Error::InvalidConfig(
            "--nbest needs beam mode and nbest <= beam width".into(),
        ));
    }
    let mut rng = Rng::new(args.decode.seed);
    let mut out = String::new();
    for record in &records.records {
        let hyps = decode(&record.features, &ensemble, &config, &mut rng)?;
        if args.nbest == 1 {
            let _ = writeln!(
                out,
                "{}\t{}",
                record.image_id,
                caption_text(&models.vocab, &hyps[0].tokens)?
            );
        } else {
            for (rank, h) in hyps.iter().take(args.nbest).enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.6}\t{}",
                    record.image_id,
                    rank + 1,
                    h.log_prob,
                    caption_text(&models.vocab, &h.tokens)?
                );
            }
        }
    }
    let mut inputs = models.inputs(&args.model);
    inputs.push(("features", &args.features));
    emit(
        &args.output,
        &out,
        "caption",
        args,
        Some(args.decode.seed),
        &inputs,
    )
}

/// Metric report for `evaluate`: `key=value` lines.
fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let models = LoadedModels::load(&args.model)?;
    let ensemble = models.ensemble()?;
    let dataset = load_dataset(&args.data)?;
    check_feature_dim(&dataset, &models.params)?;
    let config = args.decode.config();
    let mut rng = Rng::new(args.decode.seed);
    let mut pairs = Vec::with_capacity(dataset.len());
    let mut total_log_prob = 0.0;
    let mut words = 0;
    for record in &dataset.records {
        let hyps = decode(&record.features, &ensemble, &config, &mut rng)?;
        let references: Vec<Vec<String>> = record.captions.iter().map(|c| tokenize(c)).collect();
        for reference in &references {
            let tokens = models.vocab.encode(reference);
            total_log_prob += ensemble.score(&record.features, &tokens)?;
            words += tokens.len() - 1;
        }
        pairs.push(EvalPair::new(
            models.vocab.decode(&hyps[0].tokens)?,
            references,
        ));
    }
    let mut out = String::new();
    for n in 1..=args.max_n {
        let score = corpus_bleu(&pairs, n, Smoothing::None)?.score;
        let _ = writeln!(out, "bleu{n}={score:.6}");
    }
    let _ = writeln!(out, "perplexity={:.6}", perplexity(total_log_prob, words)?);
    let _ = writeln!(out, "images={}", dataset.len());
    let _ = writeln!(out, "words={words}");
    let mut inputs = models.inputs(&args.model);
    inputs.push(("data", &args.data));
    emit(
        &args.output,
        &out,
        "evaluate",
        args,
        Some(args.decode.seed),
        &inputs,
    )
}

/// `r@k` and `medr` lines for one direction.
pub fn ranking_report(prefix: &str, scores: &ScoreMatrix) -> Result<String> {
    let mut out = String::new();
    for k in RANK_CUTOFFS {
        let r = recall_at_k(scores, k.min(scores.cols()))?;
        let _ = writeln!(out, "{prefix}.r@{k}={r:.6}");
    }
    let _ = writeln!(out, "{prefix}.medr={}", median_rank(scores)?);
    Ok(out)
}

fn cmd_rank(args: &RankArgs) -> Result<()> {
    let models = LoadedModels::load(&args.model)?;
    let ensemble = models.ensemble()?;
    let dataset = load_dataset(&args.data)?;
    check_feature_dim(&dataset, &models.params)?;
    let images: Vec<Vec<f64>> = dataset.records.iter().map(|r| r.features.clone()).collect();
    let mut captions = Vec::new();
    let mut owners = Vec::new();
    for (i, record) in dataset.records.iter().enumerate() {
        for c in &record.captions {
            captions.push(models.vocab.encode(&tokenize(c)));
            owners.push(i);
        }
    }
    let scores = RankScores {
        annotation: retrieval_scores(
            &ensemble,
            &images,
            &captions,
            &owners,
            Direction::Annotation,
            args.annotation_norm.into(),
        )?,
        search: retrieval_scores(
            &ensemble,
            &images,
            &captions,
            &owners,
            Direction::Search,
            args.search_norm.into(),
        )?,
    };
    let mut out = ranking_report("annotation", &scores.annotation)?;
    out.push_str(&ranking_report("search", &scores.search)?);
    if let Some(path) = &args.scores {
        let mut text =
            serde_json::to_string(&scores).map_err(|e| Error::InvalidInput(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    let mut inputs = models.inputs(&args.model);
    inputs.push(("data", &args.data));
    emit(&args.output, &out, "rank", args, None, &inputs)
}

fn cmd_neighbors(args: &NeighborsArgs) -> Result<()> {
    let models = LoadedModels::load(&args.model)?;
    let report = nearest_neighbors(&args.word, args.k, &models.params[0], &models.vocab)?;
    let inputs = models.inputs(&args.model);
    emit(
        &args.output,
        &report.to_string(),
        "neighbors",
        args,
        None,
        &inputs,
    )
}

fn cmd_human_baseline(args: &HumanBaselineArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let groups: Vec<Vec<Vec<String>>> = dataset
        .records
        .iter()
        .map(|r| r.captions.iter().map(|c| tokenize(c)).collect())
        .collect();
    let mut out = String::new();
    for n in 1..=args.max_n {
        let _ = writeln!(out, "bleu{n}={:.6}", human_baseline_bleu(&groups, n)?);
    }
    emit(
        &args.output,
        &out,
        "human-baseline",
        args,
        None,
        &[("data", &args.data)],
    )
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Caption(a) => cmd_caption(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Neighbors(a) => cmd_neighbors(a),
        Command::HumanBaseline(a) => cmd_human_baseline(a),
    }
}

/// Parse `argv` (program name first) and run. Returns the process exit
/// status: 0 on success, 1 on a runtime error, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
