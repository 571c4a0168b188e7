//! Command-line front end for the `ctccrf` engine.

mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

const EXIT_CODES: &str = "Exit codes:\n  0  success\n  1  usage error (unknown subcommand or flag, missing argument)\n  2  data or validation error (unreadable input, shape or vocabulary mismatch)";

#[derive(Debug, Parser)]
#[command(name = "ctccrf", version, about = "CTC and CTC-CRF training toolkit", after_help = EXIT_CODES)]
pub struct Cli {
    /// Seed for every randomized step of the subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration file; its schema depends on the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log-mel filterbank features from a PCM16 mono WAV file.
    Fbank(FbankArgs),
    /// Per-utterance mean and variance normalization of a feature file.
    Cmvn(InOut),
    /// Wordpiece or character tokenizer.
    #[command(subcommand)]
    Tokenizer(TokenizerCmd),
    /// Witten–Bell label n-gram models.
    #[command(subcommand)]
    Lm(LmCmd),
    /// CTC topology, numerator and denominator graphs.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Evaluate a sequence loss and its gradient on stored logits.
    #[command(subcommand)]
    Loss(LossCmd),
    /// Apply SpecAug to a feature file.
    Augment(AugmentArgs),
    /// Learning-rate schedule utilities.
    #[command(subcommand)]
    Sched(SchedCmd),
    /// Write a synthetic train/test corpus.
    Synth(SynthArgs),
    /// Train a Conformer from the JSON config given by --config.
    Train,
    /// Greedy-decode a feature file or corpus directory with a checkpoint.
    Decode(DecodeArgs),
    /// Token error rate of hypotheses against references.
    Score(ScoreArgs),
    /// Conformer model utilities.
    #[command(subcommand)]
    Nn(NnCmd),
}

#[derive(Debug, Args)]
pub struct InOut {
    #[arg(long = "in", alias = "input")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FbankArgs {
    #[command(flatten)]
    pub io: InOut,
    /// Normalize each dimension to zero mean and unit variance.
    #[arg(long)]
    pub cmvn: bool,
    /// Append delta and delta-delta features with this regression window.
    #[arg(long)]
    pub deltas: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCmd {
    /// Train a model from a whitespace-tokenized text corpus.
    Train {
        #[arg(long, alias = "in")]
        input: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value = "unigram")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of (iteration, candidates, log-likelihood).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Encode each line of text as piece ids.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", alias = "input")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode each line of piece ids back to text.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", alias = "input")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Word-to-ids map for every word of a corpus.
    Map {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", alias = "input")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct LabelInput {
    /// Text file with one label sequence per line.
    #[arg(long = "in", alias = "input")]
    pub input: PathBuf,
    /// Lines start with an utterance id that is not a label.
    #[arg(long)]
    pub utt_ids: bool,
}

#[derive(Debug, Subcommand)]
pub enum LmCmd {
    /// Estimate an ARPA model from label sequences.
    Train {
        #[command(flatten)]
        labels: LabelInput,
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Label inventory size; defaults to one past the largest label seen.
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Natural-log probability of each label sequence.
    Score {
        #[arg(long)]
        lm: PathBuf,
        #[command(flatten)]
        labels: LabelInput,
    },
    /// Parse an ARPA file and write it back in canonical form.
    Export {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compile an ARPA model into a text-format label acceptor.
    Compile {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum GraphCmd {
    /// CTC topology over labels 0..V.
    BuildTopo {
        #[arg(long)]
        vocab: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerator graph for one label sequence.
    BuildNum {
        #[arg(long)]
        vocab: usize,
        /// File holding the whitespace-separated label sequence.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Denominator graph: CTC topology composed with an ARPA label LM.
    BuildDen {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Size summary of a text-format graph.
    Info {
        #[arg(long = "in", alias = "input")]
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// T×(V+1) logits in the binary tensor format; blank is the last column.
    #[arg(long)]
    pub logits: PathBuf,
    /// File holding the whitespace-separated label sequence.
    #[arg(long)]
    pub labels: PathBuf,
    /// Write the T×(V+1) gradient here.
    #[arg(long)]
    pub grad_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LossCmd {
    Ctc(LossArgs),
    Crf {
        #[command(flatten)]
        common: LossArgs,
        /// Text-format denominator graph.
        #[arg(long)]
        den: PathBuf,
        /// ARPA label LM supplying the numerator term.
        #[arg(long)]
        lm: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub io: InOut,
    /// JSON policy; the default is the standard ratio policy.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SchedCmd {
    /// CSV of (step, lr) for steps 1..=K.
    Dump {
        #[arg(long)]
        steps: u64,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A feature file or a corpus directory.
    #[arg(long = "in", alias = "input")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum NnCmd {
    /// Parameter count of the model in --config.
    Info,
}

/// Bad invocation that clap cannot detect, such as a missing --config.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
