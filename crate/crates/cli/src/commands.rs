use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::json;

use ctccrf::augment::{spec_augment, SpecAugPolicy};
use ctccrf::features::{add_deltas, apply_cmvn, compute_fbank, FbankConfig, FeatureMatrix, Waveform};
use ctccrf::graphs::{build_ctc_topology, build_numerator, compose_denominator, WeightedFsa};
use ctccrf::labellm::{estimate_ngram, lm_to_fsa, NGramLabelLm};
use ctccrf::loss::{crf_loss, ctc_loss, LogProbMatrix, LossResult};
use ctccrf::nn::{load_checkpoint, param_count, ConformerConfig};
use ctccrf::schedule::{Scheduler, SchedulerConfig};
use ctccrf::synthdata::{build_corpus, load_corpus, save_corpus, CorpusSpec};
use ctccrf::tensorio::RawTensor;
use ctccrf::tokenizer::{
    build_word_map, count_words, train_char, train_unigram, TokenizerMode, TokenizerModel, UnigramTrainer,
};
use ctccrf::train::{greedy_decode, run_from_paths, token_error_rate, TrainConfig};

use crate::{
    Cli, Command, GraphCmd, LabelInput, LmCmd, LossArgs, LossCmd, NnCmd, SchedCmd, TokenizerCmd, UsageError,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fbank(a) => {
            let cfg: FbankConfig = config_or_default(cli)?;
            let wave = Waveform::read_wav(&a.io.input)?;
            let mut feat = compute_fbank(&wave, &cfg)?;
            if a.cmvn {
                feat = apply_cmvn(&feat)?;
            }
            if let Some(w) = a.deltas {
                feat = add_deltas(&feat, w);
            }
            feat.save(&a.io.out)?;
        }
        Command::Cmvn(io) => apply_cmvn(&FeatureMatrix::load(&io.input)?)?.save(&io.out)?,
        Command::Tokenizer(t) => tokenizer(t)?,
        Command::Lm(l) => lm(l)?,
        Command::Graph(g) => graph(g)?,
        Command::Loss(l) => loss(l)?,
        Command::Augment(a) => {
            let policy = match &a.policy {
                Some(p) => read_json(p)?,
                None => SpecAugPolicy::STANDARD,
            };
            let feat = FeatureMatrix::load(&a.io.input)?;
            spec_augment(&feat, &policy, cli.seed.unwrap_or(0))?.save(&a.io.out)?;
        }
        Command::Sched(SchedCmd::Dump { steps }) => {
            let cfg: SchedulerConfig = config_or_default(cli)?;
            let sched = Scheduler::new(cfg)?;
            let mut csv = String::from("step,lr\n");
            for (n, lr) in sched.dump(*steps) {
                csv.push_str(&format!("{n},{lr}\n"));
            }
            emit(None, &csv)?;
        }
        Command::Synth(a) => {
            let spec: CorpusSpec = config_or_default(cli)?;
            let corpus = build_corpus(&spec, cli.seed.unwrap_or(0))?;
            save_corpus(a.out.join("train"), &corpus.train)?;
            save_corpus(a.out.join("test"), &corpus.test)?;
            fs::write(a.out.join("grammar.json"), serde_json::to_string_pretty(&corpus.grammar)?)?;
        }
        Command::Train => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| UsageError("train requires --config".into()))?;
            let mut cfg: TrainConfig = read_json(path)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let report = run_from_paths(&cfg)?;
            println!(
                "{}",
                json!({
                    "epochs": report.epochs.len(),
                    "best_epoch": report.best_epoch,
                    "best_val_loss": report.best_val_loss,
                    "stopped_early": report.stopped_early,
                })
            );
        }
        Command::Decode(a) => {
            let model = load_checkpoint(&a.ckpt)?.model;
            let inputs = if a.input.is_dir() {
                load_corpus(&a.input)?
                    .into_iter()
                    .map(|u| (u.id, u.features))
                    .collect()
            } else {
                let id = a.input.file_stem().map_or("utt".into(), |s| s.to_string_lossy().into_owned());
                vec![(id, FeatureMatrix::load(&a.input)?)]
            };
            let mut text = String::new();
            for (id, feat) in inputs {
                let hyp = greedy_decode(&model, &feat).with_context(|| format!("decoding {id}"))?;
                text.push_str(&labelled_line(&id, &hyp));
            }
            emit(a.out.as_deref(), &text)?;
        }
        Command::Score(a) => {
            let hyps = read_labelled(&a.hyp)?;
            let refs = read_labelled(&a.reference)?;
            let mut paired = Vec::with_capacity(refs.len());
            for (id, r) in &refs {
                let h = hyps
                    .iter()
                    .find(|(hid, _)| hid == id)
                    .with_context(|| format!("no hypothesis for utterance {id}"))?;
                paired.push((h.1.clone(), r.clone()));
            }
            let (h, r): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
            let ter = token_error_rate(&h, &r)?;
            println!("{}", json!({ "ter": ter, "utterances": r.len() }));
        }
        Command::Nn(NnCmd::Info) => {
            let cfg = match &cli.config {
                Some(p) => model_config(p)?,
                None => ConformerConfig::default(),
            };
            cfg.validate()?;
            println!("{}", json!({ "parameters": param_count(&cfg) }));
        }
    }
    Ok(())
}

fn tokenizer(cmd: &TokenizerCmd) -> Result<()> {
    match cmd {
        TokenizerCmd::Train {
            input,
            size,
            mode,
            out,
            trace,
        } => {
            let mode: TokenizerMode = mode.parse().map_err(UsageError)?;
            let corpus = count_words(&read_text(input)?);
            let trainer = UnigramTrainer::new(*size);
            let model = match mode {
                TokenizerMode::Unigram => {
                    let (model, steps) = train_unigram(&corpus, &trainer)?;
                    if let Some(path) = trace {
                        let mut csv = String::from("iteration,candidates,log_likelihood\n");
                        for (i, (n, ll)) in steps.steps.iter().enumerate() {
                            csv.push_str(&format!("{},{n},{ll}\n", i + 1));
                        }
                        fs::write(path, csv)?;
                    }
                    model
                }
                TokenizerMode::Char => train_char(&corpus, &trainer.reserved)?,
            };
            fs::write(out, model.to_tsv())?;
        }
        TokenizerCmd::Encode { model, input, out } => {
            let model = read_tokenizer(model)?;
            let mut text = String::new();
            for line in read_text(input)?.lines() {
                let mut ids = Vec::new();
                for word in line.split_whitespace() {
                    ids.extend(model.encode_word(word)?);
                }
                text.push_str(&join_ids(&ids));
                text.push('\n');
            }
            emit(out.as_deref(), &text)?;
        }
        TokenizerCmd::Decode { model, input, out } => {
            let model = read_tokenizer(model)?;
            let mut text = String::new();
            for (n, line) in read_text(input)?.lines().enumerate() {
                let ids = parse_ids(line).with_context(|| format!("line {}", n + 1))?;
                text.push_str(&model.decode_ids(&ids)?);
                text.push('\n');
            }
            emit(out.as_deref(), &text)?;
        }
        TokenizerCmd::Map { model, input, out } => {
            let model = read_tokenizer(model)?;
            let words: Vec<String> = count_words(&read_text(input)?).into_iter().map(|(w, _)| w).collect();
            emit(out.as_deref(), &build_word_map(&model, &words)?.to_tsv())?;
        }
    }
    Ok(())
}

fn lm(cmd: &LmCmd) -> Result<()> {
    match cmd {
        LmCmd::Train {
            labels,
            order,
            vocab,
            out,
        } => {
            let seqs = read_label_lines(labels)?;
            let vocab = vocab.unwrap_or_else(|| seqs.iter().flatten().max().map_or(0, |&m| m as usize + 1));
            fs::write(out, estimate_ngram(&seqs, *order, vocab)?.export_arpa())?;
        }
        LmCmd::Score { lm, labels } => {
            let model = read_lm(lm)?;
            let mut text = String::new();
            for (n, seq) in read_label_lines(labels)?.iter().enumerate() {
                let lp = model.score_sequence(seq).with_context(|| format!("sequence {}", n + 1))?;
                text.push_str(&format!("{lp}\n"));
            }
            emit(None, &text)?;
        }
        LmCmd::Export { lm, out } => emit(out.as_deref(), &read_lm(lm)?.export_arpa())?,
        LmCmd::Compile { lm, out } => emit(out.as_deref(), &lm_to_fsa(&read_lm(lm)?).to_text())?,
    }
    Ok(())
}

fn graph(cmd: &GraphCmd) -> Result<()> {
    match cmd {
        GraphCmd::BuildTopo { vocab, out } => emit(out.as_deref(), &build_ctc_topology(*vocab)?.to_text())?,
        GraphCmd::BuildNum { vocab, labels, out } => {
            let labels = parse_ids(&read_text(labels)?)?;
            emit(out.as_deref(), &build_numerator(&labels, *vocab)?.to_text())?;
        }
        GraphCmd::BuildDen { lm, out } => {
            let lm = read_lm(lm)?;
            let den = compose_denominator(&build_ctc_topology(lm.vocab_size())?, &lm_to_fsa(&lm))?;
            emit(out.as_deref(), &den.to_text())?;
        }
        GraphCmd::Info { input } => {
            let fsa = read_fsa(input)?;
            println!("{}", fsa.info());
        }
    }
    Ok(())
}

fn loss(cmd: &LossCmd) -> Result<()> {
    let (args, result) = match cmd {
        LossCmd::Ctc(a) => {
            let (scores, labels) = loss_inputs(a)?;
            (a, ctc_loss(&scores, &labels)?)
        }
        LossCmd::Crf { common, den, lm } => {
            let (scores, labels) = loss_inputs(common)?;
            let den = read_fsa(den)?;
            let lm = read_lm(lm)?;
            (common, crf_loss(&scores, &labels, &den, &lm)?)
        }
    };
    if let Some(path) = &args.grad_out {
        RawTensor::new(vec![result.frames, result.cols], result.grad.clone())?.save(path)?;
    }
    println!("{}", loss_summary(&result));
    Ok(())
}

fn loss_inputs(a: &LossArgs) -> Result<(LogProbMatrix, Vec<u32>)> {
    let raw = RawTensor::load(&a.logits)?;
    let (t, cols) = raw.matrix_shape()?;
    let scores = LogProbMatrix::from_logits(t, cols, &raw.data)?;
    Ok((scores, parse_ids(&read_text(&a.labels)?)?))
}

/// Loss plus two gradient checksums: the plain sum (−T for CTC, 0 for
/// CTC-CRF) and the L2 norm.
fn loss_summary(r: &LossResult) -> serde_json::Value {
    let sum: f64 = r.grad.iter().sum();
    let l2 = r.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    json!({ "loss": r.loss, "grad_sum": sum, "grad_l2": l2, "frames": r.frames })
}

fn config_or_default<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T> {
    cli.config.as_ref().map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts either a bare model config or a training config with a `model` field.
fn model_config(path: &Path) -> Result<ConformerConfig> {
    let text = read_text(path)?;
    serde_json::from_str::<ConformerConfig>(&text)
        .or_else(|_| serde_json::from_str::<TrainConfig>(&text).map(|c| c.model))
        .with_context(|| format!("{} is neither a model nor a training config", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_tokenizer(path: &Path) -> Result<TokenizerModel> {
    TokenizerModel::from_tsv(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn read_lm(path: &Path) -> Result<NGramLabelLm> {
    NGramLabelLm::import_arpa(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn read_fsa(path: &Path) -> Result<WeightedFsa> {
    WeightedFsa::from_text(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn parse_ids(text: &str) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|t| t.parse::<u32>().with_context(|| format!("bad label {t:?}")))
        .collect()
}

fn read_label_lines(input: &LabelInput) -> Result<Vec<Vec<u32>>> {
    let text = read_text(&input.input)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let body = if input.utt_ids {
            line.trim_start().split_once(char::is_whitespace).map_or("", |(_, rest)| rest)
        } else {
            line
        };
        out.push(parse_ids(body).with_context(|| format!("{} line {}", input.input.display(), n + 1))?);
    }
    Ok(out)
}

/// `id l1 l2 …` lines, as written by `decode` and by the corpus writer.
fn read_labelled(path: &Path) -> Result<Vec<(String, Vec<u32>)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut fields = line.split_whitespace();
        let id = fields.next().unwrap_or_default().to_string();
        let rest: Vec<&str> = fields.collect();
        let ids = parse_ids(&rest.join(" ")).with_context(|| format!("{} line {}", path.display(), n + 1))?;
        if out.iter().any(|(other, _): &(String, Vec<u32>)| *other == id) {
            bail!("{}: duplicate utterance id {id}", path.display());
        }
        out.push((id, ids));
    }
    Ok(out)
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn labelled_line(id: &str, ids: &[u32]) -> String {
    if ids.is_empty() {
        format!("{id}\n")
    } else {
        format!("{id} {}\n", join_ids(ids))
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}
