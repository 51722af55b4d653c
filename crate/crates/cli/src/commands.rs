use std::fs;
use std::io::{self, BufRead, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use charmt_core::checkpoint;
use charmt_core::corpus::{load_alignments, load_parallel, lowercase_transform, lowercase_word, CorpusLimits, ParallelCorpus, Vocab, VocabKind};
use charmt_core::diagnostics::gradcheck_suite;
use charmt_core::encoder::ProjectionMode;
use charmt_core::eval::{bleu, nearest_neighbors, Side};
use charmt_core::search::{word_beam_translate, SearchConfig};
use charmt_core::training::{train_layerwise, TrainEvent};
use charmt_core::{Error, Model, ModelConfig, ModelKind, Vocabs};

use crate::run_config::{Mode, RunConfig};
use crate::{data, usage, CliError, Command, ProviderArg, SideArg};

type CliResult<T = ()> = std::result::Result<T, CliError>;

const VOCAB_FILES: [&str; 4] = ["source.words", "target.words", "source.chars", "target.chars"];

/// Configuration problems are the caller's fault; everything else is data.
fn core(e: Error) -> CliError {
    match e {
        Error::Config(_) => usage(e),
        e => data(e),
    }
}

pub(crate) fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::BuildVocab { config } => build_vocab(&config),
        Command::Train { config } => train(&config),
        Command::Translate {
            checkpoint,
            input,
            output,
            beam_kw,
            beam_kc,
        } => translate(&checkpoint, input.as_deref(), output.as_deref(), beam_kw, beam_kc),
        Command::Evaluate {
            candidates,
            references,
            smoothing,
            lowercase,
        } => evaluate(&candidates, &references, smoothing, lowercase),
        Command::Neighbors {
            checkpoint,
            side,
            provider,
            k,
            words,
        } => neighbors(&checkpoint, side, provider, k, &words),
        Command::Gradcheck {
            config,
            samples,
            epsilon,
            seed,
        } => gradcheck(config.as_deref(), samples, epsilon, seed),
    }
}

fn load_run_config(path: &Path) -> CliResult<RunConfig> {
    RunConfig::load(path).map_err(usage)
}

fn limits(c: &ModelConfig) -> CorpusLimits {
    CorpusLimits {
        max_word_len: c.max_word_len,
        max_sent_len: c.max_sent_len,
    }
}

fn load_corpora(rc: &RunConfig) -> CliResult<(ParallelCorpus, ParallelCorpus)> {
    let lim = limits(&rc.model);
    let mut train = load_parallel(&rc.train_source, &rc.train_target, lim).map_err(core)?;
    if let Some(a) = &rc.alignments {
        train = load_alignments(a, train).map_err(core)?;
    }
    let mut dev = load_parallel(&rc.dev_source, &rc.dev_target, lim).map_err(core)?;
    if rc.mode == Mode::Word {
        train = lowercase_transform(train);
        dev = lowercase_transform(dev);
    }
    if train.is_empty() {
        return Err(data(anyhow!("{} is empty", rc.train_source.display())));
    }
    Ok((train, dev))
}

fn build_vocab(path: &Path) -> CliResult {
    let rc = load_run_config(path)?;
    let dir = rc
        .vocab_dir
        .clone()
        .ok_or_else(|| usage(anyhow!("{}: vocab_dir is not set", path.display())))?;
    let (train, _) = load_corpora(&rc)?;
    let v = Vocabs::build(&train, rc.model.min_count);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(data)?;
    let vocabs = [&v.source_words, &v.target_words, &v.source_chars, &v.target_chars];
    for (name, vocab) in VOCAB_FILES.iter().zip(vocabs) {
        vocab.write_file(&dir.join(name)).map_err(core)?;
        log::info!("{name}: {} entries", vocab.len());
    }
    Ok(())
}

fn read_vocabs(dir: &Path) -> CliResult<Vocabs> {
    let read = |name: &str, kind| Vocab::read_file(&dir.join(name), kind).map_err(core);
    Ok(Vocabs {
        source_words: read(VOCAB_FILES[0], VocabKind::Word)?,
        target_words: read(VOCAB_FILES[1], VocabKind::Word)?,
        source_chars: read(VOCAB_FILES[2], VocabKind::Char)?,
        target_chars: read(VOCAB_FILES[3], VocabKind::Char)?,
    })
}

fn train(path: &Path) -> CliResult {
    let rc = load_run_config(path)?;
    let (train, dev) = load_corpora(&rc)?;
    let vocabs = match &rc.vocab_dir {
        Some(dir) if dir.join(VOCAB_FILES[0]).is_file() => read_vocabs(dir)?,
        _ => Vocabs::build(&train, rc.model.min_count),
    };
    let mut model = Model::new(rc.model.clone(), ModelKind::from(rc.mode), vocabs).map_err(core)?;
    fs::create_dir_all(&rc.checkpoint_dir)
        .with_context(|| format!("creating {}", rc.checkpoint_dir.display()))
        .map_err(data)?;
    let best = rc.checkpoint_dir.join("best.ckpt");
    log::info!(
        "training {:?} model on {} pairs, {} parameters",
        rc.mode,
        train.len(),
        model.params.scalar_count()
    );
    let mut on_event = |ev: TrainEvent<'_>| -> charmt_core::Result<()> {
        match ev {
            TrainEvent::StageStarted(s) => log::info!("stage {s} started"),
            TrainEvent::Epoch(log) => log::info!("{log}"),
            TrainEvent::Improved { model, log } => {
                log::info!("new best dev BLEU {:.2}, saving {}", log.dev_bleu, best.display());
                checkpoint::save(model, &best)?;
            }
            TrainEvent::Distilled { .. } => {}
            TrainEvent::StageFinished { stage, epochs, best_bleu } => {
                log::info!("stage {stage} finished after {epochs} epochs, best dev BLEU {best_bleu:.2}")
            }
        }
        Ok(())
    };
    train_layerwise(&mut model, &train, &dev, &mut on_event).map_err(core)?;
    let last = rc.checkpoint_dir.join("final.ckpt");
    checkpoint::save(&model, &last).map_err(core)?;
    log::info!("wrote {}", last.display());
    Ok(())
}

/// Tokenizes one raw input line for translation. Never fails: overlong
/// words and sentences are cut to the model limits, whitespace runs are
/// collapsed, and word models see lowercased text.
pub fn prepare_line(line: &str, config: &ModelConfig, kind: ModelKind) -> (Vec<String>, bool) {
    let mut cut = false;
    let mut words: Vec<String> = line
        .split_whitespace()
        .map(|w| {
            let w = if kind == ModelKind::Word { lowercase_word(w) } else { w.to_string() };
            if w.chars().count() > config.max_word_len {
                cut = true;
                w.chars().take(config.max_word_len).collect()
            } else {
                w
            }
        })
        .collect();
    if words.len() > config.max_sent_len {
        cut = true;
        words.truncate(config.max_sent_len);
    }
    (words, cut)
}

fn translate(
    ckpt: &Path,
    input: Option<&Path>,
    output: Option<&Path>,
    beam_kw: Option<usize>,
    beam_kc: Option<usize>,
) -> CliResult {
    let model = checkpoint::load(ckpt).map_err(core)?;
    let mut cfg = SearchConfig::from_model_config(&model.config);
    if let Some(k) = beam_kw {
        cfg.k_w = k;
    }
    if let Some(k) = beam_kc {
        cfg.k_c = k;
    }
    if cfg.k_w == 0 || cfg.k_c == 0 {
        return Err(usage(anyhow!("beam widths must be at least 1")));
    }
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(io::BufReader::new(
            fs::File::open(p)
                .with_context(|| format!("opening {}", p.display()))
                .map_err(data)?,
        )),
        None => Box::new(io::BufReader::new(io::stdin())),
    };
    let mut writer: Box<dyn Write> = match output {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(data)?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    };
    for (i, line) in reader.split(b'\n').enumerate() {
        let bytes = line.context("reading input").map_err(data)?;
        let text = String::from_utf8_lossy(&bytes);
        let (words, cut) = prepare_line(text.trim_end_matches('\r'), &model.config, model.kind);
        if cut {
            log::warn!("line {}: input truncated to the model limits", i + 1);
        }
        let out = if words.is_empty() {
            String::new()
        } else {
            let t = word_beam_translate(&model, &words, &cfg).map_err(core)?;
            if t.truncated {
                log::warn!("line {}: output hit the length limit", i + 1);
            }
            t.words.join(" ")
        };
        writeln!(writer, "{out}").context("writing output").map_err(data)?;
    }
    writer.flush().context("writing output").map_err(data)?;
    Ok(())
}

fn read_sentences(path: &Path, lowercase: bool) -> CliResult<Vec<Vec<String>>> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data)?;
    Ok(text
        .lines()
        .map(|l| {
            l.split_whitespace()
                .map(|w| if lowercase { lowercase_word(w) } else { w.to_string() })
                .collect()
        })
        .collect())
}

fn evaluate(cands: &Path, refs: &Path, smoothing: bool, lowercase: bool) -> CliResult {
    let c = read_sentences(cands, lowercase)?;
    let r = read_sentences(refs, lowercase)?;
    let report = bleu(&c, &r, smoothing).map_err(core)?;
    let json = serde_json::to_string_pretty(&report).map_err(data)?;
    println!("{json}");
    Ok(())
}

fn neighbors(ckpt: &Path, side: SideArg, provider: ProviderArg, k: usize, words: &[String]) -> CliResult {
    let model = checkpoint::load(ckpt).map_err(core)?;
    let side = match side {
        SideArg::Source => Side::Source,
        SideArg::Target => Side::Target,
    };
    let mode = match provider {
        ProviderArg::Lookup => ProjectionMode::Lookup,
        ProviderArg::C2w => ProjectionMode::C2w,
    };
    for w in words {
        let w = if model.kind == ModelKind::Word { lowercase_word(w) } else { w.clone() };
        let found = nearest_neighbors(&model, side, mode, &w, k).map_err(usage)?;
        let list: Vec<String> = found.iter().map(|(n, s)| format!("{n} {s:.4}")).collect();
        println!("{w}\t{}", list.join("\t"));
    }
    Ok(())
}

/// Accepts either a full run config or a bare model config.
fn gradcheck_config(path: &Path) -> CliResult<ModelConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(usage)?;
    let model = match value.get("model") {
        Some(m) if value.get("mode").is_some() => m.clone(),
        _ => value,
    };
    let cfg: ModelConfig = serde_json::from_value(model)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(usage)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn gradcheck(config: Option<&Path>, samples: usize, epsilon: f64, seed: u64) -> CliResult {
    let cfg = match config {
        Some(p) => gradcheck_config(p)?,
        None => ModelConfig::default(),
    };
    if !(epsilon > 0.0) || samples == 0 {
        return Err(usage(anyhow!("epsilon and samples must be positive")));
    }
    let reports = gradcheck_suite(&cfg, epsilon, samples, seed).map_err(core)?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.max_relative_error < 1e-4 { "ok" } else { "FAIL" };
        println!(
            "{status:4} {:16} max_rel_err {:.3e} over {} entries",
            r.group, r.max_relative_error, r.checked
        );
        if status != "ok" {
            failed.push(r.group);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(data(anyhow!("gradient check failed for {}", failed.join(", "))))
    }
}
