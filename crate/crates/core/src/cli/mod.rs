//! The `cats` command line: train, predict, eval, analyze and synth.
//!
//! Every flag is also a key of a flat `key=value` [`RunConfig`]. A
//! `--config FILE` supplies keys first and flags override them. The
//! effective configuration is echoed into every artifact.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use log::info;

pub use config::{flag, value, Key, Kind, RunConfig};

use crate::corpus::{build_vocabs, generate_synthetic, read_conllu, write_conllu, write_conllu_annotated, Split, SynthConfig};
use crate::embeddings::{load_static_table, load_vector_store, ContextMode, ContextSpec, StaticTable, VectorStore};
use crate::error::{Error, Result};
use crate::evaluation::{analyze_errors, evaluate, EvalReport, Task};
use crate::model::{CatsModel, ModelConfig};
use crate::trainer::{train, DevMetric, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const TRAIN_KEYS: &[Key] = &[
    value("train", None, "training corpus (CoNLL-U)"),
    value("dev", None, "development corpus used for model selection"),
    value("embeddings", Some("zeros"), "context vectors: zeros, static, rnn or external"),
    value("vectors", None, "word vectors for static (required) or rnn (optional)"),
    value("ctx_vectors", None, "comma-separated CTXV1 files for external mode"),
    flag("joint", "also predict one label per word"),
    value("lambda", Some("0.2"), "weight of the segmentation loss in joint training"),
    flag("sentence_vector", "feed the sentence vector to the label head"),
    value("lr", Some("0.001"), "Adam learning rate"),
    value("batch_size", Some("128"), "sentences per batch"),
    value("epochs", None, "epochs (default: 40, or 20 for large corpora)"),
    value("seed", Some("1"), "seed for initialization and batch order"),
    value("save", None, "checkpoint path"),
    value("report", None, "training report path (default: <save>.report.tsv)"),
    value("d_char", Some("100"), "character embedding size"),
    value("d_enc", Some("256"), "encoder state size"),
    value("d_dec", Some("256"), "decoder state size"),
    value("d_att", Some("128"), "attention size"),
    value("ctx_dim", Some("300"), "context width of the zeros mode"),
    value("token_dim", Some("300"), "width of the random token table for rnn without --vectors"),
    value("rnn_hidden", Some("100"), "hidden size of the sentence RNN"),
    value("char_encoder", Some("true"), "run the character encoder (false: context vector only)"),
    value("dev_metric", None, "seg_f1 or labeled_f1 (default depends on --joint)"),
    value("patience", None, "stop after this many epochs without improvement"),
    value("clip", Some("5"), "global gradient norm cap"),
    value("max_decode_factor", Some("3"), "decoding step cap: factor * length + slack"),
    value("max_decode_slack", Some("10"), "decoding step cap: factor * length + slack"),
    value("dropout", Some("0"), "drop probability on decoder states while training"),
];

const PREDICT_KEYS: &[Key] = &[
    value("model", None, "checkpoint written by train"),
    value("input", None, "CoNLL-U input; segments may be absent"),
    value("output", None, "output path (default: stdout)"),
    value("beam", None, "beam width (default: greedy)"),
    value("ctx_vectors", None, "comma-separated CTXV1 files for external models"),
];

const EVAL_KEYS: &[Key] = &[
    value("pred", None, "predicted CoNLL-U"),
    value("gold", None, "gold CoNLL-U"),
    value("task", Some("seg"), "seg, pos, dep or ner"),
    value("format", Some("text"), "text, kv or tsv"),
];

const ANALYZE_KEYS: &[Key] = &[
    value("pred", None, "predicted CoNLL-U"),
    value("gold", None, "gold CoNLL-U"),
    value("sample", Some("100"), "sentences to sample"),
    value("seed", Some("1"), "sampling seed"),
];

const SYNTH_KEYS: &[Key] = &[
    value("out", None, "output corpus path"),
    value("manifest", None, "manifest path (default: <out>.manifest.tsv)"),
    value("n", Some("100"), "number of sentences"),
    value("seed", Some("1"), "generator seed"),
];

const COMMANDS: &[(&str, &str, &[Key])] = &[
    ("train", "Train a segmentation model", TRAIN_KEYS),
    ("predict", "Segment a corpus with a trained model", PREDICT_KEYS),
    ("eval", "Score predictions against gold annotation", EVAL_KEYS),
    ("analyze", "Classify segmentation errors on a sample of sentences", ANALYZE_KEYS),
    ("synth", "Generate a synthetic corpus with an ambiguity manifest", SYNTH_KEYS),
];

/// Failures split by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

pub fn command() -> Command {
    let mut root = Command::new("cats")
        .about("Contextualized token-to-word segmentation")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, keys) in COMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value settings; flags take precedence"),
        );
        for k in *keys {
            let mut arg = Arg::new(k.name).long(k.name.replace('_', "-"));
            arg = match k.kind {
                Kind::Flag => arg.action(ArgAction::SetTrue).help(k.help),
                Kind::Value => {
                    let help = match k.default {
                        Some(d) => format!("{} [default: {d}]", k.help),
                        None => k.help.to_string(),
                    };
                    arg.value_name("VALUE").help(help)
                }
            };
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve(name: &'static str, keys: &'static [Key], m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(name, keys);
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    for k in keys {
        match k.kind {
            Kind::Flag if m.get_flag(k.name) => cfg.set(k.name, "true")?,
            Kind::Value => {
                if let Some(v) = m.get_one::<String>(k.name) {
                    cfg.set(k.name, v.as_str())?;
                }
            }
            _ => {}
        }
    }
    Ok(cfg)
}

/// Runs the CLI on `args` (program name first); returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let (name, _, keys) = *COMMANDS.iter().find(|c| c.0 == name).expect("known subcommand");
    let result = resolve(name, keys, sub).map_err(usage).and_then(|cfg| match name {
        "train" => cmd_train(&cfg, out),
        "predict" => cmd_predict(&cfg, out),
        "eval" => cmd_eval(&cfg, out),
        "analyze" => cmd_analyze(&cfg, out),
        "synth" => cmd_synth(&cfg, out),
        _ => unreachable!(),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n");
            let help = command()
                .find_subcommand_mut(name)
                .map(|c| c.render_usage().to_string())
                .unwrap_or_default();
            let _ = writeln!(err, "{help}\n\nFor more information, try 'cats {name} --help'.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Worker threads for decoding, capped by `CATS_THREADS`.
pub fn threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("CATS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cap.min(available),
        _ => available,
    }
}

fn write_artifact(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// File-level comment block; the blank line after it keeps it out of the
/// first sentence.
fn conllu_header(cfg: &RunConfig) -> String {
    cfg.to_text()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| format!("# cats.{k} = {v}\n"))
        .collect()
}

fn paths(list: &str) -> Vec<PathBuf> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

fn load_stores(list: &str) -> Result<VectorStore> {
    let mut files = paths(list).into_iter();
    let first = files.next().ok_or_else(|| Error::invalid("no context vector files given"))?;
    let mut store = load_vector_store(&first)?;
    for p in files {
        store.merge(load_vector_store(&p)?)?;
    }
    Ok(store)
}

struct TrainPlan {
    train: PathBuf,
    dev: PathBuf,
    mode: ContextMode,
    vectors: Option<PathBuf>,
    ctx_vectors: Option<String>,
    ctx_dim: usize,
    token_dim: usize,
    rnn_hidden: usize,
    model: ModelConfig,
    trainer: TrainConfig,
    save: PathBuf,
    report: PathBuf,
}

fn train_plan(cfg: &RunConfig) -> Result<TrainPlan> {
    let mode: ContextMode = cfg.require("embeddings")?;
    let vectors: Option<PathBuf> = cfg.get("vectors")?;
    let ctx_vectors: Option<String> = cfg.get("ctx_vectors")?;
    match mode {
        ContextMode::Static if vectors.is_none() => {
            return Err(Error::Config("--embeddings static needs --vectors".into()))
        }
        ContextMode::External if ctx_vectors.is_none() => {
            return Err(Error::Config("--embeddings external needs --ctx-vectors".into()))
        }
        ContextMode::Zeros | ContextMode::External if vectors.is_some() => {
            return Err(Error::Config(format!("--vectors is not used with --embeddings {mode}")))
        }
        m if m != ContextMode::External && ctx_vectors.is_some() => {
            return Err(Error::Config(format!("--ctx-vectors is not used with --embeddings {m}")))
        }
        _ => {}
    }
    let joint = cfg.flag("joint");
    let model = ModelConfig {
        d_char: cfg.require("d_char")?,
        d_enc: cfg.require("d_enc")?,
        d_dec: cfg.require("d_dec")?,
        d_att: cfg.require("d_att")?,
        joint,
        use_sentence_vector: cfg.flag("sentence_vector"),
        char_encoder_enabled: cfg.require("char_encoder")?,
        max_decode_factor: cfg.require("max_decode_factor")?,
        max_decode_slack: cfg.require("max_decode_slack")?,
        dropout: cfg.require("dropout")?,
    };
    model.validate()?;
    let trainer = TrainConfig {
        learning_rate: cfg.require("lr")?,
        batch_size: cfg.require("batch_size")?,
        epochs: cfg.get("epochs")?,
        lambda: cfg.require("lambda")?,
        seed: cfg.require("seed")?,
        dev_metric: cfg.get::<DevMetric>("dev_metric")?,
        patience: cfg.get("patience")?,
        clip: cfg.require("clip")?,
        threads: threads(),
    };
    trainer.validate(joint)?;
    let save: PathBuf = cfg.require("save")?;
    let report = cfg.get("report")?.unwrap_or_else(|| {
        let mut p = save.clone().into_os_string();
        p.push(".report.tsv");
        PathBuf::from(p)
    });
    let plan = TrainPlan {
        train: cfg.require("train")?,
        dev: cfg.require("dev")?,
        mode,
        vectors,
        ctx_vectors,
        ctx_dim: cfg.require("ctx_dim")?,
        token_dim: cfg.require("token_dim")?,
        rnn_hidden: cfg.require("rnn_hidden")?,
        model,
        trainer,
        save,
        report,
    };
    if plan.ctx_dim == 0 || plan.token_dim == 0 || plan.rnn_hidden == 0 {
        return Err(Error::Config("context dimensions must be positive".into()));
    }
    Ok(plan)
}

fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let plan = train_plan(cfg).map_err(usage)?;
    let train_set = read_conllu(&plan.train, Split::Train)?;
    let dev_set = read_conllu(&plan.dev, Split::Dev)?;
    let (chars, labels) = build_vocabs(&train_set)?;
    let spec = match plan.mode {
        ContextMode::Zeros => ContextSpec::Zeros { dim: plan.ctx_dim },
        ContextMode::Static => ContextSpec::Static {
            table: load_static_table(plan.vectors.as_ref().expect("checked"))?,
        },
        ContextMode::Rnn => {
            let table = match &plan.vectors {
                Some(p) => load_static_table(p)?,
                None => {
                    let mut keys: Vec<&str> = train_set.tokens().map(|t| t.surface.as_str()).collect();
                    keys.sort_unstable();
                    keys.dedup();
                    StaticTable::random(keys, plan.token_dim, plan.trainer.seed)?
                }
            };
            ContextSpec::Rnn {
                table,
                hidden: plan.rnn_hidden,
            }
        }
        ContextMode::External => ContextSpec::External {
            store: load_stores(plan.ctx_vectors.as_deref().expect("checked"))?,
        },
    };
    info!(
        "training on {} sentences ({} tokens), dev {} sentences",
        train_set.len(),
        train_set.num_tokens(),
        dev_set.len()
    );
    let model = CatsModel::<f32>::new(plan.model.clone(), chars, labels, spec, plan.trainer.seed)?;
    let (best, report) = train(model, &train_set, &dev_set, &plan.trainer)?;
    let run_text = cfg.to_text();
    best.save(&plan.save, &run_text)?;
    let mut tsv = cfg.commented("# ");
    tsv.push_str(&report.to_tsv());
    write_artifact(&plan.report, tsv.as_bytes())?;
    info!("saved {} and {}", plan.save.display(), plan.report.display());
    emit(
        out,
        &format!(
            "{}best_epoch={}\n{}={:.4}\n",
            cfg.commented("# "),
            report.best_epoch,
            report.metric,
            report.best_metric
        ),
    )?;
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let model_path: PathBuf = cfg.require("model").map_err(usage)?;
    let input: PathBuf = cfg.require("input").map_err(usage)?;
    let output: Option<PathBuf> = cfg.get("output").map_err(usage)?;
    let beam: Option<usize> = cfg.get("beam").map_err(usage)?;
    if beam == Some(0) {
        return Err(Failure::Usage("--beam must be at least 1".into()));
    }
    let ctx_vectors: Option<String> = cfg.get("ctx_vectors").map_err(usage)?;

    let corpus = read_conllu(&input, Split::Test)?;
    let text = if corpus.is_empty() {
        String::new()
    } else {
        let (mut model, _) = CatsModel::<f32>::load(&model_path)?;
        match (model.provider().mode(), ctx_vectors) {
            (ContextMode::External, Some(list)) => model.set_vector_store(load_stores(&list)?)?,
            (ContextMode::External, None) => {
                return Err(Failure::Usage("this model needs --ctx-vectors".into()));
            }
            (mode, Some(_)) => {
                return Err(Failure::Usage(format!("--ctx-vectors is not used by a {mode} model")));
            }
            (_, None) => {}
        }
        let pred = model.predict_corpus(&corpus, beam, threads())?;
        if !pred.truncated.is_empty() {
            log::warn!("{} outputs hit the decoding step cap", pred.truncated.len());
        }
        let flagged = |list: &[(usize, usize)], s: usize| -> Option<String> {
            let ids: Vec<String> = list.iter().filter(|p| p.0 == s).map(|p| (p.1 + 1).to_string()).collect();
            (!ids.is_empty()).then(|| ids.join(","))
        };
        let body = write_conllu_annotated(&pred.corpus, |s| {
            let mut c = Vec::new();
            if let Some(ids) = flagged(&pred.truncated, s) {
                c.push(("truncated".to_string(), ids));
            }
            if let Some(ids) = flagged(&pred.empty, s) {
                c.push(("empty".to_string(), ids));
            }
            c
        });
        format!("{}\n{body}", conllu_header(cfg))
    };
    match output {
        Some(p) => write_artifact(&p, text.as_bytes())?,
        None => emit(out, &text)?,
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let pred_path: PathBuf = cfg.require("pred").map_err(usage)?;
    let gold_path: PathBuf = cfg.require("gold").map_err(usage)?;
    let task: Task = cfg.require("task").map_err(usage)?;
    let format: String = cfg.require("format").map_err(usage)?;
    if !["text", "kv", "tsv"].contains(&format.as_str()) {
        return Err(Failure::Usage(format!("unknown format {format:?}")));
    }
    let pred = read_conllu(&pred_path, Split::Test)?;
    let gold = read_conllu(&gold_path, Split::Test)?;
    let report = evaluate(task, &pred, &gold)?;
    let body = match format.as_str() {
        "kv" => report.to_kv(),
        "tsv" => format!("{}\n{}\n", EvalReport::tsv_header(), report.to_tsv_row()),
        _ => format!("{report}\n"),
    };
    emit(out, &format!("{}{body}", cfg.commented("# ")))?;
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let pred_path: PathBuf = cfg.require("pred").map_err(usage)?;
    let gold_path: PathBuf = cfg.require("gold").map_err(usage)?;
    let sample: usize = cfg.require("sample").map_err(usage)?;
    let seed: u64 = cfg.require("seed").map_err(usage)?;
    let pred = read_conllu(&pred_path, Split::Test)?;
    let gold = read_conllu(&gold_path, Split::Test)?;
    let breakdown = analyze_errors(&pred, &gold, sample, seed)?;
    emit(out, &format!("{}{breakdown}", cfg.commented("# ")))?;
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let path: PathBuf = cfg.require("out").map_err(usage)?;
    let n: usize = cfg.require("n").map_err(usage)?;
    let seed: u64 = cfg.require("seed").map_err(usage)?;
    let manifest = cfg.get::<PathBuf>("manifest").map_err(usage)?.unwrap_or_else(|| {
        let mut p = path.clone().into_os_string();
        p.push(".manifest.tsv");
        PathBuf::from(p)
    });
    let synth = generate_synthetic(SynthConfig { n_sentences: n, seed })?;
    let corpus_text = format!("{}\n{}", conllu_header(cfg), write_conllu(&synth.corpus));
    write_artifact(&path, corpus_text.as_bytes())?;
    let manifest_text = format!(
        "{}# sent_id\ttoken_idx\tambiguous\tgold_split\n{}",
        cfg.commented("# "),
        synth.manifest_tsv()
    );
    write_artifact(&manifest, manifest_text.as_bytes())?;
    let ambiguous = synth.ambiguous().count();
    emit(
        out,
        &format!(
            "{}sentences={}\ntokens={}\nambiguous_tokens={ambiguous}\n",
            cfg.commented("# "),
            synth.corpus.len(),
            synth.corpus.num_tokens()
        ),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests;
