use std::path::Path;

use tempfile::TempDir;

use super::*;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cats(args: &[&str]) -> Out {
    let mut o = Vec::new();
    let mut e = Vec::new();
    let code = run(std::iter::once("cats").chain(args.iter().copied()), &mut o, &mut e);
    Out {
        code,
        stdout: String::from_utf8(o).unwrap(),
        stderr: String::from_utf8(e).unwrap(),
    }
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn synth_file(dir: &TempDir, name: &str, n: &str, seed: &str) -> String {
    let path = p(dir, name);
    let r = cats(&["synth", "--out", &path, "--n", n, "--seed", seed]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    path
}

const TINY: &[&str] = &["--d-char", "4", "--d-enc", "4", "--d-dec", "6", "--d-att", "4", "--ctx-dim", "2"];

fn train_tiny(data: &str, save: &str, extra: &[&str]) -> Out {
    let mut args = vec!["train", "--train", data, "--dev", data, "--save", save, "--batch-size", "4"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    cats(&args)
}

fn read(path: &str) -> Vec<u8> {
    fs::read(Path::new(path)).unwrap()
}

#[test]
fn train_echoes_optimizer_defaults() {
    let dir = TempDir::new().unwrap();
    let data = synth_file(&dir, "d.conllu", "4", "1");
    let save = p(&dir, "m.ckpt");
    let r = train_tiny(&data, &save, &["--epochs", "0"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("# lr=0.001\n"), "{}", r.stdout);
    assert!(r.stdout.contains("# batch_size=4\n"));
    let report = String::from_utf8(read(&format!("{save}.report.tsv"))).unwrap();
    assert!(report.starts_with("# command=train\n"));
    let (_, run_text) = CatsModel::<f32>::load(&save).unwrap();
    assert!(run_text.contains("lr=0.001\n"));

    let r = cats(&["train", "--train", &data, "--dev", &data, "--save", &save, "--epochs", "0", "--d-char", "4"]);
    assert!(r.stdout.contains("# batch_size=128\n"), "{}", r.stdout);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let data = synth_file(&dir, "d.conllu", "2", "1");
    let save = p(&dir, "m.ckpt");
    let r = train_tiny(&data, &save, &["--embeddings", "external"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.stderr.contains("--ctx-vectors"), "{}", r.stderr);
    assert!(r.stderr.contains("Usage"));

    assert_eq!(cats(&["train", "--dev", &data, "--save", &save]).code, EXIT_USAGE);
    assert_eq!(train_tiny(&data, &save, &["--embeddings", "static"]).code, EXIT_USAGE);
    assert_eq!(train_tiny(&data, &save, &["--lr", "fast"]).code, EXIT_USAGE);
    assert_eq!(train_tiny(&data, &save, &["--joint", "--lambda", "1.5"]).code, EXIT_USAGE);
    assert_eq!(cats(&["train", "--no-such-flag"]).code, EXIT_USAGE);
    assert_eq!(cats(&[]).code, EXIT_USAGE);
    assert_eq!(cats(&["eval", "--pred", &data, "--gold", &data, "--task", "chunk"]).code, EXIT_USAGE);
    assert_eq!(cats(&["--help"]).code, EXIT_OK);
}

#[test]
fn runtime_failures_exit_one() {
    let dir = TempDir::new().unwrap();
    let missing = p(&dir, "missing.conllu");
    let r = train_tiny(&missing, &p(&dir, "m.ckpt"), &[]);
    assert_eq!(r.code, EXIT_FAILURE, "{}", r.stderr);
    let data = synth_file(&dir, "d.conllu", "2", "1");
    let r = cats(&["predict", "--model", &missing, "--input", &data]);
    assert_eq!(r.code, EXIT_FAILURE);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let conf = p(&dir, "run.cfg");
    fs::write(&conf, "# synthetic run\nn = 3\nseed=5\n").unwrap();
    let out = p(&dir, "s.conllu");
    let r = cats(&["synth", "--config", &conf, "--out", &out, "--seed", "6"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("# n=3\n# seed=6\n"), "{}", r.stdout);
    assert!(r.stdout.contains("sentences=3\n"));

    fs::write(&conf, "n=3\nlearning_rate=1\n").unwrap();
    let r = cats(&["synth", "--config", &conf, "--out", &out]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.stderr.contains("learning_rate"), "{}", r.stderr);
}

#[test]
fn synth_is_reproducible_and_parses_back() {
    let dir = TempDir::new().unwrap();
    let a = synth_file(&dir, "a.conllu", "100", "7");
    let b = synth_file(&dir, "b.conllu", "100", "7");
    let strip = |path: &str| {
        String::from_utf8(read(path))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("# cats.out") && !l.starts_with("# out=") && !l.starts_with("# cats.manifest"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&format!("{a}.manifest.tsv")), strip(&format!("{b}.manifest.tsv")));
    let corpus = read_conllu(&a, Split::Train).unwrap();
    assert_eq!(corpus.len(), 100);
    let manifest = String::from_utf8(read(&format!("{a}.manifest.tsv"))).unwrap();
    let rows = crate::corpus::SynthCorpus::parse_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), corpus.num_tokens());

    // Same invocation, same bytes.
    let before = read(&a);
    synth_file(&dir, "a.conllu", "100", "7");
    assert_eq!(before, read(&a));
}

#[test]
fn eval_and_analyze_on_identical_files() {
    let dir = TempDir::new().unwrap();
    let data = synth_file(&dir, "d.conllu", "20", "3");
    let r = cats(&["eval", "--pred", &data, "--gold", &data, "--task", "seg"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("F1 1.0000"), "{}", r.stdout);
    assert!(r.stdout.starts_with("# command=eval\n"));
    let r = cats(&["eval", "--pred", &data, "--gold", &data, "--format", "kv"]);
    assert!(r.stdout.contains("f1=1.0000") || r.stdout.contains("f1=1"), "{}", r.stdout);

    let r = cats(&["eval", "--pred", &data, "--gold", &data, "--task", "pos"]);
    assert!(r.stdout.contains("F1 1.0000"), "{}", r.stdout);
    // Synthetic data has no dependency annotation.
    let r = cats(&["eval", "--pred", &data, "--gold", &data, "--task", "dep"]);
    assert_eq!(r.code, EXIT_FAILURE);

    let r = cats(&["analyze", "--pred", &data, "--gold", &data, "--sample", "5"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("Under-seg. prefix\t0.0% (0)\n"), "{}", r.stdout);
}

#[test]
fn predict_writes_annotated_conllu() {
    let dir = TempDir::new().unwrap();
    let data = synth_file(&dir, "d.conllu", "6", "2");
    let save = p(&dir, "m.ckpt");
    assert_eq!(train_tiny(&data, &save, &["--epochs", "1"]).code, 0);

    let greedy = cats(&["predict", "--model", &save, "--input", &data]);
    assert_eq!(greedy.code, 0, "{}", greedy.stderr);
    assert!(greedy.stdout.starts_with("# cats.command = predict\n"));
    let pred = parse_conllu(&greedy.stdout);
    let gold = read_conllu(&data, Split::Test).unwrap();
    assert_eq!(pred.len(), gold.len());
    assert!(pred.sentences.iter().zip(&gold.sentences).all(|(a, b)| a.surfaces() == b.surfaces()));

    let beam1 = cats(&["predict", "--model", &save, "--input", &data, "--beam", "1"]);
    let body = |s: &str| s.lines().filter(|l| !l.starts_with("# cats.")).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&greedy.stdout), body(&beam1.stdout));

    let out = p(&dir, "pred.conllu");
    let r = cats(&["predict", "--model", &save, "--input", &data, "--output", &out]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.is_empty());
    assert_eq!(body(&String::from_utf8(read(&out)).unwrap()), body(&greedy.stdout));

    assert_eq!(cats(&["predict", "--model", &save, "--input", &data, "--beam", "0"]).code, EXIT_USAGE);
}

fn parse_conllu(text: &str) -> crate::corpus::Corpus {
    crate::corpus::parse_conllu(text, Split::Test).unwrap()
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = TempDir::new().unwrap();
    let empty = p(&dir, "empty.conllu");
    fs::write(&empty, "").unwrap();
    let out = p(&dir, "out.conllu");
    let r = cats(&["predict", "--model", &p(&dir, "never-read.ckpt"), "--input", &empty, "--output", &out]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(read(&out).is_empty());
}

#[test]
fn identical_training_runs_write_identical_checkpoints() {
    let dir = TempDir::new().unwrap();
    let data = synth_file(&dir, "d.conllu", "6", "4");
    let save = p(&dir, "m.ckpt");
    let args = ["--epochs", "2", "--seed", "9", "--embeddings", "rnn", "--token-dim", "3", "--rnn-hidden", "2"];
    assert_eq!(train_tiny(&data, &save, &args).code, 0);
    let first = read(&save);
    assert_eq!(train_tiny(&data, &save, &args).code, 0);
    assert_eq!(first, read(&save));
}
