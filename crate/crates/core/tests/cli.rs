use std::path::Path;
use std::process::{Command, Output};

use editor_core::decoder::DecodeTrace;

const EDITOR: &str = env!("CARGO_BIN_EXE_editor");

fn run(args: &[&str]) -> Output {
    Command::new(EDITOR).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn make_train_decode_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let task = d.join("task");
    let out = run(&[
        "make-task", "--task", "copy", "--out", p(&task), "--train", "40", "--valid", "8", "--test", "8", "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["train.src", "train.tgt", "valid.src", "valid.tgt", "test.src", "test.tgt", "vocab.src", "vocab.tgt"] {
        assert!(task.join(f).exists(), "{f}");
    }
    assert_eq!(lines(&task.join("train.src")).len(), 40);

    let conf = d.join("run.conf");
    std::fs::write(&conf, "d_model = 16\nd_ff = 32\nmax_steps = 4\neval_interval = 2\nbatch_size = 4\nL_max = 32\n").unwrap();
    let ckpt = d.join("model.ckpt");
    let out = run(&[
        "train",
        "--config", p(&conf),
        "--train-src", p(&task.join("train.src")),
        "--train-tgt", p(&task.join("train.tgt")),
        "--valid-src", p(&task.join("valid.src")),
        "--valid-tgt", p(&task.join("valid.tgt")),
        "--src-vocab", p(&task.join("vocab.src")),
        "--tgt-vocab", p(&task.join("vocab.tgt")),
        "--out", p(&ckpt),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());
    let metrics = lines(&d.join("model.ckpt.metrics"));
    assert_eq!(metrics.len(), 2, "{metrics:?}");

    let hyp = d.join("hyp.txt");
    let trace = d.join("hyp.trace");
    let out = run(&[
        "decode", "--ckpt", p(&ckpt), "--input", p(&task.join("test.src")), "--output", p(&hyp), "--trace", p(&trace),
        "--max-iters", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&hyp).len(), 8);
    let traces: Vec<_> = lines(&trace).iter().map(|l| DecodeTrace::parse_record(l).unwrap()).collect();
    assert!(traces.iter().all(|t| t.iterations >= 1 && t.iterations <= 3));

    let out = run(&["evaluate", "--hyp", p(&hyp), "--ref", p(&task.join("test.tgt")), "--trace", p(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["bleu\t", "ribes_s\t", "exact_match\t", "repositions\t"] {
        assert!(text.contains(key), "{key} missing from {text}");
    }

    // Hard constraints survive even an essentially untrained model.
    let cons = d.join("cons.txt");
    let first: Vec<String> = lines(&task.join("test.tgt"))
        .iter()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    std::fs::write(&cons, first.join("\n") + "\n").unwrap();
    let hard = d.join("hard.txt");
    let out = run(&[
        "decode", "--ckpt", p(&ckpt), "--input", p(&task.join("test.src")), "--output", p(&hard), "--constraints",
        p(&cons), "--hard",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["evaluate", "--hyp", p(&hard), "--ref", p(&task.join("test.tgt")), "--constraints", p(&cons), "--json"]);
    assert!(out.status.success());
    let json = String::from_utf8_lossy(&out.stdout);
    assert!(json.contains("\"cpr\":1.000000"), "{json}");
}

#[test]
fn oracle_check_passes() {
    let out = run(&["oracle-check", "--max-len", "2", "--vocab", "2", "--samples", "200"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("mismatches\t0"), "{text}");
    assert!(text.contains("round_trip_failures\t0"), "{text}");
}

#[test]
fn grad_check_exit_codes() {
    assert_eq!(run(&["grad-check", "--seed", "2"]).status.code(), Some(0));
    assert_eq!(run(&["grad-check", "--seed", "2", "--corrupt"]).status.code(), Some(1));
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let out = run(&[
        "decode", "--ckpt", p(&missing), "--input", p(&missing), "--output", p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));

    let out = run(&["decode", "--ckpt", "a", "--input", "b", "--output", "c", "--hard"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "warmup = 3\n").unwrap();
    let out = run(&[
        "train", "--config", p(&bad), "--train-src", "x", "--train-tgt", "x", "--valid-src", "x", "--valid-tgt", "x",
        "--out", "y",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup"));
}

#[test]
fn evaluate_rejects_misaligned_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    std::fs::write(&a, "x y\nz\n").unwrap();
    std::fs::write(&b, "x y\n").unwrap();
    let out = run(&["evaluate", "--hyp", p(&a), "--ref", p(&b)]);
    assert_eq!(out.status.code(), Some(2));
}
