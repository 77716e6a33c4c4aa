use std::path::Path;
use std::process::{Command, Output};

use earlyact::synth::{generate_corpus, read_dump, CorpusConfig};

const SMALL: &[&str] = &[
    "--set",
    "corpus.train_per_class=2",
    "--set",
    "corpus.test_per_class=2",
    "--set",
    "train.epochs=1",
    "--set",
    "model.hidden=8",
    "--set",
    "model.diff_channels=4",
    "--set",
    "model.frame_channels=4",
    "--set",
    "model.out_channels=6,6",
    "--set",
    "model.diff2_channels=6",
];

fn earlyact(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_earlyact"))
        .arg("--deterministic")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_lists_subcommands() {
    let o = Command::new(env!("CARGO_BIN_EXE_earlyact")).arg("--help").output().unwrap();
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["gen", "train", "eval", "ablate", "sweep", "confusion", "gradcheck", "selftest"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = earlyact(dir.path(), &["gen", "--set", "corpus.nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus.nonsense"));
}

#[test]
fn gen_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = earlyact(dir.path(), &["gen", "--dump", "--seed", "4", "--set", "corpus.train_per_class=2", "--set", "corpus.test_per_class=1"]);
    ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("train clips 8, test clips 4"));
    assert!(stdout.contains("ceiling at 10/10: 1.0000"));

    let mut cfg = CorpusConfig::staircase(0.3, 4);
    cfg.train_per_class = 2;
    cfg.test_per_class = 1;
    let expected = generate_corpus(&cfg).unwrap();
    let mut f = std::fs::File::open(dir.path().join("train.bin")).unwrap();
    let train = read_dump(&mut f).unwrap();
    assert_eq!(train.len(), 8);
    for (a, b) in train.iter().zip(&expected.train) {
        assert_eq!(a.video.label, b.video.label);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.video.frames, b.video.frames);
    }
    assert!(dir.path().join("config.resolved").exists());
}

#[test]
fn train_then_eval_and_confusion_agree() {
    let dir = tempfile::tempdir().unwrap();
    let train_out = dir.path().join("train");
    ok(&earlyact(&train_out, &[&["train"], SMALL].concat()));
    let ckpt = train_out.join("model.ckpt");
    for f in ["model.ckpt", "history.csv", "accuracy.csv", "config.resolved"] {
        assert!(train_out.join(f).exists(), "{f} missing");
    }
    let eval_out = dir.path().join("eval");
    ok(&earlyact(&eval_out, &[&["eval", "--checkpoint", ckpt.to_str().unwrap()], SMALL].concat()));
    let a = std::fs::read_to_string(train_out.join("accuracy.csv")).unwrap();
    let b = std::fs::read_to_string(eval_out.join("accuracy.csv")).unwrap();
    assert_eq!(a, b);

    let conf_out = dir.path().join("confusion");
    ok(&earlyact(&conf_out, &[&["confusion", "--checkpoint", ckpt.to_str().unwrap(), "--k", "10"], SMALL].concat()));
    let csv = std::fs::read_to_string(conf_out.join("confusion.csv")).unwrap();
    assert!(!csv.is_empty());

    let bad = earlyact(&conf_out, &[&["confusion", "--checkpoint", ckpt.to_str().unwrap(), "--k", "11"], SMALL].concat());
    assert!(!bad.status.success());
}

#[test]
fn eval_rejects_a_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"garbage").unwrap();
    let o = earlyact(dir.path(), &["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = earlyact(dir.path(), &["selftest"]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains(" 0 failed"));
}
