use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn nnperm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnperm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trained MLP and briefly trained MicroResNet shared by all tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let o = nnperm(&["train", "--model", "mlp", "--seed", "7", "--out", s(&root.join("mlp.ckpt"))]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = nnperm(&[
            "train",
            "--model",
            "micro-resnet",
            "--epochs",
            "2",
            "--out",
            s(&root.join("res.ckpt")),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::write(root.join("p100.bin"), (0..100u32).map(|i| (i * 37 % 256) as u8).collect::<Vec<_>>()).unwrap();
        Fixture { _dir: dir, root }
    })
}

fn tmp(name: &str) -> (tempfile::TempDir, PathBuf) {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join(name);
    (d, p)
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(nnperm(&["--help"]).status.code(), Some(0));
    assert_eq!(nnperm(&[]).status.code(), Some(1));
    let o = nnperm(&["train", "--model", "vgg", "--out", "x.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown model"), "{}", stderr(&o));
    let o = nnperm(&["prune", "--input", "missing.ckpt", "--out", "x", "--rate", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn training_is_deterministic_and_accurate() {
    let f = fixture();
    let (_d, again) = tmp("mlp2.ckpt");
    let o = nnperm(&["train", "--model", "mlp", "--seed", "7", "--out", s(&again)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(f.root.join("mlp.ckpt")).unwrap());
    let acc: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("test_accuracy: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc >= 0.9, "{acc}");
    assert!(again.with_extension("spec.toml").exists());
}

#[test]
fn lsb_roundtrip_and_clean_extract() {
    let f = fixture();
    let (_d, inf) = tmp("inf.ckpt");
    let got = inf.with_file_name("got.bin");
    let payload = f.root.join("p100.bin");
    let lsb = ["--scheme", "lsb", "--n-bits", "2"];
    let clean = f.root.join("mlp.ckpt");
    let mut a = vec!["embed", "--input", s(&clean), "--payload", s(&payload), "--out", s(&inf)];
    a.extend(lsb);
    assert_eq!(nnperm(&a).status.code(), Some(0));
    let mut a = vec!["extract", "--input", s(&inf), "--out", s(&got), "--truth", s(&payload)];
    a.extend(lsb);
    let o = nnperm(&a);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("recovered: true"));
    assert_eq!(std::fs::read(&got).unwrap(), std::fs::read(&payload).unwrap());

    let mut a = vec!["extract", "--input", s(&clean)];
    a.extend(lsb);
    let o = nnperm(&a);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("no payload detected"));
}

#[test]
fn capacity_errors_report_the_deficit() {
    let f = fixture();
    let (_d, out) = tmp("x.ckpt");
    // The MLP is far too small for a spread-spectrum payload.
    let o = nnperm(&["embed", "--input", s(&f.root.join("mlp.ckpt")), "--payload", s(&f.root.join("p100.bin")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("more bits needed"), "{}", stderr(&o));
    let o = nnperm(&["capacity", "--input", s(&f.root.join("res.ckpt"))]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("max_payload_bytes: 332"), "{}", stdout(&o));
}

#[test]
fn spread_payload_survives_nothing_but_permutation() {
    let f = fixture();
    let (_d, inf) = tmp("inf.ckpt");
    let dir = inf.parent().unwrap();
    let payload = f.root.join("p100.bin");
    let spec = f.root.join("res.spec.toml");
    assert!(nnperm(&["embed", "--input", s(&f.root.join("res.ckpt")), "--payload", s(&payload), "--out", s(&inf), "--seed", "4"]).status.success());
    let o = nnperm(&["extract", "--input", s(&inf), "--seed", "4", "--truth", s(&payload)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let perm = dir.join("perm.ckpt");
    let man = dir.join("man.toml");
    let o = nnperm(&["permute", "--input", s(&inf), "--spec", s(&spec), "--out", s(&perm), "--manifest", s(&man), "--fraction", "1.0", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = nnperm(&["extract", "--input", s(&perm), "--seed", "4", "--truth", s(&payload)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("recovered: false"));

    let o = nnperm(&["verify-equivalence", "--spec", s(&spec), "--original", s(&inf), "--defended", s(&perm), "--manifest", s(&man)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("max_abs_diff: 0e0"));

    // A manifest from another seed does not undo this permutation.
    let other = dir.join("other.toml");
    let o = nnperm(&["permute", "--input", s(&inf), "--spec", s(&spec), "--out", s(&dir.join("o.ckpt")), "--manifest", s(&other), "--seed", "10"]);
    assert!(o.status.success());
    let o = nnperm(&["verify-equivalence", "--spec", s(&spec), "--original", s(&inf), "--defended", s(&perm), "--manifest", s(&other)]);
    assert_eq!(o.status.code(), Some(2));

    let pruned = dir.join("pruned.ckpt");
    assert!(nnperm(&["prune", "--input", s(&inf), "--out", s(&pruned), "--rate", "0.25"]).status.success());
    let o = nnperm(&["extract", "--input", s(&pruned), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = nnperm(&["verify-equivalence", "--spec", s(&spec), "--original", s(&inf), "--defended", s(&pruned)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("equivalent: false"));
}

#[test]
fn permute_zero_is_byte_identical_and_prune_range() {
    let f = fixture();
    let (_d, out) = tmp("p0.ckpt");
    let input = f.root.join("res.ckpt");
    let o = nnperm(&["permute", "--input", s(&input), "--spec", s(&f.root.join("res.spec.toml")), "--out", s(&out), "--manifest", s(&out.with_extension("toml")), "--fraction", "0"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&input).unwrap());
    let o = nnperm(&["prune", "--input", s(&input), "--out", s(&out), "--rate", "1.0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[0, 1)"));
}

#[test]
fn cascade_needs_a_sequential_model() {
    let f = fixture();
    let (_d, out) = tmp("c.ckpt");
    let m = out.with_extension("toml");
    let o = nnperm(&["permute", "--cascade", "--input", s(&f.root.join("res.ckpt")), "--spec", s(&f.root.join("res.spec.toml")), "--out", s(&out), "--manifest", s(&m)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("residual"));
    let o = nnperm(&["permute", "--cascade", "--input", s(&f.root.join("mlp.ckpt")), "--spec", s(&f.root.join("mlp.spec.toml")), "--out", s(&out), "--manifest", s(&m)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("hooks: [5]"));
}

#[test]
fn retrain_reports_quotient() {
    let f = fixture();
    let (_d, out) = tmp("r.ckpt");
    let o = nnperm(&["retrain", "--input", s(&f.root.join("mlp.ckpt")), "--spec", s(&f.root.join("mlp.spec.toml")), "--out", s(&out), "--epochs", "1", "--lr", "0.01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy_quotient: "));
    let o = nnperm(&["retrain", "--input", s(&f.root.join("mlp.ckpt")), "--spec", s(&f.root.join("mlp.spec.toml")), "--out", s(&out), "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_deterministic_outputs() {
    let (_d, cfg) = tmp("cfg.toml");
    std::fs::write(
        &cfg,
        r#"
models = ["mlp"]
payload_sizes = [40]
seeds = [0, 1]

[scheme]
kind = "lsb"
n_bits = 1

[[defenses]]
kind = "shuffle"

[[defenses]]
kind = "prune"
rate = 0.0

[sweep]
model = "mlp"
payload_size = 40
fractions = [0.0, 1.0]
seeds = [0, 1]
"#,
    )
    .unwrap();
    let a = cfg.with_file_name("a");
    let b = cfg.with_file_name("b");
    for d in [&a, &b] {
        let o = nnperm(&["sweep", "--config", s(&cfg), "--out-dir", s(d)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["results.csv", "table1.md", "fig3.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let table = std::fs::read_to_string(a.join("table1.md")).unwrap();
    assert!(table.contains("| Weight Shuffling | 1.00 ✓ |"), "{table}");
    assert!(table.contains("| Pruning=0 | 1.00 |"), "{table}");
    let fig = std::fs::read_to_string(a.join("fig3.csv")).unwrap();
    assert!(fig.starts_with("fraction,seed,true_ber,recovered"));

    std::fs::write(&cfg, "models = [\"vgg\"]\npayload_sizes = [1]\nseeds = [0]\n[scheme]\nkind = \"lsb\"\n").unwrap();
    let o = nnperm(&["sweep", "--config", s(&cfg), "--out-dir", s(&a)]);
    assert_eq!(o.status.code(), Some(1));
}
