use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use saliq::data::{synthetic, Source};
use saliq::harness::{RunManifest, CHECKPOINT_FILE, HISTORY_FILE, MANIFEST_FILE};
use saliq::model::{save_checkpoint, Architecture, BitConfig, CnnModel};

fn saliq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saliq"))
        .args(args)
        .env_remove("SALIQ_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_ok(out: &Output) {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

struct Fixture {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synthetic::write_corpus(&data, Source::Mnist, 48, 30, 1).unwrap();
    let out = tmp.path().join("out");
    Fixture { _tmp: tmp, data, out }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(f: &Fixture, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data-dir",
        s(&f.data),
        "--out",
        s(&f.out),
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--bits",
        "4,2",
        "--deterministic",
    ];
    args.extend_from_slice(extra);
    saliq(&args)
}

/// `accuracy=<value>` from the eval output.
fn accuracy(out: &Output) -> f64 {
    let text = stdout(out);
    let field = text.split_whitespace().find_map(|w| w.strip_prefix("accuracy=")).expect("accuracy field");
    field.parse().unwrap()
}

#[test]
fn deterministic_training_is_reproducible_and_evaluable() {
    let f = fixture();
    assert_ok(&train(&f, &["--run-id", "a"]));
    assert_ok(&train(&f, &["--run-id", "b"]));
    let (a, b) = (f.out.join("a"), f.out.join("b"));
    for name in [CHECKPOINT_FILE, HISTORY_FILE] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    for sub in ["curves", "saliency"] {
        assert!(a.join(sub).is_dir());
    }
    let manifest = RunManifest::load(&a).unwrap();
    manifest.verify(&a).unwrap();
    assert_eq!(manifest.metrics.epochs, 2);

    // the snapshot in the manifest reruns to the same bytes
    let snapshot = f.out.join("snapshot.json");
    let mut cfg = manifest.config.clone();
    cfg.run_id = Some("c".into());
    fs::write(&snapshot, cfg.to_json()).unwrap();
    assert_ok(&saliq(&["train", "--config", s(&snapshot)]));
    assert_eq!(fs::read(a.join(CHECKPOINT_FILE)).unwrap(), fs::read(f.out.join("c").join(CHECKPOINT_FILE)).unwrap());

    let ckpt = a.join(CHECKPOINT_FILE);
    let eval = saliq(&["eval", "--checkpoint", s(&ckpt), "--data-dir", s(&f.data)]);
    assert_ok(&eval);
    assert_eq!(accuracy(&eval), manifest.metrics.test_acc);

    // saliency images
    let sal_dir = f.out.join("sal");
    let out = saliq(&[
        "saliency", "--checkpoint", s(&ckpt), "--data-dir", s(&f.data), "--indices", "0,3", "--out", s(&sal_dir),
    ]);
    assert_ok(&out);
    assert_eq!(stdout(&out).lines().count(), 6);
    for i in [0, 3] {
        for kind in ["image", "saliency", "masked"] {
            let (w, h, px) = saliq::saliency::read_pgm(&sal_dir.join(format!("{kind}-{i}.pgm"))).unwrap();
            assert_eq!((w, h, px.len()), (28, 28, 784));
        }
    }
    let keep_all = f.out.join("sal0");
    let out = saliq(&[
        "saliency", "--checkpoint", s(&ckpt), "--data-dir", s(&f.data), "--threshold", "0", "--out", s(&keep_all),
    ]);
    assert_ok(&out);
    assert_eq!(fs::read(keep_all.join("masked-0.pgm")).unwrap(), fs::read(keep_all.join("image-0.pgm")).unwrap());

    // degradation for two models
    let curves = f.out.join("curves");
    let b_ckpt = b.join(CHECKPOINT_FILE);
    let out = saliq(&[
        "degrade",
        "--checkpoint",
        s(&ckpt),
        s(&b_ckpt),
        "--data-dir",
        s(&f.data),
        "--fractions",
        "0,0.5,1",
        "--out",
        s(&curves),
    ]);
    assert_ok(&out);
    for name in ["a.csv", "b.csv", "combined.csv"] {
        assert!(curves.join(name).is_file(), "{name}");
    }
    let csv = fs::read_to_string(curves.join("a.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("fraction,accuracy"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - manifest.metrics.test_acc).abs() < 5e-7);
    assert_eq!(lines.count(), 2);
    assert!(fs::read_to_string(curves.join("combined.csv")).unwrap().starts_with("fraction,a,b\n"));
}

#[test]
fn exit_codes() {
    let f = fixture();
    let missing = f.out.join("nowhere.saq");
    let out = saliq(&["eval", "--checkpoint", s(&missing), "--data-dir", s(&f.data)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint not found"));

    let empty = f.out.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = saliq(&["train", "--data-dir", s(&empty), "--out", s(&f.out), "--epochs", "1"]);
    assert_eq!(code(&out), 3);
    assert!(!f.out.join("mnist-regular-s0").join(MANIFEST_FILE).exists());

    let bad = f.out.join("bad.json");
    fs::write(&bad, r#"{"epochs": 1, "learning_rate": 0.1}"#).unwrap();
    assert_eq!(code(&saliq(&["train", "--config", s(&bad)])), 2);
    assert_eq!(code(&saliq(&["train", "--lr", "-1"])), 2);
    assert_eq!(code(&saliq(&["frobnicate"])), 2);

    let out = train(&f, &["--lr", "1e30", "--run-id", "boom"]);
    assert_eq!(code(&out), 4);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("non-finite loss at epoch 1, batch "), "{err}");
    assert!(!f.out.join("boom").join(MANIFEST_FILE).exists());
}

#[test]
fn flops_table() {
    let out = saliq(&["flops"]);
    assert_ok(&out);
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "config,conv1,conv2,fc1,fc2,total");
    assert_eq!(rows[1], "regular,225792,14450688,6422528,1280,21100288");
    assert_eq!(rows.len(), 5);
    let out = saliq(&["flops", "--bits", "2,2", "4,2"]);
    let text = stdout(&out);
    let totals: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(totals[1] - totals[0], 14_112.0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("total(regular)/total(2,2)"));
}

#[test]
fn zero_model_predicts_class_zero() {
    let f = fixture();
    let ckpt = f.out.join("zero.saq");
    fs::create_dir_all(&f.out).unwrap();
    let model = CnnModel::<f32>::zeros(Architecture::STANDARD, BitConfig::REGULAR);
    save_checkpoint(&model, 0, 0, &ckpt).unwrap();
    let out = saliq(&["eval", "--checkpoint", s(&ckpt), "--data-dir", s(&f.data)]);
    assert_ok(&out);
    let test = saliq::data::Dataset::load(&f.data, Source::Mnist, saliq::data::Split::Test).unwrap();
    assert_eq!(accuracy(&out), test.class_counts()[0] as f64 / test.len() as f64);
}
