//! End-to-end tests of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_npmixer"))
}

fn write_dataset(dir: &Path) {
    let mut csv = String::from("date,a,b,c\n");
    for t in 0..400 {
        let t = t as f64;
        csv.push_str(&format!(
            "t{t},{},{},{}\n",
            (t * 0.3).sin(),
            (t * 0.1).cos() * 2.0 + 1.0,
            (t * 0.7).sin() - 0.5
        ));
    }
    std::fs::write(dir.join("tiny.csv"), csv).unwrap();
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = "\
[model]
lookback = 24
horizon = 8
channels = 3
patch = 8
levels = 1
wavelet = db1
d_model = 8
d_ff = 8
e_layers = 1
dropout = 0.0
seed = 1

[train]
lr = 1e-3
batch = 64
max_epochs = 1
patience = 3

[data]
csv = tiny.csv
train = 300
val = 50
test = 50
";
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_eval_forecast_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let cfg = write_config(dir.path());
    let run_dir = dir.path().join("run");

    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--set", "train.lr=0.002", "--out"])
        .arg(&run_dir)
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("test_mse"), "{text}");
    for artifact in ["effective.cfg", "train_log.csv", "model.ckpt", "training.svg"] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
    // the override is reflected in the echoed effective config
    let echoed = std::fs::read_to_string(run_dir.join("effective.cfg")).unwrap();
    assert!(echoed.contains("lr = 0.002"), "{echoed}");
    let train_mse: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("test_mse "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();

    // eval on the test split reproduces the post-train metric bit-for-bit
    let ckpt = run_dir.join("model.ckpt");
    let out = bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--split", "test"])
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    let eval_text = stdout(&out);
    let eval_mse: f64 = eval_text
        .lines()
        .find_map(|l| l.strip_prefix("mse "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert_eq!(train_mse, eval_mse);
    // re-running eval is byte-identical
    let out2 = bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--split", "test"])
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.stdout, out2.stdout);

    // forecast renders SVG + CSV
    let svg = dir.path().join("fc.svg");
    let out = bin()
        .args(["forecast", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--window", "0", "--channel", "1", "--out"])
        .arg(&svg)
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "forecast failed: {}", stderr(&out));
    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert!(svg_text.starts_with("<svg") && svg_text.trim_end().ends_with("</svg>"));
    let fc_csv = std::fs::read_to_string(dir.path().join("fc.csv")).unwrap();
    assert_eq!(fc_csv.lines().count(), 9); // header + 8 horizon rows
    assert!(fc_csv.starts_with("step,ch0,ch1,ch2"));

    // inspect is deterministic and reports the same parameter count as train
    let ins = |args: &[&str]| {
        let mut c = bin();
        c.args(["inspect", "--config"]).arg(&cfg);
        c.args(args);
        c.env("NPMIXER_DATA_DIR", dir.path());
        c.output().unwrap()
    };
    let a = ins(&[]);
    let b = ins(&[]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let params_line = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("parameters:"))
            .unwrap()
            .to_string()
    };
    assert_eq!(params_line(&stdout(&a)), params_line(&text));
}

#[test]
fn missing_dataset_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path()); // dataset NOT written
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("tiny.csv"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "[model]\nwavelets = db2\n").unwrap();
    let out = bin()
        .args(["inspect", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("wavelets"), "{}", stderr(&out));
}

#[test]
fn corrupted_checkpoint_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let cfg = write_config(dir.path());
    let fake = dir.path().join("fake.ckpt");
    std::fs::write(&fake, b"XXXX not a checkpoint").unwrap();
    let out = bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&fake)
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
}

#[test]
fn ablate_runs_variants_and_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("abl");
    let out = bin()
        .args(["ablate", "--config"])
        .arg(&cfg)
        .args(["--variants", "full,no_swt", "--seeds", "1,2", "--out"])
        .arg(&out_dir)
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let table = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3); // header + 2 variants
    assert!(table.contains("full,") && table.contains("no_swt,"));
    assert!(table.lines().skip(1).all(|l| l.split(',').nth(2) == Some("2")));

    let out = bin()
        .args(["ablate", "--config"])
        .arg(&cfg)
        .args(["--variants", "full,full"])
        .arg("--out")
        .arg(&out_dir)
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("duplicate"), "{}", stderr(&out));

    let out = bin()
        .args(["ablate", "--config"])
        .arg(&cfg)
        .args(["--variants", "bogus"])
        .arg("--out")
        .arg(&out_dir)
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn divergent_training_exits_with_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let cfg = write_config(dir.path());
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--set", "train.lr=1e18", "--set", "train.max_epochs=5", "--out"])
        .arg(dir.path().join("run"))
        .env("NPMIXER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}
