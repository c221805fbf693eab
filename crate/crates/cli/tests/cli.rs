use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const CLASSES: [&str; 4] = ["angioectasia", "bleeding", "chylous", "lymphangiectasia"];

fn bifnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bifnet")).args(args).output().expect("spawn bifnet")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let out = bifnet(args);
    assert!(
        out.status.success(),
        "bifnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

struct Trained {
    _dir: TempDir,
    data: PathBuf,
    separate: PathBuf,
    merged: PathBuf,
}

impl Trained {
    fn models(&self) -> Vec<String> {
        CLASSES.iter().map(|c| s(&self.separate.join(format!("{c}.bfn"))).to_string()).collect()
    }
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        let separate = dir.path().join("separate");
        let merged = dir.path().join("merged");
        ok(&["synth", "--out", s(&data), "--per-class", "4", "--seed", "3"]);
        ok(&["train-separate", "--data-dir", s(&data), "--out", s(&separate), "--epochs", "1"]);
        let t = Trained {
            data,
            separate,
            merged,
            _dir: dir,
        };
        let models = t.models();
        let mut args = vec!["merge", "--data-dir", s(&t.data), "--out", s(&t.merged), "--epochs", "1", "--models"];
        args.extend(models.iter().map(String::as_str));
        ok(&args);
        t
    })
}

fn pnm_dims(path: &Path) -> (String, usize, usize) {
    let bytes = std::fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(64)]).to_string();
    let mut it = text.split_whitespace();
    let magic = it.next().unwrap().to_string();
    let w = it.next().unwrap().parse().unwrap();
    let h = it.next().unwrap().parse().unwrap();
    (magic, w, h)
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth", "--out", s(out), "--per-class", "2", "--seed", "11"]);
    }
    let mut files = Vec::new();
    for class in CLASSES {
        for sub in ["images", "masks"] {
            for entry in std::fs::read_dir(a.join(class).join(sub)).unwrap() {
                files.push(entry.unwrap().path().strip_prefix(&a).unwrap().to_path_buf());
            }
        }
    }
    assert_eq!(files.len(), 16);
    for f in files {
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn separate_training_writes_model_and_log_per_class() {
    let t = trained();
    for c in CLASSES {
        assert!(t.separate.join(format!("{c}.bfn")).is_file());
        let log = std::fs::read_to_string(t.separate.join(format!("{c}.log"))).unwrap();
        assert!(log.contains("heldout_patch_accuracy"), "{log}");
    }
    assert!(t.separate.join("effective_config.json").is_file());
}

#[test]
fn merge_logs_parameter_counts() {
    let log = std::fs::read_to_string(trained().merged.join("merged.log")).unwrap();
    assert!(log.contains("parameters merged 424912 separate 283352 standalone 566704"), "{log}");
}

#[test]
fn infer_writes_all_debug_maps_at_input_size() {
    let t = trained();
    let out = TempDir::new().unwrap();
    let image = t.data.join("bleeding/images/bleeding_000.ppm");
    let res = ok(&[
        "infer",
        "--model",
        s(&t.merged.join("merged.bfn")),
        "--image",
        s(&image),
        "--out",
        s(out.path()),
        "--debug-maps",
    ]);
    let (_, w, h) = pnm_dims(&image);
    let maps: Vec<PathBuf> = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    assert_eq!(maps.len(), 13);
    for m in &maps {
        assert_eq!(pnm_dims(m), ("P5".to_string(), w, h), "{}", m.display());
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["similarities"].as_array().unwrap().len(), 4);
    assert_eq!(report["class_names"].as_array().unwrap().len(), 4);
    let stdout: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(stdout, report);
}

#[test]
fn evaluate_writes_json_and_table() {
    let t = trained();
    let out = TempDir::new().unwrap();
    let models = t.models();
    let model = t.merged.join("merged.bfn");
    let mut args = vec!["evaluate", "--model", s(&model), "--data-dir", s(&t.data), "--out", s(out.path()), "--separate"];
    args.extend(models.iter().map(String::as_str));
    ok(&args);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("evaluation.json")).unwrap()).unwrap();
    assert!(json.is_object());
    let table = std::fs::read_to_string(out.path().join("evaluation.txt")).unwrap();
    for c in CLASSES {
        assert!(table.contains(c), "{table}");
    }
}

#[test]
fn unknown_class_is_a_usage_error() {
    let t = trained();
    let out = TempDir::new().unwrap();
    let res = bifnet(&[
        "train-separate",
        "--data-dir",
        s(&t.data),
        "--out",
        s(out.path()),
        "--class",
        "polyp",
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn missing_model_file_is_an_io_error() {
    let out = TempDir::new().unwrap();
    let res = bifnet(&[
        "infer",
        "--model",
        s(&out.path().join("absent.bfn")),
        "--image",
        s(&out.path().join("absent.ppm")),
        "--out",
        s(out.path()),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn corrupted_model_is_rejected() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let mut bytes = std::fs::read(t.merged.join("merged.bfn")).unwrap();
    let at = bytes.len() - 17;
    bytes[at] ^= 0x40;
    let model = dir.path().join("merged.bfn");
    std::fs::write(&model, bytes).unwrap();
    let image = t.data.join("chylous/images/chylous_000.ppm");
    let res = bifnet(&["infer", "--model", s(&model), "--image", s(&image), "--out", s(dir.path())]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn separate_network_is_not_a_merged_model() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let image = t.data.join("chylous/images/chylous_000.ppm");
    let model = t.separate.join("chylous.bfn");
    let res = bifnet(&["infer", "--model", s(&model), "--image", s(&image), "--out", s(dir.path())]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn diverging_training_is_a_numeric_error() {
    let t = trained();
    let out = TempDir::new().unwrap();
    let res = bifnet(&[
        "train-separate",
        "--data-dir",
        s(&t.data),
        "--out",
        s(out.path()),
        "--class",
        "bleeding",
        "--epochs",
        "3",
        "--lr",
        "1e12",
    ]);
    assert_eq!(code(&res), 4, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    let res = bifnet(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn config_file_and_flags_are_layered() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 9, "per_class": 1}"#).unwrap();
    let out = dir.path().join("d");
    ok(&["synth", "--config", s(&cfg), "--out", s(&out), "--seed", "10"]);
    let eff: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(eff["seed"], 10);
    assert_eq!(eff["per_class"], 1);
}

fn write_idx(dir: &Path, prefix: &str, n: usize, rng: &mut ChaCha8Rng) {
    let mut images = vec![0, 0, 8, 3];
    for v in [n as u32, 28, 28] {
        images.extend(v.to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend((n as u32).to_be_bytes());
    for i in 0..n {
        let digit = (i % 10) as u8;
        labels.push(digit);
        for p in 0..784 {
            let on = p % 10 == digit as usize;
            images.push(if on { 200 } else { rng.gen_range(0..40) });
        }
    }
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

#[test]
fn mnist_runs_on_tiny_idx_files() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("mnist");
    std::fs::create_dir(&data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    write_idx(&data, "train", 40, &mut rng);
    write_idx(&data, "t10k", 20, &mut rng);
    let out = dir.path().join("out");
    ok(&[
        "mnist",
        "--mode",
        "separate",
        "--data-dir",
        s(&data),
        "--out",
        s(&out),
        "--digits",
        "3",
        "--epochs",
        "1",
        "--lr",
        "0.01",
    ]);
    assert!(out.join("digit_3.bfn").is_file());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("mnist_separate.json")).unwrap()).unwrap();
    assert_eq!(report["train_samples"], 40);
    assert_eq!(report["digits"][0]["digit"], 3);
    let acc = report["min_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn mnist_with_missing_files_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let res = bifnet(&[
        "mnist",
        "--mode",
        "monolithic",
        "--data-dir",
        s(&dir.path().join("nowhere")),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(code(&res), 2);
}
