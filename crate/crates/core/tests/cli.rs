use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sparseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparseg")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "data": {"phantom": {"dims": [24, 24, 24], "spacing": [4.0, 4.0, 4.0]}, "phantom_count": 10},
  "model": {"grid_proj_width": 4, "model_width": 8, "n_residual_blocks": 1, "n_encoder_layers": 1},
  "train": {"samples_per_image": 20, "batch_size": 8, "max_steps": 3, "eval_every": 2},
  "inference": {"batch": 16}
}"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, SMALL).unwrap();
    p
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn phantom_split_is_nine_to_one_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = sparseg(&["phantom", "--config", s(&cfg), "--count", "50", "--seed", "3", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("effective config"));
    }
    let m: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["train"].as_array().unwrap().len(), 45);
    assert_eq!(m["test"].as_array().unwrap().len(), 5);
    assert_eq!(files(&a), files(&b));

    let o = sparseg(&["phantom", "--config", s(&cfg), "--count", "1", "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&sparseg(&[])), 1);
    assert_eq!(code(&sparseg(&["segment", "--volume", "x.json"])), 1);
    assert_eq!(code(&sparseg(&["help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"model": {"depth": 3}}"#).unwrap();
    let o = sparseg(&["inspect", "--config", s(&bad), "--volume", "v.json", "--query", "0,0,0"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("depth"));
}

#[test]
fn inspect_constant_volume_gives_uniform_mosaic() {
    let dir = tempfile::tempdir().unwrap();
    let v = sparseg::volume::Volume::filled([40, 40, 40], [16.0; 3], 500.0).unwrap();
    let vp = dir.path().join("v.json");
    sparseg::volume::save_raw_file(&vp, &v).unwrap();
    let (p1, p2) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    for p in [&p1, &p2] {
        let o = sparseg(&["inspect", "--volume", s(&vp), "--query", "20,20,20", "--out", s(p)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bytes = fs::read(&p1).unwrap();
    assert_eq!(bytes, fs::read(&p2).unwrap());
    let header = b"P5\n81 81\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    let body = &bytes[header.len()..];
    assert_eq!(body.len(), 81 * 81);
    assert!(body.iter().all(|&b| b == body[0]));

    let o = sparseg(&["inspect", "--volume", s(&vp), "--query", "40,0,0", "--out", s(&p1)]);
    assert_eq!(code(&o), 2);
    let o = sparseg(&["inspect", "--volume", s(&dir.path().join("missing.json")), "--query", "0,0,0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_segment_eval_bench_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert_eq!(code(&sparseg(&["phantom", "--config", s(&cfg), "--out", s(&data)])), 0);

    let manifest = data.join("manifest.json");
    let o = sparseg(&["train", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![1, 2, 3]);

    let m: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    let case = &m["test"][0];
    let image = data.join(case["image"].as_str().unwrap());
    let labels = data.join(case["labels"].as_str().unwrap());
    let ckpt = run.join("model.ckpt");
    let seg = dir.path().join("seg.json");
    let o = sparseg(&[
        "segment", "--checkpoint", s(&ckpt), "--volume", s(&image), "--out", s(&seg), "--threads", "2",
        "--debug-writes",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pred = sparseg::volume::load_raw_labels_file(&seg).unwrap();
    assert_eq!(pred.spacing(), [2.0; 3]);
    assert_eq!(pred.dims(), [48; 3]);

    let record = dir.path().join("dice.json");
    let o = sparseg(&["eval", "--pred", s(&seg), "--gt", s(&labels), "--out", s(&record)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("class"));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&record).unwrap()).unwrap();
    assert_eq!(r["resampled"], true);
    assert_eq!(r["per_class"].as_array().unwrap().len(), 6);

    let o = sparseg(&["bench", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--volume", s(&image), "--threads", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("threads 1") && stdout.contains("gather"));

    let o = sparseg(&["segment", "--checkpoint", s(&labels), "--volume", s(&image), "--out", s(&seg)]);
    assert_eq!(code(&o), 2);
}
