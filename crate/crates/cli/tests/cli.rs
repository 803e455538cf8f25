use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use lightslab_core::checkpoint::load_checkpoint;
use lightslab_core::dataset::{load_image, load_scene, write_scene, TrainSample};
use lightslab_core::partition::PartitionManifest;

fn lightslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lightslab")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = lightslab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_CONFIG: &str = r#"{
  "train": {"max_steps": 5, "warmup_steps": 1, "batch_bundles": 2, "seed": 1},
  "model": {
    "encoder": {"kind": "grid", "levels": 2, "feature_dim": 2, "min_resolution": 4, "max_resolution": 8},
    "decoder": {"depth": 2, "width": 8, "sr_modules": [{"kernel_size": 4, "upsample": 2}], "out_channels": 3},
    "downsample": 2
  }
}"#;

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = lightslab(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_flag_is_a_usage_error() {
    assert_eq!(lightslab(&["render", "--ckpt", "x.ckpt"]).status.code(), Some(2));
    assert_eq!(lightslab(&["partition", "--scene", "s", "--mode", "cube", "--out", "m"]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_one_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = lightslab(&["partition", "--scene", path(&missing), "--mode", "prism", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn prism_partition_of_orbit_scene_covers_every_pose() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("orbit");
    let manifest = dir.path().join("partition.json");
    ok(&["synth", "--out", path(&scene), "--kind", "orbit", "--size", "16", "--train", "40", "--holdout", "0"]);
    ok(&["partition", "--scene", path(&scene), "--mode", "prism", "--out", path(&manifest)]);
    let m: PartitionManifest = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m.sub_scenes.len(), 5);
    let names = load_scene(&scene).unwrap().train_names;
    assert_eq!(names.len(), 40);
    for name in &names {
        assert!(m.sub_scenes.iter().any(|s| s.frames.contains(name)), "{name} unassigned");
    }
    assert!(m.sub_scenes.iter().all(|s| s.hyperplane.is_some()));
}

#[test]
fn kmeans_partition_has_k_sub_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("orbit");
    let manifest = dir.path().join("partition.json");
    ok(&["synth", "--out", path(&scene), "--kind", "orbit", "--size", "16", "--train", "24", "--holdout", "0"]);
    ok(&["partition", "--scene", path(&scene), "--mode", "kmeans", "--k", "3", "--out", path(&manifest)]);
    let m: PartitionManifest = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m.sub_scenes.len(), 3);
    let total: usize = m.sub_scenes.iter().map(|s| s.frames.len()).sum();
    assert!(total >= 24);
}

#[test]
fn train_render_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let config = dir.path().join("config.json");
    let ckpt = dir.path().join("model.ckpt");
    let history = dir.path().join("history.csv");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    ok(&["synth", "--out", path(&scene), "--size", "16", "--train", "6", "--holdout", "2"]);
    ok(&[
        "train",
        "--scene",
        path(&scene),
        "--config",
        path(&config),
        "--out",
        path(&ckpt),
        "--history",
        path(&history),
    ]);
    let csv = std::fs::read_to_string(&history).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "sub_scene,step,loss,lr,psnr_on_holdout");
    assert_eq!(csv.lines().count(), 6);

    let pose_file = dir.path().join("pose.json");
    let png = dir.path().join("view.png");
    std::fs::write(&pose_file, r#"{"pose": [1,0,0,0.05, 0,1,0,0, 0,0,1,0, 0,0,0,1]}"#).unwrap();
    ok(&["render", "--ckpt", path(&ckpt), "--pose-file", path(&pose_file), "--out", path(&png)]);
    assert_eq!(load_image(&png).unwrap().shape(), [16, 16, 3]);

    // a scene whose images are the model's own renders scores perfectly
    let model = load_checkpoint(&ckpt).unwrap();
    let original = load_scene(&scene).unwrap();
    let rerender = |s: &[TrainSample]| -> Vec<TrainSample> {
        s.iter().map(|t| TrainSample { pose: t.pose, target: model.render_view(&t.pose).unwrap() }).collect()
    };
    let own = dir.path().join("own");
    write_scene(&own, &original.camera, &rerender(&original.train), &rerender(&original.holdout)).unwrap();
    let report = dir.path().join("eval.csv");
    ok(&["eval", "--ckpt", path(&ckpt), "--scene", path(&own), "--out", path(&report)]);
    let csv = std::fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "view,psnr,ssim");
    assert_eq!(rows.len(), 1 + 8 + 1);
    for row in &rows[1..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "100.000000", "{row}");
        assert_eq!(cols[2], "1.000000", "{row}");
    }
    assert!(rows[9].starts_with("mean,"));

    // against the analytic images the untrained-ish model is far from perfect
    let out = ok(&["eval", "--ckpt", path(&ckpt), "--scene", path(&scene)]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mean: f64 = stdout.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(mean < 100.0);
}

fn http_get(addr: &str, target: &str) -> std::io::Result<String> {
    let mut stream = TcpStream::connect(addr)?;
    write!(stream, "GET {target} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n")?;
    let mut resp = String::new();
    stream.read_to_string(&mut resp)?;
    Ok(resp)
}

#[test]
fn serve_answers_health_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let config = dir.path().join("config.json");
    let ckpt = dir.path().join("model.ckpt");
    std::fs::write(&config, TINY_CONFIG.replace("\"max_steps\": 5", "\"max_steps\": 2")).unwrap();
    ok(&["synth", "--out", path(&scene), "--size", "16", "--train", "4", "--holdout", "0"]);
    ok(&["train", "--scene", path(&scene), "--config", path(&config), "--out", path(&ckpt)]);

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_lightslab"))
        .args(["serve", "--ckpt", path(&ckpt), "--bind", &addr])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let health = loop {
        match http_get(&addr, "/healthz") {
            Ok(r) => break r,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => {
                child.kill().ok();
                panic!("service never came up: {e}");
            }
        }
    };
    let meta = http_get(&addr, "/meta");
    child.kill().ok();
    child.wait().ok();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    let meta = meta.unwrap();
    assert!(meta.contains("\"width\":16") && meta.contains("\"partition\":\"frontal\""), "{meta}");
}
