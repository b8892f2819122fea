use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kbuffers::kraster::screen_radius;
use kbuffers::scene::{load_scene, read_png, write_gray_png};

fn kbuf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbuf"))
        .args(args)
        .env("KBUF_THREADS", "1")
        .output()
        .expect("kbuf runs")
}

fn ok(args: &[&str]) -> Output {
    let out = kbuf(args);
    assert!(out.status.success(), "kbuf {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_scene(dir: &Path) -> PathBuf {
    let scene = dir.join("scene");
    ok(&["synth", "--points", "1500", "--views", "4", "--res", "20", "--seed", "3", "--out", s(&scene)]);
    scene
}

const TINY: &str = r#"{
  "k": 2, "channels": 4, "radiance_widths": [16, 16, 16, 8], "kfn_hidden": 4,
  "unet_widths": [4, 8], "hash_levels": 2, "hash_log2_table": 8, "steps": 5
}"#;

#[test]
fn synth_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--points", "3000", "--out", s(&a)]);
    ok(&["synth", "--points", "3000", "--out", s(&b)]);
    let pngs = fs::read_dir(a.join("gt")).unwrap().count();
    assert_eq!(pngs, 8);
    for f in ["cloud.ply", "cameras.json", "scene.json", "gt/000.png", "gt/007.png"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["args"]["points"], 3000);
}

#[test]
fn dropout_keeps_a_binomial_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let n = 10_000.0;
    ok(&["synth", "--points", "10000", "--views", "2", "--res", "8", "--dropout", "0.3", "--out", s(&out)]);
    let (cloud, _) = load_scene(&out).unwrap();
    let sd = (n * 0.3 * 0.7f64).sqrt();
    assert!((cloud.len() as f64 - 0.7 * n).abs() < 4.0 * sd, "kept {}", cloud.len());
}

#[test]
fn single_layer_depth_matches_a_plain_z_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let (r1, r4) = (dir.path().join("r1"), dir.path().join("r4"));
    ok(&["rasterize", "--scene", s(&scene), "--view", "1", "--k", "1", "--out", s(&r1)]);
    ok(&["rasterize", "--scene", s(&scene), "--view", "1", "--k", "4", "--out", s(&r4)]);
    assert!(r1.join("view_001.kzb").exists());
    assert_eq!(fs::read(r1.join("depth_layer_0.png")).unwrap(), fs::read(r4.join("depth_layer_0.png")).unwrap());
    assert_eq!(fs::read_dir(&r4).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png").count(), 4);

    // Independent z-buffer: nearest covering splat per pixel, then min-max.
    let (cloud, views) = load_scene(&scene).unwrap();
    let tau: f64 = serde_json::from_slice::<serde_json::Value>(&fs::read(scene.join("scene.json")).unwrap()).unwrap()["tau"]
        .as_f64()
        .unwrap();
    let cam = &views.get(1).unwrap().camera;
    let (w, h) = (cam.width, cam.height);
    let mut depth = vec![f32::INFINITY; w * h];
    for i in 0..cloud.len() {
        let p = cam.project(cloud.position(i));
        if !p.visible {
            continue;
        }
        let r = screen_radius(tau, cam.focal, p.dist);
        for py in 0..h {
            for px in 0..w {
                let (dx, dy) = (px as f64 + 0.5 - p.u, py as f64 + 0.5 - p.v);
                if dx * dx + dy * dy <= r * r {
                    depth[py * w + px] = depth[py * w + px].min(p.dist as f32);
                }
            }
        }
    }
    let occ: Vec<f32> = depth.iter().cloned().filter(|d| d.is_finite()).collect();
    let lo = occ.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = occ.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let want: Vec<f32> = depth
        .iter()
        .map(|&d| if d.is_finite() { 1.0 - 0.9 * (d - lo) / (hi - lo) } else { 0.0 })
        .collect();
    let oracle = dir.path().join("oracle.png");
    write_gray_png(&oracle, w, h, &want).unwrap();
    assert_eq!(read_png(&oracle).unwrap(), read_png(&r1.join("depth_layer_0.png")).unwrap());

    let bad = kbuf(&["rasterize", "--scene", s(&scene), "--view", "9", "--out", s(&r1)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("out of range"));
}

#[test]
fn train_render_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--scene", s(&scene), "--config", s(&cfg), "--steps", "20", "--log-every", "0", "--out", s(&run)]);
    let ckpt = run.join("checkpoint.kbck");
    assert!(ckpt.exists());
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.starts_with("step,split,view,psnr,ssim\n0,train,"));

    let (ra, rb) = (dir.path().join("ra"), dir.path().join("rb"));
    ok(&["render", "--scene", s(&scene), "--ckpt", s(&ckpt), "--out", s(&ra)]);
    ok(&["render", "--scene", s(&scene), "--ckpt", s(&ckpt), "--config", s(&cfg), "--out", s(&rb)]);
    assert_eq!(fs::read(ra.join("render/003.png")).unwrap(), fs::read(rb.join("render/003.png")).unwrap());

    let ev = dir.path().join("ev");
    ok(&["eval", "--scene", s(&scene), "--ckpt", s(&ckpt), "--out", s(&ev)]);
    let rows = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.lines().nth(1).unwrap().starts_with("20,test,3,"));

    // Same config and seed → identical per-step metrics.
    let run2 = dir.path().join("run2");
    ok(&["train", "--scene", s(&scene), "--config", s(&cfg), "--steps", "20", "--log-every", "0", "--out", s(&run2)]);
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), fs::read(run2.join("metrics.csv")).unwrap());

    let other = dir.path().join("other.json");
    fs::write(&other, TINY.replace("\"k\": 2", "\"k\": 3").replace("[4, 8]", "[4, 6]")).unwrap();
    let bad = kbuf(&["eval", "--scene", s(&scene), "--ckpt", s(&ckpt), "--config", s(&other), "--out", s(&ev)]);
    assert!(!bad.status.success());
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("k: 3 vs 2") && err.contains("unet_widths"), "{err}");
}

#[test]
fn dm_sweep_writes_three_rows_and_a_plot() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("ab");
    ok(&["ablate", "--scene", s(&scene), "--config", s(&cfg), "--sweep", "dm", "--steps", "3", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["minimum", "random", "average"]);
    let plot = read_png(&out.join("ablation.png")).unwrap();
    assert_eq!((plot.width, plot.height), (320, 200));
}

#[test]
fn unknown_flags_are_rejected() {
    let out = kbuf(&["synth", "--bogus", "1", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    let out = kbuf(&["ablate", "--scene", ".", "--sweep", "colors", "--out", "/tmp/x"]);
    assert!(!out.status.success());
}
