use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use gsedit_core::camera::PoseRecord;
use gsedit_core::pipeline::EditConfig;
use gsedit_core::render::render;
use gsedit_core::scene::{load_ply, save_ply};
use gsedit_core::{GaussianScene, RenderSettings};

fn gsedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsedit"))
        .args(args)
        .env_remove("GSEDIT_PROVIDER_URL")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the blob-10 fixture and a shortened copy of its config.
fn blob_fixture(dir: &Path, coarse: usize, refine: usize) -> (PathBuf, PathBuf) {
    let out = gsedit(&["fixture", "blob-10", "--out", s(dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.join("blob-10.toml")).unwrap();
    let text = text
        .replace("coarse_iters = 2000", &format!("coarse_iters = {coarse}"))
        .replace("refine_iters = 3000", &format!("refine_iters = {refine}"));
    let cfg = dir.join("short.toml");
    std::fs::write(&cfg, text).unwrap();
    (dir.join("blob-10.ply"), cfg)
}

fn png_pixels(path: &Path) -> Vec<u8> {
    image::open(path).unwrap().to_rgb8().into_raw()
}

fn png_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    files.sort();
    files
}

#[test]
fn fixture_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&gsedit(&["fixture", "box-scene-100", "--out", s(d), "--seed", "7"])), 0);
    }
    for name in ["box-scene-100.ply", "box-scene-100.target.ply", "box-scene-100.toml"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_eq!(load_ply(a.join("box-scene-100.ply")).unwrap().len(), 100);

    // every target view shows something on the black background
    let targets = png_files(&a.join("targets"));
    assert_eq!(targets.len(), 48);
    for t in &targets {
        assert!(png_pixels(t).iter().any(|&v| v > 0), "{}", t.display());
    }

    assert_eq!(code(&gsedit(&["fixture", "blob-10", "--out", s(&a)])), 0);
    assert_eq!(load_ply(a.join("blob-10.ply")).unwrap().len(), 10);
    let bad = gsedit(&["fixture", "blob-11", "--out", s(&a)]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn mock_edit_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, cfg) = blob_fixture(dir.path(), 20, 20);
    let out_dir = dir.path().join("out");
    let out = gsedit(&[
        "edit",
        "--config",
        s(&cfg),
        "--scene",
        s(&scene),
        "--out",
        s(&out_dir),
        "--provider",
        "mock:blob-10",
        "--checkpoint-every",
        "10",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let edited = load_ply(out_dir.join("edited.ply")).unwrap();
    assert_eq!(edited.len(), 12);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["losses"].as_array().unwrap().len(), 40);
    assert!(out_dir.join("checkpoints/coarse_00020.ply").exists());
    let turntable = png_files(&out_dir.join("turntable"));
    assert_eq!(turntable.len(), 48);

    // re-rendering the saved scene reproduces the in-process render exactly
    let config: EditConfig = toml::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    let k = config.intrinsics().unwrap();
    let poses = config.refinement_grid().unwrap();
    let rendered = dir.path().join("rendered");
    let r = gsedit(&["render", "--scene", s(&out_dir.join("edited.ply")), "--config", s(&cfg), "--out", s(&rendered)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    for (i, (a, b)) in turntable.iter().zip(png_files(&rendered)).enumerate() {
        let expected = render(&edited, None, &poses[i], &k, config.background, &RenderSettings::default()).unwrap();
        assert_eq!(png_pixels(a), expected.rgb.to_rgb8());
        assert_eq!(png_pixels(&b), expected.rgb.to_rgb8());
    }

    // same seed, same bytes
    let again = dir.path().join("again");
    let out = gsedit(&[
        "edit", "--config", s(&cfg), "--scene", s(&scene), "--out", s(&again), "--provider", "mock:blob-10",
        "--no-turntable",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(again.join("edited.ply")).unwrap(), std::fs::read(out_dir.join("edited.ply")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, cfg) = blob_fixture(dir.path(), 2, 2);
    let out = s(dir.path());

    let missing = gsedit(&["edit", "--scene", "/no/such/scene.ply", "--out", out, "--provider", "mock:blob-10"]);
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("scene not found"), "{}", stderr(&missing));

    let gamma = gsedit(&["edit", "--config", s(&cfg), "--scene", s(&scene), "--out", out, "--provider", "mock:blob-10", "--gamma", "1.5"]);
    assert_eq!(code(&gamma), 2);
    assert!(stderr(&gamma).contains("gamma"), "{}", stderr(&gamma));

    for provider in ["mock:nope", "local:thing", "remote:not a url"] {
        let bad = gsedit(&["edit", "--config", s(&cfg), "--scene", s(&scene), "--out", out, "--provider", provider]);
        assert_eq!(code(&bad), 2, "{provider}: {}", stderr(&bad));
    }
    let none = gsedit(&["edit", "--config", s(&cfg), "--scene", s(&scene), "--out", out]);
    assert_eq!(code(&none), 2);

    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "gamma = 0.5\nunknown_key = 3\n").unwrap();
    let out2 = gsedit(&["edit", "--config", s(&bad_cfg), "--scene", s(&scene), "--out", out, "--provider", "mock:blob-10"]);
    assert_eq!(code(&out2), 2);

    assert_eq!(code(&gsedit(&["edit"])), 2);
    assert_eq!(code(&gsedit(&["render", "--scene", s(&scene), "--out", out, "--subset", "some"])), 2);
}

#[test]
fn unreachable_provider_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, cfg) = blob_fixture(dir.path(), 2, 2);
    let out = Command::new(env!("CARGO_BIN_EXE_gsedit"))
        .args(["edit", "--config", s(&cfg), "--scene", s(&scene), "--out", s(&dir.path().join("o"))])
        .args(["--provider", "mock:blob-10", "--timeout-secs", "1"])
        // the environment wins over the flag
        .env("GSEDIT_PROVIDER_URL", "http://127.0.0.1:9")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("coarse stage failed"), "{}", stderr(&out));
    assert!(dir.path().join("o/partial.ply").exists());
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn remote_edit_against_served_mock() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_gsedit"))
        .args(["serve-mock", "--fixture", "blob-10", "--addr", "127.0.0.1:0"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let _server = Server(child);
    let url = line.trim().rsplit(' ').next().unwrap().to_string();
    assert!(url.starts_with("http://127.0.0.1:"), "{line}");

    let dir = tempfile::tempdir().unwrap();
    let (scene, cfg) = blob_fixture(dir.path(), 10, 10);
    let remote = dir.path().join("remote");
    let out = gsedit(&[
        "edit", "--config", s(&cfg), "--scene", s(&scene), "--out", s(&remote), "--provider",
        &format!("remote:{url}"), "--no-turntable",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let local = dir.path().join("local");
    let out = gsedit(&[
        "edit", "--config", s(&cfg), "--scene", s(&scene), "--out", s(&local), "--provider", "mock:blob-10",
        "--no-turntable",
    ]);
    assert_eq!(code(&out), 0);

    // f32 transport keeps the two runs close but not bit-identical
    let a = load_ply(remote.join("edited.ply")).unwrap();
    let b = load_ply(local.join("edited.ply")).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.gaussians().iter().zip(b.gaussians()) {
        assert!((x.position - y.position).norm() < 1e-3);
    }
}

#[test]
fn render_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.ply");
    save_ply(&GaussianScene::new(0).unwrap(), &empty).unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"width": 16, "height": 12, "box": {"center": [0, 0, 0], "half_extents": [0.2, 0.2, 0.2]}}"#).unwrap();
    let black = dir.path().join("black");
    let out = gsedit(&["render", "--scene", s(&empty), "--config", s(&cfg), "--out", s(&black)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let files = png_files(&black);
    assert_eq!(files.len(), 48);
    for f in &files {
        let px = png_pixels(f);
        assert_eq!(px.len(), 16 * 12 * 3);
        assert!(px.iter().all(|&v| v == 0));
    }

    // with nothing in the box, the fixed subset is the whole scene
    let fx = dir.path().join("fx");
    assert_eq!(code(&gsedit(&["fixture", "blob-10", "--out", s(&fx)])), 0);
    let scene = fx.join("blob-10.ply");
    let renders: Vec<Vec<Vec<u8>>> = ["all", "fixed", "editable"]
        .iter()
        .map(|subset| {
            let d = dir.path().join(subset);
            let out = gsedit(&["render", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&d), "--subset", subset]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
            png_files(&d).iter().map(|p| png_pixels(p)).collect()
        })
        .collect();
    assert_eq!(renders[0], renders[1]);
    assert!(renders[2].iter().all(|img| img.iter().all(|&v| v == 0)));
    assert_ne!(renders[0], renders[2]);

    // the fixture's own box holds the eyes
    let fcfg = fx.join("blob-10.toml");
    let d = dir.path().join("eyes");
    let out = gsedit(&["render", "--scene", s(&scene), "--config", s(&fcfg), "--out", s(&d), "--subset", "editable"]);
    assert_eq!(code(&out), 0);
    // white background shows through everywhere except the eyes
    assert!(png_files(&d).iter().any(|p| png_pixels(p).iter().any(|&v| v < 128)));
}

#[test]
fn exported_poses_render_like_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, cfg) = blob_fixture(dir.path(), 2, 2);
    let poses = dir.path().join("poses.json");
    let out = gsedit(&["export-poses", "--config", s(&cfg), "--out", s(&poses)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let records: Vec<PoseRecord> = serde_json::from_slice(&std::fs::read(&poses).unwrap()).unwrap();
    assert_eq!(records.len(), 48);
    assert_eq!((records[0].intrinsics.width, records[0].intrinsics.height), (64, 64));

    let (a, b) = (dir.path().join("grid"), dir.path().join("file"));
    assert_eq!(code(&gsedit(&["render", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&a)])), 0);
    let out = gsedit(&["render", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&b), "--poses", s(&poses)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (fa, fb) = (png_files(&a), png_files(&b));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        let (px, py) = (png_pixels(x), png_pixels(y));
        // poses pass through JSON, so allow one level of rounding
        assert!(px.iter().zip(&py).all(|(p, q)| p.abs_diff(*q) <= 1));
    }

    let stdout = gsedit(&["export-poses"]);
    assert_eq!(code(&stdout), 0);
    let records: Vec<PoseRecord> = serde_json::from_slice(&stdout.stdout).unwrap();
    assert_eq!(records.len(), 48);
    assert_eq!(records[0].intrinsics.width, 512);
}
