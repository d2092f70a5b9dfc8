use std::f64::consts::PI;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use envlight::context::{apply_mask, project_view_mask, ViewSpec};
use envlight::envmap::{load_hdr, save_hdr, save_ldr, EnvironmentMap, Range, Transfer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn envlight(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_envlight"))
        .current_dir(dir)
        .env_remove("ENVLIGHT_BACKEND_URL")
        .args(args)
        .output()
        .expect("spawn envlight")
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_record(out: &Output) -> Value {
    assert!(!out.status.success(), "expected failure");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str::<Value>(line).expect("error record is JSON")["error"].clone()
}

fn random_hdr(w: usize, h: usize, max: f64, seed: u64) -> EnvironmentMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EnvironmentMap::from_fn(w, h, Range::Hdr, |_, _| {
        [
            rng.gen_range(0.0..max),
            rng.gen_range(0.0..max),
            rng.gen_range(0.0..max),
        ]
    })
    .unwrap()
}

#[test]
fn decompose_then_recompose_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = random_hdr(64, 32, 4.0, 1);
    save_hdr(&input, dir.path().join("in.hdr")).unwrap();
    // the file itself is RGBE-quantised; compare against what was written
    let input = load_hdr(dir.path().join("in.hdr")).unwrap();

    ok_json(&envlight(
        dir.path(),
        &["decompose", "in.hdr", "--out-ldr", "a.png", "--out-hi", "b.png"],
    ));
    ok_json(&envlight(
        dir.path(),
        &["recompose", "a.png", "b.png", "--out", "c.hdr"],
    ));
    let back = load_hdr(dir.path().join("c.hdr")).unwrap();

    for (p, q) in input.pixels().iter().zip(back.pixels()) {
        for k in 0..3 {
            // 8-bit sRGB LDR step, 16-bit sigmoid step and RGBE rounding
            let tol = 6e-3 + 1e-2 * p[k];
            assert!((p[k] - q[k]).abs() <= tol, "{} vs {}", p[k], q[k]);
        }
    }
}

#[test]
fn measure_uniform_white_is_four_pi() {
    let dir = tempfile::tempdir().unwrap();
    let white = EnvironmentMap::uniform(256, 128, [1.0; 3], Range::Hdr).unwrap();
    save_hdr(&white, dir.path().join("uniform_white.hdr")).unwrap();
    let v = ok_json(&envlight(dir.path(), &["measure", "uniform_white.hdr"]));
    let l = v["total_luminance"].as_f64().unwrap();
    // RGBE decodes 1.0 at its mantissa bucket centre, 1 + 1/256
    let stored = load_hdr(dir.path().join("uniform_white.hdr")).unwrap().get(0, 0)[0];
    assert!((l - 4.0 * PI * stored).abs() / (4.0 * PI) < 1e-4, "{l}");
    assert!((l - 4.0 * PI).abs() / (4.0 * PI) <= 1.0 / 256.0 + 1e-9, "{l}");

    let csv = envlight(dir.path(), &["measure", "uniform_white.hdr", "--format", "csv"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("width,height,mean_intensity,total_luminance"));
}

#[test]
fn classify_uses_band_edges() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&envlight(
        dir.path(),
        &["classify", "--mean-intensity", "0.25", "--cct", "5500"],
    ));
    assert_eq!(v["labels"]["intensity"], "neutral");
    assert_eq!(v["labels"]["temperature"], "neutral");
    let v = ok_json(&envlight(
        dir.path(),
        &["classify", "--mean-intensity", "0.1", "--cct", "3000"],
    ));
    assert_eq!(v["labels"]["intensity"], "dark");
    assert!(v["prompt"].as_str().unwrap().len() > 10);
}

#[test]
fn eval_three_sphere_oracle_is_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&envlight(
        dir.path(),
        &[
            "eval-three-sphere",
            "--estimator",
            "oracle",
            "--views",
            "75deg x1",
            "--synthetic",
            "2",
            "--size",
            "64x32",
            "--resolution",
            "32",
            "--convolution-width",
            "32",
            "--output-dir",
            "run",
        ],
    ));
    let materials = v["materials"].as_array().unwrap();
    assert_eq!(materials.len(), 3);
    for m in materials {
        assert!(m["si_rmse"].as_f64().unwrap() < 1e-9, "{m}");
        assert!(m["rmse"].as_f64().unwrap() < 1e-9, "{m}");
        assert!(m["angular_error_degrees"].as_f64().unwrap() < 1e-3, "{m}");
    }
    let run = dir.path().join("run");
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["estimator"], "oracle");
    assert_eq!(manifest["seed"], 0);
    let records = std::fs::read_to_string(run.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);
    assert!(run.join("report.json").exists());
}

fn robustness(dir: &Path, seed: &str, out: &str) -> Output {
    envlight(
        dir,
        &[
            "eval-robustness",
            "--estimator",
            "fixed",
            "--synthetic",
            "2",
            "--size",
            "32x16",
            "--s",
            "0.5,1,2",
            "--bins",
            "2x2",
            "--per-bin",
            "2",
            "--seed",
            seed,
            "--no-timing",
            "--output-dir",
            out,
        ],
    )
}

#[test]
fn protocol_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = robustness(dir.path(), "7", "a");
    let b = robustness(dir.path(), "7", "b");
    ok_json(&a);
    assert_eq!(a.stdout, b.stdout);
    for f in ["records.jsonl", "report.json", "run_manifest.json"] {
        let fa = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let fb = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(fa, fb, "{f} differs");
    }
    let c = robustness(dir.path(), "8", "c");
    ok_json(&c);
    assert_ne!(
        std::fs::read(dir.path().join("a/records.jsonl")).unwrap(),
        std::fs::read(dir.path().join("c/records.jsonl")).unwrap()
    );
    let report: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(report.get("runtime_ms").is_none());
    assert!(!report["bins"].as_array().unwrap().is_empty());
}

#[test]
fn failures_print_an_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_record(&envlight(dir.path(), &["measure", "missing.hdr"]));
    assert_eq!(e["code"], "io");
    assert!(e["message"].as_str().unwrap().contains("missing.hdr"));

    let e = error_record(&envlight(dir.path(), &["measure", "--no-such-flag"]));
    assert_eq!(e["code"], "usage");

    let e = error_record(&envlight(dir.path(), &["mask", "--view", "0,0,200"]));
    assert_eq!(e["code"], "invalid_parameter");
}

/// Writes a masked observation of `gt` and its mask into `dir`.
fn observe(dir: &Path, gt: &EnvironmentMap) {
    let (w, h) = gt.dims();
    let mask = project_view_mask(&ViewSpec::new(20.0, 0.0, 100.0, 4.0 / 3.0).unwrap(), w, h).unwrap();
    let obs = apply_mask(&gt.to_ldr(), &mask).unwrap();
    save_ldr(&obs, dir.join("obs.png"), Transfer::Srgb).unwrap();
    std::fs::write(dir.join("mask.png"), mask.to_png().unwrap()).unwrap();
}

#[test]
fn estimate_with_oracle_backend_picks_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let gt = random_hdr(128, 64, 3.0, 5);
    save_hdr(&gt, dir.path().join("gt.hdr")).unwrap();
    observe(dir.path(), &gt);
    let args = [
        "estimate",
        "--observation",
        "obs.png",
        "--mask",
        "mask.png",
        "--backend",
        "oracle",
        "--backend-fixture",
        "gt.hdr",
        "--out",
        "est.hdr",
        "--no-timing",
    ];
    let v = ok_json(&envlight(dir.path(), &args));
    assert_eq!(v["chosen_index"], 0);
    assert_eq!(v["scores"].as_array().unwrap().len(), 5);
    assert!(v["timings_ms"].is_null());
    let est = load_hdr(dir.path().join("est.hdr")).unwrap();
    assert_eq!(est.dims(), (128, 64));
    let again = envlight(dir.path(), &args);
    assert_eq!(serde_json::from_slice::<Value>(&again.stdout).unwrap(), v);
}

#[test]
fn estimate_unreachable_backend_reports_stage() {
    let dir = tempfile::tempdir().unwrap();
    observe(dir.path(), &random_hdr(64, 32, 2.0, 2));
    let out = Command::new(env!("CARGO_BIN_EXE_envlight"))
        .current_dir(dir.path())
        .env("ENVLIGHT_BACKEND_URL", "http://127.0.0.1:9")
        .args([
            "estimate",
            "--observation",
            "obs.png",
            "--mask",
            "mask.png",
            "--timeout-ms",
            "2000",
        ])
        .output()
        .unwrap();
    let e = error_record(&out);
    assert!(e["stage"].is_string(), "{e}");
    assert!(
        ["transport", "timeout"].contains(&e["code"].as_str().unwrap()),
        "{e}"
    );
}

#[test]
fn estimate_through_mock_server() {
    let dir = tempfile::tempdir().unwrap();
    let gt = random_hdr(64, 32, 3.0, 9);
    save_hdr(&gt, dir.path().join("gt.hdr")).unwrap();
    observe(dir.path(), &gt);

    let mut server = Command::new(env!("CARGO_BIN_EXE_envlight"))
        .current_dir(dir.path())
        .args([
            "serve-mock-backend",
            "--backend",
            "oracle",
            "--backend-fixture",
            "gt.hdr",
            "--addr",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = serde_json::from_str::<Value>(&line).unwrap()["url"]
        .as_str()
        .unwrap()
        .to_owned();

    let out = Command::new(env!("CARGO_BIN_EXE_envlight"))
        .current_dir(dir.path())
        .env("ENVLIGHT_BACKEND_URL", &url)
        .args([
            "estimate",
            "--observation",
            "obs.png",
            "--mask",
            "mask.png",
            "--backend-endpoint",
            "http://127.0.0.1:9",
        ])
        .output()
        .unwrap();
    server.kill().unwrap();
    server.wait().unwrap();
    let v = ok_json(&out);
    assert_eq!(v["chosen_index"], 0);
    assert!(v["timings_ms"]["offload"].as_f64().is_some(), "{v}");
}

#[test]
fn mask_refine_and_select() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&envlight(
        dir.path(),
        &[
            "mask", "--view", "0,0,90,1", "--width", "256", "--height", "128", "--out", "m.png",
        ],
    ));
    let c = v["coverage_fraction"].as_f64().unwrap();
    assert!((c - 1.0 / 6.0).abs() < 0.01, "{c}");

    let gt = random_hdr(64, 32, 1.0, 3).to_ldr();
    observe(dir.path(), &gt);
    let tinted = gt.map_pixels(|p| [p[0] * 1.6, p[1], p[2] * 0.7]).to_ldr();
    save_ldr(&tinted, dir.path().join("tinted.png"), Transfer::Srgb).unwrap();
    save_ldr(&gt, dir.path().join("gt.png"), Transfer::Srgb).unwrap();

    let v = ok_json(&envlight(
        dir.path(),
        &[
            "refine",
            "tinted.png",
            "--observation",
            "obs.png",
            "--mask",
            "mask.png",
            "--out",
            "refined.png",
        ],
    ));
    let obs = v["observed_mean"].as_array().unwrap();
    let refined = v["refined_mean"].as_array().unwrap();
    for k in 0..3 {
        let (o, r) = (obs[k].as_f64().unwrap(), refined[k].as_f64().unwrap());
        assert!((o - r).abs() / o < 0.05, "{o} vs {r}");
    }

    let v = ok_json(&envlight(
        dir.path(),
        &[
            "select",
            "tinted.png",
            "gt.png",
            "--observation",
            "obs.png",
            "--mask",
            "mask.png",
            "--no-refine",
        ],
    ));
    assert_eq!(v["chosen_index"], 1);
}

#[test]
fn augment_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    save_hdr(&random_hdr(32, 16, 2.0, 4), dir.path().join("src.hdr")).unwrap();
    let v = ok_json(&envlight(
        dir.path(),
        &[
            "augment",
            "src.hdr",
            "--s",
            "0.5,1,2",
            "--bins",
            "2x2",
            "--per-bin",
            "1",
            "--output-dir",
            "aug",
        ],
    ));
    assert_eq!(v["generated"], 6);
    let lines = std::fs::read_to_string(dir.path().join("aug/manifest.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6);
    assert!(dir.path().join("aug/variants/src_intensity_2.000.hdr").exists());
    assert!(dir.path().join("aug/manifest_binned.jsonl").exists());
}

#[test]
fn render_spheres_writes_three_images() {
    let dir = tempfile::tempdir().unwrap();
    let env = EnvironmentMap::uniform(64, 32, [0.5, 0.25, 1.0], Range::Hdr).unwrap();
    save_hdr(&env, dir.path().join("env.hdr")).unwrap();
    let v = ok_json(&envlight(
        dir.path(),
        &[
            "render-spheres",
            "env.hdr",
            "--resolution",
            "32",
            "--convolution-width",
            "32",
        ],
    ));
    let spheres = v["spheres"].as_array().unwrap();
    assert_eq!(spheres.len(), 3);
    let diffuse = spheres[0]["mean_rgb"].as_array().unwrap();
    assert!((diffuse[0].as_f64().unwrap() - 0.5).abs() < 1e-2);
    assert!(dir.path().join("env_mirror.hdr").exists());
}
