use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use skelgrow::growth::RotationOverrides;
use skelgrow::io::{self, JointBookDocument};
use skelgrow::math::{exp_so3, Vec3};
use skelgrow::synth::Part;

fn skelgrow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skelgrow")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn hash(path: &Path) -> String {
    format!("{:x}", Sha256::digest(std::fs::read(path).unwrap()))
}

const STICK_SCENE: &str = r#"{"points_per_segment": 40, "frames": 30,
    "attachments": [{"kind": "rigid_object", "host": 5, "amplitude": 0.6}]}"#;

fn train_config(dir: &Path, scene: &str) -> PathBuf {
    let path = dir.join("run.json");
    write(&path, &format!(r#"{{"warmup_iters": 80, "total_iters": 300, "scene": {scene}}}"#));
    path
}

fn train(dir: &Path, scene: &str) -> PathBuf {
    let out = dir.join("run");
    let r = skelgrow(&["train", "--config", p(&train_config(dir, scene)), "--seed", "3", "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    out
}

#[test]
fn generate_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, STICK_SCENE);
    let (a, b) = (dir.path().join("a/scene.json"), dir.path().join("b/scene.json"));
    for out in [&a, &b] {
        let r = skelgrow(&["generate", "--config", p(&spec), "--seed", "4", "--out", p(out)]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        assert!(String::from_utf8_lossy(&r.stdout).contains("attachments 1"));
    }
    assert_eq!(hash(&a), hash(&b));
    assert_eq!(hash(&io::sidecar_path(&a)), hash(&io::sidecar_path(&b)));

    let scene = io::load_scene(&a).unwrap();
    assert_eq!(scene.spec.seed, 4);
    let again = dir.path().join("again.json");
    io::save_scene(&scene, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&a).unwrap());
    assert_eq!(io::load_scene(&again).unwrap(), scene);
}

#[test]
fn invalid_spec_exits_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, r#"{"frames": 1}"#);
    let r = skelgrow(&["generate", "--config", p(&spec), "--out", p(&dir.path().join("s.json"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("frames"));

    write(&spec, r#"{"frames": 10, "colour": "red"}"#);
    let r = skelgrow(&["generate", "--config", p(&spec), "--out", p(&dir.path().join("s.json"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("colour"));
}

#[test]
fn missing_input_exits_with_io_status() {
    let dir = tempfile::tempdir().unwrap();
    let r = skelgrow(&["train", "--config", p(&dir.path().join("nope.json")), "--out", p(dir.path())]);
    assert_eq!(r.status.code(), Some(4));
}

#[test]
fn bad_thread_count_is_a_validation_error() {
    let r = Command::new(env!("CARGO_BIN_EXE_skelgrow"))
        .args(["eval", "--model", "m.json", "--scene", "s.json"])
        .env("SKELGROW_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("SKELGROW_THREADS"));
}

#[test]
fn train_without_decoupled_parts_grows_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), r#"{"points_per_segment": 30, "frames": 20}"#);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["grown"], serde_json::json!([]));
    let book: JointBookDocument = io::read_json(&out.join("joint_book.json")).unwrap();
    assert!(book.entries.is_empty());
}

#[test]
fn train_writes_artifacts_and_finds_the_host() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), STICK_SCENE);
    for name in skelgrow::cli::TRAIN_ARTIFACTS {
        assert!(out.join(name).is_file(), "{name}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["grown"], serde_json::json!([5]));

    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,phase,loss,point_count,eps_d"));
    assert_eq!(lines.count(), 300);
    assert!(csv.contains(",warmup,") && csv.contains(",refine,"));

    let frames: Vec<_> = std::fs::read_dir(out.join("frames")).unwrap().collect();
    assert_eq!(frames.len(), 30);
    let model = io::load_model(&out.join("model.json")).unwrap();
    let ply = io::read_ply(&out.join("frames").join(io::frame_file_name(7))).unwrap();
    let warped = model.warp_frame(7).unwrap();
    assert_eq!(ply.len(), warped.len());
    for (a, b) in ply.iter().zip(&warped) {
        assert!((a - b).amax() < 1e-7 * b.amax().max(1.0));
    }

    // joint book: load then dump reproduces the file byte for byte
    let text = std::fs::read_to_string(out.join("joint_book.json")).unwrap();
    let book: JointBookDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(book.entries.len(), 1);
    assert_eq!(book.entries[0].parent, 5);
    assert_eq!(io::to_json(&book), text);
    assert_eq!(book, JointBookDocument::from_model(&model).unwrap());
}

#[test]
fn eval_reports_errors_for_a_saved_scene() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, STICK_SCENE);
    let scene = dir.path().join("scene.json");
    assert!(skelgrow(&["generate", "--config", p(&spec), "--seed", "3", "--out", p(&scene)]).status.success());
    let config = dir.path().join("run.json");
    write(&config, r#"{"warmup_iters": 80, "total_iters": 300, "scene_path": "scene.json"}"#);
    let out = dir.path().join("run");
    let r = skelgrow(&["train", "--config", p(&config), "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let eval = dir.path().join("eval.json");
    let r = skelgrow(&["eval", "--model", p(&out.join("model.json")), "--scene", p(&scene), "--out", p(&eval)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let e: skelgrow::cli::EvalReport = io::read_json(&eval).unwrap();
    let report: skelgrow::trainer::TrainReport = io::read_json(&out.join("report.json")).unwrap();
    assert_eq!(e.extra_joints, 1);
    assert!((e.train_rmse - report.train_rmse).abs() <= 1e-12 * report.train_rmse);
    assert_eq!(e.held_out_rmse, report.held_out_rmse);
}

fn animate(model: &Path, overrides: Option<&Path>, out: &Path) {
    let mut args = vec!["animate", "--model", p(model), "--out", p(out)];
    if let Some(o) = overrides {
        args.extend(["--overrides", p(o)]);
    }
    let r = skelgrow(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn animate_with_explicit_rotations() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), STICK_SCENE);
    let model_path = run.join("model.json");
    let model = io::load_model(&model_path).unwrap();
    let frames = model.frame_count();

    // the decoder's own rotations as overrides replay bit for bit
    let decoded = dir.path().join("decoded.json");
    io::write_json(&decoded, &JointBookDocument::from_model(&model).unwrap().to_overrides()).unwrap();
    let (plain, bypass) = (dir.path().join("plain"), dir.path().join("bypass"));
    animate(&model_path, None, &plain);
    animate(&model_path, Some(&decoded), &bypass);
    for f in 0..frames {
        let name = io::frame_file_name(f);
        assert_eq!(std::fs::read(plain.join(&name)).unwrap(), std::fs::read(bypass.join(&name)).unwrap());
    }

    // identity overrides replay the model as if the grown joint never moved
    let identity = dir.path().join("identity.json");
    io::write_json(
        &identity,
        &RotationOverrides {
            per_entry: vec![vec![Vec3::zeros(); frames]],
            freeze_base_frame: None,
        },
    )
    .unwrap();
    let still = dir.path().join("still");
    animate(&model_path, Some(&identity), &still);
    let ply = io::read_ply(&still.join(io::frame_file_name(4))).unwrap();
    let expect = model.warp_pose(model.poses.frame(4), &[exp_so3(&Vec3::zeros())]).unwrap();
    for (a, b) in ply.iter().zip(&expect) {
        assert!((a - b).amax() < 1e-7 * b.amax().max(1.0));
    }

    // frozen body, swinging object
    let swing = dir.path().join("swing.json");
    io::write_json(
        &swing,
        &RotationOverrides {
            per_entry: vec![(0..frames).map(|f| Vec3::new(0.0, 0.0, 0.8 * (f as f64 * 0.3).sin())).collect()],
            freeze_base_frame: Some(0),
        },
    )
    .unwrap();
    let moved = dir.path().join("moved");
    animate(&model_path, Some(&swing), &moved);
    let scene = skelgrow::synth::generate_scene(&skelgrow::synth::SceneSpec {
        seed: 3,
        ..serde_json::from_str(STICK_SCENE).unwrap()
    })
    .unwrap();
    let first = io::read_ply(&moved.join(io::frame_file_name(0))).unwrap();
    // body points off the host bone only carry the growth floor weight;
    // the host bone keeps a small share the noisy fit cannot resolve
    let (mut body, mut host_bone, mut object) = (0.0f64, 0.0f64, 0.0f64);
    for f in 1..frames {
        let cur = io::read_ply(&moved.join(io::frame_file_name(f))).unwrap();
        for (q, (a, b)) in first.iter().zip(&cur).enumerate() {
            let d = (a - b).norm();
            match scene.labels[q].part {
                Part::Body if scene.labels[q].host == 5 => host_bone = host_bone.max(d),
                Part::Body => body = body.max(d),
                Part::Attachment(_) => object = object.max(d),
            }
        }
    }
    assert!(body < 1e-6, "body points moved {body}");
    assert!(object > 0.05, "object moved only {object}");
    assert!(host_bone < 0.05 * object, "host bone moved {host_bone} vs object {object}");

    // shape mismatch between overrides and model
    let short = dir.path().join("short.json");
    write(&short, r#"{"per_entry": [[[0, 0, 0]]]}"#);
    let r = skelgrow(&["animate", "--model", p(&model_path), "--overrides", p(&short), "--out", p(&dir.path().join("x"))]);
    assert_eq!(r.status.code(), Some(2));
}
