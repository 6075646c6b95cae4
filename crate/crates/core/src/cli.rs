//! The `skelgrow` subcommands as plain functions. The binary only parses
//! arguments and maps errors to exit codes.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assignment::{write_joint_gradients_csv, JointGradientVector};
use crate::error::{Result, SkelError};
use crate::io::{self, JointBookDocument, RunConfigFile, SceneSource};
use crate::synth::{generate_scene, SceneSpec};
use crate::trainer::{evaluate_rmse, run_training, LossMode, TrainReport};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SKELGROW_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| SkelError::invalid(THREADS_ENV, format!("expected a positive integer, got `{raw}`")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub base_joints: usize,
    pub points: usize,
    pub frames: usize,
    pub attachments: usize,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "base joints {}, points {}, frames {}, attachments {}",
            self.base_joints, self.points, self.frames, self.attachments
        )
    }
}

/// Generates a scene from a spec file and writes it (plus sidecar) to `out`.
pub fn cmd_generate(spec_path: &Path, seed: Option<u64>, out: &Path) -> Result<GenerateSummary> {
    let mut spec: SceneSpec = io::read_json(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let scene = generate_scene(&spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        io::ensure_dir(dir)?;
    }
    io::save_scene(&scene, out)?;
    Ok(GenerateSummary {
        base_joints: scene.base_count(),
        points: scene.point_count(),
        frames: scene.frame_count(),
        attachments: spec.attachments.len(),
    })
}

/// Artifacts written by [`cmd_train`].
pub const TRAIN_ARTIFACTS: [&str; 6] = ["report.json", "loss.csv", "joint_book.json", "joint_gradients.csv", "model.json", "config.json"];

/// Trains on the configured scene and writes the report, loss trace, joint
/// book, model and one PLY per frame under `frames/`.
pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<TrainReport> {
    let mut cfg = RunConfigFile::load(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
        if let SceneSource::Spec(spec) = &mut cfg.scene {
            spec.seed = s;
        }
    }
    let out_dir: PathBuf = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| SkelError::invalid("out_dir", "no output directory given"))?;
    let scene = cfg.resolve_scene()?;
    let outcome = run_training(&cfg.train, &scene)?;
    io::ensure_dir(&out_dir)?;
    io::write_report(&outcome.report, &out_dir.join("report.json"))?;
    io::write_atomic(&out_dir.join("loss.csv"), io::loss_csv(&outcome.trace).as_bytes())?;
    io::write_json(&out_dir.join("joint_book.json"), &JointBookDocument::from_model(&outcome.model)?)?;
    write_joint_gradients_csv(
        &JointGradientVector {
            values: outcome.report.joint_gradients.clone(),
            accumulation_count: 1,
        },
        &out_dir.join("joint_gradients.csv"),
    )?;
    io::save_model(&outcome.model, &out_dir.join("model.json"))?;
    io::write_atomic(&out_dir.join("config.json"), cfg.to_json().as_bytes())?;
    let frames: Vec<usize> = (0..outcome.model.frame_count()).collect();
    io::export_ply_sequence(&outcome.model.warp_frames(&frames)?, &out_dir.join("frames"))?;
    Ok(outcome.report)
}

/// Replays a trained model, with explicit grown-joint rotations when an
/// overrides file is given, and writes one PLY per frame into `out`.
pub fn cmd_animate(model_path: &Path, overrides_path: Option<&Path>, out: &Path) -> Result<usize> {
    let model = io::load_model(model_path)?;
    let overrides = overrides_path.map(io::load_overrides).transpose()?;
    if let Some(o) = &overrides {
        o.validate(model.book.len(), model.frame_count())?;
    }
    let frames = (0..model.frame_count())
        .map(|f| model.warp_frame_with(f, overrides.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    io::export_ply_sequence(&frames, out)?;
    Ok(frames.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss_mode: LossMode,
    pub train_rmse: f64,
    pub held_out_rmse: Option<f64>,
    pub extra_joints: usize,
}

/// Reconstruction error of a trained model against a saved scene.
/// Correspondence error when the point counts agree, chamfer otherwise.
pub fn cmd_eval(model_path: &Path, scene_path: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let model = io::load_model(model_path)?;
    let scene = io::load_scene(scene_path)?;
    if model.frame_count() != scene.frame_count() {
        return Err(SkelError::ShapeMismatch(format!(
            "model has {} frames, scene has {}",
            model.frame_count(),
            scene.frame_count()
        )));
    }
    let mode = if model.cloud.len() == scene.point_count() {
        LossMode::Correspondence
    } else {
        LossMode::Chamfer
    };
    let held = scene.held_out_frames();
    let report = EvalReport {
        loss_mode: mode,
        train_rmse: evaluate_rmse(&model, &scene, &scene.train_frames(), mode)?,
        held_out_rmse: if held.is_empty() {
            None
        } else {
            Some(evaluate_rmse(&model, &scene, &held, mode)?)
        },
        extra_joints: model.book.len(),
    };
    if let Some(path) = out {
        io::write_json(path, &report)?;
    }
    Ok(report)
}
