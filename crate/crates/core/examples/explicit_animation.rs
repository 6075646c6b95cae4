//! Trains a model, then animates it with hand-written rotations for the
//! grown joint while the body stays in its first pose. Writes PLY frames to
//! the directory given as the first argument.

use std::path::PathBuf;

use skelgrow::growth::RotationOverrides;
use skelgrow::io::{self, JointBookDocument};
use skelgrow::math::Vec3;
use skelgrow::synth::{generate_scene, AttachmentSpec, SceneSpec};
use skelgrow::trainer::{run_training, TrainConfig};

fn main() -> skelgrow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "animation".into()));
    let scene = generate_scene(&SceneSpec {
        attachments: vec![AttachmentSpec::rigid(5, 0.6)],
        points_per_segment: 40,
        frames: 30,
        ..SceneSpec::default()
    })?;
    let trained = run_training(
        &TrainConfig {
            warmup_iters: 80,
            total_iters: 300,
            ..TrainConfig::default()
        },
        &scene,
    )?;
    let model = trained.model;
    println!("grown under {:?}", model.book.parents());

    let book = JointBookDocument::from_model(&model)?;
    for r in &book.entries {
        println!("joint under {}: canonical {:.3?}", r.parent, r.canonical_position);
    }

    // the decoder's own rotations fed back in reproduce the plain replay
    let decoded = book.to_overrides();
    let same = (0..model.frame_count()).all(|f| model.warp_frame(f).ok() == model.warp_frame_with(f, Some(&decoded)).ok());
    println!("decoded overrides replay identically: {same}");

    let frames = model.frame_count();
    let swing = RotationOverrides {
        per_entry: vec![(0..frames).map(|f| Vec3::new(0.0, 0.0, 0.8 * (f as f64 * 0.3).sin())).collect(); model.book.len()],
        freeze_base_frame: Some(0),
    };
    swing.validate(model.book.len(), frames)?;
    let clouds = (0..frames).map(|f| model.warp_frame_with(f, Some(&swing))).collect::<skelgrow::Result<Vec<_>>>()?;
    let written = io::export_ply_sequence(&clouds, &out)?;
    io::write_json(&out.join("overrides.json"), &swing)?;
    println!("wrote {} frames to {}", written.len(), out.display());
    Ok(())
}
