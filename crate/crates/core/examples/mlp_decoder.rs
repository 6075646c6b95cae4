//! Keyframe table versus MLP decoder for the grown joint, scored on frames
//! held out from training.

use skelgrow::growth::{DecoderKind, MlpDecoderConfig};
use skelgrow::synth::{generate_scene, AttachmentSpec, SceneSpec};
use skelgrow::trainer::{run_training, TrainConfig};

fn main() -> skelgrow::Result<()> {
    let scene = generate_scene(&SceneSpec {
        attachments: vec![AttachmentSpec::rigid(6, 0.6)],
        points_per_segment: 60,
        frames: 60,
        seed: 13,
        ..SceneSpec::default()
    })?;
    let base = TrainConfig {
        warmup_iters: 150,
        total_iters: 1200,
        seed: 13,
        ..TrainConfig::default()
    };
    let mlp = DecoderKind::Mlp(MlpDecoderConfig {
        position_width: 64,
        rotation_width: 64,
        ..MlpDecoderConfig::default()
    });
    let runs = [
        ("no growth", TrainConfig { growth: false, ..base.clone() }),
        ("table", TrainConfig { decoder: DecoderKind::Table, ..base.clone() }),
        ("mlp", TrainConfig { decoder: mlp, ..base }),
    ];
    for (name, cfg) in runs {
        let r = run_training(&cfg, &scene)?.report;
        println!(
            "{name:>9}: train rmse {:.3e}, held-out rmse {:.3e}, grown {:?}",
            r.train_rmse,
            r.held_out_rmse.unwrap_or(f64::NAN),
            r.grown
        );
    }
    Ok(())
}
