//! The adaptive cloning threshold, then a chamfer-loss run with density
//! control on a deliberately small point budget.

use skelgrow::synth::{generate_scene, AttachmentSpec, SceneSpec};
use skelgrow::trainer::{run_training, update_densify_threshold, DensifyConfig, DensifyController, LossMode, TrainConfig};

fn main() -> skelgrow::Result<()> {
    let cfg = DensifyConfig {
        enabled: true,
        max_points: 600,
        b: 200.0,
        ..DensifyConfig::default()
    };
    let mut ctrl = DensifyController::new(&cfg);
    println!("points   eps_d");
    for n in [100, 599, 600, 700, 1000, 2000] {
        println!("{n:6}   {:.3e}", update_densify_threshold(&mut ctrl, n));
    }

    let scene = generate_scene(&SceneSpec {
        attachments: vec![AttachmentSpec::rigid(3, 0.6)],
        points_per_segment: 60,
        frames: 60,
        seed: 12,
        ..SceneSpec::default()
    })?;
    let out = run_training(
        &TrainConfig {
            loss_mode: LossMode::Chamfer,
            warmup_iters: 150,
            total_iters: 600,
            densify: cfg,
            seed: 12,
            ..TrainConfig::default()
        },
        &scene,
    )?;
    for r in out.trace.iter().step_by(100) {
        println!(
            "iter {:4} {:>7}: loss {:.3e}, points {}, eps_d {:.2e}",
            r.iteration,
            r.phase.name(),
            r.loss,
            r.point_count,
            r.eps_d
        );
    }
    println!("final points {}, grown {:?}", out.report.point_count, out.report.grown);
    Ok(())
}
