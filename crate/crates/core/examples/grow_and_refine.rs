//! Full pipeline on a humanoid holding a swinging stick in the right hand:
//! warm-up, parent localization, growth and refinement, compared with the
//! same run without growth.

use std::time::Instant;

use skelgrow::synth::{generate_scene, AttachmentSpec, SceneSpec, HUMANOID_JOINT_NAMES};
use skelgrow::trainer::{run_training, TrainConfig};

fn main() -> skelgrow::Result<()> {
    let noise = std::env::args().nth(1).map_or(0.0, |s| s.parse().expect("noise sigma"));
    let seed = std::env::args().nth(2).map_or(1, |s| s.parse().expect("seed"));
    let scene = generate_scene(&SceneSpec {
        attachments: vec![AttachmentSpec::rigid(3, 0.6)],
        noise_sigma: noise,
        seed,
        ..SceneSpec::default()
    })?;
    let config = TrainConfig {
        warmup_iters: 300,
        total_iters: 2300,
        seed,
        ..TrainConfig::default()
    };

    let start = Instant::now();
    let full = run_training(&config, &scene)?;
    println!("full run: {:.1?}", start.elapsed());
    let names: Vec<&str> = full.report.grown.iter().map(|&j| HUMANOID_JOINT_NAMES[j]).collect();
    println!("selected parents: {:?} {:?}", full.report.grown, names);
    let g: Vec<String> = full.report.joint_gradients.iter().map(|v| format!("{v:.3e}")).collect();
    println!("joint gradients: [{}]", g.join(", "));
    let book = &full.model.book;
    for (i, e) in book.entries.iter().enumerate() {
        println!(
            "extra joint {} under {}: canonical {:.3?} (true pivot {:.3?})",
            e.joint,
            e.parent,
            book.canonical_position(&full.model.tree, i)?.as_slice(),
            scene.tree.rest_position(scene.base_count() + i).as_slice()
        );
    }

    let baseline = run_training(&TrainConfig { growth: false, ..config }, &scene)?;
    let (f, b) = (full.report.held_out_rmse.unwrap(), baseline.report.held_out_rmse.unwrap());
    println!("held-out rmse: grown {f:.3e}, no growth {b:.3e}, ratio {:.1}", b / f);
    println!("train rmse: grown {:.3e}, no growth {:.3e}", full.report.train_rmse, baseline.report.train_rmse);
    Ok(())
}
