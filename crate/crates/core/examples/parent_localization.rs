//! Warm-up on a noisy scene, then per-joint gradient accumulation to find
//! which joint needs an extra child.

use skelgrow::growth::gradient_contrast;
use skelgrow::synth::{generate_scene, AttachmentSpec, SceneSpec, HUMANOID_JOINT_NAMES};
use skelgrow::trainer::{TrainConfig, Trainer};

fn main() -> skelgrow::Result<()> {
    let host: usize = std::env::args().nth(1).map_or(6, |s| s.parse().expect("host joint"));
    let scene = generate_scene(&SceneSpec {
        attachments: vec![AttachmentSpec::rigid(host, 0.6)],
        points_per_segment: 60,
        frames: 60,
        noise_sigma: 1e-3,
        seed: 7,
        ..SceneSpec::default()
    })?;
    let config = TrainConfig {
        warmup_iters: 150,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(config.clone(), &scene)?;
    for i in 0..config.warmup_iters {
        let loss = tr.train_step()?;
        if i % 50 == 0 {
            println!("warm-up {i:4}: loss {loss:.3e}");
        }
    }

    let analysis = tr.analyze_growth()?;
    let g = &analysis.joint_gradients;
    for (j, v) in g.values.iter().enumerate() {
        let mark = if analysis.selected.contains(&j) { "  <- selected" } else { "" };
        println!("{:>10} {v:.3e}{mark}", HUMANOID_JOINT_NAMES[j]);
    }
    println!("contrast {:.1}, true host {}", gradient_contrast(g), HUMANOID_JOINT_NAMES[host]);
    Ok(())
}
