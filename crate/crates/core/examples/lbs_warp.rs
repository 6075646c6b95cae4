//! Forward kinematics and linear blend skinning on a generated scene, using
//! the generator's own weights and joint tree.

use skelgrow::kinematics::{forward_kinematics, lbs_warp, BasePose, CanonicalCloud};
use skelgrow::math::Rotation;
use skelgrow::synth::{generate_scene, AttachmentSpec, SceneSpec};

fn max_diff(a: &[skelgrow::math::Vec3], b: &[skelgrow::math::Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn main() -> skelgrow::Result<()> {
    let scene = generate_scene(&SceneSpec {
        attachments: vec![AttachmentSpec::rigid(3, 0.6), AttachmentSpec::cloth(1, 0.4)],
        ..SceneSpec::default()
    })?;
    println!(
        "{} points, {} base joints + {} extra, {} frames",
        scene.point_count(),
        scene.base_count(),
        scene.tree.extra_count(),
        scene.frame_count()
    );

    // a prior equal to the true weights with zero logits reproduces them exactly
    let cloud = CanonicalCloud::new(scene.canonical.clone(), scene.weights.clone())?;
    let still = vec![Rotation::identity(); scene.tree.extra_count()];
    let rest = forward_kinematics(&scene.tree, &BasePose::identity(scene.base_count()), &still)?;
    println!("identity pose error {:.2e}", max_diff(&lbs_warp(&cloud, &rest)?, &scene.canonical));

    for f in [0, scene.frame_count() / 2, scene.frame_count() - 1] {
        let warped = lbs_warp(&cloud, &scene.transforms(f)?)?;
        let moved = max_diff(&warped, &scene.canonical);
        println!(
            "frame {f:3}: max displacement {moved:.3}, error vs observation {:.2e}",
            max_diff(&warped, &scene.observations[f])
        );
    }
    Ok(())
}
