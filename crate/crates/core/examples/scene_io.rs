//! Saves a scene as JSON plus binary sidecar, loads it back and exports a
//! frame as PLY.

use skelgrow::io;
use skelgrow::synth::{generate_scene, AttachmentSpec, SceneSpec};

fn main() -> skelgrow::Result<()> {
    let dir = std::env::temp_dir().join("skelgrow_scene_io");
    io::ensure_dir(&dir)?;
    let scene = generate_scene(&SceneSpec {
        attachments: vec![AttachmentSpec::cloth(1, 0.4)],
        frames: 20,
        seed: 9,
        ..SceneSpec::default()
    })?;
    let path = dir.join("scene.json");
    io::save_scene(&scene, &path)?;
    let back = io::load_scene(&path)?;
    println!(
        "saved {} and {}; round trip equal: {}",
        path.display(),
        io::sidecar_path(&path).display(),
        back == scene && back.observations == scene.observations
    );

    let ply = dir.join(io::frame_file_name(5));
    io::export_ply(&scene.observations[5], &ply)?;
    let read = io::read_ply(&ply)?;
    let err = read.iter().zip(&scene.observations[5]).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    println!("ply {} with {} points, max text round-trip error {err:.1e}", ply.display(), read.len());
    Ok(())
}
