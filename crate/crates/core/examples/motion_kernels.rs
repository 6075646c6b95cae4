//! Point-to-joint assignment from motion kernels: how steadily each point
//! keeps its distance to each joint. Compares the hybrid assignment with
//! plain blend weights on scenes where an object sits next to a neighbouring
//! bone but follows its own host.

use skelgrow::assignment::{hybrid_weights, mk_weights, DEFAULT_MK_EPS};
use skelgrow::kinematics::effective_blend_weights;
use skelgrow::synth::{generate_scene, oracle_assignment, AttachmentSpec, Part, SceneSpec, Topology, HUMANOID_JOINT_NAMES};
use skelgrow::trainer::{TrainConfig, Trainer};

fn main() -> skelgrow::Result<()> {
    for (host, over) in [(0, 1), (2, 3), (4, 5)] {
        let scene = generate_scene(&SceneSpec {
            attachments: vec![AttachmentSpec::offset_object(&Topology::Humanoid, host, over, 0.6)?],
            ..SceneSpec::default()
        })?;
        let tr = Trainer::new(TrainConfig::default(), &scene)?;
        let lbs = effective_blend_weights(&tr.model.cloud).leading_columns(scene.base_count());
        let mk = tr.motion_kernels()?;
        let hybrid = hybrid_weights(&mk_weights(&mk, DEFAULT_MK_EPS)?, &lbs, 0.4)?;
        let (h, l) = (hybrid.row_argmax(), lbs.row_argmax());
        let oracle = oracle_assignment(&scene);

        let object: Vec<usize> = (0..scene.point_count())
            .filter(|&p| matches!(scene.labels[p].part, Part::Attachment(_)))
            .collect();
        let hits = |a: &[usize], pts: &[usize]| pts.iter().filter(|&&p| a[p] == oracle[p]).count() as f64 / pts.len() as f64;
        let all: Vec<usize> = (0..scene.point_count()).collect();
        let p = object[0];
        println!(
            "object on {} placed over {}: accuracy hybrid {:.3} lbs {:.3}; object points hybrid {:.3} lbs {:.3}",
            HUMANOID_JOINT_NAMES[host],
            HUMANOID_JOINT_NAMES[over],
            hits(&h, &all),
            hits(&l, &all),
            hits(&h, &object),
            hits(&l, &object)
        );
        println!(
            "  sample object point: mk to host {:.2e}, to neighbour {:.2e}",
            mk.get(p, host),
            mk.get(p, over)
        );
    }
    Ok(())
}
