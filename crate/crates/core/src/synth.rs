//! Synthetic scenes with known skeletons, attachments and observations.
//!
//! Body points sit on the bones of a base skeleton. Each attachment is a
//! group of points driven by a hidden extra joint that pivots near its host
//! and rotates on its own, which is exactly what plain LBS on the base
//! skeleton cannot express.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkelError};
use crate::kinematics::{forward_kinematics, joint_positions, warp_points, BasePose, JointTree, PoseSequence};
use crate::math::{exp_so3, Affine, Rotation, RowMatrix, Transform, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum Topology {
    /// Eight joints: pelvis, chest, right shoulder, right wrist, left
    /// shoulder, left wrist, right hip, left hip.
    #[default]
    Humanoid,
    /// A straight chain along +x.
    Chain { joints: usize, bone_length: f64 },
}


pub const HUMANOID_JOINT_NAMES: [&str; 8] = [
    "pelvis",
    "chest",
    "r_shoulder",
    "r_wrist",
    "l_shoulder",
    "l_wrist",
    "r_hip",
    "l_hip",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentKind {
    RigidObject,
    LooseCloth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentSpec {
    pub kind: AttachmentKind,
    pub host: usize,
    /// Peak angle of the attachment's own rotation, radians.
    pub amplitude: f64,
    #[serde(default = "default_attachment_points")]
    pub points: usize,
    /// Pivot relative to the host's rest position; defaults to a short step
    /// along the host bone.
    #[serde(default)]
    pub pivot_offset: Option<[f64; 3]>,
    /// Extent away from the pivot; 0.4 for objects, 0.35 for cloth.
    #[serde(default)]
    pub size: Option<f64>,
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    /// Canonical center of the attachment's points when it should not sit at
    /// the pivot, e.g. to place it next to an unrelated limb.
    #[serde(default)]
    pub anchor: Option<[f64; 3]>,
}

fn default_attachment_points() -> usize {
    150
}

fn default_direction() -> [f64; 3] {
    [0.0, -1.0, 0.0]
}

impl AttachmentSpec {
    pub fn rigid(host: usize, amplitude: f64) -> Self {
        AttachmentSpec {
            kind: AttachmentKind::RigidObject,
            host,
            amplitude,
            points: default_attachment_points(),
            pivot_offset: None,
            size: None,
            direction: default_direction(),
            anchor: None,
        }
    }

    /// A small rigid object driven by `host` and pivoting at the host's rest
    /// position, but lying over the start of bone `over`. Nearest-template
    /// skinning labels it with `over`; its motion follows `host`.
    pub fn offset_object(topology: &Topology, host: usize, over: usize, amplitude: f64) -> Result<Self> {
        let (start, end) = bone_segment(topology, over).ok_or(SkelError::IndexOutOfRange {
            index: over,
            len: skeleton(topology).rest.len(),
        })?;
        let dir = (end - start).normalize();
        let side = orthogonal(&dir);
        let center = start + dir * 0.015 + side * 0.05;
        Ok(AttachmentSpec {
            pivot_offset: Some([0.0; 3]),
            size: Some(0.04),
            direction: [dir.x, dir.y, dir.z],
            anchor: Some([center.x, center.y, center.z]),
            ..AttachmentSpec::rigid(host, amplitude)
        })
    }

    pub fn cloth(host: usize, amplitude: f64) -> Self {
        AttachmentSpec {
            kind: AttachmentKind::LooseCloth,
            ..AttachmentSpec::rigid(host, amplitude)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub topology: Topology,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_points_per_segment")]
    pub points_per_segment: usize,
    #[serde(default)]
    pub attachments: Vec<AttachmentSpec>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Fraction of a bone, from its start, whose points blend with the parent
    /// bone; the parent's share ramps up to one half at the joint.
    #[serde(default = "default_blend_span")]
    pub blend_span: f64,
    /// Peak base-joint rotation, radians.
    #[serde(default = "default_pose_amplitude")]
    pub pose_amplitude: f64,
    /// Every `held_out_stride`-th frame is withheld from training; 0 keeps all.
    #[serde(default = "default_stride")]
    pub held_out_stride: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_frames() -> usize {
    60
}
fn default_points_per_segment() -> usize {
    250
}
fn default_noise() -> f64 {
    1e-3
}
fn default_blend_span() -> f64 {
    0.3
}
fn default_pose_amplitude() -> f64 {
    0.5
}
fn default_stride() -> usize {
    10
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            topology: Topology::Humanoid,
            frames: default_frames(),
            points_per_segment: default_points_per_segment(),
            attachments: Vec::new(),
            noise_sigma: default_noise(),
            blend_span: default_blend_span(),
            pose_amplitude: default_pose_amplitude(),
            held_out_stride: default_stride(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn base_joint_count(&self) -> usize {
        match self.topology {
            Topology::Humanoid => 8,
            Topology::Chain { joints, .. } => joints,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(SkelError::invalid("frames", format!("need at least 2 frames, got {}", self.frames)));
        }
        if let Topology::Chain { joints, bone_length } = self.topology {
            if joints < 2 {
                return Err(SkelError::invalid("topology.joints", "need at least 2 base joints"));
            }
            if !(bone_length > 0.0 && bone_length.is_finite()) {
                return Err(SkelError::invalid("topology.bone_length", "must be positive"));
            }
        }
        if self.points_per_segment == 0 {
            return Err(SkelError::invalid("points_per_segment", "must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SkelError::invalid("noise_sigma", "must be finite and non-negative"));
        }
        if !(0.0..=0.5).contains(&self.blend_span) {
            return Err(SkelError::invalid("blend_span", "must lie in [0, 0.5]"));
        }
        if !(self.pose_amplitude >= 0.0 && self.pose_amplitude.is_finite()) {
            return Err(SkelError::invalid("pose_amplitude", "must be finite and non-negative"));
        }
        let k0 = self.base_joint_count();
        for (i, a) in self.attachments.iter().enumerate() {
            if a.host >= k0 {
                return Err(SkelError::invalid(format!("attachments[{i}].host"), format!("no base joint {}", a.host)));
            }
            if !(a.amplitude >= 0.0 && a.amplitude.is_finite()) {
                return Err(SkelError::invalid(format!("attachments[{i}].amplitude"), "must be finite and non-negative"));
            }
            if a.points == 0 {
                return Err(SkelError::invalid(format!("attachments[{i}].points"), "must be at least 1"));
            }
            if a.size.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
                return Err(SkelError::invalid(format!("attachments[{i}].size"), "must be positive"));
            }
            if Vec3::from(a.direction).norm() < 1e-9 {
                return Err(SkelError::invalid(format!("attachments[{i}].direction"), "must be nonzero"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "part", content = "index", rename_all = "snake_case")]
pub enum Part {
    Body,
    Attachment(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub part: Part,
    /// Base joint the point ultimately follows.
    pub host: usize,
    /// Joint with the largest true weight, grown joints included.
    pub joint: usize,
    /// True weight is one-hot, so the point moves rigidly with `joint`.
    pub rigid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    /// Base joints followed by one extra joint per attachment.
    pub tree: JointTree,
    pub poses: PoseSequence,
    /// `extra_rotations[attachment][frame]`, axis-angle.
    pub extra_rotations: Vec<Vec<Vec3>>,
    pub canonical: Vec<Vec3>,
    pub weights: RowMatrix,
    pub labels: Vec<PointLabel>,
    pub held_out: Vec<bool>,
    /// `observations[frame][point]`; stored in the binary sidecar on disk.
    #[serde(skip)]
    pub observations: Vec<Vec<Vec3>>,
}

impl SyntheticScene {
    pub fn base_count(&self) -> usize {
        self.tree.base_count()
    }

    pub fn point_count(&self) -> usize {
        self.canonical.len()
    }

    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn train_frames(&self) -> Vec<usize> {
        (0..self.frame_count()).filter(|&i| !self.held_out[i]).collect()
    }

    pub fn held_out_frames(&self) -> Vec<usize> {
        (0..self.frame_count()).filter(|&i| self.held_out[i]).collect()
    }

    /// Hosts of attachments that actually move on their own.
    pub fn true_parents(&self) -> Vec<usize> {
        let mut hosts: Vec<usize> = self.spec.attachments.iter().filter(|a| a.amplitude > 0.0).map(|a| a.host).collect();
        hosts.sort_unstable();
        hosts.dedup();
        hosts
    }

    /// Body points and their base-joint weights, used as the skinning template.
    pub fn template(&self) -> (Vec<Vec3>, RowMatrix) {
        let rows: Vec<usize> = (0..self.point_count()).filter(|&p| self.labels[p].part == Part::Body).collect();
        let pts = rows.iter().map(|&p| self.canonical[p]).collect();
        let w = self.weights.gather_rows(&rows).leading_columns(self.base_count());
        (pts, w)
    }

    pub fn extra_rotations_at(&self, frame: usize) -> Vec<Rotation> {
        self.extra_rotations.iter().map(|r| exp_so3(&r[frame])).collect()
    }

    pub fn transforms(&self, frame: usize) -> Result<Vec<Transform>> {
        forward_kinematics(&self.tree, self.poses.frame(frame), &self.extra_rotations_at(frame))
    }

    /// Noise-free warp of the true model at `frame`.
    pub fn true_warp(&self, frame: usize) -> Result<Vec<Vec3>> {
        let affines: Vec<Affine> = self.transforms(frame)?.iter().map(Transform::to_affine).collect();
        Ok(warp_points(&self.canonical, &self.weights, &affines))
    }

    /// Positions of every true joint at each of `frames`.
    pub fn joint_trajectories(&self, frames: &[usize]) -> Result<Vec<Vec<Vec3>>> {
        frames
            .iter()
            .map(|&f| Ok(joint_positions(&self.tree, &self.transforms(f)?)))
            .collect()
    }
}

/// Base joint labels per point: the joint a correct assignment would pick.
pub fn oracle_assignment(scene: &SyntheticScene) -> Vec<usize> {
    scene.labels.iter().map(|l| l.host).collect()
}

/// Rest-pose start and end of base bone `k`.
pub fn bone_segment(topology: &Topology, k: usize) -> Option<(Vec3, Vec3)> {
    let skel = skeleton(topology);
    (k < skel.rest.len()).then(|| (skel.rest[k], skel.bone_ends[k]))
}

struct Skeleton {
    parents: Vec<Option<usize>>,
    rest: Vec<Vec3>,
    bone_ends: Vec<Vec3>,
}

impl Skeleton {
    fn new(parents: Vec<Option<usize>>, rest: Vec<Vec3>, bone_ends: Vec<Vec3>) -> Self {
        Skeleton { parents, rest, bone_ends }
    }
}

fn skeleton(topology: &Topology) -> Skeleton {
    match *topology {
        Topology::Humanoid => {
            let v = Vec3::new;
            Skeleton::new(
                vec![None, Some(0), Some(1), Some(2), Some(1), Some(4), Some(0), Some(0)],
                vec![
                    v(0.0, 0.0, 0.0),
                    v(0.0, 0.3, 0.0),
                    v(-0.2, 0.45, 0.0),
                    v(-0.7, 0.45, 0.0),
                    v(0.2, 0.45, 0.0),
                    v(0.7, 0.45, 0.0),
                    v(-0.1, -0.05, 0.0),
                    v(0.1, -0.05, 0.0),
                ],
                vec![
                    v(0.0, 0.3, 0.0),
                    v(0.0, 0.7, 0.0),
                    v(-0.7, 0.45, 0.0),
                    v(-0.85, 0.45, 0.0),
                    v(0.7, 0.45, 0.0),
                    v(0.85, 0.45, 0.0),
                    v(-0.1, -0.85, 0.0),
                    v(0.1, -0.85, 0.0),
                ],
            )
        }
        Topology::Chain { joints, bone_length } => Skeleton::new(
            (0..joints).map(|k| k.checked_sub(1)).collect(),
            (0..joints).map(|k| Vec3::new(k as f64 * bone_length, 0.0, 0.0)).collect(),
            (0..joints).map(|k| Vec3::new((k + 1) as f64 * bone_length, 0.0, 0.0)).collect(),
        ),
    }
}

const BODY_RADIUS: f64 = 0.04;

/// Unit vector orthogonal to `d`.
fn orthogonal(d: &Vec3) -> Vec3 {
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    d.cross(&helper).normalize()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::from(UnitSphere.sample(rng))
}

/// `Σ_h c_h sin(2π f_h t + φ_h)` per axis.
struct Sinusoid {
    terms: Vec<(Vec3, f64, f64)>,
}

impl Sinusoid {
    fn eval(&self, t: f64) -> Vec3 {
        self.terms
            .iter()
            .map(|(c, f, phase)| c * (std::f64::consts::TAU * f * t + phase).sin())
            .fold(Vec3::zeros(), |a, b| a + b)
    }
}

fn base_motion(rng: &mut ChaCha8Rng, amplitude: f64) -> Sinusoid {
    let terms = [1.0, 2.0]
        .iter()
        .map(|&f| {
            let c = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * (0.5 * amplitude);
            (c, f, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    Sinusoid { terms }
}

fn attachment_motion(rng: &mut ChaCha8Rng, kind: AttachmentKind, amplitude: f64) -> Sinusoid {
    let u = random_unit(rng);
    let v = random_unit(rng);
    let (p1, p2) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
    let terms = match kind {
        AttachmentKind::RigidObject => vec![(u * (0.8 * amplitude), 1.0, p1), (v * (0.2 * amplitude), 2.0, p2)],
        // a slow sway about one axis
        AttachmentKind::LooseCloth => vec![(u * amplitude, 0.5, p1)],
    };
    Sinusoid { terms }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let skel = skeleton(&spec.topology);
    let k0 = skel.rest.len();
    let n_att = spec.attachments.len();
    let k_total = k0 + n_att;

    let mut canonical = Vec::new();
    let mut weight_rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();

    for k in 0..k0 {
        let (start, end) = (skel.rest[k], skel.bone_ends[k]);
        let axis = end - start;
        let dir = axis.normalize();
        let side = orthogonal(&dir);
        let up = dir.cross(&side);
        for _ in 0..spec.points_per_segment {
            let s: f64 = rng.gen_range(0.0..1.0);
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = BODY_RADIUS * rng.gen_range(0.3..1.0);
            canonical.push(start + axis * s + (side * ang.cos() + up * ang.sin()) * r);
            let mut row = vec![0.0; k_total];
            row[k] = 1.0;
            if let Some(parent) = skel.parents[k].filter(|_| s < spec.blend_span) {
                let w = 0.5 * (1.0 - s / spec.blend_span);
                row[parent] = w;
                row[k] -= w;
            }
            let rigid = row[k] == 1.0;
            weight_rows.push(row);
            labels.push(PointLabel {
                part: Part::Body,
                host: k,
                joint: k,
                rigid,
            });
        }
    }

    let mut tree = JointTree::new(skel.parents.clone(), skel.rest.clone())?;
    for (a_idx, a) in spec.attachments.iter().enumerate() {
        let host_rest = skel.rest[a.host];
        let bone_dir = (skel.bone_ends[a.host] - host_rest).normalize();
        let pivot = host_rest + a.pivot_offset.map_or(bone_dir * 0.08, Vec3::from);
        let joint = tree.push_extra(a.host, pivot)?;
        let dir = Vec3::from(a.direction).normalize();
        let side = orthogonal(&dir);
        let up = dir.cross(&side);
        let (size, centered) = match a.kind {
            AttachmentKind::RigidObject => (a.size.unwrap_or(0.4), pivot + dir * (0.5 * a.size.unwrap_or(0.4))),
            AttachmentKind::LooseCloth => (a.size.unwrap_or(0.35), pivot + dir * (0.5 * a.size.unwrap_or(0.35))),
        };
        let center = a.anchor.map_or(centered, Vec3::from);
        for _ in 0..a.points {
            let s: f64 = rng.gen_range(-0.5..0.5);
            let offset = match a.kind {
                AttachmentKind::RigidObject => {
                    let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (side * ang.cos() + up * ang.sin()) * (0.015 * rng.gen_range(0.0..1.0))
                }
                AttachmentKind::LooseCloth => side * rng.gen_range(-0.1..0.1) + up * rng.gen_range(-0.01..0.01),
            };
            canonical.push(center + dir * (s * size) + offset);
            let mut row = vec![0.0; k_total];
            row[joint] = 1.0;
            weight_rows.push(row);
            labels.push(PointLabel {
                part: Part::Attachment(a_idx),
                host: a.host,
                joint,
                rigid: true,
            });
        }
    }
    let weights = RowMatrix::from_rows(&weight_rows).ok_or_else(|| SkelError::ShapeMismatch("weights".into()))?;

    let timestamps = PoseSequence::uniform_timestamps(spec.frames);
    let motions: Vec<Sinusoid> = (0..k0)
        .map(|k| base_motion(&mut rng, if k == 0 { 0.3 * spec.pose_amplitude } else { spec.pose_amplitude }))
        .collect();
    let root_motion = base_motion(&mut rng, 0.1);
    let att_motions: Vec<Sinusoid> = spec.attachments.iter().map(|a| attachment_motion(&mut rng, a.kind, a.amplitude)).collect();
    let frames = timestamps
        .iter()
        .map(|&t| BasePose {
            rotations: motions.iter().map(|m| exp_so3(&m.eval(t))).collect(),
            root_translation: root_motion.eval(t),
        })
        .collect();
    let poses = PoseSequence::new(timestamps.clone(), frames)?;
    let extra_rotations: Vec<Vec<Vec3>> = att_motions.iter().map(|m| timestamps.iter().map(|&t| m.eval(t)).collect()).collect();
    let held_out = (0..spec.frames)
        .map(|i| spec.held_out_stride > 0 && (i + 1) % spec.held_out_stride == 0)
        .collect();

    let mut scene = SyntheticScene {
        spec: spec.clone(),
        tree,
        poses,
        extra_rotations,
        canonical,
        weights,
        labels,
        held_out,
        observations: Vec::new(),
    };
    let mut obs: Vec<Vec<Vec3>> = (0..spec.frames).into_par_iter().map(|f| scene.true_warp(f)).collect::<Result<_>>()?;
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma checked");
        for frame in obs.iter_mut() {
            for x in frame.iter_mut() {
                *x += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }
    scene.observations = obs;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::compute_motion_kernels;

    #[test]
    fn single_frame_is_rejected_naming_the_field() {
        let spec = SceneSpec {
            frames: 1,
            ..SceneSpec::default()
        };
        match generate_scene(&spec) {
            Err(SkelError::InvalidConfig { field, .. }) => assert_eq!(field, "frames"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_chain_is_rejected() {
        let spec = SceneSpec {
            topology: Topology::Chain { joints: 1, bone_length: 0.3 },
            ..SceneSpec::default()
        };
        assert!(generate_scene(&spec).is_err());
    }

    #[test]
    fn zero_amplitude_noiseless_scene_is_plain_lbs_of_base_joints() {
        let spec = SceneSpec {
            attachments: vec![AttachmentSpec::rigid(3, 0.0)],
            noise_sigma: 0.0,
            frames: 8,
            points_per_segment: 40,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.true_parents().is_empty());
        // the same points skinned to the host directly, no extra joint
        let mut w = scene.weights.leading_columns(scene.base_count());
        for (p, l) in scene.labels.iter().enumerate() {
            if let Part::Attachment(_) = l.part {
                w.set(p, l.host, 1.0);
            }
        }
        let base_tree = scene.tree.base_tree();
        for f in 0..spec.frames {
            let aff: Vec<Affine> = forward_kinematics(&base_tree, scene.poses.frame(f), &[])
                .unwrap()
                .iter()
                .map(Transform::to_affine)
                .collect();
            let plain = warp_points(&scene.canonical, &w, &aff);
            for (a, b) in plain.iter().zip(&scene.observations[f]) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rigid_object_is_rigid_to_its_joint_but_not_its_host() {
        let spec = SceneSpec {
            attachments: vec![AttachmentSpec::rigid(3, 0.6)],
            noise_sigma: 0.0,
            frames: 30,
            points_per_segment: 30,
            seed: 5,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let frames: Vec<usize> = (0..30).collect();
        let joints = scene.joint_trajectories(&frames).unwrap();
        let mk = compute_motion_kernels(&scene.observations, &joints).unwrap();
        for (p, l) in scene.labels.iter().enumerate() {
            if l.rigid {
                assert!(mk.get(p, l.joint) < 1e-9, "point {p}: {}", mk.get(p, l.joint));
            }
            if let Part::Attachment(_) = l.part {
                let lever = (scene.canonical[p] - scene.tree.rest_position(l.joint)).norm();
                assert!(mk.get(p, l.host) > 0.0);
                if lever > 0.1 {
                    assert!(mk.get(p, l.host) > 1e-6, "point {p}: {}", mk.get(p, l.host));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec {
            attachments: vec![AttachmentSpec::cloth(6, 0.3), AttachmentSpec::cloth(7, 0.3)],
            frames: 10,
            points_per_segment: 20,
            seed: 42,
            ..SceneSpec::default()
        };
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.observations, b.observations);
    }

    #[test]
    fn noise_matches_requested_sigma() {
        let spec = SceneSpec {
            frames: 10,
            noise_sigma: 1e-3,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let mut sq = 0.0;
        let mut n = 0;
        for f in 0..10 {
            for (a, b) in scene.true_warp(f).unwrap().iter().zip(&scene.observations[f]) {
                sq += (a - b).norm_squared();
                n += 3;
            }
        }
        let sigma = (sq / n as f64).sqrt();
        assert!((sigma - 1e-3).abs() < 5e-5, "{sigma}");
    }

    #[test]
    fn labels_cover_every_point_and_match_true_weights() {
        let spec = SceneSpec {
            attachments: vec![AttachmentSpec::rigid(5, 0.4)],
            frames: 4,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(scene.labels.len(), scene.point_count());
        let argmax = scene.weights.row_argmax();
        for (p, l) in scene.labels.iter().enumerate() {
            assert_eq!(argmax[p], l.joint);
        }
        let oracle = oracle_assignment(&scene);
        assert!(oracle.iter().all(|&h| h < scene.base_count()));
    }

    #[test]
    fn held_out_mask_takes_every_tenth_frame() {
        let scene = generate_scene(&SceneSpec {
            frames: 30,
            points_per_segment: 5,
            ..SceneSpec::default()
        })
        .unwrap();
        assert_eq!(scene.held_out_frames(), vec![9, 19, 29]);
        assert_eq!(scene.train_frames().len(), 27);
    }
}
