//! Joint tree, pose sequences, forward kinematics and linear blend skinning.

use kiddo::{KdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkelError};
use crate::math::{compose, Affine, Rotation, RowMatrix, Transform, Vec3};

/// Prior value used for grown-joint columns when forming effective weights.
/// The stored prior keeps zeros there so it stays row-stochastic.
pub const EXTRA_PRIOR: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJointTree")]
pub struct JointTree {
    parents: Vec<Option<usize>>,
    rest: Vec<Vec3>,
    base_count: usize,
}

#[derive(Deserialize)]
struct RawJointTree {
    parents: Vec<Option<usize>>,
    rest: Vec<Vec3>,
    base_count: usize,
}

impl TryFrom<RawJointTree> for JointTree {
    type Error = SkelError;
    fn try_from(raw: RawJointTree) -> Result<Self> {
        let base_parents = raw.parents[..raw.base_count.min(raw.parents.len())].to_vec();
        let base_rest = raw.rest[..raw.base_count.min(raw.rest.len())].to_vec();
        let mut tree = JointTree::new(base_parents, base_rest)?;
        if raw.parents.len() != raw.rest.len() {
            return Err(SkelError::ShapeMismatch("joint parents vs rest positions".into()));
        }
        for k in raw.base_count..raw.parents.len() {
            let parent = raw.parents[k].ok_or_else(|| SkelError::invalid("parents", "grown joint without parent"))?;
            tree.push_extra(parent, raw.rest[k])?;
        }
        Ok(tree)
    }
}

impl JointTree {
    /// Base skeleton. Joint 0 must be the only root and every parent index
    /// must precede its child.
    pub fn new(parents: Vec<Option<usize>>, rest: Vec<Vec3>) -> Result<Self> {
        if parents.is_empty() {
            return Err(SkelError::invalid("parents", "joint tree is empty"));
        }
        if parents.len() != rest.len() {
            return Err(SkelError::ShapeMismatch(format!(
                "{} parents but {} rest positions",
                parents.len(),
                rest.len()
            )));
        }
        for (k, p) in parents.iter().enumerate() {
            match (k, p) {
                (0, None) => {}
                (0, Some(_)) => return Err(SkelError::invalid("parents", "joint 0 must be the root")),
                (_, None) => return Err(SkelError::invalid("parents", format!("joint {k} is a second root"))),
                (_, Some(p)) if *p >= k => {
                    return Err(SkelError::invalid("parents", format!("parent {p} of joint {k} is not earlier in order")))
                }
                _ => {}
            }
        }
        if rest.iter().any(|r| !r.iter().all(|c| c.is_finite())) {
            return Err(SkelError::invalid("rest", "non-finite rest position"));
        }
        let base_count = parents.len();
        Ok(JointTree {
            parents,
            rest,
            base_count,
        })
    }

    /// Total joint count `K`.
    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Joints present before any growth (`K⁰`).
    pub fn base_count(&self) -> usize {
        self.base_count
    }

    pub fn extra_count(&self) -> usize {
        self.parents.len() - self.base_count
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parents[k]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_position(&self, k: usize) -> Vec3 {
        self.rest[k]
    }

    pub fn rest_positions(&self) -> &[Vec3] {
        &self.rest
    }

    pub fn is_base(&self, k: usize) -> bool {
        k < self.base_count
    }

    pub fn children(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(k))
            .map(|(c, _)| c)
    }

    /// Appends a grown joint under a base joint and returns its index.
    pub fn push_extra(&mut self, parent: usize, rest: Vec3) -> Result<usize> {
        if parent >= self.base_count {
            return Err(SkelError::NotBaseJoint(parent));
        }
        self.parents.push(Some(parent));
        self.rest.push(rest);
        Ok(self.parents.len() - 1)
    }

    pub(crate) fn set_rest_position(&mut self, k: usize, rest: Vec3) {
        self.rest[k] = rest;
    }

    /// Copy of the tree restricted to its base joints.
    pub fn base_tree(&self) -> JointTree {
        JointTree {
            parents: self.parents[..self.base_count].to_vec(),
            rest: self.rest[..self.base_count].to_vec(),
            base_count: self.base_count,
        }
    }
}

/// Local rotations of the base joints plus the root translation for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub rotations: Vec<Rotation>,
    pub root_translation: Vec3,
}

impl BasePose {
    pub fn identity(joints: usize) -> Self {
        BasePose {
            rotations: vec![Rotation::identity(); joints],
            root_translation: Vec3::zeros(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoseSequence")]
pub struct PoseSequence {
    timestamps: Vec<f64>,
    frames: Vec<BasePose>,
}

#[derive(Deserialize)]
struct RawPoseSequence {
    timestamps: Vec<f64>,
    frames: Vec<BasePose>,
}

impl TryFrom<RawPoseSequence> for PoseSequence {
    type Error = SkelError;
    fn try_from(raw: RawPoseSequence) -> Result<Self> {
        PoseSequence::new(raw.timestamps, raw.frames)
    }
}

impl PoseSequence {
    pub fn new(timestamps: Vec<f64>, frames: Vec<BasePose>) -> Result<Self> {
        if timestamps.len() != frames.len() {
            return Err(SkelError::ShapeMismatch(format!(
                "{} timestamps for {} frames",
                timestamps.len(),
                frames.len()
            )));
        }
        if timestamps.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(SkelError::invalid("timestamps", "must lie in [0, 1]"));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SkelError::invalid("timestamps", "must be strictly increasing"));
        }
        if let Some(first) = frames.first() {
            let joints = first.rotations.len();
            if frames.iter().any(|f| f.rotations.len() != joints) {
                return Err(SkelError::MalformedPose("frames disagree on joint count".into()));
            }
        }
        Ok(PoseSequence { timestamps, frames })
    }

    /// Evenly spaced timestamps `i / (n - 1)` (a single frame gets 0).
    pub fn uniform_timestamps(n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![0.0; n];
        }
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn frame(&self, i: usize) -> &BasePose {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[BasePose] {
        &self.frames
    }
}

/// Global transform of every joint.
///
/// Each local rotation pivots about the joint's own rest position, so a
/// joint's global map sends canonical points to the posed frame:
/// `G_k = G_parent(k) ∘ L_k`. Grown joints take their rotations from `extra`.
pub fn forward_kinematics(tree: &JointTree, base: &BasePose, extra: &[Rotation]) -> Result<Vec<Transform>> {
    if base.rotations.len() != tree.base_count() {
        return Err(SkelError::MalformedPose(format!(
            "{} base rotations for {} base joints",
            base.rotations.len(),
            tree.base_count()
        )));
    }
    if extra.len() != tree.extra_count() {
        return Err(SkelError::MalformedPose(format!(
            "{} extra rotations for {} grown joints",
            extra.len(),
            tree.extra_count()
        )));
    }
    let mut globals: Vec<Transform> = Vec::with_capacity(tree.len());
    for k in 0..tree.len() {
        let rot = if k < tree.base_count() {
            base.rotations[k]
        } else {
            extra[k - tree.base_count()]
        };
        let mut local = Transform::about_pivot(rot, &tree.rest_position(k));
        let global = match tree.parent(k) {
            Some(p) => compose(&globals[p], &local),
            None => {
                local.translation += base.root_translation;
                local
            }
        };
        globals.push(global);
    }
    Ok(globals)
}

/// Posed joint locations `G_k(j_k)`.
pub fn joint_positions(tree: &JointTree, transforms: &[Transform]) -> Vec<Vec3> {
    transforms
        .iter()
        .zip(tree.rest_positions())
        .map(|(t, r)| t.apply(r))
        .collect()
}

/// Canonical point cloud with skinning prior and learnable correction logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalCloud {
    pub(crate) positions: Vec<Vec3>,
    pub(crate) blend_weight: RowMatrix,
    pub(crate) correction_logits: RowMatrix,
    pub(crate) base_joints: usize,
}

impl CanonicalCloud {
    /// Cloud with the given prior weights and zero correction.
    pub fn new(positions: Vec<Vec3>, prior: RowMatrix) -> Result<Self> {
        if positions.is_empty() {
            return Err(SkelError::invalid("positions", "cloud needs at least one point"));
        }
        if prior.rows() != positions.len() {
            return Err(SkelError::ShapeMismatch(format!(
                "{} points but {} weight rows",
                positions.len(),
                prior.rows()
            )));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(SkelError::invalid("positions", "non-finite coordinate"));
        }
        for (p, row) in prior.row_iter().enumerate() {
            if row.iter().any(|w| !(*w >= 0.0)) {
                return Err(SkelError::invalid("blend_weight", format!("row {p} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(SkelError::invalid("blend_weight", format!("row {p} sums to {s}")));
            }
        }
        let logits = RowMatrix::zeros(prior.rows(), prior.cols());
        let base_joints = prior.cols();
        Ok(CanonicalCloud {
            positions,
            blend_weight: prior,
            correction_logits: logits,
            base_joints,
        })
    }

    /// Prior taken from the nearest template vertex (top-1 neighbour) of each
    /// point, the way a body-model prior is transferred to free points.
    pub fn with_nearest_prior(positions: Vec<Vec3>, template: &[Vec3], template_weights: &RowMatrix) -> Result<Self> {
        if template.is_empty() || template.len() != template_weights.rows() {
            return Err(SkelError::ShapeMismatch("template positions vs template weights".into()));
        }
        let prior = nearest_prior(&positions, template, template_weights);
        Self::new(positions, prior)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.blend_weight.cols()
    }

    pub fn base_joints(&self) -> usize {
        self.base_joints
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [Vec3] {
        &mut self.positions
    }

    pub fn prior(&self) -> &RowMatrix {
        &self.blend_weight
    }

    pub fn logits(&self) -> &RowMatrix {
        &self.correction_logits
    }

    pub fn logits_mut(&mut self) -> &mut RowMatrix {
        &mut self.correction_logits
    }

    pub(crate) fn prior_factor(&self, p: usize, k: usize) -> f64 {
        if k < self.base_joints {
            self.blend_weight.get(p, k)
        } else {
            EXTRA_PRIOR
        }
    }

    /// Rows reordered/duplicated according to `sources`.
    pub fn gather(&self, sources: &[usize]) -> CanonicalCloud {
        CanonicalCloud {
            positions: sources.iter().map(|&s| self.positions[s]).collect(),
            blend_weight: self.blend_weight.gather_rows(sources),
            correction_logits: self.correction_logits.gather_rows(sources),
            base_joints: self.base_joints,
        }
    }
}

pub(crate) fn nearest_prior(positions: &[Vec3], template: &[Vec3], template_weights: &RowMatrix) -> RowMatrix {
    let mut tree: KdTree<f64, 3> = KdTree::with_capacity(template.len());
    for (i, t) in template.iter().enumerate() {
        tree.add(&[t.x, t.y, t.z], i as u64);
    }
    let sources: Vec<usize> = positions
        .iter()
        .map(|p| tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]).item as usize)
        .collect();
    template_weights.gather_rows(&sources)
}

/// Row-normalized `prior ⊙ exp(logits)`, with grown-joint columns using a
/// uniform prior. Exponents are shifted by the row maximum so the result is
/// row-stochastic for any logit magnitude.
pub fn effective_blend_weights(cloud: &CanonicalCloud) -> RowMatrix {
    let k = cloud.joint_count();
    let mut out = RowMatrix::zeros(cloud.len(), k);
    for p in 0..cloud.len() {
        effective_row(cloud, p, out.row_mut(p));
    }
    out
}

pub(crate) fn effective_row(cloud: &CanonicalCloud, p: usize, out: &mut [f64]) {
    let logits = cloud.correction_logits.row(p);
    let mut max = f64::NEG_INFINITY;
    for (j, &l) in logits.iter().enumerate() {
        if cloud.prior_factor(p, j) > 0.0 && l > max {
            max = l;
        }
    }
    let mut sum = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        let prior = cloud.prior_factor(p, j);
        *o = if prior > 0.0 { prior * (logits[j] - max).exp() } else { 0.0 };
        sum += *o;
    }
    if sum > 0.0 && sum.is_finite() {
        out.iter_mut().for_each(|o| *o /= sum);
    } else {
        // unreachable for a valid prior; fall back to it rather than emit NaN
        for (j, o) in out.iter_mut().enumerate() {
            *o = cloud.prior().row(p).get(j).copied().unwrap_or(0.0);
        }
    }
}

/// `x_o = Σ_k ω_k (R_k x_c + t_k)` with the cloud's effective weights.
pub fn lbs_warp(cloud: &CanonicalCloud, transforms: &[Transform]) -> Result<Vec<Vec3>> {
    if transforms.len() != cloud.joint_count() {
        return Err(SkelError::ShapeMismatch(format!(
            "{} transforms for {} joints",
            transforms.len(),
            cloud.joint_count()
        )));
    }
    let affines: Vec<Affine> = transforms.iter().map(Transform::to_affine).collect();
    let weights = effective_blend_weights(cloud);
    Ok(warp_points(&cloud.positions, &weights, &affines))
}

/// Blend of per-joint rigid maps with explicit weights. Zero weights are
/// skipped, so an identity map reproduces the input bit-exactly.
pub fn warp_points(positions: &[Vec3], weights: &RowMatrix, affines: &[Affine]) -> Vec<Vec3> {
    positions
        .iter()
        .enumerate()
        .map(|(p, x)| {
            let mut acc = Vec3::zeros();
            for (k, &w) in weights.row(p).iter().enumerate() {
                if w != 0.0 {
                    acc += affines[k].apply(x) * w;
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::exp_so3;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> JointTree {
        JointTree::new(vec![None, Some(0)], vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0)]).unwrap()
    }

    fn random_rot(rng: &mut impl Rng) -> Rotation {
        exp_so3(&Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
    }

    #[test]
    fn tree_validation() {
        assert!(JointTree::new(vec![None, None], vec![Vec3::zeros(); 2]).is_err());
        assert!(JointTree::new(vec![None, Some(1)], vec![Vec3::zeros(); 2]).is_err());
        assert!(JointTree::new(vec![Some(0)], vec![Vec3::zeros()]).is_err());
        let mut t = chain();
        assert!(matches!(t.push_extra(5, Vec3::zeros()), Err(SkelError::NotBaseJoint(5))));
        let e = t.push_extra(1, Vec3::zeros()).unwrap();
        assert_eq!(e, 2);
        assert!(t.push_extra(e, Vec3::zeros()).is_err());
    }

    #[test]
    fn identity_pose_keeps_joints_at_rest() {
        let tree = chain();
        let g = forward_kinematics(&tree, &BasePose::identity(2), &[]).unwrap();
        for t in &g {
            assert_eq!(t.rotation, Rotation::identity());
            assert_eq!(t.translation, Vec3::zeros());
        }
        assert_eq!(joint_positions(&tree, &g), tree.rest_positions());
    }

    #[test]
    fn two_joint_chain_hand_value() {
        let tree = chain();
        let mut pose = BasePose::identity(2);
        pose.rotations[0] = exp_so3(&Vec3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        let g = forward_kinematics(&tree, &pose, &[]).unwrap();
        assert_abs_diff_eq!(g[1].apply(&tree.rest_position(1)), Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn identity_extra_joint_follows_parent() {
        let mut tree = chain();
        tree.push_extra(1, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = BasePose {
            rotations: vec![random_rot(&mut rng), random_rot(&mut rng)],
            root_translation: Vec3::new(0.1, 0.2, 0.3),
        };
        let g = forward_kinematics(&tree, &pose, &[Rotation::identity()]).unwrap();
        assert_eq!(g[2], g[1]);
    }

    #[test]
    fn pose_count_mismatch_is_rejected() {
        let tree = chain();
        assert!(matches!(
            forward_kinematics(&tree, &BasePose::identity(3), &[]),
            Err(SkelError::MalformedPose(_))
        ));
        assert!(matches!(
            forward_kinematics(&tree, &BasePose::identity(2), &[Rotation::identity()]),
            Err(SkelError::MalformedPose(_))
        ));
    }

    #[test]
    fn extension_keeps_base_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = chain();
        let pose = BasePose {
            rotations: vec![random_rot(&mut rng), random_rot(&mut rng)],
            root_translation: Vec3::new(1.0, -1.0, 0.5),
        };
        let before = forward_kinematics(&base, &pose, &[]).unwrap();
        let mut grown = base.clone();
        grown.push_extra(0, Vec3::new(0.3, 0.0, 0.0)).unwrap();
        grown.push_extra(1, Vec3::new(0.0, 0.4, 1.0)).unwrap();
        let after = forward_kinematics(&grown, &pose, &[random_rot(&mut rng), random_rot(&mut rng)]).unwrap();
        assert_eq!(&after[..2], &before[..]);
    }

    #[test]
    fn warp_examples() {
        let prior = RowMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let x = Vec3::new(0.2, -0.4, 1.0);
        let cloud = CanonicalCloud::new(vec![x], prior).unwrap();
        let id = lbs_warp(&cloud, &[Transform::identity(), Transform::identity()]).unwrap();
        assert_eq!(id[0], x);
        let moved = lbs_warp(
            &cloud,
            &[
                Transform::from_translation(Vec3::new(1.0, 0.0, 0.0)),
                Transform::from_translation(Vec3::new(0.0, 1.0, 0.0)),
            ],
        )
        .unwrap();
        assert_abs_diff_eq!(moved[0], x + Vec3::new(0.5, 0.5, 0.0), epsilon = 1e-15);

        let one_hot = CanonicalCloud::new(vec![x], RowMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap()).unwrap();
        let t = Transform::new(exp_so3(&Vec3::new(0.1, 0.7, -0.3)), Vec3::new(2.0, 0.0, 1.0));
        let out = lbs_warp(&one_hot, &[Transform::identity(), t]).unwrap();
        assert_abs_diff_eq!(out[0], t.apply(&x), epsilon = 1e-15);
    }

    #[test]
    fn effective_weights_examples() {
        let prior = RowMatrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let mut cloud = CanonicalCloud::new(vec![Vec3::zeros(); 2], prior.clone()).unwrap();
        assert_eq!(effective_blend_weights(&cloud), prior);

        cloud.logits_mut().set(0, 0, 2f64.ln());
        let w = effective_blend_weights(&cloud);
        assert_abs_diff_eq!(w.get(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(0, 1), 1.0 / 3.0, epsilon = 1e-15);

        cloud.logits_mut().set(1, 1, 800.0);
        let w = effective_blend_weights(&cloud);
        assert_abs_diff_eq!(w.get(1, 1), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nearest_prior_copies_template_rows() {
        let template = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let tw = RowMatrix::from_rows(&[vec![1.0, 0.0], vec![0.25, 0.75]]).unwrap();
        let cloud = CanonicalCloud::with_nearest_prior(vec![Vec3::new(0.9, 0.1, 0.0), Vec3::new(-0.2, 0.0, 0.0)], &template, &tw).unwrap();
        assert_eq!(cloud.prior().row(0), &[0.25, 0.75]);
        assert_eq!(cloud.prior().row(1), &[1.0, 0.0]);
    }

    #[test]
    fn cloud_validation() {
        assert!(CanonicalCloud::new(vec![], RowMatrix::zeros(0, 2)).is_err());
        let bad = RowMatrix::from_rows(&[vec![0.6, 0.6]]).unwrap();
        assert!(CanonicalCloud::new(vec![Vec3::zeros()], bad).is_err());
    }

    proptest! {
        #[test]
        fn effective_weights_stay_stochastic(logits in prop::collection::vec(-1e4f64..1e4, 4), raw in prop::collection::vec(0.01f64..1.0, 4)) {
            let s: f64 = raw.iter().sum();
            let prior = RowMatrix::from_rows(&[raw.iter().map(|r| r / s).collect()]).unwrap();
            let mut cloud = CanonicalCloud::new(vec![Vec3::zeros()], prior).unwrap();
            cloud.logits_mut().row_mut(0).copy_from_slice(&logits);
            let w = effective_blend_weights(&cloud);
            prop_assert!((w.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.row(0).iter().all(|v| *v >= 0.0 && v.is_finite()));
        }

        #[test]
        fn warp_is_linear_in_translations(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = 6;
            let k = 3;
            let rows: Vec<Vec<f64>> = (0..p).map(|_| {
                let r: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            }).collect();
            let pts: Vec<Vec3> = (0..p).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let cloud = CanonicalCloud::new(pts, RowMatrix::from_rows(&rows).unwrap()).unwrap();
            let rots: Vec<Rotation> = (0..k).map(|_| random_rot(&mut rng)).collect();
            let t1: Vec<Vec3> = (0..k).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let t2: Vec<Vec3> = (0..k).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let mk = |ts: &[Vec3]| -> Vec<Transform> { rots.iter().zip(ts).map(|(r, t)| Transform::new(*r, *t)).collect() };
            let zero = vec![Vec3::zeros(); k];
            let sum: Vec<Vec3> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
            let w0 = lbs_warp(&cloud, &mk(&zero)).unwrap();
            let w1 = lbs_warp(&cloud, &mk(&t1)).unwrap();
            let w2 = lbs_warp(&cloud, &mk(&t2)).unwrap();
            let w12 = lbs_warp(&cloud, &mk(&sum)).unwrap();
            for i in 0..p {
                prop_assert!((w12[i] - (w1[i] + w2[i] - w0[i])).norm() < 1e-10);
            }
        }
    }
}
