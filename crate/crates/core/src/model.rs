//! Skinned model: base skeleton, canonical cloud and extra-joint book, with
//! the forward warp per frame and its reverse-mode gradients.
//!
//! Base joints are driven by given poses and carry no trainable parameters.
//! Trainable quantities are the canonical positions, the correction logits
//! and the extra-joint decoder. For a grown joint `e` under parent `p`:
//!
//! ```text
//! A_e = A_p Q_e,   b_e = A_p (j_e - Q_e j_e) + b_p,   j_e = j_p + dj_e
//! ```
//!
//! so `∂L/∂Q_e = A_pᵀ (∂L/∂A_e − ∂L/∂b_e j_eᵀ)` and
//! `∂L/∂j_e = (I − Q_e)ᵀ A_pᵀ ∂L/∂b_e`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkelError};
use crate::growth::{resolve_extra_rotations, DecoderAdjoint, ExtraJointBook, RotationAdjoint, RotationOverrides};
use crate::kinematics::{effective_blend_weights, forward_kinematics, warp_points, BasePose, CanonicalCloud, JointTree, PoseSequence};
use crate::math::{exp_so3, exp_so3_vjp, Affine, Mat3, Rotation, RowMatrix, Transform, Vec3};
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkinnedModel {
    pub tree: JointTree,
    pub poses: PoseSequence,
    pub cloud: CanonicalCloud,
    pub book: ExtraJointBook,
}

/// Joint transforms of one frame and the decoded extra rotations behind them.
#[derive(Clone, Debug)]
pub struct FrameKinematics {
    pub frame: usize,
    pub affines: Vec<Affine>,
    pub axis_angles: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
}

/// Loss over a set of frames and its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub positions: Vec<Vec3>,
    pub logits: RowMatrix,
    /// Empty unless decoder gradients were requested.
    pub decoder: Vec<f64>,
    /// `‖∂L/∂x_o‖` per point, averaged over the frames.
    pub point_grad_norms: Vec<f64>,
    /// Loss contribution of each point, summed over the frames.
    pub point_loss: Vec<f64>,
}

/// Points handled per parallel task. Fixed so that reductions run in the
/// same order on any thread count.
const CHUNK: usize = 128;

struct ChunkOut {
    loss: f64,
    positions: Vec<Vec3>,
    logits: Vec<f64>,
    norms: Vec<f64>,
    point_loss: Vec<f64>,
    /// `[slot][entry]` sums of `ω g xᵀ` and `ω g`.
    grad_a: Vec<Mat3>,
    grad_b: Vec<Vec3>,
}

impl SkinnedModel {
    pub fn new(tree: JointTree, poses: PoseSequence, cloud: CanonicalCloud, book: ExtraJointBook) -> Result<Self> {
        if cloud.joint_count() != tree.len() {
            return Err(SkelError::ShapeMismatch(format!(
                "cloud has {} weight columns for {} joints",
                cloud.joint_count(),
                tree.len()
            )));
        }
        if poses.frames().first().map_or(0, |f| f.rotations.len()) != tree.base_count() {
            return Err(SkelError::MalformedPose("pose joint count differs from the tree".into()));
        }
        if book.len() != tree.extra_count() {
            return Err(SkelError::ShapeMismatch("extra-joint book out of sync with tree".into()));
        }
        let mut model = SkinnedModel { tree, poses, cloud, book };
        model.book.sync_tree(&mut model.tree)?;
        Ok(model)
    }

    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        self.poses.timestamps()[frame]
    }

    /// Recomputes grown-joint rest positions from the decoder.
    pub fn sync(&mut self) -> Result<()> {
        self.book.sync_tree(&mut self.tree)
    }

    /// Global joint transforms at `frame` with decoded extra rotations.
    pub fn frame_transforms(&self, frame: usize) -> Result<Vec<Transform>> {
        let extra = self.book.rotations_at(self.timestamp(frame))?;
        forward_kinematics(&self.tree, self.poses.frame(frame), &extra)
    }

    /// Warped cloud at `frame` using the decoder.
    pub fn warp_frame(&self, frame: usize) -> Result<Vec<Vec3>> {
        self.warp_frame_with(frame, None)
    }

    /// Warped cloud at `frame`; explicit rotations in `overrides` replace the
    /// decoder, and `freeze_base_frame` holds the base pose fixed.
    pub fn warp_frame_with(&self, frame: usize, overrides: Option<&RotationOverrides>) -> Result<Vec<Vec3>> {
        if frame >= self.frame_count() {
            return Err(SkelError::IndexOutOfRange {
                index: frame,
                len: self.frame_count(),
            });
        }
        let extra = resolve_extra_rotations(&self.book, frame, self.timestamp(frame), overrides)?;
        let base_frame = overrides.and_then(|o| o.freeze_base_frame).unwrap_or(frame);
        self.warp_pose(self.poses.frame(base_frame), &extra)
    }

    /// Decoder-driven warps of several frames, sharing one weight evaluation.
    pub fn warp_frames(&self, frames: &[usize]) -> Result<Vec<Vec<Vec3>>> {
        let weights = effective_blend_weights(&self.cloud);
        frames
            .par_iter()
            .map(|&f| {
                let kin = self.frame_kinematics(f)?;
                Ok(warp_points(self.cloud.positions(), &weights, &kin.affines))
            })
            .collect()
    }

    /// Warped cloud for an arbitrary base pose and explicit extra rotations.
    pub fn warp_pose(&self, base: &BasePose, extra: &[Rotation]) -> Result<Vec<Vec3>> {
        let transforms = forward_kinematics(&self.tree, base, extra)?;
        let affines: Vec<Affine> = transforms.iter().map(Transform::to_affine).collect();
        Ok(warp_points(self.cloud.positions(), &effective_blend_weights(&self.cloud), &affines))
    }

    /// Joint transforms of `frame` with the decoder's extra rotations.
    pub fn frame_kinematics(&self, frame: usize) -> Result<FrameKinematics> {
        let t = self.timestamp(frame);
        let axis_angles: Vec<Vec3> = (0..self.book.len())
            .map(|i| self.book.decoder.decode_axis_angle(i, t))
            .collect::<Result<_>>()?;
        let extra: Vec<Rotation> = axis_angles.iter().map(exp_so3).collect();
        let rotations = extra.iter().map(Rotation::to_matrix).collect();
        let transforms = forward_kinematics(&self.tree, self.poses.frame(frame), &extra)?;
        Ok(FrameKinematics {
            frame,
            affines: transforms.iter().map(Transform::to_affine).collect(),
            axis_angles,
            rotations,
        })
    }

    /// Evaluates `Σ_i Σ_p head(i, p, x_o(i, p))` over `frames` and pulls the
    /// gradient back to positions, logits and, if `with_decoder`, the
    /// decoder parameters. `head` returns a point's loss term and its
    /// gradient with respect to the warped position; `i` indexes `frames`.
    pub fn evaluate<F>(&self, frames: &[usize], weights: &RowMatrix, head: F, with_decoder: bool) -> Result<Evaluation>
    where
        F: Fn(usize, usize, &Vec3) -> (f64, Vec3) + Sync,
    {
        let kin: Vec<FrameKinematics> = frames.iter().map(|&f| self.frame_kinematics(f)).collect::<Result<_>>()?;
        let p_count = self.cloud.len();
        let k_count = self.tree.len();
        let base = self.tree.base_count();
        let extras = self.book.len();
        let n = frames.len();
        let xs = self.cloud.positions();
        let chunks: Vec<ChunkOut> = (0..p_count.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(p_count);
                let len = range.len();
                let mut out = ChunkOut {
                    loss: 0.0,
                    positions: vec![Vec3::zeros(); len],
                    logits: vec![0.0; len * k_count],
                    norms: vec![0.0; len],
                    point_loss: vec![0.0; len],
                    grad_a: vec![Mat3::zeros(); n * extras],
                    grad_b: vec![Vec3::zeros(); n * extras],
                };
                let mut active: Vec<(usize, f64)> = Vec::with_capacity(k_count);
                let mut ys: Vec<Vec3> = Vec::with_capacity(k_count);
                for (local, p) in range.enumerate() {
                    let x = xs[p];
                    active.clear();
                    active.extend(weights.row(p).iter().enumerate().filter(|(_, &w)| w != 0.0).map(|(k, &w)| (k, w)));
                    let logit_row = &mut out.logits[local * k_count..(local + 1) * k_count];
                    for (i, fk) in kin.iter().enumerate() {
                        ys.clear();
                        let mut xo = Vec3::zeros();
                        for &(k, w) in &active {
                            let y = fk.affines[k].apply(&x);
                            xo += y * w;
                            ys.push(y);
                        }
                        let (l, g) = head(i, p, &xo);
                        out.loss += l;
                        out.point_loss[local] += l;
                        out.norms[local] += g.norm();
                        if g == Vec3::zeros() {
                            continue;
                        }
                        let mut gx = Vec3::zeros();
                        for (&(k, w), y) in active.iter().zip(&ys) {
                            gx += fk.affines[k].rot.tr_mul(&g) * w;
                            logit_row[k] += w * (y - xo).dot(&g);
                            if with_decoder && k >= base {
                                let slot = i * extras + (k - base);
                                out.grad_a[slot] += g * x.transpose() * w;
                                out.grad_b[slot] += g * w;
                            }
                        }
                        out.positions[local] += gx;
                    }
                }
                out
            })
            .collect();

        let mut ev = Evaluation {
            loss: 0.0,
            positions: Vec::with_capacity(p_count),
            logits: RowMatrix::zeros(0, 0),
            decoder: Vec::new(),
            point_grad_norms: Vec::with_capacity(p_count),
            point_loss: Vec::with_capacity(p_count),
        };
        let mut logits = Vec::with_capacity(p_count * k_count);
        let mut grad_a = vec![Mat3::zeros(); n * extras];
        let mut grad_b = vec![Vec3::zeros(); n * extras];
        let inv_n = 1.0 / n.max(1) as f64;
        for c in chunks {
            ev.loss += c.loss;
            ev.positions.extend(c.positions);
            logits.extend(c.logits);
            ev.point_grad_norms.extend(c.norms.iter().map(|v| v * inv_n));
            ev.point_loss.extend(c.point_loss);
            for (a, b) in grad_a.iter_mut().zip(&c.grad_a) {
                *a += b;
            }
            for (a, b) in grad_b.iter_mut().zip(&c.grad_b) {
                *a += b;
            }
        }
        ev.logits = RowMatrix::from_flat(p_count, k_count, logits).expect("one row per point");
        if with_decoder {
            let mut adjoint = DecoderAdjoint::zeros(extras);
            for (i, fk) in kin.iter().enumerate() {
                let t = self.timestamp(fk.frame);
                for (e, entry) in self.book.entries.iter().enumerate() {
                    let (ga, gb) = (grad_a[i * extras + e], grad_b[i * extras + e]);
                    let pa_t = fk.affines[entry.parent].rot.transpose();
                    let q = fk.rotations[e];
                    let j = self.tree.rest_position(entry.joint);
                    let grad_q = pa_t * (ga - gb * j.transpose());
                    adjoint.offsets[e] += (Mat3::identity() - q).transpose() * (pa_t * gb);
                    adjoint.rotations.push(RotationAdjoint {
                        entry: e,
                        t,
                        grad: exp_so3_vjp(&fk.axis_angles[e], &q, &grad_q),
                    });
                }
            }
            ev.decoder = self.book.decoder.decoder_gradients(&adjoint)?;
        }
        Ok(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::{grow_joints, DecoderKind, GrowthInit, JointDecoder};
    use crate::kinematics::BasePose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model(kind: DecoderKind) -> SkinnedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tree = JointTree::new(
            vec![None, Some(0), Some(1)],
            vec![Vec3::zeros(), Vec3::new(0.5, 0.0, 0.0), Vec3::new(1.0, 0.1, 0.0)],
        )
        .unwrap();
        let frames = 3;
        let ts = PoseSequence::uniform_timestamps(frames);
        let poses = PoseSequence::new(
            ts.clone(),
            (0..frames)
                .map(|_| BasePose {
                    rotations: (0..3)
                        .map(|_| exp_so3(&Vec3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8))))
                        .collect(),
                    root_translation: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                })
                .collect(),
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let r: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let pts = (0..6).map(|_| Vec3::new(rng.gen_range(0.0..1.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2))).collect();
        let mut cloud = CanonicalCloud::new(pts, RowMatrix::from_rows(&rows).unwrap()).unwrap();
        let mut tree = tree;
        let mut book = ExtraJointBook::new(JointDecoder::new(&kind, &ts).unwrap());
        grow_joints(&mut tree, &mut book, &mut cloud, &[2], GrowthInit::default(), 0).unwrap();
        let mut params = book.decoder.flat_params();
        match kind {
            DecoderKind::Table => params.iter_mut().for_each(|p| *p = rng.gen_range(-0.5..0.5)),
            // move the zero-initialized rotation head off its fixed point
            DecoderKind::Mlp(_) => params.iter_mut().for_each(|p| *p += rng.gen_range(-0.05..0.05)),
        }
        book.decoder.set_flat_params(&params).unwrap();
        cloud.logits_mut().as_mut_slice().iter_mut().for_each(|l| *l += rng.gen_range(-0.5..0.5));
        SkinnedModel::new(tree, poses, cloud, book).unwrap()
    }

    #[test]
    fn decoded_rest_positions_are_synced() {
        let m = toy_model(DecoderKind::Table);
        let off = m.book.decoder.decode_extra_position(0).unwrap();
        assert_eq!(m.tree.rest_position(3), m.tree.rest_position(2) + off);
    }

    fn coefficient(p: usize, i: usize) -> Vec3 {
        Vec3::new((p + i) as f64 * 0.3 - 0.7, 0.5 - i as f64 * 0.2, (p as f64 * 1.7).sin())
    }

    /// Linear probe `L = Σ_i Σ_p c_ip · x_o(i, p)` and its gradients.
    fn probe(m: &SkinnedModel) -> (f64, Evaluation) {
        let w = effective_blend_weights(&m.cloud);
        let frames: Vec<usize> = (0..m.frame_count()).collect();
        let ev = m
            .evaluate(&frames, &w, |i, p, x| (coefficient(p, i).dot(x), coefficient(p, i)), true)
            .unwrap();
        (ev.loss, ev)
    }

    #[test]
    fn evaluation_sees_the_plain_warp() {
        let m = toy_model(DecoderKind::Table);
        let (loss, ev) = probe(&m);
        let mut expect = 0.0;
        for f in 0..m.frame_count() {
            for (p, x) in m.warp_frame(f).unwrap().iter().enumerate() {
                expect += coefficient(p, f).dot(x);
            }
        }
        assert!((loss - expect).abs() < 1e-12);
        for p in 0..m.cloud.len() {
            let mean = (0..m.frame_count()).map(|f| coefficient(p, f).norm()).sum::<f64>() / m.frame_count() as f64;
            assert!((ev.point_grad_norms[p] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let m = toy_model(DecoderKind::Table);
        let w = effective_blend_weights(&m.cloud);
        let ev = m.evaluate(&[0, 1, 2], &w, |_, _, _| (0.0, Vec3::zeros()), true).unwrap();
        assert!(ev.positions.iter().all(|v| *v == Vec3::zeros()));
        assert!(ev.logits.as_slice().iter().all(|v| *v == 0.0));
        assert!(ev.decoder.iter().all(|v| *v == 0.0));
    }

    fn check(analytic: f64, plus: f64, minus: f64, h: f64, what: &str) {
        let fd = (plus - minus) / (2.0 * h);
        let err = (analytic - fd).abs() / fd.abs().max(1e-3);
        assert!(err < 1e-4, "{what}: analytic {analytic} vs fd {fd}");
    }

    fn check_all(kind: DecoderKind) {
        let h = 1e-5;
        let m = toy_model(kind);
        let (_, g) = probe(&m);
        for p in 0..m.cloud.len() {
            for c in 0..3 {
                let mut mp = m.clone();
                mp.cloud.positions_mut()[p][c] += h;
                let mut mm = m.clone();
                mm.cloud.positions_mut()[p][c] -= h;
                check(g.positions[p][c], probe(&mp).0, probe(&mm).0, h, "position");
            }
            for k in 0..m.tree.len() {
                let mut mp = m.clone();
                mp.cloud.logits_mut().row_mut(p)[k] += h;
                let mut mm = m.clone();
                mm.cloud.logits_mut().row_mut(p)[k] -= h;
                check(g.logits.get(p, k), probe(&mp).0, probe(&mm).0, h, "logit");
            }
        }
        let params = m.book.decoder.flat_params();
        let stride = (params.len() / 60).max(1);
        for i in (0..params.len()).step_by(stride) {
            let eval = |d: f64| {
                let mut q = params.clone();
                q[i] += d;
                let mut mm = m.clone();
                mm.book.decoder.set_flat_params(&q).unwrap();
                mm.sync().unwrap();
                probe(&mm).0
            };
            check(g.decoder[i], eval(h), eval(-h), h, "decoder");
        }
    }

    #[test]
    fn gradients_match_finite_differences_table() {
        check_all(DecoderKind::Table);
    }

    #[test]
    fn gradients_match_finite_differences_mlp() {
        check_all(DecoderKind::Mlp(Default::default()));
    }
}
