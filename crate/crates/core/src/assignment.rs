//! Point-to-joint assignment: motion kernels, the blended assignment weight
//! and per-joint gradient accumulation.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkelError};
use crate::math::{RowMatrix, Vec3};

/// Regularizer added to every kernel before inversion.
pub const DEFAULT_MK_EPS: f64 = 1e-8;

/// Per point–joint variance of the Euclidean distance across frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionKernelTable {
    pub mk: RowMatrix,
}

impl MotionKernelTable {
    pub fn points(&self) -> usize {
        self.mk.rows()
    }

    pub fn joints(&self) -> usize {
        self.mk.cols()
    }

    pub fn get(&self, p: usize, k: usize) -> f64 {
        self.mk.get(p, k)
    }
}

/// `mk[p][k] = (1/N) Σ_i (‖x_i,p − j_i,k‖ − μ)²` with `μ` the mean distance.
///
/// `point_traj[i][p]` and `joint_traj[i][k]` hold frame `i` positions.
pub fn compute_motion_kernels(point_traj: &[Vec<Vec3>], joint_traj: &[Vec<Vec3>]) -> Result<MotionKernelTable> {
    let n = point_traj.len();
    if n < 2 {
        return Err(SkelError::InsufficientFrames { required: 2, got: n });
    }
    if joint_traj.len() != n {
        return Err(SkelError::ShapeMismatch(format!(
            "{n} point frames but {} joint frames",
            joint_traj.len()
        )));
    }
    let p_count = point_traj[0].len();
    let k_count = joint_traj[0].len();
    if point_traj.iter().any(|f| f.len() != p_count) || joint_traj.iter().any(|f| f.len() != k_count) {
        return Err(SkelError::ShapeMismatch("ragged trajectories".into()));
    }
    let inv_n = 1.0 / n as f64;
    let rows: Vec<Vec<f64>> = (0..p_count)
        .into_par_iter()
        .map(|p| {
            let mut dist = vec![0.0; n];
            (0..k_count)
                .map(|k| {
                    for i in 0..n {
                        dist[i] = (point_traj[i][p] - joint_traj[i][k]).norm();
                    }
                    let mean = dist.iter().sum::<f64>() * inv_n;
                    dist.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() * inv_n
                })
                .collect()
        })
        .collect();
    let mk = RowMatrix::from_flat(p_count, k_count, rows.concat()).expect("rows have k_count entries");
    Ok(MotionKernelTable { mk })
}

/// Row-normalized inverse kernels: `(mk + eps)⁻¹ / Σ_j (mk_j + eps)⁻¹`.
pub fn mk_weights(table: &MotionKernelTable, eps: f64) -> Result<RowMatrix> {
    if !(eps > 0.0) {
        return Err(SkelError::invalid("mk_eps", "must be positive"));
    }
    let mut out = RowMatrix::zeros(table.points(), table.joints());
    for p in 0..table.points() {
        let row = out.row_mut(p);
        let src = table.mk.row(p);
        let mut sum = 0.0;
        for (o, m) in row.iter_mut().zip(src) {
            *o = 1.0 / (m + eps);
            sum += *o;
        }
        row.iter_mut().for_each(|o| *o /= sum);
    }
    Ok(out)
}

/// `λ ω_MK + (1 − λ) ω_lbs`.
pub fn hybrid_weights(w_mk: &RowMatrix, w_lbs: &RowMatrix, lambda: f64) -> Result<RowMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SkelError::invalid("lambda_mk", format!("{lambda} is outside [0, 1]")));
    }
    if w_mk.rows() != w_lbs.rows() || w_mk.cols() != w_lbs.cols() {
        return Err(SkelError::ShapeMismatch(format!(
            "motion-kernel weights {}x{} vs skinning weights {}x{}",
            w_mk.rows(),
            w_mk.cols(),
            w_lbs.rows(),
            w_lbs.cols()
        )));
    }
    if lambda == 0.0 {
        return Ok(w_lbs.clone());
    }
    if lambda == 1.0 {
        return Ok(w_mk.clone());
    }
    let data = w_mk
        .as_slice()
        .iter()
        .zip(w_lbs.as_slice())
        .map(|(m, l)| lambda * m + (1.0 - lambda) * l)
        .collect();
    Ok(RowMatrix::from_flat(w_mk.rows(), w_mk.cols(), data).unwrap())
}

/// Weighted mean gradient norm per joint, averaged over accumulation calls.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointGradientVector {
    pub values: Vec<f64>,
    pub accumulation_count: usize,
}

impl JointGradientVector {
    pub fn new(joints: usize) -> Self {
        JointGradientVector {
            values: vec![0.0; joints],
            accumulation_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Folds one more iteration's point gradients into the running mean.
    pub fn accumulate(&mut self, point_grad_norms: &[f64], weights: &RowMatrix) -> Result<()> {
        let step = accumulate_joint_gradients(point_grad_norms, weights)?;
        if self.values.len() != step.values.len() {
            return Err(SkelError::ShapeMismatch("joint count changed between accumulations".into()));
        }
        let n = self.accumulation_count as f64;
        for (v, s) in self.values.iter_mut().zip(&step.values) {
            *v = (*v * n + s) / (n + 1.0);
        }
        self.accumulation_count += 1;
        Ok(())
    }
}

/// `g_J[k] = Σ_p ω_pk g_p / Σ_p ω_pk`; a joint with no weight gets 0.
pub fn accumulate_joint_gradients(point_grad_norms: &[f64], weights: &RowMatrix) -> Result<JointGradientVector> {
    if point_grad_norms.len() != weights.rows() {
        return Err(SkelError::ShapeMismatch(format!(
            "{} gradient norms for {} weight rows",
            point_grad_norms.len(),
            weights.rows()
        )));
    }
    if point_grad_norms.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(SkelError::invalid("point_grad_norms", "must be finite and non-negative"));
    }
    let k = weights.cols();
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for (g, row) in point_grad_norms.iter().zip(weights.row_iter()) {
        for j in 0..k {
            num[j] += row[j] * g;
            den[j] += row[j];
        }
    }
    let values = num
        .iter()
        .zip(&den)
        .map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 })
        .collect();
    Ok(JointGradientVector {
        values,
        accumulation_count: 1,
    })
}

/// Diagnostic dump: `joint,g_j` header then one row per joint.
pub fn write_joint_gradients_csv(g: &JointGradientVector, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "joint,g_j").unwrap();
    for (k, v) in g.values.iter().enumerate() {
        writeln!(buf, "{k},{v:e}").unwrap();
    }
    crate::io::write_atomic(path, &buf)
}
