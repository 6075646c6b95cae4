//! Losses, optimization schedule and density control.
//!
//! Training runs a warm-up phase that fits canonical positions and skinning
//! corrections only, then localizes parent joints from motion kernels and
//! accumulated gradients, grows one extra joint per selected parent and
//! refines everything including the extra-joint decoder.

use std::sync::OnceLock;

use kiddo::{KdTree, SquaredEuclidean};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assignment::{accumulate_joint_gradients, compute_motion_kernels, hybrid_weights, mk_weights, JointGradientVector, MotionKernelTable, DEFAULT_MK_EPS};
use crate::error::{Result, SkelError};
use crate::growth::{gradient_contrast, grow_joints, select_parent_joints, DecoderKind, ExtraJointBook, GrowthInit, JointDecoder, ThresholdMode};
use crate::kinematics::{effective_blend_weights, forward_kinematics, joint_positions, CanonicalCloud};
use crate::math::{RowMatrix, Vec3};
use crate::model::{Evaluation, SkinnedModel};
use crate::synth::SyntheticScene;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Known point correspondences: mean squared 3D error.
    #[default]
    Correspondence,
    /// One-sided nearest-neighbor distance from prediction to observation.
    Chamfer,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Correspondence => "correspondence",
            LossMode::Chamfer => "chamfer",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub positions: f64,
    pub logits: f64,
    pub decoder: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            positions: 1e-3,
            logits: 1e-2,
            decoder: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub max_points: usize,
    pub a: f64,
    pub b: f64,
    pub eps_d0: f64,
    /// Iterations between densify events.
    pub interval: usize,
    pub jitter: f64,
    pub prune_percentile: f64,
    /// Consecutive events above the percentile before a point is pruned.
    pub prune_patience: u32,
    pub min_points: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            enabled: false,
            max_points: 30_000,
            a: 2.0,
            b: 5e3,
            eps_d0: 5e-4,
            interval: 100,
            jitter: 1e-3,
            prune_percentile: 99.5,
            prune_patience: 3,
            min_points: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_mk: f64,
    pub threshold: ThresholdMode,
    pub warmup_iters: usize,
    pub total_iters: usize,
    pub learning_rates: LearningRates,
    pub loss_mode: LossMode,
    pub densify: DensifyConfig,
    pub decoder: DecoderKind,
    pub growth: bool,
    pub growth_init: GrowthInit,
    /// Growth is skipped when `max(g_J) / median(g_J)` stays below this.
    pub min_growth_contrast: f64,
    pub mk_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_mk: 0.4,
            threshold: ThresholdMode::default(),
            warmup_iters: 8000,
            total_iters: 12_000,
            learning_rates: LearningRates::default(),
            loss_mode: LossMode::Correspondence,
            densify: DensifyConfig::default(),
            decoder: DecoderKind::Table,
            growth: true,
            growth_init: GrowthInit::default(),
            min_growth_contrast: 2.0,
            mk_eps: DEFAULT_MK_EPS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_mk) {
            return Err(SkelError::invalid("lambda_mk", "must lie in [0, 1]"));
        }
        self.threshold.validate()?;
        if self.warmup_iters == 0 {
            return Err(SkelError::invalid("warmup_iters", "must be at least 1"));
        }
        if self.warmup_iters >= self.total_iters {
            return Err(SkelError::invalid("total_iters", "must exceed warmup_iters"));
        }
        let lr = &self.learning_rates;
        for (name, v) in [("positions", lr.positions), ("logits", lr.logits), ("decoder", lr.decoder)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SkelError::invalid(format!("learning_rates.{name}"), "must be positive"));
            }
        }
        if !(self.min_growth_contrast >= 0.0) {
            return Err(SkelError::invalid("min_growth_contrast", "must be non-negative"));
        }
        if !(self.mk_eps > 0.0) {
            return Err(SkelError::invalid("mk_eps", "must be positive"));
        }
        let d = &self.densify;
        if d.enabled {
            if self.loss_mode == LossMode::Correspondence {
                return Err(SkelError::invalid("densify.enabled", "densification needs the chamfer loss"));
            }
            if d.interval == 0 || d.min_points == 0 || d.prune_patience == 0 {
                return Err(SkelError::invalid("densify", "interval, min_points and prune_patience must be positive"));
            }
            if !(d.b > 0.0 && d.eps_d0 > 0.0 && d.jitter >= 0.0 && (0.0..=100.0).contains(&d.prune_percentile)) {
                return Err(SkelError::invalid("densify", "b, eps_d0 must be positive and the percentile in [0, 100]"));
            }
        }
        Ok(())
    }
}

/// Gradient cutoff for cloning, raised once the cloud exceeds its budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensifyController {
    pub eps_d0: f64,
    pub a: f64,
    pub b: f64,
    pub max_points: usize,
    pub current: f64,
}

impl DensifyController {
    pub fn new(cfg: &DensifyConfig) -> Self {
        DensifyController {
            eps_d0: cfg.eps_d0,
            a: cfg.a,
            b: cfg.b,
            max_points: cfg.max_points,
            current: cfg.eps_d0,
        }
    }
}

/// `ε_d = (a + (n − N_max)/b) · ε_d0` once `n ≥ N_max`, `ε_d0` below it.
pub fn update_densify_threshold(ctrl: &mut DensifyController, n: usize) -> f64 {
    ctrl.current = if n >= ctrl.max_points {
        (ctrl.a + (n - ctrl.max_points) as f64 / ctrl.b) * ctrl.eps_d0
    } else {
        ctrl.eps_d0
    };
    ctrl.current
}

/// Observed frames with lazily built nearest-neighbor indices.
pub struct Observations {
    frames: Vec<Vec<Vec3>>,
    trees: OnceLock<Vec<KdTree<f64, 3>>>,
}

impl Observations {
    pub fn new(frames: Vec<Vec<Vec3>>) -> Self {
        Observations {
            frames,
            trees: OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[Vec3] {
        &self.frames[i]
    }

    fn tree(&self, i: usize) -> &KdTree<f64, 3> {
        &self.trees.get_or_init(|| {
            self.frames
                .iter()
                .map(|f| {
                    let mut t = KdTree::with_capacity(f.len().max(1));
                    for (j, x) in f.iter().enumerate() {
                        t.add(&[x.x, x.y, x.z], j as u64);
                    }
                    t
                })
                .collect()
        })[i]
    }

    fn check(&self, i: usize, predicted: usize, mode: LossMode) -> Result<()> {
        let obs = self.frames[i].len();
        if obs == 0 {
            return Err(SkelError::EmptyObservation(i));
        }
        if mode == LossMode::Correspondence && obs != predicted {
            return Err(SkelError::ShapeMismatch(format!(
                "frame {i}: {predicted} predicted points but {obs} observed"
            )));
        }
        Ok(())
    }
}

impl Observations {
    /// The observed point `x` is compared against in frame `i`.
    fn target(&self, i: usize, p: usize, x: &Vec3, mode: LossMode) -> Vec3 {
        match mode {
            LossMode::Correspondence => self.frames[i][p],
            LossMode::Chamfer => self.frames[i][self.tree(i).nearest_one::<SquaredEuclidean>(&[x.x, x.y, x.z]).item as usize],
        }
    }

    fn check_all(&self, predicted: usize, mode: LossMode) -> Result<()> {
        (0..self.len()).try_for_each(|i| self.check(i, predicted, mode))
    }
}

/// Squared-error term of one point and its gradient.
fn squared_error(x: &Vec3, target: &Vec3, scale: f64) -> (f64, Vec3) {
    let d = x - target;
    (d.norm_squared() * scale, d * (2.0 * scale))
}

/// Reconstruction loss of `model` on `frames` against `obs[i]` for
/// `frames[i]`, with gradients for positions, logits and, if `with_decoder`,
/// the decoder.
pub fn loss_gradients(model: &SkinnedModel, frames: &[usize], obs: &Observations, mode: LossMode, with_decoder: bool) -> Result<Evaluation> {
    if frames.len() != obs.len() {
        return Err(SkelError::ShapeMismatch(format!(
            "{} frames but {} observed",
            frames.len(),
            obs.len()
        )));
    }
    let p_count = model.cloud.len();
    obs.check_all(p_count, mode)?;
    let scale = 1.0 / (frames.len() * p_count.max(1)) as f64;
    let weights = effective_blend_weights(&model.cloud);
    model.evaluate(frames, &weights, |i, p, x| squared_error(x, &obs.target(i, p, x, mode), scale), with_decoder)
}

/// Scalar loss and `∂L/∂pred` per frame and point.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grads: Vec<Vec<Vec3>>,
}

/// Mean squared error over frames and points, either against the point
/// with the same index or against the nearest observed point. Matches are
/// fixed for the evaluation, so gradients are `2 (pred − target) / (N P)`.
pub fn reconstruction_loss(pred: &[Vec<Vec3>], obs: &Observations, mode: LossMode) -> Result<LossEval> {
    if pred.len() != obs.len() {
        return Err(SkelError::ShapeMismatch(format!(
            "{} predicted frames but {} observed",
            pred.len(),
            obs.len()
        )));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (i, frame) in pred.iter().enumerate() {
        obs.check(i, frame.len(), mode)?;
        let scale = 1.0 / (pred.len() * frame.len().max(1)) as f64;
        let mut g = Vec::with_capacity(frame.len());
        for (p, x) in frame.iter().enumerate() {
            let (l, d) = squared_error(x, &obs.target(i, p, x, mode), scale);
            loss += l;
            g.push(d);
        }
        grads.push(g);
    }
    Ok(LossEval { loss, grads })
}

/// Per-point count of consecutive densify events spent above the residual
/// percentile.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneState {
    pub stale: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyOutcome {
    /// Source row of every row of the new cloud.
    pub sources: Vec<usize>,
    /// Rows from this index on are fresh clones.
    pub first_clone: usize,
    pub pruned: usize,
}

impl DensifyOutcome {
    pub fn cloned(&self) -> usize {
        self.sources.len() - self.first_clone
    }
}

fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (pct / 100.0 * (v.len() - 1) as f64).round() as usize;
    v[rank.min(v.len() - 1)]
}

/// Prunes points that stayed above the residual percentile for
/// `prune_patience` events, then clones the survivors whose accumulated
/// gradient exceeds `eps_d`. Clones get Gaussian jitter and copy the
/// source's prior and logits.
#[allow(clippy::too_many_arguments)]
pub fn densify_and_prune(
    cloud: &mut CanonicalCloud,
    grad_norms: &[f64],
    residuals: &[f64],
    eps_d: f64,
    state: &mut PruneState,
    cfg: &DensifyConfig,
    mode: LossMode,
    rng: &mut ChaCha8Rng,
) -> Result<DensifyOutcome> {
    if mode == LossMode::Correspondence {
        return Err(SkelError::ModeMismatch {
            mode: mode.name(),
            reason: "point counts are fixed by the correspondences".into(),
        });
    }
    let p = cloud.len();
    if grad_norms.len() != p || residuals.len() != p {
        return Err(SkelError::ShapeMismatch("densify statistics do not match the cloud".into()));
    }
    if state.stale.len() != p {
        state.stale = vec![0; p];
    }
    if p > 0 {
        let cut = percentile(residuals, cfg.prune_percentile);
        for (s, &r) in state.stale.iter_mut().zip(residuals) {
            *s = if r > cut { *s + 1 } else { 0 };
        }
    }
    let mut candidates: Vec<usize> = (0..p).filter(|&i| state.stale[i] >= cfg.prune_patience).collect();
    let budget = p.saturating_sub(cfg.min_points);
    if candidates.len() > budget {
        candidates.sort_by(|&a, &b| residuals[b].total_cmp(&residuals[a]).then(a.cmp(&b)));
        candidates.truncate(budget);
    }
    let mut drop = vec![false; p];
    for &c in &candidates {
        drop[c] = true;
    }
    let mut sources: Vec<usize> = (0..p).filter(|&i| !drop[i]).collect();
    let first_clone = sources.len();
    let clones: Vec<usize> = sources.iter().copied().filter(|&i| grad_norms[i] > eps_d).collect();
    sources.extend(&clones);

    let mut next = cloud.gather(&sources);
    if cfg.jitter > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter).map_err(|e| SkelError::invalid("densify.jitter", e.to_string()))?;
        for x in next.positions_mut()[first_clone..].iter_mut() {
            *x += Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        }
    }
    state.stale = sources.iter().enumerate().map(|(row, &s)| if row < first_clone { state.stale[s] } else { 0 }).collect();
    *cloud = next;
    Ok(DensifyOutcome {
        sources,
        first_clone,
        pruned: candidates.len(),
    })
}

/// Adaptive moment estimation over one flat parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }

    /// Reorders moments after rows of width `width` were gathered from
    /// `sources`; rows from `first_fresh` on start from zero.
    pub fn remap_rows(&mut self, width: usize, sources: &[usize], first_fresh: usize) {
        let gather = |src: &[f64]| -> Vec<f64> {
            sources
                .iter()
                .enumerate()
                .flat_map(|(row, &s)| {
                    let fresh = row >= first_fresh;
                    (0..width).map(move |c| if fresh { 0.0 } else { src[s * width + c] })
                })
                .collect()
        };
        self.m = gather(&self.m);
        self.v = gather(&self.v);
    }

    /// Appends zero-initialized columns to moments of a row-major matrix.
    fn widen(&mut self, rows: usize, old: usize, new: usize) {
        let widen = |src: &[f64]| -> Vec<f64> {
            (0..rows)
                .flat_map(|r| (0..new).map(move |c| if c < old { src[r * old + c] } else { 0.0 }))
                .collect()
        };
        self.m = widen(&self.m);
        self.v = widen(&self.v);
    }
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|x| [x.x, x.y, x.z]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Refine,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Refine => "refine",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub loss: f64,
    pub point_count: usize,
    pub eps_d: f64,
}

/// Everything computed when deciding where to grow.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthAnalysis {
    pub motion_kernels: MotionKernelTable,
    pub hybrid_weights: RowMatrix,
    pub joint_gradients: JointGradientVector,
    pub selected: Vec<usize>,
}

/// Optimization state for one scene.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: SkinnedModel,
    pub phase: Phase,
    pub iteration: usize,
    train_frames: Vec<usize>,
    obs: Observations,
    adam_positions: Adam,
    adam_logits: Adam,
    adam_decoder: Option<Adam>,
    warmup_norm_sum: Vec<f64>,
    warmup_steps: usize,
    densify_norm_sum: Vec<f64>,
    densify_steps: usize,
    last_residuals: Vec<f64>,
    last_point_grad_norms: Vec<f64>,
    controller: DensifyController,
    prune: PruneState,
    rng: ChaCha8Rng,
    trace: Vec<LossRecord>,
}

impl Trainer {
    /// Starts from the scene's canonical sample with skinning priors copied
    /// from the nearest body point.
    pub fn new(config: TrainConfig, scene: &SyntheticScene) -> Result<Self> {
        config.validate()?;
        let train_frames = scene.train_frames();
        if train_frames.len() < 2 {
            return Err(SkelError::InsufficientFrames {
                required: 2,
                got: train_frames.len(),
            });
        }
        let (template, template_weights) = scene.template();
        let cloud = CanonicalCloud::with_nearest_prior(scene.canonical.clone(), &template, &template_weights)?;
        let keyframes: Vec<f64> = train_frames.iter().map(|&f| scene.poses.timestamps()[f]).collect();
        let book = ExtraJointBook::new(JointDecoder::new(&config.decoder, &keyframes)?);
        let model = SkinnedModel::new(scene.tree.base_tree(), scene.poses.clone(), cloud, book)?;
        let obs = Observations::new(train_frames.iter().map(|&f| scene.observations[f].clone()).collect());
        Trainer::from_parts(config, model, train_frames, obs)
    }

    /// Starts from an explicit model and the observations of `train_frames`.
    pub fn from_parts(config: TrainConfig, model: SkinnedModel, train_frames: Vec<usize>, obs: Observations) -> Result<Self> {
        config.validate()?;
        if train_frames.len() != obs.len() || train_frames.iter().any(|&f| f >= model.frame_count()) {
            return Err(SkelError::ShapeMismatch("training frames do not match observations".into()));
        }
        let p = model.cloud.len();
        let k = model.tree.len();
        let adam_decoder = (!model.book.is_empty()).then(|| Adam::new(config.learning_rates.decoder, model.book.decoder.param_count()));
        Ok(Trainer {
            adam_positions: Adam::new(config.learning_rates.positions, 3 * p),
            adam_logits: Adam::new(config.learning_rates.logits, p * k),
            adam_decoder,
            warmup_norm_sum: vec![0.0; p],
            warmup_steps: 0,
            densify_norm_sum: vec![0.0; p],
            densify_steps: 0,
            last_residuals: vec![0.0; p],
            last_point_grad_norms: vec![0.0; p],
            controller: DensifyController::new(&config.densify),
            prune: PruneState::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            trace: Vec::new(),
            phase: Phase::Warmup,
            iteration: 0,
            train_frames,
            obs,
            model,
            config,
        })
    }

    pub fn trace(&self) -> &[LossRecord] {
        &self.trace
    }

    pub fn train_frames(&self) -> &[usize] {
        &self.train_frames
    }

    /// `‖∂L/∂x_o‖` per point from the latest step, averaged over frames.
    pub fn last_point_grad_norms(&self) -> &[f64] {
        &self.last_point_grad_norms
    }

    /// Warm-up average of the per-point gradient norms.
    pub fn warmup_point_grad_norms(&self) -> Vec<f64> {
        let n = self.warmup_steps.max(1) as f64;
        self.warmup_norm_sum.iter().map(|s| s / n).collect()
    }

    /// Loss on the training frames at the current parameters.
    pub fn current_loss(&self) -> Result<f64> {
        let pred = self.model.warp_frames(&self.train_frames)?;
        Ok(reconstruction_loss(&pred, &self.obs, self.config.loss_mode)?.loss)
    }

    /// One optimizer step over the active parameter groups; returns the loss
    /// before the step.
    pub fn train_step(&mut self) -> Result<f64> {
        let p_count = self.model.cloud.len();
        let n = self.train_frames.len();
        let scale = 1.0 / (n * p_count.max(1)) as f64;
        let train_decoder = self.phase == Phase::Refine && !self.model.book.is_empty();
        let grads = loss_gradients(&self.model, &self.train_frames, &self.obs, self.config.loss_mode, train_decoder)?;
        let loss = grads.loss;
        if !loss.is_finite() {
            return Err(SkelError::NumericFailure { iteration: self.iteration });
        }
        if self.phase == Phase::Warmup {
            for (s, v) in self.warmup_norm_sum.iter_mut().zip(&grads.point_grad_norms) {
                *s += v;
            }
            self.warmup_steps += 1;
        }
        // per-point loss gradient, independent of how many points share the mean
        let per_point = (n * p_count) as f64;
        for (s, v) in self.densify_norm_sum.iter_mut().zip(&grads.point_grad_norms) {
            *s += v * per_point;
        }
        self.densify_steps += 1;
        self.last_residuals = grads.point_loss.iter().map(|l| (l / (scale * n as f64)).sqrt()).collect();
        self.last_point_grad_norms = grads.point_grad_norms.clone();

        let mut pos = flatten(self.model.cloud.positions());
        self.adam_positions.step(&mut pos, &flatten(&grads.positions));
        for (x, c) in self.model.cloud.positions_mut().iter_mut().zip(pos.chunks_exact(3)) {
            *x = Vec3::new(c[0], c[1], c[2]);
        }
        self.adam_logits.step(self.model.cloud.logits_mut().as_mut_slice(), grads.logits.as_slice());
        if train_decoder {
            let adam = self.adam_decoder.as_mut().expect("decoder optimizer exists once joints are grown");
            let mut params = self.model.book.decoder.flat_params();
            adam.step(&mut params, &grads.decoder);
            self.model.book.decoder.set_flat_params(&params)?;
            self.model.sync()?;
        }

        let eps_d = self.controller.current;
        self.trace.push(LossRecord {
            iteration: self.iteration,
            phase: self.phase,
            loss,
            point_count: p_count,
            eps_d,
        });
        self.iteration += 1;
        if self.config.densify.enabled && self.iteration.is_multiple_of(self.config.densify.interval) {
            self.densify()?;
        }
        Ok(loss)
    }

    fn densify(&mut self) -> Result<()> {
        let eps_d = update_densify_threshold(&mut self.controller, self.model.cloud.len());
        let steps = self.densify_steps.max(1) as f64;
        let grads: Vec<f64> = self.densify_norm_sum.iter().map(|s| s / steps).collect();
        let out = densify_and_prune(
            &mut self.model.cloud,
            &grads,
            &self.last_residuals,
            eps_d,
            &mut self.prune,
            &self.config.densify,
            self.config.loss_mode,
            &mut self.rng,
        )?;
        let k = self.model.tree.len();
        self.adam_positions.remap_rows(3, &out.sources, out.first_clone);
        self.adam_logits.remap_rows(k, &out.sources, out.first_clone);
        let gather = |v: &[f64]| -> Vec<f64> { out.sources.iter().map(|&s| v[s]).collect() };
        self.warmup_norm_sum = gather(&self.warmup_norm_sum);
        self.last_residuals = gather(&self.last_residuals);
        self.last_point_grad_norms = gather(&self.last_point_grad_norms);
        self.densify_norm_sum = vec![0.0; self.model.cloud.len()];
        self.densify_steps = 0;
        Ok(())
    }

    /// Motion kernels of every point against the base joints over the
    /// training frames. With correspondences the observed trajectories are
    /// used; otherwise the current warp stands in for them.
    pub fn motion_kernels(&self) -> Result<MotionKernelTable> {
        let base_tree = self.model.tree.base_tree();
        let joints: Vec<Vec<Vec3>> = self
            .train_frames
            .iter()
            .map(|&f| Ok(joint_positions(&base_tree, &forward_kinematics(&base_tree, self.model.poses.frame(f), &[])?)))
            .collect::<Result<_>>()?;
        let points: Vec<Vec<Vec3>> = match self.config.loss_mode {
            LossMode::Correspondence => self.obs.frames.clone(),
            LossMode::Chamfer => self.model.warp_frames(&self.train_frames)?,
        };
        compute_motion_kernels(&points, &joints)
    }

    /// Hybrid assignment, accumulated joint gradients and the selected
    /// parents, from the warm-up statistics.
    pub fn analyze_growth(&self) -> Result<GrowthAnalysis> {
        let mk = self.motion_kernels()?;
        let k0 = self.model.tree.base_count();
        let w_lbs = effective_blend_weights(&self.model.cloud).leading_columns(k0);
        let w_mk = mk_weights(&mk, self.config.mk_eps)?;
        let hybrid = hybrid_weights(&w_mk, &w_lbs, self.config.lambda_mk)?;
        let g = accumulate_joint_gradients(&self.warmup_point_grad_norms(), &hybrid)?;
        let selected = if gradient_contrast(&g) >= self.config.min_growth_contrast {
            select_parent_joints(&g, self.config.threshold)?
        } else {
            Vec::new()
        };
        Ok(GrowthAnalysis {
            motion_kernels: mk,
            hybrid_weights: hybrid,
            joint_gradients: g,
            selected,
        })
    }

    /// Grows one joint under each parent and switches to refinement.
    pub fn grow(&mut self, parents: &[usize]) -> Result<Vec<usize>> {
        let old_k = self.model.tree.len();
        let model = &mut self.model;
        let new = grow_joints(&mut model.tree, &mut model.book, &mut model.cloud, parents, self.config.growth_init, self.iteration)?;
        model.sync()?;
        if !new.is_empty() {
            self.adam_logits.widen(model.cloud.len(), old_k, model.tree.len());
            self.adam_decoder = Some(Adam::new(self.config.learning_rates.decoder, model.book.decoder.param_count()));
        }
        self.phase = Phase::Refine;
        Ok(new)
    }
}

/// Root-mean-square point error of `model` on `frames` of the scene.
/// Chamfer mode measures distance to the nearest observed point.
pub fn evaluate_rmse(model: &SkinnedModel, scene: &SyntheticScene, frames: &[usize], mode: LossMode) -> Result<f64> {
    if frames.is_empty() {
        return Ok(0.0);
    }
    let obs = Observations::new(frames.iter().map(|&f| scene.observations[f].clone()).collect());
    let pred = model.warp_frames(frames)?;
    Ok(reconstruction_loss(&pred, &obs, mode)?.loss.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Selected parent joints, in selection order.
    pub grown: Vec<usize>,
    /// Indices of the grown joints.
    pub extra_joints: Vec<usize>,
    pub joint_gradients: Vec<f64>,
    pub warmup_loss: f64,
    pub final_loss: f64,
    pub train_rmse: f64,
    pub held_out_rmse: Option<f64>,
    pub held_out_frames: Vec<usize>,
    pub point_count: usize,
    pub iterations: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
}

pub struct TrainOutcome {
    pub model: SkinnedModel,
    pub report: TrainReport,
    pub trace: Vec<LossRecord>,
    pub analysis: GrowthAnalysis,
}

/// Warm-up, parent localization, growth and refinement on one scene.
pub fn run_training(config: &TrainConfig, scene: &SyntheticScene) -> Result<TrainOutcome> {
    let mut tr = Trainer::new(config.clone(), scene)?;
    for _ in 0..config.warmup_iters {
        tr.train_step()?;
    }
    let warmup_loss = tr.current_loss()?;
    let analysis = tr.analyze_growth()?;
    let parents = if config.growth { analysis.selected.clone() } else { Vec::new() };
    let extra_joints = tr.grow(&parents)?;
    for _ in config.warmup_iters..config.total_iters {
        tr.train_step()?;
    }
    let final_loss = tr.current_loss()?;
    if !final_loss.is_finite() {
        return Err(SkelError::NumericFailure { iteration: tr.iteration });
    }
    let held_out_frames = scene.held_out_frames();
    let held_out_rmse = if held_out_frames.is_empty() {
        None
    } else {
        Some(evaluate_rmse(&tr.model, scene, &held_out_frames, config.loss_mode)?)
    };
    let report = TrainReport {
        grown: parents,
        extra_joints,
        joint_gradients: analysis.joint_gradients.values.clone(),
        warmup_loss,
        final_loss,
        train_rmse: evaluate_rmse(&tr.model, scene, tr.train_frames(), config.loss_mode)?,
        held_out_rmse,
        held_out_frames,
        point_count: tr.model.cloud.len(),
        iterations: tr.iteration,
        loss_mode: config.loss_mode,
        seed: config.seed,
    };
    Ok(TrainOutcome {
        trace: tr.trace.clone(),
        model: tr.model,
        report,
        analysis,
    })
}
