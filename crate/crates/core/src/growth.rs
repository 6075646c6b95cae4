//! Parent-joint selection, the extra-joint book and its decoders.
//!
//! A grown joint hangs under a base joint. Its canonical position is the
//! parent's rest position plus a decoded offset, and its local rotation is
//! decoded per timestamp. Two decoders are available:
//!
//! * `Table` stores the offset and one axis-angle per training keyframe and
//!   answers a timestamp with its nearest keyframe.
//! * `Mlp` evaluates two small networks on positional encodings of the entry
//!   index (`i / K_e`) and the timestamp, giving a rotation that is continuous
//!   in time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::JointGradientVector;
use crate::error::{Result, SkelError};
use crate::kinematics::{CanonicalCloud, JointTree, EXTRA_PRIOR};
use crate::math::{exp_so3, positional_encoding, Rotation, Vec3};
use crate::mlp::Mlp;

/// Absolute threshold calibrated for photometric gradients.
pub const PHOTOMETRIC_JOINT_THRESHOLD: f64 = 3.5e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep joints with `g >= eps_j`.
    Absolute(f64),
    /// Keep joints with `g >= tau * max(g)`.
    Relative(f64),
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Relative(0.5)
    }
}

impl ThresholdMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdMode::Absolute(e) if !(e > 0.0 && e.is_finite()) => {
                Err(SkelError::invalid("threshold", "absolute threshold must be positive"))
            }
            ThresholdMode::Relative(t) if !(t > 0.0 && t <= 1.0) => {
                Err(SkelError::invalid("threshold", "relative threshold must lie in (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// `max(g) / median(g)`: how far the strongest joint stands out. Pure
/// observation noise spreads evenly over joints and gives about 1.
pub fn gradient_contrast(g: &JointGradientVector) -> f64 {
    let mut v = g.values.clone();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = 0.5 * (v[n / 2] + v[(n - 1) / 2]);
    if median > 0.0 {
        v[n - 1] / median
    } else if v[n - 1] > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Joints sorted by accumulated gradient (descending, ties by index), cut at
/// the first one below the threshold.
pub fn select_parent_joints(g: &JointGradientVector, mode: ThresholdMode) -> Result<Vec<usize>> {
    mode.validate()?;
    if g.values.iter().any(|v| !v.is_finite()) {
        return Err(SkelError::invalid("g_j", "non-finite joint gradient"));
    }
    let cut = match mode {
        ThresholdMode::Absolute(e) => e,
        ThresholdMode::Relative(t) => {
            let max = g.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(max > 0.0) {
                return Ok(Vec::new());
            }
            t * max
        }
    };
    let mut order: Vec<usize> = (0..g.values.len()).collect();
    order.sort_by(|&a, &b| g.values[b].total_cmp(&g.values[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take_while(|&k| g.values[k] >= cut).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpDecoderConfig {
    pub position_depth: usize,
    pub position_width: usize,
    pub rotation_depth: usize,
    pub rotation_width: usize,
    pub index_freqs: usize,
    pub time_freqs: usize,
    /// Last-layer init scale of the position net.
    pub last_layer_scale: f64,
    /// Last-layer init scale of the rotation net. Zero makes a grown joint
    /// start at exactly the identity rotation, so growth leaves the warp
    /// untouched.
    #[serde(default)]
    pub rotation_last_layer_scale: f64,
    pub seed: u64,
}

impl Default for MlpDecoderConfig {
    fn default() -> Self {
        MlpDecoderConfig {
            position_depth: 4,
            position_width: 256,
            rotation_depth: 4,
            rotation_width: 128,
            index_freqs: 4,
            time_freqs: 6,
            last_layer_scale: 1e-2,
            rotation_last_layer_scale: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum DecoderKind {
    #[default]
    Table,
    Mlp(MlpDecoderConfig),
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableDecoder {
    keyframes: Vec<f64>,
    entries: usize,
    /// Offsets (`entries × 3`) followed by axis-angles (`entries × keyframes × 3`).
    params: Vec<f64>,
}

impl TableDecoder {
    fn rotation_offset(&self, i: usize, key: usize) -> usize {
        self.entries * 3 + (i * self.keyframes.len() + key) * 3
    }

    /// Index of the keyframe nearest to `t`; an exact midpoint goes to the
    /// earlier one.
    pub fn nearest_keyframe(&self, t: f64) -> usize {
        let k = &self.keyframes;
        match k.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= k.len() => k.len() - 1,
            Err(i) => {
                if t - k[i - 1] <= k[i] - t {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    pub fn keyframes(&self) -> &[f64] {
        &self.keyframes
    }

    pub fn set_offset(&mut self, i: usize, offset: Vec3) -> Result<()> {
        check_index(i, self.entries)?;
        self.params[i * 3..i * 3 + 3].copy_from_slice(offset.as_slice());
        Ok(())
    }

    pub fn set_axis_angle(&mut self, i: usize, key: usize, v: Vec3) -> Result<()> {
        check_index(i, self.entries)?;
        check_index(key, self.keyframes.len())?;
        let o = self.rotation_offset(i, key);
        self.params[o..o + 3].copy_from_slice(v.as_slice());
        Ok(())
    }

    fn add_entries(&mut self, n: usize) {
        let keys = self.keyframes.len();
        let mut params = Vec::with_capacity((self.entries + n) * 3 * (1 + keys));
        params.extend_from_slice(&self.params[..self.entries * 3]);
        params.extend(std::iter::repeat_n(0.0, n * 3));
        params.extend_from_slice(&self.params[self.entries * 3..]);
        params.extend(std::iter::repeat_n(0.0, n * keys * 3));
        self.entries += n;
        self.params = params;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpDecoder {
    entries: usize,
    index_freqs: usize,
    time_freqs: usize,
    position: Mlp,
    rotation: Mlp,
}

impl MlpDecoder {
    fn new(cfg: &MlpDecoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let idx_dim = 2 * cfg.index_freqs;
        let position = Mlp::new(idx_dim, cfg.position_width, cfg.position_depth, 3, cfg.last_layer_scale, &mut rng);
        let rotation = Mlp::new(
            idx_dim + 2 * cfg.time_freqs,
            cfg.rotation_width,
            cfg.rotation_depth,
            3,
            cfg.rotation_last_layer_scale,
            &mut rng,
        );
        MlpDecoder {
            entries: 0,
            index_freqs: cfg.index_freqs,
            time_freqs: cfg.time_freqs,
            position,
            rotation,
        }
    }

    fn index_code(&self, i: usize) -> Vec<f64> {
        positional_encoding(i as f64 / self.entries.max(1) as f64, self.index_freqs)
    }

    fn rotation_input(&self, i: usize, t: f64) -> Vec<f64> {
        let mut x = self.index_code(i);
        x.extend(positional_encoding(t, self.time_freqs));
        x
    }

    pub fn position_net(&self) -> &Mlp {
        &self.position
    }

    pub fn rotation_net(&self) -> &Mlp {
        &self.rotation
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum JointDecoder {
    Table(TableDecoder),
    Mlp(MlpDecoder),
}

/// Gradient of a scalar loss with respect to decoded quantities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecoderAdjoint {
    /// `∂L/∂dj` per entry.
    pub offsets: Vec<Vec3>,
    /// `∂L/∂r(i, t)` for axis-angle outputs.
    pub rotations: Vec<RotationAdjoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationAdjoint {
    pub entry: usize,
    pub t: f64,
    pub grad: Vec3,
}

impl DecoderAdjoint {
    pub fn zeros(entries: usize) -> Self {
        DecoderAdjoint {
            offsets: vec![Vec3::zeros(); entries],
            rotations: Vec::new(),
        }
    }
}

fn check_index(i: usize, len: usize) -> Result<()> {
    if i < len {
        Ok(())
    } else {
        Err(SkelError::IndexOutOfRange { index: i, len })
    }
}

impl JointDecoder {
    /// Decoder with no entries. `keyframes` are the timestamps a table decoder
    /// stores rotations for; the network decoder ignores them.
    pub fn new(kind: &DecoderKind, keyframes: &[f64]) -> Result<Self> {
        match kind {
            DecoderKind::Table => {
                if keyframes.is_empty() || keyframes.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(SkelError::invalid("keyframes", "need increasing timestamps"));
                }
                Ok(JointDecoder::Table(TableDecoder {
                    keyframes: keyframes.to_vec(),
                    entries: 0,
                    params: Vec::new(),
                }))
            }
            DecoderKind::Mlp(cfg) => {
                if cfg.index_freqs == 0 || cfg.time_freqs == 0 {
                    return Err(SkelError::invalid("decoder", "frequency counts must be at least 1"));
                }
                Ok(JointDecoder::Mlp(MlpDecoder::new(cfg)))
            }
        }
    }

    pub fn entry_count(&self) -> usize {
        match self {
            JointDecoder::Table(t) => t.entries,
            JointDecoder::Mlp(m) => m.entries,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            JointDecoder::Table(_) => "table",
            JointDecoder::Mlp(_) => "mlp",
        }
    }

    pub(crate) fn add_entries(&mut self, n: usize) {
        match self {
            JointDecoder::Table(t) => t.add_entries(n),
            JointDecoder::Mlp(m) => m.entries += n,
        }
    }

    pub fn as_table_mut(&mut self) -> Option<&mut TableDecoder> {
        match self {
            JointDecoder::Table(t) => Some(t),
            JointDecoder::Mlp(_) => None,
        }
    }

    /// Canonical offset `dj` of entry `i` from its parent's rest position.
    pub fn decode_extra_position(&self, i: usize) -> Result<Vec3> {
        check_index(i, self.entry_count())?;
        Ok(match self {
            JointDecoder::Table(t) => Vec3::new(t.params[i * 3], t.params[i * 3 + 1], t.params[i * 3 + 2]),
            JointDecoder::Mlp(m) => Vec3::from_column_slice(&m.position.forward(&m.index_code(i))),
        })
    }

    /// Local axis-angle rotation of entry `i` at timestamp `t`.
    pub fn decode_axis_angle(&self, i: usize, t: f64) -> Result<Vec3> {
        check_index(i, self.entry_count())?;
        Ok(match self {
            JointDecoder::Table(tab) => {
                let o = tab.rotation_offset(i, tab.nearest_keyframe(t));
                Vec3::new(tab.params[o], tab.params[o + 1], tab.params[o + 2])
            }
            JointDecoder::Mlp(m) => Vec3::from_column_slice(&m.rotation.forward(&m.rotation_input(i, t))),
        })
    }

    pub fn decode_extra_rotation(&self, i: usize, t: f64) -> Result<Rotation> {
        Ok(exp_so3(&self.decode_axis_angle(i, t)?))
    }

    pub fn param_count(&self) -> usize {
        match self {
            JointDecoder::Table(t) => t.params.len(),
            JointDecoder::Mlp(m) => m.position.param_count() + m.rotation.param_count(),
        }
    }

    /// All trainable parameters, flattened (table: offsets then rotations;
    /// network: position net then rotation net).
    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            JointDecoder::Table(t) => t.params.clone(),
            JointDecoder::Mlp(m) => {
                let mut v = m.position.params().to_vec();
                v.extend_from_slice(m.rotation.params());
                v
            }
        }
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(SkelError::ShapeMismatch(format!(
                "{} decoder parameters, expected {}",
                params.len(),
                self.param_count()
            )));
        }
        match self {
            JointDecoder::Table(t) => t.params.copy_from_slice(params),
            JointDecoder::Mlp(m) => {
                let n = m.position.param_count();
                m.position.params_mut().copy_from_slice(&params[..n]);
                m.rotation.params_mut().copy_from_slice(&params[n..]);
            }
        }
        Ok(())
    }

    /// Exact gradient of the loss with respect to [`Self::flat_params`].
    pub fn decoder_gradients(&self, adjoint: &DecoderAdjoint) -> Result<Vec<f64>> {
        let entries = self.entry_count();
        if adjoint.offsets.len() != entries {
            return Err(SkelError::ShapeMismatch(format!(
                "{} offset adjoints for {entries} entries",
                adjoint.offsets.len()
            )));
        }
        for r in &adjoint.rotations {
            check_index(r.entry, entries)?;
        }
        let mut grads = vec![0.0; self.param_count()];
        match self {
            JointDecoder::Table(t) => {
                for (i, g) in adjoint.offsets.iter().enumerate() {
                    for c in 0..3 {
                        grads[i * 3 + c] += g[c];
                    }
                }
                for r in &adjoint.rotations {
                    let o = t.rotation_offset(r.entry, t.nearest_keyframe(r.t));
                    for c in 0..3 {
                        grads[o + c] += r.grad[c];
                    }
                }
            }
            JointDecoder::Mlp(m) => {
                let n = m.position.param_count();
                let (gp, gr) = grads.split_at_mut(n);
                for (i, g) in adjoint.offsets.iter().enumerate() {
                    if *g == Vec3::zeros() {
                        continue;
                    }
                    let (_, cache) = m.position.forward_cached(&m.index_code(i));
                    m.position.backward(&cache, g.as_slice(), gp);
                }
                for r in &adjoint.rotations {
                    if r.grad == Vec3::zeros() {
                        continue;
                    }
                    let (_, cache) = m.rotation.forward_cached(&m.rotation_input(r.entry, r.t));
                    m.rotation.backward(&cache, r.grad.as_slice(), gr);
                }
            }
        }
        Ok(grads)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BookEntry {
    /// Base joint the grown joint hangs from.
    pub parent: usize,
    /// Index of the grown joint in the extended tree.
    pub joint: usize,
}

/// Registry of grown joints together with their decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraJointBook {
    pub entries: Vec<BookEntry>,
    pub decoder: JointDecoder,
    pub creation_iteration: Option<usize>,
}

impl ExtraJointBook {
    pub fn new(decoder: JointDecoder) -> Self {
        ExtraJointBook {
            entries: Vec::new(),
            decoder,
            creation_iteration: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parents(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.parent).collect()
    }

    /// Canonical rest position of entry `i`: parent rest plus decoded offset.
    pub fn canonical_position(&self, tree: &JointTree, i: usize) -> Result<Vec3> {
        check_index(i, self.entries.len())?;
        Ok(tree.rest_position(self.entries[i].parent) + self.decoder.decode_extra_position(i)?)
    }

    /// Writes decoded rest positions of all grown joints into `tree`.
    pub fn sync_tree(&self, tree: &mut JointTree) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let pos = self.canonical_position(tree, i)?;
            tree.set_rest_position(e.joint, pos);
        }
        Ok(())
    }

    /// Rotations of all grown joints at timestamp `t`.
    pub fn rotations_at(&self, t: f64) -> Result<Vec<Rotation>> {
        (0..self.entries.len()).map(|i| self.decoder.decode_extra_rotation(i, t)).collect()
    }
}

/// How a grown joint's skinning column is seeded.
///
/// The grown joint starts with the identity rotation at its parent's rest
/// position, so its global transform equals the parent's. Moving a share
/// `split` of the parent's weight onto it therefore leaves every warped
/// point where it was, while giving the new joint enough weight to receive
/// gradients. Points with no parent weight get the share `floor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthInit {
    pub split: f64,
    pub floor: f64,
}

impl Default for GrowthInit {
    fn default() -> Self {
        GrowthInit { split: 0.5, floor: 1e-7 }
    }
}

/// Appends one child under each joint of `parents`, registers it in the
/// book and extends the cloud's logits with one column per new joint.
/// Returns the indices of the new joints.
pub fn grow_joints(
    tree: &mut JointTree,
    book: &mut ExtraJointBook,
    cloud: &mut CanonicalCloud,
    parents: &[usize],
    init: GrowthInit,
    iteration: usize,
) -> Result<Vec<usize>> {
    if parents.is_empty() {
        return Ok(Vec::new());
    }
    if cloud.joint_count() != tree.len() {
        return Err(SkelError::ShapeMismatch(format!(
            "cloud has {} weight columns for {} joints",
            cloud.joint_count(),
            tree.len()
        )));
    }
    if book.len() != tree.extra_count() || book.decoder.entry_count() != book.len() {
        return Err(SkelError::ShapeMismatch("extra-joint book out of sync with tree".into()));
    }
    if !(0.0..1.0).contains(&init.split) || !(init.floor > 0.0 && init.floor < 1e-6) {
        return Err(SkelError::invalid("growth_init", "split must lie in [0, 1) and floor in (0, 1e-6)"));
    }
    for (n, &j) in parents.iter().enumerate() {
        if !tree.is_base(j) {
            return Err(SkelError::NotBaseJoint(j));
        }
        if parents[..n].contains(&j) {
            return Err(SkelError::DuplicateGrowth(j));
        }
    }

    let old_k = cloud.joint_count();
    let mut new_joints = Vec::with_capacity(parents.len());
    for &parent in parents {
        let joint = tree.push_extra(parent, tree.rest_position(parent))?;
        book.entries.push(BookEntry { parent, joint });
        new_joints.push(joint);
    }
    book.decoder.add_entries(parents.len());
    book.creation_iteration.get_or_insert(iteration);

    // Work on unnormalized weights u = prior * exp(l - m) so the row sum is
    // preserved when mass is moved from a parent to its new child.
    cloud.correction_logits.append_columns(parents.len(), 0.0);
    cloud.blend_weight.append_columns(parents.len(), 0.0);
    let mut u = vec![0.0; old_k];
    for p in 0..cloud.len() {
        let logits = cloud.correction_logits.row(p)[..old_k].to_vec();
        let mut m = f64::NEG_INFINITY;
        for (k, &l) in logits.iter().enumerate() {
            if cloud.prior_factor(p, k) > 0.0 {
                m = m.max(l);
            }
        }
        let mut z = 0.0;
        for k in 0..old_k {
            let prior = cloud.prior_factor(p, k);
            u[k] = if prior > 0.0 { prior * (logits[k] - m).exp() } else { 0.0 };
            z += u[k];
        }
        let row = cloud.correction_logits.row_mut(p);
        for (n, &parent) in parents.iter().enumerate() {
            let moved = init.split * u[parent];
            if moved > init.floor * z {
                row[parent] = logits[parent] + (1.0 - init.split).ln();
                row[old_k + n] = (moved / EXTRA_PRIOR).ln() + m;
            } else {
                row[old_k + n] = (init.floor * z / EXTRA_PRIOR).ln() + m;
            }
        }
    }
    Ok(new_joints)
}

/// Explicit per-entry, per-frame axis-angles that replace the decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationOverrides {
    /// `per_entry[i][frame]`.
    pub per_entry: Vec<Vec<Vec3>>,
    /// Hold the base pose at this frame for every output frame.
    #[serde(default)]
    pub freeze_base_frame: Option<usize>,
}

impl RotationOverrides {
    pub fn validate(&self, entries: usize, frames: usize) -> Result<()> {
        if self.per_entry.len() != entries {
            return Err(SkelError::ShapeMismatch(format!(
                "overrides list {} entries, model has {entries}",
                self.per_entry.len()
            )));
        }
        for (i, e) in self.per_entry.iter().enumerate() {
            if e.len() != frames {
                return Err(SkelError::ShapeMismatch(format!(
                    "entry {i} overrides {} frames, sequence has {frames}",
                    e.len()
                )));
            }
        }
        if let Some(f) = self.freeze_base_frame {
            check_index(f, frames)?;
        }
        Ok(())
    }
}

/// Rotations for the grown joints at `frame`: the explicit override when one
/// is supplied, otherwise the decoder's output at timestamp `t`.
pub fn resolve_extra_rotations(book: &ExtraJointBook, frame: usize, t: f64, overrides: Option<&RotationOverrides>) -> Result<Vec<Rotation>> {
    match overrides {
        Some(o) => (0..book.len())
            .map(|i| {
                let per_frame = o.per_entry.get(i).ok_or(SkelError::IndexOutOfRange { index: i, len: o.per_entry.len() })?;
                let v = per_frame.get(frame).ok_or(SkelError::IndexOutOfRange { index: frame, len: per_frame.len() })?;
                Ok(exp_so3(v))
            })
            .collect(),
        None => book.rotations_at(t),
    }
}
