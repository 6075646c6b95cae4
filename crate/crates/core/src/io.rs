//! On-disk formats: ASCII PLY, scene JSON with a binary observation sidecar,
//! the extra-joint book, trained models, run configs and training logs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkelError};
use crate::growth::RotationOverrides;
use crate::math::Vec3;
use crate::model::SkinnedModel;
use crate::synth::{SceneSpec, SyntheticScene};
use crate::trainer::{LossRecord, TrainConfig, TrainReport};

/// Magic bytes at the start of a scene sidecar.
pub const SCENE_MAGIC: &[u8; 8] = b"SKGSCN01";
const SIDECAR_HEADER: usize = 8 + 4 * 8;

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    std::fs::write(&tmp, bytes).map_err(|e| SkelError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| SkelError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| SkelError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| SkelError::io(path, e))
}

fn format_err(path: &Path, reason: impl ToString) -> SkelError {
    SkelError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory serialization");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| format_err(path, e))
}

// ---------------------------------------------------------------- PLY

/// `%.9g`-style rendering: nine significant digits, no trailing zeros.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn ply_string(points: &[Vec3]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    );
    for p in points {
        let _ = writeln!(s, "{} {} {}", format_g9(p.x), format_g9(p.y), format_g9(p.z));
    }
    s
}

pub fn export_ply(points: &[Vec3], path: &Path) -> Result<()> {
    if let Some(p) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(SkelError::invalid("points", format!("point {p} is not finite")));
    }
    write_atomic(path, ply_string(points).as_bytes())
}

/// Reads the ASCII PLY files written by [`export_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<Vec3>> {
    parse_ply(&read_to_string(path)?).map_err(|r| format_err(path, r))
}

fn parse_ply(text: &str) -> std::result::Result<Vec<Vec3>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format ascii 1.0") {
        return Err("not an ASCII PLY file".into());
    }
    let mut count = None;
    for line in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|e| e.to_string())?);
        }
    }
    let count = count.ok_or("missing vertex count")?;
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let c: Vec<f64> = line.split_whitespace().map(str::parse::<f64>).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
        if c.len() < 3 {
            return Err(format!("short vertex line `{line}`"));
        }
        points.push(Vec3::new(c[0], c[1], c[2]));
    }
    if points.len() != count {
        return Err(format!("expected {count} vertices, found {}", points.len()));
    }
    Ok(points)
}

pub fn frame_file_name(frame: usize) -> String {
    format!("frame_{frame:04}.ply")
}

/// One PLY per frame inside `dir`.
pub fn export_ply_sequence(frames: &[Vec<Vec3>], dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, pts)| {
            let path = dir.join(frame_file_name(i));
            export_ply(pts, &path)?;
            Ok(path)
        })
        .collect()
}

// ---------------------------------------------------------------- scenes

pub fn sidecar_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("bin")
}

/// Writes the scene JSON and its observation sidecar next to it.
pub fn save_scene(scene: &SyntheticScene, path: &Path) -> Result<()> {
    let n = scene.observations.len();
    let p = scene.point_count();
    let mut bin = Vec::with_capacity(SIDECAR_HEADER + n * p * 24);
    bin.extend_from_slice(SCENE_MAGIC);
    for v in [n as u64, p as u64, 3, scene.spec.seed] {
        bin.extend_from_slice(&v.to_le_bytes());
    }
    for frame in &scene.observations {
        if frame.len() != p {
            return Err(SkelError::ShapeMismatch(format!("observation frame has {} points, scene has {p}", frame.len())));
        }
        for x in frame {
            for c in x.iter() {
                bin.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    write_atomic(&sidecar_path(path), &bin)?;
    write_json(path, scene)
}

pub fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let mut scene: SyntheticScene = read_json(path)?;
    let side = sidecar_path(path);
    let bin = std::fs::read(&side).map_err(|e| SkelError::io(&side, e))?;
    if bin.len() < SIDECAR_HEADER || &bin[..8] != SCENE_MAGIC {
        return Err(format_err(&side, "missing scene sidecar header"));
    }
    let word = |i: usize| u64::from_le_bytes(bin[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
    let (n, p, dim, seed) = (word(0) as usize, word(1) as usize, word(2), word(3));
    if dim != 3 || p != scene.point_count() || n != scene.spec.frames || seed != scene.spec.seed {
        return Err(format_err(&side, "sidecar header disagrees with the scene document"));
    }
    if bin.len() != SIDECAR_HEADER + n * p * 24 {
        return Err(format_err(&side, "sidecar length disagrees with its header"));
    }
    let value = |i: usize| f64::from_le_bytes(bin[SIDECAR_HEADER + 8 * i..SIDECAR_HEADER + 8 * i + 8].try_into().expect("8 bytes"));
    scene.observations = (0..n)
        .map(|f| (0..p).map(|q| {
            let base = 3 * (f * p + q);
            Vec3::new(value(base), value(base + 1), value(base + 2))
        }).collect())
        .collect();
    Ok(scene)
}

// ---------------------------------------------------------------- joint book

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointBookRecord {
    pub parent: usize,
    pub canonical_position: [f64; 3],
    pub per_frame_axis_angle: Vec<[f64; 3]>,
}

/// Grown joints with their decoded per-frame rotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointBookDocument {
    pub timestamps: Vec<f64>,
    pub entries: Vec<JointBookRecord>,
}

impl JointBookDocument {
    pub fn from_model(model: &SkinnedModel) -> Result<Self> {
        let timestamps = model.poses.timestamps().to_vec();
        let entries = model
            .book
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let pos = model.book.canonical_position(&model.tree, i)?;
                let per_frame = timestamps
                    .iter()
                    .map(|&t| model.book.decoder.decode_axis_angle(i, t).map(|v| [v.x, v.y, v.z]))
                    .collect::<Result<_>>()?;
                Ok(JointBookRecord {
                    parent: e.parent,
                    canonical_position: [pos.x, pos.y, pos.z],
                    per_frame_axis_angle: per_frame,
                })
            })
            .collect::<Result<_>>()?;
        Ok(JointBookDocument { timestamps, entries })
    }

    /// The decoded rotations as explicit overrides.
    pub fn to_overrides(&self) -> RotationOverrides {
        RotationOverrides {
            per_entry: self.entries.iter().map(|e| e.per_frame_axis_angle.iter().map(|v| Vec3::from(*v)).collect()).collect(),
            freeze_base_frame: None,
        }
    }
}

// ---------------------------------------------------------------- models and logs

pub fn save_model(model: &SkinnedModel, path: &Path) -> Result<()> {
    write_json(path, model)
}

pub fn load_model(path: &Path) -> Result<SkinnedModel> {
    let m: SkinnedModel = read_json(path)?;
    SkinnedModel::new(m.tree, m.poses, m.cloud, m.book)
}

pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("iteration,phase,loss,point_count,eps_d\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{:e},{},{:e}", r.iteration, r.phase.name(), r.loss, r.point_count, r.eps_d);
    }
    s
}

pub fn write_report(report: &TrainReport, path: &Path) -> Result<()> {
    write_json(path, report)
}

// ---------------------------------------------------------------- run configs

/// Where a training run gets its scene from.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneSource {
    Spec(SceneSpec),
    Path(PathBuf),
}

/// A training config file: every [`TrainConfig`] field at the top level plus
/// `scene` (inline spec) or `scene_path`, and an optional `out_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfigFile {
    pub train: TrainConfig,
    pub scene: SceneSource,
    pub out_dir: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SkelError::invalid("config", e.to_string()))?;
        let serde_json::Value::Object(mut map) = value else {
            return Err(SkelError::invalid("config", "expected a JSON object"));
        };
        let scene = match (map.remove("scene"), map.remove("scene_path")) {
            (Some(spec), None) => SceneSource::Spec(serde_json::from_value(spec).map_err(|e| SkelError::invalid("scene", e.to_string()))?),
            (None, Some(serde_json::Value::String(p))) => SceneSource::Path(PathBuf::from(p)),
            (None, Some(_)) => return Err(SkelError::invalid("scene_path", "must be a string")),
            (Some(_), Some(_)) => return Err(SkelError::invalid("scene", "give either `scene` or `scene_path`, not both")),
            (None, None) => return Err(SkelError::invalid("scene", "missing `scene` or `scene_path`")),
        };
        let out_dir = match map.remove("out_dir") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(p)) => Some(PathBuf::from(p)),
            Some(_) => return Err(SkelError::invalid("out_dir", "must be a string")),
        };
        let train: TrainConfig = serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| SkelError::invalid("config", e.to_string()))?;
        train.validate()?;
        if let SceneSource::Spec(spec) = &scene {
            spec.validate()?;
        }
        Ok(RunConfigFile { train, scene, out_dir })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&read_to_string(path)?)?;
        if let SceneSource::Path(p) = &mut cfg.scene {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(&self.train).expect("config serializes");
        let map = value.as_object_mut().expect("struct");
        match &self.scene {
            SceneSource::Spec(s) => map.insert("scene".into(), serde_json::to_value(s).expect("spec serializes")),
            SceneSource::Path(p) => map.insert("scene_path".into(), p.display().to_string().into()),
        };
        if let Some(o) = &self.out_dir {
            map.insert("out_dir".into(), o.display().to_string().into());
        }
        to_json(&value)
    }

    /// Loads or generates the scene this config refers to.
    pub fn resolve_scene(&self) -> Result<SyntheticScene> {
        match &self.scene {
            SceneSource::Spec(spec) => crate::synth::generate_scene(spec),
            SceneSource::Path(p) => load_scene(p),
        }
    }
}

pub fn load_overrides(path: &Path) -> Result<RotationOverrides> {
    read_json(path)
}
