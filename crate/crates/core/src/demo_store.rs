//! On-disk demonstration container and validation.
//!
//! A container is a directory holding `meta.json` and `frames.bin`. The binary
//! payload stores, for each frame in order: `N*3` little-endian f32 points,
//! `N` little-endian i32 labels (frame 0 only), then for each arm 7 f64 arm
//! state, `H` f64 hand state, 7 f64 arm action and `H` f64 hand action.
//! Labels of later frames are not persisted and read back as [`LABEL_EE`].

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parser::{SegmentIndex, SegmentKind};
use crate::pointcloud::{LabeledCloud, LABEL_EE};
use crate::se3::Pose;

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.bin";
pub const DATASET_MANIFEST: &str = "dataset.json";

const QUAT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ArmFrame {
    pub state: Pose,
    pub hand_state: Vec<f64>,
    pub action: Pose,
    pub hand_action: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub cloud: LabeledCloud,
    pub arms: Vec<ArmFrame>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub task: String,
    pub frames: Vec<Frame>,
    pub init_config: Vec<Pose>,
    pub object_names: Vec<String>,
    pub segments: Option<SegmentIndex>,
    pub camera: Pose,
    /// Objects handled by each arm, in task order.
    pub arm_object_map: Vec<Vec<usize>>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_objects(&self) -> usize {
        self.init_config.len()
    }

    pub fn num_arms(&self) -> usize {
        self.frames.first().map_or(0, |f| f.arms.len())
    }

    pub fn num_points(&self) -> usize {
        self.frames.first().map_or(0, |f| f.cloud.len())
    }

    pub fn hand_dim(&self) -> usize {
        self.frames
            .first()
            .and_then(|f| f.arms.first())
            .map_or(0, |a| a.hand_action.len())
    }

    pub fn actions(&self, arm: usize) -> Vec<Pose> {
        self.frames.iter().map(|f| f.arms[arm].action).collect()
    }

    pub fn hand_actions(&self, arm: usize) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.arms[arm].hand_action.clone())
            .collect()
    }

    /// Objects handled by `arm`; a single-arm demo without a map handles all.
    pub fn objects_of_arm(&self, arm: usize) -> Vec<usize> {
        match self.arm_object_map.get(arm) {
            Some(objs) => objs.clone(),
            None if self.num_arms() == 1 => (0..self.num_objects()).collect(),
            None => Vec::new(),
        }
    }

    /// The form the demo takes after a write/read cycle: later-frame labels
    /// are unassigned and colors are dropped.
    pub fn as_stored(&self) -> Demonstration {
        let mut d = self.clone();
        for (t, f) in d.frames.iter_mut().enumerate() {
            f.cloud.colors = None;
            if t > 0 {
                f.cloud.labels.iter_mut().for_each(|l| *l = LABEL_EE);
            }
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub version: u32,
    pub task: String,
    #[serde(rename = "L")]
    pub frames: usize,
    #[serde(rename = "N")]
    pub points: usize,
    #[serde(rename = "K")]
    pub objects: usize,
    #[serde(rename = "H")]
    pub hand_dim: usize,
    pub arms: usize,
    pub object_names: Vec<String>,
    pub init_poses: Vec<Pose>,
    pub segment_index: Option<SegmentIndex>,
    pub camera: Pose,
    pub arm_object_map: Vec<Vec<usize>>,
}

/// One entry per violated invariant.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }
}

pub fn validate(demo: &Demonstration) -> ValidationReport {
    let mut r = ValidationReport::default();
    let l = demo.frames.len();
    if l < 2 {
        r.push(format!("demonstration has {l} frames, need at least 2"));
    }
    let k = demo.init_config.len();
    if demo.object_names.len() != k {
        r.push(format!(
            "{} object names for {k} initial poses",
            demo.object_names.len()
        ));
    }
    for (i, p) in demo.init_config.iter().enumerate() {
        check_pose(&mut r, p, &format!("initial pose of object {i}"));
    }
    check_pose(&mut r, &demo.camera, "camera pose");

    if let Some(first) = demo.frames.first() {
        let arms = first.arms.len();
        let n = first.cloud.len();
        let h = first.arms.first().map_or(0, |a| a.hand_action.len());
        if !(1..=2).contains(&arms) {
            r.push(format!("arm count {arms} is not 1 or 2"));
        }
        if !demo.arm_object_map.is_empty() && demo.arm_object_map.len() != arms {
            r.push(format!(
                "arm_object_map has {} entries for {arms} arms",
                demo.arm_object_map.len()
            ));
        }
        for objs in &demo.arm_object_map {
            if let Some(bad) = objs.iter().find(|&&o| o >= k) {
                r.push(format!("arm_object_map names object {bad} but K = {k}"));
            }
        }
        if let Some(bad) = first.cloud.labels.iter().find(|&&lab| lab >= k as i32) {
            r.push(format!("frame 0 carries label {bad} but K = {k}"));
        }
        for (t, f) in demo.frames.iter().enumerate() {
            if f.cloud.labels.len() != f.cloud.points.len() {
                r.push(format!(
                    "frame {t}: {} labels for {} points",
                    f.cloud.labels.len(),
                    f.cloud.points.len()
                ));
            }
            if f.cloud.len() != n {
                r.push(format!(
                    "frame {t}: {} points, frame 0 has {n}",
                    f.cloud.len()
                ));
            }
            if f.cloud.points.iter().flatten().any(|v| !v.is_finite()) {
                r.push(format!("frame {t}: non-finite point coordinate"));
            }
            if f.arms.len() != arms {
                r.push(format!(
                    "frame {t}: {} arms, frame 0 has {arms}",
                    f.arms.len()
                ));
            }
            for (a, arm) in f.arms.iter().enumerate() {
                if arm.hand_state.len() != h || arm.hand_action.len() != h {
                    r.push(format!(
                        "frame {t} arm {a}: hand dims {}/{} differ from {h}",
                        arm.hand_state.len(),
                        arm.hand_action.len()
                    ));
                }
                check_pose(&mut r, &arm.state, &format!("frame {t} arm {a} state"));
                check_pose(&mut r, &arm.action, &format!("frame {t} arm {a} action"));
                if arm
                    .hand_state
                    .iter()
                    .chain(&arm.hand_action)
                    .any(|v| !v.is_finite())
                {
                    r.push(format!("frame {t} arm {a}: non-finite hand value"));
                }
            }
        }
        if let Some(seg) = &demo.segments {
            check_segments(&mut r, seg, l, arms, demo);
        }
    }
    r
}

fn check_pose(r: &mut ValidationReport, p: &Pose, what: &str) {
    let finite = p.position.iter().all(|v| v.is_finite()) && p.wxyz().iter().all(|v| v.is_finite());
    if !finite {
        r.push(format!("{what}: non-finite value"));
        return;
    }
    let norm = p.quaternion_norm();
    if (norm - 1.0).abs() > QUAT_TOL {
        r.push(format!("{what}: quaternion norm {norm} is not 1"));
    }
}

fn check_segments(
    r: &mut ValidationReport,
    seg: &SegmentIndex,
    l: usize,
    arms: usize,
    demo: &Demonstration,
) {
    if seg.arms.len() != arms {
        r.push(format!(
            "segment index covers {} arms, demo has {arms}",
            seg.arms.len()
        ));
    }
    for (a, list) in seg.arms.iter().enumerate() {
        let mut cursor = 0usize;
        for (i, s) in list.iter().enumerate() {
            if s.end < s.start {
                r.push(format!(
                    "arm {a}: segment {i} [{}, {}) is reversed",
                    s.start, s.end
                ));
            }
            if i > 0 {
                let prev = &list[i - 1];
                if s.start < prev.end {
                    r.push(format!(
                        "arm {a}: segments [{}, {}) and [{}, {}) overlap",
                        prev.start, prev.end, s.start, s.end
                    ));
                } else if s.start > prev.end {
                    r.push(format!(
                        "arm {a}: gap between [{}, {}) and [{}, {})",
                        prev.start, prev.end, s.start, s.end
                    ));
                }
            } else if s.start != 0 {
                r.push(format!("arm {a}: first segment starts at {}", s.start));
            }
            let expected = if i % 2 == 0 {
                SegmentKind::Motion
            } else {
                SegmentKind::Skill
            };
            if s.kind != expected {
                r.push(format!("arm {a}: segment {i} should be {expected:?}"));
            }
            cursor = cursor.max(s.end);
        }
        if !list.is_empty() && cursor != l {
            r.push(format!(
                "arm {a}: segments end at {cursor}, demo has {l} frames"
            ));
        }
        let objs: Vec<usize> = list
            .iter()
            .filter(|s| s.kind == SegmentKind::Skill)
            .map(|s| s.object)
            .collect();
        let expected = demo.objects_of_arm(a);
        if !list.is_empty() && objs != expected {
            r.push(format!(
                "arm {a}: skill objects {objs:?} differ from task order {expected:?}"
            ));
        }
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn meta_of(demo: &Demonstration) -> Meta {
    Meta {
        version: FORMAT_VERSION,
        task: demo.task.clone(),
        frames: demo.len(),
        points: demo.num_points(),
        objects: demo.num_objects(),
        hand_dim: demo.hand_dim(),
        arms: demo.num_arms(),
        object_names: demo.object_names.clone(),
        init_poses: demo.init_config.clone(),
        segment_index: demo.segments.clone(),
        camera: demo.camera,
        arm_object_map: demo.arm_object_map.clone(),
    }
}

/// Writes the container directory, creating it if needed.
pub fn write(demo: &Demonstration, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let report = validate(demo);
    if !report.is_valid() {
        return Err(Error::Validation(report.violations.join("; ")));
    }
    fs::create_dir_all(dir)?;
    let meta = meta_of(demo);
    fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;

    let mut out = BufWriter::new(fs::File::create(dir.join(FRAMES_FILE))?);
    let mut buf = Vec::with_capacity(frame_bytes(&meta, true));
    for (t, f) in demo.frames.iter().enumerate() {
        buf.clear();
        for p in &f.cloud.points {
            for v in p {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if t == 0 {
            for l in &f.cloud.labels {
                buf.extend_from_slice(&l.to_le_bytes());
            }
        }
        for arm in &f.arms {
            buf.extend_from_slice(&arm.state.to_le_bytes());
            for v in &arm.hand_state {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&arm.action.to_le_bytes());
            for v in &arm.hand_action {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn frame_bytes(meta: &Meta, with_labels: bool) -> usize {
    let cloud = meta.points * 12 + if with_labels { meta.points * 4 } else { 0 };
    cloud + meta.arms * (2 * 56 + 2 * 8 * meta.hand_dim)
}

pub fn read_meta(dir: impl AsRef<Path>) -> Result<Meta> {
    let path = dir.as_ref().join(META_FILE);
    let bytes = fs::read(&path)?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| format_err(&path, e.to_string()))?;
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(format_err(
            &path,
            format!("unsupported format version {version:?}, expected {FORMAT_VERSION}"),
        ));
    }
    serde_json::from_value(value).map_err(|e| format_err(&path, e.to_string()))
}

pub fn read(dir: impl AsRef<Path>) -> Result<Demonstration> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let path = dir.join(FRAMES_FILE);
    let bytes = fs::read(&path)?;
    if meta.frames == 0 {
        return Err(format_err(&path, "meta declares zero frames"));
    }
    let expected = frame_bytes(&meta, true) + (meta.frames - 1) * frame_bytes(&meta, false);
    if bytes.len() != expected {
        return Err(format_err(
            &path,
            format!("payload is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let mut frames = Vec::with_capacity(meta.frames);
    for t in 0..meta.frames {
        let points: Vec<[f32; 3]> = (0..meta.points)
            .map(|_| [cur.f32(), cur.f32(), cur.f32()])
            .collect();
        let labels = if t == 0 {
            (0..meta.points).map(|_| cur.i32()).collect()
        } else {
            vec![LABEL_EE; meta.points]
        };
        let arms = (0..meta.arms)
            .map(|_| {
                let state = cur.pose();
                let hand_state = (0..meta.hand_dim).map(|_| cur.f64()).collect();
                let action = cur.pose();
                let hand_action = (0..meta.hand_dim).map(|_| cur.f64()).collect();
                ArmFrame {
                    state,
                    hand_state,
                    action,
                    hand_action,
                }
            })
            .collect();
        frames.push(Frame {
            cloud: LabeledCloud {
                points,
                labels,
                colors: None,
            },
            arms,
        });
    }
    let demo = Demonstration {
        task: meta.task,
        frames,
        init_config: meta.init_poses,
        object_names: meta.object_names,
        segments: meta.segment_index,
        camera: meta.camera,
        arm_object_map: meta.arm_object_map,
    };
    if demo.num_objects() != meta.objects {
        return Err(format_err(
            dir,
            format!(
                "K = {} but {} initial poses",
                meta.objects,
                demo.num_objects()
            ),
        ));
    }
    let report = validate(&demo);
    if !report.is_valid() {
        return Err(Error::Validation(report.violations.join("; ")));
    }
    Ok(demo)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N]
            .try_into()
            .expect("length checked up front");
        self.pos += N;
        out
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn pose(&mut self) -> Pose {
        Pose::from_le_bytes(&self.take())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedTarget {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationTiming {
    pub total_seconds: f64,
    pub per_trajectory_seconds: f64,
    pub per_frame_seconds: f64,
}

/// `dataset.json`: the containers of a dataset directory plus provenance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub task: String,
    pub demos: Vec<String>,
    pub spec_hash: String,
    #[serde(default)]
    pub rejected: Vec<RejectedTarget>,
    #[serde(default)]
    pub timing: Option<GenerationTiming>,
}

impl DatasetManifest {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::write(
            dir.as_ref().join(DATASET_MANIFEST),
            serde_json::to_vec_pretty(self)?,
        )?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(DATASET_MANIFEST);
        let m: DatasetManifest = serde_json::from_slice(&fs::read(&path)?)
            .map_err(|e| format_err(&path, e.to_string()))?;
        if m.version != FORMAT_VERSION {
            return Err(format_err(
                &path,
                format!("unsupported manifest version {}", m.version),
            ));
        }
        Ok(m)
    }
}

/// Container directories of a dataset: the manifest list when present,
/// otherwise every subdirectory holding a `meta.json`, sorted by name.
pub fn dataset_containers(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if dir.join(DATASET_MANIFEST).exists() {
        let m = DatasetManifest::read(dir)?;
        return Ok(m.demos.iter().map(|d| dir.join(d)).collect());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).exists())
        .collect();
    out.sort();
    Ok(out)
}
