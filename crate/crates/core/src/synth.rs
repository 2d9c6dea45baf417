//! Observation synthesis by point-cloud editing.
//!
//! Every source frame is partitioned once into static object points (those
//! still lying on an object's frame-0 snapshot), fixed scene points and
//! end-effector points. The end-effector group includes whatever the hand
//! carries, so an object in hand moves with the gripper. Static object points
//! follow their object's configuration delta, end-effector points follow the
//! frame change between the matched source action and the adapted action.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::ActionPlan;
use crate::demo_store::{ArmFrame, Demonstration, Frame};
use crate::error::{Error, Result};
use crate::parser::SegmentIndex;
use crate::pointcloud::{
    apply_affine, to_f64, LabeledCloud, SpatialGrid, DEFAULT_PROXIMITY_RADIUS, LABEL_BACKGROUND,
    LABEL_EE, LABEL_OBSTACLE,
};
use crate::se3::{ConfigDelta, Pose};

pub const MIN_SPLIT_POINTS: usize = 10;
pub const DEFAULT_STATIC_COVERAGE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Todo,
    Doing,
    Done,
}

pub fn stage_of(seg: &SegmentIndex, object: usize, t: usize) -> Stage {
    match seg.skill_of(object) {
        Some((_, s)) if t < s.start => Stage::Todo,
        Some((_, s)) if t < s.end => Stage::Doing,
        Some(_) => Stage::Done,
        None => Stage::Todo,
    }
}

/// Moves the proprioceptive arm state by the same frame change as the action.
pub fn adapt_proprio(state: &Pose, source_action: &Pose, adapted_action: &Pose) -> Pose {
    Pose::delta_between(source_action, adapted_action).compose(state)
}

/// Splits a scene into (end-effector, object) points: scene points within
/// `radius` of either snapshot belong to the object.
pub fn split_doing_frame(
    scene: &LabeledCloud,
    todo_snapshot: &LabeledCloud,
    done_snapshot: &LabeledCloud,
    radius: f64,
) -> Result<(LabeledCloud, LabeledCloud)> {
    let mut reference = todo_snapshot.filter(|i| todo_snapshot.labels[i] != LABEL_OBSTACLE);
    reference.extend(&done_snapshot.filter(|i| done_snapshot.labels[i] != LABEL_OBSTACLE));
    if reference.is_empty() {
        return Ok((scene.clone(), LabeledCloud::default()));
    }
    let grid = SpatialGrid::from_cloud(&reference, radius);
    let hit: Vec<bool> = scene
        .points
        .iter()
        .map(|p| grid.any_within(&to_f64(p), radius))
        .collect();
    let object = scene.filter(|i| hit[i]);
    if object.len() < MIN_SPLIT_POINTS {
        return Err(Error::DegenerateSplit {
            found: object.len(),
            needed: MIN_SPLIT_POINTS,
        });
    }
    Ok((scene.filter(|i| !hit[i]), object))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointGroup {
    Object(usize),
    Ee(usize),
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    /// Proximity radius matching scene points to static object snapshots.
    pub split_radius: f64,
    /// Fraction of an object's frame-0 points still matched in the last frame
    /// above which the object counts as never moved.
    pub static_coverage: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            split_radius: DEFAULT_PROXIMITY_RADIUS,
            static_coverage: DEFAULT_STATIC_COVERAGE,
        }
    }
}

/// A parsed source demonstration with its per-frame point partition.
#[derive(Clone, Debug)]
pub struct PreparedDemo {
    pub demo: Demonstration,
    pub seg: SegmentIndex,
    pub groups: Vec<Vec<PointGroup>>,
    pub static_objects: Vec<bool>,
}

impl PreparedDemo {
    pub fn new(demo: Demonstration, opts: &SynthOptions) -> Result<Self> {
        let seg = demo.segments.clone().ok_or_else(|| {
            Error::InvalidArgument("demonstration has no segment index; parse it first".into())
        })?;
        if !(opts.split_radius > 0.0) {
            return Err(Error::InvalidArgument(
                "split radius must be positive".into(),
            ));
        }
        let r = opts.split_radius;
        let frame0 = &demo.frames[0].cloud;
        let k = demo.num_objects();
        let snapshots: Vec<SpatialGrid> = (0..k)
            .map(|obj| SpatialGrid::from_cloud(&frame0.with_label(obj as i32), r))
            .collect();
        let fixed =
            frame0.filter(|i| matches!(frame0.labels[i], LABEL_BACKGROUND | LABEL_OBSTACLE));
        let fixed_grid = (!fixed.is_empty()).then(|| SpatialGrid::from_cloud(&fixed, r));

        let last = &demo.frames[demo.len() - 1].cloud;
        let last_grid = SpatialGrid::from_cloud(last, r);
        let static_objects: Vec<bool> = (0..k)
            .map(|obj| {
                let pts = frame0.with_label(obj as i32);
                if pts.is_empty() {
                    return true;
                }
                let hit = pts
                    .points
                    .iter()
                    .filter(|p| last_grid.any_within(&to_f64(p), r))
                    .count();
                hit as f64 / pts.len() as f64 >= opts.static_coverage
            })
            .collect();
        let skill_end: Vec<usize> = (0..k)
            .map(|obj| seg.skill_of(obj).map_or(usize::MAX, |(_, s)| s.end))
            .collect();

        let arms = demo.num_arms();
        let groups = demo
            .frames
            .par_iter()
            .enumerate()
            .map(|(t, f)| {
                let ee_pos: Vec<[f64; 3]> =
                    f.arms.iter().map(|a| a.state.position.into()).collect();
                let nearest_arm = |p: &[f64; 3]| -> usize {
                    if arms < 2 {
                        return 0;
                    }
                    (0..arms)
                        .min_by(|&a, &b| dist2(&ee_pos[a], p).total_cmp(&dist2(&ee_pos[b], p)))
                        .unwrap_or(0)
                };
                f.cloud
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let q = to_f64(p);
                        if t == 0 {
                            return match f.cloud.labels[i] {
                                l if l >= 0 => PointGroup::Object(l as usize),
                                LABEL_BACKGROUND | LABEL_OBSTACLE => PointGroup::Fixed,
                                _ => PointGroup::Ee(nearest_arm(&q)),
                            };
                        }
                        if fixed_grid.as_ref().is_some_and(|g| g.any_within(&q, r)) {
                            return PointGroup::Fixed;
                        }
                        for obj in 0..k {
                            if (static_objects[obj] || t < skill_end[obj])
                                && snapshots[obj].any_within(&q, r)
                            {
                                return PointGroup::Object(obj);
                            }
                        }
                        PointGroup::Ee(nearest_arm(&q))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            demo,
            seg,
            groups,
            static_objects,
        })
    }

    /// Partition labels of source frame `t`: object id, `LABEL_EE`, or `LABEL_OBSTACLE`.
    pub fn partition_labels(&self, t: usize) -> Vec<i32> {
        self.groups[t]
            .iter()
            .map(|g| match g {
                PointGroup::Object(k) => *k as i32,
                PointGroup::Ee(_) => LABEL_EE,
                PointGroup::Fixed => LABEL_OBSTACLE,
            })
            .collect()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    crate::pointcloud::dist2(a, b)
}

/// Per-arm inputs for one synthesized frame.
#[derive(Clone, Debug)]
pub struct ArmEdit<'a> {
    pub ee_delta: Pose,
    pub action: Pose,
    pub hand_action: &'a [f64],
}

/// Edits one source frame: points by group, proprioception by `ee_delta`,
/// actions replaced by the plan's.
pub fn synthesize_frame(
    source: &Frame,
    groups: &[PointGroup],
    deltas: &ConfigDelta,
    arms: &[ArmEdit],
) -> Result<Frame> {
    let mut obj_affine = Vec::with_capacity(deltas.len());
    for d in deltas.iter() {
        obj_affine.push((!d.is_identity()).then(|| d.to_affine_rows()));
    }
    let ee_affine: Vec<_> = arms
        .iter()
        .map(|a| (!a.ee_delta.is_identity()).then(|| a.ee_delta.to_affine_rows()))
        .collect();
    let mut points = Vec::with_capacity(source.cloud.len());
    for (p, g) in source.cloud.points.iter().zip(groups) {
        let m = match g {
            PointGroup::Object(k) => obj_affine
                .get(*k)
                .ok_or(Error::MissingDelta(*k as i32))?
                .as_ref(),
            PointGroup::Ee(a) => ee_affine
                .get(*a)
                .ok_or(Error::MissingDelta(LABEL_EE))?
                .as_ref(),
            PointGroup::Fixed => None,
        };
        points.push(match m {
            Some(m) => apply_affine(m, p),
            None => *p,
        });
    }
    let arm_frames = source
        .arms
        .iter()
        .zip(arms)
        .map(|(src, edit)| ArmFrame {
            state: edit.ee_delta.compose(&src.state),
            hand_state: src.hand_state.clone(),
            action: edit.action,
            hand_action: edit.hand_action.to_vec(),
        })
        .collect();
    Ok(Frame {
        cloud: LabeledCloud {
            points,
            labels: source.cloud.labels.clone(),
            colors: source.cloud.colors.clone(),
        },
        arms: arm_frames,
    })
}

/// Builds the demonstration for `targets` from its action plan.
pub fn synthesize_demo(
    prepared: &PreparedDemo,
    targets: &[Pose],
    plan: &ActionPlan,
) -> Result<Demonstration> {
    let demo = &prepared.demo;
    if targets.len() != demo.num_objects() {
        return Err(Error::InvalidArgument(format!(
            "{} target poses for {} objects",
            targets.len(),
            demo.num_objects()
        )));
    }
    let deltas = ConfigDelta::between(&demo.init_config, targets);
    synthesize_timeline(prepared, targets, plan, |_| deltas.clone())
}

/// Like [`synthesize_demo`], with object deltas that may change over the
/// plan's frames.
pub fn synthesize_timeline(
    prepared: &PreparedDemo,
    init_config: &[Pose],
    plan: &ActionPlan,
    deltas_at: impl Fn(usize) -> ConfigDelta,
) -> Result<Demonstration> {
    let demo = &prepared.demo;
    let frames = (0..plan.len())
        .map(|j| {
            let base = plan
                .arms
                .iter()
                .map(|a| a.source_frames[j])
                .max()
                .unwrap_or(0);
            let src = &demo.frames[base];
            let edits: Vec<ArmEdit> = plan
                .arms
                .iter()
                .zip(&src.arms)
                .map(|(a, s)| ArmEdit {
                    ee_delta: Pose::delta_between(&s.action, &a.poses[j]),
                    action: a.poses[j],
                    hand_action: &a.hands[j],
                })
                .collect();
            synthesize_frame(src, &prepared.groups[base], &deltas_at(j), &edits)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Demonstration {
        task: demo.task.clone(),
        frames,
        init_config: init_config.to_vec(),
        object_names: demo.object_names.clone(),
        segments: Some(plan.segment_index()),
        camera: demo.camera,
        arm_object_map: demo.arm_object_map.clone(),
    })
}
