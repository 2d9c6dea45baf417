//! Adapting source end-effector actions to a new object configuration.
//!
//! Skill segments are carried rigidly with their object: with world-frame
//! poses the adapted action is `delta * a` where `delta = target * source^-1`,
//! which keeps `object^-1 * ee` unchanged. Motion segments are replanned
//! between the adapted skill endpoints.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::demo_store::Demonstration;
use crate::error::{Error, Result};
use crate::parser::{Segment, SegmentIndex, SegmentKind};
use crate::planner::{self, Obstacles, PlannerConfig};
use crate::pointcloud::LabeledCloud;
use crate::se3::Pose;

/// Planar region (x, y in meters) the robot can reach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Workspace {
    pub polygon: Vec<[f64; 2]>,
}

impl Workspace {
    pub fn rect(min: [f64; 2], max: [f64; 2]) -> Self {
        Self {
            polygon: vec![min, [max[0], min[1]], max, [min[0], max[1]]],
        }
    }

    /// Boundary-inclusive point-in-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let p = &self.polygon;
        let n = p.len();
        if n < 3 {
            return false;
        }
        let mut inside = false;
        for i in 0..n {
            let a = p[i];
            let b = p[(i + 1) % n];
            let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
            let within = x >= a[0].min(b[0]) - 1e-12
                && x <= a[0].max(b[0]) + 1e-12
                && y >= a[1].min(b[1]) - 1e-12
                && y <= a[1].max(b[1]) + 1e-12;
            if cross.abs() <= 1e-12 && within {
                return true;
            }
            if (a[1] > y) != (b[1] > y) {
                let xi = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if x < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.polygon {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.polygon.len() as f64;
        let s = self
            .polygon
            .iter()
            .fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        [s[0] / n, s[1] / n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameTag {
    Skill(usize),
    Motion(usize),
    Inserted,
}

/// One arm's adapted actions, with the source frame each one derives from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArmPlan {
    pub poses: Vec<Pose>,
    pub hands: Vec<Vec<f64>>,
    pub tags: Vec<FrameTag>,
    pub source_frames: Vec<usize>,
    /// Segment layout in the adapted timeline.
    pub segments: Vec<Segment>,
}

impl ArmPlan {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub(crate) fn push(&mut self, pose: Pose, hand: Vec<f64>, tag: FrameTag, source: usize) {
        self.poses.push(pose);
        self.hands.push(hand);
        self.tags.push(tag);
        self.source_frames.push(source);
    }

    /// Holds the final action until the plan has `len` frames.
    pub fn pad_to(&mut self, len: usize) {
        while self.len() < len {
            let i = self.len() - 1;
            self.push(
                self.poses[i],
                self.hands[i].clone(),
                FrameTag::Inserted,
                self.source_frames[i],
            );
        }
        if let Some(last) = self.segments.last_mut() {
            last.end = last.end.max(len);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActionPlan {
    pub arms: Vec<ArmPlan>,
}

impl ActionPlan {
    pub fn len(&self) -> usize {
        self.arms.first().map_or(0, |a| a.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment_index(&self) -> SegmentIndex {
        SegmentIndex {
            arms: self.arms.iter().map(|a| a.segments.clone()).collect(),
        }
    }

    /// The source actions verbatim, as a plan.
    pub fn from_demo(demo: &Demonstration) -> Self {
        let seg = demo.segments.as_ref();
        let arms = (0..demo.num_arms())
            .map(|arm| {
                let segments = seg.map(|s| s.arms[arm].clone()).unwrap_or_default();
                let mut p = ArmPlan {
                    segments: segments.clone(),
                    ..Default::default()
                };
                for (t, f) in demo.frames.iter().enumerate() {
                    let tag = match segments.iter().find(|s| s.contains(t)) {
                        Some(s) if s.kind == SegmentKind::Skill => FrameTag::Skill(s.object),
                        Some(s) => FrameTag::Motion(s.object),
                        None => FrameTag::Inserted,
                    };
                    p.push(f.arms[arm].action, f.arms[arm].hand_action.clone(), tag, t);
                }
                p
            })
            .collect();
        Self { arms }
    }
}

/// Moves every pose with its object so the pose relative to the object is kept.
pub fn adapt_skill(actions: &[Pose], source_obj: &Pose, target_obj: &Pose) -> Vec<Pose> {
    let delta = Pose::delta_between(source_obj, target_obj);
    actions.iter().map(|a| delta.compose(a)).collect()
}

pub fn adapt_hand(hand_actions: &[Vec<f64>]) -> Vec<Vec<f64>> {
    hand_actions.to_vec()
}

#[derive(Clone, Debug, Default)]
pub struct AdaptOptions {
    pub planner: PlannerConfig,
    pub workspace: Option<Workspace>,
    /// When set, motions are planned around these points and skill
    /// waypoints must keep the planner clearance from them.
    pub obstacles: Option<LabeledCloud>,
}

pub fn check_reachable(targets: &[Pose], workspace: Option<&Workspace>) -> Result<()> {
    if let Some(ws) = workspace {
        for (k, t) in targets.iter().enumerate() {
            if !ws.contains(t.position.x, t.position.y) {
                return Err(Error::UnreachableTarget {
                    object: k,
                    x: t.position.x,
                    y: t.position.y,
                });
            }
        }
    }
    Ok(())
}

/// Adapts every arm to `targets` and pads the arms to a common length.
pub fn adapt_trajectory(
    demo: &Demonstration,
    seg: &SegmentIndex,
    targets: &[Pose],
    opts: &AdaptOptions,
) -> Result<ActionPlan> {
    if targets.len() != demo.num_objects() {
        return Err(Error::InvalidArgument(format!(
            "{} target poses for {} objects",
            targets.len(),
            demo.num_objects()
        )));
    }
    opts.planner.validate()?;
    check_reachable(targets, opts.workspace.as_ref())?;
    let obstacles = opts
        .obstacles
        .as_ref()
        .filter(|o| !o.is_empty())
        .map(Obstacles::new);
    let mut arms = (0..demo.num_arms())
        .map(|arm| adapt_arm(demo, &seg.arms[arm], arm, targets, opts, obstacles.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let len = arms.iter().map(ArmPlan::len).max().unwrap_or(0);
    for a in &mut arms {
        a.pad_to(len);
    }
    Ok(ActionPlan { arms })
}

/// Per-arm adaptation for two-arm demos; each arm follows its own objects.
pub fn adapt_bimanual(
    demo: &Demonstration,
    seg: &SegmentIndex,
    targets: &[Pose],
    opts: &AdaptOptions,
) -> Result<ActionPlan> {
    if demo.arm_object_map.len() != demo.num_arms() {
        return Err(Error::InvalidArgument(
            "bimanual adaptation needs an arm_object_map".into(),
        ));
    }
    adapt_trajectory(demo, seg, targets, opts)
}

fn adapt_arm(
    demo: &Demonstration,
    segments: &[Segment],
    arm: usize,
    targets: &[Pose],
    opts: &AdaptOptions,
    obstacles: Option<&Obstacles>,
) -> Result<ArmPlan> {
    let src = demo.actions(arm);
    let hands = demo.hand_actions(arm);
    let mut out = ArmPlan::default();
    let clearance = opts.planner.clearance;

    for pair in segments.chunks(2) {
        let [motion, skill] = pair else {
            return Err(Error::InvalidArgument(
                "segment list must alternate motion and skill".into(),
            ));
        };
        let k = skill.object;
        let source_obj = demo.init_config[k];
        let target_obj = *targets.get(k).ok_or(Error::NoSuchObject(k))?;
        let adapted = adapt_skill(&src[skill.start..skill.end], &source_obj, &target_obj);
        let first = out.is_empty();

        let (start, src_start, entry_hand, entry_frame) = if first {
            (src[0], src[0], hands[0].clone(), 0)
        } else {
            let i = out.len() - 1;
            (
                out.poses[i],
                src[motion.start - 1],
                out.hands[i].clone(),
                motion.start - 1,
            )
        };
        if let Some(o) = obstacles {
            if let Some(i) = adapted
                .iter()
                .position(|p| !o.point_clear(&p.position, clearance))
            {
                return Err(Error::ObstacleBlocksSkill {
                    frame: skill.start + i,
                });
            }
        }
        let goal = adapted[0];
        let reuse = start == src_start
            && goal == src[skill.start]
            && obstacles
                .is_none_or(|o| source_path_clear(&src, entry_frame, skill.start, o, clearance));

        let motion_start = out.len();
        if reuse {
            for t in motion.start..motion.end {
                out.push(src[t], hands[t].clone(), FrameTag::Motion(k), t);
            }
        } else {
            let mut req = opts.planner.request(start, goal);
            req.obstacles = opts.obstacles.clone();
            let path = planner::plan(&req)?;
            let inner = if first {
                &path[..path.len() - 1]
            } else {
                &path[1..path.len().max(2) - 1]
            };
            let map = progress_map(
                &path,
                inner,
                if first { 0 } else { 1 },
                &src,
                entry_frame,
                motion,
            );
            for (pose, t) in inner.iter().zip(map) {
                out.push(*pose, entry_hand.clone(), FrameTag::Motion(k), t);
            }
        }
        out.segments.push(Segment {
            kind: SegmentKind::Motion,
            object: k,
            start: motion_start,
            end: out.len(),
        });

        let skill_start = out.len();
        let skill_hands = adapt_hand(&hands[skill.start..skill.end]);
        for (i, (pose, hand)) in adapted.into_iter().zip(skill_hands).enumerate() {
            out.push(pose, hand, FrameTag::Skill(k), skill.start + i);
        }
        out.segments.push(Segment {
            kind: SegmentKind::Skill,
            object: k,
            start: skill_start,
            end: out.len(),
        });
    }
    if out.is_empty() {
        for (t, (p, h)) in src.iter().zip(&hands).enumerate() {
            out.push(*p, h.clone(), FrameTag::Inserted, t);
        }
    }
    Ok(out)
}

fn source_path_clear(
    src: &[Pose],
    from: usize,
    to: usize,
    obs: &Obstacles,
    clearance: f64,
) -> bool {
    src[from..=to]
        .windows(2)
        .all(|w| obs.segment_clear(&w[0].position, &w[1].position, clearance))
        && obs.point_clear(&src[from].position, clearance)
}

fn arc_progress(points: impl Iterator<Item = Vector3<f64>>) -> Vec<f64> {
    let pts: Vec<Vector3<f64>> = points.collect();
    let mut acc = vec![0.0];
    for w in pts.windows(2) {
        let last = *acc.last().expect("non-empty");
        acc.push(last + (w[1] - w[0]).norm());
    }
    let total = *acc.last().expect("non-empty");
    let n = acc.len().max(2) - 1;
    acc.iter()
        .enumerate()
        .map(|(i, a)| {
            if total > 0.0 {
                a / total
            } else {
                i as f64 / n as f64
            }
        })
        .collect()
}

/// For each emitted planned pose, the source motion frame with the closest
/// normalized arc-length progress.
fn progress_map(
    path: &[Pose],
    inner: &[Pose],
    offset: usize,
    src: &[Pose],
    entry: usize,
    motion: &Segment,
) -> Vec<usize> {
    if motion.is_empty() {
        return vec![entry; inner.len()];
    }
    let planned = arc_progress(path.iter().map(|p| p.position));
    let source_frames: Vec<usize> = if motion.start == 0 {
        (0..=motion.end).collect()
    } else {
        (motion.start - 1..=motion.end).collect()
    };
    let source = arc_progress(source_frames.iter().map(|&t| src[t].position));
    let candidates: Vec<(usize, f64)> = source_frames
        .iter()
        .zip(&source)
        .filter(|(t, _)| motion.contains(**t))
        .map(|(t, u)| (*t, *u))
        .collect();
    (0..inner.len())
        .map(|j| {
            let u = planned[j + offset];
            candidates
                .iter()
                .min_by(|a, b| (a.1 - u).abs().total_cmp(&(b.1 - u).abs()))
                .map(|c| c.0)
                .expect("motion is non-empty")
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::demo_store::{ArmFrame, Frame};
    use crate::parser::{parse, ParseOptions};
    use crate::pointcloud::LABEL_EE;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            prop::array::uniform3(-1.0f64..1.0),
            -3.1f64..3.1,
        )
            .prop_map(|(p, axis, angle)| {
                let axis = Vector3::from(axis);
                let axis = if axis.norm() < 1e-3 {
                    Vector3::z()
                } else {
                    axis
                };
                Pose::from_axis_angle(Vector3::from(p), axis, angle)
            })
    }

    /// Two-object pick-and-place path: approach A, lift, carry to B, lower.
    pub(crate) fn two_object_demo() -> Demonstration {
        let a = Pose::from_xyz_yaw(0.0, 0.0, 0.02, 0.3);
        let b = Pose::from_xyz_yaw(0.4, 0.1, 0.02, -0.2);
        let mut path = Vec::new();
        let mut hands = Vec::new();
        let home = Pose::from_xyz_yaw(-0.2, -0.1, 0.4, 0.0);
        let grasp = a.compose(&Pose::from_translation(0.0, 0.0, 0.03));
        let lift = a.compose(&Pose::from_translation(0.0, 0.0, 0.2));
        let over_b = b.compose(&Pose::from_translation(0.0, 0.0, 0.25));
        let place = b.compose(&Pose::from_translation(0.0, 0.0, 0.08));
        for (from, to, n, hand) in [
            (home, grasp, 40, 1.0),
            (grasp, grasp, 5, 0.0),
            (grasp, lift, 20, 0.0),
            (lift, over_b, 30, 0.0),
            (over_b, place, 20, 0.0),
        ] {
            for i in 0..n {
                path.push(Pose::interpolate(&from, &to, i as f64 / n as f64));
                hands.push(vec![hand]);
            }
        }
        let mut cloud_pts = Vec::new();
        let mut labels = Vec::new();
        for (k, o) in [a, b].iter().enumerate() {
            for i in 0..30 {
                let ang = i as f64 * 0.7;
                let p = o.transform_point(&Vector3::new(
                    0.02 * ang.cos(),
                    0.02 * ang.sin(),
                    0.01 * (i % 3) as f64,
                ));
                cloud_pts.push([p.x as f32, p.y as f32, p.z as f32]);
                labels.push(k as i32);
            }
        }
        for i in 0..20 {
            cloud_pts.push([-0.2 + 0.001 * i as f32, -0.1, 0.4]);
            labels.push(LABEL_EE);
        }
        let cloud = LabeledCloud::new(cloud_pts, labels).unwrap();
        let frames = path
            .iter()
            .zip(&hands)
            .map(|(p, h)| Frame {
                cloud: cloud.clone(),
                arms: vec![ArmFrame {
                    state: *p,
                    hand_state: h.clone(),
                    action: *p,
                    hand_action: h.clone(),
                }],
            })
            .collect();
        let mut demo = Demonstration {
            task: "two".into(),
            frames,
            init_config: vec![a, b],
            object_names: vec!["a".into(), "b".into()],
            segments: None,
            camera: Pose::identity(),
            arm_object_map: vec![vec![0, 1]],
        };
        demo.segments = Some(parse(&demo, &ParseOptions::default()).unwrap());
        demo
    }

    #[test]
    fn workspace_contains() {
        let ws = Workspace::rect([0.0, 0.0], [0.3, 0.4]);
        assert!(ws.contains(0.0, 0.0));
        assert!(ws.contains(0.3, 0.2));
        assert!(ws.contains(0.15, 0.2));
        assert!(!ws.contains(0.31, 0.2));
        let tri = Workspace {
            polygon: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        };
        assert!(tri.contains(0.2, 0.2));
        assert!(tri.contains(0.5, 0.5));
        assert!(!tri.contains(0.6, 0.6));
    }

    #[test]
    fn adapt_skill_cases() {
        let seq = vec![
            Pose::from_xyz_yaw(0.1, 0.0, 0.2, 0.1),
            Pose::from_xyz_yaw(0.12, 0.0, 0.15, 0.2),
        ];
        let obj = Pose::from_xyz_yaw(0.1, 0.0, 0.0, 0.5);
        assert_eq!(adapt_skill(&seq, &obj, &obj), seq);
        let moved = Pose::new(obj.position + Vector3::new(0.2, 0.2, 0.0), obj.orientation);
        let out = adapt_skill(&seq, &obj, &moved);
        for (a, b) in seq.iter().zip(&out) {
            assert!((b.position - a.position - Vector3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
            assert!(a.angle_to(b) < 1e-12);
        }
        let yawed = obj.compose(&Pose::from_yaw(std::f64::consts::FRAC_PI_2));
        let out = adapt_skill(&seq, &obj, &yawed);
        for (a, b) in seq.iter().zip(&out) {
            let rel_src = obj.inverse().to_matrix() * a.to_matrix();
            let rel_tgt = yawed.inverse().to_matrix() * b.to_matrix();
            assert!((rel_src - rel_tgt).abs().max() < 1e-12);
            let r_src = (a.position - obj.position).norm();
            let r_tgt = (b.position - yawed.position).norm();
            assert!((r_src - r_tgt).abs() < 1e-12);
        }
    }

    #[test]
    fn adapt_hand_copies() {
        let binary = vec![vec![1.0], vec![0.0], vec![0.0]];
        assert_eq!(adapt_hand(&binary), binary);
        let dex: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..16).map(|j| (i * j) as f64 * 0.01).collect())
            .collect();
        assert_eq!(adapt_hand(&dex), dex);
        let empty: Vec<Vec<f64>> = vec![vec![]; 3];
        assert_eq!(adapt_hand(&empty), empty);
    }

    #[test]
    fn identity_target_reproduces_source() {
        let demo = two_object_demo();
        let seg = demo.segments.clone().unwrap();
        let plan =
            adapt_trajectory(&demo, &seg, &demo.init_config, &AdaptOptions::default()).unwrap();
        assert_eq!(plan.arms[0].poses, demo.actions(0));
        assert_eq!(plan.arms[0].hands, demo.hand_actions(0));
        assert_eq!(
            plan.arms[0].source_frames,
            (0..demo.len()).collect::<Vec<_>>()
        );
        assert_eq!(plan.segment_index(), seg);
    }

    #[test]
    fn shifted_targets_keep_rigidity_and_continuity() {
        let demo = two_object_demo();
        let seg = demo.segments.clone().unwrap();
        let a = demo.init_config[0];
        let targets = vec![
            Pose::new(a.position + Vector3::new(0.2, 0.0, 0.0), a.orientation),
            Pose::from_xyz_yaw(0.5, -0.1, 0.02, 1.0),
        ];
        let cfg = PlannerConfig::default();
        let plan = adapt_trajectory(&demo, &seg, &targets, &AdaptOptions::default()).unwrap();
        let p = &plan.arms[0];
        for s in p.segments.iter().filter(|s| s.kind == SegmentKind::Skill) {
            let k = s.object;
            let src_seg = seg.skill_of(k).unwrap().1;
            for (i, t) in (s.start..s.end).enumerate() {
                let rel_src = demo.init_config[k].inverse().to_matrix()
                    * demo.frames[src_seg.start + i].arms[0].action.to_matrix();
                let rel_out = targets[k].inverse().to_matrix() * p.poses[t].to_matrix();
                assert!((rel_src - rel_out).abs().max() < 1e-9);
                assert_eq!(
                    p.hands[t],
                    demo.frames[src_seg.start + i].arms[0].hand_action
                );
            }
        }
        for s in &p.segments[1..] {
            if s.start > 0 && s.start < p.len() {
                let (a, b) = (p.poses[s.start - 1], p.poses[s.start]);
                let src_max = demo
                    .actions(0)
                    .windows(2)
                    .map(|w| w[0].distance_to(&w[1]))
                    .fold(0.0, f64::max);
                assert!(a.distance_to(&b) <= cfg.max_step.max(src_max) + 1e-9);
            }
        }
        assert_eq!(p.poses[0], demo.frames[0].arms[0].action);
        let tags_ok = p.tags.iter().all(|t| !matches!(t, FrameTag::Inserted));
        assert!(tags_ok);
    }

    #[test]
    fn unreachable_target_rejected() {
        let demo = two_object_demo();
        let seg = demo.segments.clone().unwrap();
        let opts = AdaptOptions {
            workspace: Some(Workspace::rect([-0.1, -0.2], [0.45, 0.2])),
            ..Default::default()
        };
        assert!(adapt_trajectory(&demo, &seg, &demo.init_config, &opts).is_ok());
        let mut targets = demo.init_config.clone();
        targets[1] = Pose::from_translation(0.9, 0.0, 0.02);
        assert!(matches!(
            adapt_trajectory(&demo, &seg, &targets, &opts),
            Err(Error::UnreachableTarget { object: 1, .. })
        ));
    }

    #[test]
    fn padding_holds_last_pose() {
        let mut plan = ArmPlan::default();
        plan.push(Pose::identity(), vec![1.0], FrameTag::Skill(0), 0);
        plan.push(
            Pose::from_translation(0.1, 0.0, 0.0),
            vec![0.0],
            FrameTag::Skill(0),
            1,
        );
        plan.pad_to(5);
        assert_eq!(plan.len(), 5);
        assert!(plan.poses[2..]
            .iter()
            .all(|p| *p == Pose::from_translation(0.1, 0.0, 0.0)));
        assert!(plan.tags[2..].iter().all(|t| *t == FrameTag::Inserted));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn skill_frame_invariance(src in arb_pose(), tgt in arb_pose(), a in arb_pose(), b in arb_pose()) {
            let out = adapt_skill(&[a, b], &src, &tgt);
            for (i, o) in [a, b].iter().zip(&out) {
                let lhs = tgt.inverse().compose(o);
                let rhs = src.inverse().compose(i);
                prop_assert!((lhs.position - rhs.position).norm() < 1e-9);
                prop_assert!(lhs.angle_to(&rhs) < 1e-7);
            }
        }
    }
}
