//! Target sampling for dataset generation, and the disturbance and obstacle
//! extensions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{check_reachable, ActionPlan, ArmPlan, FrameTag, Workspace};
use crate::demo_store::Demonstration;
use crate::error::{Error, Result};
use crate::parser::{Segment, SegmentKind};
use crate::pipeline::{Generator, Job};
use crate::planner::{self, PlannerConfig};
use crate::pointcloud::{LabeledCloud, LABEL_OBSTACLE};
use crate::se3::{ConfigDelta, Pose};
use crate::sim::{Disturbance, Shape, TaskSpec};
use crate::synth::{synthesize_demo, synthesize_timeline};

pub const DEFAULT_ADR_PAUSE: usize = 5;

fn lattice(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let n = ((hi - lo) / spacing + 1e-9).floor() as usize + 1;
    let start = lo + (hi - lo - (n - 1) as f64 * spacing) / 2.0;
    (0..n).map(|i| start + i as f64 * spacing).collect()
}

fn clip_to(ws: &Workspace, xs: &[f64], ys: &[f64]) -> Result<Vec<[f64; 2]>> {
    if ws.polygon.len() < 3 {
        return Err(Error::EmptyWorkspace);
    }
    let out: Vec<[f64; 2]> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .filter(|p| ws.contains(p[0], p[1]))
        .collect();
    if !out.is_empty() {
        return Ok(out);
    }
    let c = ws.centroid();
    if ws.contains(c[0], c[1]) {
        Ok(vec![c])
    } else {
        Err(Error::EmptyWorkspace)
    }
}

/// Square lattice with the given spacing, centered in the polygon's bounding
/// box and clipped to the polygon. Row-major: x varies fastest.
pub fn grid_targets(ws: &Workspace, spacing: f64) -> Result<Vec<[f64; 2]>> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    if ws.polygon.len() < 3 {
        return Err(Error::EmptyWorkspace);
    }
    let (lo, hi) = ws.bounds();
    clip_to(
        ws,
        &lattice(lo[0], hi[0], spacing),
        &lattice(lo[1], hi[1], spacing),
    )
}

/// `nx` by `ny` samples spanning the bounding box, clipped to the polygon.
pub fn grid_counts(ws: &Workspace, nx: usize, ny: usize) -> Result<Vec<[f64; 2]>> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(
            "grid counts must be positive".into(),
        ));
    }
    if ws.polygon.len() < 3 {
        return Err(Error::EmptyWorkspace);
    }
    let (lo, hi) = ws.bounds();
    let axis = |a: f64, b: f64, n: usize| -> Vec<f64> {
        if n == 1 {
            vec![(a + b) / 2.0]
        } else {
            (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect()
        }
    };
    clip_to(ws, &axis(lo[0], hi[0], nx), &axis(lo[1], hi[1], ny))
}

/// `n * n` planar offsets on a lattice spanning `[-half, half]`, center
/// included, row-major.
pub fn perturb_offsets(half_extent: f64, n_per_axis: usize) -> Result<Vec<[f64; 2]>> {
    if n_per_axis % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "perturbation count per axis must be odd, got {n_per_axis}"
        )));
    }
    if !(half_extent >= 0.0) {
        return Err(Error::InvalidArgument(
            "perturbation extent must be non-negative".into(),
        ));
    }
    let m = (n_per_axis / 2) as i64;
    let step = if m == 0 { 0.0 } else { half_extent / m as f64 };
    let axis: Vec<f64> = (-m..=m).map(|i| i as f64 * step).collect();
    Ok(axis
        .iter()
        .flat_map(|&y| axis.iter().map(move |&x| [x, y]))
        .collect())
}

/// Every configuration shifted by every offset; all objects move together.
pub fn perturb(
    configs: &[Vec<Pose>],
    half_extent: f64,
    n_per_axis: usize,
) -> Result<Vec<Vec<Pose>>> {
    let offsets = perturb_offsets(half_extent, n_per_axis)?;
    Ok(apply_offsets(configs, &offsets))
}

fn apply_offsets(configs: &[Vec<Pose>], offsets: &[[f64; 2]]) -> Vec<Vec<Pose>> {
    configs
        .iter()
        .flat_map(|c| {
            offsets.iter().map(move |o| {
                c.iter()
                    .map(|p| {
                        if o[0] == 0.0 && o[1] == 0.0 {
                            *p
                        } else {
                            let mut q = *p;
                            q.position.x += o[0];
                            q.position.y += o[1];
                            q
                        }
                    })
                    .collect()
            })
        })
        .collect()
}

/// Placements of one object: explicit points, or a lattice over a region.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectGrid {
    pub points: Vec<[f64; 2]>,
    pub region: Option<Workspace>,
    pub spacing: Option<f64>,
    pub counts: Option<[usize; 2]>,
    /// Yaw offsets in radians; each crosses every point.
    pub yaws: Vec<f64>,
}

impl ObjectGrid {
    pub fn coordinates(&self) -> Result<Vec<[f64; 3]>> {
        let mut pts = self.points.clone();
        if let Some(region) = &self.region {
            pts.extend(match (self.spacing, self.counts) {
                (Some(s), None) => grid_targets(region, s)?,
                (None, Some([nx, ny])) => grid_counts(region, nx, ny)?,
                _ => {
                    return Err(Error::InvalidArgument(
                        "a grid region needs exactly one of spacing or counts".into(),
                    ))
                }
            });
        }
        let yaws = if self.yaws.is_empty() {
            vec![0.0]
        } else {
            self.yaws.clone()
        };
        Ok(yaws
            .iter()
            .flat_map(|&w| pts.iter().map(move |p| [p[0], p[1], w]))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub half_extent: f64,
    pub per_axis: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdrEvent {
    /// Frame of the input plan at which the object is displaced.
    pub frame: usize,
    pub object: usize,
    pub offset: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdrSpec {
    pub events: Vec<AdrEvent>,
    #[serde(default = "default_pause")]
    pub pause: usize,
}

fn default_pause() -> usize {
    DEFAULT_ADR_PAUSE
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default = "default_obstacle_points")]
    pub points_per_primitive: usize,
    #[serde(default = "default_clearance")]
    pub clearance: f64,
}

fn default_obstacle_points() -> usize {
    200
}

fn default_clearance() -> f64 {
    planner::DEFAULT_CLEARANCE
}

/// Which configurations to generate, and how many times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSpec {
    pub task: Option<String>,
    /// Explicit configurations: one `[x, y]` or `[x, y, yaw]` per object.
    pub eval_grid: Vec<Vec<Vec<f64>>>,
    /// Per-object placements whose product is appended to `eval_grid`.
    pub object_grids: Vec<ObjectGrid>,
    pub perturb_offsets: Vec<[f64; 2]>,
    /// Shorthand for a square `perturb_offsets` lattice.
    pub perturbation: Option<Perturbation>,
    pub num_sources: Option<usize>,
    pub seed: u64,
    pub planner: Option<PlannerConfig>,
    pub adr: Option<AdrSpec>,
    pub obstacle: Option<ObstacleSpec>,
}

impl GenerationSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn sources(&self) -> usize {
        self.num_sources.unwrap_or(1)
    }

    pub fn offsets(&self) -> Result<Vec<[f64; 2]>> {
        let mut out = self.perturb_offsets.clone();
        if let Some(p) = self.perturbation {
            out.extend(perturb_offsets(p.half_extent, p.per_axis)?);
        }
        if out.is_empty() {
            out.push([0.0, 0.0]);
        }
        Ok(out)
    }

    /// Object coordinates of every configuration before perturbation.
    pub fn coordinates(&self) -> Result<Vec<Vec<[f64; 3]>>> {
        let mut out = Vec::new();
        for c in &self.eval_grid {
            out.push(
                c.iter()
                    .map(|o| match o.as_slice() {
                        [x, y] => Ok([*x, *y, 0.0]),
                        [x, y, w] => Ok([*x, *y, *w]),
                        _ => Err(Error::InvalidArgument(
                            "object coordinates are [x, y] or [x, y, yaw]".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if !self.object_grids.is_empty() {
            let mut prod: Vec<Vec<[f64; 3]>> = vec![vec![]];
            for g in &self.object_grids {
                let coords = g.coordinates()?;
                prod = prod
                    .into_iter()
                    .flat_map(|c| {
                        coords.iter().map(move |p| {
                            let mut c = c.clone();
                            c.push(*p);
                            c
                        })
                    })
                    .collect();
            }
            out.extend(prod);
        }
        Ok(out)
    }

    pub fn expected_count(&self) -> Result<usize> {
        Ok(self.sources() * self.coordinates()?.len() * self.offsets()?.len())
    }
}

/// Target configurations to generate: sources outermost, then
/// configurations, then perturbation offsets.
pub fn plan_dataset(spec: &GenerationSpec, task: &TaskSpec) -> Result<Vec<Job>> {
    let perturbed = apply_offsets(&spec.configurations(task)?, &spec.offsets()?);
    Ok((0..spec.sources())
        .flat_map(|s| {
            perturbed.iter().map(move |t| Job {
                source: s,
                targets: t.clone(),
            })
        })
        .collect())
}

impl GenerationSpec {
    /// Object poses of every listed configuration, without perturbation.
    pub fn configurations(&self, task: &TaskSpec) -> Result<Vec<Vec<Pose>>> {
        let k = task.objects.len();
        self.coordinates()?
            .into_iter()
            .map(|c| {
                if c.len() != k {
                    return Err(Error::InvalidArgument(format!(
                        "configuration has {} objects, task {} has {k}",
                        c.len(),
                        task.name
                    )));
                }
                Ok(c.iter()
                    .zip(&task.objects)
                    .map(|(p, o)| o.place(p[0], p[1], p[2]))
                    .collect())
            })
            .collect()
    }
}

/// Deterministic surface samples of a primitive, labeled as obstacle.
pub fn sample_primitive(primitive: &Primitive, n: usize, seed: u64) -> Result<LabeledCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "primitive sample count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = primitive
        .shape
        .sample_surface(n, &mut rng)
        .iter()
        .map(|p| {
            let w = primitive.pose.transform_point(p);
            [w.x as f32, w.y as f32, w.z as f32]
        })
        .collect();
    Ok(LabeledCloud::uniform(points, LABEL_OBSTACLE))
}

pub fn obstacle_cloud(spec: &ObstacleSpec, seed: u64) -> Result<LabeledCloud> {
    let mut cloud = LabeledCloud::default();
    for (i, p) in spec.primitives.iter().enumerate() {
        cloud.extend(&sample_primitive(
            p,
            spec.points_per_primitive,
            seed.wrapping_add(i as u64),
        )?);
    }
    Ok(cloud)
}

/// A generated demonstration with obstacle points fused into every frame and
/// motions planned around them.
pub fn obstacle_augment(
    generator: &Generator,
    targets: &[Pose],
    spec: &ObstacleSpec,
    seed: u64,
) -> Result<(Demonstration, ActionPlan, LabeledCloud)> {
    if spec.primitives.is_empty() {
        let (d, p) = generator.generate(targets)?;
        return Ok((d, p, LabeledCloud::default()));
    }
    let obstacles = obstacle_cloud(spec, seed)?;
    let mut g = generator.clone();
    g.adapt.obstacles = Some(obstacles.clone());
    g.adapt.planner.clearance = spec.clearance;
    let plan = g.plan(targets)?;
    let mut demo = synthesize_demo(&g.prepared, targets, &plan)?;
    for f in &mut demo.frames {
        f.cloud.extend(&obstacles);
    }
    Ok((demo, plan, obstacles))
}

#[derive(Clone, Debug)]
pub struct AdrResult {
    pub demo: Demonstration,
    pub plan: ActionPlan,
    /// The displacements as they occur in the output timeline.
    pub disturbances: Vec<Disturbance>,
    /// First output frame after each re-approach, where the skill resumes.
    pub resume_frames: Vec<usize>,
}

struct Timeline {
    arm: ArmPlan,
    orig: Vec<Option<usize>>,
    seg_of: Vec<usize>,
    disp: Vec<Vec<Pose>>,
}

impl Timeline {
    fn push_from(&mut self, other: &Timeline, j: usize, pose: Pose, disp: Vec<Pose>) {
        self.arm.push(
            pose,
            other.arm.hands[j].clone(),
            other.arm.tags[j],
            other.arm.source_frames[j],
        );
        self.orig.push(other.orig[j]);
        self.seg_of.push(other.seg_of[j]);
        self.disp.push(disp);
    }

    fn push_new(
        &mut self,
        pose: Pose,
        hand: Vec<f64>,
        tag: FrameTag,
        source: usize,
        seg: usize,
        disp: Vec<Pose>,
    ) {
        self.arm.push(pose, hand, tag, source);
        self.orig.push(None);
        self.seg_of.push(seg);
        self.disp.push(disp);
    }
}

fn displaced(disp: &[Pose], object: usize, d: &Pose) -> Vec<Pose> {
    let mut v = disp.to_vec();
    v[object] = d.compose(&v[object]);
    v
}

/// Inner poses of a planned path, without its start and goal.
fn inner(path: &[Pose]) -> &[Pose] {
    if path.len() <= 2 {
        &[]
    } else {
        &path[1..path.len() - 1]
    }
}

/// Injects object displacements into a generated plan. At each event the
/// end-effector holds still for `pause` frames, re-approaches the displaced
/// continuation pose, and resumes the skill at its interrupted phase with the
/// displacement applied.
pub fn adr_augment(
    generator: &Generator,
    targets: &[Pose],
    plan: &ActionPlan,
    spec: &AdrSpec,
    workspace: Option<&Workspace>,
) -> Result<AdrResult> {
    let demo = &generator.prepared.demo;
    if plan.arms.len() != 1 {
        return Err(Error::InvalidArgument(
            "disturbance augmentation supports single-arm plans".into(),
        ));
    }
    let k = demo.num_objects();
    let planner_cfg = &generator.adapt.planner;
    let base = plan.arms[0].clone();
    let n = base.len();
    let mut seg_of = vec![0usize; n];
    for (i, s) in base.segments.iter().enumerate() {
        for v in seg_of.iter_mut().take(s.end.min(n)).skip(s.start) {
            *v = i;
        }
    }
    let mut tl = Timeline {
        arm: ArmPlan {
            segments: base.segments.clone(),
            ..base.clone()
        },
        orig: (0..n).map(Some).collect(),
        seg_of,
        disp: vec![vec![Pose::identity(); k]; n],
    };
    let mut events = spec.events.clone();
    events.sort_by_key(|e| e.frame);
    let mut disturbances = Vec::new();
    let mut resume_frames = Vec::new();
    let mut moved = targets.to_vec();

    for ev in &events {
        if ev.object >= k {
            return Err(Error::NoSuchObject(ev.object));
        }
        let d = Pose::from_translation(ev.offset[0], ev.offset[1], 0.0);
        moved[ev.object] = d.compose(&moved[ev.object]);
        check_reachable(&moved, workspace)?;

        let pos = (0..tl.arm.len())
            .find(|&j| tl.orig[j].is_some_and(|o| o >= ev.frame))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("disturbance frame {} is past the end", ev.frame))
            })?;
        if pos == 0 {
            return Err(Error::InvalidArgument(
                "disturbance cannot precede the first action".into(),
            ));
        }
        let (skill_idx, skill) = tl
            .arm
            .segments
            .iter()
            .enumerate()
            .find(|(_, s)| s.kind == SegmentKind::Skill && s.object == ev.object)
            .map(|(i, s)| (i, *s))
            .ok_or(Error::NoSuchObject(ev.object))?;
        let skill_start = (0..tl.arm.len())
            .find(|&j| tl.seg_of[j] == skill_idx)
            .unwrap_or(tl.arm.len());
        let skill_end = (0..tl.arm.len())
            .rposition(|j| tl.seg_of[j] == skill_idx)
            .map_or(skill_start, |j| j + 1);
        if pos >= skill_end || skill.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "disturbance at frame {} falls after the skill on object {}",
                ev.frame, ev.object
            )));
        }
        let c = pos.max(skill_start);

        let old = std::mem::replace(
            &mut tl,
            Timeline {
                arm: ArmPlan::default(),
                orig: vec![],
                seg_of: vec![],
                disp: vec![],
            },
        );
        for j in 0..pos {
            tl.push_from(&old, j, old.arm.poses[j], old.disp[j].clone());
        }
        let held = old.arm.poses[pos - 1];
        let hand = old.arm.hands[pos - 1].clone();
        let src = old.arm.source_frames[pos - 1];
        let recover_seg = old.seg_of[pos];
        let disp_now = displaced(&old.disp[pos - 1], ev.object, &d);
        disturbances.push(Disturbance {
            frame: pos,
            object: ev.object,
            offset: ev.offset,
        });
        for _ in 0..spec.pause {
            tl.push_new(
                held,
                hand.clone(),
                FrameTag::Inserted,
                src,
                recover_seg,
                disp_now.clone(),
            );
        }
        let goal = d.compose(&old.arm.poses[c]);
        if !d.is_identity() {
            let path = planner::plan(&planner_cfg.request(held, goal))?;
            for p in inner(&path) {
                tl.push_new(
                    *p,
                    hand.clone(),
                    FrameTag::Motion(ev.object),
                    src,
                    recover_seg,
                    disp_now.clone(),
                );
            }
        }
        resume_frames.push(tl.arm.len());
        for j in c..skill_end {
            tl.push_from(
                &old,
                j,
                d.compose(&old.arm.poses[j]),
                displaced(&old.disp[j], ev.object, &d),
            );
        }
        // the following motion is replanned from the displaced skill end
        let len = old.arm.len();
        let resume = (skill_end..len)
            .find(|&j| old.seg_of[j] > skill_idx + 1)
            .unwrap_or(len);
        if skill_end < resume && resume < len {
            let from = *tl.arm.poses.last().expect("continuation is non-empty");
            let path = planner::plan(&planner_cfg.request(from, old.arm.poses[resume]))?;
            let mut poses = inner(&path).to_vec();
            if poses.is_empty() {
                poses.push(from);
            }
            for p in poses {
                tl.push_new(
                    p,
                    old.arm.hands[skill_end].clone(),
                    old.arm.tags[skill_end],
                    old.arm.source_frames[skill_end],
                    skill_idx + 1,
                    displaced(&old.disp[skill_end], ev.object, &d),
                );
            }
        } else {
            for j in skill_end..resume {
                tl.push_from(
                    &old,
                    j,
                    old.arm.poses[j],
                    displaced(&old.disp[j], ev.object, &d),
                );
            }
        }
        for j in resume..len {
            tl.push_from(
                &old,
                j,
                old.arm.poses[j],
                displaced(&old.disp[j], ev.object, &d),
            );
        }
        tl.arm.segments = old.arm.segments.clone();
        rebuild_segments(&mut tl);
    }

    let out_plan = ActionPlan {
        arms: vec![tl.arm.clone()],
    };
    let base_delta = ConfigDelta::between(&demo.init_config, targets);
    let disp = tl.disp;
    let demo_out = synthesize_timeline(&generator.prepared, targets, &out_plan, |j| {
        ConfigDelta::from_deltas(
            disp[j]
                .iter()
                .zip(base_delta.iter())
                .map(|(a, b)| a.compose(b))
                .collect(),
        )
    })?;
    Ok(AdrResult {
        demo: demo_out,
        plan: out_plan,
        disturbances,
        resume_frames,
    })
}

fn rebuild_segments(tl: &mut Timeline) {
    let old: Vec<Segment> = tl.arm.segments.clone();
    let n = tl.arm.len();
    tl.arm.segments = old
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let start = (0..n).find(|&j| tl.seg_of[j] >= i).unwrap_or(n);
            let end = (0..n).find(|&j| tl.seg_of[j] > i).unwrap_or(n);
            Segment { start, end, ..*s }
        })
        .collect();
}

#[cfg(test)]
mod tests;
