//! Kinematic tabletop simulator.
//!
//! Objects are rigid bodies built from primitives. A parallel gripper grasps
//! an object when it closes within tolerance of the object's grasp frame, and
//! the object then follows the gripper until it opens again. The scene is
//! observed by a single camera as a labeled point cloud.

pub mod shapes;
pub mod tasks;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{ActionPlan, Workspace};
use crate::error::{Error, Result};
use crate::parser::ParseOptions;
use crate::pointcloud::{farthest_point_indices, LabeledCloud, LABEL_EE};
use crate::se3::Pose;
use crate::synth::SynthOptions;

pub use shapes::{Part, PlacedPart, Shape};
pub use tasks::{builtin, builtin_names, scripted_demo};

pub const DEFAULT_GRASP_TOLERANCE: f64 = 0.02;
pub const DEFAULT_GRASP_ANGLE_TOLERANCE: f64 = 0.35;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.0015;
pub const DEFAULT_DENSITY: f64 = 50_000.0;
pub const DEFAULT_SPLIT_RADIUS: f64 = 0.012;

/// Axis-aligned planar range of object positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range2 {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Range2 {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        ]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] - 1e-12
            && x <= self.max[0] + 1e-12
            && y >= self.min[1] - 1e-12
            && y <= self.max[1] + 1e-12
    }

    /// Row-major `nx` by `ny` grid including the corners.
    pub fn grid(&self, nx: usize, ny: usize) -> Vec<[f64; 2]> {
        let axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            match n {
                0 => vec![],
                1 => vec![(lo + hi) / 2.0],
                _ => (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect(),
            }
        };
        let xs = axis(self.min[0], self.max[0], nx);
        let ys = axis(self.min[1], self.max[1], ny);
        ys.iter()
            .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub parts: Vec<Part>,
    /// Default pose; its height and yaw are kept when the object is placed.
    pub rest: Pose,
    /// Grasp frame in the object frame. Objects without one cannot be picked.
    #[serde(default)]
    pub grasp: Option<Pose>,
    pub demo_range: Range2,
    pub eval_range: Range2,
    /// Grid resolution over `eval_range`.
    #[serde(default = "one_by_one")]
    pub eval_grid: [usize; 2],
    /// Yaw offsets (radians) crossed with the eval grid.
    #[serde(default = "zero_yaw")]
    pub eval_yaws: Vec<f64>,
}

fn one_by_one() -> [usize; 2] {
    [1, 1]
}

fn zero_yaw() -> Vec<f64> {
    vec![0.0]
}

fn one() -> f64 {
    1.0
}

impl ObjectSpec {
    pub fn place(&self, x: f64, y: f64, yaw: f64) -> Pose {
        Pose::from_xyz_yaw(x, y, self.rest.position.z, self.rest.yaw() + yaw)
    }

    pub fn eval_poses(&self) -> Vec<Pose> {
        let grid = self.eval_range.grid(self.eval_grid[0], self.eval_grid[1]);
        self.eval_yaws
            .iter()
            .flat_map(|&yaw| grid.iter().map(move |p| self.place(p[0], p[1], yaw)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    Home,
    Object { object: usize, offset: Pose },
    World { pose: Pose },
}

/// Circular sweep with growing radius around the step target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spiral {
    pub turns: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub to: Target,
    pub frames: usize,
    /// Gripper command: 1 open, 0 closed.
    pub hand: f64,
    #[serde(default)]
    pub spiral: Option<Spiral>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub home: Pose,
    pub objects: Vec<usize>,
    pub script: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Success {
    /// Final height gain of the object.
    Lifted { object: usize, height: f64 },
    /// At some frame the gripper tip is within `radius` of the object axis
    /// and at most `height` above the object origin.
    Pressed {
        object: usize,
        radius: f64,
        height: f64,
    },
    /// Final planar offset to the target object and height above it.
    Inserted {
        object: usize,
        target: usize,
        tolerance: f64,
        height: f64,
    },
    /// Fraction of the disc of `radius` around the object swept by the tool
    /// tip while it is at most `height` above the object origin.
    Coverage {
        object: usize,
        radius: f64,
        brush: f64,
        height: f64,
        fraction: f64,
    },
}

const COVERAGE_CELL: f64 = 0.01;

impl Success {
    fn coverage_bins(&self) -> Vec<[f64; 2]> {
        match *self {
            Success::Coverage { radius, .. } => {
                let n = (radius / COVERAGE_CELL).ceil() as i64;
                let mut out = Vec::new();
                for i in -n..=n {
                    for j in -n..=n {
                        let (x, y) = (i as f64 * COVERAGE_CELL, j as f64 * COVERAGE_CELL);
                        if x * x + y * y <= radius * radius + 1e-12 {
                            out.push([x, y]);
                        }
                    }
                }
                out
            }
            _ => vec![],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

impl Camera {
    pub fn oblique() -> Self {
        Self {
            eye: [0.45, -0.6, 0.65],
            target: [0.0, 0.0, 0.0],
        }
    }

    pub fn birds_eye() -> Self {
        Self {
            eye: [0.0, -0.05, 1.0],
            target: [0.0, 0.0, 0.0],
        }
    }

    /// Camera pose with its z axis looking at the target.
    pub fn pose(&self) -> Pose {
        let eye = Vector3::from(self.eye);
        let dir = Vector3::from(self.target) - eye;
        let up = if dir.normalize().cross(&Vector3::z()).norm() < 1e-6 {
            Vector3::y()
        } else {
            Vector3::z()
        };
        Pose::new(eye, UnitQuaternion::face_towards(&dir, &up))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSpec {
    pub points: usize,
    /// Dense surface samples per square meter before culling and FPS.
    pub density: f64,
    pub noise_sigma: f64,
    pub visibility: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            points: 512,
            density: DEFAULT_DENSITY,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            visibility: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub objects: Vec<ObjectSpec>,
    pub arms: Vec<ArmSpec>,
    pub success: Vec<Success>,
    /// Reachable region for object targets.
    pub workspace: Workspace,
    pub camera: Camera,
    #[serde(default)]
    pub render: RenderSpec,
    #[serde(default = "default_grasp_tolerance")]
    pub grasp_tolerance: f64,
    /// Tool held by the first arm, in the end-effector frame.
    #[serde(default)]
    pub tool: Vec<Part>,
    #[serde(default)]
    pub tool_offset: Option<[f64; 3]>,
    #[serde(default)]
    pub parse: ParseOptions,
    #[serde(default = "default_synth")]
    pub synth: SynthOptions,
    /// Multiplies every step length of the scripts.
    #[serde(default = "one")]
    pub time_scale: f64,
}

fn default_grasp_tolerance() -> f64 {
    DEFAULT_GRASP_TOLERANCE
}

fn default_synth() -> SynthOptions {
    SynthOptions {
        split_radius: DEFAULT_SPLIT_RADIUS,
        ..SynthOptions::default()
    }
}

impl TaskSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: TaskSpec = serde_json::from_str(text)?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<()> {
        let k = self.objects.len();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if k == 0 || self.arms.is_empty() || self.arms.len() > 2 {
            return bad(format!(
                "task {} needs objects and one or two arms",
                self.name
            ));
        }
        let mut seen = vec![false; k];
        for arm in &self.arms {
            for &o in &arm.objects {
                if o >= k || seen[o] {
                    return bad(format!("object {o} is out of range or assigned twice"));
                }
                seen[o] = true;
            }
            for s in &arm.script {
                if let Target::Object { object, .. } = s.to {
                    if object >= k {
                        return bad(format!("script targets unknown object {object}"));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("every object must belong to an arm".into());
        }
        for s in &self.success {
            let (a, b) = match *s {
                Success::Lifted { object, .. }
                | Success::Pressed { object, .. }
                | Success::Coverage { object, .. } => (object, object),
                Success::Inserted { object, target, .. } => (object, target),
            };
            if a >= k || b >= k {
                return bad("success predicate names an unknown object".into());
            }
        }
        if self.render.points == 0 || !(self.render.density > 0.0) || !(self.time_scale > 0.0) {
            return bad("render points, density and time scale must be positive".into());
        }
        Ok(())
    }

    pub fn object_names(&self) -> Vec<String> {
        self.objects.iter().map(|o| o.name.clone()).collect()
    }

    pub fn arm_object_map(&self) -> Vec<Vec<usize>> {
        self.arms.iter().map(|a| a.objects.clone()).collect()
    }

    /// Source configuration: every object at the center of its demo range.
    pub fn default_config(&self) -> Vec<Pose> {
        self.objects
            .iter()
            .map(|o| {
                let [x, y] = o.demo_range.center();
                o.place(x, y, 0.0)
            })
            .collect()
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            tool_offset: self.tool_offset.or(self.parse.tool_offset),
            ..self.parse.clone()
        }
    }

    pub fn check_config(&self, config: &[Pose]) -> Result<()> {
        if config.len() != self.objects.len() {
            return Err(Error::InvalidArgument(format!(
                "{} poses for {} objects",
                config.len(),
                self.objects.len()
            )));
        }
        crate::adapter::check_reachable(config, Some(&self.workspace))
    }

    /// Evaluation configurations: the product of per-object eval poses, with
    /// the last object varying fastest.
    pub fn eval_configs(&self) -> Vec<Vec<Pose>> {
        let mut out: Vec<Vec<Pose>> = vec![vec![]];
        for o in &self.objects {
            let poses = o.eval_poses();
            out = out
                .into_iter()
                .flat_map(|c| {
                    poses.iter().map(move |p| {
                        let mut c = c.clone();
                        c.push(*p);
                        c
                    })
                })
                .collect();
        }
        out
    }
}

/// Gripper bodies in the end-effector frame. The tip center is the origin,
/// the fingers close along y and the wrist extends up +z.
const FINGER_HALF: [f64; 3] = [0.01, 0.004, 0.03];
const FINGER_Z: f64 = 0.025;
const PALM_HALF: [f64; 3] = [0.015, 0.055, 0.01];
const PALM_Z: f64 = 0.065;
const WRIST: (f64, f64, f64) = (0.02, 0.08, 0.115);

pub fn finger_gap(hand: f64) -> f64 {
    0.01 + 0.07 * hand.clamp(0.0, 1.0)
}

fn gripper_parts(hand: f64) -> [Part; 4] {
    let y = finger_gap(hand) / 2.0 + FINGER_HALF[1];
    [
        Part::at(Shape::Box { half: PALM_HALF }, 0.0, 0.0, PALM_Z),
        Part::at(
            Shape::Cylinder {
                radius: WRIST.0,
                height: WRIST.1,
            },
            0.0,
            0.0,
            WRIST.2,
        ),
        Part::at(Shape::Box { half: FINGER_HALF }, 0.0, y, FINGER_Z),
        Part::at(Shape::Box { half: FINGER_HALF }, 0.0, -y, FINGER_Z),
    ]
}

/// Labeled dense samples of one rigid body, in its body frame.
#[derive(Clone, Debug)]
struct BodySamples {
    parts: Vec<Part>,
    /// Points in each part's local frame.
    local: Vec<Vec<Vector3<f64>>>,
}

impl BodySamples {
    fn new(parts: &[Part], density: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let local = parts
            .iter()
            .map(|p| {
                p.shape
                    .sample_surface((p.shape.area() * density).ceil() as usize, &mut rng)
            })
            .collect();
        Self {
            parts: parts.to_vec(),
            local,
        }
    }
}

/// Renders labeled clouds of a task scene. Surface samples are drawn once,
/// so renders of the same world state differ only by sensor noise.
#[derive(Clone, Debug)]
pub struct Renderer {
    objects: Vec<BodySamples>,
    fingers: Vec<Vector3<f64>>,
    hand_body: BodySamples,
    tool: Option<BodySamples>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub points: usize,
    pub visibility: bool,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl RenderOptions {
    pub fn from_spec(spec: &RenderSpec, noise_seed: u64) -> Self {
        Self {
            points: spec.points,
            visibility: spec.visibility,
            noise_sigma: spec.noise_sigma,
            noise_seed,
        }
    }
}

impl Renderer {
    pub fn new(task: &TaskSpec) -> Self {
        let d = task.render.density;
        let objects = task
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| BodySamples::new(&o.parts, d, 0x5EED_0000 + i as u64))
            .collect();
        let g = gripper_parts(1.0);
        let hand_body = BodySamples::new(&g[..2], d, 0x5EED_1000);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_2000);
        let finger = Shape::Box { half: FINGER_HALF };
        let fingers = finger.sample_surface((finger.area() * d).ceil() as usize, &mut rng);
        let tool = (!task.tool.is_empty()).then(|| BodySamples::new(&task.tool, d, 0x5EED_3000));
        Self {
            objects,
            fingers,
            hand_body,
            tool,
        }
    }

    /// Dense world-frame samples with labels, and every placed part that can
    /// occlude them.
    fn dense(&self, world: &World) -> (Vec<Vector3<f64>>, Vec<i32>, Vec<PlacedPart>) {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        let mut placed = Vec::new();
        let mut add = |body_pose: &Pose, parts: &[Part], local: &[&[Vector3<f64>]], label: i32| {
            for (part, samples) in parts.iter().zip(local) {
                let pose = body_pose.compose(&part.offset);
                placed.push(PlacedPart::new(part.shape, pose));
                for s in samples.iter() {
                    pts.push(pose.transform_point(s));
                    labels.push(label);
                }
            }
        };
        for (k, body) in self.objects.iter().enumerate() {
            let local: Vec<&[Vector3<f64>]> = body.local.iter().map(|v| v.as_slice()).collect();
            add(&world.objects[k], &body.parts, &local, k as i32);
        }
        for arm in 0..world.ee.len() {
            let ee = world.ee[arm];
            let g = gripper_parts(world.hand[arm]);
            let local: Vec<&[Vector3<f64>]> = self
                .hand_body
                .local
                .iter()
                .map(|v| v.as_slice())
                .chain([self.fingers.as_slice(), self.fingers.as_slice()])
                .collect();
            add(&ee, &g, &local, LABEL_EE);
            if arm == 0 {
                if let Some(tool) = &self.tool {
                    let local: Vec<&[Vector3<f64>]> =
                        tool.local.iter().map(|v| v.as_slice()).collect();
                    add(&ee, &tool.parts, &local, LABEL_EE);
                }
            }
        }
        for part in &world.extra_obstacles {
            placed.push(*part);
        }
        (pts, labels, placed)
    }

    /// Every dense sample the camera can see, before downsampling and noise.
    pub fn visible(&self, world: &World, camera: &Camera, visibility: bool) -> LabeledCloud {
        let (pts, labels, placed) = self.dense(world);
        let eye = Vector3::from(camera.eye);
        let keep: Vec<usize> = if visibility {
            (0..pts.len())
                .into_par_iter()
                .filter(|&i| !placed.iter().any(|p| p.blocks(&pts[i], &eye, 1e-6)))
                .collect()
        } else {
            (0..pts.len()).collect()
        };
        LabeledCloud {
            points: keep
                .iter()
                .map(|&i| [pts[i].x as f32, pts[i].y as f32, pts[i].z as f32])
                .collect(),
            labels: keep.iter().map(|&i| labels[i]).collect(),
            colors: None,
        }
    }

    pub fn render(&self, world: &World, camera: &Camera, opts: &RenderOptions) -> LabeledCloud {
        let dense = self.visible(world, camera, opts.visibility);
        let chosen = farthest_point_indices(&dense.points, opts.points, 0);
        let mut points: Vec<[f32; 3]> = chosen.iter().map(|&i| dense.points[i]).collect();
        let labels: Vec<i32> = chosen.iter().map(|&i| dense.labels[i]).collect();
        if opts.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
            let normal = Normal::new(0.0, opts.noise_sigma).expect("finite sigma");
            let clip = 3.0 * opts.noise_sigma;
            for p in &mut points {
                for c in p.iter_mut() {
                    *c += normal.sample(&mut rng).clamp(-clip, clip) as f32;
                }
            }
        }
        LabeledCloud {
            points,
            labels,
            colors: None,
        }
    }
}

/// Kinematic world state.
#[derive(Clone, Debug)]
pub struct World<'a> {
    pub task: &'a TaskSpec,
    pub objects: Vec<Pose>,
    pub ee: Vec<Pose>,
    pub hand: Vec<f64>,
    /// Holding arm and object pose in the end-effector frame.
    pub attached: Vec<Option<(usize, Pose)>>,
    /// Extra rigid obstacles; they occlude the camera and block the gripper.
    pub extra_obstacles: Vec<PlacedPart>,
    pub collided: bool,
    initial: Vec<Pose>,
    latched: Vec<bool>,
    bins: Vec<Vec<[f64; 2]>>,
    covered: Vec<Vec<bool>>,
}

impl<'a> World<'a> {
    pub fn new(task: &'a TaskSpec, config: &[Pose]) -> Result<Self> {
        task.check_config(config)?;
        let bins: Vec<Vec<[f64; 2]>> = task.success.iter().map(Success::coverage_bins).collect();
        Ok(Self {
            task,
            objects: config.to_vec(),
            ee: task.arms.iter().map(|a| a.home).collect(),
            hand: vec![1.0; task.arms.len()],
            attached: vec![None; config.len()],
            extra_obstacles: Vec::new(),
            collided: false,
            initial: config.to_vec(),
            latched: vec![false; task.success.len()],
            covered: bins.iter().map(|b| vec![false; b.len()]).collect(),
            bins,
        })
    }

    pub fn holding(&self, arm: usize) -> Option<usize> {
        self.attached
            .iter()
            .position(|a| a.is_some_and(|(h, _)| h == arm))
    }

    /// Moves an unheld object by a planar offset.
    pub fn disturb(&mut self, object: usize, dx: f64, dy: f64) {
        if self.attached[object].is_none() {
            self.objects[object].position.x += dx;
            self.objects[object].position.y += dy;
        }
    }

    /// Applies one action per arm.
    pub fn step(&mut self, actions: &[(Pose, f64)]) {
        let task = self.task;
        for (arm, &(pose, hand)) in actions.iter().enumerate() {
            self.ee[arm] = pose;
            self.hand[arm] = hand;
            if hand >= 0.5 {
                for a in self.attached.iter_mut() {
                    if a.is_some_and(|(h, _)| h == arm) {
                        *a = None;
                    }
                }
            } else if self.holding(arm).is_none() {
                let candidate = (0..self.objects.len()).find(|&k| {
                    self.attached[k].is_none()
                        && task.objects[k].grasp.is_some_and(|g| {
                            let gp = self.objects[k].compose(&g);
                            gp.distance_to(&pose) <= task.grasp_tolerance
                                && gp.angle_to(&pose) <= DEFAULT_GRASP_ANGLE_TOLERANCE
                        })
                });
                if let Some(k) = candidate {
                    self.attached[k] = Some((arm, pose.inverse().compose(&self.objects[k])));
                }
            }
        }
        for k in 0..self.objects.len() {
            if let Some((arm, offset)) = self.attached[k] {
                self.objects[k] = self.ee[arm].compose(&offset);
            }
        }
        self.update_predicates();
        if !self.extra_obstacles.is_empty() {
            for ee in &self.ee {
                let hit = self.extra_obstacles.iter().any(|p| {
                    let local = p.pose.inverse().transform_point(&ee.position);
                    p.shape.contains(&local)
                });
                self.collided |= hit;
            }
        }
    }

    fn update_predicates(&mut self) {
        for (i, s) in self.task.success.iter().enumerate() {
            match *s {
                Success::Pressed {
                    object,
                    radius,
                    height,
                } => {
                    let o = &self.objects[object];
                    self.latched[i] |= self.ee.iter().any(|ee| {
                        let d = ee.position - o.position;
                        (d.x * d.x + d.y * d.y).sqrt() <= radius && d.z <= height
                    });
                }
                Success::Coverage {
                    object,
                    brush,
                    height,
                    ..
                } => {
                    let tip_local = Vector3::from(self.task.tool_offset.unwrap_or([0.0; 3]));
                    let tip = self.ee[0].transform_point(&tip_local);
                    let local = self.objects[object].inverse().transform_point(&tip);
                    if local.z <= height && local.z >= -0.01 {
                        for (b, c) in self.bins[i].iter().zip(self.covered[i].iter_mut()) {
                            if (b[0] - local.x).hypot(b[1] - local.y) <= brush {
                                *c = true;
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }

    pub fn coverage(&self, predicate: usize) -> Option<f64> {
        let bins = &self.covered[predicate];
        (!bins.is_empty()).then(|| bins.iter().filter(|c| **c).count() as f64 / bins.len() as f64)
    }

    pub fn predicate_holds(&self, i: usize) -> bool {
        match self.task.success[i] {
            Success::Lifted { object, height } => {
                self.objects[object].position.z - self.initial[object].position.z >= height
            }
            Success::Pressed { .. } => self.latched[i],
            Success::Inserted {
                object,
                target,
                tolerance,
                height,
            } => {
                let d = self.objects[object].position - self.objects[target].position;
                (d.x * d.x + d.y * d.y).sqrt() <= tolerance
                    && d.z <= height
                    && self.attached[object].is_none()
            }
            Success::Coverage { fraction, .. } => self.coverage(i).is_some_and(|c| c >= fraction),
        }
    }

    pub fn success(&self) -> bool {
        !self.collided && (0..self.task.success.len()).all(|i| self.predicate_holds(i))
    }
}

/// An object displaced on the table just before the given frame executes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub frame: usize,
    pub object: usize,
    pub offset: [f64; 2],
}

#[derive(Clone, Debug, Default)]
pub struct ExecOptions {
    pub disturbances: Vec<Disturbance>,
    pub obstacles: Vec<PlacedPart>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub frame: usize,
    pub ee: Vec<Pose>,
    pub hand: Vec<f64>,
    pub objects: Vec<Pose>,
    pub attached: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub success: bool,
    pub collided: bool,
    pub coverage: Option<f64>,
    pub final_objects: Vec<Pose>,
    pub trace: Vec<TraceRow>,
}

impl Outcome {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("frame");
        if let Some(r) = self.trace.first() {
            for a in 0..r.ee.len() {
                for c in ["x", "y", "z", "qw", "qx", "qy", "qz", "hand"] {
                    let _ = write!(s, ",ee{a}_{c}");
                }
            }
            for k in 0..r.objects.len() {
                for c in ["x", "y", "z", "yaw", "held"] {
                    let _ = write!(s, ",obj{k}_{c}");
                }
            }
        }
        s.push('\n');
        for r in &self.trace {
            let _ = write!(s, "{}", r.frame);
            for (e, h) in r.ee.iter().zip(&r.hand) {
                let q = e.wxyz();
                let p = e.position;
                let _ = write!(
                    s,
                    ",{},{},{},{},{},{},{},{}",
                    p.x, p.y, p.z, q[0], q[1], q[2], q[3], h
                );
            }
            for (o, held) in r.objects.iter().zip(&r.attached) {
                let p = o.position;
                let _ = write!(s, ",{},{},{},{},{}", p.x, p.y, p.z, o.yaw(), *held as u8);
            }
            s.push('\n');
        }
        s
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.trace_csv())?;
        Ok(())
    }
}

/// Replays an action plan open loop from `config` and judges the result.
pub fn execute_plan(
    task: &TaskSpec,
    config: &[Pose],
    plan: &ActionPlan,
    opts: &ExecOptions,
) -> Result<Outcome> {
    if plan.arms.len() != task.arms.len() {
        return Err(Error::InvalidArgument(format!(
            "plan has {} arms, task {} has {}",
            plan.arms.len(),
            task.name,
            task.arms.len()
        )));
    }
    let mut world = World::new(task, config)?;
    world.extra_obstacles = opts.obstacles.clone();
    let mut trace = Vec::with_capacity(plan.len());
    for j in 0..plan.len() {
        for d in opts.disturbances.iter().filter(|d| d.frame == j) {
            world.disturb(d.object, d.offset[0], d.offset[1]);
        }
        let actions: Vec<(Pose, f64)> = plan
            .arms
            .iter()
            .map(|a| (a.poses[j], a.hands[j].first().copied().unwrap_or(1.0)))
            .collect();
        world.step(&actions);
        trace.push(TraceRow {
            frame: j,
            ee: world.ee.clone(),
            hand: world.hand.clone(),
            objects: world.objects.clone(),
            attached: world.attached.iter().map(Option::is_some).collect(),
        });
    }
    let coverage = (0..task.success.len()).find_map(|i| world.coverage(i));
    Ok(Outcome {
        success: world.success(),
        collided: world.collided,
        coverage,
        final_objects: world.objects.clone(),
        trace,
    })
}

/// Uniform random planar jitter, used by tests and perturbation helpers.
pub fn jitter_config(
    task: &TaskSpec,
    config: &[Pose],
    amount: f64,
    rng: &mut impl Rng,
) -> Vec<Pose> {
    config
        .iter()
        .zip(&task.objects)
        .map(|(p, o)| {
            o.place(
                p.position.x + rng.random_range(-amount..=amount),
                p.position.y + rng.random_range(-amount..=amount),
                p.yaw() - o.rest.yaw(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests;
