//! Free-space end-effector motion: straight-line interpolation and an
//! RRT-Connect planner over positions for scenes with obstacle points.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{to_v, LabeledCloud};
use crate::se3::Pose;

pub const DEFAULT_MAX_STEP: f64 = 0.01;
pub const DEFAULT_MAX_ANGLE_STEP: f64 = 5.0 * std::f64::consts::PI / 180.0;
pub const DEFAULT_CLEARANCE: f64 = 0.06;
pub const DEFAULT_MAX_ITERATIONS: usize = 50_000;
pub const SHORTCUT_ATTEMPTS: usize = 100;

/// Planner parameters shared by every request of a generation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub max_step: f64,
    pub max_angle_step: f64,
    pub clearance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_step: DEFAULT_MAX_STEP,
            max_angle_step: DEFAULT_MAX_ANGLE_STEP,
            clearance: DEFAULT_CLEARANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_step > 0.0) || !(self.max_angle_step > 0.0) {
            return Err(Error::InvalidArgument(
                "planner step sizes must be positive".into(),
            ));
        }
        if !(self.clearance >= 0.0) {
            return Err(Error::InvalidArgument(
                "planner clearance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn request(&self, start: Pose, goal: Pose) -> PlanRequest {
        PlanRequest {
            start,
            goal,
            max_step: self.max_step,
            max_angle_step: self.max_angle_step,
            obstacles: None,
            clearance: self.clearance,
            rng_seed: self.seed,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanRequest {
    pub start: Pose,
    pub goal: Pose,
    pub max_step: f64,
    pub max_angle_step: f64,
    pub obstacles: Option<LabeledCloud>,
    pub clearance: f64,
    pub rng_seed: u64,
    pub max_iterations: usize,
}

fn step_count(a: &Pose, b: &Pose, max_step: f64, max_angle_step: f64) -> usize {
    let by_dist = (a.distance_to(b) / max_step - 1e-9).ceil().max(0.0);
    let by_angle = (a.angle_to(b) / max_angle_step - 1e-9).ceil().max(0.0);
    by_dist.max(by_angle) as usize
}

/// Evenly spaced poses from `start` to `goal`, both included exactly.
pub fn linear_plan(start: &Pose, goal: &Pose, max_step: f64, max_angle_step: f64) -> Vec<Pose> {
    let n = step_count(start, goal, max_step, max_angle_step);
    if n == 0 {
        return vec![*start];
    }
    (0..=n)
        .map(|i| match i {
            0 => *start,
            i if i == n => *goal,
            i => Pose::interpolate(start, goal, i as f64 / n as f64),
        })
        .collect()
}

/// Obstacle points prepared for distance queries.
pub struct Obstacles {
    points: Vec<Vector3<f64>>,
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Obstacles {
    pub fn new(cloud: &LabeledCloud) -> Self {
        let points: Vec<Vector3<f64>> = cloud.points.iter().map(to_v).collect();
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for p in &points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Self { points, min, max }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn bbox_distance(&self, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
        let gap = (self.min - hi).sup(&(lo - self.max)).sup(&Vector3::zeros());
        gap.norm()
    }

    pub fn point_clear(&self, p: &Vector3<f64>, clearance: f64) -> bool {
        if self.bbox_distance(p, p) >= clearance {
            return true;
        }
        let c2 = clearance * clearance;
        self.points.iter().all(|o| (o - p).norm_squared() >= c2)
    }

    /// True when every point of segment `a`-`b` keeps `clearance` from all obstacles.
    pub fn segment_clear(&self, a: &Vector3<f64>, b: &Vector3<f64>, clearance: f64) -> bool {
        if self.bbox_distance(&a.inf(b), &a.sup(b)) >= clearance {
            return true;
        }
        let c2 = clearance * clearance;
        let ab = b - a;
        let len2 = ab.norm_squared();
        self.points.iter().all(|o| {
            let t = if len2 > 0.0 {
                ((o - a).dot(&ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (a + ab * t - o).norm_squared() >= c2
        })
    }

    pub fn min_distance(&self, p: &Vector3<f64>) -> f64 {
        self.points
            .iter()
            .map(|o| (o - p).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn collision_free(position: &Vector3<f64>, obstacles: &LabeledCloud, clearance: f64) -> bool {
    Obstacles::new(obstacles).point_clear(position, clearance)
}

/// `linear_plan` without obstacles, RRT-Connect otherwise.
pub fn plan(req: &PlanRequest) -> Result<Vec<Pose>> {
    match &req.obstacles {
        Some(o) if !o.is_empty() => rrt_plan(req),
        _ => Ok(linear_plan(
            &req.start,
            &req.goal,
            req.max_step,
            req.max_angle_step,
        )),
    }
}

struct Tree {
    nodes: Vec<Vector3<f64>>,
    parent: Vec<usize>,
}

impl Tree {
    fn new(root: Vector3<f64>) -> Self {
        Self {
            nodes: vec![root],
            parent: vec![0],
        }
    }

    fn nearest(&self, q: &Vector3<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn push(&mut self, p: Vector3<f64>, parent: usize) -> usize {
        self.nodes.push(p);
        self.parent.push(parent);
        self.nodes.len() - 1
    }

    fn path_to_root(&self, mut i: usize) -> Vec<Vector3<f64>> {
        let mut out = vec![self.nodes[i]];
        while i != 0 {
            i = self.parent[i];
            out.push(self.nodes[i]);
        }
        out
    }
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

fn extend(tree: &mut Tree, q: &Vector3<f64>, eta: f64, obs: &Obstacles, clearance: f64) -> Extend {
    let near = tree.nearest(q);
    let from = tree.nodes[near];
    let d = (q - from).norm();
    let (to, reached) = if d <= eta {
        (*q, true)
    } else {
        (from + (q - from) * (eta / d), false)
    };
    if !obs.segment_clear(&from, &to, clearance) {
        return Extend::Trapped;
    }
    let i = tree.push(to, near);
    if reached {
        Extend::Reached(i)
    } else {
        Extend::Advanced(i)
    }
}

/// RRT-Connect over end-effector positions; orientation is slerped along
/// arc length. Edges are checked exactly against the obstacle points.
pub fn rrt_plan(req: &PlanRequest) -> Result<Vec<Pose>> {
    let empty = LabeledCloud::default();
    let obs = Obstacles::new(req.obstacles.as_ref().unwrap_or(&empty));
    let (s, g) = (req.start.position, req.goal.position);
    if !obs.point_clear(&s, req.clearance) || !obs.point_clear(&g, req.clearance) {
        return Err(Error::StartOrGoalInCollision);
    }
    if obs.is_empty() || obs.segment_clear(&s, &g, req.clearance) {
        return Ok(linear_plan(
            &req.start,
            &req.goal,
            req.max_step,
            req.max_angle_step,
        ));
    }

    let margin = Vector3::repeat(req.clearance + 0.1);
    let lo = {
        let mut lo = s.inf(&g).inf(&obs.min) - margin;
        lo.z = s.z.min(g.z);
        lo
    };
    let hi = s.sup(&g).sup(&obs.max) + margin;
    let eta = (req.clearance * 0.5).max(4.0 * req.max_step);
    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);

    let mut a = Tree::new(s);
    let mut b = Tree::new(g);
    let mut a_is_start = true;
    let mut found = None;
    for _ in 0..req.max_iterations {
        let q = if rng.random::<f64>() < 0.05 {
            b.nodes[0]
        } else {
            Vector3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            )
        };
        let new = match extend(&mut a, &q, eta, &obs, req.clearance) {
            Extend::Trapped => None,
            Extend::Advanced(i) | Extend::Reached(i) => Some(i),
        };
        if let Some(ia) = new {
            let target = a.nodes[ia];
            loop {
                match extend(&mut b, &target, eta, &obs, req.clearance) {
                    Extend::Trapped => break,
                    Extend::Advanced(_) => continue,
                    Extend::Reached(ib) => {
                        found = Some((ia, ib));
                        break;
                    }
                }
            }
        }
        if let Some((ia, ib)) = found {
            let mut pa = a.path_to_root(ia);
            pa.reverse();
            let pb = b.path_to_root(ib);
            let mut path = pa;
            path.extend(pb.into_iter().skip(1));
            if !a_is_start {
                path.reverse();
            }
            let path = shortcut(path, &obs, req.clearance, &mut rng);
            return Ok(discretize(
                &path,
                &req.start,
                &req.goal,
                req.max_step,
                req.max_angle_step,
            ));
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(Error::PlanningFailed {
        iterations: req.max_iterations,
    })
}

pub fn path_length(path: &[Vector3<f64>]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Random shortcutting: joins two waypoints directly whenever the straight
/// segment between them is clear.
pub(crate) fn shortcut(
    mut path: Vec<Vector3<f64>>,
    obs: &Obstacles,
    clearance: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vector3<f64>> {
    for _ in 0..SHORTCUT_ATTEMPTS {
        if path.len() < 3 {
            break;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if obs.segment_clear(&path[i], &path[j], clearance) {
            path.drain(i + 1..j);
        }
    }
    path
}

/// Samples a waypoint polyline so that consecutive poses stay within the step
/// limits. Waypoints are kept, so every chord lies on the polyline.
fn discretize(
    path: &[Vector3<f64>],
    start: &Pose,
    goal: &Pose,
    max_step: f64,
    max_angle_step: f64,
) -> Vec<Pose> {
    let total = path_length(path);
    let angle = start.angle_to(goal);
    let mut out = vec![*start];
    let mut travelled = 0.0;
    for w in path.windows(2) {
        let seg = (w[1] - w[0]).norm();
        let seg_angle = if total > 0.0 {
            angle * seg / total
        } else {
            0.0
        };
        let n = ((seg / max_step - 1e-9)
            .ceil()
            .max((seg_angle / max_angle_step - 1e-9).ceil()))
        .max(1.0) as usize;
        for i in 1..=n {
            let f = i as f64 / n as f64;
            let p = w[0] + (w[1] - w[0]) * f;
            let s = if total > 0.0 {
                (travelled + seg * f) / total
            } else {
                1.0
            };
            let orientation = Pose::interpolate(start, goal, s.min(1.0)).orientation;
            out.push(Pose::new(p, orientation));
        }
        travelled += seg;
    }
    *out.last_mut().expect("path has a start") = *goal;
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Points on the surface of an axis-aligned box, on a regular lattice.
    pub(crate) fn box_surface(center: [f64; 3], half: [f64; 3], spacing: f64) -> LabeledCloud {
        let mut pts = Vec::new();
        let n: Vec<usize> = (0..3)
            .map(|a| ((2.0 * half[a] / spacing).ceil() as usize).max(1))
            .collect();
        for i in 0..=n[0] {
            for j in 0..=n[1] {
                for k in 0..=n[2] {
                    let on_face = i == 0 || i == n[0] || j == 0 || j == n[1] || k == 0 || k == n[2];
                    if on_face {
                        pts.push([
                            (center[0] - half[0] + 2.0 * half[0] * i as f64 / n[0] as f64) as f32,
                            (center[1] - half[1] + 2.0 * half[1] * j as f64 / n[1] as f64) as f32,
                            (center[2] - half[2] + 2.0 * half[2] * k as f64 / n[2] as f64) as f32,
                        ]);
                    }
                }
            }
        }
        LabeledCloud::uniform(pts, crate::pointcloud::LABEL_OBSTACLE)
    }

    fn dense_min_clearance(path: &[Pose], cloud: &LabeledCloud, max_step: f64) -> f64 {
        let obs: Vec<Vector3<f64>> = cloud.points.iter().map(to_v).collect();
        let mut best = f64::INFINITY;
        for w in path.windows(2) {
            let n = (((w[1].position - w[0].position).norm() / (max_step / 10.0)).ceil() as usize)
                .max(1);
            for i in 0..=n {
                let p = w[0].position.lerp(&w[1].position, i as f64 / n as f64);
                for o in &obs {
                    best = best.min((o - p).norm());
                }
            }
        }
        best
    }

    #[test]
    fn linear_cases() {
        let p = Pose::from_xyz_yaw(0.1, 0.2, 0.3, 0.4);
        assert_eq!(linear_plan(&p, &p, 0.01, 0.1), vec![p]);
        let a = Pose::identity();
        let b = Pose::from_translation(1.0, 0.0, 0.0);
        let path = linear_plan(&a, &b, 0.1, 0.1);
        assert_eq!(path.len(), 11);
        for (i, q) in path.iter().enumerate() {
            assert!((q.position.x - i as f64 * 0.1).abs() < 1e-12);
        }
        let r = Pose::from_yaw(std::f64::consts::FRAC_PI_2);
        let path = linear_plan(&a, &r, 0.01, 15f64.to_radians());
        assert!(path.len() >= 7);
        let angles: Vec<f64> = path.iter().map(|q| a.angle_to(q)).collect();
        assert!(angles.windows(2).all(|w| w[1] > w[0]));
        assert!(path
            .windows(2)
            .all(|w| w[0].angle_to(&w[1]) <= 15f64.to_radians() + 1e-12));
        assert_eq!(*path.last().unwrap(), r);
    }

    #[test]
    fn collision_free_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(collision_free(
            &Vector3::zeros(),
            &LabeledCloud::default(),
            0.06
        ));
        let cloud = LabeledCloud::uniform(vec![[0.0, 0.0, 0.0]], -3);
        assert!(!collision_free(
            &Vector3::new(0.06 - 1e-6, 0.0, 0.0),
            &cloud,
            0.06
        ));
        assert!(collision_free(
            &Vector3::new(0.06 + 1e-6, 0.0, 0.0),
            &cloud,
            0.06
        ));
        let pts: Vec<[f32; 3]> = (0..300)
            .map(|_| {
                [
                    rng.random_range(-0.5..0.5f32),
                    rng.random_range(-0.5..0.5f32),
                    rng.random_range(0.0..0.3f32),
                ]
            })
            .collect();
        let cloud = LabeledCloud::uniform(pts.clone(), -3);
        for _ in 0..500 {
            let q = Vector3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.1..0.4),
            );
            let oracle = pts.iter().all(|p| (to_v(p) - q).norm() >= 0.06);
            assert_eq!(collision_free(&q, &cloud, 0.06), oracle);
        }
    }

    fn blocked_request() -> PlanRequest {
        let cfg = PlannerConfig::default();
        let mut req = cfg.request(
            Pose::from_translation(-0.3, 0.0, 0.1),
            Pose::from_xyz_yaw(0.3, 0.0, 0.1, 1.0),
        );
        req.obstacles = Some(box_surface([0.0, 0.0, 0.1], [0.05, 0.1, 0.1], 0.01));
        req
    }

    #[test]
    fn rrt_without_obstacles_is_linear() {
        let cfg = PlannerConfig::default();
        let req = cfg.request(
            Pose::from_translation(0.0, 0.0, 0.2),
            Pose::from_xyz_yaw(0.4, 0.1, 0.3, 0.5),
        );
        let lin = linear_plan(&req.start, &req.goal, req.max_step, req.max_angle_step);
        assert_eq!(rrt_plan(&req).unwrap(), lin);
        let mut with_empty = req.clone();
        with_empty.obstacles = Some(LabeledCloud::default());
        assert_eq!(rrt_plan(&with_empty).unwrap(), lin);
    }

    #[test]
    fn rrt_avoids_box() {
        let req = blocked_request();
        let path = rrt_plan(&req).unwrap();
        assert_eq!(path[0], req.start);
        assert_eq!(*path.last().unwrap(), req.goal);
        let clearance = dense_min_clearance(&path, req.obstacles.as_ref().unwrap(), req.max_step);
        assert!(clearance >= req.clearance - 1e-9, "clearance {clearance}");
        for w in path.windows(2) {
            assert!(w[0].distance_to(&w[1]) <= req.max_step + 1e-12);
            assert!(w[0].angle_to(&w[1]) <= req.max_angle_step + 1e-9);
        }
        assert_eq!(rrt_plan(&req).unwrap(), path);
    }

    #[test]
    fn goal_in_obstacle_is_rejected() {
        let mut req = blocked_request();
        req.goal = Pose::from_translation(0.0, 0.0, 0.1);
        assert!(matches!(rrt_plan(&req), Err(Error::StartOrGoalInCollision)));
    }

    #[test]
    fn exhausted_iterations_fail() {
        let mut req = blocked_request();
        req.max_iterations = 1;
        assert!(matches!(
            rrt_plan(&req),
            Err(Error::PlanningFailed { iterations: 1 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn shortcut_never_lengthens(seed in 0u64..10_000) {
            let obs = Obstacles::new(&box_surface([0.0, 0.0, 0.1], [0.05, 0.1, 0.1], 0.02));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut path = vec![Vector3::new(-0.3, 0.0, 0.1)];
            for _ in 0..8 {
                path.push(Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(0.2..0.4), rng.random_range(0.1..0.4)));
            }
            path.push(Vector3::new(0.3, 0.0, 0.1));
            let before = path_length(&path);
            let after = path_length(&shortcut(path, &obs, 0.06, &mut rng));
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn rrt_deterministic_and_clear(seed in 0u64..1000, y in -0.05f64..0.05) {
            let mut req = blocked_request();
            req.rng_seed = seed;
            req.goal = Pose::from_xyz_yaw(0.3, y, 0.1, 1.0);
            let a = rrt_plan(&req).unwrap();
            prop_assert_eq!(&a, &rrt_plan(&req).unwrap());
            let c = dense_min_clearance(&a, req.obstacles.as_ref().unwrap(), req.max_step);
            prop_assert!(c >= req.clearance - 0.001);
        }
    }
}
