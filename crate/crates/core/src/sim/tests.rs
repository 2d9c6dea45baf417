use super::*;
use crate::demo_store::validate;
use crate::parser::{contact_profile, object_center, SegmentKind};
use crate::pointcloud::{chamfer, mean_spacing};

fn quiet(mut task: TaskSpec) -> TaskSpec {
    task.render.noise_sigma = 0.0;
    task
}

fn run_source(task: &TaskSpec) -> (Demonstration, Outcome) {
    let config = task.default_config();
    let demo = scripted_demo(task, &config, 7).unwrap();
    let out = execute_plan(
        task,
        &config,
        &ActionPlan::from_demo(&demo),
        &ExecOptions::default(),
    )
    .unwrap();
    (demo, out)
}

use crate::demo_store::Demonstration;

#[test]
fn every_builtin_script_succeeds_and_validates() {
    for name in builtin_names() {
        let task = builtin(name).unwrap();
        task.check().unwrap();
        let (demo, out) = run_source(&task);
        assert!(out.success, "{name} source script fails");
        assert!(
            validate(&demo).is_valid(),
            "{name}: {:?}",
            validate(&demo).violations
        );
        assert_eq!(demo.num_points(), task.render.points);
        let seg = demo.segments.as_ref().unwrap();
        for (arm, objs) in task.arm_object_map().iter().enumerate() {
            assert_eq!(seg.arms[arm].len(), 2 * objs.len(), "{name}");
        }
    }
}

#[test]
fn pick_boundaries_match_distance_oracle() {
    let task = builtin("pick_cube").unwrap();
    let (demo, _) = run_source(&task);
    let center = object_center(&demo.frames[0].cloud, 0).unwrap();
    let first = demo
        .actions(0)
        .iter()
        .position(|a| (a.position - center).norm() <= task.parse.threshold)
        .unwrap();
    let seg = &demo.segments.as_ref().unwrap().arms[0];
    assert_eq!(seg[0].kind, SegmentKind::Motion);
    assert_eq!((seg[0].start, seg[0].end), (0, first));
    assert_eq!((seg[1].start, seg[1].end), (first, demo.len()));
    assert!(first > 0);
}

#[test]
fn sauce_contact_uses_tool_tip() {
    let task = builtin("sauce_spread").unwrap();
    let (demo, out) = run_source(&task);
    assert!(out.coverage.unwrap() >= 0.6);
    let opts = task.parse_options();
    assert!(opts.tool_offset.is_some());
    let center = object_center(&demo.frames[0].cloud, 0).unwrap();
    let prof = contact_profile(&demo.actions(0), &center, &opts);
    let seg = &demo.segments.as_ref().unwrap().arms[0];
    assert_eq!(seg[1].start, prof.iter().position(|c| *c).unwrap());
}

#[test]
fn noise_only_perturbs_points() {
    let task = builtin("pick_cube").unwrap();
    let config = task.default_config();
    let a = scripted_demo(&task, &config, 1).unwrap();
    let b = scripted_demo(&task, &config, 2).unwrap();
    let clean = scripted_demo(&quiet(task.clone()), &config, 1).unwrap();
    let bound = 3.0 * task.render.noise_sigma + 1e-6;
    for t in [0, a.len() / 2, a.len() - 1] {
        assert_eq!(a.frames[t].arms, b.frames[t].arms);
        assert_eq!(a.frames[t].cloud.labels, clean.frames[t].cloud.labels);
        for ((p, q), c) in a.frames[t]
            .cloud
            .points
            .iter()
            .zip(&b.frames[t].cloud.points)
            .zip(&clean.frames[t].cloud.points)
        {
            for i in 0..3 {
                assert!(((p[i] - c[i]) as f64).abs() <= bound);
                assert!(((p[i] - q[i]) as f64).abs() <= 2.0 * bound);
            }
        }
    }
}

#[test]
fn renders_differ_by_less_than_sampling_resolution() {
    let mut task = builtin("pick_cube").unwrap();
    task.render.visibility = false;
    let world = World::new(&task, &task.default_config()).unwrap();
    let r = Renderer::new(&task);
    let a = r.render(
        &world,
        &task.camera,
        &RenderOptions::from_spec(&task.render, 10),
    );
    let b = r.render(
        &world,
        &task.camera,
        &RenderOptions::from_spec(&task.render, 11),
    );
    let spacing = mean_spacing(&quiet(task.clone()).render_frame0(&r)).unwrap();
    assert!(chamfer(&a, &b).unwrap() < 2.0 * spacing);
}

impl TaskSpec {
    fn render_frame0(&self, r: &Renderer) -> LabeledCloud {
        let world = World::new(self, &self.default_config()).unwrap();
        r.render(
            &world,
            &self.camera,
            &RenderOptions::from_spec(&self.render, 0),
        )
    }
}

#[test]
fn camera_never_sees_hidden_faces() {
    let mut task = quiet(builtin("pick_cube").unwrap());
    task.camera = Camera::birds_eye();
    task.render.points = 4000;
    let r = Renderer::new(&task);
    let cloud = task.render_frame0(&r);
    let cube = cloud.with_label(0);
    assert!(!cube.is_empty());
    let c = task.default_config()[0].position;
    let on_bottom = |p: &[f32; 3]| {
        p[2].abs() < 1e-6 && (p[0] as f64 - c.x).abs() < 0.024 && (p[1] as f64 - c.y).abs() < 0.024
    };
    // the bottom face rests on the table and faces away from a camera above
    assert!(!cube.points.iter().any(on_bottom));
    task.render.visibility = false;
    let all = task.render_frame0(&r).with_label(0);
    assert!(all.points.iter().any(on_bottom));
}

#[test]
fn visibility_is_view_dependent() {
    let task = quiet(builtin("pick_cube").unwrap());
    let r = Renderer::new(&task);
    let cloud = task.render_frame0(&r).with_label(0);
    let c = task.default_config()[0].position;
    // the back face (+y, away from the camera) is hidden
    assert!(cloud
        .points
        .iter()
        .all(|p| (p[1] as f64) < c.y + 0.025 - 1e-4));
}

#[test]
fn peg_grasp_tolerance_is_one_centimeter() {
    let task = builtin("peg_insert").unwrap();
    let config = task.default_config();
    let demo = scripted_demo(&task, &config, 0).unwrap();
    let plan = ActionPlan::from_demo(&demo);
    for (dx, ok) in [(0.005, true), (0.015, false)] {
        let mut moved = config.clone();
        moved[0].position.x += dx;
        let mut shifted = moved.clone();
        shifted[1].position.x += dx;
        let out = execute_plan(&task, &shifted, &plan, &ExecOptions::default()).unwrap();
        assert_eq!(out.success, ok, "dx {dx}");
    }
}

#[test]
fn button_size_sets_success_radius() {
    for (name, ok) in [("button_large", true), ("button_small", false)] {
        let task = builtin(name).unwrap();
        let config = task.default_config();
        let demo = scripted_demo(&task, &config, 0).unwrap();
        let mut off = config.clone();
        off[0].position.x += 0.03;
        let out = execute_plan(
            &task,
            &off,
            &ActionPlan::from_demo(&demo),
            &ExecOptions::default(),
        )
        .unwrap();
        assert_eq!(out.success, ok, "{name}");
    }
}

#[test]
fn disturbance_before_grasp_breaks_open_loop_pick() {
    let task = builtin("pick_cube").unwrap();
    let config = task.default_config();
    let demo = scripted_demo(&task, &config, 0).unwrap();
    let opts = ExecOptions {
        disturbances: vec![Disturbance {
            frame: 10,
            object: 0,
            offset: [0.05, 0.0],
        }],
        ..Default::default()
    };
    let out = execute_plan(&task, &config, &ActionPlan::from_demo(&demo), &opts).unwrap();
    assert!(!out.success);
    assert_eq!(out.trace.len(), demo.len());
    let csv = out.trace_csv();
    assert_eq!(csv.lines().count(), demo.len() + 1);
    assert!(csv.starts_with("frame,ee0_x"));
}

#[test]
fn obstacle_in_path_is_a_collision() {
    let task = builtin("pick_cube").unwrap();
    let config = task.default_config();
    let demo = scripted_demo(&task, &config, 0).unwrap();
    let mid = demo.frames[15].arms[0].action.position;
    let opts = ExecOptions {
        obstacles: vec![PlacedPart::new(
            Shape::Sphere { radius: 0.03 },
            Pose::new(mid, Default::default()),
        )],
        ..Default::default()
    };
    let out = execute_plan(&task, &config, &ActionPlan::from_demo(&demo), &opts).unwrap();
    assert!(out.collided && !out.success);
}

#[test]
fn unreachable_config_is_rejected() {
    let task = builtin("pick_cube").unwrap();
    let far = vec![task.objects[0].place(0.5, 0.0, 0.0)];
    assert!(matches!(
        scripted_demo(&task, &far, 0),
        Err(Error::UnreachableTarget { .. })
    ));
}

#[test]
fn task_spec_json_round_trip() {
    for name in builtin_names() {
        let task = builtin(name).unwrap();
        let text = serde_json::to_string_pretty(&task).unwrap();
        assert_eq!(TaskSpec::from_json(&text).unwrap(), task);
    }
    assert!(matches!(builtin("nope"), Err(Error::UnknownTask(_))));
}

#[test]
fn eval_configs_are_products() {
    let t = builtin("peg_insert").unwrap();
    assert_eq!(t.eval_configs().len(), 81);
    let b = builtin("button_small").unwrap();
    assert_eq!(b.eval_configs().len(), 441);
    let f = builtin("fruit_basket").unwrap();
    assert_eq!(f.eval_configs().len(), 16 * 4);
}

#[test]
fn range_grid_is_row_major() {
    let g = Range2::new([0.0, 0.0], [1.0, 2.0]).grid(2, 3);
    assert_eq!(
        g,
        vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [0.0, 2.0],
            [1.0, 2.0]
        ]
    );
    assert_eq!(
        Range2::new([0.0, 0.0], [1.0, 1.0]).grid(1, 1),
        vec![[0.5, 0.5]]
    );
}
