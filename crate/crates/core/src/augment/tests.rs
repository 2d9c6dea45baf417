use super::*;
use crate::sim::{builtin, execute_plan, scripted_demo, ExecOptions};
use nalgebra::Vector3;

fn rect() -> Workspace {
    Workspace::rect([-0.15, -0.2], [0.15, 0.2])
}

#[test]
fn button_grid_has_441_placements() {
    let g = grid_counts(&rect(), 21, 21).unwrap();
    assert_eq!(g.len(), 441);
    assert_eq!(g[0], [-0.15, -0.2]);
    assert!((g[1][0] - (-0.135)).abs() < 1e-12 && g[1][1] == -0.2);
    let s = grid_targets(&Workspace::rect([0.0, 0.0], [0.3, 0.3]), 0.15).unwrap();
    assert_eq!(s.len(), 9);
}

#[test]
fn coarse_spacing_gives_centroid() {
    let g = grid_targets(&rect(), 1.0).unwrap();
    assert_eq!(g.len(), 1);
    assert!(g[0][0].abs() < 1e-12 && g[0][1].abs() < 1e-12);
    assert!(grid_targets(&rect(), 0.0).is_err());
    let line = Workspace {
        polygon: vec![[0.0, 0.0], [1.0, 0.0]],
    };
    assert!(matches!(
        grid_targets(&line, 0.1),
        Err(Error::EmptyWorkspace)
    ));
}

#[test]
fn irregular_polygon_points_are_inside() {
    let tri = Workspace {
        polygon: vec![[0.0, 0.0], [0.4, 0.0], [0.0, 0.3]],
    };
    let pts = grid_targets(&tri, 0.02).unwrap();
    assert!(pts.len() > 50);
    // barycentric oracle
    let inside =
        |p: &[f64; 2]| p[0] >= -1e-12 && p[1] >= -1e-12 && p[0] / 0.4 + p[1] / 0.3 <= 1.0 + 1e-9;
    assert!(pts.iter().all(inside));
    for w in pts.windows(2) {
        assert!(w[0][1] < w[1][1] || (w[0][1] == w[1][1] && w[0][0] < w[1][0]));
    }
}

#[test]
fn perturbation_lattice() {
    let o = perturb_offsets(0.015, 3).unwrap();
    assert_eq!(o.len(), 9);
    assert!(o.contains(&[0.0, 0.0]) && o.contains(&[-0.015, 0.015]));
    assert_eq!(perturb_offsets(0.015, 1).unwrap(), vec![[0.0, 0.0]]);
    assert!(perturb_offsets(0.015, 2).is_err());
    let configs: Vec<Vec<Pose>> = (0..10)
        .map(|i| vec![Pose::from_translation(i as f64 * 0.01, 0.0, 0.0)])
        .collect();
    assert_eq!(perturb(&configs, 0.015, 3).unwrap().len(), 90);
    assert_eq!(perturb(&configs, 0.015, 1).unwrap(), configs);
}

fn counting_spec(sources: usize, configs: usize, per_axis: usize) -> GenerationSpec {
    GenerationSpec {
        eval_grid: (0..configs)
            .map(|i| vec![vec![-0.1 + 0.01 * i as f64, 0.0]])
            .collect(),
        perturbation: Some(Perturbation {
            half_extent: 0.015,
            per_axis,
        }),
        num_sources: Some(sources),
        ..Default::default()
    }
}

#[test]
fn table_one_counts() {
    let task = builtin("pick_cube").unwrap();
    for (s, e, p, want) in [
        (3, 10, 3, 270),
        (3, 16, 3, 432),
        (3, 12, 3, 324),
        (3, 9, 3, 243),
        (3, 24, 1, 72),
        (1, 1, 1, 1),
    ] {
        let spec = counting_spec(s, e, p);
        assert_eq!(spec.expected_count().unwrap(), want);
        let jobs = plan_dataset(&spec, &task).unwrap();
        assert_eq!(jobs.len(), want);
        assert_eq!(jobs.iter().filter(|j| j.source == s - 1).count(), want / s);
    }
}

#[test]
fn object_grid_products() {
    let task = builtin("peg_insert").unwrap();
    let spec = GenerationSpec {
        object_grids: vec![
            ObjectGrid {
                region: Some(Workspace::rect([-0.2, -0.1], [-0.1, 0.1])),
                counts: Some([2, 2]),
                ..Default::default()
            },
            ObjectGrid {
                points: vec![[0.1, 0.0], [0.15, 0.05]],
                ..Default::default()
            },
        ],
        num_sources: Some(3),
        perturbation: Some(Perturbation {
            half_extent: 0.015,
            per_axis: 3,
        }),
        ..Default::default()
    };
    let jobs = plan_dataset(&spec, &task).unwrap();
    assert_eq!(jobs.len(), 3 * 4 * 2 * 9);
    assert_eq!(
        jobs[0].targets[1].position.z,
        task.objects[1].rest.position.z
    );
    let bad = GenerationSpec {
        eval_grid: vec![vec![vec![0.0, 0.0]]],
        ..Default::default()
    };
    assert!(plan_dataset(&bad, &task).is_err());
}

#[test]
fn spec_json_rejects_unknown_keys() {
    let ok = r#"{"eval_grid": [[[0.0, 0.1]]], "perturbation": {"half_extent": 0.015, "per_axis": 3}, "num_sources": 3}"#;
    assert_eq!(
        GenerationSpec::from_json(ok)
            .unwrap()
            .expected_count()
            .unwrap(),
        27
    );
    assert!(GenerationSpec::from_json(r#"{"eval_gird": []}"#).is_err());
}

#[test]
fn primitive_samples() {
    let cone = Primitive {
        shape: Shape::Cone {
            radius: 0.04,
            height: 0.1,
        },
        pose: Pose::from_xyz_yaw(0.1, 0.2, 0.05, 0.3),
    };
    let c = sample_primitive(&cone, 500, 1).unwrap();
    assert_eq!(c.len(), 500);
    assert!(c.labels.iter().all(|l| *l == LABEL_OBSTACLE));
    let inv = cone.pose.inverse();
    for p in &c.points {
        let local = inv.transform_point(&Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64));
        assert!(cone.shape.surface_distance(&local) < 1e-6);
    }
    assert_eq!(sample_primitive(&cone, 500, 1).unwrap(), c);
    assert!(sample_primitive(&cone, 0, 1).is_err());
}

fn peg_generator() -> (TaskSpec, Generator, Vec<Pose>) {
    let task = builtin("peg_insert").unwrap();
    let config = vec![
        task.objects[0].place(-0.2, 0.0, 0.0),
        task.objects[1].place(0.2, 0.0, 0.0),
    ];
    let g = Generator::for_task(&task, scripted_demo(&task, &config, 0).unwrap()).unwrap();
    (task, g, config)
}

fn min_clearance(plan: &ActionPlan, obstacles: &LabeledCloud) -> f64 {
    let mut best = f64::INFINITY;
    for w in plan.arms[0].poses.windows(2) {
        for s in 0..=20 {
            let p = w[0].position + (w[1].position - w[0].position) * (s as f64 / 20.0);
            for q in &obstacles.points {
                best = best.min((p - Vector3::new(q[0] as f64, q[1] as f64, q[2] as f64)).norm());
            }
        }
    }
    best
}

#[test]
fn obstacle_on_transfer_line_is_avoided() {
    let (task, g, config) = peg_generator();
    let none = ObstacleSpec {
        primitives: vec![],
        points_per_primitive: 100,
        clearance: 0.06,
    };
    let (d0, p0, _) = obstacle_augment(&g, &config, &none, 0).unwrap();
    assert_eq!(d0, g.generate(&config).unwrap().0);

    let spec = ObstacleSpec {
        primitives: vec![Primitive {
            shape: Shape::Box {
                half: [0.03, 0.03, 0.06],
            },
            pose: Pose::from_translation(0.0, 0.0, 0.14),
        }],
        points_per_primitive: 300,
        clearance: 0.06,
    };
    let (demo, plan, obstacles) = obstacle_augment(&g, &config, &spec, 0).unwrap();
    assert!(min_clearance(&plan, &obstacles) >= 0.06 - 1e-9);
    assert!(min_clearance(&p0, &obstacles) < 0.06);
    assert_eq!(demo.num_points(), task.render.points + 300);
    assert!(demo.frames.iter().all(|f| f
        .cloud
        .labels
        .iter()
        .filter(|l| **l == LABEL_OBSTACLE)
        .count()
        == 300));
    // skills are carried over untouched
    for (a, b) in plan.arms[0].segments.iter().zip(&p0.arms[0].segments) {
        if a.kind == SegmentKind::Skill {
            assert_eq!(
                plan.arms[0].poses[a.start..a.end],
                p0.arms[0].poses[b.start..b.end]
            );
        }
    }
    let out = execute_plan(&task, &config, &plan, &ExecOptions::default()).unwrap();
    assert!(out.success);
}

#[test]
fn obstacle_on_skill_is_rejected() {
    let (_, g, config) = peg_generator();
    let spec = ObstacleSpec {
        primitives: vec![Primitive {
            shape: Shape::Sphere { radius: 0.02 },
            pose: Pose::from_translation(0.2, 0.0, 0.15),
        }],
        points_per_primitive: 100,
        clearance: 0.06,
    };
    let r = obstacle_augment(&g, &config, &spec, 0);
    assert!(
        matches!(r, Err(Error::ObstacleBlocksSkill { .. })),
        "{:?}",
        r.err()
    );
}

fn sauce() -> (TaskSpec, Generator, Vec<Pose>, ActionPlan) {
    let task = builtin("sauce_spread").unwrap();
    let config = task.default_config();
    let g = Generator::for_task(&task, scripted_demo(&task, &config, 0).unwrap()).unwrap();
    let plan = g.plan(&config).unwrap();
    (task, g, config, plan)
}

fn rel(obj: &Pose, ee: &Pose) -> Pose {
    obj.inverse().compose(ee)
}

#[test]
fn adr_identity_only_adds_pause() {
    let (_, g, config, plan) = sauce();
    let spec = AdrSpec {
        events: vec![AdrEvent {
            frame: 70,
            object: 0,
            offset: [0.0, 0.0],
        }],
        pause: 5,
    };
    let r = adr_augment(&g, &config, &plan, &spec, None).unwrap();
    let base = g.generate(&config).unwrap().0;
    assert_eq!(r.demo.len(), base.len() + 5);
    assert_eq!(r.demo.frames[..70], base.frames[..70]);
    for j in 70..base.len() {
        assert_eq!(
            r.demo.frames[j + 5].arms[0].action,
            base.frames[j].arms[0].action
        );
        assert_eq!(r.demo.frames[j + 5].cloud, base.frames[j].cloud);
    }
    assert!(crate::demo_store::validate(&r.demo).is_valid());
}

#[test]
fn adr_restores_relative_pose_after_two_disturbances() {
    let (task, g, config, plan) = sauce();
    let spec = AdrSpec {
        events: vec![
            AdrEvent {
                frame: 70,
                object: 0,
                offset: [0.1, 0.0],
            },
            AdrEvent {
                frame: 90,
                object: 0,
                offset: [0.0, 0.08],
            },
        ],
        pause: 5,
    };
    let r = adr_augment(&g, &config, &plan, &spec, Some(&task.workspace)).unwrap();
    assert_eq!(r.resume_frames.len(), 2);
    let base = g.generate(&config).unwrap().0;
    assert_eq!(r.demo.frames[..70], base.frames[..70]);
    let mut crust = config[0];
    for (i, (ev, &resume)) in spec.events.iter().zip(&r.resume_frames).enumerate() {
        crust.position.x += ev.offset[0];
        crust.position.y += ev.offset[1];
        let want = rel(&config[0], &plan.arms[0].poses[ev.frame]);
        let got = rel(&crust, &r.plan.arms[0].poses[resume]);
        assert!(
            want.distance_to(&got) < 1e-6 && want.angle_to(&got) < 1e-6,
            "event {i}"
        );
        // the re-approach closes in on the continuation pose
        let start = r.disturbances[i].frame;
        let goal = r.plan.arms[0].poses[resume];
        let dists: Vec<f64> = (start..resume)
            .map(|j| r.plan.arms[0].poses[j].distance_to(&goal))
            .collect();
        assert!(dists.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for j in start..start + spec.pause {
            assert_eq!(r.plan.arms[0].poses[j], r.plan.arms[0].poses[start - 1]);
        }
    }
    assert!(crate::demo_store::validate(&r.demo).is_valid());

    let opts = ExecOptions {
        disturbances: r.disturbances.clone(),
        ..Default::default()
    };
    let adr = execute_plan(&task, &config, &r.plan, &opts).unwrap();
    let plain_opts = ExecOptions {
        disturbances: spec
            .events
            .iter()
            .map(|e| crate::sim::Disturbance {
                frame: e.frame,
                object: e.object,
                offset: e.offset,
            })
            .collect(),
        ..Default::default()
    };
    let plain = execute_plan(&task, &config, &plan, &plain_opts).unwrap();
    assert!(adr.success, "coverage {:?}", adr.coverage);
    assert!(adr.coverage.unwrap() > plain.coverage.unwrap());
}

#[test]
fn adr_rejects_unreachable_displacement() {
    let (task, g, config, plan) = sauce();
    let spec = AdrSpec {
        events: vec![AdrEvent {
            frame: 70,
            object: 0,
            offset: [0.5, 0.0],
        }],
        pause: 5,
    };
    assert!(matches!(
        adr_augment(&g, &config, &plan, &spec, Some(&task.workspace)),
        Err(Error::UnreachableTarget { .. })
    ));
}
