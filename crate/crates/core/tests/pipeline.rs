use demogen_core::adapter::{ActionPlan, FrameTag};
use demogen_core::augment::{
    obstacle_augment, plan_dataset, GenerationSpec, ObstacleSpec, Perturbation, Primitive,
};
use demogen_core::demo_store::{
    self, dataset_containers, validate, DatasetManifest, FORMAT_VERSION,
};
use demogen_core::pipeline::{generate_batch, Generator};
use demogen_core::pointcloud::LABEL_OBSTACLE;
use demogen_core::sim::{
    builtin, builtin_names, execute_plan, jitter_config, scripted_demo, ExecOptions, PlacedPart,
    Shape,
};
use demogen_core::{Error, Pose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn stored_sources_generate_replayable_demos_for_every_task() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for name in builtin_names() {
        let task = builtin(name).unwrap();
        let config = task.default_config();
        let src_dir = dir.path().join(name);
        demo_store::write(&scripted_demo(&task, &config, 1).unwrap(), &src_dir).unwrap();
        let source = demo_store::read(&src_dir).unwrap();
        let g = Generator::for_task(&task, source).unwrap();
        let target = jitter_config(&task, &config, 0.06, &mut rng);
        let (demo, _) = g.generate(&target).unwrap();
        let out = dir.path().join(format!("{name}_gen"));
        demo_store::write(&demo, &out).unwrap();
        let back = demo_store::read(&out).unwrap();
        assert_eq!(back, demo, "{name}");
        assert!(validate(&back).is_valid());
        let r = execute_plan(
            &task,
            &back.init_config,
            &ActionPlan::from_demo(&back),
            &ExecOptions::default(),
        )
        .unwrap();
        assert!(r.success, "{name}");
    }
}

#[test]
fn bimanual_arms_follow_their_own_objects() {
    let task = builtin("fruit_basket").unwrap();
    let config = task.default_config();
    let g = Generator::for_task(&task, scripted_demo(&task, &config, 0).unwrap()).unwrap();
    let mut target = config.clone();
    target[0] = Pose::from_translation(0.04, -0.03, 0.0).compose(&target[0]);
    let plan = g.plan(&target).unwrap();
    let src = g.source();
    for (arm, a) in plan.arms.iter().enumerate() {
        let own = &task.arms[arm].objects;
        for (j, tag) in a.tags.iter().enumerate() {
            if let FrameTag::Skill(k) = tag {
                assert!(own.contains(k));
                let d = Pose::delta_between(&config[*k], &target[*k]);
                let want = d.compose(&src.frames[a.source_frames[j]].arms[arm].action);
                assert!(want.distance_to(&a.poses[j]) < 1e-12);
            }
        }
    }
    // the arm whose object did not move replays its source skill unchanged
    let still = (0..2)
        .find(|&arm| !task.arms[arm].objects.contains(&0))
        .unwrap();
    for (j, tag) in plan.arms[still].tags.iter().enumerate() {
        if matches!(tag, FrameTag::Skill(_)) {
            assert_eq!(
                plan.arms[still].poses[j],
                src.frames[plan.arms[still].source_frames[j]].arms[still].action
            );
        }
    }
    assert!(
        execute_plan(&task, &target, &plan, &ExecOptions::default())
            .unwrap()
            .success
    );
}

#[test]
fn batch_dataset_round_trips_through_the_store() {
    let task = builtin("pick_cube").unwrap();
    let config = task.default_config();
    let generators: Vec<Generator> = (0..2)
        .map(|s| Generator::for_task(&task, scripted_demo(&task, &config, s).unwrap()).unwrap())
        .collect();
    let spec = GenerationSpec {
        eval_grid: vec![
            vec![vec![0.05, 0.05]],
            vec![vec![-0.1, 0.1]],
            vec![vec![0.9, 0.0]],
        ],
        perturbation: Some(Perturbation {
            half_extent: 0.015,
            per_axis: 3,
        }),
        num_sources: Some(2),
        ..Default::default()
    };
    let jobs = plan_dataset(&spec, &task).unwrap();
    assert_eq!(jobs.len(), 54);
    let seq = generate_batch(&generators, &jobs, 1).unwrap();
    let par = generate_batch(&generators, &jobs, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = DatasetManifest {
        version: FORMAT_VERSION,
        task: task.name.clone(),
        ..Default::default()
    };
    for (i, (a, b)) in seq.outputs.iter().zip(&par.outputs).enumerate() {
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a, b);
                let name = format!("demo_{i:03}");
                demo_store::write(a, dir.path().join(&name)).unwrap();
                manifest.demos.push(name);
            }
            (Err(Error::UnreachableTarget { .. }), Err(Error::UnreachableTarget { .. })) => {}
            other => panic!("job {i}: {other:?}"),
        }
    }
    assert_eq!(manifest.demos.len(), 36);
    manifest.write(dir.path()).unwrap();
    assert_eq!(DatasetManifest::read(dir.path()).unwrap(), manifest);
    assert_eq!(dataset_containers(dir.path()).unwrap().len(), 36);
}

#[test]
fn obstacle_dataset_replays_without_collision() {
    let task = builtin("peg_insert").unwrap();
    let config = task.default_config();
    let g = Generator::for_task(&task, scripted_demo(&task, &config, 0).unwrap()).unwrap();
    let peg = config[0].position;
    let socket = config[1].position;
    let mid = (peg + socket) / 2.0;
    let prim = Primitive {
        shape: Shape::Sphere { radius: 0.02 },
        pose: Pose::from_translation(mid.x, mid.y, 0.14),
    };
    let spec = ObstacleSpec {
        primitives: vec![prim],
        points_per_primitive: 200,
        clearance: 0.06,
    };
    let (demo, plan, cloud) = obstacle_augment(&g, &config, &spec, 0).unwrap();
    assert_eq!(cloud.len(), 200);
    assert!(demo.frames.iter().all(|f| f
        .cloud
        .labels
        .iter()
        .filter(|l| **l == LABEL_OBSTACLE)
        .count()
        == 200));
    let opts = ExecOptions {
        obstacles: vec![PlacedPart::new(prim.shape, prim.pose)],
        ..Default::default()
    };
    let r = execute_plan(&task, &config, &plan, &opts).unwrap();
    assert!(r.success && !r.collided);
}
