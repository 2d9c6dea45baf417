use super::*;
use crate::sim::{builtin, scripted_demo};
use proptest::prelude::*;

fn pick_setup() -> (TaskSpec, Generator) {
    let task = builtin("pick_cube").unwrap();
    let source = scripted_demo(&task, &task.default_config(), 0).unwrap();
    let g = Generator::for_task(&task, source).unwrap();
    (task, g)
}

#[test]
fn selects_the_demo_generated_for_the_observed_config() {
    let (task, g) = pick_setup();
    let configs: Vec<Vec<Pose>> = [[-0.1, -0.1], [0.1, -0.1], [0.0, 0.1], [0.1, 0.12]]
        .iter()
        .map(|p| vec![task.objects[0].place(p[0], p[1], 0.0)])
        .collect();
    let demos: Vec<Demonstration> = configs.iter().map(|c| g.generate(c).unwrap().0).collect();
    let policy = NnReplayPolicy::new(&demos).unwrap();
    assert_eq!(policy.len(), 4);
    let renderer = Renderer::new(&task);
    for (i, c) in configs.iter().enumerate() {
        let obs = observe(&task, &renderer, c, 11).unwrap();
        assert_eq!(policy.select(&obs).unwrap(), i);
    }
    // closer to the second demo than to any other
    let near = vec![task.objects[0].place(0.09, -0.08, 0.0)];
    assert_eq!(
        policy
            .select(&observe(&task, &renderer, &near, 2).unwrap())
            .unwrap(),
        1
    );
}

#[test]
fn single_and_empty_datasets() {
    let (task, g) = pick_setup();
    assert!(matches!(NnReplayPolicy::new(&[]), Err(Error::EmptyDataset)));
    let policy = NnReplayPolicy::new(std::slice::from_ref(g.source())).unwrap();
    let far = vec![task.objects[0].place(0.12, 0.15, 0.0)];
    let obs = observe(&task, &Renderer::new(&task), &far, 0).unwrap();
    assert_eq!(policy.select(&obs).unwrap(), 0);
}

#[test]
fn ties_go_to_lowest_index() {
    let (task, g) = pick_setup();
    let d = g.source().clone();
    let policy = NnReplayPolicy::new(&[d.clone(), d]).unwrap();
    let obs = observe(&task, &Renderer::new(&task), &task.default_config(), 0).unwrap();
    assert_eq!(policy.select(&obs).unwrap(), 0);
}

#[test]
fn grid_eval_replays_and_zeroes_unreachable_cells() {
    let (task, g) = pick_setup();
    let policy = NnReplayPolicy::new(std::slice::from_ref(g.source())).unwrap();
    let configs = vec![
        task.default_config(),
        vec![task.objects[0].place(0.1, 0.1, 0.0)],
        vec![task.objects[0].place(2.0, 0.0, 0.0)],
    ];
    let h = grid_eval(&policy, &task, &configs, 2, 0).unwrap();
    assert_eq!(h.cells.len(), 3);
    assert_eq!(h.cells[0].success_rate, 1.0);
    assert_eq!(h.cells[1].success_rate, 0.0);
    assert_eq!(h.cells[2].success_rate, 0.0);
    assert_eq!(h.cells[2].x, 2.0);
    assert!(h.cells.iter().all(|c| c.trials == 2));
}

#[test]
fn empty_heatmap_is_header_only() {
    let h = Heatmap::default();
    assert_eq!(h.to_csv(), "x,y,success_rate,trials\n");
    assert_eq!(Heatmap::from_csv(&h.to_csv()).unwrap(), h);
    assert!(Heatmap::from_csv("a,b\n").is_err());
    assert!(Heatmap::from_csv("x,y,success_rate,trials\n1,2,3\n").is_err());
}

#[test]
fn heatmap_file_round_trip_and_ppm() {
    let h = Heatmap {
        cells: vec![
            Cell {
                x: 0.0,
                y: 0.0,
                success_rate: 1.0,
                trials: 5,
            },
            Cell {
                x: 0.1,
                y: 0.0,
                success_rate: 0.4,
                trials: 5,
            },
            Cell {
                x: 0.0,
                y: 0.1,
                success_rate: 0.0,
                trials: 5,
            },
            Cell {
                x: 0.1,
                y: 0.1,
                success_rate: 0.2,
                trials: 5,
            },
        ],
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    h.write_csv(&p).unwrap();
    assert_eq!(Heatmap::read_csv(&p).unwrap(), h);
    let ppm = h.to_ppm(3);
    let header = b"P6\n6 6\n255\n";
    assert_eq!(&ppm[..header.len()], header);
    assert_eq!(ppm.len(), header.len() + 6 * 6 * 3);
    // top-left pixel is (x=0, y=0.1): failure, pure red
    assert_eq!(&ppm[header.len()..header.len() + 3], &[255, 0, 0]);
    let mut worse = h.clone();
    worse.cells[1].success_rate = 0.2;
    assert!(h.dominates(&worse) && !worse.dominates(&h));
    assert!((h.mean() - 0.4).abs() < 1e-12);
}

proptest! {
    #[test]
    fn heatmap_csv_is_lossless(cells in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, 0.0f64..=1.0, 0usize..100), 0..30)) {
        let h = Heatmap {
            cells: cells.into_iter().map(|(x, y, success_rate, trials)| Cell { x, y, success_rate, trials }).collect(),
        };
        prop_assert_eq!(Heatmap::from_csv(&h.to_csv()).unwrap(), h);
    }

    #[test]
    fn spearman_of_monotone_map_is_one(v in prop::collection::hash_set(-1000i32..1000, 3..40)) {
        let a: Vec<f64> = v.into_iter().map(f64::from).collect();
        let b: Vec<f64> = a.iter().map(|x| x.powi(3) + 2.0).collect();
        prop_assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|x| -x).collect();
        prop_assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }
}

#[test]
fn spearman_matches_hand_computed_values() {
    // ranks a: 1 2 3 4 5, b: 2 1 4 3 5 ; d^2 sum = 4 ; 1 - 6*4/(5*24) = 0.8
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]) - 0.8).abs() < 1e-12);
    assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
}

fn displacements() -> Vec<[f64; 2]> {
    (0..=8)
        .map(|i| [0.02 * i as f64, 0.01 * i as f64])
        .collect()
}

#[test]
fn zero_displacement_has_zero_mismatch() {
    let task = builtin("pick_cube").unwrap();
    for vis in [true, false] {
        let (pts, res) = mismatch_curve(&task, &task.default_config(), &[[0.0, 0.0]], vis).unwrap();
        assert_eq!(pts[0].chamfer, 0.0);
        assert!(res > 0.0);
    }
}

#[test]
fn mismatch_stays_at_sampling_resolution_without_occlusion() {
    let task = builtin("button_large").unwrap();
    let (pts, res) =
        mismatch_curve(&task, &task.default_config(), &displacements(), false).unwrap();
    for p in &pts {
        assert!(p.chamfer < 2.0 * res, "{p:?} vs {res}");
    }
}

#[test]
fn mismatch_grows_with_displacement_under_occlusion() {
    let task = builtin("button_large").unwrap();
    let (pts, _) = mismatch_curve(&task, &task.default_config(), &displacements(), true).unwrap();
    let d: Vec<f64> = pts.iter().map(|p| p.displacement).collect();
    let c: Vec<f64> = pts.iter().map(|p| p.chamfer).collect();
    let rho = spearman(&d, &c);
    assert!(rho > 0.8, "{rho} {c:?}");
    assert!(c[8] > c[1]);
}

#[test]
fn translated_box_keeps_its_visible_faces() {
    let task = builtin("pick_cube").unwrap();
    let (pts, _) = mismatch_curve(&task, &task.default_config(), &displacements(), true).unwrap();
    assert!(pts.iter().all(|p| p.chamfer < 1e-6), "{pts:?}");
}

#[test]
fn sweep_plateaus_once_eval_range_is_covered() {
    let task = builtin("button_small").unwrap();
    let source = scripted_demo(&task, &task.default_config(), 0).unwrap();
    let g = Generator::for_task(&task, source).unwrap();
    let eval: Vec<Vec<Pose>> = Range2::new([-0.04, -0.04], [0.04, 0.04])
        .grid(3, 3)
        .into_iter()
        .map(|p| vec![task.objects[0].place(p[0], p[1], 0.0)])
        .collect();
    let levels = coverage_levels(&task, [0.0, 0.0], &[0.0, 0.04, 0.08, 0.16], 0.02);
    assert_eq!(
        levels.iter().map(|l| l.1.len()).collect::<Vec<_>>(),
        vec![1, 9, 25, 81]
    );
    let pts = saturation_sweep(&g, &task, &levels, &eval, 1, 0).unwrap();
    let rates: Vec<f64> = pts.iter().map(|p| p.success_rate).collect();
    assert!(rates.windows(2).all(|w| w[1] >= w[0]), "{rates:?}");
    assert!(rates[0] < 0.5, "{rates:?}");
    assert_eq!(rates[2], 1.0, "{rates:?}");
    assert_eq!(rates[3], 1.0, "{rates:?}");
    let csv = sweep_csv(&pts);
    assert_eq!(csv.lines().count(), 5);
    assert!(saturation_sweep(
        &g,
        &task,
        &[levels[1].clone(), levels[0].clone()],
        &eval,
        1,
        0
    )
    .is_err());
}

#[test]
fn density_levels_are_square_lattices() {
    let task = builtin("button_small").unwrap();
    let l = density_levels(&task, &task.objects[0].eval_range, &[1, 2, 5]);
    assert_eq!(
        l.iter().map(|x| x.1.len()).collect::<Vec<_>>(),
        vec![1, 4, 25]
    );
}
