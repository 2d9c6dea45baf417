//! Built-in tasks and scripted source demonstrations.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::adapter::Workspace;
use crate::demo_store::{ArmFrame, Demonstration, Frame};
use crate::error::{Error, Result};
use crate::parser::{self, ParseOptions};
use crate::se3::Pose;

use super::{
    default_synth, ArmSpec, Camera, ObjectSpec, Part, Range2, RenderOptions, RenderSpec, Renderer,
    Shape, Spiral, Step, Success, Target, TaskSpec, World, DEFAULT_GRASP_TOLERANCE,
};

const NAMES: [&str; 7] = [
    "pick_cube",
    "button_large",
    "button_small",
    "peg_insert",
    "flower_vase",
    "fruit_basket",
    "sauce_spread",
];

pub fn builtin_names() -> &'static [&'static str] {
    &NAMES
}

pub fn builtin(name: &str) -> Result<TaskSpec> {
    match name {
        "pick_cube" => Ok(pick_cube()),
        "button_large" => Ok(button("button_large", 0.04)),
        "button_small" => Ok(button("button_small", 0.01)),
        "peg_insert" => Ok(peg_insert()),
        "flower_vase" => Ok(flower_vase()),
        "fruit_basket" => Ok(fruit_basket()),
        "sauce_spread" => Ok(sauce_spread()),
        _ => Err(Error::UnknownTask(name.into())),
    }
}

fn up(x: f64, y: f64, z: f64) -> Pose {
    Pose::from_translation(x, y, z)
}

fn to_obj(object: usize, offset: Pose, frames: usize, hand: f64) -> Step {
    Step {
        to: Target::Object { object, offset },
        frames,
        hand,
        spiral: None,
    }
}

/// Approach from above, descend, close, lift.
fn pick_script(object: usize, grasp: Pose, hover: f64, lift: f64) -> Vec<Step> {
    let above = |dz: f64| up(0.0, 0.0, dz).compose(&grasp);
    vec![
        to_obj(object, above(hover), 30, 1.0),
        to_obj(object, grasp, 20, 1.0),
        to_obj(object, grasp, 5, 0.0),
        to_obj(object, above(lift), 25, 0.0),
    ]
}

fn task(
    name: &str,
    objects: Vec<ObjectSpec>,
    arms: Vec<ArmSpec>,
    success: Vec<Success>,
    workspace: Workspace,
) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        objects,
        arms,
        success,
        workspace,
        camera: Camera::oblique(),
        render: RenderSpec::default(),
        grasp_tolerance: DEFAULT_GRASP_TOLERANCE,
        tool: vec![],
        tool_offset: None,
        parse: ParseOptions::default(),
        synth: default_synth(),
        time_scale: 1.0,
    }
}

fn home() -> Pose {
    up(0.0, -0.35, 0.3)
}

fn pick_cube() -> TaskSpec {
    let cube = ObjectSpec {
        name: "cube".into(),
        parts: vec![Part::at(Shape::Box { half: [0.025; 3] }, 0.0, 0.0, 0.0)],
        rest: up(0.0, 0.0, 0.025),
        grasp: Some(Pose::identity()),
        demo_range: Range2::new([-0.18, -0.24], [0.18, 0.24]),
        eval_range: Range2::new([-0.15, -0.2], [0.15, 0.2]),
        eval_grid: [7, 9],
        eval_yaws: vec![0.0],
    };
    let arm = ArmSpec {
        home: home(),
        objects: vec![0],
        script: pick_script(0, Pose::identity(), 0.12, 0.15),
    };
    task(
        "pick_cube",
        vec![cube],
        vec![arm],
        vec![Success::Lifted {
            object: 0,
            height: 0.08,
        }],
        Workspace::rect([-0.2, -0.25], [0.2, 0.25]),
    )
}

fn button(name: &str, radius: f64) -> TaskSpec {
    let b = ObjectSpec {
        name: "button".into(),
        parts: vec![
            Part::at(
                Shape::Box {
                    half: [0.05, 0.05, 0.02],
                },
                0.0,
                0.0,
                0.0,
            ),
            Part::at(
                Shape::Cylinder {
                    radius,
                    height: 0.01,
                },
                0.0,
                0.0,
                0.025,
            ),
        ],
        rest: up(0.0, 0.0, 0.02),
        grasp: None,
        demo_range: Range2::new([-0.15, -0.2], [0.15, 0.2]),
        eval_range: Range2::new([-0.15, -0.2], [0.15, 0.2]),
        eval_grid: [21, 21],
        eval_yaws: vec![0.0],
    };
    let arm = ArmSpec {
        home: home(),
        objects: vec![0],
        script: vec![
            to_obj(0, up(0.0, 0.0, 0.12), 30, 0.0),
            to_obj(0, up(0.0, 0.0, 0.028), 20, 0.0),
            to_obj(0, up(0.0, 0.0, 0.028), 5, 0.0),
            to_obj(0, up(0.0, 0.0, 0.12), 20, 0.0),
        ],
    };
    task(
        name,
        vec![b],
        vec![arm],
        vec![Success::Pressed {
            object: 0,
            radius,
            height: 0.032,
        }],
        Workspace::rect([-0.2, -0.25], [0.2, 0.25]),
    )
}

fn peg_insert() -> TaskSpec {
    let grasp = up(0.0, 0.0, 0.05);
    let peg = ObjectSpec {
        name: "peg".into(),
        parts: vec![
            Part::at(
                Shape::Box {
                    half: [0.015, 0.015, 0.02],
                },
                0.0,
                0.0,
                0.02,
            ),
            Part::at(
                Shape::Box {
                    half: [0.03, 0.03, 0.01],
                },
                0.0,
                0.0,
                0.05,
            ),
        ],
        rest: Pose::identity(),
        grasp: Some(grasp),
        demo_range: Range2::new([-0.22, -0.12], [-0.06, 0.12]),
        eval_range: Range2::new([-0.2, -0.1], [-0.08, 0.1]),
        eval_grid: [3, 3],
        eval_yaws: vec![0.0],
    };
    let wall_x = Shape::Box {
        half: [0.015, 0.05, 0.02],
    };
    let wall_y = Shape::Box {
        half: [0.02, 0.015, 0.02],
    };
    let socket = ObjectSpec {
        name: "socket".into(),
        parts: vec![
            Part::at(wall_x, 0.035, 0.0, 0.02),
            Part::at(wall_x, -0.035, 0.0, 0.02),
            Part::at(wall_y, 0.0, 0.035, 0.02),
            Part::at(wall_y, 0.0, -0.035, 0.02),
        ],
        rest: Pose::identity(),
        grasp: None,
        demo_range: Range2::new([0.06, -0.12], [0.22, 0.12]),
        eval_range: Range2::new([0.08, -0.1], [0.2, 0.1]),
        eval_grid: [3, 3],
        eval_yaws: vec![0.0],
    };
    let mut script = pick_script(0, grasp, 0.1, 0.13);
    script.extend([
        to_obj(1, up(0.0, 0.0, 0.17), 30, 0.0),
        to_obj(1, grasp, 25, 0.0),
        to_obj(1, grasp, 5, 1.0),
    ]);
    let mut t = task(
        "peg_insert",
        vec![peg, socket],
        vec![ArmSpec {
            home: home(),
            objects: vec![0, 1],
            script,
        }],
        vec![Success::Inserted {
            object: 0,
            target: 1,
            tolerance: 0.01,
            height: 0.005,
        }],
        Workspace::rect([-0.25, -0.2], [0.25, 0.2]),
    );
    t.grasp_tolerance = 0.01;
    t
}

fn flower_vase() -> TaskSpec {
    let grasp = up(0.0, 0.0, 0.06);
    let flower = ObjectSpec {
        name: "flower".into(),
        parts: vec![
            Part::at(
                Shape::Cylinder {
                    radius: 0.008,
                    height: 0.12,
                },
                0.0,
                0.0,
                0.06,
            ),
            Part::at(Shape::Sphere { radius: 0.02 }, 0.0, 0.0, 0.13),
        ],
        rest: Pose::identity(),
        grasp: Some(grasp),
        demo_range: Range2::new([-0.22, -0.12], [-0.06, 0.12]),
        eval_range: Range2::new([-0.2, -0.1], [-0.08, 0.1]),
        eval_grid: [2, 2],
        eval_yaws: vec![0.0],
    };
    let vase = ObjectSpec {
        name: "vase".into(),
        parts: vec![
            Part::at(
                Shape::Cylinder {
                    radius: 0.035,
                    height: 0.1,
                },
                0.0,
                0.0,
                0.05,
            ),
            Part::at(
                Shape::Cone {
                    radius: 0.035,
                    height: 0.03,
                },
                0.0,
                0.0,
                0.115,
            ),
        ],
        rest: Pose::identity(),
        grasp: None,
        demo_range: Range2::new([0.06, -0.12], [0.22, 0.12]),
        eval_range: Range2::new([0.08, -0.1], [0.2, 0.1]),
        eval_grid: [2, 2],
        eval_yaws: vec![0.0],
    };
    let mut script = pick_script(0, grasp, 0.12, 0.2);
    script.extend([
        to_obj(1, up(0.0, 0.0, 0.26), 30, 0.0),
        to_obj(1, up(0.0, 0.0, 0.1), 25, 0.0),
        to_obj(1, up(0.0, 0.0, 0.1), 5, 1.0),
    ]);
    task(
        "flower_vase",
        vec![flower, vase],
        vec![ArmSpec {
            home: home(),
            objects: vec![0, 1],
            script,
        }],
        vec![Success::Inserted {
            object: 0,
            target: 1,
            tolerance: 0.015,
            height: 0.05,
        }],
        Workspace::rect([-0.25, -0.2], [0.25, 0.2]),
    )
}

fn fruit_basket() -> TaskSpec {
    let banana = ObjectSpec {
        name: "banana".into(),
        parts: vec![Part::at(
            Shape::Box {
                half: [0.075, 0.016, 0.016],
            },
            0.0,
            0.0,
            0.0,
        )],
        rest: up(0.0, 0.0, 0.016),
        grasp: Some(Pose::identity()),
        demo_range: Range2::new([-0.22, -0.12], [-0.08, 0.12]),
        eval_range: Range2::new([-0.2, -0.1], [-0.1, 0.1]),
        eval_grid: [2, 2],
        eval_yaws: vec![0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4],
    };
    let grasp = Pose::from_xyz_yaw(0.0, 0.0, 0.045, FRAC_PI_2);
    let basket = ObjectSpec {
        name: "basket".into(),
        parts: vec![
            Part::at(
                Shape::Box {
                    half: [0.06, 0.06, 0.03],
                },
                0.0,
                0.0,
                0.0,
            ),
            Part::at(
                Shape::Box {
                    half: [0.01, 0.06, 0.01],
                },
                0.0,
                0.0,
                0.045,
            ),
        ],
        rest: up(0.0, 0.0, 0.03),
        grasp: Some(grasp),
        demo_range: Range2::new([0.08, -0.05], [0.22, 0.05]),
        eval_range: Range2::new([0.1, -0.025], [0.2, 0.025]),
        eval_grid: [2, 2],
        eval_yaws: vec![0.0],
    };
    let mut t = task(
        "fruit_basket",
        vec![banana, basket],
        vec![
            ArmSpec {
                home: up(-0.25, -0.35, 0.3),
                objects: vec![0],
                script: pick_script(0, Pose::identity(), 0.12, 0.15),
            },
            ArmSpec {
                home: up(0.25, -0.35, 0.3),
                objects: vec![1],
                script: pick_script(1, grasp, 0.12, 0.15),
            },
        ],
        vec![
            Success::Lifted {
                object: 0,
                height: 0.08,
            },
            Success::Lifted {
                object: 1,
                height: 0.08,
            },
        ],
        Workspace::rect([-0.3, -0.2], [0.3, 0.2]),
    );
    t.camera = Camera::birds_eye();
    t
}

fn sauce_spread() -> TaskSpec {
    let crust = ObjectSpec {
        name: "crust".into(),
        parts: vec![Part::at(
            Shape::Cylinder {
                radius: 0.09,
                height: 0.01,
            },
            0.0,
            0.0,
            0.0,
        )],
        rest: up(0.0, 0.0, 0.005),
        grasp: None,
        demo_range: Range2::new([-0.12, -0.12], [0.12, 0.12]),
        eval_range: Range2::new([-0.1, -0.1], [0.1, 0.1]),
        eval_grid: [3, 3],
        eval_yaws: vec![0.0],
    };
    let spread = up(0.0, 0.0, 0.045);
    let mut t = task(
        "sauce_spread",
        vec![crust],
        vec![ArmSpec {
            home: home(),
            objects: vec![0],
            script: vec![
                to_obj(0, up(0.0, 0.0, 0.15), 30, 0.0),
                to_obj(0, spread, 20, 0.0),
                Step {
                    to: Target::Object {
                        object: 0,
                        offset: spread,
                    },
                    frames: 60,
                    hand: 0.0,
                    spiral: Some(Spiral {
                        turns: 2.5,
                        radius: 0.07,
                    }),
                },
            ],
        }],
        vec![Success::Coverage {
            object: 0,
            radius: 0.08,
            brush: 0.02,
            height: 0.03,
            fraction: 0.6,
        }],
        Workspace::rect([-0.2, -0.2], [0.2, 0.2]),
    );
    t.tool = vec![
        Part::at(
            Shape::Cylinder {
                radius: 0.004,
                height: 0.05,
            },
            0.0,
            0.0,
            -0.005,
        ),
        Part::at(Shape::Sphere { radius: 0.012 }, 0.0, 0.0, -0.03),
    ];
    t.tool_offset = Some([0.0, 0.0, -0.03]);
    t
}

/// Commanded pose and gripper value of every scripted frame of one arm.
pub fn script_actions(task: &TaskSpec, config: &[Pose], arm: usize) -> Vec<(Pose, f64)> {
    let spec = &task.arms[arm];
    let mut current = spec.home;
    let mut out = Vec::new();
    for step in &spec.script {
        let target = match &step.to {
            Target::Home => spec.home,
            Target::Object { object, offset } => config[*object].compose(offset),
            Target::World { pose } => *pose,
        };
        let n = ((step.frames as f64 * task.time_scale).round() as usize).max(1);
        for i in 1..=n {
            let s = i as f64 / n as f64;
            let pose = match step.spiral {
                Some(sp) => {
                    let a = 2.0 * PI * sp.turns * s;
                    target.compose(&up(sp.radius * s * a.cos(), sp.radius * s * a.sin(), 0.0))
                }
                None => Pose::interpolate(&current, &target, s),
            };
            out.push((pose, step.hand));
        }
        current = out.last().map(|a| a.0).unwrap_or(current);
    }
    out
}

/// Per-frame noise seed derived from a demo-level seed.
pub fn frame_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(t as u64)
}

/// Runs the task script from `config`, recording observations with
/// ground-truth labels, and parses the result into segments.
pub fn scripted_demo(task: &TaskSpec, config: &[Pose], noise_seed: u64) -> Result<Demonstration> {
    scripted_demo_with(task, &Renderer::new(task), config, noise_seed)
}

pub fn scripted_demo_with(
    task: &TaskSpec,
    renderer: &Renderer,
    config: &[Pose],
    noise_seed: u64,
) -> Result<Demonstration> {
    let mut world = World::new(task, config)?;
    let mut scripts: Vec<Vec<(Pose, f64)>> = (0..task.arms.len())
        .map(|a| script_actions(task, config, a))
        .collect();
    let len = scripts.iter().map(Vec::len).max().unwrap_or(0);
    for (a, s) in scripts.iter_mut().enumerate() {
        let last = s.last().copied().unwrap_or((task.arms[a].home, 1.0));
        s.resize(len, last);
    }
    let mut frames = Vec::with_capacity(len);
    for t in 0..len {
        let opts = RenderOptions::from_spec(&task.render, frame_seed(noise_seed, t));
        let cloud = renderer.render(&world, &task.camera, &opts);
        let actions: Vec<(Pose, f64)> = scripts.iter().map(|s| s[t]).collect();
        let arms = actions
            .iter()
            .enumerate()
            .map(|(a, &(action, hand))| ArmFrame {
                state: world.ee[a],
                hand_state: vec![world.hand[a]],
                action,
                hand_action: vec![hand],
            })
            .collect();
        frames.push(Frame { cloud, arms });
        world.step(&actions);
    }
    let mut demo = Demonstration {
        task: task.name.clone(),
        frames,
        init_config: config.to_vec(),
        object_names: task.object_names(),
        segments: None,
        camera: task.camera.pose(),
        arm_object_map: task.arm_object_map(),
    };
    demo.segments = Some(parser::parse(&demo, &task.parse_options())?);
    Ok(demo)
}
