use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use demogen_core::adapter::ActionPlan;
use demogen_core::augment::{
    adr_augment, obstacle_augment, plan_dataset, AdrSpec, GenerationSpec, ObstacleSpec, Primitive,
};
use demogen_core::demo_store::{
    self, dataset_containers, validate, DatasetManifest, RejectedTarget, FORMAT_VERSION,
};
use demogen_core::evaluation::{grid_eval, NnReplayPolicy, DEFAULT_TRIALS};
use demogen_core::pipeline::{generate_batch, Generator};
use demogen_core::sim::{
    builtin, execute_plan, scripted_demo, Disturbance, ExecOptions, PlacedPart, TaskSpec,
};
use demogen_core::{Demonstration, Pose};

use crate::config::{
    config_hash, AugmentConfig, CaptureConfig, EvaluateConfig, GenerateConfig, ValidateConfig,
};

/// What a command reports: a JSON summary, and whether every item succeeded.
pub struct Report {
    pub summary: Value,
    pub complete: bool,
}

/// Sidecar with what a replay needs beyond the actions.
pub const REPLAY_FILE: &str = "replay.json";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayOptions {
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default)]
    pub obstacles: Vec<Primitive>,
}

impl ReplayOptions {
    fn exec(&self) -> ExecOptions {
        ExecOptions {
            disturbances: self.disturbances.clone(),
            obstacles: self
                .obstacles
                .iter()
                .map(|p| PlacedPart::new(p.shape, p.pose))
                .collect(),
        }
    }
}

fn require<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| anyhow!("missing required setting `{name}`"))
}

/// A built-in task name, or a path to a task JSON file.
pub fn load_task(name: &str) -> Result<TaskSpec> {
    let p = Path::new(name);
    if p.extension().is_some_and(|e| e == "json") || p.is_file() {
        return TaskSpec::load(p).with_context(|| format!("loading task {name}"));
    }
    Ok(builtin(name)?)
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = workers.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| anyhow!(e))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn read_dataset(dir: &Path) -> Result<(Vec<PathBuf>, Option<DatasetManifest>)> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let manifest = dir
        .join(demo_store::DATASET_MANIFEST)
        .exists()
        .then(|| DatasetManifest::read(dir))
        .transpose()?;
    let containers = dataset_containers(dir)?;
    if containers.is_empty() {
        bail!("no demonstrations in {}", dir.display());
    }
    Ok((containers, manifest))
}

fn container_name(i: usize) -> String {
    format!("demo_{i:05}")
}

fn write_dataset(
    out: &Path,
    task: &str,
    demos: &[(usize, Demonstration)],
    manifest: DatasetManifest,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = DatasetManifest {
        version: FORMAT_VERSION,
        task: task.to_string(),
        demos: Vec::with_capacity(demos.len()),
        ..manifest
    };
    for (i, d) in demos {
        let name = container_name(*i);
        demo_store::write(d, out.join(&name))?;
        manifest.demos.push(name);
    }
    manifest.write(out)?;
    Ok(manifest)
}

fn resolve_task(flag: &Option<String>, fallback: Option<&str>) -> Result<TaskSpec> {
    match flag.as_deref().or(fallback) {
        Some(t) => load_task(t),
        None => bail!("no task given and none recorded in the dataset"),
    }
}

pub fn capture(cfg: &CaptureConfig) -> Result<Report> {
    let task = load_task(&require(&cfg.task, "task")?)?;
    let out = require(&cfg.out, "out")?;
    let replays = cfg.replays.unwrap_or(0);
    let seed = cfg.seed.unwrap_or(0);
    let config: Vec<Pose> = match &cfg.placement {
        Some(p) => {
            if p.len() != task.objects.len() {
                bail!(
                    "placement lists {} objects, task {} has {}",
                    p.len(),
                    task.name,
                    task.objects.len()
                );
            }
            p.iter()
                .zip(&task.objects)
                .map(|(c, o)| match c.as_slice() {
                    [x, y] => Ok(o.place(*x, *y, 0.0)),
                    [x, y, w] => Ok(o.place(*x, *y, *w)),
                    _ => bail!("placements are [x, y] or [x, y, yaw]"),
                })
                .collect::<Result<_>>()?
        }
        None => task.default_config(),
    };
    let demos = (0..=replays)
        .map(|r| {
            Ok((
                r,
                scripted_demo(&task, &config, seed.wrapping_add(r as u64))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let hash = config_hash(cfg, &[])?;
    let manifest = write_dataset(
        &out,
        &task.name,
        &demos,
        DatasetManifest {
            spec_hash: hash.clone(),
            ..Default::default()
        },
    )?;
    info!("captured {} demonstrations of {}", demos.len(), task.name);
    Ok(Report {
        summary: json!({
            "command": "capture",
            "task": task.name,
            "demos": manifest.demos,
            "frames": demos[0].1.len(),
            "config_hash": hash,
        }),
        complete: true,
    })
}

pub fn generate(cfg: &GenerateConfig) -> Result<Report> {
    let spec_path = require(&cfg.spec, "spec")?;
    let spec = GenerationSpec::load(&spec_path)
        .with_context(|| format!("loading spec {}", spec_path.display()))?;
    let sources = require(&cfg.sources, "sources")?;
    let out = require(&cfg.out, "out")?;
    let (containers, manifest) = read_dataset(&sources)?;
    let fallback = spec.task.clone().or(manifest.map(|m| m.task));
    let task = resolve_task(&cfg.task, fallback.as_deref())?;
    let n = spec.sources();
    if containers.len() < n {
        bail!(
            "spec asks for {n} sources, {} has {}",
            sources.display(),
            containers.len()
        );
    }
    if spec.adr.is_some() || spec.obstacle.is_some() {
        warn!("adr and obstacle settings are applied by the augment command");
    }
    let generators = containers[..n]
        .iter()
        .map(|c| {
            let demo = demo_store::read(c)?;
            let mut g = Generator::for_task(&task, demo)?;
            if let Some(p) = &spec.planner {
                g.adapt.planner = p.clone();
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs = plan_dataset(&spec, &task)?;
    let workers = cfg.workers.unwrap_or_else(default_workers);
    info!(
        "generating {} targets from {n} sources on {workers} workers",
        jobs.len()
    );
    let batch = generate_batch(&generators, &jobs, workers)?;
    let mut demos = Vec::new();
    let mut rejected = Vec::new();
    for (i, r) in batch.outputs.into_iter().enumerate() {
        match r {
            Ok(d) => {
                let report = validate(&d);
                if report.is_valid() {
                    demos.push((i, d));
                } else {
                    rejected.push(RejectedTarget {
                        index: i,
                        reason: format!("invalid output: {}", report.violations.join("; ")),
                    });
                }
            }
            Err(e) => rejected.push(RejectedTarget {
                index: i,
                reason: e.to_string(),
            }),
        }
    }
    for r in &rejected {
        warn!("target {} rejected: {}", r.index, r.reason);
    }
    let hash = config_hash(cfg, &[&spec_path])?;
    write_dataset(
        &out,
        &task.name,
        &demos,
        DatasetManifest {
            spec_hash: hash.clone(),
            rejected: rejected.clone(),
            timing: Some(batch.timing.clone()),
            ..Default::default()
        },
    )?;
    Ok(Report {
        summary: json!({
            "command": "generate",
            "task": task.name,
            "requested": jobs.len(),
            "generated": demos.len(),
            "rejected": rejected,
            "timing": batch.timing,
            "config_hash": hash,
        }),
        complete: demos.len() == jobs.len(),
    })
}

fn read_replays(dir: &Path) -> Result<BTreeMap<String, ReplayOptions>> {
    let p = dir.join(REPLAY_FILE);
    if !p.exists() {
        return Ok(BTreeMap::new());
    }
    let text = std::fs::read_to_string(&p)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

pub fn validate_dataset(cfg: &ValidateConfig) -> Result<Report> {
    let dir = require(&cfg.dataset, "dataset")?;
    let (containers, manifest) = read_dataset(&dir)?;
    let replays = read_replays(&dir)?;
    let task = resolve_task(&cfg.task, manifest.as_ref().map(|m| m.task.as_str()))?;
    let check = |c: &PathBuf| -> std::result::Result<(), String> {
        let demo = demo_store::read(c).map_err(|e| format!("unreadable: {e}"))?;
        let report = validate(&demo);
        if !report.is_valid() {
            return Err(format!("invalid: {}", report.violations.join("; ")));
        }
        let name = c
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let opts = replays
            .get(&name)
            .map(ReplayOptions::exec)
            .unwrap_or_default();
        let outcome = execute_plan(
            &task,
            &demo.init_config,
            &ActionPlan::from_demo(&demo),
            &opts,
        )
        .map_err(|e| format!("replay error: {e}"))?;
        if outcome.collided {
            return Err("collision during replay".into());
        }
        if !outcome.success {
            return Err("task not accomplished".into());
        }
        Ok(())
    };
    let results: Vec<_> = pool(cfg.workers)?.install(|| containers.par_iter().map(check).collect());
    let failures: Vec<Value> = containers
        .iter()
        .zip(&results)
        .filter_map(|(c, r)| {
            r.as_ref()
                .err()
                .map(|e| json!({ "demo": c.display().to_string(), "reason": e }))
        })
        .collect();
    let ok = results.len() - failures.len();
    Ok(Report {
        summary: json!({
            "command": "validate",
            "task": task.name,
            "total": results.len(),
            "succeeded": ok,
            "success_fraction": ok as f64 / results.len() as f64,
            "failures": failures,
        }),
        complete: failures.is_empty(),
    })
}

pub fn evaluate(cfg: &EvaluateConfig) -> Result<Report> {
    let dir = require(&cfg.dataset, "dataset")?;
    let out = require(&cfg.out, "out")?;
    let (containers, manifest) = read_dataset(&dir)?;
    let task = resolve_task(&cfg.task, manifest.as_ref().map(|m| m.task.as_str()))?;
    let demos = containers
        .iter()
        .map(demo_store::read)
        .collect::<demogen_core::Result<Vec<_>>>()?;
    let policy = NnReplayPolicy::new(&demos)?;
    let configs = match &cfg.grid {
        Some(g) => GenerationSpec::load(g)
            .with_context(|| format!("loading grid {}", g.display()))?
            .configurations(&task)?,
        None => task.eval_configs(),
    };
    let trials = cfg.trials.unwrap_or(DEFAULT_TRIALS);
    let seed = cfg.seed.unwrap_or(0);
    let heat = pool(cfg.workers)?.install(|| grid_eval(&policy, &task, &configs, trials, seed))?;
    heat.write_csv(&out)?;
    if let Some(p) = &cfg.ppm {
        std::fs::write(p, heat.to_ppm(8))?;
    }
    let inputs: Vec<&Path> = cfg.grid.iter().map(PathBuf::as_path).collect();
    Ok(Report {
        summary: json!({
            "command": "evaluate",
            "task": task.name,
            "demos": demos.len(),
            "cells": heat.cells.len(),
            "mean_success": heat.mean(),
            "out": out.display().to_string(),
            "config_hash": config_hash(cfg, &inputs)?,
        }),
        complete: true,
    })
}

enum Extension {
    Adr(AdrSpec),
    Obstacle(ObstacleSpec),
}

pub fn augment(cfg: &AugmentConfig) -> Result<Report> {
    let dir = require(&cfg.dataset, "dataset")?;
    let out = require(&cfg.out, "out")?;
    let (ext, spec_path) = match (&cfg.adr, &cfg.obstacle) {
        (Some(p), None) => (
            Extension::Adr(
                serde_json::from_str(&std::fs::read_to_string(p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
            ),
            p,
        ),
        (None, Some(p)) => (
            Extension::Obstacle(
                serde_json::from_str(&std::fs::read_to_string(p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
            ),
            p,
        ),
        _ => bail!("give exactly one of `adr` or `obstacle`"),
    };
    let (containers, manifest) = read_dataset(&dir)?;
    let task = resolve_task(&cfg.task, manifest.as_ref().map(|m| m.task.as_str()))?;
    let seed = cfg.seed.unwrap_or(0);
    let one = |i: usize, c: &PathBuf| -> demogen_core::Result<(Demonstration, ReplayOptions)> {
        let demo = demo_store::read(c)?;
        let targets = demo.init_config.clone();
        let g = Generator::for_task(&task, demo)?;
        match &ext {
            Extension::Adr(spec) => {
                let plan = g.plan(&targets)?;
                let r = adr_augment(&g, &targets, &plan, spec, Some(&task.workspace))?;
                Ok((
                    r.demo,
                    ReplayOptions {
                        disturbances: r.disturbances,
                        ..Default::default()
                    },
                ))
            }
            Extension::Obstacle(spec) => {
                let (d, _, _) = obstacle_augment(&g, &targets, spec, seed.wrapping_add(i as u64))?;
                Ok((
                    d,
                    ReplayOptions {
                        obstacles: spec.primitives.clone(),
                        ..Default::default()
                    },
                ))
            }
        }
    };
    let results: Vec<_> = pool(cfg.workers)?.install(|| {
        containers
            .par_iter()
            .enumerate()
            .map(|(i, c)| one(i, c))
            .collect()
    });
    let mut demos = Vec::new();
    let mut replays = BTreeMap::new();
    let mut rejected = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((d, rep)) => {
                replays.insert(container_name(i), rep);
                demos.push((i, d));
            }
            Err(e) => {
                warn!("demo {i} not augmented: {e}");
                rejected.push(RejectedTarget {
                    index: i,
                    reason: e.to_string(),
                });
            }
        }
    }
    let hash = config_hash(cfg, &[spec_path])?;
    write_dataset(
        &out,
        &task.name,
        &demos,
        DatasetManifest {
            spec_hash: hash.clone(),
            rejected: rejected.clone(),
            ..Default::default()
        },
    )?;
    std::fs::write(out.join(REPLAY_FILE), serde_json::to_vec_pretty(&replays)?)?;
    Ok(Report {
        summary: json!({
            "command": "augment",
            "task": task.name,
            "augmented": demos.len(),
            "rejected": rejected,
            "config_hash": hash,
        }),
        complete: rejected.is_empty(),
    })
}
