//! Spatial generalization grids with a nearest-demonstration replay policy,
//! visual mismatch curves and saturation sweeps.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::ActionPlan;
use crate::demo_store::Demonstration;
use crate::error::{Error, Result};
use crate::pipeline::Generator;
use crate::pointcloud::{
    chamfer, chamfer_indexed, mean_spacing, transform_labeled, LabeledCloud, NnIndex,
};
use crate::se3::{ConfigDelta, Pose};
use crate::sim::tasks::frame_seed;
use crate::sim::{execute_plan, ExecOptions, Range2, RenderOptions, Renderer, TaskSpec, World};

pub const DEFAULT_TRIALS: usize = 5;

/// Object-labelled points, or the whole cloud when no object is visible.
fn object_points(cloud: &LabeledCloud) -> Vec<[f32; 3]> {
    let pts: Vec<[f32; 3]> = cloud
        .points
        .iter()
        .zip(&cloud.labels)
        .filter(|(_, l)| **l >= 0)
        .map(|(p, _)| *p)
        .collect();
    if pts.is_empty() {
        cloud.points.clone()
    } else {
        pts
    }
}

fn objects_only(cloud: &LabeledCloud) -> LabeledCloud {
    cloud.filter(|i| cloud.labels[i] >= 0)
}

/// Replays the stored demo whose first observation is closest (chamfer) to
/// the current one, compared on object points. It has no ability to interpolate between demos.
pub struct NnReplayPolicy {
    clouds: Vec<Vec<[f32; 3]>>,
    indices: Vec<NnIndex>,
    plans: Vec<ActionPlan>,
}

impl NnReplayPolicy {
    pub fn new(demos: &[Demonstration]) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut clouds = Vec::with_capacity(demos.len());
        let mut indices = Vec::with_capacity(demos.len());
        for d in demos {
            let pts = object_points(&d.frames.first().ok_or(Error::EmptyDataset)?.cloud);
            indices.push(NnIndex::new(&pts).ok_or(Error::EmptyCloud)?);
            clouds.push(pts);
        }
        Ok(Self {
            clouds,
            indices,
            plans: demos.iter().map(ActionPlan::from_demo).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    /// Index of the nearest demo; ties go to the lower index.
    pub fn select(&self, observation: &LabeledCloud) -> Result<usize> {
        let obs = object_points(observation);
        let io = NnIndex::new(&obs).ok_or(Error::EmptyCloud)?;
        let mut best = (0, f64::INFINITY);
        for (i, (c, ic)) in self.clouds.iter().zip(&self.indices).enumerate() {
            let d = chamfer_indexed(&obs, &io, c, ic);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }

    pub fn plan(&self, i: usize) -> &ActionPlan {
        &self.plans[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub x: f64,
    pub y: f64,
    pub success_rate: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub cells: Vec<Cell>,
}

const HEATMAP_HEADER: &str = "x,y,success_rate,trials";

impl Heatmap {
    pub fn mean(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().map(|c| c.success_rate).sum::<f64>() / self.cells.len() as f64
    }

    /// Cells with a success rate above zero.
    pub fn region(&self) -> Vec<bool> {
        self.cells.iter().map(|c| c.success_rate > 0.0).collect()
    }

    /// Cell-wise `self >= other` over the same grid.
    pub fn dominates(&self, other: &Heatmap) -> bool {
        self.cells.len() == other.cells.len()
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| a.success_rate >= b.success_rate)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HEATMAP_HEADER);
        s.push('\n');
        for c in &self.cells {
            let _ = writeln!(s, "{},{},{},{}", c.x, c.y, c.success_rate, c.trials);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: String| Error::InvalidArgument(format!("heatmap csv: {m}"));
        if lines.next() != Some(HEATMAP_HEADER) {
            return Err(bad("missing header".into()));
        }
        let cells = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 4 {
                    return Err(bad(format!("expected 4 fields in `{l}`")));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
                Ok(Cell {
                    x: num(f[0])?,
                    y: num(f[1])?,
                    success_rate: num(f[2])?,
                    trials: f[3].parse().map_err(|e| bad(format!("{}: {e}", f[3])))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cells })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Binary PPM raster, one `scale` by `scale` block per cell, red (0) to
    /// green (1), with +y up.
    pub fn to_ppm(&self, scale: usize) -> Vec<u8> {
        let mut xs: Vec<f64> = self.cells.iter().map(|c| c.x).collect();
        let mut ys: Vec<f64> = self.cells.iter().map(|c| c.y).collect();
        for v in [&mut xs, &mut ys] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let scale = scale.max(1);
        let (w, h) = (xs.len() * scale, ys.len() * scale);
        let mut img = vec![40u8; w * h * 3];
        for c in &self.cells {
            let i = xs.partition_point(|v| *v < c.x);
            let j = ys.len() - 1 - ys.partition_point(|v| *v < c.y);
            let r = c.success_rate.clamp(0.0, 1.0);
            let rgb = [
                ((1.0 - r) * 255.0).round() as u8,
                (r * 255.0).round() as u8,
                0,
            ];
            for dy in 0..scale {
                for dx in 0..scale {
                    let o = ((j * scale + dy) * w + i * scale + dx) * 3;
                    img[o..o + 3].copy_from_slice(&rgb);
                }
            }
        }
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        out.extend(img);
        out
    }
}

/// First-frame observation of `config` with the arms at home.
pub fn observe(
    task: &TaskSpec,
    renderer: &Renderer,
    config: &[Pose],
    noise_seed: u64,
) -> Result<LabeledCloud> {
    let world = World::new(task, config)?;
    Ok(renderer.render(
        &world,
        &task.camera,
        &RenderOptions::from_spec(&task.render, noise_seed),
    ))
}

/// Success rate per configuration over `trials` noisy observations. Cells
/// outside the reachable workspace record zero. The heatmap coordinates are
/// those of the first object.
pub fn grid_eval(
    policy: &NnReplayPolicy,
    task: &TaskSpec,
    configs: &[Vec<Pose>],
    trials: usize,
    seed: u64,
) -> Result<Heatmap> {
    let trials = trials.max(1);
    let renderer = Renderer::new(task);
    let cells = configs
        .par_iter()
        .enumerate()
        .map(|(i, config)| {
            let p = config.first().map(|p| p.position).unwrap_or_default();
            let mut wins = 0usize;
            if task.check_config(config).is_ok() {
                for t in 0..trials {
                    let obs = observe(task, &renderer, config, frame_seed(seed, i * trials + t))?;
                    let pick = policy.select(&obs)?;
                    if execute_plan(task, config, policy.plan(pick), &ExecOptions::default())?
                        .success
                    {
                        wins += 1;
                    }
                }
            }
            Ok(Cell {
                x: p.x,
                y: p.y,
                success_rate: wins as f64 / trials as f64,
                trials,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Heatmap { cells })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchPoint {
    pub displacement: f64,
    pub chamfer: f64,
}

/// Chamfer distance over visible object surface samples between the rigidly
/// edited source view and what the camera sees after moving every object by
/// each displacement. Downsampling and sensor noise are left out, so the
/// curve reflects viewpoint change only. Also returns the sampling resolution
/// (mean spacing of the source object samples).
pub fn mismatch_curve(
    task: &TaskSpec,
    source: &[Pose],
    displacements: &[[f64; 2]],
    visibility: bool,
) -> Result<(Vec<MismatchPoint>, f64)> {
    let renderer = Renderer::new(task);
    let view = |config: &[Pose]| -> Result<LabeledCloud> {
        let world = World::new(task, config)?;
        Ok(objects_only(&renderer.visible(
            &world,
            &task.camera,
            visibility,
        )))
    };
    let base = view(source)?;
    let resolution = mean_spacing(&base)?;
    let points = displacements
        .par_iter()
        .map(|d| {
            let shift = Pose::from_translation(d[0], d[1], 0.0);
            let moved: Vec<Pose> = source.iter().map(|p| shift.compose(p)).collect();
            let deltas = ConfigDelta::from_deltas(vec![shift; source.len()]);
            let edited = transform_labeled(&base, &deltas, &Pose::identity())?;
            Ok(MismatchPoint {
                displacement: d[0].hypot(d[1]),
                chamfer: chamfer(&edited, &view(&moved)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((points, resolution))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub level: f64,
    pub demos: usize,
    pub rejected: usize,
    pub success_rate: f64,
}

/// One dataset per level, each scored by `grid_eval` on the same configs.
/// Targets the generator rejects are counted, not emitted.
pub fn saturation_sweep(
    generator: &Generator,
    task: &TaskSpec,
    levels: &[(f64, Vec<Vec<Pose>>)],
    eval: &[Vec<Pose>],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if levels.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::InvalidArgument("sweep levels must be sorted".into()));
    }
    levels
        .iter()
        .map(|(level, targets)| {
            let results: Vec<Result<Demonstration>> = targets
                .par_iter()
                .map(|t| generator.generate(t).map(|r| r.0))
                .collect();
            let mut demos = Vec::new();
            let mut rejected = 0;
            for r in results {
                match r {
                    Ok(d) => demos.push(d),
                    Err(Error::UnreachableTarget { .. }) => rejected += 1,
                    Err(e) => return Err(e),
                }
            }
            let policy = NnReplayPolicy::new(&demos)?;
            let heat = grid_eval(&policy, task, eval, trials, seed)?;
            Ok(SweepPoint {
                level: *level,
                demos: demos.len(),
                rejected,
                success_rate: heat.mean(),
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("level,demos,rejected,success_rate\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            p.level, p.demos, p.rejected, p.success_rate
        );
    }
    s
}

/// Coverage levels for a single-object task: lattices of fixed spacing over
/// squares of growing side centered on `center`.
pub fn coverage_levels(
    task: &TaskSpec,
    center: [f64; 2],
    sides: &[f64],
    spacing: f64,
) -> Vec<(f64, Vec<Vec<Pose>>)> {
    sides
        .iter()
        .map(|&s| {
            let n = (s / spacing + 1e-9).floor() as usize + 1;
            let half = (n - 1) as f64 * spacing / 2.0;
            let r = Range2::new(
                [center[0] - half, center[1] - half],
                [center[0] + half, center[1] + half],
            );
            let configs = r
                .grid(n, n)
                .into_iter()
                .map(|p| vec![task.objects[0].place(p[0], p[1], 0.0)])
                .collect();
            (s, configs)
        })
        .collect()
}

/// Density levels for a single-object task: `n` by `n` lattices over `range`.
pub fn density_levels(
    task: &TaskSpec,
    range: &Range2,
    counts: &[usize],
) -> Vec<(f64, Vec<Vec<Pose>>)> {
    counts
        .iter()
        .map(|&n| {
            let configs = range
                .grid(n, n)
                .into_iter()
                .map(|p| vec![task.objects[0].place(p[0], p[1], 0.0)])
                .collect();
            (n as f64, configs)
        })
        .collect()
}

#[cfg(test)]
mod tests;
