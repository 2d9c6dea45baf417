//! Parse, adapt and synthesize: one source demonstration to many targets.

use std::time::Instant;

use rayon::prelude::*;

use crate::adapter::{adapt_bimanual, adapt_trajectory, ActionPlan, AdaptOptions};
use crate::demo_store::{Demonstration, GenerationTiming};
use crate::error::{Error, Result};
use crate::parser::{parse, ParseOptions};
use crate::se3::Pose;
use crate::sim::TaskSpec;
use crate::synth::{synthesize_demo, PreparedDemo, SynthOptions};

/// A prepared source demonstration with its adaptation settings.
#[derive(Clone, Debug)]
pub struct Generator {
    pub prepared: PreparedDemo,
    pub adapt: AdaptOptions,
}

impl Generator {
    /// Parses `source` if it carries no segment index yet.
    pub fn new(
        mut source: Demonstration,
        parse_opts: &ParseOptions,
        synth: &SynthOptions,
        adapt: AdaptOptions,
    ) -> Result<Self> {
        if source.segments.is_none() {
            source.segments = Some(parse(&source, parse_opts)?);
        }
        Ok(Self {
            prepared: PreparedDemo::new(source, synth)?,
            adapt,
        })
    }

    pub fn for_task(task: &TaskSpec, source: Demonstration) -> Result<Self> {
        let adapt = AdaptOptions {
            workspace: Some(task.workspace.clone()),
            ..AdaptOptions::default()
        };
        Self::new(source, &task.parse_options(), &task.synth, adapt)
    }

    pub fn source(&self) -> &Demonstration {
        &self.prepared.demo
    }

    pub fn plan(&self, targets: &[Pose]) -> Result<ActionPlan> {
        let demo = &self.prepared.demo;
        if demo.num_arms() == 2 {
            adapt_bimanual(demo, &self.prepared.seg, targets, &self.adapt)
        } else {
            adapt_trajectory(demo, &self.prepared.seg, targets, &self.adapt)
        }
    }

    pub fn generate(&self, targets: &[Pose]) -> Result<(Demonstration, ActionPlan)> {
        let plan = self.plan(targets)?;
        let demo = synthesize_demo(&self.prepared, targets, &plan)?;
        Ok((demo, plan))
    }
}

pub fn generate_one(generator: &Generator, targets: &[Pose]) -> Result<Demonstration> {
    generator.generate(targets).map(|(d, _)| d)
}

/// One requested output: which source to adapt and the target configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub source: usize,
    pub targets: Vec<Pose>,
}

pub struct BatchResult {
    pub outputs: Vec<Result<Demonstration>>,
    pub timing: GenerationTiming,
}

/// Runs every job on a pool of `workers` threads; results keep job order.
pub fn generate_batch(
    generators: &[Generator],
    jobs: &[Job],
    workers: usize,
) -> Result<BatchResult> {
    if generators.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(j) = jobs.iter().find(|j| j.source >= generators.len()) {
        return Err(Error::InvalidArgument(format!(
            "job refers to missing source {}",
            j.source
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let start = Instant::now();
    let outputs: Vec<Result<Demonstration>> = pool.install(|| {
        jobs.par_iter()
            .map(|j| generate_one(&generators[j.source], &j.targets))
            .collect()
    });
    let total = start.elapsed().as_secs_f64();
    let ok: Vec<&Demonstration> = outputs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let frames: usize = ok.iter().map(|d| d.len()).sum();
    let timing = GenerationTiming {
        total_seconds: total,
        per_trajectory_seconds: if ok.is_empty() {
            0.0
        } else {
            total / ok.len() as f64
        },
        per_frame_seconds: if frames == 0 {
            0.0
        } else {
            total / frames as f64
        },
    };
    Ok(BatchResult { outputs, timing })
}
