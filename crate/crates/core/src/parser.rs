//! Splitting a source demonstration into alternating motion and skill segments.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::demo_store::Demonstration;
use crate::error::{Error, Result};
use crate::pointcloud::{to_v, LabeledCloud};
use crate::se3::Pose;

pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.10;
pub const DEFAULT_HYSTERESIS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Motion,
    Skill,
}

/// Frames `start..end` of one arm's trajectory. A motion segment carries the
/// object its following skill handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub kind: SegmentKind,
    pub object: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentIndex {
    pub arms: Vec<Vec<Segment>>,
}

impl SegmentIndex {
    pub fn skills(&self, arm: usize) -> impl Iterator<Item = &Segment> {
        self.arms[arm]
            .iter()
            .filter(|s| s.kind == SegmentKind::Skill)
    }

    /// The arm handling `object` and its skill segment.
    pub fn skill_of(&self, object: usize) -> Option<(usize, &Segment)> {
        self.arms.iter().enumerate().find_map(|(a, list)| {
            list.iter()
                .find(|s| s.kind == SegmentKind::Skill && s.object == object)
                .map(|s| (a, s))
        })
    }

    pub fn segment_at(&self, arm: usize, t: usize) -> Option<&Segment> {
        self.arms[arm].iter().find(|s| s.contains(t))
    }

    /// Length of the trajectory the index covers.
    pub fn frames(&self) -> usize {
        self.arms
            .iter()
            .filter_map(|l| l.last().map(|s| s.end))
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParseOptions {
    pub threshold: f64,
    pub hysteresis: usize,
    /// Contact reference point in the end-effector frame, for tool-in-hand tasks.
    pub tool_offset: Option<[f64; 3]>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_CONTACT_THRESHOLD,
            hysteresis: DEFAULT_HYSTERESIS,
            tool_offset: None,
        }
    }
}

pub fn object_center(cloud: &LabeledCloud, object: usize) -> Result<Vector3<f64>> {
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        if l == object as i32 {
            sum += to_v(p);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoSuchObject(object));
    }
    Ok(sum / n as f64)
}

pub fn in_contact(ee: &Pose, center: &Vector3<f64>, threshold: f64) -> bool {
    (ee.position - center).norm() <= threshold
}

/// Flips runs shorter than `min_run` into their surroundings, shortest first,
/// until every run is long enough or a single run remains.
pub fn smooth_hysteresis(raw: &[bool], min_run: usize) -> Vec<bool> {
    let mut v = raw.to_vec();
    loop {
        let runs = runs_of(&v);
        if runs.len() <= 1 {
            return v;
        }
        let Some(&(s, e, val)) = runs
            .iter()
            .filter(|(s, e, _)| e - s < min_run)
            .min_by_key(|(s, e, _)| (e - s, *s))
        else {
            return v;
        };
        v[s..e].iter_mut().for_each(|x| *x = !val);
    }
}

fn runs_of(v: &[bool]) -> Vec<(usize, usize, bool)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for t in 1..=v.len() {
        if t == v.len() || v[t] != v[start] {
            runs.push((start, t, v[start]));
            start = t;
        }
    }
    runs
}

/// Per-frame contact flags of one arm against one object center, smoothed.
pub fn contact_profile(actions: &[Pose], center: &Vector3<f64>, opts: &ParseOptions) -> Vec<bool> {
    let raw: Vec<bool> = actions
        .iter()
        .map(|a| in_contact(&contact_point(a, opts), center, opts.threshold))
        .collect();
    smooth_hysteresis(&raw, opts.hysteresis.max(1))
}

fn contact_point(a: &Pose, opts: &ParseOptions) -> Pose {
    match opts.tool_offset {
        Some([x, y, z]) => a.compose(&Pose::from_translation(x, y, z)),
        None => *a,
    }
}

pub fn parse(demo: &Demonstration, opts: &ParseOptions) -> Result<SegmentIndex> {
    if !(opts.threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "contact threshold must be positive, got {}",
            opts.threshold
        )));
    }
    if demo.num_objects() == 0 {
        return Err(Error::InvalidArgument(
            "demonstration has no objects".into(),
        ));
    }
    let frame0 = &demo.frames[0].cloud;
    let arms = (0..demo.num_arms())
        .map(|arm| parse_arm(&demo.actions(arm), &demo.objects_of_arm(arm), frame0, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentIndex { arms })
}

fn parse_arm(
    actions: &[Pose],
    objects: &[usize],
    frame0: &LabeledCloud,
    opts: &ParseOptions,
) -> Result<Vec<Segment>> {
    let l = actions.len();
    let profiles = objects
        .iter()
        .map(|&k| Ok(contact_profile(actions, &object_center(frame0, k)?, opts)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(2 * objects.len());
    let mut cursor = 0usize;
    for (i, &k) in objects.iter().enumerate() {
        let prof = &profiles[i];
        let Some(start) = (cursor..l).find(|&t| prof[t]) else {
            return Err(Error::NoContactDetected(k));
        };
        for (j, later) in profiles.iter().enumerate().skip(i + 1) {
            if (cursor..start).any(|t| later[t] && !prof[t]) {
                return Err(Error::NonSequentialContact {
                    expected: k,
                    found: objects[j],
                });
            }
        }
        let mut end = (start..l).find(|&t| !prof[t]).unwrap_or(l);
        if let Some(next) = profiles.get(i + 1) {
            if let Some(t) = (start + 1..end).find(|&t| next[t] && !next[t - 1]) {
                end = t;
            }
        } else {
            end = l;
        }
        out.push(Segment {
            kind: SegmentKind::Motion,
            object: k,
            start: cursor,
            end: start,
        });
        out.push(Segment {
            kind: SegmentKind::Skill,
            object: k,
            start,
            end,
        });
        cursor = end;
    }
    Ok(out)
}
