//! Labeled point clouds and the preprocessing/editing primitives that work on them.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::se3::{ConfigDelta, Pose};

/// End-effector points, or points not yet assigned to an object.
pub const LABEL_EE: i32 = -1;
pub const LABEL_BACKGROUND: i32 = -2;
pub const LABEL_OBSTACLE: i32 = -3;

pub const DEFAULT_DBSCAN_EPS: f64 = 0.02;
pub const DEFAULT_DBSCAN_MIN_PTS: usize = 5;
pub const DEFAULT_PROXIMITY_RADIUS: f64 = 0.005;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledCloud {
    pub points: Vec<[f32; 3]>,
    pub labels: Vec<i32>,
    pub colors: Option<Vec<[f32; 3]>>,
}

impl LabeledCloud {
    pub fn new(points: Vec<[f32; 3]>, labels: Vec<i32>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        Ok(Self {
            points,
            labels,
            colors: None,
        })
    }

    /// Every point gets the same label.
    pub fn uniform(points: Vec<[f32; 3]>, label: i32) -> Self {
        let labels = vec![label; points.len()];
        Self {
            points,
            labels,
            colors: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledCloud {
        LabeledCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> LabeledCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select(&idx)
    }

    pub fn with_label(&self, label: i32) -> LabeledCloud {
        self.filter(|i| self.labels[i] == label)
    }

    /// Appends `other`; colors are dropped unless both clouds carry them.
    pub fn extend(&mut self, other: &LabeledCloud) {
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
        self.points.extend_from_slice(&other.points);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + to_v(p));
        Some(sum / self.len() as f64)
    }

    /// Writes an ASCII PLY with `x y z label` per vertex.
    pub fn write_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "ply")?;
        writeln!(f, "format ascii 1.0")?;
        writeln!(f, "element vertex {}", self.len())?;
        writeln!(f, "property float x")?;
        writeln!(f, "property float y")?;
        writeln!(f, "property float z")?;
        writeln!(f, "property int label")?;
        writeln!(f, "end_header")?;
        for (p, l) in self.points.iter().zip(&self.labels) {
            writeln!(f, "{} {} {} {}", p[0], p[1], p[2], l)?;
        }
        f.flush()?;
        Ok(())
    }
}

#[inline]
pub(crate) fn to_v(p: &[f32; 3]) -> Vector3<f64> {
    Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
}

#[inline]
pub(crate) fn to_f64(p: &[f32; 3]) -> [f64; 3] {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Applies `pose` to the points at `indices`, in place.
pub(crate) fn transform_indices(
    points: &mut [[f32; 3]],
    indices: impl Iterator<Item = usize>,
    pose: &Pose,
) {
    if pose.is_identity() {
        return;
    }
    let m = pose.to_affine_rows();
    for i in indices {
        points[i] = apply_affine(&m, &points[i]);
    }
}

#[inline]
pub(crate) fn apply_affine(m: &[[f64; 4]; 3], p: &[f32; 3]) -> [f32; 3] {
    let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
    [
        (m[0][0] * x + m[0][1] * y + m[0][2] * z + m[0][3]) as f32,
        (m[1][0] * x + m[1][1] * y + m[1][2] * z + m[1][3]) as f32,
        (m[2][0] * x + m[2][1] * y + m[2][2] * z + m[2][3]) as f32,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CropBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl CropBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min[a] < max[a])) {
            return Err(Error::InvalidArgument(format!(
                "crop box min {min:?} must be below max {max:?} on every axis"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &[f32; 3]) -> bool {
        (0..3).all(|a| {
            let v = p[a] as f64;
            v >= self.min[a] && v <= self.max[a]
        })
    }
}

pub fn crop(cloud: &LabeledCloud, bbox: &CropBox) -> Result<LabeledCloud> {
    let out = cloud.filter(|i| bbox.contains(&cloud.points[i]));
    if out.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(out)
}

/// Uniform hash grid for fixed-radius neighbor queries.
pub(crate) struct SpatialGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
    points: Vec<[f64; 3]>,
}

impl SpatialGrid {
    pub fn new(points: Vec<[f64; 3]>, cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self {
            cell,
            cells,
            points,
        }
    }

    pub fn from_cloud(cloud: &LabeledCloud, cell: f64) -> Self {
        Self::new(cloud.points.iter().map(to_f64).collect(), cell)
    }

    fn key(p: &[f64; 3], cell: f64) -> [i64; 3] {
        [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ]
    }

    /// Calls `f` with the index of every point with `dist <= radius` from `q`.
    pub fn for_each_within(&self, q: &[f64; 3], radius: f64, mut f: impl FnMut(usize)) {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let c = Self::key(q, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in bucket {
                            if dist2(&self.points[i as usize], q) <= r2 {
                                f(i as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn any_within(&self, q: &[f64; 3], radius: f64) -> bool {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let c = Self::key(q, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if bucket
                            .iter()
                            .any(|&i| dist2(&self.points[i as usize], q) <= r2)
                        {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// DBSCAN cluster assignment; `None` marks noise. Neighborhoods include the
/// point itself and use `dist <= eps`.
pub fn dbscan(points: &[[f32; 3]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let pts: Vec<[f64; 3]> = points.iter().map(to_f64).collect();
    let grid = SpatialGrid::new(pts.clone(), eps.max(1e-9));
    let neighbors = |i: usize| {
        let mut out = Vec::new();
        grid.for_each_within(&pts[i], eps, |j| out.push(j));
        out
    };

    let mut assignment: Vec<Option<usize>> = vec![None; pts.len()];
    let mut visited = vec![false; pts.len()];
    let mut next_cluster = 0;
    for i in 0..pts.len() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = neighbors(i);
        if seeds.len() < min_pts {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        assignment[i] = Some(cluster);
        let mut queue = seeds;
        while let Some(j) = queue.pop() {
            if assignment[j].is_none() {
                assignment[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(
                    nb.into_iter()
                        .filter(|&n| !visited[n] || assignment[n].is_none()),
                );
            }
        }
    }
    assignment
}

/// Drops DBSCAN noise points.
pub fn cluster_filter(cloud: &LabeledCloud, eps: f64, min_pts: usize) -> Result<LabeledCloud> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::InvalidArgument(format!(
            "dbscan needs eps > 0 and min_pts >= 1 (got {eps}, {min_pts})"
        )));
    }
    let assignment = dbscan(&cloud.points, eps, min_pts);
    let out = cloud.filter(|i| assignment[i].is_some());
    if out.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(out)
}

/// Greedy max-min selection order. Ties go to the lowest index. When `k`
/// exceeds the number of points, the full ordering is repeated cyclically.
pub fn farthest_point_indices(points: &[[f32; 3]], k: usize, seed_index: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let pts: Vec<[f64; 3]> = points.iter().map(to_f64).collect();
    let take = k.min(n);
    let mut order = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = seed_index % n;
    for _ in 0..take {
        order.push(current);
        min_d[current] = f64::NEG_INFINITY;
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = &mut min_d[i];
            if *d == f64::NEG_INFINITY {
                continue;
            }
            let dd = dist2(p, &c);
            if dd < *d {
                *d = dd;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        current = best;
    }
    for i in take..k {
        order.push(order[i % take]);
    }
    order
}

pub fn farthest_point_sample(cloud: &LabeledCloud, k: usize, seed_index: usize) -> LabeledCloud {
    cloud.select(&farthest_point_indices(&cloud.points, k, seed_index))
}

/// Moves every point by the delta of its label: objects use `deltas`, the
/// end-effector uses `ee_delta`, background and obstacles stay put.
pub fn transform_labeled(
    cloud: &LabeledCloud,
    deltas: &ConfigDelta,
    ee_delta: &Pose,
) -> Result<LabeledCloud> {
    let mut out = cloud.clone();
    let mut groups: HashMap<i32, Vec<usize>> = HashMap::new();
    for (i, &l) in cloud.labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    for (label, idx) in groups {
        let pose = match label {
            LABEL_EE => *ee_delta,
            l if l >= 0 => *deltas.get(l as usize).ok_or(Error::MissingDelta(l))?,
            _ => continue,
        };
        transform_indices(&mut out.points, idx.into_iter(), &pose);
    }
    Ok(out)
}

/// Exact nearest-neighbor index over a point set.
pub struct NnIndex {
    tree: Option<ImmutableKdTree<f64, u64, 3, 32>>,
    small: Vec<[f64; 3]>,
}

const SMALL_INDEX: usize = 64;

impl NnIndex {
    pub fn new(points: &[[f32; 3]]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut pts: Vec<[f64; 3]> = points.iter().map(to_f64).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        pts.dedup();
        if pts.len() <= SMALL_INDEX {
            return Some(Self {
                tree: None,
                small: pts,
            });
        }
        Some(Self {
            tree: Some(ImmutableKdTree::new_from_slice(&pts)),
            small: Vec::new(),
        })
    }

    pub fn nearest_distance(&self, q: &[f32; 3]) -> f64 {
        let q = to_f64(q);
        match &self.tree {
            Some(tree) => tree.nearest_one::<SquaredEuclidean>(&q).distance.sqrt(),
            None => self
                .small
                .iter()
                .map(|p| dist2(p, &q))
                .fold(f64::INFINITY, f64::min)
                .sqrt(),
        }
    }

    pub fn mean_distance_from(&self, points: &[[f32; 3]]) -> f64 {
        points.iter().map(|p| self.nearest_distance(p)).sum::<f64>() / points.len() as f64
    }
}

/// Symmetric chamfer distance: the average of the two directional mean
/// nearest-neighbor distances.
pub fn chamfer(a: &LabeledCloud, b: &LabeledCloud) -> Result<f64> {
    let ia = NnIndex::new(&a.points).ok_or(Error::EmptyCloud)?;
    let ib = NnIndex::new(&b.points).ok_or(Error::EmptyCloud)?;
    Ok(chamfer_indexed(&a.points, &ia, &b.points, &ib))
}

pub(crate) fn chamfer_indexed(a: &[[f32; 3]], ia: &NnIndex, b: &[[f32; 3]], ib: &NnIndex) -> f64 {
    0.5 * (ib.mean_distance_from(a) + ia.mean_distance_from(b))
}

/// Removes scene points within `radius` of any reference point.
pub fn subtract_by_proximity(
    scene: &LabeledCloud,
    reference: &LabeledCloud,
    radius: f64,
) -> Result<LabeledCloud> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let reference = reference.filter(|i| reference.labels[i] != LABEL_OBSTACLE);
    if reference.is_empty() {
        return Ok(scene.clone());
    }
    let grid = SpatialGrid::from_cloud(&reference, radius);
    Ok(scene.filter(|i| !grid.any_within(&to_f64(&scene.points[i]), radius)))
}

/// Mean distance from each point to its nearest distinct neighbor.
pub fn mean_spacing(cloud: &LabeledCloud) -> Result<f64> {
    let mut pts: Vec<[f64; 3]> = cloud.points.iter().map(to_f64).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 2 {
        return Err(Error::EmptyCloud);
    }
    let total: f64 = if pts.len() <= SMALL_INDEX {
        (0..pts.len())
            .map(|i| {
                (0..pts.len())
                    .filter(|&j| j != i)
                    .map(|j| dist2(&pts[i], &pts[j]))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum()
    } else {
        let tree: ImmutableKdTree<f64, u64, 3, 32> = ImmutableKdTree::new_from_slice(&pts);
        pts.iter()
            .map(|p| {
                tree.nearest_n::<SquaredEuclidean>(p, std::num::NonZero::new(2).expect("nonzero"))
                    [1]
                .distance
                .sqrt()
            })
            .sum()
    };
    Ok(total / pts.len() as f64)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessOptions {
    pub crop: Option<CropBox>,
    /// `(eps, min_pts)`; `None` skips clustering.
    pub dbscan: Option<(f64, usize)>,
    pub num_points: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            crop: None,
            dbscan: Some((DEFAULT_DBSCAN_EPS, DEFAULT_DBSCAN_MIN_PTS)),
            num_points: 1024,
        }
    }
}

/// Crop, drop background, remove outliers, then downsample to a fixed size.
pub fn preprocess(cloud: &LabeledCloud, opts: &PreprocessOptions) -> Result<LabeledCloud> {
    let mut c = match &opts.crop {
        Some(b) => crop(cloud, b)?,
        None => cloud.clone(),
    };
    c = c.filter(|i| c.labels[i] != LABEL_BACKGROUND);
    if c.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if let Some((eps, min_pts)) = opts.dbscan {
        c = cluster_filter(&c, eps, min_pts)?;
    }
    Ok(farthest_point_sample(&c, opts.num_points, 0))
}
