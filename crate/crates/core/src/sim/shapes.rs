//! Geometric primitives: surface sampling and ray intersection, all in the
//! primitive's local frame (centered at the origin, axis along +z).

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::se3::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Box {
        half: [f64; 3],
    },
    Cylinder {
        radius: f64,
        height: f64,
    },
    Sphere {
        radius: f64,
    },
    /// Base disc at `z = -height/2`, apex at `z = +height/2`.
    Cone {
        radius: f64,
        height: f64,
    },
}

/// A primitive placed in a body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part {
    pub shape: Shape,
    #[serde(default)]
    pub offset: Pose,
}

impl Part {
    pub fn new(shape: Shape, offset: Pose) -> Self {
        Self { shape, offset }
    }

    pub fn at(shape: Shape, x: f64, y: f64, z: f64) -> Self {
        Self::new(shape, Pose::from_translation(x, y, z))
    }
}

/// A surface region with its area and a uniform sampler.
enum Region {
    BoxFace { axis: usize, sign: f64 },
    CylSide,
    CylCap { sign: f64 },
    Sphere,
    ConeSide,
    ConeBase,
}

impl Shape {
    fn regions(&self) -> Vec<(Region, f64)> {
        match *self {
            Shape::Box { half: h } => {
                let mut out = Vec::with_capacity(6);
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let area = 4.0 * h[u] * h[v];
                    out.push((Region::BoxFace { axis, sign: 1.0 }, area));
                    out.push((Region::BoxFace { axis, sign: -1.0 }, area));
                }
                out
            }
            Shape::Cylinder {
                radius: r,
                height: h,
            } => vec![
                (Region::CylSide, 2.0 * PI * r * h),
                (Region::CylCap { sign: 1.0 }, PI * r * r),
                (Region::CylCap { sign: -1.0 }, PI * r * r),
            ],
            Shape::Sphere { radius: r } => vec![(Region::Sphere, 4.0 * PI * r * r)],
            Shape::Cone {
                radius: r,
                height: h,
            } => vec![
                (Region::ConeSide, PI * r * (r * r + h * h).sqrt()),
                (Region::ConeBase, PI * r * r),
            ],
        }
    }

    pub fn area(&self) -> f64 {
        self.regions().iter().map(|r| r.1).sum()
    }

    fn sample_region(&self, region: &Region, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let disc = |rng: &mut ChaCha8Rng, r: f64| {
            let rad = r * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..2.0 * PI);
            (rad * a.cos(), rad * a.sin())
        };
        match (*self, region) {
            (Shape::Box { half: h }, Region::BoxFace { axis, sign }) => {
                let mut p = Vector3::zeros();
                p[*axis] = sign * h[*axis];
                for a in [(*axis + 1) % 3, (*axis + 2) % 3] {
                    p[a] = rng.random_range(-h[a]..=h[a]);
                }
                p
            }
            (Shape::Cylinder { radius, height }, Region::CylSide) => {
                let a = rng.random_range(0.0..2.0 * PI);
                Vector3::new(
                    radius * a.cos(),
                    radius * a.sin(),
                    rng.random_range(-height / 2.0..=height / 2.0),
                )
            }
            (Shape::Cylinder { radius, height }, Region::CylCap { sign }) => {
                let (x, y) = disc(rng, radius);
                Vector3::new(x, y, sign * height / 2.0)
            }
            (Shape::Sphere { radius }, Region::Sphere) => loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = v.norm();
                if n > 1e-6 && n <= 1.0 {
                    break v * (radius / n);
                }
            },
            (Shape::Cone { radius, height }, Region::ConeSide) => {
                let f = rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                Vector3::new(
                    f * radius * a.cos(),
                    f * radius * a.sin(),
                    height / 2.0 - f * height,
                )
            }
            (Shape::Cone { radius, height }, Region::ConeBase) => {
                let (x, y) = disc(rng, radius);
                Vector3::new(x, y, -height / 2.0)
            }
            _ => unreachable!("region belongs to its shape"),
        }
    }

    /// `n` surface points, allotted to faces in proportion to area (largest
    /// remainder) and uniform within each face. Cones include their apex.
    pub fn sample_surface(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut n = n;
        if let Shape::Cone { height, .. } = *self {
            if n >= 2 {
                out.push(Vector3::new(0.0, 0.0, height / 2.0));
                n -= 1;
            }
        }
        let regions = self.regions();
        let total: f64 = regions.iter().map(|r| r.1).sum();
        let exact: Vec<f64> = regions.iter().map(|r| r.1 / total * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut rest = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..regions.len()).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[i] += 1;
            rest -= 1;
        }
        for (i, (region, _)) in regions.iter().enumerate() {
            for _ in 0..counts[i] {
                out.push(self.sample_region(region, rng));
            }
        }
        out
    }

    /// Distance from a local-frame point to the surface, used by tests and
    /// sampling checks.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Box { half: h } => {
                let q = p.abs() - Vector3::from(h);
                let outside = q.sup(&Vector3::zeros()).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
            Shape::Cylinder { radius, height } => {
                let d = Vector3::new(
                    (p.x * p.x + p.y * p.y).sqrt() - radius,
                    p.z.abs() - height / 2.0,
                    0.0,
                );
                let outside = Vector3::new(d.x.max(0.0), d.y.max(0.0), 0.0).norm();
                (outside + d.x.max(d.y).min(0.0)).abs()
            }
            Shape::Sphere { radius } => (p.norm() - radius).abs(),
            Shape::Cone { radius, height } => {
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let z = p.z + height / 2.0;
                let side = {
                    let (a, b) = ((radius, 0.0), (0.0, height));
                    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                    let t =
                        (((rho - a.0) * dx + (z - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                    ((rho - a.0 - t * dx).powi(2) + (z - a.1 - t * dy).powi(2)).sqrt()
                };
                let base = if rho <= radius {
                    z.abs()
                } else {
                    ((rho - radius).powi(2) + z * z).sqrt()
                };
                side.min(base)
            }
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Box { half: h } => (0..3).all(|a| p[a].abs() <= h[a]),
            Shape::Cylinder { radius, height } => {
                p.z.abs() <= height / 2.0 && p.x * p.x + p.y * p.y <= radius * radius
            }
            Shape::Sphere { radius } => p.norm() <= radius,
            Shape::Cone { radius, height } => {
                let f = (height / 2.0 - p.z) / height;
                (0.0..=1.0).contains(&f) && (p.x * p.x + p.y * p.y).sqrt() <= f * radius
            }
        }
    }

    /// Smallest `t > t_min` with `o + t d` on the surface.
    pub fn ray_hit(&self, o: &Vector3<f64>, d: &Vector3<f64>, t_min: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut consider = |t: f64, ok: bool| {
            if ok && t > t_min && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        };
        match *self {
            Shape::Box { half: h } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a].abs() > h[a] {
                            return None;
                        }
                    } else {
                        let ta = (-h[a] - o[a]) / d[a];
                        let tb = (h[a] - o[a]) / d[a];
                        t0 = t0.max(ta.min(tb));
                        t1 = t1.min(ta.max(tb));
                    }
                }
                if t0 <= t1 {
                    consider(t0, true);
                    consider(t1, true);
                }
            }
            Shape::Sphere { radius } => {
                let b = o.dot(d);
                let a = d.dot(d);
                let c = o.dot(o) - radius * radius;
                let disc = b * b - a * c;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    consider((-b - s) / a, true);
                    consider((-b + s) / a, true);
                }
            }
            Shape::Cylinder { radius, height } => {
                let hh = height / 2.0;
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-18 {
                    let b = o.x * d.x + o.y * d.y;
                    let c = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        for t in [(-b - s) / a, (-b + s) / a] {
                            consider(t, (o.z + t * d.z).abs() <= hh);
                        }
                    }
                }
                if d.z.abs() > 1e-15 {
                    for zc in [-hh, hh] {
                        let t = (zc - o.z) / d.z;
                        let (x, y) = (o.x + t * d.x, o.y + t * d.y);
                        consider(t, x * x + y * y <= radius * radius);
                    }
                }
            }
            Shape::Cone { radius, height } => {
                let hh = height / 2.0;
                let k = radius / height;
                let apex = hh;
                let oz = o.z - apex;
                let a = d.x * d.x + d.y * d.y - k * k * d.z * d.z;
                let b = o.x * d.x + o.y * d.y - k * k * oz * d.z;
                let c = o.x * o.x + o.y * o.y - k * k * oz * oz;
                let on_side = |t: f64| {
                    let z = o.z + t * d.z;
                    (-hh..=hh).contains(&z)
                };
                if a.abs() > 1e-15 {
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        for t in [(-b - s) / a, (-b + s) / a] {
                            consider(t, on_side(t));
                        }
                    }
                } else if b.abs() > 1e-15 {
                    let t = -c / (2.0 * b);
                    consider(t, on_side(t));
                }
                if d.z.abs() > 1e-15 {
                    let t = (-hh - o.z) / d.z;
                    let (x, y) = (o.x + t * d.x, o.y + t * d.y);
                    consider(t, x * x + y * y <= radius * radius);
                }
            }
        }
        best
    }
}

/// A part's pose in the world, with its inverse cached for ray tests.
#[derive(Clone, Copy, Debug)]
pub struct PlacedPart {
    pub shape: Shape,
    pub pose: Pose,
    inv: Pose,
}

impl PlacedPart {
    pub fn new(shape: Shape, pose: Pose) -> Self {
        Self {
            shape,
            pose,
            inv: pose.inverse(),
        }
    }

    /// Whether the open segment from `from` to `to` crosses this part.
    pub fn blocks(&self, from: &Vector3<f64>, to: &Vector3<f64>, eps: f64) -> bool {
        let o = self.inv.transform_point(from);
        let e = self.inv.transform_point(to);
        let d = e - o;
        let len = d.norm();
        if len <= 2.0 * eps {
            return false;
        }
        let dir = d / len;
        self.shape
            .ray_hit(&o, &dir, eps)
            .is_some_and(|t| t < len - eps)
    }
}
