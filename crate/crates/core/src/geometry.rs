//! Pixel shapes and planar polygon helpers.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Number of sides used to approximate disk-shaped pixels.
pub const DEFAULT_DISK_SIDES: usize = 64;

/// Minimal distance between a pixel and the outer boundary.
pub const DEFAULT_MARGIN: f64 = 0.05;

/// Closed interval `[lo, hi]` of admissible contrasts for one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ContrastInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let interval = ContrastInterval { lo, hi };
        interval.validate()?;
        Ok(interval)
    }

    pub fn degenerate(value: f64) -> Self {
        ContrastInterval {
            lo: value,
            hi: value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::Geometry(format!(
                "contrast interval [{}, {}] is not finite",
                self.lo, self.hi
            )));
        }
        if self.lo > self.hi {
            return Err(Error::Geometry(format!(
                "contrast interval [{}, {}] has lo > hi",
                self.lo, self.hi
            )));
        }
        if self.lo <= -1.0 {
            return Err(Error::Geometry(format!(
                "contrast interval [{}, {}] allows non-positive conductivity",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PixelShape {
    Disk { center: Point, radius: f64 },
    /// Counterclockwise vertex list; the closing edge is implicit.
    Polygon { vertices: Vec<Point> },
}

impl PixelShape {
    /// The polygon actually resolved by the mesh. Disks become regular
    /// `disk_sides`-gons inscribed in the circle.
    pub fn to_polygon(&self, disk_sides: usize) -> Vec<Point> {
        match self {
            PixelShape::Disk { center, radius } => regular_polygon(*center, *radius, disk_sides),
            PixelShape::Polygon { vertices } => vertices.clone(),
        }
    }

    /// Largest distance from the origin over the shape.
    pub fn max_radius(&self) -> f64 {
        match self {
            PixelShape::Disk { center, radius } => norm(*center) + radius,
            PixelShape::Polygon { vertices } => {
                vertices.iter().map(|&v| norm(v)).fold(0.0, f64::max)
            }
        }
    }

    pub fn rotated(&self, angle: f64) -> PixelShape {
        match self {
            PixelShape::Disk { center, radius } => PixelShape::Disk {
                center: rotate(*center, angle),
                radius: *radius,
            },
            PixelShape::Polygon { vertices } => PixelShape::Polygon {
                vertices: vertices.iter().map(|&v| rotate(v, angle)).collect(),
            },
        }
    }
}

/// One pixel of an anomaly: a shape carrying a uniformly distributed contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelRegion {
    pub id: usize,
    pub shape: PixelShape,
    pub contrast: ContrastInterval,
}

impl PixelRegion {
    pub fn disk(id: usize, center: Point, radius: f64, contrast: ContrastInterval) -> Self {
        PixelRegion {
            id,
            shape: PixelShape::Disk { center, radius },
            contrast,
        }
    }

    pub fn polygon(id: usize, vertices: Vec<Point>, contrast: ContrastInterval) -> Self {
        PixelRegion {
            id,
            shape: PixelShape::Polygon { vertices },
            contrast,
        }
    }
}

/// Checks ids, contrast intervals, boundary margin and pairwise disjointness.
///
/// Pixels may share edges (a disk split into sectors, a square split into
/// rectangles); only overlapping interiors are rejected.
pub fn validate_pixels(pixels: &[PixelRegion], disk_sides: usize, margin: f64) -> Result<()> {
    let mut ids: Vec<usize> = pixels.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    if ids.first() == Some(&0) {
        return Err(Error::Geometry("pixel ids must be >= 1".into()));
    }
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Geometry("duplicate pixel id".into()));
    }
    let polygons: Vec<Vec<Point>> = pixels
        .iter()
        .map(|p| p.shape.to_polygon(disk_sides))
        .collect();
    for (pixel, poly) in pixels.iter().zip(&polygons) {
        pixel.contrast.validate()?;
        if let PixelShape::Disk { radius, .. } = pixel.shape {
            if !(radius > 0.0) {
                return Err(Error::Geometry(format!(
                    "pixel {} has non-positive radius",
                    pixel.id
                )));
            }
        }
        if poly.len() < 3 || signed_area(poly) <= 0.0 {
            return Err(Error::Geometry(format!(
                "pixel {} is not a counterclockwise polygon with positive area",
                pixel.id
            )));
        }
        if pixel.shape.max_radius() > 1.0 - margin {
            return Err(Error::Geometry(format!(
                "pixel {} comes closer than {} to the boundary",
                pixel.id, margin
            )));
        }
    }
    for i in 0..polygons.len() {
        for j in i + 1..polygons.len() {
            if interiors_overlap(&polygons[i], &polygons[j]) {
                return Err(Error::Geometry(format!(
                    "pixels {} and {} overlap",
                    pixels[i].id, pixels[j].id
                )));
            }
        }
    }
    Ok(())
}

pub fn regular_polygon(center: Point, radius: f64, sides: usize) -> Vec<Point> {
    (0..sides)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / sides as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect()
}

/// Polygon for the circular sector between two angles, arc sampled with
/// `arc_segments` equal pieces.
pub fn sector_polygon(
    center: Point,
    radius: f64,
    start: f64,
    end: f64,
    arc_segments: usize,
) -> Vec<Point> {
    let mut v = vec![center];
    for j in 0..=arc_segments {
        let a = start + (end - start) * j as f64 / arc_segments as f64;
        v.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
    }
    v
}

pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

pub fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let s = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + s * ab[0], a[1] + s * ab[1]])
}

/// Even-odd containment; points on the boundary may go either way.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Containment that excludes a band of width `tol` around the boundary.
pub fn strictly_inside(p: Point, poly: &[Point], tol: f64) -> bool {
    if !point_in_polygon(p, poly) {
        return false;
    }
    let n = poly.len();
    (0..n).all(|i| segment_distance(p, poly[i], poly[(i + 1) % n]) > tol)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let scale = dist(a, b).max(dist(c, d)).max(1e-300);
    let tol = 1e-12 * scale * scale;
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    ((d1 > tol && d2 < -tol) || (d1 < -tol && d2 > tol))
        && ((d3 > tol && d4 < -tol) || (d3 < -tol && d4 > tol))
}

fn interiors_overlap(p: &[Point], q: &[Point]) -> bool {
    let tol = 1e-9;
    for i in 0..p.len() {
        let (a, b) = (p[i], p[(i + 1) % p.len()]);
        for j in 0..q.len() {
            if segments_cross(a, b, q[j], q[(j + 1) % q.len()]) {
                return true;
            }
        }
    }
    let probes = |poly: &[Point]| -> Vec<Point> {
        let n = poly.len();
        let mut pts: Vec<Point> = poly.to_vec();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            pts.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
        pts.push(interior_point(poly));
        pts
    };
    probes(p).into_iter().any(|x| strictly_inside(x, q, tol))
        || probes(q).into_iter().any(|x| strictly_inside(x, p, tol))
}

/// A point strictly inside a simple polygon (centroid of an ear).
pub fn interior_point(poly: &[Point]) -> Point {
    let n = poly.len();
    let area = signed_area(poly);
    for i in 0..n {
        let a = poly[(i + n - 1) % n];
        let b = poly[i];
        let c = poly[(i + 1) % n];
        if orient(a, b, c) * area <= 0.0 {
            continue;
        }
        let g = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
        let blocked = poly.iter().enumerate().any(|(k, &v)| {
            k != i && k != (i + n - 1) % n && k != (i + 1) % n && point_in_triangle(v, a, b, c)
        });
        if !blocked {
            return g;
        }
    }
    poly[0]
}

fn point_in_triangle(p: Point, a: Point, b: Point, c: Point) -> bool {
    let d1 = orient(a, b, p);
    let d2 = orient(b, c, p);
    let d3 = orient(c, a, p);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}
