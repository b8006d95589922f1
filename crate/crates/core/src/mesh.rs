//! Boundary-fitted triangulations of the unit disk that resolve pixel interfaces.
//!
//! The vertex set is built from three layers: equiangular points on the unit
//! circle, subdivided pixel-interface polylines, and concentric rings of
//! interior points with spacing matched to the boundary. A constrained
//! Delaunay triangulation (boundary and interfaces as constraint edges) then
//! guarantees that no triangle straddles a pixel interface.
//!
//! Refinement level `l` places `36 * 2^l` vertices on the circle; the vertex
//! count grows by roughly 4x per level (level 4 gives about 30 000 vertices).

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use spade::{ConstrainedDelaunayTriangulation, HasPosition, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::geometry::{
    dist, norm, orient, point_in_polygon, segment_distance, validate_pixels, PixelRegion, Point,
    DEFAULT_DISK_SIDES, DEFAULT_MARGIN,
};

/// Boundary vertices at refinement level 0.
pub const BASE_BOUNDARY_VERTICES: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    pub disk_sides: usize,
    pub margin: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions {
            disk_sides: DEFAULT_DISK_SIDES,
            margin: DEFAULT_MARGIN,
        }
    }
}

pub fn boundary_vertex_count(level: u32) -> usize {
    BASE_BOUNDARY_VERTICES << level
}

/// Triangulated unit disk with per-triangle region tags (0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct DiskMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    regions: Vec<usize>,
    boundary: Vec<usize>,
    h_max: f64,
}

#[derive(Clone, Copy)]
struct TaggedVertex {
    position: Point2<f64>,
    id: usize,
}

impl HasPosition for TaggedVertex {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        self.position
    }
}

struct PointSet {
    points: Vec<Point>,
    index: HashMap<(i64, i64), usize>,
}

impl PointSet {
    fn new() -> Self {
        PointSet {
            points: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, p: Point) -> usize {
        let key = ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.points.len();
        self.points.push(p);
        self.index.insert(key, i);
        i
    }
}

/// Builds the mesh with default options (64-gon disks, 0.05 margin).
pub fn build_disk_mesh(level: u32, pixels: &[PixelRegion]) -> Result<DiskMesh> {
    build_disk_mesh_with(level, pixels, &MeshOptions::default())
}

pub fn build_disk_mesh_with(
    level: u32,
    pixels: &[PixelRegion],
    options: &MeshOptions,
) -> Result<DiskMesh> {
    if level > 8 {
        return Err(Error::contract(format!("refinement level {level} is too large")));
    }
    validate_pixels(pixels, options.disk_sides, options.margin)?;
    let nb = boundary_vertex_count(level);
    let h = 2.0 * PI / nb as f64;

    let mut set = PointSet::new();
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for j in 0..nb {
        let a = 2.0 * PI * j as f64 / nb as f64;
        let i = set.insert([a.cos(), a.sin()]);
        debug_assert_eq!(i, j);
    }
    for j in 0..nb {
        edges.insert((j, (j + 1) % nb));
    }

    let polygons: Vec<Vec<Point>> = pixels
        .iter()
        .map(|p| p.shape.to_polygon(options.disk_sides))
        .collect();
    let corners: Vec<Point> = polygons.iter().flatten().copied().collect();
    let mut segments: Vec<(Point, Point)> = Vec::new();
    for poly in &polygons {
        let n = poly.len();
        for i in 0..n {
            let (mut a, mut b) = (poly[i], poly[(i + 1) % n]);
            if (b[0], b[1]) < (a[0], a[1]) {
                std::mem::swap(&mut a, &mut b);
            }
            // split at corners of other pixels lying on this edge (T-junctions)
            let len = dist(a, b);
            let mut cuts: Vec<f64> = corners
                .iter()
                .filter(|&&c| segment_distance(c, a, b) < 1e-9 && dist(c, a) > 1e-9 && dist(c, b) > 1e-9)
                .map(|&c| dist(c, a) / len)
                .collect();
            cuts.push(0.0);
            cuts.push(1.0);
            cuts.sort_by(f64::total_cmp);
            cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
            for w in cuts.windows(2) {
                let p0 = lerp(a, b, w[0]);
                let p1 = lerp(a, b, w[1]);
                let pieces = (dist(p0, p1) / h).ceil().max(1.0) as usize;
                let mut prev = set.insert(p0);
                for k in 1..=pieces {
                    let cur = set.insert(lerp(p0, p1, k as f64 / pieces as f64));
                    if cur != prev {
                        edges.insert((prev.min(cur), prev.max(cur)));
                    }
                    prev = cur;
                }
                segments.push((p0, p1));
            }
        }
    }

    let grid = SegmentGrid::new(&segments, h);
    let dr = h * 3f64.sqrt() / 2.0;
    let clearance = 0.6 * h;
    let mut k = 1;
    loop {
        let r = 1.0 - k as f64 * dr;
        if r < 0.5 * dr {
            break;
        }
        let count = ((2.0 * PI * r / h).round() as usize).max(6);
        let offset = if k % 2 == 1 { 0.5 } else { 0.0 };
        for j in 0..count {
            let a = 2.0 * PI * (j as f64 + offset) / count as f64;
            let p = [r * a.cos(), r * a.sin()];
            if grid.min_distance(p) > clearance {
                set.insert(p);
            }
        }
        k += 1;
    }
    if grid.min_distance([0.0, 0.0]) > clearance {
        set.insert([0.0, 0.0]);
    }

    let points = set.points;
    let tagged: Vec<TaggedVertex> = points
        .iter()
        .enumerate()
        .map(|(id, p)| TaggedVertex {
            position: Point2::new(p[0], p[1]),
            id,
        })
        .collect();
    let edge_list: Vec<[usize; 2]> = edges.into_iter().map(|(a, b)| [a, b]).collect();
    let mut conflicts = 0usize;
    let cdt = ConstrainedDelaunayTriangulation::<TaggedVertex>::try_bulk_load_cdt(
        tagged,
        edge_list,
        |_| conflicts += 1,
    )
    .map_err(|e| Error::Mesh(format!("triangulation failed: {e:?}")))?;
    if conflicts > 0 {
        return Err(Error::Mesh(format!("{conflicts} intersecting constraint edges")));
    }
    if cdt.num_vertices() != points.len() {
        return Err(Error::Mesh("triangulation merged vertices".into()));
    }
    let triangles: Vec<[usize; 3]> = cdt
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            [v[0].data().id, v[1].data().id, v[2].data().id]
        })
        .collect();

    let regions = triangles
        .iter()
        .map(|t| {
            let c = centroid(&points, t);
            pixels
                .iter()
                .zip(&polygons)
                .find(|(_, poly)| point_in_polygon(c, poly))
                .map_or(0, |(px, _)| px.id)
        })
        .collect();

    DiskMesh::from_parts(points, triangles, regions, (0..nb).collect())
}

fn lerp(a: Point, b: Point, s: f64) -> Point {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

fn centroid(points: &[Point], t: &[usize; 3]) -> Point {
    let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
    [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
}

/// Uniform bucket grid over interface segments for clearance queries.
struct SegmentGrid<'a> {
    segments: &'a [(Point, Point)],
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> SegmentGrid<'a> {
    fn new(segments: &'a [(Point, Point)], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (s, &(a, b)) in segments.iter().enumerate() {
            let (x0, x1) = (a[0].min(b[0]), a[0].max(b[0]));
            let (y0, y1) = (a[1].min(b[1]), a[1].max(b[1]));
            for i in (x0 / cell).floor() as i64..=(x1 / cell).floor() as i64 {
                for j in (y0 / cell).floor() as i64..=(y1 / cell).floor() as i64 {
                    buckets.entry((i, j)).or_default().push(s);
                }
            }
        }
        SegmentGrid {
            segments,
            cell,
            buckets,
        }
    }

    /// Distance to the nearest segment, or infinity beyond one cell.
    fn min_distance(&self, p: Point) -> f64 {
        let ci = (p[0] / self.cell).floor() as i64;
        let cj = (p[1] / self.cell).floor() as i64;
        let mut best = f64::INFINITY;
        for i in ci - 1..=ci + 1 {
            for j in cj - 1..=cj + 1 {
                if let Some(list) = self.buckets.get(&(i, j)) {
                    for &s in list {
                        let (a, b) = self.segments[s];
                        best = best.min(segment_distance(p, a, b));
                    }
                }
            }
        }
        best
    }
}

impl DiskMesh {
    /// Assembles a mesh from raw arrays and checks the structural invariants.
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        regions: Vec<usize>,
        boundary: Vec<usize>,
    ) -> Result<DiskMesh> {
        if regions.len() != triangles.len() {
            return Err(Error::Mesh("region tag count differs from triangle count".into()));
        }
        if boundary.len() < 3 {
            return Err(Error::Mesh("fewer than three boundary vertices".into()));
        }
        let nv = vertices.len();
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::Mesh(format!("triangle {i} references a missing vertex")));
            }
            let area = 0.5 * orient(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if !(area > 0.0) {
                return Err(Error::DegenerateTriangle { index: i, area });
            }
        }
        for (i, p) in vertices.iter().enumerate() {
            if norm(*p) > 1.0 + 1e-12 {
                return Err(Error::Mesh(format!("vertex {i} lies outside the unit disk")));
            }
        }
        for &b in &boundary {
            if b >= nv || (norm(vertices[b]) - 1.0).abs() > 1e-12 {
                return Err(Error::Mesh(format!("boundary vertex {b} is not on the unit circle")));
            }
        }
        let mut used = vec![false; nv];
        for t in &triangles {
            for &v in t {
                used[v] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::Mesh(format!("vertex {v} belongs to no triangle")));
        }
        let mut h_max: f64 = 0.0;
        for t in &triangles {
            for k in 0..3 {
                h_max = h_max.max(dist(vertices[t[k]], vertices[t[(k + 1) % 3]]));
            }
        }
        Ok(DiskMesh {
            vertices,
            triangles,
            regions,
            boundary,
            h_max,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn region_of_triangle(&self) -> &[usize] {
        &self.regions
    }

    /// Boundary vertex indices ordered by increasing polar angle.
    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let tri = self.triangles[t];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * orient(a, b, c)
    }

    pub fn triangle_centroid(&self, t: usize) -> Point {
        centroid(&self.vertices, &self.triangles[t])
    }

    /// Region ids present in the mesh, excluding the background.
    pub fn region_ids(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.regions.iter().copied().filter(|&r| r != 0).collect();
        set.into_iter().collect()
    }

    /// Summed triangle area carrying the given region tag.
    pub fn region_area(&self, region: usize) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| self.regions[t] == region)
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Polar angles of the boundary vertices in traversal order.
    pub fn boundary_angles(&self) -> Vec<f64> {
        self.boundary
            .iter()
            .map(|&b| {
                let p = self.vertices[b];
                p[1].atan2(p[0])
            })
            .collect()
    }

    /// Largest relative deviation of the boundary angular spacing from `2π/nb`.
    pub fn boundary_spacing_defect(&self) -> f64 {
        let nb = self.boundary.len();
        let step = 2.0 * PI / nb as f64;
        let angles = self.boundary_angles();
        (0..nb)
            .map(|j| {
                let d = (angles[(j + 1) % nb] - angles[j]).rem_euclid(2.0 * PI);
                ((d - step) / step).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Triangle containing `p`, lowest index on ties, `None` outside the disk.
    ///
    /// Points between a boundary chord and the circle are assigned to the
    /// triangle owning that chord.
    pub fn locate_point(&self, p: Point) -> Option<usize> {
        if norm(p) > 1.0 {
            return None;
        }
        let tol = 1e-12;
        for (i, t) in self.triangles.iter().enumerate() {
            let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            let scale = orient(a, b, c);
            if orient(a, b, p) >= -tol * scale
                && orient(b, c, p) >= -tol * scale
                && orient(c, a, p) >= -tol * scale
            {
                return Some(i);
            }
        }
        let nb = self.boundary.len();
        let angles = self.boundary_angles();
        let theta = p[1].atan2(p[0]);
        let j = (0..nb)
            .find(|&j| {
                let span = (angles[(j + 1) % nb] - angles[j]).rem_euclid(2.0 * PI);
                (theta - angles[j]).rem_euclid(2.0 * PI) <= span
            })
            .unwrap_or(0);
        let (u, v) = (self.boundary[j], self.boundary[(j + 1) % nb]);
        self.triangles
            .iter()
            .position(|t| t.contains(&u) && t.contains(&v))
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangle_points(t);
        let det = orient(a, b, c);
        [
            orient(b, c, p) / det,
            orient(c, a, p) / det,
            orient(a, b, p) / det,
        ]
    }

    /// Edge multiplicities: every edge must be shared by at most two
    /// triangles. Returns the number of edges used by exactly one triangle.
    pub fn boundary_edge_count(&self) -> Result<usize> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        if count.values().any(|&c| c > 2) {
            return Err(Error::Mesh("edge shared by more than two triangles".into()));
        }
        Ok(count.values().filter(|&&c| c == 1).count())
    }

    /// Writes the `diskmesh v1` text format.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "diskmesh v1")?;
        writeln!(
            out,
            "{} {} {}",
            self.vertices.len(),
            self.triangles.len(),
            self.boundary.len()
        )?;
        for p in &self.vertices {
            writeln!(out, "{:.16e} {:.16e}", p[0], p[1])?;
        }
        for (t, r) in self.triangles.iter().zip(&self.regions) {
            writeln!(out, "{} {} {} {}", t[0], t[1], t[2], r)?;
        }
        for b in &self.boundary {
            writeln!(out, "{b}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<DiskMesh> {
        let bad = |m: &str| Error::format("diskmesh", m);
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(Error::from)
        };
        if next()?.trim() != "diskmesh v1" {
            return Err(bad("missing 'diskmesh v1' header"));
        }
        let counts: Vec<usize> = parse_fields(&next()?, 3).map_err(|e| bad(&e))?;
        let (nv, nt, nb) = (counts[0], counts[1], counts[2]);
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let xy: Vec<f64> = parse_fields(&next()?, 2).map_err(|e| bad(&e))?;
            vertices.push([xy[0], xy[1]]);
        }
        let mut triangles = Vec::with_capacity(nt);
        let mut regions = Vec::with_capacity(nt);
        for _ in 0..nt {
            let row: Vec<usize> = parse_fields(&next()?, 4).map_err(|e| bad(&e))?;
            triangles.push([row[0], row[1], row[2]]);
            regions.push(row[3]);
        }
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let b: Vec<usize> = parse_fields(&next()?, 1).map_err(|e| bad(&e))?;
            boundary.push(b[0]);
        }
        DiskMesh::from_parts(vertices, triangles, regions, boundary)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_text(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<DiskMesh> {
        let file = std::fs::File::open(path)?;
        DiskMesh::read_text(std::io::BufReader::new(file))
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str, n: usize) -> std::result::Result<Vec<T>, String> {
    let fields: Vec<T> = line
        .split_whitespace()
        .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse '{s}'")))
        .collect::<std::result::Result<_, _>>()?;
    if fields.len() != n {
        return Err(format!("expected {n} fields, found {}", fields.len()));
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rectangle, ContrastInterval};

    fn iv() -> ContrastInterval {
        ContrastInterval::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn empty_anomaly_is_all_background() {
        let mesh = build_disk_mesh(1, &[]).unwrap();
        assert!(mesh.region_of_triangle().iter().all(|&r| r == 0));
        assert_eq!(mesh.boundary_vertices().len(), 72);
    }

    #[test]
    fn boundary_is_equiangular_and_on_circle() {
        let mesh = build_disk_mesh(2, &[PixelRegion::disk(1, [0.2, 0.1], 0.3, iv())]).unwrap();
        assert!(mesh.boundary_spacing_defect() < 1e-10);
        for &b in mesh.boundary_vertices() {
            assert!((norm(mesh.vertices()[b]) - 1.0).abs() <= 1e-12);
        }
        for w in mesh.boundary_angles().windows(2) {
            assert!((w[1] - w[0]).rem_euclid(2.0 * PI) > 0.0);
        }
    }

    #[test]
    fn conforming_with_circle_as_only_boundary() {
        let px = [
            PixelRegion::polygon(1, rectangle(-0.3, -0.3, 0.0, 0.0), iv()),
            PixelRegion::polygon(2, rectangle(0.0, -0.3, 0.3, 0.0), iv()),
            PixelRegion::polygon(3, rectangle(-0.3, 0.0, 0.0, 0.3), iv()),
        ];
        let mesh = build_disk_mesh(2, &px).unwrap();
        assert_eq!(mesh.boundary_edge_count().unwrap(), mesh.boundary_vertices().len());
        for id in 1..=3 {
            assert!((mesh.region_area(id) - 0.09).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_pixel_area() {
        let mesh = build_disk_mesh(3, &[PixelRegion::disk(1, [0.0, 0.0], 0.3, iv())]).unwrap();
        let exact = PI * 0.09;
        let polygon = 0.5 * 64.0 * 0.09 * (2.0 * PI / 64.0).sin();
        let area = mesh.region_area(1);
        assert!((area - polygon).abs() < 1e-12);
        assert!((area - exact).abs() / exact < 0.01);
    }

    #[test]
    fn vertex_count_grows_fourfold() {
        let a = build_disk_mesh(2, &[]).unwrap().num_vertices() as f64;
        let b = build_disk_mesh(3, &[]).unwrap().num_vertices() as f64;
        assert!((b / a - 4.0).abs() < 0.3, "ratio {}", b / a);
    }

    #[test]
    fn locate_point_cases() {
        let mesh = build_disk_mesh(1, &[]).unwrap();
        assert_eq!(mesh.locate_point([2.0, 0.0]), None);
        let c = mesh.triangle_centroid(0);
        assert_eq!(mesh.locate_point(c), Some(0));
        // a vertex shared by several triangles goes to the lowest index
        let v = mesh.triangles()[5][1];
        let lowest = mesh.triangles().iter().position(|t| t.contains(&v)).unwrap();
        assert_eq!(mesh.locate_point(mesh.vertices()[v]), Some(lowest));
        // a point between a chord and the circle
        let a = PI / 72.0;
        let t = mesh.locate_point([0.99999 * a.cos(), 0.99999 * a.sin()]).unwrap();
        assert!(mesh.triangles()[t].contains(&0) && mesh.triangles()[t].contains(&1));
    }

    #[test]
    fn shared_edge_tie_break() {
        let mesh = build_disk_mesh(1, &[]).unwrap();
        let t = mesh.triangles()[10];
        let (u, v) = (t[0], t[1]);
        let mid = lerp(mesh.vertices()[u], mesh.vertices()[v], 0.5);
        let owners: Vec<usize> = mesh
            .triangles()
            .iter()
            .enumerate()
            .filter(|(_, t)| t.contains(&u) && t.contains(&v))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(mesh.locate_point(mid), owners.iter().copied().min());
    }

    #[test]
    fn text_round_trip() {
        let mesh = build_disk_mesh(1, &[PixelRegion::disk(1, [0.1, 0.0], 0.3, iv())]).unwrap();
        let mut buf = Vec::new();
        mesh.write_text(&mut buf).unwrap();
        let back = DiskMesh::read_text(&buf[..]).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn malformed_text_rejected() {
        assert!(DiskMesh::read_text(&b"diskmesh v2\n"[..]).is_err());
        assert!(DiskMesh::read_text(&b"diskmesh v1\n3 1\n"[..]).is_err());
    }

    #[test]
    fn overlapping_pixels_rejected() {
        let px = [
            PixelRegion::disk(1, [0.0, 0.0], 0.3, iv()),
            PixelRegion::disk(2, [0.1, 0.0], 0.3, iv()),
        ];
        assert!(matches!(build_disk_mesh(1, &px), Err(Error::Geometry(_))));
        let near_edge = [PixelRegion::disk(1, [0.8, 0.0], 0.18, iv())];
        assert!(matches!(build_disk_mesh(1, &near_edge), Err(Error::Geometry(_))));
    }
}
