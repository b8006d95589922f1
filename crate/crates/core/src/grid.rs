//! Regular evaluation grids over `[−1, 1]²` clipped to a disk, with CSV and
//! PGM export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per side.
    pub size: usize,
    /// Points with `|p| > clip` are outside.
    pub clip: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { size: 101, clip: 0.95 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::contract("grid needs at least 2 points per side"));
        }
        if !(self.clip > 0.0 && self.clip <= 0.99) {
            return Err(Error::contract("grid clip radius must lie in (0, 0.99]"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 / (self.size - 1) as f64
    }

    /// Point `(i, j)` with `x` varying along `i`; index `j·size + i`.
    pub fn point(&self, i: usize, j: usize) -> Point {
        let h = self.spacing();
        [-1.0 + h * i as f64, -1.0 + h * j as f64]
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.size)
            .flat_map(|j| (0..self.size).map(move |i| (i, j)))
            .map(|(i, j)| self.point(i, j))
            .collect()
    }

    pub fn inside(&self, p: Point) -> bool {
        crate::geometry::norm(p) <= self.clip
    }
}

/// Values on a [`GridSpec`]; outside points carry 0.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorGrid {
    pub spec: GridSpec,
    pub points: Vec<Point>,
    pub inside: Vec<bool>,
    pub values: Vec<f64>,
    /// Set when the input carried no information (e.g. a zero matrix).
    pub degenerate: bool,
}

impl IndicatorGrid {
    pub fn from_fn(spec: GridSpec, f: impl Fn(Point) -> f64 + Sync) -> Result<Self> {
        use rayon::prelude::*;
        spec.validate()?;
        let points = spec.points();
        let inside: Vec<bool> = points.iter().map(|&p| spec.inside(p)).collect();
        let values = points
            .par_iter()
            .zip(&inside)
            .map(|(&p, &ins)| if ins { f(p) } else { 0.0 })
            .collect();
        Ok(IndicatorGrid {
            spec,
            points,
            inside,
            values,
            degenerate: false,
        })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Values divided by the maximum (all zero if the maximum is zero).
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.max();
        self.values.iter().map(|&v| if m > 0.0 { v / m } else { 0.0 }).collect()
    }

    /// Inside points with `value ≥ fraction·max`; empty if the grid is all zero.
    pub fn superlevel_set(&self, fraction: f64) -> Vec<Point> {
        let m = self.max();
        if m <= 0.0 {
            return Vec::new();
        }
        self.points
            .iter()
            .zip(&self.values)
            .zip(&self.inside)
            .filter(|((_, &v), &ins)| ins && v >= fraction * m)
            .map(|((&p, _), _)| p)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,value,inside\n");
        for ((p, v), ins) in self.points.iter().zip(&self.values).zip(&self.inside) {
            writeln!(s, "{:.6},{:.6},{:.17e},{}", p[0], p[1], v, u8::from(*ins)).unwrap();
        }
        s
    }

    /// Binary 8-bit PGM, top row at `y = 1`, scaled so the maximum is 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let n = self.spec.size;
        let m = self.max();
        let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
        for j in (0..n).rev() {
            for i in 0..n {
                let v = self.values[j * n + i];
                let g = if m > 0.0 { (255.0 * v / m).round().clamp(0.0, 255.0) } else { 0.0 };
                out.push(g as u8);
            }
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.pgm` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::io::write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        crate::io::write_atomic(&dir.join(format!("{stem}.pgm")), &self.to_pgm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_exports() {
        let spec = GridSpec { size: 5, clip: 0.95 };
        let g = IndicatorGrid::from_fn(spec, |p| p[1] + 2.0).unwrap();
        assert_eq!(g.points[1], [-0.5, -1.0]);
        assert!(!g.inside[0] && g.inside[12]);
        assert_eq!(g.values[0], 0.0);
        let csv = g.to_csv();
        assert!(csv.starts_with("x,y,value,inside\n"));
        assert_eq!(csv.lines().count(), 26);
        let pgm = g.to_pgm();
        let header = b"P5\n5 5\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 25);
        // top row is y = 1; its middle point (0, 1) is outside the clip
        assert_eq!(pgm[header.len() + 2], 0);
        // center pixel
        assert_eq!(pgm[header.len() + 12], (255.0 * 2.0 / g.max()).round() as u8);
    }

    #[test]
    fn zero_grid() {
        let g = IndicatorGrid::from_fn(GridSpec::default(), |_| 0.0).unwrap();
        assert!(g.superlevel_set(0.5).is_empty());
        assert!(g.normalized().iter().all(|v| *v == 0.0));
        assert!(IndicatorGrid::from_fn(GridSpec { size: 1, clip: 0.5 }, |_| 0.0).is_err());
    }
}
