//! Fourier current patterns on the unit circle and FFT projection of
//! boundary traces onto them.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Sine,
    Cosine,
}

/// One current pattern `g(γ) = sin(tγ)/√π` or `cos(tγ)/√π`.
///
/// Patterns are indexed from 0: index `2(t-1)` is the sine and `2(t-1)+1`
/// the cosine of frequency `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurrentPattern {
    pub frequency: usize,
    pub kind: PatternKind,
}

impl CurrentPattern {
    pub fn from_index(k: usize) -> Self {
        CurrentPattern {
            frequency: k / 2 + 1,
            kind: if k % 2 == 0 {
                PatternKind::Sine
            } else {
                PatternKind::Cosine
            },
        }
    }

    pub fn index(&self) -> usize {
        2 * (self.frequency - 1) + usize::from(self.kind == PatternKind::Cosine)
    }

    pub fn eval(&self, gamma: f64) -> f64 {
        let a = self.frequency as f64 * gamma;
        let v = match self.kind {
            PatternKind::Sine => a.sin(),
            PatternKind::Cosine => a.cos(),
        };
        v / PI.sqrt()
    }
}

/// The first `2T` Fourier current patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurrentBasis {
    t_max: usize,
}

impl CurrentBasis {
    pub fn new(t_max: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::contract("need at least one frequency"));
        }
        Ok(CurrentBasis { t_max })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn len(&self) -> usize {
        2 * self.t_max
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn patterns(&self) -> impl Iterator<Item = CurrentPattern> {
        (0..self.len()).map(CurrentPattern::from_index)
    }
}

/// Maps values at equiangular boundary vertices to the coefficients of the
/// `2T` normalized Fourier patterns, via one FFT per trace.
#[derive(Clone)]
pub struct BoundaryProjector {
    nb: usize,
    t_max: usize,
    phase: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for BoundaryProjector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryProjector")
            .field("nb", &self.nb)
            .field("t_max", &self.t_max)
            .field("phase", &self.phase)
            .finish()
    }
}

/// Relative spacing tolerance for the equiangular check.
pub const EQUIANGULAR_TOL: f64 = 1e-10;

impl BoundaryProjector {
    /// `angles` are the polar angles of the boundary vertices in traversal order.
    pub fn new(angles: &[f64], t_max: usize) -> Result<Self> {
        let nb = angles.len();
        if nb < 4 * t_max {
            return Err(Error::Aliasing {
                boundary: nb,
                patterns: 2 * t_max,
                needed: 4 * t_max,
            });
        }
        let step = 2.0 * PI / nb as f64;
        for j in 0..nb {
            let d = (angles[(j + 1) % nb] - angles[j]).rem_euclid(2.0 * PI);
            if ((d - step) / step).abs() > EQUIANGULAR_TOL {
                return Err(Error::contract(format!(
                    "boundary vertices are not equiangular at position {j}"
                )));
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(nb);
        Ok(BoundaryProjector {
            nb,
            t_max,
            phase: angles[0],
            fft,
        })
    }

    pub fn for_mesh(mesh: &crate::mesh::DiskMesh, t_max: usize) -> Result<Self> {
        Self::new(&mesh.boundary_angles(), t_max)
    }

    pub fn boundary_len(&self) -> usize {
        self.nb
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// Fourier-pattern coefficients (length `2T`) of the trace `values`.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.nb, "trace length must match boundary size");
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        let scale = 2.0 * PI / self.nb as f64 / PI.sqrt();
        let mut out = vec![0.0; 2 * self.t_max];
        for t in 1..=self.t_max {
            let x = buf[t] * Complex64::from_polar(1.0, -(t as f64) * self.phase);
            out[2 * (t - 1)] = -x.im * scale;
            out[2 * (t - 1) + 1] = x.re * scale;
        }
        out
    }

    /// Values of pattern `k` at the boundary vertices.
    pub fn sample_pattern(&self, k: usize) -> Vec<f64> {
        let p = CurrentPattern::from_index(k);
        (0..self.nb)
            .map(|j| p.eval(self.phase + 2.0 * PI * j as f64 / self.nb as f64))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angles(nb: usize, phase: f64) -> Vec<f64> {
        (0..nb)
            .map(|j| phase + 2.0 * PI * j as f64 / nb as f64)
            .collect()
    }

    #[test]
    fn pattern_indexing() {
        assert_eq!(CurrentPattern::from_index(0).kind, PatternKind::Sine);
        assert_eq!(CurrentPattern::from_index(1).kind, PatternKind::Cosine);
        assert_eq!(CurrentPattern::from_index(5).frequency, 3);
        for k in 0..20 {
            assert_eq!(CurrentPattern::from_index(k).index(), k);
        }
    }

    #[test]
    fn projects_patterns_onto_unit_vectors() {
        for phase in [0.0, 0.3] {
            let proj = BoundaryProjector::new(&angles(64, phase), 8).unwrap();
            for k in 0..16 {
                let c = proj.project(&proj.sample_pattern(k));
                for (s, v) in c.iter().enumerate() {
                    let expect = if s == k { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-12, "k={k} s={s} v={v}");
                }
            }
        }
    }

    #[test]
    fn constants_are_invisible() {
        let proj = BoundaryProjector::new(&angles(40, 0.0), 5).unwrap();
        assert!(proj.project(&vec![3.0; 40]).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn aliasing_and_spacing_errors() {
        assert!(matches!(
            BoundaryProjector::new(&angles(16, 0.0), 5),
            Err(Error::Aliasing { .. })
        ));
        let mut a = angles(40, 0.0);
        a[3] += 1e-6;
        assert!(BoundaryProjector::new(&a, 5).is_err());
    }
}
