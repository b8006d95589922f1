//! Measurement matrices `L ≈ E(Λ(σ)) − Λ(1)`, the multiplicative noise
//! model, and the `ntd-diff v1` text format.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::BoundaryProjector;
use crate::random_field::unit_uniform;

pub const FORMAT_HEADER: &str = "ntd-diff v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Sfem,
    MonteCarlo,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtdDifferenceMatrix {
    pub matrix: DMatrix<f64>,
    pub t_max: usize,
    pub provenance: Provenance,
    pub noise_level: f64,
    pub seed: u64,
}

impl NtdDifferenceMatrix {
    pub fn new(matrix: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let (r, c) = matrix.shape();
        if r != c || r == 0 || r % 2 != 0 {
            return Err(Error::contract(format!("measurement matrix must be 2T×2T, got {r}×{c}")));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("measurement matrix has non-finite entries"));
        }
        Ok(NtdDifferenceMatrix {
            t_max: r / 2,
            matrix,
            provenance,
            noise_level: 0.0,
            seed: 0,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.t_max
    }

    /// `‖L − Lᵀ‖₂ / ‖L‖₂` (0 for the zero matrix).
    pub fn symmetry_defect(&self) -> f64 {
        let n = spectral_norm(&self.matrix);
        if n == 0.0 {
            0.0
        } else {
            spectral_norm(&(&self.matrix - self.matrix.transpose())) / n
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FORMAT_HEADER}").unwrap();
        writeln!(s, "T {} noise {:e} seed {}", self.t_max, self.noise_level, self.seed).unwrap();
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|j| format!("{:.16e}", self.matrix[(i, j)])).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }

    /// Parses the text format; provenance is not stored in the file and is
    /// reported as `provenance`.
    pub fn from_text<R: BufRead>(input: R, provenance: Provenance) -> Result<Self> {
        let bad = |m: String| Error::format("ntd-diff", m);
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad(format!("missing {what}")))?
                .map_err(Error::from)
        };
        if next("header")?.trim() != FORMAT_HEADER {
            return Err(bad("bad header".into()));
        }
        let meta = next("metadata line")?;
        let f: Vec<&str> = meta.split_whitespace().collect();
        if f.len() != 6 || f[0] != "T" || f[2] != "noise" || f[4] != "seed" {
            return Err(bad(format!("bad metadata line {meta:?}")));
        }
        let t_max: usize = f[1].parse().map_err(|_| bad("bad T".into()))?;
        let noise_level: f64 = f[3].parse().map_err(|_| bad("bad noise level".into()))?;
        let seed: u64 = f[5].parse().map_err(|_| bad("bad seed".into()))?;
        if t_max == 0 {
            return Err(bad("T must be positive".into()));
        }
        let n = 2 * t_max;
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            let line = next(&format!("row {i}"))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {i}: {e}")))?;
            if row.len() != n {
                return Err(bad(format!("row {i} has {} values, expected {n}", row.len())));
            }
            data.extend(row);
        }
        let matrix = DMatrix::from_row_slice(n, n, &data);
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite entry".into()));
        }
        Ok(NtdDifferenceMatrix {
            matrix,
            t_max,
            provenance,
            noise_level,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path, provenance: Provenance) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_text(std::io::BufReader::new(f), provenance)
    }
}

/// Column `t` of `L` holds the Fourier coefficients of `traces[t]`.
pub fn assemble_l(
    traces: &[Vec<f64>],
    projector: &BoundaryProjector,
    provenance: Provenance,
) -> Result<NtdDifferenceMatrix> {
    let m = 2 * projector.t_max();
    if traces.len() != m {
        return Err(Error::contract(format!("{} traces for {m} patterns", traces.len())));
    }
    let mut l = DMatrix::zeros(m, m);
    for (t, tr) in traces.iter().enumerate() {
        if tr.len() != projector.boundary_len() {
            return Err(Error::contract("trace length differs from boundary vertex count"));
        }
        for (s, c) in projector.project(tr).into_iter().enumerate() {
            l[(s, t)] = c;
        }
    }
    NtdDifferenceMatrix::new(l, provenance)
}

/// Largest singular value, via the symmetric eigenproblem of `MᵀM`
/// refined by a Rayleigh step on `M` itself.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let v = eig.eigenvectors.column(k);
    // ‖M v‖ for the top right singular vector avoids squaring the error
    (m * v).norm()
}

/// Uniform `[−1, 1]` matrix drawn row by row.
pub fn noise_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| 2.0 * unit_uniform(&mut rng) - 1.0).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// `L + level·‖L‖₂·E/‖E‖₂`. The perturbation is not symmetrized.
pub fn add_noise(l: &NtdDifferenceMatrix, level: f64, seed: u64) -> Result<NtdDifferenceMatrix> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::contract(format!("noise level {level} must be finite and non-negative")));
    }
    let mut out = l.clone();
    out.seed = seed;
    out.noise_level = level;
    if level == 0.0 {
        return Ok(out);
    }
    let norm = spectral_norm(&l.matrix);
    if norm == 0.0 {
        return Err(Error::DegenerateNorm);
    }
    let n = l.dim();
    let e = noise_matrix(n, n, seed);
    let scale = level * norm / spectral_norm(&e);
    out.matrix = &l.matrix + e * scale;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        noise_matrix(n, n, seed)
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm(&DMatrix::identity(7, 7)) - 1.0).abs() < 1e-15);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -5.0]));
        assert!((spectral_norm(&d) - 5.0).abs() < 1e-14);
        let m = sample_matrix(5, 42);
        let svd = m.clone().svd(false, false).singular_values.max();
        assert!((spectral_norm(&m) - svd).abs() <= 1e-10 * svd);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn noise_is_exact_and_reproducible() {
        let l = NtdDifferenceMatrix::new(sample_matrix(10, 1), Provenance::Sfem).unwrap();
        let zero = add_noise(&l, 0.0, 3).unwrap();
        assert_eq!(zero.matrix, l.matrix);
        let a = add_noise(&l, 1e-3, 3).unwrap();
        let b = add_noise(&l, 1e-3, 3).unwrap();
        assert_eq!(a.matrix, b.matrix);
        let rel = spectral_norm(&(&a.matrix - &l.matrix)) / spectral_norm(&l.matrix);
        assert!((rel - 1e-3).abs() <= 1e-12);
        assert_ne!(add_noise(&l, 1e-3, 4).unwrap().matrix, a.matrix);
    }

    #[test]
    fn noise_errors() {
        let z = NtdDifferenceMatrix::new(DMatrix::zeros(4, 4), Provenance::Sfem).unwrap();
        assert!(matches!(add_noise(&z, 0.1, 1), Err(Error::DegenerateNorm)));
        assert!(add_noise(&z, 0.0, 1).is_ok());
        assert!(matches!(add_noise(&z, -1.0, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn noise_draw_order_is_row_major() {
        let e = noise_matrix(3, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(e[(i, j)], 2.0 * unit_uniform(&mut rng) - 1.0);
            }
        }
    }

    #[test]
    fn assemble_from_traces() {
        let nb = 64;
        let angles: Vec<f64> = (0..nb).map(|j| 2.0 * std::f64::consts::PI * j as f64 / nb as f64).collect();
        let p = BoundaryProjector::new(&angles, 3).unwrap();
        let zero = assemble_l(&vec![vec![0.0; nb]; 6], &p, Provenance::Deterministic).unwrap();
        assert!(zero.matrix.iter().all(|v| *v == 0.0));
        let traces: Vec<Vec<f64>> = (0..6).map(|k| p.sample_pattern((k + 1) % 6)).collect();
        let l = assemble_l(&traces, &p, Provenance::Deterministic).unwrap();
        for t in 0..6 {
            for s in 0..6 {
                let want = if s == (t + 1) % 6 { 1.0 } else { 0.0 };
                assert!((l.matrix[(s, t)] - want).abs() < 1e-10);
            }
        }
        assert!(assemble_l(&traces[..5], &p, Provenance::Deterministic).is_err());
    }

    #[test]
    fn malformed_files() {
        let ok = NtdDifferenceMatrix::new(sample_matrix(2, 5), Provenance::Sfem).unwrap().to_text();
        let parse = |s: &str| NtdDifferenceMatrix::from_text(s.as_bytes(), Provenance::Sfem);
        assert!(parse(&ok).is_ok());
        assert!(matches!(parse(&ok.replace("v1", "v2")), Err(Error::Format { .. })));
        assert!(matches!(parse(&ok.replace("T 1", "T 2")), Err(Error::Format { .. })));
        let truncated: String = ok.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse(&truncated), Err(Error::Format { .. })));
        assert!(matches!(parse(&ok.replacen("e", "x", 3)), Err(Error::Format { .. })));
        assert!(NtdDifferenceMatrix::new(DMatrix::zeros(3, 3), Provenance::Sfem).is_err());
    }

    proptest! {
        #[test]
        fn file_round_trip_is_exact(seed in any::<u64>(), t in 1usize..5, level in 0.0f64..0.1) {
            let mut l = NtdDifferenceMatrix::new(sample_matrix(2 * t, seed) * 1e-3, Provenance::MonteCarlo).unwrap();
            l.noise_level = level;
            l.seed = seed;
            let back = NtdDifferenceMatrix::from_text(l.to_text().as_bytes(), Provenance::MonteCarlo).unwrap();
            prop_assert_eq!(back, l);
        }
    }
}
