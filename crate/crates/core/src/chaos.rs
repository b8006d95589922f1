//! Multivariate orthonormal Legendre chaos on a product of uniform intervals.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::ContrastInterval;
use crate::quadrature::gauss_legendre;

/// Total-degree Legendre basis `ψ_i(θ) = Π_q p_{α_q}(ξ_q)` with
/// `θ_q = c_q + h_q ξ_q` and `p_n` orthonormal under the uniform
/// probability measure on `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosBasis {
    degree: usize,
    intervals: Vec<ContrastInterval>,
    indices: Vec<Vec<usize>>,
    lookup: HashMap<Vec<usize>, usize>,
}

/// Sparse `M×M` matrix `G[i][j] = E[θ_q ψ_i ψ_j]` stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

/// `E[ξ p_n p_{n+1}]` for orthonormal Legendre polynomials.
pub fn legendre_recurrence(n: usize) -> f64 {
    let k = (n + 1) as f64;
    k / (4.0 * k * k - 1.0).sqrt()
}

/// Orthonormal Legendre polynomial `√(2n+1) P_n(x)`.
pub fn orthonormal_legendre(n: usize, x: f64) -> f64 {
    crate::quadrature::legendre_with_derivative(n, x).0 * ((2 * n + 1) as f64).sqrt()
}

/// `C(q + m, m)`
pub fn chaos_dimension(q: usize, m: usize) -> usize {
    let mut c: u128 = 1;
    for k in 1..=m as u128 {
        c = c * (q as u128 + k) / k;
    }
    c as usize
}

fn compositions(q: usize, total: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() + 1 == q {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        compositions(q, total - first, prefix, out);
        prefix.pop();
    }
}

impl ChaosBasis {
    /// Basis of total degree `≤ degree`. Multi-indices are ordered by degree,
    /// then in decreasing lexicographic order (`(1,0,0)`, `(0,1,0)`, ...).
    pub fn new(intervals: &[ContrastInterval], degree: usize) -> Result<Self> {
        for iv in intervals {
            iv.validate()?;
        }
        let q = intervals.len();
        let mut indices = Vec::with_capacity(chaos_dimension(q, degree));
        if q == 0 {
            indices.push(Vec::new());
        } else {
            for total in 0..=degree {
                compositions(q, total, &mut Vec::with_capacity(q), &mut indices);
            }
        }
        let lookup = indices.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Ok(ChaosBasis {
            degree,
            intervals: intervals.to_vec(),
            indices,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_variables(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[ContrastInterval] {
        &self.intervals
    }

    pub fn multi_index(&self, i: usize) -> &[usize] {
        &self.indices[i]
    }

    pub fn index_of(&self, alpha: &[usize]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    /// `ψ_i(θ)`
    pub fn eval(&self, i: usize, theta: &[f64]) -> f64 {
        self.indices[i]
            .iter()
            .zip(&self.intervals)
            .zip(theta)
            .map(|((&n, iv), &t)| {
                let xi = if iv.width() == 0.0 { 0.0 } else { (t - iv.midpoint()) / iv.half_width() };
                orthonormal_legendre(n, xi)
            })
            .product()
    }

    /// `E[θ_q ψ_i ψ_j]` from the three-term recurrence.
    pub fn coupling(&self, q: usize) -> CouplingMatrix {
        let c = self.intervals[q].midpoint();
        let h = self.intervals[q].half_width();
        let rows = self
            .indices
            .iter()
            .enumerate()
            .map(|(i, alpha)| {
                let mut row = vec![(i, c)];
                let mut nb = alpha.clone();
                if alpha[q] > 0 {
                    nb[q] = alpha[q] - 1;
                    if let Some(j) = self.index_of(&nb) {
                        row.push((j, h * legendre_recurrence(alpha[q] - 1)));
                    }
                }
                nb[q] = alpha[q] + 1;
                if let Some(j) = self.index_of(&nb) {
                    row.push((j, h * legendre_recurrence(alpha[q])));
                }
                row.retain(|&(_, v)| v != 0.0);
                row.sort_by_key(|&(j, _)| j);
                row
            })
            .collect();
        CouplingMatrix { rows }
    }

    pub fn couplings(&self) -> Vec<CouplingMatrix> {
        (0..self.num_variables()).map(|q| self.coupling(q)).collect()
    }

    /// Largest deviation of the Gram matrix `E[ψ_i ψ_j]` from the identity,
    /// by tensor Gauss–Legendre quadrature.
    pub fn orthonormality_defect(&self) -> Result<f64> {
        let q = self.num_variables();
        let nodes = self.degree + 1;
        let total = nodes.checked_pow(q as u32).filter(|&t| t <= 2_000_000).ok_or_else(|| {
            Error::contract("orthonormality check too large for tensor quadrature")
        })?;
        let (x, w) = gauss_legendre(nodes);
        let m = self.len();
        let mut gram = vec![0.0; m * m];
        let mut digits = vec![0usize; q];
        let mut psi = vec![0.0; m];
        for _ in 0..total {
            let mut weight = 1.0;
            for &d in &digits {
                weight *= 0.5 * w[d];
            }
            for (i, p) in psi.iter_mut().enumerate() {
                *p = self.eval_xi(i, &digits, &x);
            }
            for i in 0..m {
                for j in 0..m {
                    gram[i * m + j] += weight * psi[i] * psi[j];
                }
            }
            for d in digits.iter_mut() {
                *d += 1;
                if *d < nodes {
                    break;
                }
                *d = 0;
            }
        }
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[i * m + j] - target).abs());
            }
        }
        Ok(worst)
    }

    fn eval_xi(&self, i: usize, digits: &[usize], x: &[f64]) -> f64 {
        self.indices[i]
            .iter()
            .zip(digits)
            .map(|(&n, &d)| orthonormal_legendre(n, x[d]))
            .product()
    }
}

impl CouplingMatrix {
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|&&(k, _)| k == j)
            .map_or(0.0, |&(_, v)| v)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let m = self.rows.len();
        (0..m).map(|i| (0..m).map(|j| self.get(i, j)).collect()).collect()
    }
}
