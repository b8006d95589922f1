//! Factorization Method: dipole traces, SVD, Picard-quotient indicator and
//! grid scans.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{project_potentials, StiffnessDecomposition};
use crate::geometry::{norm, Point};
use crate::grid::{GridSpec, IndicatorGrid};
use crate::mesh::DiskMesh;

/// Dipoles with `|z|` above this are rejected as ill-conditioned.
pub const MAX_DIPOLE_RADIUS: f64 = 0.99;
/// Singular values below this fraction of `λ_1` are left out of the quotient.
pub const REGULARIZATION_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DipoleTrace {
    pub z: Point,
    pub d: [f64; 2],
    pub coefficients: Vec<f64>,
}

/// Fourier coefficients of the Neumann dipole potential `Φ_{z,d}` on the
/// unit circle, `Φ|∂D = Re(d̂/(x − z))/π` with `d̂ = d_1 + i d_2`.
pub fn dipole_trace(z: Point, d: [f64; 2], t_max: usize) -> Result<DipoleTrace> {
    let r = norm(z);
    if !(r <= MAX_DIPOLE_RADIUS) {
        return Err(Error::DipoleConditioning(r));
    }
    let dn = norm(d);
    if !(dn > 0.0) || !dn.is_finite() {
        return Err(Error::contract("dipole moment must be a nonzero vector"));
    }
    let dh = Complex64::new(d[0] / dn, d[1] / dn);
    let zc = Complex64::new(z[0], z[1]);
    let scale = 1.0 / PI.sqrt();
    let mut coefficients = vec![0.0; 2 * t_max];
    let mut w = dh;
    for t in 1..=t_max {
        coefficients[2 * t - 2] = w.im * scale;
        coefficients[2 * t - 1] = w.re * scale;
        w *= zc;
    }
    Ok(DipoleTrace {
        z,
        d: [d[0] / dn, d[1] / dn],
        coefficients,
    })
}

/// The three moments `(cos(2πr/3), sin(2πr/3))`, `r = 1, 2, 3`.
pub fn scan_directions() -> [[f64; 2]; 3] {
    let d = |r: f64| {
        let a = 2.0 * PI * r / 3.0;
        [a.cos(), a.sin()]
    };
    [d(1.0), d(2.0), d(3.0)]
}

/// Radius of the default dipole mollifier.
pub const DEFAULT_MOLLIFIER_RADIUS: f64 = 0.1;

/// Dipole trace coefficients from a FEM solve whose source is the dipole
/// smeared by the radial bump `(1 − |x − z|²/δ²)⁴`. Outside the bump the
/// exact potential coincides with the point dipole's, so only the
/// discretization error remains.
pub fn fem_dipole_coefficients(
    mesh: &DiskMesh,
    decomp: &StiffnessDecomposition,
    z: Point,
    d: [f64; 2],
    delta: f64,
) -> Result<Vec<f64>> {
    if !(delta > 0.0) || norm(z) + delta >= 1.0 {
        return Err(Error::contract(format!("mollifier radius {delta} does not fit inside the disk around z")));
    }
    let dn = norm(d);
    if !(dn > 0.0) {
        return Err(Error::contract("dipole moment must be non-zero"));
    }
    let d = [d[0] / dn, d[1] / dn];
    let mut load = vec![0.0; decomp.n()];
    let mut mass = 0.0;
    for t in 0..mesh.num_triangles() {
        let p = mesh.triangle_points(t);
        let c = mesh.triangle_centroid(t);
        let reach = p.iter().map(|&v| crate::geometry::dist(v, c)).fold(0.0, f64::max);
        if crate::geometry::dist(c, z) >= delta + reach {
            continue;
        }
        let w = bump_integral(p, z, delta, 4);
        if w == 0.0 {
            continue;
        }
        mass += w;
        let (_, g) = crate::fem::hat_gradients(mesh, t)?;
        for (k, &v) in mesh.triangles()[t].iter().enumerate() {
            load[v] += w * (d[0] * g[k][0] + d[1] * g[k][1]);
        }
    }
    if mass <= 0.0 {
        return Err(Error::contract("mollifier support contains no triangle"));
    }
    load.iter_mut().for_each(|b| *b /= mass);
    let theta = vec![0.0; decomp.pixels().len()];
    let factor = decomp.factor(1.0, &theta)?;
    let u = factor.solve_loads(&[&load]);
    let l = project_potentials(decomp, &u);
    Ok(l.column(0).iter().copied().collect())
}

/// Integral of the unnormalized bump over a triangle: `depth` uniform
/// subdivisions, edge-midpoint rule on each piece.
fn bump_integral(p: [Point; 3], z: Point, delta: f64, depth: u32) -> f64 {
    if depth == 0 {
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
        let eta = |x: Point| {
            let s = ((x[0] - z[0]).powi(2) + (x[1] - z[1]).powi(2)) / (delta * delta);
            if s < 1.0 {
                (1.0 - s).powi(4)
            } else {
                0.0
            }
        };
        let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        return area / 3.0 * (eta(mid(p[0], p[1])) + eta(mid(p[1], p[2])) + eta(mid(p[2], p[0])));
    }
    let m = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let (a, b, c) = (m(p[0], p[1]), m(p[1], p[2]), m(p[2], p[0]));
    [[p[0], a, c], [a, p[1], b], [c, b, p[2]], [a, b, c]]
        .into_iter()
        .map(|q| bump_integral(q, z, delta, depth - 1))
        .sum()
}

#[derive(Debug, Clone)]
pub struct SvdTriplets {
    pub values: Vec<f64>,
    /// Left singular vectors as columns.
    pub u: DMatrix<f64>,
    /// Right singular vectors as columns.
    pub v: DMatrix<f64>,
}

pub fn svd_of(l: &DMatrix<f64>) -> Result<SvdTriplets> {
    if l.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("matrix has non-finite entries"));
    }
    let svd = l.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&k| svd.singular_values[k]).collect();
    let u = DMatrix::from_columns(&order.iter().map(|&k| u.column(k)).collect::<Vec<_>>());
    let v = DMatrix::from_columns(&order.iter().map(|&k| vt.row(k).transpose()).collect::<Vec<_>>());
    Ok(SvdTriplets { values, u, v })
}

/// `τ = max{t : λ_t ≥ error_estimate}` clamped to `[1, len]`.
pub fn select_cutoff(values: &[f64], error_estimate: f64) -> usize {
    let count = values.iter().take_while(|&&l| l >= error_estimate).count();
    count.clamp(1, values.len().max(1))
}

/// Picard quotient `Σ (F·v_t)² / Σ (F·v_t)²/λ_t` over `t ≤ τ`.
pub fn indicator(f: &[f64], svd: &SvdTriplets, tau: usize) -> Result<f64> {
    let n = svd.values.len();
    if tau == 0 || tau > n {
        return Err(Error::contract(format!("cutoff {tau} outside 1..={n}")));
    }
    if f.len() != n {
        return Err(Error::contract("dipole coefficient length differs from matrix size"));
    }
    let lambda1 = svd.values[0];
    let floor = REGULARIZATION_FLOOR * lambda1;
    let fv = DVector::from_column_slice(f);
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..tau {
        let l = svd.values[t];
        if !(l > 0.0) || l < floor {
            continue;
        }
        let p = fv.dot(&svd.v.column(t));
        num += p * p;
        den += p * p / l;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffPolicy {
    /// Use exactly this many singular triplets.
    Fixed { tau: usize },
    /// Keep singular values at or above `level·‖L‖₂`.
    Noise { level: f64 },
}

#[derive(Debug, Clone)]
pub struct FactorizationScan {
    pub grid: IndicatorGrid,
    pub tau: usize,
    pub singular_values: Vec<f64>,
}

pub fn resolve_cutoff(svd: &SvdTriplets, policy: CutoffPolicy) -> Result<usize> {
    let n = svd.values.len();
    match policy {
        CutoffPolicy::Fixed { tau } if (1..=n).contains(&tau) => Ok(tau),
        CutoffPolicy::Fixed { tau } => Err(Error::contract(format!("cutoff {tau} outside 1..={n}"))),
        CutoffPolicy::Noise { level } if level >= 0.0 => Ok(select_cutoff(&svd.values, level * svd.values[0])),
        CutoffPolicy::Noise { level } => Err(Error::contract(format!("negative noise level {level}"))),
    }
}

/// Summed indicator over the three scan directions at every grid point.
pub fn scan(l: &DMatrix<f64>, spec: GridSpec, policy: CutoffPolicy) -> Result<FactorizationScan> {
    let (r, c) = l.shape();
    if r != c || r % 2 != 0 || r == 0 {
        return Err(Error::contract("measurement matrix must be 2T×2T"));
    }
    let svd = svd_of(l)?;
    let tau = resolve_cutoff(&svd, policy)?;
    let t_max = r / 2;
    let degenerate = svd.values[0] == 0.0;
    let dirs = scan_directions();
    let mut grid = IndicatorGrid::from_fn(spec, |p| {
        if degenerate {
            return 0.0;
        }
        dirs.iter()
            .map(|&d| {
                let f = dipole_trace(p, d, t_max).expect("grid clip keeps dipoles well inside");
                indicator(&f.coefficients, &svd, tau).unwrap_or(0.0)
            })
            .sum()
    })?;
    grid.degenerate = degenerate;
    Ok(FactorizationScan {
        grid,
        tau,
        singular_values: svd.values,
    })
}
