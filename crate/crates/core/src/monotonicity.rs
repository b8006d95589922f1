//! Linearized and nonlinear monotonicity tests over balls, and the mask
//! obtained from a lattice of test balls.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble, background_potential_gradient, difference_ntd_matrix, DifferenceLoads};
use crate::fourier::CurrentBasis;
use crate::geometry::{norm, ContrastInterval, PixelRegion, Point};
use crate::grid::{GridSpec, IndicatorGrid};
use crate::mesh::build_disk_mesh;
use crate::quadrature::gauss_legendre_on;
use crate::random_field::ContrastCase;

pub const DEFAULT_QUADRATURE_ORDER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestBall {
    pub center: Point,
    pub radius: f64,
}

impl TestBall {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        let b = TestBall { center, radius };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || norm(self.center) + self.radius >= 1.0 {
            return Err(Error::contract(format!(
                "ball at ({}, {}) with radius {} is not inside the disk",
                self.center[0], self.center[1], self.radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityDecision {
    pub ball: TestBall,
    pub case: ContrastCase,
    pub beta: f64,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

/// `S_B[s][t] = −∫_B ∇u_0^s·∇u_0^t dx` by Gauss–Legendre in the radius and
/// the trapezoidal rule in the angle, both with `order` nodes.
pub fn sensitivity_matrix(ball: &TestBall, t_max: usize, order: usize) -> Result<DMatrix<f64>> {
    ball.validate()?;
    let m = 2 * t_max;
    let (rs, ws) = gauss_legendre_on(order, 0.0, ball.radius);
    let nodes = order * order;
    let mut gx = DMatrix::zeros(nodes, m);
    let mut gy = DMatrix::zeros(nodes, m);
    let dphi = 2.0 * std::f64::consts::PI / order as f64;
    for (a, (&r, &w)) in rs.iter().zip(&ws).enumerate() {
        for b in 0..order {
            let phi = dphi * b as f64;
            let p = [ball.center[0] + r * phi.cos(), ball.center[1] + r * phi.sin()];
            let sw = (w * r * dphi).sqrt();
            let row = a * order + b;
            for k in 0..m {
                let g = background_potential_gradient(k, p);
                gx[(row, k)] = sw * g[0];
                gy[(row, k)] = sw * g[1];
            }
        }
    }
    Ok(-(gx.transpose() * &gx + gy.transpose() * &gy))
}

fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

/// Admissible `β` range for the linearized test.
pub fn check_beta(case: ContrastCase, alpha: f64, beta: f64) -> Result<()> {
    let ok = match case {
        ContrastCase::CaseA => beta > 0.0 && beta <= alpha / (1.0 + alpha) * (1.0 + 1e-12),
        ContrastCase::CaseB => beta > 0.0 && beta < alpha,
        ContrastCase::Neither => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "beta = {beta} is not admissible for {case:?} with alpha = {alpha}"
        )))
    }
}

/// Largest admissible `β` in case (a), midpoint of `(0, α)` in case (b).
pub fn default_beta(case: ContrastCase, alpha: f64) -> Result<f64> {
    match case {
        ContrastCase::CaseA => Ok(alpha / (1.0 + alpha)),
        ContrastCase::CaseB => Ok(alpha / 2.0),
        ContrastCase::Neither => Err(Error::contract("anomaly satisfies neither contrast condition")),
    }
}

/// Decides the linearized test from a precomputed `S_B`.
pub fn linearized_decision(
    l: &DMatrix<f64>,
    s_b: &DMatrix<f64>,
    ball: TestBall,
    case: ContrastCase,
    beta: f64,
    epsilon: f64,
) -> MonotonicityDecision {
    let test = match case {
        ContrastCase::CaseB => l + s_b * beta,
        _ => s_b * beta - l,
    };
    let min_eigenvalue = min_sym_eigenvalue(&test);
    MonotonicityDecision {
        ball,
        case,
        beta,
        min_eigenvalue,
        pass: min_eigenvalue >= -epsilon,
    }
}

/// Case (a): passes iff `β S_B − L ⪰ −ε`; case (b): iff `L + β S_B ⪰ −ε`.
pub fn linearized_test(
    l: &DMatrix<f64>,
    ball: TestBall,
    case: ContrastCase,
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<MonotonicityDecision> {
    check_beta(case, alpha, beta)?;
    let s_b = sensitivity_matrix(&ball, l.nrows() / 2, DEFAULT_QUADRATURE_ORDER)?;
    Ok(linearized_decision(l, &s_b, ball, case, beta, epsilon))
}

/// `Λ(1 ± αχ_B) − Λ(1)` on a mesh that resolves `B`.
pub fn ball_difference_matrix(ball: TestBall, contrast: f64, t_max: usize, level: u32) -> Result<DMatrix<f64>> {
    ball.validate()?;
    let px = PixelRegion::disk(1, ball.center, ball.radius, ContrastInterval::degenerate(contrast));
    let mesh = build_disk_mesh(level, &[px])?;
    let decomp = assemble(&mesh, CurrentBasis::new(t_max)?)?;
    let loads = DifferenceLoads::new(&mesh, &decomp)?;
    difference_ntd_matrix(&decomp, &loads, &[contrast])
}

/// Case (a): passes iff `Λ(1+αχ_B) − Λ(1) − L ⪰ −ε`; case (b): iff
/// `L − (Λ(1−αχ_B) − Λ(1)) ⪰ −ε`.
pub fn nonlinear_test(
    l: &DMatrix<f64>,
    ball: TestBall,
    case: ContrastCase,
    alpha: f64,
    epsilon: f64,
    level: u32,
) -> Result<MonotonicityDecision> {
    let contrast = match case {
        ContrastCase::CaseA if alpha > 0.0 => alpha,
        ContrastCase::CaseB if alpha > 0.0 && alpha < 1.0 => -alpha,
        _ => return Err(Error::contract(format!("alpha = {alpha} is not admissible for {case:?}"))),
    };
    let d = ball_difference_matrix(ball, contrast, l.nrows() / 2, level)?;
    let test = match case {
        ContrastCase::CaseB => l - d,
        _ => d - l,
    };
    let min_eigenvalue = min_sym_eigenvalue(&test);
    Ok(MonotonicityDecision {
        ball,
        case,
        beta: alpha,
        min_eigenvalue,
        pass: min_eigenvalue >= -epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallLattice {
    /// Centers per side over `[−1, 1]²`.
    pub size: usize,
    pub radius: f64,
    /// Centers with `|c| > clip` are skipped.
    pub clip: f64,
}

impl Default for BallLattice {
    fn default() -> Self {
        BallLattice {
            size: 41,
            radius: 0.05,
            clip: 0.9,
        }
    }
}

impl BallLattice {
    pub fn balls(&self) -> Result<Vec<TestBall>> {
        if self.size < 2 {
            return Err(Error::contract("ball lattice needs at least 2 centers per side"));
        }
        let h = 2.0 / (self.size - 1) as f64;
        let mut out = Vec::new();
        for j in 0..self.size {
            for i in 0..self.size {
                let c = [-1.0 + h * i as f64, -1.0 + h * j as f64];
                if norm(c) <= self.clip {
                    out.push(TestBall::new(c, self.radius)?);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct MonotonicityMask {
    pub grid: IndicatorGrid,
    pub decisions: Vec<MonotonicityDecision>,
}

/// Union of passing balls rasterized on `grid`; values are 0 or 1.
pub fn reconstruct_mask(
    l: &DMatrix<f64>,
    lattice: BallLattice,
    grid: GridSpec,
    case: ContrastCase,
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<MonotonicityMask> {
    check_beta(case, alpha, beta)?;
    let t_max = l.nrows() / 2;
    let decisions: Vec<MonotonicityDecision> = lattice
        .balls()?
        .par_iter()
        .map(|&b| {
            let s_b = sensitivity_matrix(&b, t_max, DEFAULT_QUADRATURE_ORDER)?;
            Ok(linearized_decision(l, &s_b, b, case, beta, epsilon))
        })
        .collect::<Result<_>>()?;
    let passing: Vec<TestBall> = decisions.iter().filter(|d| d.pass).map(|d| d.ball).collect();
    let grid = IndicatorGrid::from_fn(grid, |p| {
        let hit = passing
            .iter()
            .any(|b| crate::geometry::dist(p, b.center) <= b.radius);
        if hit {
            1.0
        } else {
            0.0
        }
    })?;
    Ok(MonotonicityMask { grid, decisions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_ball_is_diagonal() {
        let r = 0.4;
        let s = sensitivity_matrix(&TestBall::new([0.0, 0.0], r).unwrap(), 6, 32).unwrap();
        for i in 0..12 {
            let t = (i / 2 + 1) as i32;
            for j in 0..12 {
                let want = if i == j { -r.powi(2 * t) / t as f64 } else { 0.0 };
                assert!((s[(i, j)] - want).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn shrinks_like_area() {
        let c = [0.2, -0.3];
        let a = sensitivity_matrix(&TestBall::new(c, 0.02).unwrap(), 4, 32).unwrap().norm();
        let b = sensitivity_matrix(&TestBall::new(c, 0.01).unwrap(), 4, 32).unwrap().norm();
        assert!((a / b - 4.0).abs() < 0.05);
    }

    #[test]
    fn quadrature_self_convergence() {
        for (c, r) in [([0.3, 0.2], 0.3), ([-0.5, 0.4], 0.2), ([0.6, -0.1], 0.05)] {
            let ball = TestBall::new(c, r).unwrap();
            let a = sensitivity_matrix(&ball, 50, 32).unwrap();
            let b = sensitivity_matrix(&ball, 50, 64).unwrap();
            assert!((&a - &b).abs().max() <= 1e-10, "center {c:?}");
        }
    }

    #[test]
    fn sensitivity_is_negative_semidefinite_and_symmetric() {
        let s = sensitivity_matrix(&TestBall::new([0.4, 0.1], 0.2).unwrap(), 10, 32).unwrap();
        assert!((&s - s.transpose()).abs().max() < 1e-15);
        assert!(s.clone().symmetric_eigenvalues().max() <= 1e-15);
    }

    #[test]
    fn off_center_ball_matches_direct_integration() {
        // brute-force midpoint rule on a fine Cartesian grid
        let ball = TestBall::new([0.3, -0.2], 0.1).unwrap();
        let s = sensitivity_matrix(&ball, 2, 32).unwrap();
        let n = 800;
        let h = 2.0 * ball.radius / n as f64;
        let mut acc = DMatrix::<f64>::zeros(4, 4);
        for i in 0..n {
            for j in 0..n {
                let p = [ball.center[0] - ball.radius + (i as f64 + 0.5) * h, ball.center[1] - ball.radius + (j as f64 + 0.5) * h];
                if crate::geometry::dist(p, ball.center) > ball.radius {
                    continue;
                }
                let g: Vec<[f64; 2]> = (0..4).map(|k| background_potential_gradient(k, p)).collect();
                for a in 0..4 {
                    for b in 0..4 {
                        acc[(a, b)] -= h * h * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    }
                }
            }
        }
        assert!((&acc - &s).abs().max() < 2e-4 * s.abs().max());
    }

    #[test]
    fn beta_ranges() {
        assert!(check_beta(ContrastCase::CaseA, 1.0, 0.5).is_ok());
        assert!(check_beta(ContrastCase::CaseA, 1.0, 0.6).is_err());
        assert!(check_beta(ContrastCase::CaseB, 0.3, 0.3).is_err());
        assert!(check_beta(ContrastCase::CaseB, 0.3, 0.15).is_ok());
        assert!(check_beta(ContrastCase::CaseA, 1.0, 0.0).is_err());
        assert!(TestBall::new([0.9, 0.0], 0.2).is_err());
    }

    #[test]
    fn zero_data_fails_every_case_a_ball() {
        let l = DMatrix::zeros(8, 8);
        let d = linearized_test(&l, TestBall::new([0.1, 0.1], 0.1).unwrap(), ContrastCase::CaseA, 1.0, 0.5, 0.0).unwrap();
        assert!(!d.pass && d.min_eigenvalue < 0.0);
        let lattice = BallLattice { size: 9, radius: 0.1, clip: 0.8 };
        let m = reconstruct_mask(&l, lattice, GridSpec { size: 21, clip: 0.95 }, ContrastCase::CaseA, 1.0, 0.5, 0.0).unwrap();
        assert!(m.grid.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_ball_anomaly_passes_inside_and_fails_outside() {
        // L = β_true S_A for a centered disk A of radius 0.4 is exactly the
        // linearized data; smaller concentric balls pass, far balls fail
        let a = TestBall::new([0.0, 0.0], 0.4).unwrap();
        let l = sensitivity_matrix(&a, 8, 32).unwrap() * 0.5;
        let inner = linearized_test(&l, TestBall::new([0.05, 0.0], 0.2).unwrap(), ContrastCase::CaseA, 1.0, 0.5, 1e-12).unwrap();
        assert!(inner.pass);
        let far = linearized_test(&l, TestBall::new([0.0, -0.75], 0.1).unwrap(), ContrastCase::CaseA, 1.0, 0.5, 1e-12).unwrap();
        assert!(!far.pass);
    }

    #[test]
    fn nonlinear_small_alpha_reduces_to_sign_test() {
        let l = -DMatrix::<f64>::identity(4, 4) * 1e-3;
        let ball = TestBall::new([0.2, 0.1], 0.1).unwrap();
        let d = nonlinear_test(&l, ball, ContrastCase::CaseA, 1e-9, 1e-8, 1).unwrap();
        assert!(d.pass);
        let d = nonlinear_test(&(-&l), ball, ContrastCase::CaseA, 1e-9, 1e-8, 1).unwrap();
        assert!(!d.pass);
        assert!(nonlinear_test(&l, ball, ContrastCase::CaseB, 1.5, 0.0, 1).is_err());
    }
}
