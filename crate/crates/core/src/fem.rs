//! Piecewise-linear FEM for the conductivity equation with Neumann data.
//!
//! The conductivity `c + Σ θ_q χ_q` enters through an affine stiffness
//! decomposition `K = c·K_0 + Σ θ_q K_q`, where `K_0` is the unit-conductivity
//! stiffness over all triangles and `K_q` the unit stiffness restricted to
//! pixel `q`. Potentials are normalized to zero boundary mean. Linear systems
//! are solved on the subspace obtained by grounding one interior vertex; since
//! constants span the kernel of every `K`, this yields exactly the
//! multiplier-constrained solution after the boundary mean is removed.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, Side};
use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{BoundaryProjector, CurrentBasis, CurrentPattern, PatternKind};
use crate::geometry::Point;
use crate::mesh::DiskMesh;
use crate::quadrature::gauss_legendre;
use crate::sparse::CsrMatrix;

/// Default relative residual for deterministic solves.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;

/// How the Neumann loads `∫ g φ_j ds` are evaluated on the polygonal boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryLoadRule {
    /// `(2π/nb)·g(γ_j)` at each boundary vertex. This is the quadrature dual
    /// to the FFT projection, so NtD matrices are exact Galerkin quadratic
    /// forms (symmetric and monotone to solver precision).
    #[default]
    Trapezoidal,
    /// Closed-form integrals of `g` against the hat functions along each
    /// boundary edge, with the angle linear in edge arc length.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LinearMethod {
    /// Sparse Cholesky on the grounded system.
    #[default]
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    Pcg { max_iter: usize },
}

#[derive(Debug, Clone)]
pub struct PixelStiffness {
    pub id: usize,
    pub triangles: Vec<usize>,
    pub matrix: CsrMatrix,
    /// Position of each entry of `matrix` inside the background pattern.
    positions: Vec<usize>,
}

/// Affine stiffness decomposition together with boundary data.
#[derive(Debug, Clone)]
pub struct StiffnessDecomposition {
    basis: CurrentBasis,
    background: CsrMatrix,
    pixels: Vec<PixelStiffness>,
    boundary: Vec<usize>,
    boundary_mass: Vec<f64>,
    boundary_loads: Vec<Vec<f64>>,
    projector: BoundaryProjector,
    grounded: GroundedPattern,
}

/// Lower-triangular CSC pattern of the grounded stiffness and its symbolic
/// Cholesky factorization, shared by every conductivity.
#[derive(Debug, Clone)]
struct GroundedPattern {
    ground: usize,
    symbolic: SymbolicSparseColMat<usize>,
    /// For each stored lower entry, its position in the background CSR values.
    source: Vec<usize>,
    llt: SymbolicLlt<usize>,
}

/// Nodal values of a potential with zero boundary mean.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalPotential {
    pub values: Vec<f64>,
    pub pattern: Option<usize>,
    pub background: f64,
    pub contrast: Vec<f64>,
    pub residual: f64,
}

fn local_stiffness(p: [Point; 3]) -> Result<(f64, [[f64; 2]; 3])> {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    if !(det > 0.0) {
        return Err(Error::DegenerateTriangle {
            index: usize::MAX,
            area: 0.5 * det,
        });
    }
    let mut grads = [[0.0; 2]; 3];
    for i in 0..3 {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        grads[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    Ok((0.5 * det, grads))
}

/// Gradients of the P1 hat functions of triangle `t` and its area.
pub fn hat_gradients(mesh: &DiskMesh, t: usize) -> Result<(f64, [[f64; 2]; 3])> {
    local_stiffness(mesh.triangle_points(t)).map_err(|e| match e {
        Error::DegenerateTriangle { area, .. } => Error::DegenerateTriangle { index: t, area },
        other => other,
    })
}

fn stiffness_triplets(
    mesh: &DiskMesh,
    triangles: impl Iterator<Item = usize>,
) -> Result<Vec<(usize, usize, f64)>> {
    let mut trip = Vec::new();
    for t in triangles {
        let (area, g) = hat_gradients(mesh, t)?;
        let tri = mesh.triangles()[t];
        for i in 0..3 {
            for j in 0..3 {
                let v = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                trip.push((tri[i], tri[j], v));
            }
        }
    }
    Ok(trip)
}

/// Assembles the stiffness decomposition with trapezoidal boundary loads.
pub fn assemble(mesh: &DiskMesh, basis: CurrentBasis) -> Result<StiffnessDecomposition> {
    assemble_with(mesh, basis, BoundaryLoadRule::default())
}

pub fn assemble_with(
    mesh: &DiskMesh,
    basis: CurrentBasis,
    rule: BoundaryLoadRule,
) -> Result<StiffnessDecomposition> {
    let n = mesh.num_vertices();
    let projector = BoundaryProjector::for_mesh(mesh, basis.t_max())?;
    let background = CsrMatrix::from_triplets(n, stiffness_triplets(mesh, 0..mesh.num_triangles())?);

    let mut pixels = Vec::new();
    for id in mesh.region_ids() {
        let triangles: Vec<usize> = (0..mesh.num_triangles())
            .filter(|&t| mesh.region_of_triangle()[t] == id)
            .collect();
        let matrix = CsrMatrix::from_triplets(n, stiffness_triplets(mesh, triangles.iter().copied())?);
        let mut positions = Vec::with_capacity(matrix.nnz());
        for i in 0..n {
            for &j in matrix.row(i).0 {
                positions.push(background.position(i, j).expect("pixel pattern within background"));
            }
        }
        pixels.push(PixelStiffness {
            id,
            triangles,
            matrix,
            positions,
        });
    }

    let boundary = mesh.boundary_vertices().to_vec();
    let nb = boundary.len();
    let mut boundary_mass = vec![0.0; n];
    for j in 0..nb {
        let (a, b) = (boundary[j], boundary[(j + 1) % nb]);
        let len = crate::geometry::dist(mesh.vertices()[a], mesh.vertices()[b]);
        boundary_mass[a] += 0.5 * len;
        boundary_mass[b] += 0.5 * len;
    }

    let angles = mesh.boundary_angles();
    let boundary_loads = basis
        .patterns()
        .map(|p| {
            let mut load = vec![0.0; n];
            match rule {
                BoundaryLoadRule::Trapezoidal => {
                    let w = 2.0 * PI / nb as f64;
                    for j in 0..nb {
                        load[boundary[j]] = w * p.eval(angles[j]);
                    }
                }
                BoundaryLoadRule::Exact => {
                    for j in 0..nb {
                        let (a, b) = (boundary[j], boundary[(j + 1) % nb]);
                        let len = crate::geometry::dist(mesh.vertices()[a], mesh.vertices()[b]);
                        let span = (angles[(j + 1) % nb] - angles[j]).rem_euclid(2.0 * PI);
                        let (ia, ib) = edge_load(p, angles[j], span, len);
                        load[a] += ia;
                        load[b] += ib;
                    }
                }
            }
            load
        })
        .collect();

    let ground = (0..n)
        .min_by(|&a, &b| {
            crate::geometry::norm(mesh.vertices()[a])
                .total_cmp(&crate::geometry::norm(mesh.vertices()[b]))
        })
        .expect("non-empty mesh");
    let grounded = GroundedPattern::new(&background, ground)?;

    Ok(StiffnessDecomposition {
        basis,
        background,
        pixels,
        boundary,
        boundary_mass,
        boundary_loads,
        projector,
        grounded,
    })
}

/// `∫ g(γ_a + s) (1 - s/Δ) ds` and `∫ g(γ_a + s) (s/Δ) ds` over `[0, Δ]`,
/// scaled by `len/Δ` (chord length per radian).
fn edge_load(p: CurrentPattern, gamma_a: f64, span: f64, len: f64) -> (f64, f64) {
    let t = p.frequency as f64;
    let x = t * span;
    // J0 = ∫ e^{its} ds, J1 = ∫ (s/Δ) e^{its} ds over [0, Δ]
    let (j0, j1) = if x < 0.5 {
        let mut j0 = Complex64::new(0.0, 0.0);
        let mut j1 = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        let ix = Complex64::new(0.0, x);
        for k in 0..30 {
            if k > 0 {
                term = term * ix / k as f64;
            }
            j0 += term / (k as f64 + 1.0);
            j1 += term / (k as f64 + 2.0);
        }
        (j0 * span, j1 * span)
    } else {
        let e = Complex64::from_polar(1.0, x);
        let it = Complex64::new(0.0, t);
        let j0 = (e - 1.0) / it;
        let j1 = (e * span / it + (e - 1.0) / (t * t)) / span;
        (j0, j1)
    };
    let phase = Complex64::from_polar(1.0 / PI.sqrt(), t * gamma_a);
    let (wa, wb) = (phase * (j0 - j1), phase * j1);
    let pick = |z: Complex64| match p.kind {
        PatternKind::Sine => z.im,
        PatternKind::Cosine => z.re,
    };
    let scale = len / span;
    (scale * pick(wa), scale * pick(wb))
}

impl GroundedPattern {
    fn new(background: &CsrMatrix, ground: usize) -> Result<Self> {
        let n = background.n();
        let red = |v: usize| if v > ground { v - 1 } else { v };
        let mut col_ptr = vec![0usize];
        let mut row_idx = Vec::new();
        let mut source = Vec::new();
        for i in (0..n).filter(|&i| i != ground) {
            for k in background.row_range(i) {
                let j = background.col_idx()[k];
                if j != ground && j >= i {
                    row_idx.push(red(j));
                    source.push(k);
                }
            }
            col_ptr.push(row_idx.len());
        }
        let symbolic = SymbolicSparseColMat::new_checked(n - 1, n - 1, col_ptr, None, row_idx);
        let llt = SymbolicLlt::try_new(symbolic.as_ref(), Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(GroundedPattern {
            ground,
            symbolic,
            source,
            llt,
        })
    }
}

impl StiffnessDecomposition {
    pub fn basis(&self) -> CurrentBasis {
        self.basis
    }

    pub fn n(&self) -> usize {
        self.background.n()
    }

    pub fn background(&self) -> &CsrMatrix {
        &self.background
    }

    pub fn pixels(&self) -> &[PixelStiffness] {
        &self.pixels
    }

    pub fn pixel_ids(&self) -> Vec<usize> {
        self.pixels.iter().map(|p| p.id).collect()
    }

    pub fn pixel_index(&self, id: usize) -> Result<usize> {
        self.pixels
            .iter()
            .position(|p| p.id == id)
            .ok_or(Error::UnknownPixel(id))
    }

    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary
    }

    pub fn boundary_mass(&self) -> &[f64] {
        &self.boundary_mass
    }

    pub fn boundary_load(&self, pattern: usize) -> &[f64] {
        &self.boundary_loads[pattern]
    }

    pub fn projector(&self) -> &BoundaryProjector {
        &self.projector
    }

    pub fn ground(&self) -> usize {
        self.grounded.ground
    }

    /// Values of `background·K_0 + Σ θ_q K_q` on the background pattern.
    pub fn stiffness_values(&self, background: f64, theta: &[f64]) -> Vec<f64> {
        let mut values: Vec<f64> = self.background.values().iter().map(|v| background * v).collect();
        for (px, &th) in self.pixels.iter().zip(theta) {
            if th == 0.0 {
                continue;
            }
            for (&pos, &v) in px.positions.iter().zip(px.matrix.values()) {
                values[pos] += th * v;
            }
        }
        values
    }

    /// `y = (background·K_0 + Σ θ_q K_q) x`
    pub fn apply(&self, background: f64, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        self.background.mul_add(background, x, &mut y);
        for (px, &th) in self.pixels.iter().zip(theta) {
            if th != 0.0 {
                px.matrix.mul_add(th, x, &mut y);
            }
        }
        y
    }

    fn check_conductivity(&self, background: f64, theta: &[f64]) -> Result<()> {
        if theta.len() != self.pixels.len() {
            return Err(Error::contract(format!(
                "{} contrasts given for {} pixels",
                theta.len(),
                self.pixels.len()
            )));
        }
        if !(background > 0.0) || theta.iter().any(|&t| !(background + t > 0.0)) {
            return Err(Error::contract("conductivity must be positive"));
        }
        Ok(())
    }

    /// Sparse Cholesky factor of the grounded `background·K_0 + Σ θ_q K_q`.
    pub fn factor(&self, background: f64, theta: &[f64]) -> Result<ConductivityFactor<'_>> {
        self.check_conductivity(background, theta)?;
        let values = self.stiffness_values(background, theta);
        let lower: Vec<f64> = self.grounded.source.iter().map(|&k| values[k]).collect();
        let mat = SparseColMatRef::new(self.grounded.symbolic.as_ref(), &lower);
        let llt = Llt::try_new_with_symbolic(self.grounded.llt.clone(), mat, Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(ConductivityFactor {
            decomp: self,
            background,
            theta: theta.to_vec(),
            llt,
        })
    }

    /// Boundary mean `∫ u ds / |∂D|` of nodal values.
    pub fn boundary_mean(&self, u: &[f64]) -> f64 {
        let total: f64 = self.boundary.iter().map(|&b| self.boundary_mass[b]).sum();
        self.boundary
            .iter()
            .map(|&b| self.boundary_mass[b] * u[b])
            .sum::<f64>()
            / total
    }

    pub fn remove_boundary_mean(&self, u: &mut [f64]) {
        let m = self.boundary_mean(u);
        u.iter_mut().for_each(|v| *v -= m);
    }

    pub fn boundary_trace(&self, u: &[f64]) -> Vec<f64> {
        self.boundary.iter().map(|&b| u[b]).collect()
    }

    /// Drops the grounded entry.
    pub fn reduce(&self, full: &[f64]) -> Vec<f64> {
        let g = self.grounded.ground;
        full.iter()
            .enumerate()
            .filter(|&(i, _)| i != g)
            .map(|(_, &v)| v)
            .collect()
    }

    /// Reinserts a zero at the grounded entry.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let g = self.grounded.ground;
        let mut full = Vec::with_capacity(reduced.len() + 1);
        full.extend_from_slice(&reduced[..g]);
        full.push(0.0);
        full.extend_from_slice(&reduced[g..]);
        full
    }

    /// Relative residual `‖K u − b‖ / ‖b‖` of the full (ungrounded) system.
    pub fn relative_residual(&self, background: f64, theta: &[f64], u: &[f64], load: &[f64]) -> f64 {
        let ku = self.apply(background, theta, u);
        let r: f64 = ku.iter().zip(load).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = load.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nb == 0.0 {
            r
        } else {
            r / nb
        }
    }
}

/// Factorized conductivity system; read-only and shareable across threads.
pub struct ConductivityFactor<'a> {
    decomp: &'a StiffnessDecomposition,
    background: f64,
    theta: Vec<f64>,
    llt: Llt<usize, f64>,
}

impl ConductivityFactor<'_> {
    /// Solves the grounded system in place for every column of `rhs`.
    pub fn solve_reduced_in_place(&self, rhs: faer::MatMut<'_, f64>) {
        self.llt.solve_in_place(rhs);
    }

    /// Solves for several full-length consistent loads; returns zero-mean
    /// potentials.
    pub fn solve_loads(&self, loads: &[&[f64]]) -> Vec<Vec<f64>> {
        let d = self.decomp;
        let m = d.n() - 1;
        let mut rhs = Mat::<f64>::zeros(m, loads.len());
        for (c, load) in loads.iter().enumerate() {
            for (i, v) in d.reduce(load).into_iter().enumerate() {
                rhs[(i, c)] = v;
            }
        }
        self.solve_reduced_in_place(rhs.as_mut());
        (0..loads.len())
            .map(|c| {
                let col: Vec<f64> = (0..m).map(|i| rhs[(i, c)]).collect();
                let mut u = d.expand(&col);
                d.remove_boundary_mean(&mut u);
                u
            })
            .collect()
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

fn check_load(load: &[f64], n: usize) -> Result<()> {
    if load.len() != n {
        return Err(Error::contract("load length differs from vertex count"));
    }
    let sum: f64 = load.iter().sum();
    let abs: f64 = load.iter().map(|v| v.abs()).sum();
    if sum.abs() > 1e-10 * abs.max(f64::MIN_POSITIVE) {
        return Err(Error::contract(format!(
            "load is not compatible with the Neumann problem (sum {sum:e})"
        )));
    }
    Ok(())
}

/// Solves `K(θ) u = load` with zero boundary mean by sparse Cholesky.
pub fn solve(
    decomp: &StiffnessDecomposition,
    theta: &[f64],
    load: &[f64],
    tol: f64,
) -> Result<NodalPotential> {
    solve_with(decomp, 1.0, theta, load, tol, LinearMethod::Direct)
}

pub fn solve_with(
    decomp: &StiffnessDecomposition,
    background: f64,
    theta: &[f64],
    load: &[f64],
    tol: f64,
    method: LinearMethod,
) -> Result<NodalPotential> {
    decomp.check_conductivity(background, theta)?;
    check_load(load, decomp.n())?;
    let mut u = match method {
        LinearMethod::Direct => {
            let factor = decomp.factor(background, theta)?;
            let mut u = factor.solve_loads(&[load]).pop().unwrap();
            // a couple of refinement sweeps if rounding left us above tol
            for _ in 0..3 {
                if decomp.relative_residual(background, theta, &u, load) <= tol {
                    break;
                }
                let ku = decomp.apply(background, theta, &u);
                let r: Vec<f64> = load.iter().zip(&ku).map(|(b, k)| b - k).collect();
                let du = factor.solve_loads(&[&r]).pop().unwrap();
                u.iter_mut().zip(&du).for_each(|(a, d)| *a += d);
            }
            u
        }
        LinearMethod::Pcg { max_iter } => pcg(decomp, background, theta, load, tol, max_iter)?,
    };
    decomp.remove_boundary_mean(&mut u);
    let residual = decomp.relative_residual(background, theta, &u, load);
    if residual > tol {
        return Err(Error::SolverDivergence {
            residual,
            iterations: 0,
        });
    }
    Ok(NodalPotential {
        values: u,
        pattern: None,
        background,
        contrast: theta.to_vec(),
        residual,
    })
}

fn pcg(
    decomp: &StiffnessDecomposition,
    background: f64,
    theta: &[f64],
    load: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = decomp.n();
    let values = decomp.stiffness_values(background, theta);
    let k = &decomp.background;
    let diag: Vec<f64> = (0..n)
        .map(|i| values[k.position(i, i).expect("diagonal entry")])
        .collect();
    let norm_b = load.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if norm_b == 0.0 {
        return Ok(x);
    }
    let mut r = load.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        let ap = decomp.apply(background, theta, &p);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= 0.5 * tol * norm_b {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if it + 1 == max_iter {
            return Err(Error::SolverDivergence {
                residual: rn / norm_b,
                iterations: max_iter,
            });
        }
    }
    Err(Error::SolverDivergence {
        residual: f64::NAN,
        iterations: max_iter,
    })
}

/// Discrete NtD matrix `L[s][t]` = coefficient `s` of the trace of the
/// solution for pattern `t`, unit background.
pub fn ntd_matrix(decomp: &StiffnessDecomposition, theta: &[f64]) -> Result<DMatrix<f64>> {
    ntd_matrix_with_background(decomp, 1.0, theta)
}

pub fn ntd_matrix_with_background(
    decomp: &StiffnessDecomposition,
    background: f64,
    theta: &[f64],
) -> Result<DMatrix<f64>> {
    let factor = decomp.factor(background, theta)?;
    let loads: Vec<&[f64]> = decomp.boundary_loads.iter().map(|l| l.as_slice()).collect();
    let potentials = factor.solve_loads(&loads);
    Ok(project_potentials(decomp, &potentials))
}

/// Columns of Fourier coefficients of the boundary traces.
pub fn project_potentials(decomp: &StiffnessDecomposition, potentials: &[Vec<f64>]) -> DMatrix<f64> {
    let m = decomp.basis.len();
    let mut l = DMatrix::zeros(m, potentials.len());
    for (t, u) in potentials.iter().enumerate() {
        let c = decomp.projector.project(&decomp.boundary_trace(u));
        for s in 0..m {
            l[(s, t)] = c[s];
        }
    }
    l
}

/// Closed-form background potential `r^t trig(tγ)/(t√π)` for pattern `k`.
pub fn background_potential(pattern: usize, p: Point) -> f64 {
    let cp = CurrentPattern::from_index(pattern);
    let t = cp.frequency as i32;
    let zt = Complex64::new(p[0], p[1]).powi(t);
    let v = match cp.kind {
        PatternKind::Sine => zt.im,
        PatternKind::Cosine => zt.re,
    };
    v / (t as f64 * PI.sqrt())
}

/// Gradient of [`background_potential`]; its magnitude is `r^{t-1}/√π`.
pub fn background_potential_gradient(pattern: usize, p: Point) -> [f64; 2] {
    let cp = CurrentPattern::from_index(pattern);
    let w = Complex64::new(p[0], p[1]).powi(cp.frequency as i32 - 1) / PI.sqrt();
    match cp.kind {
        PatternKind::Sine => [w.im, w.re],
        PatternKind::Cosine => [w.re, -w.im],
    }
}

/// `∫_T ∇u_0 dx` over a triangle, computed exactly as the boundary integral
/// `∮ u_0 n ds` with a Gauss rule of sufficient degree on each edge.
fn integrated_background_gradient(pattern: usize, p: [Point; 3], rule: &(Vec<f64>, Vec<f64>)) -> [f64; 2] {
    let (nodes, weights) = rule;
    let mut acc = [0.0; 2];
    for e in 0..3 {
        let a = p[e];
        let b = p[(e + 1) % 3];
        let mut s = 0.0;
        for (&x, &w) in nodes.iter().zip(weights) {
            let u = 0.5 * (x + 1.0);
            s += 0.5 * w * background_potential(pattern, [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
        }
        // outward normal times edge length for a counterclockwise triangle
        acc[0] += s * (b[1] - a[1]);
        acc[1] -= s * (b[0] - a[0]);
    }
    acc
}

/// Weak right-hand side `−∫_{pixel} ∇u_0·∇φ_i dx` of the difference-potential
/// problem for pixel `pixel_id` and pattern `pattern`.
pub fn difference_load(
    mesh: &DiskMesh,
    decomp: &StiffnessDecomposition,
    pixel_id: usize,
    pattern: usize,
) -> Result<Vec<f64>> {
    let q = decomp.pixel_index(pixel_id)?;
    if pattern >= decomp.basis.len() {
        return Err(Error::contract(format!("pattern {pattern} out of range")));
    }
    let mut load = vec![0.0; decomp.n()];
    add_difference_load(mesh, &decomp.pixels[q].triangles, pattern, 1.0, &mut load)?;
    Ok(load)
}

fn add_difference_load(
    mesh: &DiskMesh,
    triangles: &[usize],
    pattern: usize,
    scale: f64,
    load: &mut [f64],
) -> Result<()> {
    let t = CurrentPattern::from_index(pattern).frequency;
    let rule = gauss_legendre(t / 2 + 1);
    for &tri in triangles {
        let (_, grads) = hat_gradients(mesh, tri)?;
        let g = integrated_background_gradient(pattern, mesh.triangle_points(tri), &rule);
        let verts = mesh.triangles()[tri];
        for i in 0..3 {
            load[verts[i]] -= scale * (grads[i][0] * g[0] + grads[i][1] * g[1]);
        }
    }
    Ok(())
}

/// Discrete unit-conductivity potentials `u_{0,h}` for every pattern.
pub fn background_potentials(decomp: &StiffnessDecomposition) -> Result<Vec<Vec<f64>>> {
    let factor = decomp.factor(1.0, &vec![0.0; decomp.pixels.len()])?;
    let loads: Vec<&[f64]> = decomp.boundary_loads.iter().map(|l| l.as_slice()).collect();
    Ok(factor.solve_loads(&loads))
}

/// Source of `∇u_0` in the difference loads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DifferenceLoadRule {
    /// `b_{q,t} = −K_q u_{0,h}` with the discrete background potential. The
    /// difference problem then reproduces `Λ_h(σ) − Λ_h(1)` of the Galerkin
    /// scheme exactly, so symmetry and monotonicity carry over.
    #[default]
    Discrete,
    /// Closed-form `∇u_0` integrated exactly over each pixel triangle.
    Analytic,
}

/// Difference loads for every pixel and pattern, stored sparsely.
#[derive(Debug, Clone)]
pub struct DifferenceLoads {
    /// `entries[pattern][pixel]` = (vertex indices, values)
    entries: Vec<Vec<(Vec<usize>, Vec<f64>)>>,
    n: usize,
    rule: DifferenceLoadRule,
}

fn sparsify(load: &[f64]) -> (Vec<usize>, Vec<f64>) {
    load.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .unzip()
}

impl DifferenceLoads {
    pub fn new(mesh: &DiskMesh, decomp: &StiffnessDecomposition) -> Result<Self> {
        Self::with_rule(mesh, decomp, DifferenceLoadRule::default())
    }

    pub fn with_rule(
        mesh: &DiskMesh,
        decomp: &StiffnessDecomposition,
        rule: DifferenceLoadRule,
    ) -> Result<Self> {
        let n = decomp.n();
        let entries = match rule {
            DifferenceLoadRule::Analytic => (0..decomp.basis.len())
                .map(|k| {
                    decomp
                        .pixels
                        .iter()
                        .map(|px| {
                            let mut load = vec![0.0; n];
                            add_difference_load(mesh, &px.triangles, k, 1.0, &mut load)?;
                            Ok(sparsify(&load))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
            DifferenceLoadRule::Discrete => {
                let u0 = background_potentials(decomp)?;
                u0.iter()
                    .map(|u| {
                        decomp
                            .pixels
                            .iter()
                            .map(|px| {
                                let mut load = vec![0.0; n];
                                px.matrix.mul_add(-1.0, u, &mut load);
                                sparsify(&load)
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        Ok(DifferenceLoads { entries, n, rule })
    }

    pub fn rule(&self) -> DifferenceLoadRule {
        self.rule
    }

    pub fn num_patterns(&self) -> usize {
        self.entries.len()
    }

    /// Adds `coeff · b_{q,t}` into `out` (full length).
    pub fn add_to(&self, pattern: usize, pixel: usize, coeff: f64, out: &mut [f64]) {
        let (idx, val) = &self.entries[pattern][pixel];
        for (&i, &v) in idx.iter().zip(val) {
            out[i] += coeff * v;
        }
    }

    /// `Σ_q θ_q b_{q,t}` as a dense vector.
    pub fn combined(&self, pattern: usize, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (q, &th) in theta.iter().enumerate() {
            self.add_to(pattern, q, th, &mut out);
        }
        out
    }
}

/// Deterministic difference matrix `Λ(1 + Σθχ) − Λ(1)` from the
/// difference-potential problem `K(θ) w = Σ θ_q b_{q,t}`.
pub fn difference_ntd_matrix(
    decomp: &StiffnessDecomposition,
    loads: &DifferenceLoads,
    theta: &[f64],
) -> Result<DMatrix<f64>> {
    let factor = decomp.factor(1.0, theta)?;
    let rhs: Vec<Vec<f64>> = (0..loads.num_patterns())
        .map(|k| loads.combined(k, theta))
        .collect();
    let refs: Vec<&[f64]> = rhs.iter().map(|v| v.as_slice()).collect();
    let w = factor.solve_loads(&refs);
    Ok(project_potentials(decomp, &w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ContrastInterval, PixelRegion};
    use crate::mesh::build_disk_mesh;
    use crate::quadrature::gauss_legendre_on;

    fn disk_mesh(level: u32) -> DiskMesh {
        let px = PixelRegion::disk(1, [0.2, 0.1], 0.3, ContrastInterval::new(1.0, 2.0).unwrap());
        build_disk_mesh(level, &[px]).unwrap()
    }

    #[test]
    fn affine_decomposition_matches_direct_assembly() {
        let mesh = disk_mesh(1);
        let d = assemble(&mesh, CurrentBasis::new(4).unwrap()).unwrap();
        let c = 2.5;
        // stiffness of conductivity 1 + c on the pixel, assembled triangle by triangle
        let trip: Vec<(usize, usize, f64)> = (0..mesh.num_triangles())
            .flat_map(|t| {
                let (area, g) = hat_gradients(&mesh, t).unwrap();
                let sigma = if mesh.region_of_triangle()[t] == 1 { 1.0 + c } else { 1.0 };
                let tri = mesh.triangles()[t];
                let mut v = Vec::new();
                for i in 0..3 {
                    for j in 0..3 {
                        v.push((tri[i], tri[j], sigma * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
                    }
                }
                v
            })
            .collect();
        let direct = CsrMatrix::from_triplets(mesh.num_vertices(), trip);
        let values = d.stiffness_values(1.0, &[c]);
        for (a, b) in values.iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn background_rows_sum_to_zero_and_no_pixels_means_no_blocks() {
        let mesh = build_disk_mesh(1, &[]).unwrap();
        let d = assemble(&mesh, CurrentBasis::new(4).unwrap()).unwrap();
        assert!(d.pixels().is_empty());
        assert!(d.background().row_sums().iter().all(|s| s.abs() < 1e-12));
        assert!(d.background().asymmetry() < 1e-14);
    }

    #[test]
    fn zero_load_gives_zero_potential() {
        let mesh = disk_mesh(1);
        let d = assemble(&mesh, CurrentBasis::new(4).unwrap()).unwrap();
        let u = solve(&d, &[3.0], &vec![0.0; d.n()], 1e-10).unwrap();
        assert!(u.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn direct_and_pcg_agree() {
        let mesh = disk_mesh(2);
        let d = assemble(&mesh, CurrentBasis::new(8).unwrap()).unwrap();
        let load = d.boundary_load(3).to_vec();
        let a = solve(&d, &[4.0], &load, 1e-10).unwrap();
        let b = solve_with(&d, 1.0, &[4.0], &load, 1e-10, LinearMethod::Pcg { max_iter: 5000 }).unwrap();
        assert!(a.residual <= 1e-10 && b.residual <= 1e-10);
        assert!(d.boundary_mean(&a.values).abs() < 1e-12);
        let diff = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = a.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-7 * scale, "diff {diff}");
    }

    #[test]
    fn incompatible_load_and_bad_conductivity_rejected() {
        let mesh = disk_mesh(1);
        let d = assemble(&mesh, CurrentBasis::new(4).unwrap()).unwrap();
        let mut load = vec![0.0; d.n()];
        load[0] = 1.0;
        assert!(matches!(solve(&d, &[0.0], &load, 1e-10), Err(Error::Contract(_))));
        assert!(matches!(solve(&d, &[-1.5], d.boundary_load(0), 1e-10), Err(Error::Contract(_))));
        assert!(matches!(solve(&d, &[], d.boundary_load(0), 1e-10), Err(Error::Contract(_))));
    }

    #[test]
    fn homogeneous_scaling_is_exact() {
        let mesh = disk_mesh(1);
        let d = assemble(&mesh, CurrentBasis::new(6).unwrap()).unwrap();
        let l1 = ntd_matrix_with_background(&d, 1.0, &[0.0]).unwrap();
        let l3 = ntd_matrix_with_background(&d, 3.0, &[0.0]).unwrap();
        let err = (&l3 * 3.0 - &l1).abs().max();
        assert!(err < 1e-12 * l1.abs().max(), "err {err}");
    }

    #[test]
    fn ntd_matrix_is_symmetric_and_monotone() {
        let mesh = disk_mesh(2);
        let d = assemble(&mesh, CurrentBasis::new(12).unwrap()).unwrap();
        let l0 = ntd_matrix(&d, &[0.0]).unwrap();
        let l1 = ntd_matrix(&d, &[5.0]).unwrap();
        let norm0 = l0.norm();
        assert!((&l1 - l1.transpose()).norm() <= 1e-8 * l1.norm());
        let diff = &l1 - &l0;
        let sym = (&diff + diff.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        assert!(eig.max() <= 1e-8 * norm0, "max eigenvalue {}", eig.max());
    }

    #[test]
    fn quadratic_form_equals_discrete_energy() {
        let mesh = disk_mesh(2);
        let d = assemble(&mesh, CurrentBasis::new(6).unwrap()).unwrap();
        let theta = [2.0];
        for k in [0, 3, 7] {
            let load = d.boundary_load(k);
            let u = solve(&d, &theta, load, 1e-12).unwrap().values;
            let energy: f64 = d.apply(1.0, &theta, &u).iter().zip(&u).map(|(a, b)| a * b).sum();
            let boundary: f64 = load.iter().zip(&u).map(|(a, b)| a * b).sum();
            assert!((energy - boundary).abs() <= 1e-6 * energy);
            let l = ntd_matrix(&d, &theta).unwrap();
            assert!((l[(k, k)] - boundary).abs() <= 1e-9 * boundary);
        }
    }

    #[test]
    fn exact_edge_loads_match_quadrature() {
        let (x, w) = gauss_legendre_on(20, 0.0, 0.4);
        for k in [0, 1, 6, 9] {
            let p = CurrentPattern::from_index(k);
            for span in [0.4, 0.01] {
                let (ia, ib) = edge_load(p, 0.7, span, 2.0 * span);
                let (x, w) = if span == 0.4 { (x.clone(), w.clone()) } else { gauss_legendre_on(20, 0.0, span) };
                let qa: f64 = x.iter().zip(&w).map(|(&s, &w)| w * p.eval(0.7 + s) * (1.0 - s / span)).sum::<f64>() * 2.0;
                let qb: f64 = x.iter().zip(&w).map(|(&s, &w)| w * p.eval(0.7 + s) * (s / span)).sum::<f64>() * 2.0;
                assert!((ia - qa).abs() < 1e-14 && (ib - qb).abs() < 1e-14, "k={k} span={span}");
            }
        }
    }

    #[test]
    fn load_rules_agree_to_second_order() {
        let mesh = disk_mesh(2);
        let basis = CurrentBasis::new(6).unwrap();
        let a = ntd_matrix(&assemble_with(&mesh, basis, BoundaryLoadRule::Trapezoidal).unwrap(), &[1.0]).unwrap();
        let b = ntd_matrix(&assemble_with(&mesh, basis, BoundaryLoadRule::Exact).unwrap(), &[1.0]).unwrap();
        let h = 2.0 * PI / mesh.boundary_vertices().len() as f64;
        // loads differ by the factor (chord/arc)·sinc²(tΔ/2) = 1 − O((tΔ)²)
        assert!((&a - &b).abs().max() <= (6.0 * h).powi(2) * a.abs().max());
    }

    #[test]
    fn unit_conductivity_spectrum_converges() {
        // error of the frequency-t eigenvalue against 1/t under refinement
        let t = 5;
        let errs: Vec<f64> = (1..=3)
            .map(|level| {
                let mesh = build_disk_mesh(level, &[]).unwrap();
                let d = assemble(&mesh, CurrentBasis::new(t).unwrap()).unwrap();
                let l = ntd_matrix(&d, &[]).unwrap();
                (l[(2 * t - 1, 2 * t - 1)] * t as f64 - 1.0).abs()
            })
            .collect();
        let order = (errs[1] / errs[2]).log2();
        assert!(order >= 1.5, "errors {errs:?}");
    }

    #[test]
    fn background_gradient_cases() {
        let s = 1.0 / PI.sqrt();
        let g = background_potential_gradient(0, [0.3, -0.4]);
        assert!((g[0]).abs() < 1e-15 && (g[1] - s).abs() < 1e-15);
        for k in 0..12 {
            let t = CurrentPattern::from_index(k).frequency as i32;
            let p = [0.35, -0.52];
            let r = crate::geometry::norm(p);
            let g = background_potential_gradient(k, p);
            assert!((g[0].hypot(g[1]) - r.powi(t - 1) * s).abs() < 1e-14);
            let h = 1e-5;
            let fx = (background_potential(k, [p[0] + h, p[1]]) - background_potential(k, [p[0] - h, p[1]])) / (2.0 * h);
            let fy = (background_potential(k, [p[0], p[1] + h]) - background_potential(k, [p[0], p[1] - h])) / (2.0 * h);
            assert!((fx - g[0]).abs() < 1e-6 && (fy - g[1]).abs() < 1e-6, "pattern {k}");
        }
    }

    #[test]
    fn background_potential_has_pattern_as_normal_derivative() {
        for k in 0..8 {
            let p = CurrentPattern::from_index(k);
            for gamma in [0.1f64, 1.3, 4.0] {
                let x = [gamma.cos(), gamma.sin()];
                let g = background_potential_gradient(k, x);
                assert!((g[0] * x[0] + g[1] * x[1] - p.eval(gamma)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn difference_load_support_and_errors() {
        let mesh = disk_mesh(1);
        let d = assemble(&mesh, CurrentBasis::new(4).unwrap()).unwrap();
        assert!(matches!(difference_load(&mesh, &d, 7, 0), Err(Error::UnknownPixel(7))));
        let b = difference_load(&mesh, &d, 1, 2).unwrap();
        let mut touched = vec![false; d.n()];
        for &t in &d.pixels()[0].triangles {
            for &v in &mesh.triangles()[t] {
                touched[v] = true;
            }
        }
        for (i, v) in b.iter().enumerate() {
            if !touched[i] {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(b.iter().any(|v| *v != 0.0));
        assert!(b.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn discrete_difference_path_matches_direct_path() {
        let mesh = disk_mesh(2);
        let d = assemble(&mesh, CurrentBasis::new(6).unwrap()).unwrap();
        let loads = DifferenceLoads::new(&mesh, &d).unwrap();
        let c = 4.0;
        let via_diff = difference_ntd_matrix(&d, &loads, &[c]).unwrap();
        let l1 = ntd_matrix(&d, &[0.0]).unwrap();
        let direct = ntd_matrix(&d, &[c]).unwrap();
        // adding the background trace back reproduces every column
        assert!((&via_diff + &l1 - &direct).abs().max() <= 1e-8 * direct.abs().max());
        assert!((&via_diff - via_diff.transpose()).norm() <= 1e-9 * via_diff.norm());
    }

    #[test]
    fn analytic_difference_path_converges_to_direct_path() {
        let c = 3.0;
        let errs: Vec<f64> = (1..=3)
            .map(|level| {
                let mesh = disk_mesh(level);
                let d = assemble(&mesh, CurrentBasis::new(3).unwrap()).unwrap();
                let loads = DifferenceLoads::with_rule(&mesh, &d, DifferenceLoadRule::Analytic).unwrap();
                let via_diff = difference_ntd_matrix(&d, &loads, &[c]).unwrap();
                let direct = ntd_matrix(&d, &[c]).unwrap() - ntd_matrix(&d, &[0.0]).unwrap();
                (&via_diff - &direct).norm() / direct.norm()
            })
            .collect();
        assert!(errs[2] < errs[1] && errs[1] < errs[0], "errors {errs:?}");
        assert!((errs[1] / errs[2]).log2() >= 1.5, "errors {errs:?}");
    }
}
