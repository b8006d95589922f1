//! Stochastic Galerkin solver for the difference-potential problem and a
//! Monte Carlo reference.
//!
//! Unknowns are stored column-major: one column of length `n − 1` (grounded
//! vertex removed) per chaos block, blocks of one current pattern adjacent.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::chaos::{ChaosBasis, CouplingMatrix};
use crate::error::{Error, Result};
use crate::fem::{project_potentials, ConductivityFactor, DifferenceLoads, StiffnessDecomposition};
use crate::random_field::{ContrastSampler, PixelAnomaly};
use crate::sparse::CsrMatrix;

pub const DEFAULT_SFEM_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Upper bound on the entries of one iteration vector of a batch.
const BATCH_ENTRIES: usize = 8_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfemOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SfemOptions {
    fn default() -> Self {
        SfemOptions {
            tol: DEFAULT_SFEM_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Chaos coefficients `w_i` of the difference potential for one pattern.
#[derive(Debug, Clone)]
pub struct SfemSolution {
    pub pattern: usize,
    pub degree: usize,
    /// Full-length nodal vectors with zero boundary mean, one per chaos index.
    pub blocks: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SfemExpectation {
    pub matrix: DMatrix<f64>,
    pub max_residual: f64,
    pub max_iterations: usize,
}

/// Rows of a grounded pixel stiffness that carry entries.
struct PixelOperator {
    rows: Vec<usize>,
    ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl PixelOperator {
    fn new(m: &CsrMatrix) -> Self {
        let mut op = PixelOperator {
            rows: Vec::new(),
            ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        };
        for i in 0..m.n() {
            let (c, v) = m.row(i);
            if !c.is_empty() {
                op.rows.push(i);
                op.cols.extend_from_slice(c);
                op.vals.extend_from_slice(v);
                op.ptr.push(op.cols.len());
            }
        }
        op
    }

    fn mul_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (k, &i) in self.rows.iter().enumerate() {
            let mut s = 0.0;
            for p in self.ptr[k]..self.ptr[k + 1] {
                s += self.vals[p] * x[self.cols[p]];
            }
            y[i] += alpha * s;
        }
    }
}

/// Block operator `I⊗K_0 + Σ_q G_q⊗K_q` on grounded blocks with a
/// block-diagonal mean-stiffness preconditioner.
pub struct SfemSystem<'a> {
    decomp: &'a StiffnessDecomposition,
    basis: &'a ChaosBasis,
    couplings: Vec<CouplingMatrix>,
    k0: CsrMatrix,
    kq: Vec<PixelOperator>,
    precond: ConductivityFactor<'a>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> SfemSystem<'a> {
    pub fn new(decomp: &'a StiffnessDecomposition, basis: &'a ChaosBasis) -> Result<Self> {
        if basis.num_variables() != decomp.pixels().len() {
            return Err(Error::contract(format!(
                "chaos basis has {} variables but the mesh has {} pixels",
                basis.num_variables(),
                decomp.pixels().len()
            )));
        }
        let g = decomp.ground();
        let mean: Vec<f64> = basis.intervals().iter().map(|iv| iv.midpoint()).collect();
        Ok(SfemSystem {
            decomp,
            basis,
            couplings: basis.couplings(),
            k0: decomp.background().grounded(g),
            kq: decomp
                .pixels()
                .iter()
                .map(|p| PixelOperator::new(&p.matrix.grounded(g)))
                .collect(),
            precond: decomp.factor(1.0, &mean)?,
        })
    }

    pub fn blocks(&self) -> usize {
        self.basis.len()
    }

    fn nr(&self) -> usize {
        self.decomp.n() - 1
    }

    /// `y = A x` for a set of consecutive systems, `M` columns each.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nr = self.nr();
        let m = self.blocks();
        y.par_chunks_mut(nr).enumerate().for_each(|(c, yc)| {
            let (sys, i) = (c / m, c % m);
            yc.iter_mut().for_each(|v| *v = 0.0);
            let xc = &x[c * nr..(c + 1) * nr];
            self.k0.mul_add(1.0, xc, yc);
            for (op, g) in self.kq.iter().zip(&self.couplings) {
                for &(j, gij) in g.row(i) {
                    let xj = &x[(sys * m + j) * nr..(sys * m + j + 1) * nr];
                    op.mul_add(gij, xj, yc);
                }
            }
        });
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        let nr = self.nr();
        let cols = z.len() / nr;
        self.precond
            .solve_reduced_in_place(faer::MatMut::from_column_major_slice_mut(z, nr, cols));
    }

    /// Grounded right-hand side `r_i = Σ_q E[θ_q ψ_i] b_{q,t}` for pattern `t`.
    fn rhs(&self, loads: &DifferenceLoads, pattern: usize, out: &mut [f64]) {
        let n = self.decomp.n();
        let g = self.decomp.ground();
        let mut full = vec![0.0; n];
        for i in 0..self.blocks() {
            full.iter_mut().for_each(|v| *v = 0.0);
            let mut any = false;
            for (q, coup) in self.couplings.iter().enumerate() {
                let e = coup.get(i, 0);
                if e != 0.0 {
                    loads.add_to(pattern, q, e, &mut full);
                    any = true;
                }
            }
            let col = &mut out[i * (n - 1)..(i + 1) * (n - 1)];
            if any {
                col[..g].copy_from_slice(&full[..g]);
                col[g..].copy_from_slice(&full[g + 1..]);
            } else {
                col.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Block PCG for several patterns at once; returns the grounded solution,
    /// per-pattern relative residuals and iteration counts.
    fn solve_patterns(
        &self,
        loads: &DifferenceLoads,
        patterns: &[usize],
        opts: SfemOptions,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
        let sys_len = self.blocks() * self.nr();
        let total = patterns.len() * sys_len;
        let mut b = vec![0.0; total];
        for (s, &t) in patterns.iter().enumerate() {
            self.rhs(loads, t, &mut b[s * sys_len..(s + 1) * sys_len]);
        }
        let norm_b: Vec<f64> = b.chunks(sys_len).map(|c| dot(c, c).sqrt()).collect();
        let mut x = vec![0.0; total];
        let mut r = b.clone();
        let mut z = vec![0.0; total];
        self.precondition(&r, &mut z);
        let mut p = z.clone();
        let mut q = vec![0.0; total];
        let mut rz: Vec<f64> = r.chunks(sys_len).zip(z.chunks(sys_len)).map(|(a, b)| dot(a, b)).collect();
        let mut done: Vec<bool> = norm_b.iter().map(|&n| n == 0.0).collect();
        let mut iterations = vec![0usize; patterns.len()];
        let mut residual = vec![0.0; patterns.len()];
        let mut it = 0;
        while done.iter().any(|d| !d) {
            if it == opts.max_iter {
                let worst = residual.iter().copied().fold(0.0, f64::max);
                return Err(Error::SolverDivergence {
                    residual: worst,
                    iterations: it,
                });
            }
            it += 1;
            self.apply(&p, &mut q);
            for s in 0..patterns.len() {
                if done[s] {
                    continue;
                }
                let rg = s * sys_len..(s + 1) * sys_len;
                let alpha = rz[s] / dot(&p[rg.clone()], &q[rg.clone()]);
                for k in rg.clone() {
                    x[k] += alpha * p[k];
                    r[k] -= alpha * q[k];
                }
                residual[s] = dot(&r[rg.clone()], &r[rg.clone()]).sqrt() / norm_b[s];
                iterations[s] = it;
                if residual[s] <= opts.tol {
                    done[s] = true;
                }
            }
            self.precondition(&r, &mut z);
            for s in 0..patterns.len() {
                if done[s] {
                    continue;
                }
                let rg = s * sys_len..(s + 1) * sys_len;
                let rz_new = dot(&r[rg.clone()], &z[rg.clone()]);
                let beta = rz_new / rz[s];
                rz[s] = rz_new;
                for k in rg {
                    p[k] = z[k] + beta * p[k];
                }
            }
        }
        // report the true residual, not the recursively updated one
        self.apply(&x, &mut q);
        for s in 0..patterns.len() {
            if norm_b[s] == 0.0 {
                continue;
            }
            let rg = s * sys_len..(s + 1) * sys_len;
            let d: f64 = b[rg.clone()].iter().zip(&q[rg]).map(|(a, c)| (a - c) * (a - c)).sum();
            residual[s] = d.sqrt() / norm_b[s];
        }
        Ok((x, residual, iterations))
    }

    fn full_block(&self, reduced: &[f64]) -> Vec<f64> {
        let mut u = self.decomp.expand(reduced);
        self.decomp.remove_boundary_mean(&mut u);
        u
    }

    /// Relative residual `‖A w − r‖ / ‖r‖` of a solution for `pattern`.
    pub fn residual_of(&self, loads: &DifferenceLoads, sol: &SfemSolution) -> f64 {
        let nr = self.nr();
        let sys_len = self.blocks() * nr;
        let mut x = vec![0.0; sys_len];
        for (i, w) in sol.blocks.iter().enumerate() {
            x[i * nr..(i + 1) * nr].copy_from_slice(&self.decomp.reduce(w));
        }
        // blocks carry a boundary-mean shift; constants lie in the kernel
        let g = self.decomp.ground();
        for (i, w) in sol.blocks.iter().enumerate() {
            x[i * nr..(i + 1) * nr].iter_mut().for_each(|v| *v -= w[g]);
        }
        let mut y = vec![0.0; sys_len];
        self.apply(&x, &mut y);
        let mut b = vec![0.0; sys_len];
        self.rhs(loads, sol.pattern, &mut b);
        let nb = dot(&b, &b).sqrt();
        let d: f64 = b.iter().zip(&y).map(|(a, c)| (a - c) * (a - c)).sum();
        if nb == 0.0 {
            d.sqrt()
        } else {
            d.sqrt() / nb
        }
    }

    pub fn solve(&self, loads: &DifferenceLoads, pattern: usize, opts: SfemOptions) -> Result<SfemSolution> {
        if pattern >= loads.num_patterns() {
            return Err(Error::contract(format!("pattern {pattern} out of range")));
        }
        let (x, res, its) = self.solve_patterns(loads, &[pattern], opts)?;
        let nr = self.nr();
        Ok(SfemSolution {
            pattern,
            degree: self.basis.degree(),
            blocks: x.chunks(nr).map(|c| self.full_block(c)).collect(),
            residual: res[0],
            iterations: its[0],
        })
    }

    /// `E(Λ(σ)) − Λ(1)` in the Fourier basis, patterns solved in batches.
    pub fn expectation_matrix(&self, loads: &DifferenceLoads, opts: SfemOptions) -> Result<SfemExpectation> {
        let nr = self.nr();
        let m = self.blocks();
        let np = loads.num_patterns();
        let batch = (BATCH_ENTRIES / (m * nr)).clamp(1, np);
        let mut traces = Vec::with_capacity(np);
        let mut max_residual: f64 = 0.0;
        let mut max_iterations = 0;
        for start in (0..np).step_by(batch) {
            let pats: Vec<usize> = (start..(start + batch).min(np)).collect();
            let (x, res, its) = self
                .solve_patterns(loads, &pats, opts)
                .map_err(|e| e.in_stage(format!("sfem patterns {}..{}", pats[0], pats[pats.len() - 1])))?;
            for s in 0..pats.len() {
                traces.push(self.full_block(&x[s * m * nr..s * m * nr + nr]));
            }
            max_residual = res.iter().copied().fold(max_residual, f64::max);
            max_iterations = its.iter().copied().fold(max_iterations, usize::max);
        }
        Ok(SfemExpectation {
            matrix: project_potentials(self.decomp, &traces),
            max_residual,
            max_iterations,
        })
    }
}

/// Solves the Galerkin system for one pattern.
pub fn solve_sfem_difference(
    decomp: &StiffnessDecomposition,
    loads: &DifferenceLoads,
    basis: &ChaosBasis,
    pattern: usize,
    opts: SfemOptions,
) -> Result<SfemSolution> {
    SfemSystem::new(decomp, basis)?.solve(loads, pattern, opts)
}

/// Boundary values of `E(w)`, the chaos-index-0 coefficient.
pub fn expectation_trace(sol: &SfemSolution, decomp: &StiffnessDecomposition) -> Vec<f64> {
    decomp.boundary_trace(&sol.blocks[0])
}

/// Galerkin approximation of `E(Λ(σ)) − Λ(1)`.
pub fn sfem_expectation(
    decomp: &StiffnessDecomposition,
    loads: &DifferenceLoads,
    basis: &ChaosBasis,
    opts: SfemOptions,
) -> Result<SfemExpectation> {
    SfemSystem::new(decomp, basis)?.expectation_matrix(loads, opts)
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub mean: DMatrix<f64>,
    /// Standard error of each entry, `s/√N` with the unbiased sample deviation.
    pub stderr: DMatrix<f64>,
    pub samples: usize,
}

/// Difference matrix for one contrast vector.
pub fn sample_difference_matrix(
    decomp: &StiffnessDecomposition,
    loads: &DifferenceLoads,
    theta: &[f64],
) -> Result<DMatrix<f64>> {
    crate::fem::difference_ntd_matrix(decomp, loads, theta)
}

/// Sample mean of the difference matrix over `n` seeded draws. Samples are
/// solved in parallel and accumulated in draw order, so the result does not
/// depend on the thread count.
pub fn monte_carlo_expectation(
    decomp: &StiffnessDecomposition,
    loads: &DifferenceLoads,
    anomaly: &PixelAnomaly,
    n: usize,
    seed: u64,
) -> Result<MonteCarloResult> {
    if n < 2 {
        return Err(Error::contract("Monte Carlo needs at least 2 samples"));
    }
    if anomaly.len() != decomp.pixels().len() {
        return Err(Error::contract("anomaly does not match the mesh pixels"));
    }
    let mut sampler = ContrastSampler::new(anomaly, seed);
    let thetas: Vec<Vec<f64>> = (0..n).map(|_| sampler.next_sample()).collect();
    let k = loads.num_patterns();
    let mut mean = DMatrix::zeros(k, k);
    let mut m2 = DMatrix::zeros(k, k);
    let chunk = rayon::current_num_threads().max(1) * 2;
    let mut count = 0.0;
    for group in thetas.chunks(chunk) {
        let mats: Vec<DMatrix<f64>> = group
            .par_iter()
            .map(|th| sample_difference_matrix(decomp, loads, th))
            .collect::<Result<_>>()?;
        for l in mats {
            count += 1.0;
            let delta = &l - &mean;
            mean += &delta / count;
            let delta2 = &l - &mean;
            m2 += delta.component_mul(&delta2);
        }
    }
    let stderr = m2.map(|v| (v / (count - 1.0) / count).sqrt());
    Ok(MonteCarloResult {
        mean,
        stderr,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, difference_ntd_matrix};
    use crate::fourier::CurrentBasis;
    use crate::geometry::{ContrastInterval, PixelRegion};
    use crate::mesh::build_disk_mesh;

    struct Setup {
        decomp: StiffnessDecomposition,
        loads: DifferenceLoads,
        anomaly: PixelAnomaly,
    }

    fn setup(intervals: &[(f64, f64)], t: usize) -> Setup {
        let pixels: Vec<PixelRegion> = intervals
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                PixelRegion::disk(
                    k + 1,
                    [-0.4 + 0.4 * k as f64, 0.1],
                    0.15,
                    ContrastInterval::new(a, b).unwrap(),
                )
            })
            .collect();
        let mesh = build_disk_mesh(1, &pixels).unwrap();
        let decomp = assemble(&mesh, CurrentBasis::new(t).unwrap()).unwrap();
        let loads = DifferenceLoads::new(&mesh, &decomp).unwrap();
        Setup {
            decomp,
            loads,
            anomaly: PixelAnomaly::new(pixels).unwrap(),
        }
    }

    fn tight() -> SfemOptions {
        SfemOptions {
            tol: 1e-11,
            max_iter: 500,
        }
    }

    #[test]
    fn degree_zero_is_mean_contrast_solve() {
        let s = setup(&[(1.0, 3.0), (-0.5, 0.5)], 3);
        let basis = ChaosBasis::new(&s.anomaly.intervals(), 0).unwrap();
        let e = sfem_expectation(&s.decomp, &s.loads, &basis, tight()).unwrap();
        let det = difference_ntd_matrix(&s.decomp, &s.loads, &s.anomaly.mean_contrast()).unwrap();
        assert!((&e.matrix - &det).abs().max() <= 1e-9 * det.abs().max());
    }

    #[test]
    fn degenerate_intervals_have_no_randomness() {
        let s = setup(&[(2.0, 2.0), (0.5, 0.5)], 3);
        let basis = ChaosBasis::new(&s.anomaly.intervals(), 2).unwrap();
        let sys = SfemSystem::new(&s.decomp, &basis).unwrap();
        let sol = sys.solve(&s.loads, 2, tight()).unwrap();
        for w in &sol.blocks[1..] {
            assert!(w.iter().all(|v| v.abs() < 1e-14));
        }
        let det = crate::fem::solve(&s.decomp, &[2.0, 0.5], &s.loads.combined(2, &[2.0, 0.5]), 1e-12).unwrap();
        let diff = sol.blocks[0].iter().zip(&det.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "diff {diff}");
        let trace = expectation_trace(&sol, &s.decomp);
        assert_eq!(trace.len(), s.decomp.boundary_vertices().len());
    }

    #[test]
    fn zero_contrast_gives_zero_trace() {
        let s = setup(&[(0.0, 0.0)], 2);
        let basis = ChaosBasis::new(&s.anomaly.intervals(), 3).unwrap();
        let sol = solve_sfem_difference(&s.decomp, &s.loads, &basis, 1, tight()).unwrap();
        assert!(expectation_trace(&sol, &s.decomp).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residual_oracle_and_zero_mean_blocks() {
        let s = setup(&[(1.0, 5.0), (-0.6, 0.8)], 3);
        let basis = ChaosBasis::new(&s.anomaly.intervals(), 3).unwrap();
        let sys = SfemSystem::new(&s.decomp, &basis).unwrap();
        let sol = sys.solve(&s.loads, 4, SfemOptions::default()).unwrap();
        assert!(sol.residual <= DEFAULT_SFEM_TOL);
        assert!(sys.residual_of(&s.loads, &sol) <= DEFAULT_SFEM_TOL);
        for w in &sol.blocks {
            assert!(s.decomp.boundary_mean(w).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatched_basis_is_rejected() {
        let s = setup(&[(1.0, 2.0)], 2);
        let basis = ChaosBasis::new(&[ContrastInterval::new(0.0, 1.0).unwrap(); 2], 1).unwrap();
        assert!(matches!(SfemSystem::new(&s.decomp, &basis), Err(Error::Contract(_))));
    }

    #[test]
    fn block_operator_is_symmetric_positive_on_zero_mean_blocks() {
        let s = setup(&[(-0.7, 1.5)], 1);
        let basis = ChaosBasis::new(&s.anomaly.intervals(), 2).unwrap();
        let sys = SfemSystem::new(&s.decomp, &basis).unwrap();
        let len = basis.len() * (s.decomp.n() - 1);
        let probe = |seed: u64| -> Vec<f64> {
            (0..len).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect()
        };
        let (x, y) = (probe(3), probe(11));
        let mut ax = vec![0.0; len];
        let mut ay = vec![0.0; len];
        sys.apply(&x, &mut ax);
        sys.apply(&y, &mut ay);
        let (a, b) = (dot(&y, &ax), dot(&x, &ay));
        assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
        assert!(dot(&x, &ax) > 0.0);
    }

    #[test]
    fn sfem_agrees_with_monte_carlo() {
        let s = setup(&[(1.0, 4.0)], 2);
        let basis = ChaosBasis::new(&s.anomaly.intervals(), 4).unwrap();
        let e = sfem_expectation(&s.decomp, &s.loads, &basis, tight()).unwrap().matrix;
        let mc = monte_carlo_expectation(&s.decomp, &s.loads, &s.anomaly, 400, 9).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((e[(i, j)] - mc.mean[(i, j)]).abs() <= 4.0 * mc.stderr[(i, j)] + 1e-12);
            }
        }
    }

    #[test]
    fn monte_carlo_degenerate_and_deterministic() {
        let s = setup(&[(0.8, 0.8)], 2);
        let mc = monte_carlo_expectation(&s.decomp, &s.loads, &s.anomaly, 5, 1).unwrap();
        let det = difference_ntd_matrix(&s.decomp, &s.loads, &[0.8]).unwrap();
        assert!(mc.stderr.iter().all(|v| *v < 1e-15));
        assert!((&mc.mean - &det).abs().max() < 1e-14);
        let s = setup(&[(0.0, 2.0)], 2);
        let a = monte_carlo_expectation(&s.decomp, &s.loads, &s.anomaly, 7, 3).unwrap();
        let b = monte_carlo_expectation(&s.decomp, &s.loads, &s.anomaly, 7, 3).unwrap();
        assert_eq!(a.mean, b.mean);
        assert!(monte_carlo_expectation(&s.decomp, &s.loads, &s.anomaly, 1, 3).is_err());
    }

    #[test]
    fn stderr_halves_when_samples_quadruple() {
        let s = setup(&[(0.0, 3.0)], 1);
        let ratios: Vec<f64> = (0..4)
            .map(|rep| {
                let a = monte_carlo_expectation(&s.decomp, &s.loads, &s.anomaly, 100, rep).unwrap();
                let b = monte_carlo_expectation(&s.decomp, &s.loads, &s.anomaly, 400, 100 + rep).unwrap();
                b.stderr[(0, 0)] / a.stderr[(0, 0)]
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 0.5).abs() <= 0.1, "ratios {ratios:?}");
    }
}
