//! Command stages: simulate, noise, reconstruct and validate.
//!
//! Every stage writes its artifacts atomically into an output directory and
//! records them in `manifest.json` together with the configuration hash and
//! the seeds that produced them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaos::ChaosBasis;
use crate::config::{ExperimentConfig, MmParameters, Seeds};
use crate::error::{Error, Result};
use crate::factorization::{dipole_trace, fem_dipole_coefficients, scan, CutoffPolicy, DEFAULT_MOLLIFIER_RADIUS};
use crate::fem::{assemble, difference_ntd_matrix, ntd_matrix, DifferenceLoads, StiffnessDecomposition};
use crate::fourier::CurrentBasis;
use crate::io::write_atomic;
use crate::mesh::{build_disk_mesh_with, DiskMesh};
use crate::monotonicity::reconstruct_mask;
use crate::ntd::{add_noise, spectral_norm, NtdDifferenceMatrix, Provenance};
use crate::random_field::{expected_inverse_sigma, expected_sigma, harmonic_contrast, ContrastCase};
use crate::sfem::{monte_carlo_expectation, sfem_expectation, MonteCarloResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MESH_FILE: &str = "mesh.txt";
pub const CLEAN_FILE: &str = "L_clean.ntd";
pub const MONTE_CARLO_FILE: &str = "L_mc.ntd";
pub const NOISY_FILE: &str = "L_noisy.ntd";
pub const RECONSTRUCT_FILE: &str = "reconstruct.json";
pub const VALIDATION_FILE: &str = "validation.json";

/// Relative tolerance for sign and sandwich checks, scaled by `‖Λ(1)‖₂`.
pub const SEMIDEFINITE_TOL: f64 = 1e-6;
/// Default monotonicity tolerance on clean data, relative to `‖L‖₂`.
pub const CLEAN_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub kind: String,
    pub sha256: String,
    pub config_hash: String,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Manifest {
    /// Keyed by file name.
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))
    }
}

/// Files written by one stage, in write order.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    config_hash: String,
    seeds: Seeds,
    manifest: Manifest,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(config: &ExperimentConfig, dir: &Path) -> Result<Writer> {
        Ok(Writer {
            dir: dir.to_path_buf(),
            config_hash: config.hash()?,
            seeds: config.seeds(),
            manifest: Manifest::load(dir)?,
            written: Vec::new(),
        })
    }

    fn write(&mut self, file: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(file);
        write_atomic(&path, bytes)?;
        self.manifest.artifacts.insert(
            file.to_string(),
            ArtifactRecord {
                file: file.to_string(),
                kind: kind.to_string(),
                sha256: hex_digest(bytes),
                config_hash: self.config_hash.clone(),
                seeds: self.seeds,
            },
        );
        self.written.push(path);
        Ok(())
    }

    fn finish(self) -> Result<RunArtifacts> {
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;
        Ok(RunArtifacts {
            dir: self.dir,
            files: self.written,
        })
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Mesh, stiffness decomposition and difference loads for a configuration.
pub struct Discretization {
    pub mesh: DiskMesh,
    pub decomp: StiffnessDecomposition,
    pub loads: DifferenceLoads,
}

impl Discretization {
    pub fn build(config: &ExperimentConfig) -> Result<Discretization> {
        let mesh = build_disk_mesh_with(config.mesh.level, &config.anomaly.pixels, &config.mesh.options())
            .map_err(|e| e.in_stage("mesh"))?;
        let basis = CurrentBasis::new(config.currents.t_max)?;
        let decomp = assemble(&mesh, basis).map_err(|e| e.in_stage("assembly"))?;
        let loads = DifferenceLoads::new(&mesh, &decomp).map_err(|e| e.in_stage("difference loads"))?;
        Ok(Discretization { mesh, decomp, loads })
    }

    /// `E(Λ(σ)) − Λ(1)` by the stochastic Galerkin method of degree `degree`.
    pub fn sfem(&self, config: &ExperimentConfig, degree: usize) -> Result<NtdDifferenceMatrix> {
        let basis = ChaosBasis::new(&config.anomaly.intervals(), degree)?;
        let e = sfem_expectation(&self.decomp, &self.loads, &basis, config.chaos.options())
            .map_err(|e| e.in_stage("stochastic Galerkin solve"))?;
        NtdDifferenceMatrix::new(e.matrix, Provenance::Sfem)
    }

    pub fn monte_carlo(&self, config: &ExperimentConfig) -> Result<MonteCarloResult> {
        monte_carlo_expectation(
            &self.decomp,
            &self.loads,
            &config.anomaly,
            config.validation.monte_carlo_samples,
            config.seeds().sampling,
        )
        .map_err(|e| e.in_stage("Monte Carlo"))
    }

    pub fn unit_ntd(&self) -> Result<DMatrix<f64>> {
        ntd_matrix(&self.decomp, &vec![0.0; self.decomp.pixels().len()])
    }
}

fn snapshot(w: &mut Writer, config: &ExperimentConfig) -> Result<()> {
    w.write(CONFIG_FILE, "config", config.to_toml()?.as_bytes())
}

/// Writes the mesh, the clean SFEM matrix, optionally the Monte Carlo
/// matrix, and the noisy matrix when the noise level is positive.
pub fn run_simulate(config: &ExperimentConfig, out: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    let mut w = Writer::new(config, out)?;
    snapshot(&mut w, config)?;
    let disc = Discretization::build(config)?;
    let mut mesh_text = Vec::new();
    disc.mesh.write_text(&mut mesh_text)?;
    w.write(MESH_FILE, "mesh", &mesh_text)?;
    let clean = disc.sfem(config, config.chaos.degree)?;
    w.write(CLEAN_FILE, "ntd-diff clean sfem", clean.to_text().as_bytes())?;
    if config.validation.emit_monte_carlo {
        let mc = disc.monte_carlo(config)?;
        let mut m = NtdDifferenceMatrix::new(mc.mean, Provenance::MonteCarlo)?;
        m.seed = config.seeds().sampling;
        w.write(MONTE_CARLO_FILE, "ntd-diff monte carlo", m.to_text().as_bytes())?;
    }
    if config.noise.level > 0.0 {
        let noisy = add_noise(&clean, config.noise.level, config.seeds().noise).map_err(|e| e.in_stage("noise"))?;
        w.write(NOISY_FILE, "ntd-diff noisy", noisy.to_text().as_bytes())?;
    }
    w.finish()
}

fn load_matrix(config: &ExperimentConfig, path: &Path) -> Result<NtdDifferenceMatrix> {
    let m = NtdDifferenceMatrix::load(path, Provenance::Sfem)?;
    if m.t_max != config.currents.t_max {
        return Err(Error::contract(format!(
            "matrix has T = {} but the configuration has T = {}",
            m.t_max, config.currents.t_max
        )));
    }
    Ok(m)
}

/// Adds noise at the configured level to a stored matrix.
pub fn run_noise(config: &ExperimentConfig, matrix: &Path, out: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    if config.noise.level == 0.0 {
        return Err(Error::Config("noise level is 0; nothing to perturb".into()));
    }
    let clean = load_matrix(config, matrix)?;
    let noisy = add_noise(&clean, config.noise.level, config.seeds().noise)?;
    let mut w = Writer::new(config, out)?;
    snapshot(&mut w, config)?;
    w.write(NOISY_FILE, "ntd-diff noisy", noisy.to_text().as_bytes())?;
    w.finish()
}

/// Parameters and summary of a reconstruction, written as `reconstruct.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionRecord {
    pub matrix: String,
    pub noise_level: f64,
    pub norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factorization: Option<FmRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotonicity: Option<MmRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FmRecord {
    pub policy: CutoffPolicy,
    pub tau: usize,
    pub degenerate: bool,
    pub indicator_max: f64,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MmRecord {
    pub case: ContrastCase,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon_relative: f64,
    pub epsilon: f64,
    pub balls: usize,
    pub passing_balls: usize,
}

/// Factorization indicator and/or monotonicity mask from a stored matrix.
pub fn run_reconstruct(config: &ExperimentConfig, matrix: &Path, out: &Path) -> Result<(RunArtifacts, ReconstructionRecord)> {
    config.validate()?;
    let kind = config.method.kind;
    // resolve everything that can fail on contract grounds before writing
    let mm: Option<MmParameters> = if kind.runs_mm() { Some(config.mm_parameters()?) } else { None };
    let data = load_matrix(config, matrix)?;
    let noisy = data.noise_level > 0.0;
    let norm = spectral_norm(&data.matrix);
    let mut record = ReconstructionRecord {
        matrix: matrix.display().to_string(),
        noise_level: data.noise_level,
        norm,
        factorization: None,
        monotonicity: None,
    };
    let mut grids = Vec::new();
    if kind.runs_fm() {
        let fm = &config.method.fm;
        let policy = if noisy {
            fm.noisy_cutoff.unwrap_or(CutoffPolicy::Noise { level: data.noise_level })
        } else {
            fm.clean_cutoff.unwrap_or(CutoffPolicy::Fixed { tau: data.dim() })
        };
        let s = scan(&data.matrix, config.grid, policy).map_err(|e| e.in_stage("factorization scan"))?;
        record.factorization = Some(FmRecord {
            policy,
            tau: s.tau,
            degenerate: s.grid.degenerate,
            indicator_max: s.grid.max(),
            singular_values: s.singular_values.clone(),
        });
        grids.push(("fm_indicator", s.grid));
    }
    if let Some(p) = mm {
        let rel = config
            .method
            .mm
            .epsilon
            .unwrap_or(if noisy { data.noise_level } else { CLEAN_EPSILON });
        let eps = rel * norm;
        let mask = reconstruct_mask(&data.matrix, config.method.mm.lattice, config.grid, p.case, p.alpha, p.beta, eps)
            .map_err(|e| e.in_stage("monotonicity tests"))?;
        record.monotonicity = Some(MmRecord {
            case: p.case,
            alpha: p.alpha,
            beta: p.beta,
            epsilon_relative: rel,
            epsilon: eps,
            balls: mask.decisions.len(),
            passing_balls: mask.decisions.iter().filter(|d| d.pass).count(),
        });
        grids.push(("mm_mask", mask.grid));
    }
    let mut w = Writer::new(config, out)?;
    snapshot(&mut w, config)?;
    for (stem, grid) in &grids {
        w.write(&format!("{stem}.csv"), "grid csv", grid.to_csv().as_bytes())?;
        w.write(&format!("{stem}.pgm"), "grid pgm", &grid.to_pgm())?;
        if *stem == "fm_indicator" {
            let mut normalized = grid.clone();
            normalized.values = grid.normalized();
            w.write("fm_indicator_normalized.csv", "grid csv", normalized.to_csv().as_bytes())?;
        }
    }
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    w.write(RECONSTRUCT_FILE, "reconstruction record", format!("{json}\n").as_bytes())?;
    Ok((w.finish()?, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `value ≤ tolerance`.
    fn at_most(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Check {
        Check {
            name: name.to_string(),
            value,
            tolerance,
            pass: value <= tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, detail: impl Into<String>) -> Check {
        Check {
            name: name.to_string(),
            value: f64::NAN,
            tolerance: f64::NAN,
            pass: false,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{:<4} {:<28} value {:<12.4e} tolerance {:<10.3e} {}\n",
                if c.pass { "ok" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance,
                c.detail
            ));
        }
        s
    }
}

fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    ((m + m.transpose()) * 0.5).symmetric_eigenvalues().max()
}

fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    ((m + m.transpose()) * 0.5).symmetric_eigenvalues().min()
}

/// Runs the invariant suites and writes `validation.json`. Failed checks are
/// report entries; only configuration errors and solver breakdowns are
/// returned as errors.
pub fn run_validate(config: &ExperimentConfig, out: &Path) -> Result<ValidationReport> {
    config.validate()?;
    let disc = Discretization::build(config)?;
    let mut checks = Vec::new();

    let e_sigma = expected_sigma(&config.anomaly);
    let h_sigma: Vec<f64> = expected_inverse_sigma(&config.anomaly).iter().map(|v| 1.0 / v).collect();
    let jensen = e_sigma
        .iter()
        .zip(&h_sigma)
        .map(|(e, h)| (h - e) / e)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most("jensen", jensen, 1e-14, "max relative excess of E(1/sigma)^-1 over E(sigma)"));

    let unit = disc.unit_ntd()?;
    let unit_norm = spectral_norm(&unit);
    let mut eig: Vec<f64> = ((&unit + unit.transpose()) * 0.5).symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let spectrum_err = |t_hi: usize| {
        (0..2 * t_hi.min(config.currents.t_max))
            .map(|k| {
                let t = (k / 2 + 1) as f64;
                (eig[k] * t - 1.0).abs()
            })
            .fold(0.0, f64::max)
    };
    checks.push(Check::at_most("unit_spectrum_t10", spectrum_err(10), 0.01, "eigenvalues of the unit-conductivity map vs 1/t"));
    checks.push(Check::at_most("unit_spectrum_t25", spectrum_err(25), 0.05, "eigenvalues of the unit-conductivity map vs 1/t"));

    let clean = disc.sfem(config, config.chaos.degree)?;
    let l = &clean.matrix;
    let l_norm = spectral_norm(l);
    let tol = SEMIDEFINITE_TOL * unit_norm;
    checks.push(Check::at_most("symmetry_defect", clean.symmetry_defect(), 1e-6, "||L - L^T|| / ||L|| of the expectation"));

    let at_mean = difference_ntd_matrix(&disc.decomp, &disc.loads, &config.anomaly.mean_contrast())?;
    let at_harmonic = difference_ntd_matrix(&disc.decomp, &disc.loads, &harmonic_contrast(&config.anomaly))?;
    checks.push(Check::at_most(
        "sandwich_upper",
        max_sym_eigenvalue(&(&at_mean - l)),
        tol,
        "lambda_max(L(E sigma) - E L(sigma))",
    ));
    checks.push(Check::at_most(
        "sandwich_lower",
        max_sym_eigenvalue(&(l - &at_harmonic)),
        tol,
        "lambda_max(E L(sigma) - L(E(1/sigma)^-1))",
    ));

    match crate::random_field::classify_contrast(&config.anomaly)?.case {
        ContrastCase::CaseA => checks.push(Check::at_most("sign_structure", max_sym_eigenvalue(l), tol, "case (a): lambda_max(sym L)")),
        ContrastCase::CaseB => checks.push(Check::at_most("sign_structure", -min_sym_eigenvalue(l), tol, "case (b): -lambda_min(sym L)")),
        ContrastCase::Neither => {}
    }

    let zero_anomaly = config.anomaly.intervals().iter().all(|iv| iv.lo == 0.0 && iv.hi == 0.0);
    if zero_anomaly {
        checks.push(Check::at_most("zero_anomaly", l_norm, 1e-12 * unit_norm, "||L|| for sigma = 1"));
    }

    if config.validation.monte_carlo_samples >= 2 {
        let mc = disc.monte_carlo(config)?;
        let (worst, frob) = compare_monte_carlo(l, &mc);
        checks.push(Check::at_most(
            "sfem_vs_mc_entries",
            worst,
            4.0,
            format!("max |L_SFEM - L_MC| / stderr over {} samples", mc.samples),
        ));
        checks.push(Check::at_most("sfem_vs_mc_frobenius", frob, 2e-3, "||L_SFEM - L_MC||_F / ||L_SFEM||_F"));
    }

    if config.validation.chaos_convergence {
        let next = disc.sfem(config, config.chaos.degree + 1)?;
        let rel = if l.norm() > 0.0 { (l - &next.matrix).norm() / l.norm() } else { (next.matrix).norm() };
        checks.push(Check::at_most("chaos_convergence", rel, 1e-4, "||L(m) - L(m+1)||_F / ||L(m)||_F"));
    }

    let (base, level) = if l_norm > 0.0 {
        (NtdDifferenceMatrix::new(l.clone(), Provenance::Sfem)?, config.noise.level)
    } else {
        (NtdDifferenceMatrix::new(unit.clone(), Provenance::Deterministic)?, 0.0)
    };
    let level = if level > 0.0 { level } else { 1e-3 };
    let noisy = add_noise(&base, level, config.seeds().noise)?;
    let ratio = spectral_norm(&(&noisy.matrix - &base.matrix)) / spectral_norm(&base.matrix);
    checks.push(Check::at_most(
        "noise_exactness",
        (ratio / level - 1.0).abs(),
        1e-12,
        format!("relative deviation of ||L_eps - L|| from {level:e} ||L||"),
    ));

    if config.validation.dipole_oracle {
        checks.push(dipole_check(&disc, config.currents.t_max.min(20))?);
    }

    let stored = out.join(CLEAN_FILE);
    if stored.exists() {
        checks.push(match NtdDifferenceMatrix::load(&stored, Provenance::Sfem) {
            Ok(m) => Check::at_most("stored_symmetry_defect", m.symmetry_defect(), 1e-6, format!("{}", stored.display())),
            Err(e) => Check::failed("stored_symmetry_defect", format!("{}: {e}", stored.display())),
        });
    }

    let report = ValidationReport {
        config: config.name.clone(),
        config_hash: config.hash()?,
        seeds: config.seeds(),
        pass: checks.iter().all(|c| c.pass),
        checks,
    };
    let mut w = Writer::new(config, out)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    w.write(VALIDATION_FILE, "validation report", format!("{json}\n").as_bytes())?;
    w.finish()?;
    Ok(report)
}

/// Worst entrywise deviation in standard errors and the relative Frobenius
/// distance. Entries with zero standard error must agree to round-off.
pub fn compare_monte_carlo(sfem: &DMatrix<f64>, mc: &MonteCarloResult) -> (f64, f64) {
    let scale = sfem.abs().max();
    let mut worst: f64 = 0.0;
    for ((a, b), s) in sfem.iter().zip(mc.mean.iter()).zip(mc.stderr.iter()) {
        let d = (a - b).abs();
        let z = if *s > 0.0 {
            d / s
        } else if d <= 1e-12 * scale {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    let frob = if sfem.norm() > 0.0 { (sfem - &mc.mean).norm() / sfem.norm() } else { mc.mean.norm() };
    (worst, frob)
}

pub const DIPOLE_POINTS: [[f64; 2]; 3] = [[0.0, 0.0], [0.4, 0.2], [-0.3, 0.5]];

/// Worst relative L² error between closed-form dipole traces and FEM
/// solutions over [`DIPOLE_POINTS`] and both coordinate moments.
pub fn dipole_oracle_error(mesh: &DiskMesh, decomp: &StiffnessDecomposition, t_max: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for z in DIPOLE_POINTS {
        for d in [[1.0, 0.0], [0.0, 1.0]] {
            let exact = dipole_trace(z, d, decomp.basis().t_max())?.coefficients;
            let fem = fem_dipole_coefficients(mesh, decomp, z, d, DEFAULT_MOLLIFIER_RADIUS)?;
            let (mut err, mut nrm) = (0.0, 0.0);
            for k in 0..2 * t_max {
                err += (exact[k] - fem[k]).powi(2);
                nrm += exact[k].powi(2);
            }
            worst = worst.max((err / nrm).sqrt());
        }
    }
    Ok(worst)
}

fn dipole_check(disc: &Discretization, t_max: usize) -> Result<Check> {
    let e = dipole_oracle_error(&disc.mesh, &disc.decomp, t_max).map_err(|e| e.in_stage("dipole oracle"))?;
    Ok(Check::at_most("dipole_oracle", e, 0.01, format!("relative L2 error over t <= {t_max}")))
}
