//! Experiment configuration (TOML) and the built-in presets.
//!
//! A configuration file has top-level keys `name`, `seed` and `output`, and
//! the sections `[mesh]`, `[currents]`, `[chaos]`, `[noise]`, `[method]`
//! (with `[method.fm]` and `[method.mm]`), `[grid]`, `[validation]` and one
//! `[[anomaly.pixels]]` table per pixel. Unknown keys are rejected. Every
//! section except the anomaly has defaults, so a minimal file only needs
//! `name`, `seed` and the pixels:
//!
//! ```toml
//! name = "single-disk"
//! seed = 7
//!
//! [[anomaly.pixels]]
//! id = 1
//! contrast = { lo = 8.0, hi = 10.0 }
//! shape = { kind = "disk", center = [0.25, 0.2], radius = 0.3 }
//! ```
//!
//! Polygon pixels use `shape = { kind = "polygon", vertices = [[x, y], ...] }`
//! with counterclockwise vertices.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factorization::CutoffPolicy;
use crate::geometry::{
    rectangle, sector_polygon, validate_pixels, ContrastInterval, PixelRegion, DEFAULT_DISK_SIDES,
    DEFAULT_MARGIN,
};
use crate::grid::GridSpec;
use crate::mesh::{boundary_vertex_count, MeshOptions};
use crate::monotonicity::{check_beta, BallLattice, TestBall};
use crate::random_field::{classify_contrast, ContrastCase, PixelAnomaly};
use crate::sfem::{SfemOptions, DEFAULT_MAX_ITER, DEFAULT_SFEM_TOL};

/// Offset of the sampling seed from the master seed.
pub const SAMPLING_SEED_OFFSET: u64 = 1;
/// Offset of the noise seed from the master seed.
pub const NOISE_SEED_OFFSET: u64 = 2;

/// Highest accepted mesh refinement level.
pub const MAX_LEVEL: u32 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; must fit in a signed 64-bit integer.
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub currents: CurrentsSection,
    #[serde(default)]
    pub chaos: ChaosSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub validation: ValidationSection,
    pub anomaly: PixelAnomaly,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSection {
    pub level: u32,
    pub disk_sides: usize,
    pub margin: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection {
            level: 4,
            disk_sides: DEFAULT_DISK_SIDES,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl MeshSection {
    pub fn options(&self) -> MeshOptions {
        MeshOptions {
            disk_sides: self.disk_sides,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurrentsSection {
    /// Number of frequencies; there are `2·t_max` current patterns.
    pub t_max: usize,
}

impl Default for CurrentsSection {
    fn default() -> Self {
        CurrentsSection { t_max: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosSection {
    pub degree: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ChaosSection {
    fn default() -> Self {
        ChaosSection {
            degree: 3,
            tol: DEFAULT_SFEM_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl ChaosSection {
    pub fn options(&self) -> SfemOptions {
        SfemOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Relative spectral-norm noise level; 0 disables the noisy matrix.
    pub level: f64,
    /// Overrides the seed derived from the master seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Fm,
    Mm,
    #[default]
    Both,
}

impl MethodKind {
    pub fn runs_fm(self) -> bool {
        matches!(self, MethodKind::Fm | MethodKind::Both)
    }

    pub fn runs_mm(self) -> bool {
        matches!(self, MethodKind::Mm | MethodKind::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSection {
    pub kind: MethodKind,
    pub fm: FmSection,
    pub mm: MmSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FmSection {
    /// Cutoff for noise-free matrices; all `2·t_max` triplets when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean_cutoff: Option<CutoffPolicy>,
    /// Cutoff for noisy matrices; the recorded noise level when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noisy_cutoff: Option<CutoffPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MmSection {
    pub lattice: BallLattice,
    /// Contrast bound; the largest admissible value when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Tolerance relative to `‖L‖₂`; `1e-6` for clean and the noise level
    /// for noisy matrices when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    /// Monte Carlo samples for the SFEM comparison; 0 skips it.
    pub monte_carlo_samples: usize,
    /// Also write the Monte Carlo matrix during `simulate`.
    pub emit_monte_carlo: bool,
    /// Compare chaos degrees `m` and `m + 1`.
    pub chaos_convergence: bool,
    /// Compare closed-form dipole traces with FEM solutions.
    pub dipole_oracle: bool,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection {
            monte_carlo_samples: 0,
            emit_monte_carlo: false,
            chaos_convergence: false,
            dipole_oracle: true,
        }
    }
}

/// Per-purpose seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub sampling: u64,
    pub noise: u64,
}

/// Resolved parameters of the monotonicity method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MmParameters {
    pub case: ContrastCase,
    pub alpha: f64,
    pub beta: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the serialized configuration.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        }))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            master: self.seed,
            sampling: self.seed.wrapping_add(SAMPLING_SEED_OFFSET),
            noise: self
                .noise
                .seed
                .unwrap_or_else(|| self.seed.wrapping_add(NOISE_SEED_OFFSET)),
        }
    }

    pub fn patterns(&self) -> usize {
        2 * self.currents.t_max
    }

    /// Checks every precondition the pipeline stages rely on.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.name.trim().is_empty() {
            return cfg("name must not be empty".into());
        }
        if self.seed > i64::MAX as u64 || self.noise.seed.is_some_and(|s| s > i64::MAX as u64) {
            return cfg("seeds must not exceed 2^63 - 1".into());
        }
        let m = &self.mesh;
        if m.level > MAX_LEVEL {
            return cfg(format!("mesh level {} exceeds {MAX_LEVEL}", m.level));
        }
        if m.disk_sides < 8 {
            return cfg("disk_sides must be at least 8".into());
        }
        if !(m.margin > 0.0 && m.margin < 0.5) {
            return cfg("mesh margin must lie in (0, 0.5)".into());
        }
        let t = self.currents.t_max;
        if t == 0 {
            return cfg("t_max must be at least 1".into());
        }
        let nb = boundary_vertex_count(m.level);
        if nb < 4 * t {
            return Err(Error::Aliasing {
                boundary: nb,
                patterns: 2 * t,
                needed: 4 * t,
            });
        }
        let c = &self.chaos;
        if c.degree > 10 {
            return cfg("chaos degree above 10 is not supported".into());
        }
        if !(c.tol > 0.0 && c.tol < 1.0) || c.max_iter == 0 {
            return cfg("chaos tol must lie in (0, 1) and max_iter must be positive".into());
        }
        if self.anomaly.is_empty() {
            return Err(Error::NoAnomaly);
        }
        validate_pixels(&self.anomaly.pixels, m.disk_sides, m.margin)?;
        if !(self.noise.level >= 0.0 && self.noise.level.is_finite()) {
            return cfg("noise level must be finite and non-negative".into());
        }
        for p in [self.method.fm.clean_cutoff, self.method.fm.noisy_cutoff].into_iter().flatten() {
            match p {
                CutoffPolicy::Fixed { tau } if tau == 0 || tau > 2 * t => {
                    return cfg(format!("cutoff {tau} outside 1..={}", 2 * t));
                }
                CutoffPolicy::Noise { level } if !(level >= 0.0 && level.is_finite()) => {
                    return cfg("cutoff noise level must be finite and non-negative".into());
                }
                _ => {}
            }
        }
        self.grid.validate()?;
        if self.method.kind.runs_mm() {
            let l = self.method.mm.lattice;
            if l.size < 2 || !(l.radius > 0.0) || !(l.clip > 0.0) || l.clip + l.radius >= 1.0 {
                return cfg("ball lattice needs size >= 2, radius > 0 and clip + radius < 1".into());
            }
            TestBall::new([l.clip, 0.0], l.radius)?;
            if let Some(e) = self.method.mm.epsilon {
                if !(e >= 0.0 && e.is_finite()) {
                    return cfg("epsilon must be finite and non-negative".into());
                }
            }
            self.mm_parameters()?;
        }
        if self.validation.monte_carlo_samples == 1 {
            return cfg("Monte Carlo needs at least 2 samples".into());
        }
        if self.validation.emit_monte_carlo && self.validation.monte_carlo_samples == 0 {
            return cfg("emit_monte_carlo requires monte_carlo_samples >= 2".into());
        }
        Ok(())
    }

    /// Contrast case, `α` and `β` for the monotonicity method.
    pub fn mm_parameters(&self) -> Result<MmParameters> {
        let class = classify_contrast(&self.anomaly)?;
        if class.case == ContrastCase::Neither {
            return Err(Error::contract(
                "the anomaly satisfies neither monotonicity contrast condition",
            ));
        }
        let alpha = self.method.mm.alpha.unwrap_or(class.alpha_max);
        let alpha_ok = match class.case {
            ContrastCase::CaseB => alpha > 0.0 && alpha < 1.0,
            _ => alpha > 0.0,
        };
        if !alpha_ok || alpha > class.alpha_max * (1.0 + 1e-12) {
            return Err(Error::contract(format!(
                "alpha = {alpha} is not admissible (largest admissible value {})",
                class.alpha_max
            )));
        }
        let beta = match self.method.mm.beta {
            Some(b) => b,
            None => crate::monotonicity::default_beta(class.case, alpha)?,
        };
        check_beta(class.case, alpha, beta)?;
        Ok(MmParameters {
            case: class.case,
            alpha,
            beta,
        })
    }
}

pub const PRESET_NAMES: [&str; 4] = ["test1", "test2", "test3", "test4"];

/// A preset configuration and a human-readable account of its choices.
pub struct Preset {
    pub config: ExperimentConfig,
    pub description: String,
}

fn interval(lo: f64, hi: f64) -> ContrastInterval {
    ContrastInterval { lo, hi }
}

fn base(name: &str, pixels: Vec<PixelRegion>, noisy_tau: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        seed: 2024,
        output: PathBuf::from("out").join(name),
        mesh: MeshSection::default(),
        currents: CurrentsSection::default(),
        chaos: ChaosSection {
            tol: 1e-10,
            ..ChaosSection::default()
        },
        noise: NoiseSection {
            level: 1e-3,
            seed: None,
        },
        method: MethodSection {
            kind: MethodKind::Both,
            fm: FmSection {
                clean_cutoff: Some(CutoffPolicy::Fixed { tau: 100 }),
                noisy_cutoff: Some(CutoffPolicy::Fixed { tau: noisy_tau }),
            },
            mm: MmSection::default(),
        },
        grid: GridSpec::default(),
        validation: ValidationSection::default(),
        anomaly: PixelAnomaly { pixels },
    }
}

/// The four built-in experiments. Geometry coordinates are approximations
/// chosen for these presets; only the contrast intervals are prescribed.
pub fn preset(name: &str) -> Result<Preset> {
    let (config, geometry) = match name {
        "test1" => {
            let mut c = base(
                "test1",
                vec![PixelRegion::disk(1, [0.25, 0.2], 0.3, interval(8.0, 10.0))],
                6,
            );
            c.validation.monte_carlo_samples = 2000;
            (c, "one disk pixel, center (0.25, 0.2), radius 0.3, contrast [8, 10]".to_string())
        }
        "test2" => {
            let c = base(
                "test2",
                vec![
                    PixelRegion::polygon(1, rectangle(-0.4, -0.3, -0.1, 0.0), interval(-0.99, -0.41)),
                    PixelRegion::polygon(2, rectangle(-0.1, -0.3, 0.2, 0.0), interval(-0.99, -0.01)),
                    PixelRegion::polygon(3, rectangle(-0.4, 0.0, -0.1, 0.3), interval(-0.99, 0.39)),
                ],
                7,
            );
            (
                c,
                "L-shaped block of three 0.3 x 0.3 squares: [-0.4,-0.1]x[-0.3,0] contrast [-0.99,-0.41], \
                 [-0.1,0.2]x[-0.3,0] contrast [-0.99,-0.01], [-0.4,-0.1]x[0,0.3] contrast [-0.99,0.39]"
                    .to_string(),
            )
        }
        "test3" => {
            let center = [-0.35, 0.3];
            let mut pixels: Vec<PixelRegion> = (0..3)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / 3.0;
                    let b = 2.0 * PI * (k + 1) as f64 / 3.0;
                    PixelRegion::polygon(
                        k + 1,
                        sector_polygon(center, 0.25, a, b, 22),
                        interval(1.0 + k as f64, 7.0 + k as f64),
                    )
                })
                .collect();
            let shifts = [-0.5, -0.4, -0.3, -0.5, -0.2, -0.4];
            let (x0, y0, w, h) = (0.1, -0.5, 0.2, 0.4 / 3.0);
            for (k, s) in shifts.iter().enumerate() {
                let (i, j) = ((k % 2) as f64, (k / 2) as f64);
                pixels.push(PixelRegion::polygon(
                    k + 4,
                    rectangle(x0 + i * w, y0 + j * h, x0 + (i + 1.0) * w, y0 + (j + 1.0) * h),
                    interval(*s, s + 3.0),
                ));
            }
            let mut c = base("test3", pixels, 12);
            c.method.kind = MethodKind::Fm;
            (
                c,
                "disk center (-0.35, 0.3), radius 0.25, split into three 120-degree sectors with \
                 contrasts [1,7], [2,8], [3,9]; square [0.1,0.5]x[-0.5,-0.1] split into 2 x 3 \
                 rectangles with contrasts [-0.5,2.5], [-0.4,2.6], [-0.3,2.7], [-0.5,2.5], \
                 [-0.2,2.8], [-0.4,2.6]"
                    .to_string(),
            )
        }
        "test4" => {
            let pixels = (0..3)
                .map(|k| {
                    let a = PI / 2.0 + 2.0 * PI * k as f64 / 3.0;
                    PixelRegion::disk(k + 1, [0.45 * a.cos(), 0.45 * a.sin()], 0.15, interval(-0.5, 2.5))
                })
                .collect();
            let mut c = base("test4", pixels, 11);
            c.method.kind = MethodKind::Fm;
            (
                c,
                "three disk pixels of radius 0.15 centered at radius 0.45, angles 90, 210 and 330 \
                 degrees, contrast [-0.5, 2.5] each"
                    .to_string(),
            )
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let description = describe(&config, &geometry);
    Ok(Preset { config, description })
}

fn describe(c: &ExperimentConfig, geometry: &str) -> String {
    let mut s = String::new();
    writeln!(s, "preset {}: approximate geometry, figures are qualitative comparisons only", c.name).unwrap();
    writeln!(s, "  anomaly: {geometry}").unwrap();
    writeln!(
        s,
        "  mesh: level {} ({} boundary vertices), disks as {}-gons, margin {}",
        c.mesh.level,
        boundary_vertex_count(c.mesh.level),
        c.mesh.disk_sides,
        c.mesh.margin
    )
    .unwrap();
    writeln!(s, "  currents: T = {} ({} patterns)", c.currents.t_max, c.patterns()).unwrap();
    writeln!(s, "  chaos: degree {}, tolerance {:e}", c.chaos.degree, c.chaos.tol).unwrap();
    writeln!(s, "  noise: level {:e}", c.noise.level).unwrap();
    writeln!(
        s,
        "  factorization: clean cutoff {:?}, noisy cutoff {:?}, three dipole directions at 120 degrees",
        c.method.fm.clean_cutoff, c.method.fm.noisy_cutoff
    )
    .unwrap();
    if c.method.kind.runs_mm() {
        let l = c.method.mm.lattice;
        writeln!(
            s,
            "  monotonicity: {}x{} ball lattice, radius {}, centers within {}; ball quadrature 32x32",
            l.size, l.size, l.radius, l.clip
        )
        .unwrap();
    }
    writeln!(s, "  grid: {}x{} over [-1,1]^2, clipped at radius {}", c.grid.size, c.grid.size, c.grid.clip).unwrap();
    let seeds = c.seeds();
    writeln!(s, "  seeds: master {}, sampling {}, noise {}", seeds.master, seeds.sampling, seeds.noise).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_field::{expected_inverse_sigma, expected_sigma};
    use proptest::prelude::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            p.config.validate().unwrap();
            assert_eq!(p.config.patterns(), 100);
            let text = p.config.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), p.config);
            assert!(p.description.contains("approximate"));
        }
        assert!(preset("test5").is_err());
    }

    #[test]
    fn preset_contrasts() {
        let c = preset("test2").unwrap().config;
        assert_eq!(c.mm_parameters().unwrap().case, ContrastCase::CaseB);
        assert!(expected_sigma(&c.anomaly).iter().all(|&e| e <= 1.0 - 0.3 + 1e-12));
        let c = preset("test3").unwrap().config;
        let h: Vec<f64> = expected_inverse_sigma(&c.anomaly).iter().map(|v| 1.0 / v).collect();
        assert!(h[..3].iter().all(|&v| v > 4.3));
        assert!(h[3..].iter().all(|&v| v > 1.5));
        let c = preset("test1").unwrap().config;
        let mm = c.mm_parameters().unwrap();
        assert_eq!(mm.case, ContrastCase::CaseA);
        assert!((mm.beta - mm.alpha / (1.0 + mm.alpha)).abs() < 1e-15);
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let text = r#"
name = "x"
seed = 7

[[anomaly.pixels]]
id = 1
contrast = { lo = 8.0, hi = 10.0 }
shape = { kind = "disk", center = [0.25, 0.2], radius = 0.3 }
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.mesh.level, 4);
        assert_eq!(c.currents.t_max, 50);
        assert_eq!(c.chaos.degree, 3);
        assert_eq!(c.seeds(), Seeds { master: 7, sampling: 8, noise: 9 });
        assert!(ExperimentConfig::from_toml(&text.replace("seed = 7", "seed = 7\nsede = 1")).is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let good = preset("test1").unwrap().config;
        let mut c = good.clone();
        c.currents.t_max = 200;
        assert!(matches!(c.validate(), Err(Error::Aliasing { .. })));
        let mut c = good.clone();
        c.method.mm.beta = Some(0.99);
        assert!(matches!(c.validate(), Err(Error::Contract(_))));
        let mut c = good.clone();
        c.method.fm.noisy_cutoff = Some(CutoffPolicy::Fixed { tau: 101 });
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.anomaly.pixels.clear();
        assert!(matches!(c.validate(), Err(Error::NoAnomaly)));
        let mut c = good.clone();
        c.seed = u64::MAX;
        assert!(c.validate().is_err());
        let mut c = good;
        c.anomaly.pixels[0].contrast = interval(-0.5, 0.5);
        assert!(c.validate().is_err());
        c.method.kind = MethodKind::Fm;
        c.validate().unwrap();
    }

    #[test]
    fn hash_tracks_content() {
        let a = preset("test1").unwrap().config;
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    proptest! {
        #[test]
        fn round_trip(
            seed in 0u64..(i64::MAX as u64),
            level in 0u32..6,
            t in 1usize..20,
            lo in -0.99f64..5.0,
            w in 0.0f64..5.0,
            cx in -0.3f64..0.3,
            r in 0.05f64..0.3,
            noise in 0.0f64..0.1,
            tau in proptest::option::of(1usize..10),
        ) {
            let mut c = preset("test1").unwrap().config;
            c.seed = seed;
            c.mesh.level = level;
            c.currents.t_max = t;
            c.noise.level = noise;
            c.method.fm.noisy_cutoff = tau.map(|tau| CutoffPolicy::Fixed { tau });
            c.anomaly.pixels = vec![PixelRegion::disk(3, [cx, 0.1], r, interval(lo, lo + w))];
            let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
