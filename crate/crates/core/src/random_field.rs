//! Pixelwise-uniform random conductivity `σ(θ) = 1 + Σ θ_q χ_q`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{validate_pixels, ContrastInterval, PixelRegion, DEFAULT_DISK_SIDES, DEFAULT_MARGIN};

/// Interval widths below this use the degenerate-interval limit.
pub const DEGENERATE_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PixelAnomaly {
    pub pixels: Vec<PixelRegion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastCase {
    CaseA,
    CaseB,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastClassification {
    pub case: ContrastCase,
    pub alpha_max: f64,
}

impl PixelAnomaly {
    pub fn new(pixels: Vec<PixelRegion>) -> Result<Self> {
        validate_pixels(&pixels, DEFAULT_DISK_SIDES, DEFAULT_MARGIN)?;
        Ok(PixelAnomaly { pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn intervals(&self) -> Vec<ContrastInterval> {
        self.pixels.iter().map(|p| p.contrast).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.pixels.iter().map(|p| p.id).collect()
    }

    /// Contrast means `(a_q + b_q)/2`.
    pub fn mean_contrast(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| p.contrast.midpoint()).collect()
    }
}

/// `E(σ)` inside each pixel.
pub fn expected_sigma(anomaly: &PixelAnomaly) -> Vec<f64> {
    anomaly.pixels.iter().map(|p| 1.0 + p.contrast.midpoint()).collect()
}

/// `E(σ⁻¹)` for `σ` uniform on `[1 + a, 1 + b]`.
pub fn inverse_mean(interval: ContrastInterval) -> f64 {
    let (a, b) = (interval.lo, interval.hi);
    let w = b - a;
    if w < DEGENERATE_WIDTH {
        // log(1 + x)/x expanded around the midpoint
        let m = 1.0 + 0.5 * (a + b);
        1.0 / m * (1.0 + w * w / (12.0 * m * m))
    } else {
        (w / (1.0 + a)).ln_1p() / w
    }
}

/// `E(σ⁻¹)` inside each pixel.
pub fn expected_inverse_sigma(anomaly: &PixelAnomaly) -> Vec<f64> {
    anomaly.pixels.iter().map(|p| inverse_mean(p.contrast)).collect()
}

/// Contrast of the conductivity `E(σ⁻¹)⁻¹` per pixel, i.e. `E(σ⁻¹)⁻¹ − 1`.
pub fn harmonic_contrast(anomaly: &PixelAnomaly) -> Vec<f64> {
    expected_inverse_sigma(anomaly).iter().map(|v| 1.0 / v - 1.0).collect()
}

pub fn classify_contrast(anomaly: &PixelAnomaly) -> Result<ContrastClassification> {
    if anomaly.is_empty() {
        return Err(Error::NoAnomaly);
    }
    let a = expected_inverse_sigma(anomaly)
        .iter()
        .map(|v| 1.0 / v)
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    if a > 0.0 {
        return Ok(ContrastClassification {
            case: ContrastCase::CaseA,
            alpha_max: a,
        });
    }
    let b = 1.0 - expected_sigma(anomaly).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if b > 0.0 {
        return Ok(ContrastClassification {
            case: ContrastCase::CaseB,
            alpha_max: b,
        });
    }
    Ok(ContrastClassification {
        case: ContrastCase::Neither,
        alpha_max: 0.0,
    })
}

/// Uniform `[0, 1)` with 53 random bits.
pub(crate) fn unit_uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Seeded stream of contrast vectors. Each draw consumes one value per
/// pixel in pixel order, so sample `k` is fully determined by the seed and `k`.
pub struct ContrastSampler {
    rng: ChaCha8Rng,
    intervals: Vec<ContrastInterval>,
}

impl ContrastSampler {
    pub fn new(anomaly: &PixelAnomaly, seed: u64) -> Self {
        ContrastSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            intervals: anomaly.intervals(),
        }
    }

    pub fn next_sample(&mut self) -> Vec<f64> {
        self.intervals
            .iter()
            .map(|iv| {
                let u = unit_uniform(&mut self.rng);
                if iv.width() == 0.0 {
                    iv.lo
                } else {
                    iv.lo + u * iv.width()
                }
            })
            .collect()
    }
}

/// `n` contrast vectors in `Π_q [a_q, b_q]`.
pub fn sample(anomaly: &PixelAnomaly, seed: u64, n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::contract("sample count must be at least 1"));
    }
    let mut s = ContrastSampler::new(anomaly, seed);
    Ok((0..n).map(|_| s.next_sample()).collect())
}
