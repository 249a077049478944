//! Energy spectra and level-spacing statistics.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CMat, Error, Result, C64};

/// Sorted energy levels `E_1 <= ... <= E_D`.
///
/// A spectrum remembers the affine frame it was derived in: `energies =
/// scale * base + shift` with `scale >= 0`. Level-spacing ratios are taken
/// from `base`, so spectra related by an increasing affine map report
/// bit-identical ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumFile", into = "SpectrumFile")]
pub struct Spectrum {
    base: Vec<f64>,
    scale: f64,
    shift: f64,
    energies: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpectrumFile {
    dim: usize,
    energies: Vec<f64>,
}

impl TryFrom<SpectrumFile> for Spectrum {
    type Error = Error;

    fn try_from(f: SpectrumFile) -> Result<Self> {
        if f.dim != f.energies.len() {
            return Err(Error::DimensionMismatch { expected: f.dim, found: f.energies.len() });
        }
        Spectrum::new(f.energies)
    }
}

impl From<Spectrum> for SpectrumFile {
    fn from(s: Spectrum) -> Self {
        SpectrumFile { dim: s.dim(), energies: s.energies }
    }
}

impl Spectrum {
    /// Sorts `energies` ascending. Requires at least two finite levels.
    pub fn new(mut energies: Vec<f64>) -> Result<Self> {
        if energies.len() < 2 {
            return Err(Error::InvalidDimension { dim: energies.len(), reason: "a spectrum needs at least 2 levels" });
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::Precondition("energies must be finite".into()));
        }
        energies.sort_by(f64::total_cmp);
        Ok(Self { base: energies.clone(), scale: 1.0, shift: 0.0, energies })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Mean level `E_bar = (1/D) sum_k E_k`.
    pub fn mean_energy(&self) -> f64 {
        self.energies.iter().sum::<f64>() / self.dim() as f64
    }

    /// Gap `E_ij = E_i - E_j`.
    pub fn gap(&self, i: usize, j: usize) -> f64 {
        self.energies[i] - self.energies[j]
    }

    /// Returns the spectrum `a * E_i + b`. Requires `a >= 0` so the level
    /// order is preserved.
    pub fn affine_map(&self, a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Precondition(format!("affine map needs finite a >= 0, got a={a}, b={b}")));
        }
        let scale = a * self.scale;
        let shift = a * self.shift + b;
        let energies = self.energies.iter().map(|&e| a * e + b).collect();
        Ok(Self { base: self.base.clone(), scale, shift, energies })
    }

    /// Noiseless trace `Tr exp(-i H0 t)`.
    pub fn trace_evolution(&self, t: f64) -> C64 {
        self.energies.iter().map(|&e| C64::from_polar(1.0, -e * t)).sum()
    }

    /// Hex SHA-256 of the little-endian level bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.energies {
            h.update(e.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStatistics {
    /// `s_n = e_{n+1} - e_n`, length `D - 1`.
    pub spacings: Vec<f64>,
    /// `r_n = s_n / s_{n-1}`, length `D - 2`.
    pub ratios: Vec<f64>,
    /// `min(r_n, 1/r_n)`.
    pub folded_ratios: Vec<f64>,
    pub mean_folded_ratio: f64,
}

pub fn level_statistics(spec: &Spectrum) -> Result<LevelStatistics> {
    let d = spec.dim();
    if d < 3 {
        return Err(Error::InvalidDimension { dim: d, reason: "level statistics need at least 3 levels" });
    }
    let diffs: Vec<f64> = spec.base.windows(2).map(|w| w[1] - w[0]).collect();
    let mut spacings = Vec::with_capacity(d - 1);
    for (n, &df) in diffs.iter().enumerate() {
        let s = spec.scale * df;
        if df == 0.0 || s == 0.0 {
            return Err(Error::DegenerateSpectrum { index: n });
        }
        spacings.push(s);
    }
    let ratios: Vec<f64> = diffs.windows(2).map(|w| w[1] / w[0]).collect();
    let folded_ratios: Vec<f64> = ratios.iter().map(|&r| r.min(1.0 / r)).collect();
    let mean_folded_ratio = folded_ratios.iter().sum::<f64>() / folded_ratios.len() as f64;
    Ok(LevelStatistics { spacings, ratios, folded_ratios, mean_folded_ratio })
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension { dim, reason: "random-matrix sampling needs dim >= 2" });
    }
    Ok(())
}

/// Eigenvalues of a GUE matrix: diagonal variance `1/D`, off-diagonal real
/// and imaginary parts each of variance `1/(2D)`. Semicircle on `[-2, 2]`.
pub fn sample_gue_spectrum<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Spectrum> {
    check_dim(dim)?;
    let sd_diag = (1.0 / dim as f64).sqrt();
    let sd_off = (0.5 / dim as f64).sqrt();
    let mut h = CMat::zeros(dim, dim);
    for i in 0..dim {
        let x: f64 = StandardNormal.sample(rng);
        h[(i, i)] = C64::new(sd_diag * x, 0.0);
        for j in i + 1..dim {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let z = C64::new(sd_off * re, sd_off * im);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    Spectrum::new(h.symmetric_eigenvalues().iter().copied().collect())
}

/// Eigenvalues of a GOE matrix: diagonal variance `2/D`, off-diagonal
/// variance `1/D`. Semicircle on `[-2, 2]`.
pub fn sample_goe_spectrum<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Spectrum> {
    check_dim(dim)?;
    let sd_diag = (2.0 / dim as f64).sqrt();
    let sd_off = (1.0 / dim as f64).sqrt();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let x: f64 = StandardNormal.sample(rng);
        h[(i, i)] = sd_diag * x;
        for j in i + 1..dim {
            let x: f64 = StandardNormal.sample(rng);
            h[(i, j)] = sd_off * x;
            h[(j, i)] = sd_off * x;
        }
    }
    Spectrum::new(h.symmetric_eigenvalues().iter().copied().collect())
}
