//! White-noise models: symmetry class plus variance profile `lambda_ij`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::flat::SplitMat;
use crate::spectra::Spectrum;
use crate::{CMat, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    /// Complex Hermitian noise, `E[eta_ij eta_kl] = lambda_ij d_il d_jk`.
    Gue,
    /// Real symmetric noise, `E[eta_ij eta_kl] = lambda_ij (d_ik d_jl + d_il d_jk) / 2`.
    Goe,
}

/// Variance profile as written in an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseProfile {
    /// `lambda_ij = J / D`.
    #[serde(rename = "const")]
    ConstantOverD {
        #[serde(rename = "J")]
        j: f64,
    },
    /// Explicit symmetric nonnegative matrix.
    Matrix { lambda: Vec<Vec<f64>> },
    /// `lambda_ij = (J / D) exp(-beta |E_i - E_j|)`.
    Gibbs {
        #[serde(rename = "J")]
        j: f64,
        beta: f64,
    },
}

/// Serializable `{ensemble, profile}` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub ensemble: Ensemble,
    pub profile: NoiseProfile,
}

/// A noise model bound to a spectrum, with its variance matrix expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    ensemble: Ensemble,
    profile: NoiseProfile,
    lambda: DMatrix<f64>,
}

fn check_strength(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::InvalidNoise(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

impl NoiseModel {
    pub fn new(ensemble: Ensemble, profile: NoiseProfile, spec: &Spectrum) -> Result<Self> {
        let d = spec.dim();
        let lambda = match &profile {
            NoiseProfile::ConstantOverD { j } => {
                check_strength("J", *j)?;
                DMatrix::from_element(d, d, j / d as f64)
            }
            NoiseProfile::Matrix { lambda } => {
                if lambda.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: lambda.len() });
                }
                if let Some(row) = lambda.iter().find(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch { expected: d, found: row.len() });
                }
                let m = DMatrix::from_fn(d, d, |i, j| lambda[i][j]);
                for i in 0..d {
                    for j in 0..d {
                        check_strength("lambda entries", m[(i, j)])?;
                        if m[(i, j)] != m[(j, i)] {
                            return Err(Error::InvalidNoise(format!("lambda is not symmetric at ({i},{j})")));
                        }
                    }
                }
                m
            }
            NoiseProfile::Gibbs { j, beta } => {
                check_strength("J", *j)?;
                check_strength("beta", *beta)?;
                let e = spec.energies();
                let jd = j / d as f64;
                DMatrix::from_fn(d, d, |a, b| jd * (-beta * (e[a] - e[b]).abs()).exp())
            }
        };
        Ok(Self { ensemble, profile, lambda })
    }

    pub fn from_spec(s: &NoiseSpec, spectrum: &Spectrum) -> Result<Self> {
        Self::new(s.ensemble, s.profile.clone(), spectrum)
    }

    pub fn constant(ensemble: Ensemble, j: f64, spec: &Spectrum) -> Result<Self> {
        Self::new(ensemble, NoiseProfile::ConstantOverD { j }, spec)
    }

    pub fn ensemble(&self) -> Ensemble {
        self.ensemble
    }

    pub fn profile(&self) -> &NoiseProfile {
        &self.profile
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    /// `J` for a constant profile, `None` otherwise.
    pub fn constant_j(&self) -> Option<f64> {
        match self.profile {
            NoiseProfile::ConstantOverD { j } => Some(j),
            _ => None,
        }
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambda.iter().copied().fold(0.0, f64::max)
    }

    /// Short human-readable label for metadata.
    pub fn describe(&self) -> String {
        let ens = match self.ensemble {
            Ensemble::Gue => "gue",
            Ensemble::Goe => "goe",
        };
        match &self.profile {
            NoiseProfile::ConstantOverD { j } => format!("{ens}:const(J={j})"),
            NoiseProfile::Matrix { .. } => format!("{ens}:matrix"),
            NoiseProfile::Gibbs { j, beta } => format!("{ens}:gibbs(J={j},beta={beta})"),
        }
    }
}

/// `J_i = sum_k lambda_ik`.
pub fn row_sums(model: &NoiseModel) -> Vec<f64> {
    model.lambda.row_iter().map(|r| r.iter().sum()).collect()
}

/// Precomputed per-entry standard deviations for one regularized time
/// slice of width `dt`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    dim: usize,
    ensemble: Ensemble,
    sd_diag: Vec<f64>,
    sd_off: DMatrix<f64>,
}

impl NoiseSampler {
    pub fn new(model: &NoiseModel, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidStep(dt));
        }
        let d = model.dim();
        let sd_diag = (0..d).map(|i| (model.lambda[(i, i)] / dt).sqrt()).collect();
        let sd_off = model.lambda.map(|l| (l / (2.0 * dt)).sqrt());
        Ok(Self { dim: d, ensemble: model.ensemble, sd_diag, sd_off })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fills a row-major `D x D` buffer with one sample of `eta`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [C64]) {
        let d = self.dim;
        self.fill(rng, |i, j, z| {
            out[i * d + j] = z;
            if i != j {
                out[j * d + i] = z.conj();
            }
        });
    }

    /// Same draw as [`Self::sample_into`], written to split planes.
    pub fn sample_split<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut SplitMat) {
        let d = self.dim;
        self.fill(rng, |i, j, z| {
            out.re[i * d + j] = z.re;
            out.im[i * d + j] = z.im;
            if i != j {
                out.re[j * d + i] = z.re;
                out.im[j * d + i] = -z.im;
            }
        });
    }

    /// Draws the upper triangle row by row and hands each `(i, j, eta_ij)`
    /// with `i <= j` to `put`.
    fn fill<R: Rng + ?Sized, F: FnMut(usize, usize, C64)>(&self, rng: &mut R, mut put: F) {
        let d = self.dim;
        for i in 0..d {
            let x: f64 = StandardNormal.sample(rng);
            put(i, i, C64::new(self.sd_diag[i] * x, 0.0));
            for j in i + 1..d {
                let sd = self.sd_off[(i, j)];
                let z = match self.ensemble {
                    Ensemble::Gue => {
                        let re: f64 = StandardNormal.sample(rng);
                        let im: f64 = StandardNormal.sample(rng);
                        C64::new(sd * re, sd * im)
                    }
                    Ensemble::Goe => {
                        let re: f64 = StandardNormal.sample(rng);
                        C64::new(sd * re, 0.0)
                    }
                };
                put(i, j, z);
            }
        }
    }
}

/// One time slice `eta(n dt)` of the regularized white noise.
pub fn sample_noise_matrix<R: Rng + ?Sized>(model: &NoiseModel, dt: f64, rng: &mut R) -> Result<CMat> {
    let sampler = NoiseSampler::new(model, dt)?;
    let d = model.dim();
    let mut buf = vec![C64::new(0.0, 0.0); d * d];
    sampler.sample_into(rng, &mut buf);
    Ok(CMat::from_row_slice(d, d, &buf))
}
