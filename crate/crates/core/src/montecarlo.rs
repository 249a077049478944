//! Stochastic-trajectory oracle: samples the noisy propagator
//! `U(t_{n+1}) = exp(-i (H0 + eta_n) h) U(t_n)` with regularized white
//! noise of variance `lambda / h` per slice, and averages observables
//! over independent trajectories.
//!
//! Trajectory `k` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream
//! `k`, trajectories are collected in index order and reduced
//! sequentially, so estimates do not depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticSeries, SeriesMetadata, TimeGrid};
use crate::linalg::flat::{matmul, ExpWorkspace, SplitMat};
use crate::linalg::require_square;
use crate::noise::{NoiseModel, NoiseSampler};
use crate::spectra::Spectrum;
use crate::{CMat, Error, Result, C64};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exact exponential of the sampled Hamiltonian on every slice.
    #[default]
    ExpStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_traj: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

/// Largest tolerated `max|U^dag U - I|` along a trajectory.
pub const UNITARITY_TOLERANCE: f64 = 1e-8;

impl TrajectoryConfig {
    pub fn validate(&self, model: &NoiseModel) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidStep(self.dt));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidTime(self.t_max));
        }
        if self.n_traj < 2 {
            return Err(Error::Precondition(format!("n_traj must be at least 2 for error bars, got {}", self.n_traj)));
        }
        let load = self.dt * model.max_lambda() * model.dim() as f64;
        if load > 1.0 {
            return Err(Error::Precondition(format!("dt * max(lambda) * D = {load} exceeds 1; reduce dt")));
        }
        Ok(())
    }

    /// Recommended upper bound `0.1 / max(1, J (1 + 1/D))` on `dt`.
    pub fn recommended_dt(j: f64, d: usize) -> f64 {
        0.1 / f64::max(1.0, j * (1.0 + 1.0 / d as f64))
    }
}

/// Sample mean of `n` draws with standard error `std / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleEstimate {
    pub mean: C64,
    pub stderr: f64,
    pub n: usize,
}

impl EnsembleEstimate {
    pub fn from_samples(samples: &[C64]) -> Result<Self> {
        let mut acc = Welford::default();
        samples.iter().for_each(|&x| acc.push(x));
        acc.finish()
    }

    /// `|value - mean| / stderr` (infinite for a zero error bar unless exact).
    pub fn z_score(&self, value: C64) -> f64 {
        let dev = (value - self.mean).norm();
        if self.stderr > 0.0 {
            dev / self.stderr
        } else if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: C64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: C64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += (delta.conj() * (x - self.mean)).re;
    }

    fn finish(&self) -> Result<EnsembleEstimate> {
        if self.n < 2 {
            return Err(Error::Precondition(format!("need at least 2 samples, got {}", self.n)));
        }
        let var = (self.m2 / (self.n - 1) as f64).max(0.0);
        Ok(EnsembleEstimate { mean: self.mean, stderr: (var / self.n as f64).sqrt(), n: self.n })
    }
}

/// Per-trajectory quantities the estimator averages.
#[derive(Debug, Clone)]
pub enum McObservable {
    /// `|Tr U|^2 / D^2`.
    Sff,
    /// `|Tr U|^4`.
    SffSquared,
    /// `(1/D) Tr(O^dag U^dag O U)`.
    TwoPoint(CMat),
    /// `(1/D) Tr(A B_t A B_t)` with `B_t = U^dag B U`.
    Otoc { a: CMat, b: CMat },
    /// `|U_{to, from}|^2`.
    Transfer { from: usize, to: usize },
    /// `U_{i i'} conj(U_{j j'})`.
    ChannelEntry { i: usize, j: usize, ip: usize, jp: usize },
}

impl McObservable {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sff => "sff",
            Self::SffSquared => "sff_squared",
            Self::TwoPoint(_) => "two_point",
            Self::Otoc { .. } => "otoc",
            Self::Transfer { .. } => "transfer",
            Self::ChannelEntry { .. } => "channel_entry",
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let check_index = |k: usize| {
            if k >= d {
                Err(Error::Precondition(format!("index {k} out of range for D = {d}")))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Sff | Self::SffSquared => Ok(()),
            Self::TwoPoint(o) => require_square(o, d),
            Self::Otoc { a, b } => {
                require_square(a, d)?;
                require_square(b, d)
            }
            Self::Transfer { from, to } => {
                check_index(*from)?;
                check_index(*to)
            }
            Self::ChannelEntry { i, j, ip, jp } => [*i, *j, *ip, *jp].into_iter().try_for_each(check_index),
        }
    }

    fn evaluate(&self, u: &CMat) -> C64 {
        let d = u.nrows() as f64;
        match self {
            Self::Sff => C64::new(u.trace().norm_sqr() / (d * d), 0.0),
            Self::SffSquared => C64::new(u.trace().norm_sqr().powi(2), 0.0),
            Self::TwoPoint(o) => {
                let ot = u.adjoint() * o * u;
                (o.adjoint().transpose().component_mul(&ot)).sum() / d
            }
            Self::Otoc { a, b } => {
                let m = a * (u.adjoint() * b * u);
                m.transpose().component_mul(&m).sum() / d
            }
            Self::Transfer { from, to } => C64::new(u[(*to, *from)].norm_sqr(), 0.0),
            Self::ChannelEntry { i, j, ip, jp } => u[(*i, *ip)] * u[(*j, *jp)].conj(),
        }
    }
}

/// Precomputed stepping plan shared by all trajectories.
struct Plan {
    d: usize,
    energies: Vec<f64>,
    /// Per grid interval: number of slices, slice width, sampler.
    segments: Vec<(usize, f64, NoiseSampler)>,
}

impl Plan {
    fn new(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, grid: &TimeGrid) -> Result<Self> {
        let d = spec.dim();
        if model.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: model.dim() });
        }
        cfg.validate(model)?;
        let last = *grid.times().last().unwrap_or(&0.0);
        if last > cfg.t_max * (1.0 + 1e-12) {
            return Err(Error::InvalidGrid(format!("grid reaches t = {last} beyond t_max = {}", cfg.t_max)));
        }
        let mut segments = Vec::with_capacity(grid.len());
        let mut prev = 0.0;
        for &t in grid.times() {
            let seg = t - prev;
            let n = if seg > 0.0 { (seg / cfg.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize } else { 0 };
            let h = if n > 0 { seg / n as f64 } else { cfg.dt };
            segments.push((n, h, NoiseSampler::new(model, h)?));
            prev = t;
        }
        Ok(Self { d, energies: spec.energies().to_vec(), segments })
    }

    /// Runs one trajectory, calling `visit(k, U)` at every grid time.
    fn run<F: FnMut(usize, &CMat) -> Result<()>>(&self, rng: &mut ChaCha8Rng, mut visit: F) -> Result<()> {
        let d = self.d;
        let mut ws = ExpWorkspace::new(d);
        let mut x = SplitMat::zeros(d);
        let mut step = SplitMat::zeros(d);
        let mut u = SplitMat::identity(d);
        let mut next = SplitMat::zeros(d);
        for (k, (n, h, sampler)) in self.segments.iter().enumerate() {
            for _ in 0..*n {
                sampler.sample_split(rng, &mut x);
                for i in 0..d {
                    x.re[i * d + i] += self.energies[i];
                }
                // x <- -i h x
                for (r, im) in x.re.iter_mut().zip(x.im.iter_mut()) {
                    let (a, b) = (*r, *im);
                    *r = h * b;
                    *im = -h * a;
                }
                ws.expm(&mut x, &mut step);
                matmul(&step, &u, &mut next);
                std::mem::swap(&mut u, &mut next);
            }
            let um = CMat::from_row_slice(d, d, &u.to_row_major());
            let drift = (um.adjoint() * &um - CMat::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if !(drift <= UNITARITY_TOLERANCE) {
                return Err(Error::Numerical(format!("unitarity drift {drift:e} at grid point {k}; reduce dt")));
            }
            visit(k, &um)?;
        }
        Ok(())
    }
}

fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Propagators `U(t)` of trajectory `index` at every grid time.
pub fn evolve_trajectory(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, grid: &TimeGrid, index: usize) -> Result<Vec<CMat>> {
    let plan = Plan::new(spec, model, cfg, grid)?;
    let mut rng = trajectory_rng(cfg.seed, index);
    let mut out = Vec::with_capacity(grid.len());
    plan.run(&mut rng, |_, u| {
        out.push(u.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Estimates every observable on the grid from `cfg.n_traj` trajectories.
/// Returns one series per observable, with error bars.
pub fn estimate(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, grid: &TimeGrid, observables: &[McObservable]) -> Result<Vec<DiagnosticSeries>> {
    let plan = Plan::new(spec, model, cfg, grid)?;
    for o in observables {
        o.validate(spec.dim())?;
    }
    let n_obs = observables.len();
    let n_t = grid.len();
    let samples: Vec<Vec<C64>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|index| {
            let mut rng = trajectory_rng(cfg.seed, index);
            let mut row = vec![C64::new(0.0, 0.0); n_t * n_obs];
            plan.run(&mut rng, |k, u| {
                for (m, o) in observables.iter().enumerate() {
                    row[k * n_obs + m] = o.evaluate(u);
                }
                Ok(())
            })?;
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut acc = vec![Welford::default(); n_t * n_obs];
    for row in &samples {
        for (a, &x) in acc.iter_mut().zip(row) {
            a.push(x);
        }
    }
    let mut meta = SeriesMetadata::new(spec, model.describe());
    meta.seed = Some(cfg.seed);
    meta.extra.insert("dt".into(), cfg.dt.into());
    meta.extra.insert("t_max".into(), cfg.t_max.into());
    meta.extra.insert("n_traj".into(), cfg.n_traj.into());
    meta.extra.insert("scheme".into(), serde_json::to_value(cfg.scheme)?);
    observables
        .iter()
        .enumerate()
        .map(|(m, o)| {
            let est = (0..n_t).map(|k| acc[k * n_obs + m].finish()).collect::<Result<Vec<_>>>()?;
            let mut s = DiagnosticSeries::new(o.name(), grid, est.iter().map(|e| e.mean).collect(), meta.clone());
            s.stderr = Some(est.iter().map(|e| e.stderr).collect());
            Ok(s)
        })
        .collect()
}

fn estimate_one(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, grid: &TimeGrid, o: McObservable) -> Result<DiagnosticSeries> {
    Ok(estimate(spec, model, cfg, grid, &[o])?.remove(0))
}

pub fn estimate_sff(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    estimate_one(spec, model, cfg, grid, McObservable::Sff)
}

pub fn estimate_sff_squared(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    estimate_one(spec, model, cfg, grid, McObservable::SffSquared)
}

pub fn estimate_two_point(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, o: &CMat, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    estimate_one(spec, model, cfg, grid, McObservable::TwoPoint(o.clone()))
}

pub fn estimate_otoc(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, a: &CMat, b: &CMat, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    estimate_one(spec, model, cfg, grid, McObservable::Otoc { a: a.clone(), b: b.clone() })
}

pub fn estimate_transfer(spec: &Spectrum, model: &NoiseModel, cfg: &TrajectoryConfig, from: usize, to: usize, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    estimate_one(spec, model, cfg, grid, McObservable::Transfer { from, to })
}

/// Largest `|analytic - mc| / stderr` over the grid.
pub fn max_z_score(analytic: &DiagnosticSeries, mc: &DiagnosticSeries) -> Result<f64> {
    if analytic.times != mc.times {
        return Err(Error::InvalidGrid("analytic and Monte Carlo grids differ".into()));
    }
    let se = mc.stderr.as_ref().ok_or_else(|| Error::Precondition("Monte Carlo series has no error bars".into()))?;
    Ok(analytic
        .values
        .iter()
        .zip(&mc.values)
        .zip(se)
        .map(|((a, m), s)| EnsembleEstimate { mean: *m, stderr: *s, n: 0 }.z_score(*a))
        .fold(0.0, f64::max))
}
