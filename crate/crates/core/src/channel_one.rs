//! Single-replica averaged channel `U1(t)_{ij;i'j'} = E[U_ii' U*_jj']`.
//!
//! Every channel and generator here has the delta structure
//!
//! ```text
//! X_{ij;i'j'} = a_ij d_ii' d_jj' + b_ii' d_ij d_i'j' + g_ij d_ij' d_ji'
//! ```
//!
//! so acting on a matrix gives
//! `out_ij = a_ij rho_ij + d_ij sum_i' b_ii' rho_i'i' + g_ij rho_ji`.

use nalgebra::{DMatrix, DVector};
use ode_solvers::{Dopri5, OutputType, System};
use serde::{Deserialize, Serialize};

use crate::linalg::{require_square, sinhc};
use crate::noise::{row_sums, Ensemble, NoiseModel};
use crate::spectra::Spectrum;
use crate::{CMat, Error, Result, C64};

const ODE_RTOL: f64 = 1e-10;
const ODE_ATOL: f64 = 1e-12;
const DENSE_MAX_DIM: usize = 8;

/// Coefficient grids of the three delta structures.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCoeffs {
    /// Multiplies `d_ii' d_jj'`, indexed `(i, j)`.
    pub a: CMat,
    /// Multiplies `d_ij d_i'j'`, indexed `(i, i')`.
    pub b: CMat,
    /// Multiplies `d_ij' d_ji'`, indexed `(i, j)`.
    pub g: CMat,
}

impl DeltaCoeffs {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn entry(&self, i: usize, j: usize, ip: usize, jp: usize) -> C64 {
        let mut z = C64::new(0.0, 0.0);
        if i == ip && j == jp {
            z += self.a[(i, j)];
        }
        if i == j && ip == jp {
            z += self.b[(i, ip)];
        }
        if i == jp && j == ip {
            z += self.g[(i, j)];
        }
        z
    }

    pub fn apply(&self, rho: &CMat) -> Result<CMat> {
        let d = self.dim();
        require_square(rho, d)?;
        let mut out = CMat::from_fn(d, d, |i, j| self.a[(i, j)] * rho[(i, j)] + self.g[(i, j)] * rho[(j, i)]);
        for i in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for ip in 0..d {
                s += self.b[(i, ip)] * rho[(ip, ip)];
            }
            out[(i, i)] += s;
        }
        Ok(out)
    }

    /// `D^2 x D^2` matrix with rows `(i, j) -> i D + j` and columns
    /// `(i', j') -> i' D + j'`. Only for `D <= 8`.
    pub fn dense(&self) -> Result<CMat> {
        let d = self.dim();
        if d > DENSE_MAX_DIM {
            return Err(Error::InvalidDimension { dim: d, reason: "dense materialization is limited to D <= 8" });
        }
        Ok(CMat::from_fn(d * d, d * d, |r, c| self.entry(r / d, r % d, c / d, c % d)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelCase {
    GueConst,
    GueGeneral,
    GoeConst,
    GoeGeneral,
}

/// The generator `L1` with `dU1/dt = L1 U1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub ensemble: Ensemble,
    /// `a` holds `w_ij`, `b` the cross term, `g` the exchange term.
    pub coeffs: DeltaCoeffs,
}

impl Generator {
    pub fn w(&self) -> &CMat {
        &self.coeffs.a
    }

    pub fn cross(&self) -> &CMat {
        &self.coeffs.b
    }

    pub fn exchange(&self) -> &CMat {
        &self.coeffs.g
    }

    pub fn apply(&self, rho: &CMat) -> Result<CMat> {
        self.coeffs.apply(rho)
    }
}

fn check_model(spec: &Spectrum, model: &NoiseModel) -> Result<()> {
    if model.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), found: model.dim() });
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    Ok(())
}

fn check_ensemble(model: &NoiseModel, want: Ensemble) -> Result<()> {
    if model.ensemble() != want {
        return Err(Error::InvalidNoise(format!("expected {want:?} noise, got {:?}", model.ensemble())));
    }
    Ok(())
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// GUE: `w_ij = -i E_i + i E_j - (J_i + J_j)/2`, cross `lambda_ii'`.
/// GOE: `w_ij = -i E_i + i E_j - (J_i + J_j + lambda_ii + lambda_jj)/4`,
/// cross `lambda_ii'/2`, exchange `lambda_ij/2`.
pub fn build_l1(spec: &Spectrum, model: &NoiseModel) -> Result<Generator> {
    check_model(spec, model)?;
    let d = spec.dim();
    let e = spec.energies();
    let jr = row_sums(model);
    let lam = model.lambda();
    let coeffs = match model.ensemble() {
        Ensemble::Gue => DeltaCoeffs {
            a: CMat::from_fn(d, d, |i, j| C64::new(-(jr[i] + jr[j]) / 2.0, -(e[i] - e[j]))),
            b: lam.map(real),
            g: CMat::zeros(d, d),
        },
        Ensemble::Goe => DeltaCoeffs {
            a: CMat::from_fn(d, d, |i, j| {
                C64::new(-(jr[i] + jr[j] + lam[(i, i)] + lam[(j, j)]) / 4.0, -(e[i] - e[j]))
            }),
            b: lam.map(|l| real(l / 2.0)),
            g: lam.map(|l| real(l / 2.0)),
        },
    };
    Ok(Generator { ensemble: model.ensemble(), coeffs })
}

/// Averaged channel at a single time.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOne {
    pub case: ChannelCase,
    pub time: f64,
    pub coeffs: DeltaCoeffs,
}

impl ChannelOne {
    pub fn identity(dim: usize, case: ChannelCase) -> Self {
        Self {
            case,
            time: 0.0,
            coeffs: DeltaCoeffs {
                a: CMat::from_element(dim, dim, real(1.0)),
                b: CMat::zeros(dim, dim),
                g: CMat::zeros(dim, dim),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    pub fn coeff_a(&self) -> &CMat {
        &self.coeffs.a
    }

    pub fn coeff_b(&self) -> &CMat {
        &self.coeffs.b
    }

    pub fn coeff_g(&self) -> &CMat {
        &self.coeffs.g
    }

    pub fn entry(&self, i: usize, j: usize, ip: usize, jp: usize) -> C64 {
        self.coeffs.entry(i, j, ip, jp)
    }

    /// `E[U rho U^dag]`.
    pub fn apply(&self, rho: &CMat) -> Result<CMat> {
        self.coeffs.apply(rho)
    }

    pub fn dense(&self) -> Result<CMat> {
        self.coeffs.dense()
    }

    /// Choi matrix `C_{(i,i'),(j,j')} = U1_{ij;i'j'} = E[v v^dag]` with
    /// `v_{(i,i')} = U_ii'`; positive semidefinite for a CP map.
    pub fn choi(&self) -> Result<CMat> {
        let d = self.dim();
        if d > DENSE_MAX_DIM {
            return Err(Error::InvalidDimension { dim: d, reason: "dense materialization is limited to D <= 8" });
        }
        Ok(CMat::from_fn(d * d, d * d, |r, c| self.entry(r / d, c / d, r % d, c % d)))
    }

    /// `K(t) = E|Tr U|^2 / D^2`.
    pub fn sff(&self) -> f64 {
        let d = self.dim();
        let mut s: C64 = self.coeffs.a.iter().sum();
        for i in 0..d {
            s += self.coeffs.b[(i, i)] + self.coeffs.g[(i, i)];
        }
        s.re / (d * d) as f64
    }

    /// `E|U_ji|^2`, the probability of a transition `i -> j`.
    pub fn transfer(&self, i: usize, j: usize) -> f64 {
        self.entry(j, j, i, i).re
    }

    /// `E Tr(x U^dag y U)`.
    pub fn heisenberg_trace(&self, x: &CMat, y: &CMat) -> Result<C64> {
        let ev = self.apply(x)?;
        require_square(y, self.dim())?;
        Ok((ev.transpose().component_mul(y)).iter().sum())
    }

    /// `(1/D) E Tr(O^dag O(t))` with `O(t) = U^dag O U`.
    pub fn two_point(&self, o: &CMat) -> Result<C64> {
        Ok(self.heisenberg_trace(&o.adjoint(), o)? / self.dim() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        let grid = |m: &CMat| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().flat_map(|z| [z.re, z.im]).collect()).collect()
        };
        let export = ChannelExport {
            dim: self.dim(),
            case: self.case,
            time: self.time,
            a: grid(&self.coeffs.a),
            b: grid(&self.coeffs.b),
            g: grid(&self.coeffs.g),
        };
        Ok(serde_json::to_string(&export)?)
    }
}

/// JSON layout of a channel: each grid row is `[re, im, re, im, ...]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelExport {
    pub dim: usize,
    pub case: ChannelCase,
    pub time: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
}

/// `out_ij = (E[U rho U^dag])_ij` for a channel.
pub fn apply_channel(ch: &ChannelOne, rho: &CMat) -> Result<CMat> {
    ch.apply(rho)
}

fn gue_phase_grid(spec: &Spectrum, jr: &[f64], t: f64) -> CMat {
    let e = spec.energies();
    let d = spec.dim();
    CMat::from_fn(d, d, |i, j| (C64::new(-(jr[i] + jr[j]) / 2.0, -(e[i] - e[j])) * t).exp())
}

/// Constant GUE noise `lambda_ij = J/D`:
/// `a_ij = exp(w_ij t)`, `b = (1 - e^{-J t})/D`, `g = 0`.
pub fn u1_gue_const(spec: &Spectrum, j: f64, t: f64) -> Result<ChannelOne> {
    check_time(t)?;
    if !(j >= 0.0 && j.is_finite()) {
        return Err(Error::InvalidNoise(format!("J must be finite and nonnegative, got {j}")));
    }
    let d = spec.dim();
    let e = spec.energies();
    let a = CMat::from_fn(d, d, |i, k| (C64::new(-j, -(e[i] - e[k])) * t).exp());
    let b = CMat::from_element(d, d, real(-(-j * t).exp_m1() / d as f64));
    Ok(ChannelOne { case: ChannelCase::GueConst, time: t, coeffs: DeltaCoeffs { a, b, g: CMat::zeros(d, d) } })
}

/// Diagonal-block ODE `dB/dt = P B + Q(t)` integrated between the
/// requested times. The state is `B` flattened row-major.
#[derive(Clone)]
struct DiagonalBlock {
    dim: usize,
    /// Coefficient of `B_ii'` itself, per row `i`.
    self_rate: Vec<f64>,
    /// Weight of `sum_s lambda_is B_si'`.
    mix: DMatrix<f64>,
    ensemble: Ensemble,
    lambda: DMatrix<f64>,
    /// Generator grid, used for the source term.
    w: CMat,
}

impl DiagonalBlock {
    /// Population left on level `k` in the identity-like structures:
    /// GUE `a_kk(t)`, GOE `c_kk(t) + g_kk(t)`.
    fn source(&self, k: usize, t: f64) -> f64 {
        match self.ensemble {
            Ensemble::Gue => (self.w[(k, k)].re * t).exp(),
            Ensemble::Goe => {
                let w = self.w[(k, k)];
                let (c, g) = goe_pair(w, w, self.lambda[(k, k)], t);
                (c + g).re
            }
        }
    }
}

impl System<f64, DVector<f64>> for DiagonalBlock {
    fn system(&self, t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let d = self.dim;
        let src_scale = match self.ensemble {
            Ensemble::Gue => 1.0,
            Ensemble::Goe => 0.5,
        };
        let src: Vec<f64> = (0..d).map(|k| self.source(k, t)).collect();
        for i in 0..d {
            for ip in 0..d {
                let mut v = self.self_rate[i] * y[i * d + ip];
                for s in 0..d {
                    v += self.mix[(i, s)] * y[s * d + ip];
                }
                v += src_scale * self.lambda[(i, ip)] * src[ip];
                dy[i * d + ip] = v;
            }
        }
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    for &t in times {
        check_time(t)?;
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidGrid("times must be nondecreasing".into()));
    }
    Ok(())
}

fn integrate_block(sys: &DiagonalBlock, times: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let d = sys.dim;
    let mut y = DVector::<f64>::zeros(d * d);
    let mut t0 = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t > t0 {
            let mut solver = Dopri5::new(sys.clone(), t0, t, t - t0, y.clone(), ODE_RTOL, ODE_ATOL);
            solver.set_output(OutputType::Sparse);
            solver
                .integrate()
                .map_err(|e| Error::Numerical(format!("ODE integration on [{t0}, {t}] failed: {e}")))?;
            let reached = *solver.x_out().last().unwrap_or(&t0);
            if (reached - t).abs() > 1e-12 * t.max(1.0) {
                return Err(Error::Numerical(format!("ODE integration stopped at {reached}, wanted {t}")));
            }
            y = solver.y_out().last().cloned().unwrap_or(y);
            t0 = t;
        }
        out.push(DMatrix::from_row_slice(d, d, y.as_slice()));
    }
    Ok(out)
}

/// General GUE profile on a grid of times. `a` is exact; `b` solves
/// `dB_ii'/dt = w_ii B_ii' + lambda_ii' a_i'i' + sum_s lambda_is B_si'`
/// with an adaptive Dormand-Prince 5(4) integrator.
pub fn u1_gue_general_series(spec: &Spectrum, model: &NoiseModel, times: &[f64]) -> Result<Vec<ChannelOne>> {
    check_model(spec, model)?;
    check_ensemble(model, Ensemble::Gue)?;
    check_times(times)?;
    let d = spec.dim();
    let gen = build_l1(spec, model)?;
    let jr = row_sums(model);
    let sys = DiagonalBlock {
        dim: d,
        self_rate: (0..d).map(|i| gen.w()[(i, i)].re).collect(),
        mix: model.lambda().clone(),
        ensemble: Ensemble::Gue,
        lambda: model.lambda().clone(),
        w: gen.w().clone(),
    };
    let bs = integrate_block(&sys, times)?;
    Ok(times
        .iter()
        .zip(bs)
        .map(|(&t, b)| ChannelOne {
            case: ChannelCase::GueGeneral,
            time: t,
            coeffs: DeltaCoeffs { a: gue_phase_grid(spec, &jr, t), b: b.map(real), g: CMat::zeros(d, d) },
        })
        .collect())
}

pub fn u1_gue_general(spec: &Spectrum, model: &NoiseModel, t: f64) -> Result<ChannelOne> {
    Ok(u1_gue_general_series(spec, model, &[t])?.remove(0))
}

/// Solution of `d/dt [c_ij, g_ji] = [[w_ij, l/2], [l/2, w_ji]] [c_ij, g_ji]`
/// from `(1, 0)`, returned as `(c_ij, g_ji)`.
///
/// Written with `cosh` and `sinh(x)/x` so it stays finite where
/// `(w_ij - w_ji)^2 + l^2` vanishes.
pub(crate) fn goe_pair(w_ij: C64, w_ji: C64, lam: f64, t: f64) -> (C64, C64) {
    let s = w_ij + w_ji;
    let delta = w_ij - w_ji;
    let r = (delta * delta + lam * lam).sqrt();
    let x = r * (t / 2.0);
    if x.norm() <= 1.0 {
        let env = (s * (t / 2.0)).exp();
        let sh = sinhc(x) * (t / 2.0);
        (env * (x.cosh() + delta * sh), env * lam * sh)
    } else {
        let ep = ((s + r) * (t / 2.0)).exp();
        let em = ((s - r) * (t / 2.0)).exp();
        let cosh = (ep + em) / 2.0;
        let sinh_over_r = (ep - em) / (2.0 * r);
        (cosh + delta * sinh_over_r, lam * sinh_over_r)
    }
}

fn goe_exchange_grids(spec: &Spectrum, gen: &Generator, lam: &DMatrix<f64>, t: f64) -> (CMat, CMat) {
    let d = spec.dim();
    let w = gen.w();
    let mut a = CMat::zeros(d, d);
    let mut g = CMat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let (c, gj) = goe_pair(w[(i, j)], w[(j, i)], lam[(i, j)], t);
            a[(i, j)] = c;
            g[(j, i)] = gj;
        }
    }
    (a, g)
}

/// Constant GOE noise `lambda_ij = J/D`: `a` and `g` from the exchange
/// pair, `b = (1 - e^{-J t/2})/D`.
pub fn u1_goe_const(spec: &Spectrum, j: f64, t: f64) -> Result<ChannelOne> {
    check_time(t)?;
    let model = NoiseModel::constant(Ensemble::Goe, j, spec)?;
    let gen = build_l1(spec, &model)?;
    let d = spec.dim();
    let (a, g) = goe_exchange_grids(spec, &gen, model.lambda(), t);
    let b = CMat::from_element(d, d, real(-(-(0.5 * j) * t).exp_m1() / d as f64));
    Ok(ChannelOne { case: ChannelCase::GoeConst, time: t, coeffs: DeltaCoeffs { a, b, g } })
}

/// General GOE profile on a grid of times. `a`, `g` in closed form; `b`
/// integrates
/// `dB_ii'/dt = w_ii B_ii' + (lambda_ii'/2)(c_i'i' + g_i'i') + (1/2) sum_s lambda_is B_si' + (lambda_ii/2) B_ii'`.
pub fn u1_goe_general_series(spec: &Spectrum, model: &NoiseModel, times: &[f64]) -> Result<Vec<ChannelOne>> {
    check_model(spec, model)?;
    check_ensemble(model, Ensemble::Goe)?;
    check_times(times)?;
    let d = spec.dim();
    let gen = build_l1(spec, model)?;
    let lam = model.lambda();
    let sys = DiagonalBlock {
        dim: d,
        self_rate: (0..d).map(|i| gen.w()[(i, i)].re + lam[(i, i)] / 2.0).collect(),
        mix: lam / 2.0,
        ensemble: Ensemble::Goe,
        lambda: lam.clone(),
        w: gen.w().clone(),
    };
    let bs = integrate_block(&sys, times)?;
    Ok(times
        .iter()
        .zip(bs)
        .map(|(&t, b)| {
            let (a, g) = goe_exchange_grids(spec, &gen, lam, t);
            ChannelOne { case: ChannelCase::GoeGeneral, time: t, coeffs: DeltaCoeffs { a, b: b.map(real), g } }
        })
        .collect())
}

pub fn u1_goe_general(spec: &Spectrum, model: &NoiseModel, t: f64) -> Result<ChannelOne> {
    Ok(u1_goe_general_series(spec, model, &[t])?.remove(0))
}

/// Channel for any noise model: closed forms for constant profiles, ODE
/// integration otherwise.
pub fn u1_series(spec: &Spectrum, model: &NoiseModel, times: &[f64]) -> Result<Vec<ChannelOne>> {
    check_model(spec, model)?;
    match (model.ensemble(), model.constant_j()) {
        (Ensemble::Gue, Some(j)) => times.iter().map(|&t| u1_gue_const(spec, j, t)).collect(),
        (Ensemble::Goe, Some(j)) => times.iter().map(|&t| u1_goe_const(spec, j, t)).collect(),
        (Ensemble::Gue, None) => u1_gue_general_series(spec, model, times),
        (Ensemble::Goe, None) => u1_goe_general_series(spec, model, times),
    }
}

/// Exchange-pair parameters of the GOE channel:
/// `g = l/R`, `c+- = 1 +- (w_ij - w_ji)/R`, `z+- = (w_ij + w_ji +- R)/2`
/// with `R = sqrt((w_ij - w_ji)^2 + l^2)` taken with `Im R >= 0`. Entries are
/// infinite where `R = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GoeClosedFormParams {
    pub g: CMat,
    pub c_plus: CMat,
    pub c_minus: CMat,
    pub z_plus: CMat,
    pub z_minus: CMat,
}

impl GoeClosedFormParams {
    /// `(c_ij, g_ij)` at time `t` in the exponential form
    /// `c = (c- e^{z- t} + c+ e^{z+ t})/2`, `g = g (e^{z+ t} - e^{z- t})/2`.
    pub fn evaluate(&self, i: usize, j: usize, t: f64) -> (C64, C64) {
        let ep = (self.z_plus[(i, j)] * t).exp();
        let em = (self.z_minus[(i, j)] * t).exp();
        let c = (self.c_minus[(i, j)] * em + self.c_plus[(i, j)] * ep) / 2.0;
        let g = self.g[(i, j)] * (ep - em) / 2.0;
        (c, g)
    }

    /// Is the exponential form well conditioned at `(i, j)`?
    pub fn regular_at(&self, i: usize, j: usize) -> bool {
        self.g[(i, j)].is_finite() && self.c_plus[(i, j)].is_finite() && self.c_minus[(i, j)].is_finite()
    }
}

pub fn goe_closed_form_params(spec: &Spectrum, model: &NoiseModel) -> Result<GoeClosedFormParams> {
    check_model(spec, model)?;
    check_ensemble(model, Ensemble::Goe)?;
    let gen = build_l1(spec, model)?;
    let d = spec.dim();
    let w = gen.w();
    let lam = model.lambda();
    let root = |i: usize, j: usize| {
        let delta = w[(i, j)] - w[(j, i)];
        let r = (delta * delta + lam[(i, j)] * lam[(i, j)]).sqrt();
        // a signed zero in the imaginary part must not pick the branch
        if r.im < 0.0 || (r.im == 0.0 && r.re < 0.0) {
            -r
        } else {
            r
        }
    };
    let mut p = GoeClosedFormParams {
        g: CMat::zeros(d, d),
        c_plus: CMat::zeros(d, d),
        c_minus: CMat::zeros(d, d),
        z_plus: CMat::zeros(d, d),
        z_minus: CMat::zeros(d, d),
    };
    for i in 0..d {
        for j in 0..d {
            let r = root(i, j);
            let delta = w[(i, j)] - w[(j, i)];
            let s = w[(i, j)] + w[(j, i)];
            let (g, cp, cm) = if r == C64::new(0.0, 0.0) {
                let inf = C64::new(f64::INFINITY, 0.0);
                (inf, inf, inf)
            } else {
                (real(lam[(i, j)]) / r, 1.0 + delta / r, 1.0 - delta / r)
            };
            p.g[(i, j)] = g;
            p.c_plus[(i, j)] = cp;
            p.c_minus[(i, j)] = cm;
            p.z_plus[(i, j)] = (s + r) / 2.0;
            p.z_minus[(i, j)] = (s - r) / 2.0;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{is_hermitian, max_abs, trace};
    use crate::noise::NoiseProfile;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn spec(d: usize, seed: u64) -> Spectrum {
        crate::spectra::sample_gue_spectrum(d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_matrix(d: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_fn(d, d, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        })
    }

    fn random_hermitian(d: usize, seed: u64) -> CMat {
        let m = random_matrix(d, seed);
        (&m + m.adjoint()) / C64::new(2.0, 0.0)
    }

    fn random_lambda(d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in i..d {
                let x: f64 = StandardNormal.sample(&mut rng);
                l[i][j] = 0.1 + 0.3 * x.abs();
                l[j][i] = l[i][j];
            }
        }
        l
    }

    fn all_cases(s: &Spectrum, t: f64) -> Vec<ChannelOne> {
        let d = s.dim();
        let lam = random_lambda(d, 77);
        let gue = NoiseModel::new(Ensemble::Gue, NoiseProfile::Matrix { lambda: lam.clone() }, s).unwrap();
        let goe = NoiseModel::new(Ensemble::Goe, NoiseProfile::Matrix { lambda: lam }, s).unwrap();
        vec![
            u1_gue_const(s, 0.8, t).unwrap(),
            u1_gue_general(s, &gue, t).unwrap(),
            u1_goe_const(s, 0.8, t).unwrap(),
            u1_goe_general(s, &goe, t).unwrap(),
        ]
    }

    #[test]
    fn gue_generator_degenerate_levels() {
        let s = Spectrum::new(vec![0.0, 0.0]).unwrap();
        let g = build_l1(&s, &NoiseModel::constant(Ensemble::Gue, 1.0, &s).unwrap()).unwrap();
        assert!(g.w().iter().all(|&z| z == C64::new(-1.0, 0.0)));
        assert!(g.cross().iter().all(|&z| z == C64::new(0.5, 0.0)));
        assert!(g.exchange().iter().all(|&z| z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn goe_generator_degenerate_levels() {
        let s = Spectrum::new(vec![0.0, 0.0]).unwrap();
        let g = build_l1(&s, &NoiseModel::constant(Ensemble::Goe, 1.0, &s).unwrap()).unwrap();
        assert!(g.w().iter().all(|&z| z == C64::new(-0.75, 0.0)));
        assert!(g.cross().iter().all(|&z| z == C64::new(0.25, 0.0)));
        assert!(g.exchange().iter().all(|&z| z == C64::new(0.25, 0.0)));
    }

    #[test]
    fn noiseless_generator_is_pure_phase() {
        let s = spec(4, 3);
        for ens in [Ensemble::Gue, Ensemble::Goe] {
            let g = build_l1(&s, &NoiseModel::constant(ens, 0.0, &s).unwrap()).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(g.w()[(i, j)], C64::new(0.0, -(s.energies()[i] - s.energies()[j])));
                }
            }
            assert_eq!(max_abs(g.cross()), 0.0);
            assert_eq!(max_abs(g.exchange()), 0.0);
        }
    }

    #[test]
    fn generator_dimension_mismatch() {
        let s = spec(3, 1);
        let m = NoiseModel::constant(Ensemble::Gue, 1.0, &spec(4, 1)).unwrap();
        assert!(matches!(build_l1(&s, &m), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gue_const_at_ln2() {
        let s = Spectrum::new(vec![0.0, 0.0]).unwrap();
        let ch = u1_gue_const(&s, 1.0, std::f64::consts::LN_2).unwrap();
        for z in ch.coeff_a().iter() {
            assert!((z - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
        for z in ch.coeff_b().iter() {
            assert!((z - C64::new(0.25, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn negative_time_rejected() {
        let s = spec(3, 1);
        assert!(matches!(u1_gue_const(&s, 1.0, -0.1), Err(Error::InvalidTime(_))));
        assert!(matches!(u1_goe_const(&s, 1.0, -0.1), Err(Error::InvalidTime(_))));
    }

    #[test]
    fn long_time_limit_is_maximally_mixed() {
        let s = spec(5, 2);
        let rho = {
            let m = random_matrix(5, 4);
            let r = &m * m.adjoint();
            let tr = trace(&r);
            r / tr
        };
        for ch in [u1_gue_const(&s, 1.0, 60.0).unwrap(), u1_goe_const(&s, 1.0, 120.0).unwrap()] {
            let out = ch.apply(&rho).unwrap();
            assert!(max_abs(&(out - CMat::identity(5, 5) / C64::new(5.0, 0.0))) < 1e-12);
        }
        let ch = u1_gue_const(&s, 1.0, 60.0).unwrap();
        assert!(max_abs(ch.coeff_a()) < 1e-25);
        assert!(ch.coeff_b().iter().all(|z| (z.re - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identity_at_zero_for_all_cases() {
        let s = spec(4, 5);
        let rho = random_matrix(4, 6);
        for ch in all_cases(&s, 0.0) {
            let out = ch.apply(&rho).unwrap();
            assert!(max_abs(&(out - &rho)) < 1e-12, "{:?}", ch.case);
        }
    }

    #[test]
    fn invariants_for_all_cases() {
        let s = spec(4, 7);
        let h = random_hermitian(4, 8);
        for t in [0.3, 1.0, 4.0] {
            for ch in all_cases(&s, t) {
                let tol = match ch.case {
                    ChannelCase::GueConst | ChannelCase::GoeConst => 1e-12,
                    _ => 1e-9,
                };
                // trace preservation on every basis element
                for ip in 0..4 {
                    for jp in 0..4 {
                        let tr: C64 = (0..4).map(|i| ch.entry(i, i, ip, jp)).sum();
                        let want = if ip == jp { 1.0 } else { 0.0 };
                        assert!((tr - C64::new(want, 0.0)).norm() < tol, "{:?} t={t}", ch.case);
                    }
                }
                let out = ch.apply(&h).unwrap();
                assert!(is_hermitian(&out, 1e-12), "{:?}", ch.case);
                let choi = ch.choi().unwrap();
                assert!(is_hermitian(&choi, 1e-12));
                let min_eig = choi.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
                assert!(min_eig >= -1e-9, "{:?} t={t} min eig {min_eig}", ch.case);
            }
        }
    }

    #[test]
    fn gue_semigroup() {
        let s = spec(3, 9);
        let (t1, t2) = (0.4, 1.1);
        let full = u1_gue_const(&s, 0.9, t1 + t2).unwrap().dense().unwrap();
        let comp = u1_gue_const(&s, 0.9, t1).unwrap().dense().unwrap() * u1_gue_const(&s, 0.9, t2).unwrap().dense().unwrap();
        assert!(max_abs(&(full - comp)) < 1e-10);
    }

    #[test]
    fn first_order_step_matches_generator() {
        let s = spec(4, 10);
        let rho = random_hermitian(4, 11);
        for ens in [Ensemble::Gue, Ensemble::Goe] {
            let model = NoiseModel::constant(ens, 0.7, &s).unwrap();
            let gen = build_l1(&s, &model).unwrap();
            let lr = gen.apply(&rho).unwrap();
            let mut prev = f64::INFINITY;
            for h in [1e-2, 5e-3, 2.5e-3] {
                let ch = match ens {
                    Ensemble::Gue => u1_gue_const(&s, 0.7, h).unwrap(),
                    Ensemble::Goe => u1_goe_const(&s, 0.7, h).unwrap(),
                };
                let err = max_abs(&(ch.apply(&rho).unwrap() - &rho - &lr * C64::new(h, 0.0)));
                assert!(err < 2.0 * h * h * (1.0 + max_abs(&lr)).powi(2));
                assert!(err < prev / 3.0);
                prev = err;
            }
        }
    }

    #[test]
    fn finite_difference_derivative_at_zero() {
        let s = spec(3, 12);
        let lam = random_lambda(3, 13);
        for ens in [Ensemble::Gue, Ensemble::Goe] {
            let model = NoiseModel::new(ens, NoiseProfile::Matrix { lambda: lam.clone() }, &s).unwrap();
            let gen = build_l1(&s, &model).unwrap().coeffs.dense().unwrap();
            let h = 1e-5;
            let ch = u1_series(&s, &model, &[h]).unwrap().remove(0);
            let fd = (ch.dense().unwrap() - CMat::identity(9, 9)) / C64::new(h, 0.0);
            assert!(max_abs(&(fd - gen)) < 1e-3, "{ens:?}");
        }
    }

    #[test]
    fn goe_strong_noise_degenerate_levels() {
        let d = 4;
        let s = Spectrum::new(vec![0.0; d]).unwrap();
        let (j, t) = (1.3, 0.9);
        let ch = u1_goe_const(&s, j, t).unwrap();
        let df = d as f64;
        let a = ((-j * t / 2.0).exp() + (-j * t / 2.0 - j * t / df).exp()) / 2.0;
        let g = ((-j * t / 2.0).exp() - (-j * t / 2.0 - j * t / df).exp()) / 2.0;
        assert!(ch.coeff_a().iter().all(|z| (z - C64::new(a, 0.0)).norm() < 1e-14));
        assert!(ch.coeff_g().iter().all(|z| (z - C64::new(g, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn goe_params_identities() {
        let s = spec(5, 14);
        for j in [1e-3, 0.5, 3.0, 40.0] {
            let model = NoiseModel::constant(Ensemble::Goe, j, &s).unwrap();
            let p = goe_closed_form_params(&s, &model).unwrap();
            let w = build_l1(&s, &model).unwrap().coeffs.a;
            for a in 0..5 {
                for b in 0..5 {
                    let two = p.c_plus[(a, b)] + p.c_minus[(a, b)];
                    assert!((two - C64::new(2.0, 0.0)).norm() < 1e-12);
                    let zs = p.z_plus[(a, b)] + p.z_minus[(a, b)];
                    assert!((zs - w[(a, b)] - w[(b, a)]).norm() < 1e-12);
                    let dz = p.z_plus[(a, b)] - p.z_minus[(a, b)];
                    let dw = w[(a, b)] - w[(b, a)];
                    let lam = j / 5.0;
                    assert!((dz * dz - dw * dw - lam * lam).norm() < 1e-12 * (1.0 + dw.norm_sqr()));
                }
                let df = 5.0;
                assert!((p.g[(a, a)] - C64::new(1.0, 0.0)).norm() < 1e-14);
                assert!((p.c_plus[(a, a)] - C64::new(1.0, 0.0)).norm() < 1e-14);
                let zp = -(df + 1.0) * j / (2.0 * df) + j / (2.0 * df);
                assert!((p.z_plus[(a, a)] - C64::new(zp, 0.0)).norm() < 1e-12 * (1.0 + j));
            }
        }
    }

    #[test]
    fn exponential_form_agrees_with_robust_form() {
        let s = spec(4, 15);
        for j in [0.05, 0.9, 7.0] {
            let model = NoiseModel::constant(Ensemble::Goe, j, &s).unwrap();
            let p = goe_closed_form_params(&s, &model).unwrap();
            for t in [0.0, 0.7, 3.0] {
                let ch = u1_goe_const(&s, j, t).unwrap();
                for a in 0..4 {
                    for b in 0..4 {
                        let (c, g) = p.evaluate(a, b, t);
                        assert!((c - ch.coeff_a()[(a, b)]).norm() < 1e-12);
                        assert!((g - ch.coeff_g()[(a, b)]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pair_is_finite_at_exceptional_point() {
        // (w_ij - w_ji)^2 + l^2 = 0 when 2 |E_ij| = l
        let lam = 0.6;
        let w_ij = C64::new(-0.4, -0.3);
        let w_ji = C64::new(-0.4, 0.3);
        let (c, g) = goe_pair(w_ij, w_ji, lam, 2.0);
        assert!(c.is_finite() && g.is_finite());
        // nearby regular point agrees to first order
        let (c2, g2) = goe_pair(w_ij, w_ji, lam + 1e-7, 2.0);
        assert!((c - c2).norm() < 1e-6 && (g - g2).norm() < 1e-6);
    }

    #[test]
    fn root_sign_flip_leaves_channel_unchanged() {
        let s = spec(4, 16);
        let model = NoiseModel::constant(Ensemble::Goe, 0.8, &s).unwrap();
        let p = goe_closed_form_params(&s, &model).unwrap();
        let flipped = GoeClosedFormParams {
            g: -p.g.clone(),
            c_plus: p.c_minus.clone(),
            c_minus: p.c_plus.clone(),
            z_plus: p.z_minus.clone(),
            z_minus: p.z_plus.clone(),
        };
        for a in 0..4 {
            for b in 0..4 {
                let (c1, g1) = p.evaluate(a, b, 1.7);
                let (c2, g2) = flipped.evaluate(a, b, 1.7);
                assert!((c1 - c2).norm() < 1e-14 && (g1 - g2).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn general_reduces_to_constant() {
        let s = spec(4, 17);
        let times: Vec<f64> = (0..=20).map(|k| 0.25 * k as f64).collect();
        for ens in [Ensemble::Gue, Ensemble::Goe] {
            let lam = vec![vec![0.9 / 4.0; 4]; 4];
            let model = NoiseModel::new(ens, NoiseProfile::Matrix { lambda: lam }, &s).unwrap();
            let gen = u1_series(&s, &model, &times).unwrap();
            for (t, ch) in times.iter().zip(gen) {
                let c = match ens {
                    Ensemble::Gue => u1_gue_const(&s, 0.9, *t).unwrap(),
                    Ensemble::Goe => u1_goe_const(&s, 0.9, *t).unwrap(),
                };
                assert!(max_abs(&(ch.coeff_a() - c.coeff_a())) < 1e-12);
                assert!(max_abs(&(ch.coeff_b() - c.coeff_b())) < 1e-9);
                assert!(max_abs(&(ch.coeff_g() - c.coeff_g())) < 1e-12);
            }
        }
    }

    #[test]
    fn zero_noise_general_is_pure_phase() {
        let s = spec(3, 18);
        let model = NoiseModel::new(Ensemble::Gue, NoiseProfile::Matrix { lambda: vec![vec![0.0; 3]; 3] }, &s).unwrap();
        let ch = u1_gue_general(&s, &model, 2.0).unwrap();
        assert_eq!(max_abs(ch.coeff_b()), 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let want = C64::from_polar(1.0, -(s.energies()[i] - s.energies()[j]) * 2.0);
                assert!((ch.coeff_a()[(i, j)] - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn wrong_ensemble_rejected() {
        let s = spec(3, 19);
        let goe = NoiseModel::constant(Ensemble::Goe, 1.0, &s).unwrap();
        assert!(matches!(u1_gue_general(&s, &goe, 1.0), Err(Error::InvalidNoise(_))));
        assert!(goe_closed_form_params(&s, &NoiseModel::constant(Ensemble::Gue, 1.0, &s).unwrap()).is_err());
    }

    #[test]
    fn goe_root_branch_is_canonical() {
        let s = spec(5, 21);
        let model = NoiseModel::constant(Ensemble::Goe, 1e-4, &s).unwrap();
        let p = goe_closed_form_params(&s, &model).unwrap();
        for i in 0..5 {
            for k in (0..5).filter(|&k| k != i) {
                // z+ - z- = R sits on the upper half plane for either sign of E_ik
                assert!((p.z_plus[(i, k)] - p.z_minus[(i, k)]).im > 0.0);
                assert_eq!(p.z_plus[(i, k)], p.z_plus[(k, i)]);
            }
        }
    }

    #[test]
    fn observable_helpers_agree_with_entries() {
        let s = spec(4, 20);
        let ch = u1_goe_const(&s, 0.6, 1.2).unwrap();
        let k: C64 = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| ch.entry(i, j, i, j)).sum();
        assert!((k.re / 16.0 - ch.sff()).abs() < 1e-15);
        let p: f64 = (0..4).map(|j| ch.transfer(1, j)).sum();
        assert!((p - 1.0).abs() < 1e-12);
        let o = random_matrix(4, 21);
        let mut direct = C64::new(0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                for ip in 0..4 {
                    for jp in 0..4 {
                        direct += ch.entry(i, j, ip, jp) * o.adjoint()[(ip, jp)] * o[(j, i)];
                    }
                }
            }
        }
        assert!((ch.two_point(&o).unwrap() - direct / 4.0).norm() < 1e-12);
    }

    #[test]
    fn json_export_layout() {
        let s = Spectrum::new(vec![0.0, 1.0]).unwrap();
        let ch = u1_gue_const(&s, 0.0, 0.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&ch.to_json().unwrap()).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["case"], "gue_const");
        assert_eq!(v["a"][0].as_array().unwrap().len(), 4);
        assert_eq!(v["a"][1][2], 1.0);
        assert_eq!(v["a"][1][3], 0.0);
    }

    #[test]
    fn dense_limited_to_small_dim() {
        let s = spec(9, 22);
        assert!(u1_gue_const(&s, 1.0, 1.0).unwrap().dense().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn trace_and_hermiticity_preserved(seed in any::<u64>(), j in 0.0f64..4.0, t in 0.0f64..6.0, goe in any::<bool>()) {
            let s = spec(4, seed);
            let ch = if goe { u1_goe_const(&s, j, t).unwrap() } else { u1_gue_const(&s, j, t).unwrap() };
            let h = random_hermitian(4, seed ^ 0x55);
            let out = ch.apply(&h).unwrap();
            prop_assert!((trace(&out) - trace(&h)).norm() < 1e-12 * (1.0 + max_abs(&h)));
            prop_assert!(is_hermitian(&out, 1e-12));
        }
    }
}
