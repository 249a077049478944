//! Observables built on the channels: spectral form factor, two-point
//! function, Krylov moments and Lanczos coefficients, the effective
//! Hamiltonian, and transfer / return probabilities.

use std::collections::BTreeMap;
use std::io::Write;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_one::{build_l1, goe_closed_form_params, u1_gue_const, u1_series};
use crate::linalg::{is_hermitian, require_square, trace};
use crate::noise::{Ensemble, NoiseModel};
use crate::spectra::Spectrum;
use crate::{CMat, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

/// Grid as written in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub n_points: usize,
    pub spacing: Spacing,
}

impl TimeGridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        match self.spacing {
            Spacing::Linear => TimeGrid::linear(self.t_min, self.t_max, self.n_points),
            Spacing::Log => TimeGrid::log(self.t_min, self.t_max, self.n_points),
        }
    }
}

/// Strictly increasing nonnegative sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        Self::from_times(times)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.times
    }
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::InvalidGrid(format!("time {t} is not finite and nonnegative")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!("times not strictly increasing at {} -> {}", w[0], w[1])));
        }
        Ok(Self { times })
    }

    fn check_bounds(t_min: f64, t_max: f64, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidGrid("n_points must be positive".into()));
        }
        if n > 1 && !(t_max > t_min) {
            return Err(Error::InvalidGrid(format!("need t_max > t_min, got {t_min}..{t_max}")));
        }
        Ok(())
    }

    pub fn linear(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        Self::check_bounds(t_min, t_max, n)?;
        if n == 1 {
            return Self::from_times(vec![t_min]);
        }
        let step = (t_max - t_min) / (n - 1) as f64;
        let mut times: Vec<f64> = (0..n).map(|k| t_min + step * k as f64).collect();
        times[n - 1] = t_max;
        Self::from_times(times)
    }

    pub fn log(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        Self::check_bounds(t_min, t_max, n)?;
        if !(t_min > 0.0) {
            return Err(Error::InvalidGrid(format!("log spacing needs t_min > 0, got {t_min}")));
        }
        if n == 1 {
            return Self::from_times(vec![t_min]);
        }
        let (a, b) = (t_min.ln(), t_max.ln());
        let mut times: Vec<f64> = (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect();
        times[0] = t_min;
        times[n - 1] = t_max;
        Self::from_times(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetadata {
    pub spectrum_hash: String,
    pub noise: String,
    pub dim: usize,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl SeriesMetadata {
    pub fn new(spec: &Spectrum, noise: impl Into<String>) -> Self {
        Self { spectrum_hash: spec.content_hash(), noise: noise.into(), dim: spec.dim(), ..Self::default() }
    }
}

/// A named observable sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticSeries {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    pub stderr: Option<Vec<f64>>,
    pub metadata: SeriesMetadata,
}

#[derive(Serialize, Deserialize)]
struct SeriesJson {
    name: String,
    times: Vec<f64>,
    values: Vec<[f64; 2]>,
    stderr: Option<Vec<f64>>,
    metadata: SeriesMetadata,
}

impl DiagnosticSeries {
    pub fn new(name: impl Into<String>, grid: &TimeGrid, values: Vec<C64>, metadata: SeriesMetadata) -> Self {
        Self { name: name.into(), times: grid.times().to_vec(), values, stderr: None, metadata }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        TimeGrid::from_times(self.times.clone())?;
        if self.values.len() != self.times.len() {
            return Err(Error::DimensionMismatch { expected: self.times.len(), found: self.values.len() });
        }
        if let Some(se) = &self.stderr {
            if se.len() != self.times.len() {
                return Err(Error::DimensionMismatch { expected: self.times.len(), found: se.len() });
            }
        }
        Ok(())
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    /// Pointwise mean of series sharing one grid; metadata of the first.
    pub fn mean(series: &[DiagnosticSeries]) -> Result<Self> {
        let first = series.first().ok_or_else(|| Error::Precondition("no series to average".into()))?;
        let mut values = vec![C64::new(0.0, 0.0); first.len()];
        for s in series {
            if s.times != first.times {
                return Err(Error::InvalidGrid("series to average have different grids".into()));
            }
            for (v, x) in values.iter_mut().zip(&s.values) {
                *v += x;
            }
        }
        let n = series.len() as f64;
        values.iter_mut().for_each(|v| *v /= n);
        Ok(Self { values, stderr: None, ..first.clone() })
    }

    /// CSV with an optional `# config_sha256=...` first line, then
    /// `t,re,im,stderr` (stderr blank for analytic series).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.validate()?;
        let mut out = out;
        if let Some(h) = &self.metadata.config_sha256 {
            writeln!(out, "# config_sha256={h}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
        w.write_record(["t", "re", "im", "stderr"]).map_err(csv_err)?;
        for (k, (t, v)) in self.times.iter().zip(&self.values).enumerate() {
            let se = self.stderr.as_ref().map(|s| s[k].to_string()).unwrap_or_default();
            w.write_record([t.to_string(), v.re.to_string(), v.im.to_string(), se]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let j = SeriesJson {
            name: self.name.clone(),
            times: self.times.clone(),
            values: self.values.iter().map(|z| [z.re, z.im]).collect(),
            stderr: self.stderr.clone(),
            metadata: self.metadata.clone(),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: SeriesJson = serde_json::from_str(s)?;
        let series = Self {
            name: j.name,
            times: j.times,
            values: j.values.iter().map(|v| C64::new(v[0], v[1])).collect(),
            stderr: j.stderr,
            metadata: j.metadata,
        };
        series.validate()?;
        Ok(series)
    }
}

/// Evaluates `f` at every grid time, in parallel, keeping grid order.
pub fn eval_on_grid<F>(grid: &TimeGrid, f: F) -> Result<Vec<C64>>
where
    F: Fn(f64) -> Result<C64> + Sync,
{
    grid.times().par_iter().map(|&t| f(t)).collect()
}

fn check_j(j: f64) -> Result<()> {
    if !(j >= 0.0 && j.is_finite()) {
        return Err(Error::InvalidNoise(format!("J must be finite and nonnegative, got {j}")));
    }
    Ok(())
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `K_0(t) = |Tr e^{-iH0 t}|^2 / D^2`.
pub fn sff_noiseless(spec: &Spectrum, t: f64) -> f64 {
    let d = spec.dim() as f64;
    spec.trace_evolution(t).norm_sqr() / (d * d)
}

/// `K_J(t) = e^{-Jt} K_0(t) + (1 - e^{-Jt}) / D^2`.
pub fn sff_gue_const(spec: &Spectrum, j: f64, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    check_j(j)?;
    let d2 = (spec.dim() * spec.dim()) as f64;
    let values = eval_on_grid(grid, |t| {
        let e = (-j * t).exp();
        Ok(real(e * sff_noiseless(spec, t) + (-(-j * t).exp_m1()) / d2))
    })?;
    let meta = SeriesMetadata::new(spec, format!("gue const J={j}"));
    Ok(DiagnosticSeries::new("sff", grid, values, meta))
}

/// Per-pair GOE coefficients at one time: `c_ij` (diagonal delta) and the
/// exchange coefficient `g_ij`, from the printed exponential form where it
/// is well conditioned and from the cosh / sinhc form otherwise.
struct GoePairs {
    params: crate::channel_one::GoeClosedFormParams,
    w: CMat,
    lambda: nalgebra::DMatrix<f64>,
}

impl GoePairs {
    fn new(spec: &Spectrum, j: f64) -> Result<Self> {
        let model = NoiseModel::constant(Ensemble::Goe, j, spec)?;
        let params = goe_closed_form_params(spec, &model)?;
        let w = build_l1(spec, &model)?.w().clone();
        Ok(Self { params, w, lambda: model.lambda().clone() })
    }

    fn at(&self, i: usize, k: usize, t: f64) -> (C64, C64) {
        let (wik, wki) = (self.w[(i, k)], self.w[(k, i)]);
        let delta = wik - wki;
        let r = (self.params.z_plus[(i, k)] - self.params.z_minus[(i, k)]).norm();
        if self.params.regular_at(i, k) && r >= 1e-3 * delta.norm() {
            self.params.evaluate(i, k, t)
        } else {
            let (c, _) = crate::channel_one::goe_pair(wik, wki, self.lambda[(i, k)], t);
            let (_, g) = crate::channel_one::goe_pair(wki, wik, self.lambda[(i, k)], t);
            (c, g)
        }
    }
}

/// GOE `K_J(t)`: `(1/D^2) sum_ij c_ij(t) + (1 - e^{-Jt/2})/D^2 +
/// (1/D) e^{-(D+1)Jt/(2D)} sinh(Jt/(2D))`.
pub fn sff_goe_const(spec: &Spectrum, j: f64, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    check_j(j)?;
    let pairs = GoePairs::new(spec, j)?;
    let d = spec.dim();
    let df = d as f64;
    let values = eval_on_grid(grid, |t| {
        let mut s = C64::new(0.0, 0.0);
        for i in 0..d {
            for k in 0..d {
                s += pairs.at(i, k, t).0;
            }
        }
        let universal = -(-0.5 * j * t).exp_m1() / (df * df)
            + (-(df + 1.0) * j * t / (2.0 * df)).exp() * (j * t / (2.0 * df)).sinh() / df;
        Ok(real((s.re / (df * df) + universal).max(0.0)))
    })?;
    let meta = SeriesMetadata::new(spec, format!("goe const J={j}"));
    Ok(DiagnosticSeries::new("sff", grid, values, meta))
}

/// `K_J(t)` for any noise model by contracting the channel over `i = i'`,
/// `j = j'`.
pub fn sff_from_channel(spec: &Spectrum, model: &NoiseModel, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    let chans = u1_series(spec, model, grid.times())?;
    let values = chans.iter().map(|c| real(c.sff())).collect();
    Ok(DiagnosticSeries::new("sff", grid, values, SeriesMetadata::new(spec, model.describe())))
}

/// `C_0(t) = (1/D) Tr(O^dag O0_t)` as an explicit phase sum.
pub fn two_point_noiseless(spec: &Spectrum, o: &CMat, t: f64) -> Result<C64> {
    let d = spec.dim();
    require_square(o, d)?;
    let e = spec.energies();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..d {
        for k in 0..d {
            s += o[(k, i)].conj() * o[(k, i)] * C64::from_polar(1.0, (e[k] - e[i]) * t);
        }
    }
    Ok(s / d as f64)
}

/// `C_J(t) = e^{-Jt} C_0(t) + (1 - e^{-Jt}) Tr O Tr O^dag / D^2`.
pub fn two_point_gue_const(spec: &Spectrum, j: f64, o: &CMat, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    check_j(j)?;
    require_square(o, spec.dim())?;
    let d2 = (spec.dim() * spec.dim()) as f64;
    let tt = trace(o).norm_sqr() / d2;
    let values = eval_on_grid(grid, |t| {
        let e = (-j * t).exp();
        Ok(two_point_noiseless(spec, o, t)? * e + tt * (-(-j * t).exp_m1()))
    })?;
    let meta = SeriesMetadata::new(spec, format!("gue const J={j}"));
    Ok(DiagnosticSeries::new("two_point", grid, values, meta))
}

/// GOE `C_J(t) = (1/D) sum_ij c_ij O^dag_ij O_ji + (1 - e^{-Jt/2}) Tr O^dag Tr O / D^2
/// + (1/D) sum_ij g_ij O^dag_ji O_ji`.
pub fn two_point_goe_const(spec: &Spectrum, j: f64, o: &CMat, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    check_j(j)?;
    let d = spec.dim();
    require_square(o, d)?;
    let df = d as f64;
    let pairs = GoePairs::new(spec, j)?;
    let od = o.adjoint();
    let tt = trace(&od) * trace(o) / (df * df);
    let values = eval_on_grid(grid, |t| {
        let mut s = C64::new(0.0, 0.0);
        for i in 0..d {
            for k in 0..d {
                let (c, g) = pairs.at(i, k, t);
                s += c * od[(i, k)] * o[(k, i)] + g * od[(k, i)] * o[(k, i)];
            }
        }
        Ok(s / df + tt * (-(-0.5 * j * t).exp_m1()))
    })?;
    let meta = SeriesMetadata::new(spec, format!("goe const J={j}"));
    Ok(DiagnosticSeries::new("two_point", grid, values, meta))
}

/// `(1/D) E Tr(O^dag O_t)` for any noise model through the channel.
pub fn two_point_from_channel(spec: &Spectrum, model: &NoiseModel, o: &CMat, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    require_square(o, spec.dim())?;
    let chans = u1_series(spec, model, grid.times())?;
    let values = chans.iter().map(|c| c.two_point(o)).collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticSeries::new("two_point", grid, values, SeriesMetadata::new(spec, model.describe())))
}

/// Exact complex rational `re + i im`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactComplex {
    pub re: BigRational,
    pub im: BigRational,
}

impl ExactComplex {
    pub fn real(re: BigRational) -> Self {
        Self { re, im: BigRational::zero() }
    }

    pub fn to_c64(&self) -> C64 {
        C64::new(ratio_to_f64(&self.re), ratio_to_f64(&self.im))
    }
}

fn ratio_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(if r.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
}

fn ratio_from_f64(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::Precondition(format!("{x} is not finite")))
}

fn binomial_row(k: usize) -> Vec<BigInt> {
    let mut row = vec![BigInt::one()];
    for i in 0..k {
        let next = &row[i] * BigInt::from(k - i) / BigInt::from(i + 1);
        row.push(next);
    }
    row
}

/// Even moments `mu_2n = alpha^{2n} |E_2n|` of `C(t) = sech(alpha t)`
/// (secant numbers), `n = 0..=n_max`.
pub fn sech_moments(alpha: &BigRational, n_max: usize) -> Vec<BigRational> {
    let mut sec: Vec<BigInt> = vec![BigInt::one()];
    for m in 1..=n_max {
        let row = binomial_row(2 * m);
        let mut s = BigInt::zero();
        for (k, sk) in sec.iter().enumerate() {
            let term = &row[2 * k] * sk;
            if (m - k) % 2 == 1 {
                s += term;
            } else {
                s -= term;
            }
        }
        sec.push(s);
    }
    let a2 = alpha * alpha;
    let mut pow = BigRational::one();
    sec.into_iter()
        .map(|s| {
            let v = BigRational::from_integer(s) * &pow;
            pow = &pow * &a2;
            v
        })
        .collect()
}

/// `mu_{J;k} = sum_i C(k,i) (iJ)^i mu_{k-i} + W (d_k0 - (iJ)^k)` for
/// `k = 0..=k_max`, with `mu_odd = 0` and `W = Tr O Tr O^dag / D^2`.
pub fn noisy_moments_exact(mu_even: &[BigRational], j: &BigRational, weight: &ExactComplex, k_max: usize) -> Result<Vec<ExactComplex>> {
    if mu_even.len() <= k_max / 2 {
        return Err(Error::Precondition(format!("need {} even moments for k_max = {k_max}, got {}", k_max / 2 + 1, mu_even.len())));
    }
    let mu = |n: usize| if n.is_multiple_of(2) { mu_even[n / 2].clone() } else { BigRational::zero() };
    // (iJ)^i = J^i * [1, i, -1, -i][i mod 4]
    let mut jpow = vec![BigRational::one()];
    for i in 1..=k_max {
        jpow.push(&jpow[i - 1] * j);
    }
    let ipow = |i: usize, x: BigRational| -> ExactComplex {
        match i % 4 {
            0 => ExactComplex { re: x, im: BigRational::zero() },
            1 => ExactComplex { re: BigRational::zero(), im: x },
            2 => ExactComplex { re: -x, im: BigRational::zero() },
            _ => ExactComplex { re: BigRational::zero(), im: -x },
        }
    };
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let row = binomial_row(k);
        let mut re = BigRational::zero();
        let mut im = BigRational::zero();
        for i in 0..=k {
            let m = mu(k - i);
            if m.is_zero() {
                continue;
            }
            let z = ipow(i, BigRational::from_integer(row[i].clone()) * &jpow[i] * m);
            re += z.re;
            im += z.im;
        }
        let mut tail = ipow(k, -jpow[k].clone());
        if k == 0 {
            tail.re += BigRational::one();
        }
        re += &weight.re * &tail.re - &weight.im * &tail.im;
        im += &weight.re * &tail.im + &weight.im * &tail.re;
        out.push(ExactComplex { re, im });
    }
    Ok(out)
}

/// Floating-point front end of [`noisy_moments_exact`]; inputs are
/// converted to rationals exactly.
pub fn noisy_moments(mu_even: &[f64], j: f64, tr_o: C64, tr_o_dag: C64, d: usize, k_max: usize) -> Result<Vec<C64>> {
    if d == 0 {
        return Err(Error::InvalidDimension { dim: d, reason: "dimension must be positive" });
    }
    let mu: Vec<BigRational> = mu_even.iter().map(|&x| ratio_from_f64(x)).collect::<Result<_>>()?;
    let w = tr_o * tr_o_dag / (d * d) as f64;
    let weight = ExactComplex { re: ratio_from_f64(w.re)?, im: ratio_from_f64(w.im)? };
    let m = noisy_moments_exact(&mu, &ratio_from_f64(j)?, &weight, k_max)?;
    Ok(m.iter().map(ExactComplex::to_c64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosResult {
    /// `mu_{J;k}`, `k = 0..=2 n_max`.
    pub moments: Vec<C64>,
    /// `sgn(b_n^2) |b_n|`, `n = 1..=n_max`.
    pub b_signed: Vec<f64>,
    /// Diagonal coefficients; always empty.
    pub a: Vec<f64>,
    pub n_max: usize,
}

pub const DEFAULT_BREAKDOWN_THRESHOLD: f64 = 1e-14;

/// `b_n^2 = M^(n)_2n` with
/// `M^(m)_2k = M^(m-1)_2k / b_{m-1}^2 - M^(m-2)_{2k-2} / b_{m-2}^2`,
/// `M^(0)_2k = mu_2k`, run in exact rational arithmetic. Returns the
/// signed `b_n`, `n = 1..=n_max`.
pub fn lanczos_recursion(mu_even: &[BigRational], n_max: usize, threshold: f64) -> Result<Vec<f64>> {
    if mu_even.len() <= n_max {
        return Err(Error::Precondition(format!("need {} even moments for n_max = {n_max}, got {}", n_max + 1, mu_even.len())));
    }
    if mu_even.first().map(|m| !m.is_one()).unwrap_or(true) {
        return Err(Error::Precondition("moments must be normalized, mu_0 = 1".into()));
    }
    let len = n_max + 1;
    let mut prev2 = vec![BigRational::zero(); len];
    let mut prev: Vec<BigRational> = mu_even[..len].to_vec();
    let (mut b2_prev2, mut b2_prev) = (BigRational::one(), BigRational::one());
    let mut b = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut cur = vec![BigRational::zero(); len];
        for k in n..len {
            cur[k] = &prev[k] / &b2_prev - &prev2[k - 1] / &b2_prev2;
        }
        let b2 = cur[n].clone();
        let b2f = ratio_to_f64(&b2);
        if b2f.abs() < threshold {
            return Err(Error::KrylovBreakdown { level: n, computed: b });
        }
        b.push(b2f.signum() * b2f.abs().sqrt());
        prev2 = std::mem::replace(&mut prev, cur);
        b2_prev2 = std::mem::replace(&mut b2_prev, b2);
    }
    Ok(b)
}

/// Noiseless Lanczos coefficients from even moments `mu_2k`.
pub fn lanczos_from_moments(mu_even: &[BigRational], n_max: usize, threshold: f64) -> Result<LanczosResult> {
    let b_signed = lanczos_recursion(mu_even, n_max, threshold)?;
    let moments = (0..=2 * n_max)
        .map(|k| if k % 2 == 0 { C64::new(ratio_to_f64(&mu_even[k / 2]), 0.0) } else { C64::new(0.0, 0.0) })
        .collect();
    Ok(LanczosResult { moments, b_signed, a: Vec::new(), n_max })
}

/// Signed Lanczos coefficients of the noisy autocorrelation: the same
/// recursion run on the even-index moments `mu_{J;2k}` (real when the
/// weight is real).
pub fn noisy_lanczos(mu_even: &[BigRational], j: &BigRational, weight: &BigRational, n_max: usize, threshold: f64) -> Result<LanczosResult> {
    let w = ExactComplex::real(weight.clone());
    let moments = noisy_moments_exact(mu_even, j, &w, 2 * n_max)?;
    let even: Vec<BigRational> = moments.iter().step_by(2).map(|m| m.re.clone()).collect();
    let b_signed = lanczos_recursion(&even, n_max, threshold)?;
    Ok(LanczosResult { moments: moments.iter().map(ExactComplex::to_c64).collect(), b_signed, a: Vec::new(), n_max })
}

/// Eigenvalues of the noise-averaged energy operator,
/// `E_{J;i} = e^{-Jt} E_i + Ebar (1 - e^{-Jt})`.
pub fn effective_hamiltonian(spec: &Spectrum, j: f64, t: f64) -> Result<Spectrum> {
    check_j(j)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    let e = (-j * t).exp();
    spec.affine_map(e, spec.mean_energy() * -(-j * t).exp_m1())
}

/// `E|U_ji|^2 = P_{j<-i}(t)`. Constant profiles use
/// `d_ij e^{-rt} + (1 - e^{-rt})/D` with `r = J` (GUE) or `J/2` (GOE);
/// other profiles contract the channel.
pub fn transfer_probability(spec: &Spectrum, model: &NoiseModel, i: usize, j: usize, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    let d = spec.dim();
    if model.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: model.dim() });
    }
    if i >= d || j >= d {
        return Err(Error::Precondition(format!("state indices ({i}, {j}) out of range for D = {d}")));
    }
    let values = match model.constant_j() {
        Some(jj) => {
            let rate = match model.ensemble() {
                Ensemble::Gue => jj,
                Ensemble::Goe => 0.5 * jj,
            };
            let delta = if i == j { 1.0 } else { 0.0 };
            eval_on_grid(grid, |t| Ok(real(delta * (-rate * t).exp() - (-rate * t).exp_m1() / d as f64)))?
        }
        None => u1_series(spec, model, grid.times())?.iter().map(|c| real(c.transfer(i, j))).collect(),
    };
    let mut meta = SeriesMetadata::new(spec, model.describe());
    meta.extra.insert("from".into(), i.into());
    meta.extra.insert("to".into(), j.into());
    Ok(DiagnosticSeries::new("transfer", grid, values, meta))
}

/// Complete orthogonal decomposition `{Pi_k}` of the Hilbert space.
#[derive(Debug, Clone)]
pub enum Partition {
    /// Rank-one projectors on the energy eigenstates.
    Eigenbasis,
    Projectors(Vec<CMat>),
}

impl Partition {
    pub fn validate(&self, d: usize) -> Result<()> {
        let Partition::Projectors(ps) = self else { return Ok(()) };
        if ps.is_empty() {
            return Err(Error::Precondition("partition has no projectors".into()));
        }
        let tol = 1e-10;
        let mut sum = CMat::zeros(d, d);
        for (k, p) in ps.iter().enumerate() {
            require_square(p, d)?;
            if !is_hermitian(p, tol) {
                return Err(Error::Precondition(format!("projector {k} is not Hermitian")));
            }
            for (l, q) in ps.iter().enumerate() {
                let want = if k == l { p.clone() } else { CMat::zeros(d, d) };
                if (p * q - want).iter().any(|z| z.norm() > tol) {
                    return Err(Error::Precondition(format!("projectors {k}, {l} violate Pi_k Pi_l = d_kl Pi_k")));
                }
            }
            sum += p;
        }
        if (sum - CMat::identity(d, d)).iter().any(|z| z.norm() > tol) {
            return Err(Error::Precondition("projectors do not sum to the identity".into()));
        }
        Ok(())
    }
}

/// `P_{S;J}(t) = (1/D_S) sum_k E Tr(Pi_k(t) Pi_k)` under constant GUE noise.
pub fn return_probability(spec: &Spectrum, j: f64, partition: &Partition, grid: &TimeGrid) -> Result<DiagnosticSeries> {
    check_j(j)?;
    let d = spec.dim();
    partition.validate(d)?;
    let values = match partition {
        Partition::Eigenbasis => eval_on_grid(grid, |t| Ok(real((-j * t).exp() - (-j * t).exp_m1() / d as f64)))?,
        Partition::Projectors(ps) => eval_on_grid(grid, |t| {
            let ch = u1_gue_const(spec, j, t)?;
            let mut s = C64::new(0.0, 0.0);
            for p in ps {
                s += trace(&(ch.apply(p)? * p));
            }
            Ok(s / ps.len() as f64)
        })?,
    };
    let meta = SeriesMetadata::new(spec, format!("gue const J={j}"));
    Ok(DiagnosticSeries::new("return_probability", grid, values, meta))
}
