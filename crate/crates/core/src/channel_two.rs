//! Two-replica averaged channel for constant GUE noise,
//! `U2(t) = e^{-i E_ijkl t} sum_a f_a(t) F_a`, with
//! `U2_{ijkl;i'j'k'l'} = E[U_ii' U*_jj' U_kk' U*_ll']` and
//! `E_ijkl = E_i - E_j + E_k - E_l`.
//!
//! Each graph group `F_a` is a sum of delta diagrams. A diagram is a
//! bijection from the slots `S = (i, k, j', l')` to the slots
//! `T = (i', k', j, l)` and sets the paired indices equal. There are 24
//! diagrams in eight groups of sizes 1, 4, 2, 8, 2, 1, 2, 4.

use nalgebra::DMatrix;

use crate::channel_one::u1_gue_const;
use crate::linalg::{is_hermitian, max_abs, require_square, trace};
use crate::spectra::Spectrum;
use crate::{CMat, Error, Result, C64};

/// Every diagram as `(sigma, group)`: `sigma[s]` is the `T` slot paired
/// with `S` slot `s`; `group` is 0-based.
pub const DIAGRAMS: [([usize; 4], usize); 24] = [
    ([0, 1, 2, 3], 0),
    ([0, 1, 3, 2], 2),
    ([0, 2, 1, 3], 1),
    ([0, 2, 3, 1], 3),
    ([0, 3, 1, 2], 3),
    ([0, 3, 2, 1], 1),
    ([1, 0, 2, 3], 2),
    ([1, 0, 3, 2], 5),
    ([1, 2, 0, 3], 3),
    ([1, 2, 3, 0], 7),
    ([1, 3, 0, 2], 7),
    ([1, 3, 2, 0], 3),
    ([2, 0, 1, 3], 3),
    ([2, 0, 3, 1], 7),
    ([2, 1, 0, 3], 1),
    ([2, 1, 3, 0], 3),
    ([2, 3, 0, 1], 4),
    ([2, 3, 1, 0], 6),
    ([3, 0, 1, 2], 7),
    ([3, 0, 2, 1], 3),
    ([3, 1, 0, 2], 3),
    ([3, 1, 2, 0], 1),
    ([3, 2, 0, 1], 6),
    ([3, 2, 1, 0], 4),
];

pub const GROUP_SIZES: [usize; 8] = [1, 4, 2, 8, 2, 1, 2, 4];

fn check_dim(d: usize) -> Result<()> {
    if d < 3 {
        return Err(Error::InvalidDimension { dim: d, reason: "the two-replica coefficients have poles at D = 1, 2" });
    }
    Ok(())
}

/// The 8 x 5 coefficient matrix multiplying
/// `(1, e^{-Jt}, e^{-(2-2/D)Jt}, e^{-2Jt}, e^{-(2+2/D)Jt})`.
fn coefficient_matrix(d: usize) -> [[f64; 5]; 8] {
    let d = d as f64;
    let d2 = d * d;
    [
        [0.0, 0.0, 0.25, 0.5, 0.25],
        [0.0, (d2 - 2.0) / (d * (d2 - 4.0)), -1.0 / (4.0 * (d - 2.0)), -1.0 / (2.0 * d), -1.0 / (4.0 * (d + 2.0))],
        [0.0, 0.0, -0.25, 0.0, 0.25],
        [0.0, -1.0 / (d2 - 4.0), 1.0 / (4.0 * (d - 2.0)), 0.0, -1.0 / (4.0 * (d + 2.0))],
        [
            1.0 / (d2 - 1.0),
            -2.0 / (d2 - 4.0),
            1.0 / (2.0 * (d - 1.0) * (d - 2.0)),
            0.0,
            1.0 / (2.0 * (d + 1.0) * (d + 2.0)),
        ],
        [0.0, 0.0, 0.25, -0.5, 0.25],
        [
            -1.0 / (d * d2 - d),
            4.0 / (d * (d2 - 4.0)),
            -1.0 / (2.0 * (d - 1.0) * (d - 2.0)),
            0.0,
            1.0 / (2.0 * (d + 1.0) * (d + 2.0)),
        ],
        [0.0, 2.0 / (d * (d2 - 4.0)), -1.0 / (4.0 * (d - 2.0)), 1.0 / (2.0 * d), -1.0 / (4.0 * (d + 2.0))],
    ]
}

/// Decay rates of the five exponentials, in units of `J`.
pub fn decay_rates(d: usize) -> [f64; 5] {
    let d = d as f64;
    [0.0, 1.0, 2.0 - 2.0 / d, 2.0, 2.0 + 2.0 / d]
}

/// `f_1(t), ..., f_8(t)` (real for real `J`).
pub fn f_coefficients(d: usize, j: f64, t: f64) -> Result<[f64; 8]> {
    check_dim(d)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    let rates = decay_rates(d);
    let e: Vec<f64> = rates.iter().map(|r| (-r * j * t).exp()).collect();
    let m = coefficient_matrix(d);
    let mut f = [0.0; 8];
    for (a, row) in m.iter().enumerate() {
        f[a] = row.iter().zip(&e).map(|(c, x)| c * x).sum();
    }
    Ok(f)
}

/// The 8 x 8 generator acting on `(f_1, ..., f_8)`, with diagonal weight
/// `w` (the spectral part of `w_ijkl = -i E_ijkl - 2J`, or `-2J` alone once
/// the phase is factored out).
pub fn build_m(d: usize, j: f64, w: C64) -> DMatrix<C64> {
    let jd = j / d as f64;
    let r = |x: f64| C64::new(x, 0.0);
    let mut m = DMatrix::from_element(8, 8, r(0.0));
    for a in 0..8 {
        m[(a, a)] = w;
    }
    m[(0, 2)] = r(-2.0 * jd);
    m[(1, 0)] = r(jd);
    m[(1, 1)] += r(j);
    m[(2, 0)] = r(-jd);
    m[(2, 5)] = r(-jd);
    m[(3, 2)] = r(jd);
    m[(3, 3)] += r(j);
    m[(4, 1)] = r(2.0 * jd);
    m[(4, 4)] += r(2.0 * j);
    m[(4, 7)] = r(2.0 * jd);
    m[(5, 2)] = r(-2.0 * jd);
    m[(6, 3)] = r(4.0 * jd);
    m[(6, 6)] += r(2.0 * j);
    m[(7, 5)] = r(jd);
    m[(7, 7)] += r(j);
    m
}

/// A full contraction of the four open index pairs of `U2`.
///
/// `mats[t]` carries row index `T` slot `t` and column index `S` slot
/// `pairing[t]`; the value is
/// `sum prod_t mats[t][T_t, S_pairing[t]] U2_{S;T}` over all indices.
#[derive(Debug, Clone)]
pub struct FourPointClosure {
    pub pairing: [usize; 4],
    pub mats: [CMat; 4],
}

impl FourPointClosure {
    fn validate(&self, d: usize) -> Result<()> {
        let mut seen = [false; 4];
        for &s in &self.pairing {
            if s >= 4 || seen[s] {
                return Err(Error::Precondition(format!("pairing {:?} is not a permutation", self.pairing)));
            }
            seen[s] = true;
        }
        for m in &self.mats {
            require_square(m, d)?;
        }
        Ok(())
    }

    /// Attaches the noiseless phases: `e^{-iEt}` on the columns tied to
    /// `S` slots 0, 1 and `e^{+iEt}` on the rows of `T` slots 2, 3.
    fn phased(&self, energies: &[f64], t: f64) -> [CMat; 4] {
        let ph: Vec<C64> = energies.iter().map(|&e| C64::from_polar(1.0, -e * t)).collect();
        std::array::from_fn(|slot| {
            let mut m = self.mats[slot].clone();
            if self.pairing[slot] < 2 {
                for (c, mut col) in m.column_iter_mut().enumerate() {
                    col *= ph[c];
                }
            }
            if slot >= 2 {
                for (r, mut row) in m.row_iter_mut().enumerate() {
                    row *= ph[r].conj();
                }
            }
            m
        })
    }
}

fn trace_of_product(x: &CMat, y: &CMat) -> C64 {
    x.transpose().component_mul(y).iter().sum()
}

fn diagram_value(sigma: &[usize; 4], pairing: &[usize; 4], mats: &[CMat; 4]) -> C64 {
    let mut seen = [false; 4];
    let mut value = C64::new(1.0, 0.0);
    for start in 0..4 {
        if seen[start] {
            continue;
        }
        let mut cycle = Vec::with_capacity(4);
        let mut t = start;
        while !seen[t] {
            seen[t] = true;
            cycle.push(t);
            t = sigma[pairing[t]];
        }
        value *= match cycle.len() {
            1 => trace(&mats[cycle[0]]),
            n => {
                let mut p = mats[cycle[0]].clone();
                for &c in &cycle[1..n - 1] {
                    p *= &mats[c];
                }
                trace_of_product(&p, &mats[cycle[n - 1]])
            }
        };
    }
    value
}

/// `V_a`: the closure contracted with every diagram of group `a`,
/// including the noiseless spectral phases at time `t`.
pub fn contraction_vector(spec: &Spectrum, closure: &FourPointClosure, t: f64) -> Result<[C64; 8]> {
    closure.validate(spec.dim())?;
    let mats = closure.phased(spec.energies(), t);
    let mut v = [C64::new(0.0, 0.0); 8];
    for (sigma, group) in DIAGRAMS.iter() {
        v[*group] += diagram_value(sigma, &closure.pairing, &mats);
    }
    Ok(v)
}

/// Observables with a known closure.
#[derive(Debug, Clone)]
pub enum TwoReplicaObservable {
    /// `(Tr U Tr U^dag)^2`.
    SffSquared,
    /// `Tr(A B_t A B_t)` with `B_t = U^dag B U` (not divided by `D`).
    Otoc { a: CMat, b: CMat },
    /// `|Tr(O^dag O_t)|^2` with `O_t = U^dag O U`.
    TwoPointVariance { o: CMat },
}

impl TwoReplicaObservable {
    pub fn closure(&self, d: usize) -> FourPointClosure {
        match self {
            Self::SffSquared => {
                let id = CMat::identity(d, d);
                FourPointClosure { pairing: [0, 1, 2, 3], mats: [id.clone(), id.clone(), id.clone(), id] }
            }
            Self::Otoc { a, b } => {
                FourPointClosure { pairing: [3, 2, 0, 1], mats: [a.clone(), a.clone(), b.clone(), b.clone()] }
            }
            Self::TwoPointVariance { o } => {
                let od = o.adjoint();
                FourPointClosure { pairing: [2, 3, 0, 1], mats: [od.clone(), o.clone(), o.clone(), od] }
            }
        }
    }
}

/// `U2` bound to a spectrum and a noise strength.
#[derive(Debug, Clone)]
pub struct ChannelTwo {
    spectrum: Spectrum,
    j: f64,
}

impl ChannelTwo {
    pub fn new(spectrum: &Spectrum, j: f64) -> Result<Self> {
        check_dim(spectrum.dim())?;
        if !(j >= 0.0 && j.is_finite()) {
            return Err(Error::InvalidNoise(format!("J must be finite and nonnegative, got {j}")));
        }
        Ok(Self { spectrum: spectrum.clone(), j })
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    pub fn j(&self) -> f64 {
        self.j
    }

    pub fn f(&self, t: f64) -> Result<[f64; 8]> {
        f_coefficients(self.dim(), self.j, t)
    }

    /// `sum_a f_a(t) V_a(t)`.
    pub fn expectation(&self, closure: &FourPointClosure, t: f64) -> Result<C64> {
        let f = self.f(t)?;
        let v = contraction_vector(&self.spectrum, closure, t)?;
        Ok(f.iter().zip(v.iter()).map(|(fa, va)| va * *fa).sum())
    }

    pub fn observable(&self, obs: &TwoReplicaObservable, t: f64) -> Result<C64> {
        self.expectation(&obs.closure(self.dim()), t)
    }
}

/// `E[(Tr U Tr U^dag)^2]`.
pub fn sff_squared(spec: &Spectrum, j: f64, t: f64) -> Result<f64> {
    Ok(ChannelTwo::new(spec, j)?.observable(&TwoReplicaObservable::SffSquared, t)?.re)
}

/// Second moment and variance of `Tr U Tr U^dag`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SffMoments {
    /// `E[(Tr U Tr U^dag)^2]`.
    pub second_moment: f64,
    /// `E[Tr U Tr U^dag] = D^2 K_J(t)`.
    pub mean: f64,
    /// `second_moment - mean^2`.
    pub variance: f64,
}

pub fn sff_variance(spec: &Spectrum, j: f64, t: f64) -> Result<SffMoments> {
    let second_moment = sff_squared(spec, j, t)?;
    let d = spec.dim() as f64;
    let mean = d * d * u1_gue_const(spec, j, t)?.sff();
    Ok(SffMoments { second_moment, mean, variance: second_moment - mean * mean })
}

fn check_otoc_operator(name: &str, m: &CMat, d: usize) -> Result<()> {
    require_square(m, d)?;
    let scale = 1.0f64.max(max_abs(m));
    if !is_hermitian(m, 1e-10 * scale) {
        return Err(Error::Precondition(format!("{name} must be Hermitian")));
    }
    if trace(m).norm() > 1e-10 * scale {
        return Err(Error::Precondition(format!("{name} must be traceless, |Tr {name}| = {}", trace(m).norm())));
    }
    Ok(())
}

/// `OTOC_J(t) = (1/D) E Tr(A B_t A B_t)` for Hermitian traceless `A`, `B`,
/// from the full eight-group contraction.
pub fn otoc(spec: &Spectrum, j: f64, t: f64, a: &CMat, b: &CMat) -> Result<C64> {
    let d = spec.dim();
    check_otoc_operator("A", a, d)?;
    check_otoc_operator("B", b, d)?;
    let ch = ChannelTwo::new(spec, j)?;
    Ok(ch.observable(&TwoReplicaObservable::Otoc { a: a.clone(), b: b.clone() }, t)? / d as f64)
}

/// `(1/D) Tr(A B0_t A B0_t)` with `B0_t = U0^dag B U0`.
pub fn otoc_noiseless(spec: &Spectrum, t: f64, a: &CMat, b: &CMat) -> Result<C64> {
    let d = spec.dim();
    require_square(a, d)?;
    require_square(b, d)?;
    let bt = crate::linalg::heisenberg_diag(b, spec.energies(), t);
    let ab = a * bt;
    Ok(trace_of_product(&ab, &ab) / d as f64)
}
