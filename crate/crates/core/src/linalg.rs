//! Small dense helpers shared by the channels and the Monte Carlo oracle.

use crate::{CMat, Error, Result, C64};

/// `sinh(z) / z`, continuous through `z = 0`.
pub fn sinhc(z: C64) -> C64 {
    if z.norm() < 1e-3 {
        let z2 = z * z;
        // 1 + z^2/6 + z^4/120 + z^6/5040 + z^8/362880
        C64::new(1.0, 0.0) + z2 / 6.0 * (C64::new(1.0, 0.0) + z2 / 20.0 * (C64::new(1.0, 0.0) + z2 / 42.0 * (C64::new(1.0, 0.0) + z2 / 72.0)))
    } else {
        z.sinh() / z
    }
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

/// Largest entrywise modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) <= tol
}

pub fn require_square(m: &CMat, dim: usize) -> Result<()> {
    if m.nrows() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: m.nrows() });
    }
    if m.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: m.ncols() });
    }
    Ok(())
}

/// Conjugates `m` by the noiseless evolution: `U0^dag m U0` with
/// `U0 = diag(exp(-i E t))`.
pub fn heisenberg_diag(m: &CMat, energies: &[f64], t: f64) -> CMat {
    let ph: Vec<C64> = energies.iter().map(|&e| C64::from_polar(1.0, -e * t)).collect();
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| ph[i].conj() * m[(i, j)] * ph[j])
}

/// Row-major `D x D` complex matrices stored as separate real and
/// imaginary planes, with a scaling-and-squaring Taylor exponential. Used on
/// the Monte Carlo hot path, where the split layout lets the inner loops
/// vectorize.
pub mod flat {
    use crate::C64;

    #[derive(Debug, Clone, PartialEq)]
    pub struct SplitMat {
        n: usize,
        pub re: Vec<f64>,
        pub im: Vec<f64>,
    }

    impl SplitMat {
        pub fn zeros(n: usize) -> Self {
            Self { n, re: vec![0.0; n * n], im: vec![0.0; n * n] }
        }

        pub fn identity(n: usize) -> Self {
            let mut m = Self::zeros(n);
            m.set_identity();
            m
        }

        pub fn set_identity(&mut self) {
            self.re.iter_mut().for_each(|x| *x = 0.0);
            self.im.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..self.n {
                self.re[i * self.n + i] = 1.0;
            }
        }

        pub fn dim(&self) -> usize {
            self.n
        }

        pub fn from_row_major(n: usize, z: &[C64]) -> Self {
            Self { n, re: z.iter().map(|c| c.re).collect(), im: z.iter().map(|c| c.im).collect() }
        }

        pub fn to_row_major(&self) -> Vec<C64> {
            self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)).collect()
        }

        /// Upper bound on the induced 1-norm: max column sum of
        /// `|re| + |im|` (at most a factor sqrt(2) above the norm).
        pub fn norm1_bound(&self) -> f64 {
            let n = self.n;
            let mut col = vec![0.0f64; n];
            for (rr, ri) in self.re.chunks_exact(n).zip(self.im.chunks_exact(n)) {
                for ((c, r), i) in col.iter_mut().zip(rr).zip(ri) {
                    *c += r.abs() + i.abs();
                }
            }
            col.into_iter().fold(0.0, f64::max)
        }

        pub fn scale(&mut self, s: f64) {
            self.re.iter_mut().for_each(|x| *x *= s);
            self.im.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// `c = a * b`.
    pub fn matmul(a: &SplitMat, b: &SplitMat, c: &mut SplitMat) {
        macro_rules! fixed {
            ($($n:literal)*) => {
                match a.n {
                    $($n => matmul_fixed::<$n>(a, b, c),)*
                    _ => matmul_any(a, b, c),
                }
            };
        }
        fixed!(2 3 4 5 6 7 8 9 10 11 12 13 14 15 16)
    }

    fn matmul_fixed<const N: usize>(a: &SplitMat, b: &SplitMat, c: &mut SplitMat) {
        let row = |v: &[f64], i: usize| -> [f64; N] { v[i * N..(i + 1) * N].try_into().unwrap() };
        for i in 0..N {
            let mut zr = [0.0f64; N];
            let mut zi = [0.0f64; N];
            for k in 0..N {
                let (xr, xi) = (a.re[i * N + k], a.im[i * N + k]);
                let (yr, yi) = (row(&b.re, k), row(&b.im, k));
                for j in 0..N {
                    zr[j] += xr * yr[j] - xi * yi[j];
                    zi[j] += xr * yi[j] + xi * yr[j];
                }
            }
            c.re[i * N..(i + 1) * N].copy_from_slice(&zr);
            c.im[i * N..(i + 1) * N].copy_from_slice(&zi);
        }
    }

    fn matmul_any(a: &SplitMat, b: &SplitMat, c: &mut SplitMat) {
        let n = a.n;
        let rows = c.re.chunks_exact_mut(n).zip(c.im.chunks_exact_mut(n));
        for ((cr, ci), (ar, ai)) in rows.zip(a.re.chunks_exact(n).zip(a.im.chunks_exact(n))) {
            cr.fill(0.0);
            ci.fill(0.0);
            for ((&xr, &xi), (br, bi)) in ar.iter().zip(ai).zip(b.re.chunks_exact(n).zip(b.im.chunks_exact(n))) {
                for ((zr, zi), (&yr, &yi)) in cr.iter_mut().zip(ci.iter_mut()).zip(br.iter().zip(bi)) {
                    *zr += xr * yr - xi * yi;
                    *zi += xr * yi + xi * yr;
                }
            }
        }
    }

    /// `acc = acc * x4 + sum_j powers[j] c[j]`.
    fn horner_step(acc: &mut SplitMat, x4: &SplitMat, powers: &[SplitMat], c: &[f64], tmp: &mut SplitMat) {
        matmul(acc, x4, tmp);
        acc.re.copy_from_slice(&tmp.re);
        acc.im.copy_from_slice(&tmp.im);
        for (p, &cj) in powers.iter().zip(c) {
            axpy(acc, p, cj);
        }
    }

    /// `y += s x`.
    fn axpy(y: &mut SplitMat, x: &SplitMat, s: f64) {
        for (a, b) in y.re.iter_mut().zip(&x.re) {
            *a += s * b;
        }
        for (a, b) in y.im.iter_mut().zip(&x.im) {
            *a += s * b;
        }
    }

    /// Workspace for repeated exponentials of `n x n` matrices.
    #[derive(Debug, Clone)]
    pub struct ExpWorkspace {
        powers: Vec<SplitMat>,
        acc: SplitMat,
        tmp: SplitMat,
        inv_fact: [f64; DEGREE + 1],
    }

    /// Degree of the Taylor polynomial; with the argument scaled to 1-norm
    /// at most `THETA` the truncation error is below 1e-17.
    const DEGREE: usize = 12;
    const BLOCK: usize = 4;
    const THETA: f64 = 0.25;

    impl ExpWorkspace {
        pub fn new(n: usize) -> Self {
            let mut inv_fact = [0.0f64; DEGREE + 1];
            inv_fact[0] = 1.0;
            for k in 1..=DEGREE {
                inv_fact[k] = inv_fact[k - 1] / k as f64;
            }
            Self { powers: vec![SplitMat::zeros(n); BLOCK + 1], acc: SplitMat::zeros(n), tmp: SplitMat::zeros(n), inv_fact }
        }

        /// Writes `exp(x)` into `out`. `x` is consumed as scratch.
        pub fn expm(&mut self, x: &mut SplitMat, out: &mut SplitMat) {
            let nrm = x.norm1_bound();
            let mut squarings = 0u32;
            if nrm > THETA {
                squarings = (nrm / THETA).log2().ceil() as u32;
                x.scale(0.5f64.powi(squarings as i32));
            }

            // Paterson-Stockmeyer: p(X) = sum_k X^(4k) q_k(X) with cubic q_k,
            // evaluated by Horner in X^4.
            self.powers[0].set_identity();
            self.powers[1].re.copy_from_slice(&x.re);
            self.powers[1].im.copy_from_slice(&x.im);
            for p in 2..=BLOCK {
                let (lo, hi) = self.powers.split_at_mut(p);
                matmul(&lo[p - 1], &lo[1], &mut hi[0]);
            }
            let f = &self.inv_fact;
            // top block: X^12/12! + sum_j X^(8+j)/(8+j)!, already multiplied by X^4
            let (low, top) = self.powers.split_at(BLOCK);
            let x4 = &top[0];
            self.acc.re.fill(0.0);
            self.acc.im.fill(0.0);
            axpy(&mut self.acc, x4, f[DEGREE]);
            for (j, p) in low.iter().enumerate() {
                axpy(&mut self.acc, p, f[2 * BLOCK + j]);
            }
            for b in (0..2).rev() {
                horner_step(&mut self.acc, x4, low, &f[b * BLOCK..(b + 1) * BLOCK], &mut self.tmp);
            }

            for _ in 0..squarings {
                matmul(&self.acc, &self.acc, &mut self.tmp);
                std::mem::swap(&mut self.acc, &mut self.tmp);
            }
            out.re.copy_from_slice(&self.acc.re);
            out.im.copy_from_slice(&self.acc.im);
        }
    }
}
