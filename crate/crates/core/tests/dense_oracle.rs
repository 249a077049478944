//! Channels checked against the exponential of a dense multi-replica
//! generator built directly from the noise covariance.

use nalgebra::DMatrix;
use noisy_chaos::channel_one::{u1_gue_const, u1_gue_general, u1_goe_const, u1_goe_general};
use noisy_chaos::channel_two::{ChannelTwo, FourPointClosure, TwoReplicaObservable};
use noisy_chaos::noise::{Ensemble, NoiseModel, NoiseProfile};
use noisy_chaos::spectra::{sample_gue_spectrum, Spectrum};
use noisy_chaos::{CMat, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E[eta_ab eta_cd]` per unit time.
fn covariance(model: &NoiseModel, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let lam = model.lambda()[(a, b)];
    let dd = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
    match model.ensemble() {
        Ensemble::Gue => lam * dd(a, d) * dd(b, c),
        Ensemble::Goe => 0.5 * lam * (dd(a, d) * dd(b, c) + dd(a, c) * dd(b, d)),
    }
}

/// Generator of `E[U (x) U* (x) U (x) U* ...]` on the output indices, one
/// factor per sign (`+1` for `U`, `-1` for `U*`).
fn dense_generator(spec: &Spectrum, model: &NoiseModel, signs: &[i32]) -> CMat {
    let d = spec.dim();
    let k = signs.len();
    let n = d.pow(k as u32);
    let e = spec.energies();
    let digits = |mut x: usize| {
        let mut v = vec![0; k];
        for p in (0..k).rev() {
            v[p] = x % d;
            x /= d;
        }
        v
    };
    let index = |v: &[usize]| v.iter().fold(0, |acc, &x| acc * d + x);
    let mut l = CMat::zeros(n, n);
    for row in 0..n {
        let x = digits(row);
        for a in 0..k {
            let s = signs[a] as f64;
            let self_noise: f64 = (0..d).map(|m| covariance(model, x[a], m, m, x[a])).sum();
            l[(row, row)] += C64::new(-0.5 * self_noise, -s * e[x[a]]);
        }
        for a in 0..k {
            for b in a + 1..k {
                let pref = C64::new(0.0, -signs[a] as f64) * C64::new(0.0, -signs[b] as f64);
                for m in 0..d {
                    for q in 0..d {
                        // eta* entries are eta with the indices swapped
                        let (p0, p1) = if signs[a] > 0 { (x[a], m) } else { (m, x[a]) };
                        let (p2, p3) = if signs[b] > 0 { (x[b], q) } else { (q, x[b]) };
                        let c = covariance(model, p0, p1, p2, p3);
                        if c != 0.0 {
                            let mut y = x.clone();
                            y[a] = m;
                            y[b] = q;
                            l[(row, index(&y))] += pref * c;
                        }
                    }
                }
            }
        }
    }
    l
}

fn dense_channel(spec: &Spectrum, model: &NoiseModel, signs: &[i32], t: f64) -> CMat {
    (dense_generator(spec, model, signs) * C64::new(t, 0.0)).exp()
}

fn random_lambda(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let v = rng.random_range(0.0..0.6);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

fn max_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn single_replica_gue_constant() {
    let spec = sample_gue_spectrum(4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let model = NoiseModel::constant(Ensemble::Gue, 0.9, &spec).unwrap();
    for t in [0.2, 1.0, 3.5] {
        let want = dense_channel(&spec, &model, &[1, -1], t);
        let got = u1_gue_const(&spec, 0.9, t).unwrap().dense().unwrap();
        assert!(max_diff(&want, &got) < 1e-12, "t={t}");
    }
}

#[test]
fn single_replica_goe_constant() {
    let spec = sample_gue_spectrum(4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let model = NoiseModel::constant(Ensemble::Goe, 1.3, &spec).unwrap();
    for t in [0.2, 1.0, 3.5] {
        let want = dense_channel(&spec, &model, &[1, -1], t);
        let got = u1_goe_const(&spec, 1.3, t).unwrap().dense().unwrap();
        assert!(max_diff(&want, &got) < 1e-12, "t={t}");
    }
}

#[test]
fn single_replica_general_profiles() {
    let spec = sample_gue_spectrum(5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    for (ens, seed) in [(Ensemble::Gue, 4), (Ensemble::Goe, 5)] {
        let profile = NoiseProfile::Matrix { lambda: random_lambda(5, seed) };
        let model = NoiseModel::new(ens, profile, &spec).unwrap();
        for t in [0.3, 2.0] {
            let want = dense_channel(&spec, &model, &[1, -1], t);
            let got = match ens {
                Ensemble::Gue => u1_gue_general(&spec, &model, t),
                Ensemble::Goe => u1_goe_general(&spec, &model, t),
            }
            .unwrap()
            .dense()
            .unwrap();
            assert!(max_diff(&want, &got) < 1e-8, "{ens:?} t={t}: {}", max_diff(&want, &got));
        }
    }
}

#[test]
fn single_replica_gibbs_profile() {
    let spec = sample_gue_spectrum(4, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let model = NoiseModel::new(Ensemble::Goe, NoiseProfile::Gibbs { j: 2.0, beta: 0.7 }, &spec).unwrap();
    let want = dense_channel(&spec, &model, &[1, -1], 1.1);
    let got = u1_goe_general(&spec, &model, 1.1).unwrap().dense().unwrap();
    assert!(max_diff(&want, &got) < 1e-8);
}

/// `sum prod_t X_t[T_t, S_pairing(t)] U2_{S;T}` with the dense two-replica
/// channel indexed `(i j k l), (i' j' k' l')`.
fn dense_closure(u2: &CMat, d: usize, c: &FourPointClosure) -> C64 {
    let mut total = C64::new(0.0, 0.0);
    let idx = |a: usize, b: usize, e: usize, f: usize| ((a * d + b) * d + e) * d + f;
    for row in 0..d.pow(4) {
        let (i, j, k, l) = (row / (d * d * d), (row / (d * d)) % d, (row / d) % d, row % d);
        for col in 0..d.pow(4) {
            let (ip, jp, kp, lp) = (col / (d * d * d), (col / (d * d)) % d, (col / d) % d, col % d);
            let u = u2[(idx(i, j, k, l), idx(ip, jp, kp, lp))];
            if u.norm() == 0.0 {
                continue;
            }
            let s = [i, k, jp, lp];
            let tt = [ip, kp, j, l];
            let mut w = u;
            for slot in 0..4 {
                w *= c.mats[slot][(tt[slot], s[c.pairing[slot]])];
            }
            total += w;
        }
    }
    total
}

fn random_hermitian_traceless(d: usize, rng: &mut ChaCha8Rng) -> CMat {
    let m = CMat::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let tr = h.trace() / C64::new(d as f64, 0.0);
    h - CMat::identity(d, d) * tr
}

#[test]
fn two_replica_observables_match_dense_generator() {
    let d = 3;
    let j = 0.8;
    let spec = sample_gue_spectrum(d, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let model = NoiseModel::constant(Ensemble::Gue, j, &spec).unwrap();
    let ch = ChannelTwo::new(&spec, j).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_hermitian_traceless(d, &mut rng);
    let b = random_hermitian_traceless(d, &mut rng);
    let o = CMat::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let observables = [
        TwoReplicaObservable::SffSquared,
        TwoReplicaObservable::Otoc { a, b },
        TwoReplicaObservable::TwoPointVariance { o },
    ];
    for t in [0.4, 1.5, 4.0] {
        let u2 = dense_channel(&spec, &model, &[1, -1, 1, -1], t);
        for obs in &observables {
            let c = obs.closure(d);
            let want = dense_closure(&u2, d, &c);
            let got = ch.expectation(&c, t).unwrap();
            assert!((want - got).norm() < 1e-10 * want.norm().max(1.0), "t={t} {obs:?}: {want} vs {got}");
        }
    }
}

#[test]
fn two_replica_random_closures_match_dense_generator() {
    let d = 4;
    let j = 1.7;
    let spec = sample_gue_spectrum(d, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let model = NoiseModel::constant(Ensemble::Gue, j, &spec).unwrap();
    let ch = ChannelTwo::new(&spec, j).unwrap();
    let t = 0.7;
    let u2 = dense_channel(&spec, &model, &[1, -1, 1, -1], t);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for pairing in [[0, 1, 2, 3], [1, 3, 0, 2], [2, 0, 3, 1], [3, 2, 1, 0]] {
        let mats: [CMat; 4] = std::array::from_fn(|_| {
            CMat::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        });
        let c = FourPointClosure { pairing, mats };
        let want = dense_closure(&u2, d, &c);
        let got = ch.expectation(&c, t).unwrap();
        assert!((want - got).norm() < 1e-10 * want.norm().max(1.0), "{pairing:?}");
    }
}

#[test]
fn dense_generator_preserves_trace() {
    let spec = sample_gue_spectrum(3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let model = NoiseModel::constant(Ensemble::Goe, 0.5, &spec).unwrap();
    let l = dense_generator(&spec, &model, &[1, -1]);
    // sum_i of row (i, i) annihilates any input
    let mut s = DMatrix::<C64>::zeros(1, 9);
    for i in 0..3 {
        s += l.row(i * 3 + i);
    }
    assert!(s.iter().all(|z| z.norm() < 1e-12));
}
