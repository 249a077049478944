//! Statistics of the spectrum and noise samplers.

use noisy_chaos::noise::{sample_noise_matrix, Ensemble, NoiseModel, NoiseProfile};
use noisy_chaos::spectra::{level_statistics, sample_goe_spectrum, sample_gue_spectrum, Spectrum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gue_and_goe_ratio_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mean_ratio = |goe: bool, rng: &mut ChaCha8Rng| {
        let mut all = Vec::new();
        for _ in 0..40 {
            let s = if goe { sample_goe_spectrum(200, rng) } else { sample_gue_spectrum(200, rng) }.unwrap();
            let e = s.energies();
            // bulk levels only
            let bulk = Spectrum::new(e[50..150].to_vec()).unwrap();
            all.extend(level_statistics(&bulk).unwrap().folded_ratios);
        }
        all.iter().sum::<f64>() / all.len() as f64
    };
    let gue = mean_ratio(false, &mut rng);
    let goe = mean_ratio(true, &mut rng);
    assert!((gue - 0.5996).abs() < 0.01, "gue {gue}");
    assert!((goe - 0.5307).abs() < 0.01, "goe {goe}");
}

#[test]
fn semicircle_second_moment() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for goe in [false, true] {
        let mut m2 = 0.0;
        let mut edge: f64 = 0.0;
        for _ in 0..20 {
            let s = if goe { sample_goe_spectrum(150, &mut rng) } else { sample_gue_spectrum(150, &mut rng) }.unwrap();
            m2 += s.energies().iter().map(|e| e * e).sum::<f64>() / 150.0;
            edge = edge.max(s.energies().iter().fold(0.0, |a, e| a.max(e.abs())));
        }
        m2 /= 20.0;
        assert!((m2 - 1.0).abs() < 0.03, "goe={goe}: {m2}");
        assert!(edge < 2.3, "goe={goe}: {edge}");
    }
}

#[test]
fn noise_second_moments() {
    let s = Spectrum::new(vec![0.0, 0.3, 1.1]).unwrap();
    let lambda = vec![vec![0.2, 0.6, 0.1], vec![0.6, 0.4, 0.3], vec![0.1, 0.3, 0.8]];
    let dt = 0.01;
    let n = 40_000;
    for ens in [Ensemble::Gue, Ensemble::Goe] {
        let model = NoiseModel::new(ens, NoiseProfile::Matrix { lambda: lambda.clone() }, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // E[eta_ij eta_ji] dt and E[eta_ij eta_ij] dt
        let mut cross = [[0.0; 3]; 3];
        let mut same = [[0.0; 3]; 3];
        for _ in 0..n {
            let eta = sample_noise_matrix(&model, dt, &mut rng).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    cross[i][j] += (eta[(i, j)] * eta[(j, i)]).re * dt / n as f64;
                    same[i][j] += (eta[(i, j)] * eta[(i, j)]).re * dt / n as f64;
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let l = lambda[i][j];
                let (want_cross, want_same) = match ens {
                    Ensemble::Gue => (l, if i == j { l } else { 0.0 }),
                    Ensemble::Goe => (if i == j { l } else { l / 2.0 }, if i == j { l } else { l / 2.0 }),
                };
                let tol = 0.05 * l.max(0.1);
                assert!((cross[i][j] - want_cross).abs() < tol, "{ens:?} cross {i}{j}: {}", cross[i][j]);
                assert!((same[i][j] - want_same).abs() < tol, "{ens:?} same {i}{j}: {}", same[i][j]);
            }
        }
    }
}
