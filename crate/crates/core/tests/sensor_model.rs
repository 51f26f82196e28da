use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use vitac_core::sensor_model::*;
use vitac_core::sim::{box_grasp_scene, simulate_contact};

fn model(a: f64, b: f64) -> TaxelResponseModel {
    TaxelResponseModel::new(a, b).unwrap()
}

proptest! {
    #[test]
    fn response_is_monotone(a in 10.0..500.0f64, b in 0.0..300.0f64, f1 in 0.0..20.0f64, f2 in 0.0..20.0f64) {
        let m = model(a, b);
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(m.force_to_reading(lo).unwrap() <= m.force_to_reading(hi).unwrap());
    }

    #[test]
    fn plateau_is_exact(a in 10.0..500.0f64, b in 0.0..300.0f64, extra in 0.0..1e3f64) {
        let m = model(a, b);
        prop_assert_eq!(m.force_to_reading(9.0 + extra).unwrap(), m.force_to_reading(9.0).unwrap());
    }

    #[test]
    fn inverse_round_trip(a in 10.0..100.0f64, b in 0.0..300.0f64, s in 0.001..0.999f64) {
        // Keep r(f_sat) below r_max so the log branch is not clamped.
        let m = model(a, b);
        let lo = m.force_to_reading(1.0 * (1.0 + 1e-6)).unwrap();
        let hi = m.force_to_reading(9.0 * (1.0 - 1e-6)).unwrap();
        let r = lo + s * (hi - lo);
        let back = m.force_to_reading(m.reading_to_force(r).unwrap()).unwrap();
        prop_assert!((back - r).abs() <= 1e-9 * r);
    }

    #[test]
    fn block_sums_preserve_total(values in prop::collection::vec(0.0..1023.0f64, 256)) {
        let frame = TactileFrame::raw(0, 0, TaxelGrid::from_row_major(&values).unwrap());
        let report = consistency_stats(&frame);
        let blocks: f64 = report.block_sums.iter().flatten().sum();
        let taxels: f64 = values.iter().sum();
        prop_assert!((blocks - taxels).abs() <= 1e-9 * taxels.max(1.0));
    }

    #[test]
    fn normalization_stays_in_unit_interval(
        values in prop::collection::vec(0.0..=1023.0f64, 256),
        gain in 0.1..5.0f64,
        offset in -200.0..200.0f64,
    ) {
        let mut calib = PadCalibration::identity(3, model(100.0, 50.0));
        calib.gain = TaxelGrid::filled(gain);
        calib.offset = TaxelGrid::filled(offset);
        let raw = TactileFrame::raw(3, 10, TaxelGrid::from_row_major(&values).unwrap());
        let n = normalize_frame(&calib, &raw).unwrap();
        prop_assert!(n.normalized);
        prop_assert!(n.readings.iter().all(|v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn noiseless_fit_recovers_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let a = rand::Rng::random_range(&mut rng, 10.0..500.0);
        let b = rand::Rng::random_range(&mut rng, 0.0..300.0);
        let m = model(a, b);
        let samples: Vec<(f64, f64)> = (0..24).map(|i| {
            let f = 1.0 + 8.0 * i as f64 / 23.0;
            (f, a * f.ln() + b)
        }).collect();
        let fit = fit_response(&samples).unwrap();
        assert!((fit.model.a - m.a).abs() <= 1e-9 * a, "a: {} vs {a}", fit.model.a);
        assert!((fit.model.b - m.b).abs() <= 1e-9 * a.max(b), "b: {} vs {b}", fit.model.b);
    }
}

/// 24 gauge readings across the log-linear range with σ = 2 count noise.
#[test]
fn noisy_fit_has_high_r_squared() {
    let noise = Normal::new(0.0, 2.0).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<(f64, f64)> = (0..24)
            .map(|i| {
                let f = (9f64.ln() * i as f64 / 23.0).exp();
                (f, 100.0 * f.ln() + 50.0 + noise.sample(&mut rng))
            })
            .collect();
        let fit = fit_response(&samples).unwrap();
        assert!(fit.r_squared > 0.99, "seed {seed}: R² = {}", fit.r_squared);
        // Slope standard error for this design is about 0.6 counts.
        assert!((fit.model.a - 100.0).abs() < 4.0);
    }
}

/// A pad pressed flat into a large face at 5 N per taxel: block-sum scatter
/// comes only from reading noise and rounding.
#[test]
fn uniform_load_consistency_within_noise_bound() {
    let sigma = 2.0;
    let depth = 5.0 / 2000.0;
    for seed in 0..10 {
        let mut scene = box_grasp_scene(1.75e-3, depth, seed);
        scene.noise = sigma;
        let snap = simulate_contact(&scene, 0.0).unwrap();
        assert!(snap.forces[0].iter().all(|f| (f - 5.0).abs() < 1e-9));
        let reading = scene.response.force_to_reading(5.0).unwrap();
        // Block sum of 4 taxels: std 2·sqrt(σ² + 1/12) around 4·r(5 N).
        let per_block_std = 2.0 * (sigma * sigma + 1.0 / 12.0f64).sqrt();
        let bound = 2.0 * per_block_std / (4.0 * reading);
        for frame in &snap.frames {
            let report = consistency_stats(frame);
            assert!(report.coefficient_of_variation() < bound, "seed {seed}: cv {}", report.coefficient_of_variation());
            assert!((report.mean - 4.0 * reading).abs() < 4.0);
        }
    }
}
