use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vickd::augment::*;

const RATE: u32 = 4000;
const LEN: usize = 2000;

fn tone(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let f = rng.random_range(200.0..900.0f32);
    let a = rng.random_range(0.05..0.4f32);
    (0..LEN)
        .map(|i| a * (2.0 * std::f32::consts::PI * f * i as f32 / RATE as f32).sin())
        .collect()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn clean_and_unit_speed_are_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = tone(&mut rng);
    assert_eq!(apply_transform(&Transform::Clean, &x, RATE, 0.25, &mut rng), x);
    let same = apply_transform(&Transform::SpeedPerturb { factor: 1.0 }, &x, RATE, 0.25, &mut rng);
    assert_eq!(same, x);
}

#[test]
fn noise_hits_requested_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..60 {
        // Quiet input so that 0 dB noise still stays inside [-1, 1].
        let x: Vec<f32> = tone(&mut rng).iter().map(|v| v * 0.25).collect();
        let snr = k as f64 * 0.25;
        let y = apply_transform(&Transform::Noise { snr_db: snr }, &x, RATE, 0.25, &mut rng);
        // Keep clear of clipping, which would bias the measured noise.
        assert!(y.iter().all(|v| v.abs() < 1.0));
        let s: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let n: Vec<f64> = y.iter().zip(&x).map(|(&a, &b)| a as f64 - b as f64).collect();
        let measured = 10.0 * (power(&s) / power(&n)).log10();
        assert!((measured - snr).abs() < 0.5, "asked {snr} dB, measured {measured:.3}");
    }
}

#[test]
fn chunk_drop_zeroes_one_span_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = AugmentConfig::default();
    for _ in 0..200 {
        let x: Vec<f32> = (0..LEN).map(|_| rng.random_range(0.01..0.9f32)).collect();
        let t = cfg.draw(TransformKind::ChunkDrop, LEN, &mut rng);
        let Transform::ChunkDrop { start, len } = t else { panic!("wrong kind") };
        let frac = len as f64 / LEN as f64;
        assert!((0.0625 - 1e-3..=0.25 + 1e-3).contains(&frac));
        let y = apply_transform(&t, &x, RATE, cfg.ir_seconds, &mut rng);
        for i in 0..LEN {
            if (start..start + len).contains(&i) {
                assert_eq!(y[i], 0.0);
            } else {
                assert_eq!(y[i].to_bits(), x[i].to_bits());
            }
        }
    }
}

#[test]
fn every_kind_preserves_length_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = AugmentConfig::default();
    for _ in 0..20 {
        let x: Vec<f32> = (0..LEN).map(|_| rng.random_range(-1.0..=1.0f32)).collect();
        for kind in TransformKind::ALL {
            let y = apply(kind, &x, RATE, &cfg, &mut rng);
            assert_eq!(y.len(), LEN, "{}", kind.name());
            assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)), "{}", kind.name());
        }
    }
}

#[test]
fn drawn_parameters_respect_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = AugmentConfig::default();
    for _ in 0..500 {
        for kind in TransformKind::ALL {
            match cfg.draw(kind, LEN, &mut rng) {
                Transform::Noise { snr_db } => assert!((0.0..=15.0).contains(&snr_db)),
                Transform::Reverb { rt60 } => assert!((0.3..=0.9).contains(&rt60)),
                Transform::NoiseReverb { snr_db, rt60 } => {
                    assert!((0.0..=15.0).contains(&snr_db) && (0.3..=0.9).contains(&rt60))
                }
                Transform::SpeedPerturb { factor } => assert!([0.9, 1.0, 1.1].contains(&factor)),
                Transform::ChunkDrop { start, len } => assert!(start + len <= LEN),
                Transform::Clean => {}
            }
        }
    }
}

#[test]
fn two_enabled_kinds_are_always_a_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = AugmentConfig {
        enabled: vec![TransformKind::Clean, TransformKind::Noise],
        ..AugmentConfig::default()
    };
    let x = tone(&mut rng);
    for _ in 0..100 {
        let v = sample_view_pair(&x, RATE, &cfg, &mut rng).unwrap();
        let mut k = [v.kinds.0, v.kinds.1];
        k.sort();
        assert_eq!(k, [TransformKind::Clean, TransformKind::Noise]);
    }
}

#[test]
fn single_enabled_kind_is_a_configuration_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = AugmentConfig {
        enabled: vec![TransformKind::Noise, TransformKind::Noise],
        ..AugmentConfig::default()
    };
    assert!(matches!(sample_kinds(&cfg, &mut rng), Err(vickd::Error::Config(_))));
}

#[test]
fn unordered_pairs_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = AugmentConfig::default();
    let draws = 10_000;
    let mut counts: BTreeMap<(TransformKind, TransformKind), usize> = BTreeMap::new();
    for _ in 0..draws {
        let (a, b) = sample_kinds(&cfg, &mut rng).unwrap();
        assert_ne!(a, b);
        *counts.entry((a.min(b), a.max(b))).or_default() += 1;
    }
    // 15 unordered pairs, each with p = 1/15.
    assert_eq!(counts.len(), 15);
    let p = 1.0 / 15.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (pair, &c) in &counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{pair:?}: {c} vs {mean:.0} ± {:.0}", 3.0 * sigma);
    }
}

#[test]
fn view_pairs_are_deterministic_per_seed() {
    let x = tone(&mut ChaCha8Rng::seed_from_u64(9));
    let cfg = AugmentConfig::default();
    let draw = |s| sample_view_pair(&x, RATE, &cfg, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
    assert_eq!(draw(42), draw(42));
    assert_ne!(draw(42), draw(43));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reverb_keeps_rms(seed in 0u64..10_000, rt60 in 0.3f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tone(&mut rng);
        let y = apply_transform(&Transform::Reverb { rt60 }, &x, RATE, 0.25, &mut rng);
        let rms = |v: &[f32]| (v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        // Inputs peak below 0.4, so renormalised output stays unclipped.
        prop_assume!(y.iter().all(|v| v.abs() < 1.0));
        prop_assert!((rms(&y) - rms(&x)).abs() < 1e-4 * rms(&x).max(1e-3));
    }

    #[test]
    fn speed_perturbation_keeps_length(seed in 0u64..10_000, len in 50usize..3000, k in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..=1.0f32)).collect();
        let factor = [0.9, 1.0, 1.1][k];
        let y = apply_transform(&Transform::SpeedPerturb { factor }, &x, RATE, 0.25, &mut rng);
        prop_assert_eq!(y.len(), len);
    }
}
