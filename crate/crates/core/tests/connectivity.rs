use std::f64::consts::PI;

use eegrisk::datamodel::{Band, BandScheme};
use eegrisk::dsp::{bandpass, WelchParams};
use eegrisk::features::connectivity::am_pairs;
use eegrisk::features::{amplitude_modulation, coherence, synchronization_likelihood, SlParams};
use eegrisk::rng::SplitMix64;
use eegrisk::Error;
use proptest::prelude::*;

const FS: f64 = 250.0;
const N: usize = 1250;

fn noise(rng: &mut SplitMix64, n_epochs: usize) -> Vec<Vec<f64>> {
    (0..n_epochs)
        .map(|_| (0..N).map(|_| rng.normal()).collect())
        .collect()
}

fn views(x: &[Vec<f64>]) -> Vec<&[f64]> {
    x.iter().map(Vec::as_slice).collect()
}

fn tone(n_epochs: usize, f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    (0..n_epochs)
        .map(|e| (0..N).map(|i| f((e * N + i) as f64 / FS)).collect())
        .collect()
}

fn alpha_params() -> SlParams {
    SlParams::for_band(&Band::new("alpha1", 8.5, 10.5), FS, 0.05)
}

#[test]
fn self_coherence_is_one() {
    let x = noise(&mut SplitMix64::new(1), 8);
    let c = coherence(
        &views(&x),
        &views(&x),
        FS,
        WelchParams::default(),
        &BandScheme::default(),
    )
    .unwrap();
    for v in c {
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }
}

#[test]
fn independent_noise_coherence_is_low() {
    // 120 epochs -> 120 segments at the default 4 s segment length.
    let bands = BandScheme::default();
    let mut maxima = Vec::new();
    for trial in 0..100 {
        let mut rng = SplitMix64::new(1000 + trial);
        let x = noise(&mut rng, 120);
        let y = noise(&mut rng, 120);
        let c = coherence(&views(&x), &views(&y), FS, WelchParams::default(), &bands).unwrap();
        maxima.push(c.into_iter().fold(0.0, f64::max));
    }
    maxima.sort_by(f64::total_cmp);
    let p95 = maxima[94];
    assert!(p95 < 0.15, "95th percentile {p95}");
}

#[test]
fn delayed_copy_coherence_is_high() {
    let mut rng = SplitMix64::new(7);
    let long: Vec<f64> = (0..12 * N + 10).map(|_| rng.normal()).collect();
    let x: Vec<Vec<f64>> = (0..12)
        .map(|e| long[10 + e * N..10 + (e + 1) * N].to_vec())
        .collect();
    let y: Vec<Vec<f64>> = (0..12).map(|e| long[e * N..(e + 1) * N].to_vec()).collect();
    let c = coherence(
        &views(&x),
        &views(&y),
        FS,
        WelchParams::default(),
        &BandScheme::default(),
    )
    .unwrap();
    for v in c {
        assert!(v >= 0.95, "{v}");
    }
}

#[test]
fn coherence_needs_four_segments_and_variance() {
    let x = noise(&mut SplitMix64::new(2), 3);
    let bands = BandScheme::default();
    assert!(matches!(
        coherence(&views(&x), &views(&x), FS, WelchParams::default(), &bands),
        Err(Error::Parameter(_))
    ));
    let x = noise(&mut SplitMix64::new(2), 4);
    let z = vec![vec![0.0; N]; 4];
    assert!(matches!(
        coherence(&views(&x), &views(&z), FS, WelchParams::default(), &bands),
        Err(Error::UndefinedRatio(_))
    ));
}

#[test]
fn am_tone_peaks_in_gamma_delta_cell() {
    let bands = BandScheme::default();
    let x = tone(12, |t| {
        (1.0 + (2.0 * PI * 4.0 * t).cos()) * (2.0 * PI * 35.0 * t).sin()
    });
    let am = amplitude_modulation(&views(&x), FS, WelchParams::default(), &bands).unwrap();
    let gamma = bands.index_of("gamma").unwrap();
    let delta = bands.index_of("delta").unwrap();
    let best = am
        .cells
        .iter()
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .unwrap();
    assert_eq!((best.carrier, best.modulator), (gamma, delta), "{best:?}");
    // Envelope 1 + cos: DC power 1, 4 Hz power 1/2.
    assert!((best.value - 1.0 / 3.0).abs() < 0.05, "{}", best.value);
}

#[test]
fn unmodulated_tone_has_flat_envelope() {
    let bands = BandScheme::default();
    let x = tone(12, |t| (2.0 * PI * 25.0 * t).sin());
    let am = amplitude_modulation(&views(&x), FS, WelchParams::default(), &bands).unwrap();
    let beta3 = bands.index_of("beta3").unwrap();
    for cell in am.cells.iter().filter(|c| c.carrier == beta3) {
        assert!(cell.value <= 0.05, "{cell:?}");
    }
    assert!(am.residual[beta3] > 0.95);
}

#[test]
fn am_domain_and_partition() {
    let bands = BandScheme::default();
    let x = noise(&mut SplitMix64::new(9), 4);
    let am = amplitude_modulation(&views(&x), FS, WelchParams::default(), &bands).unwrap();
    assert_eq!(am.cells.len(), am_pairs(&bands).len());
    for cell in &am.cells {
        assert!(bands.bands()[cell.modulator].hi <= bands.bands()[cell.carrier].hi);
        assert!((0.0..=1.0).contains(&cell.value));
    }
    let theta = bands.index_of("theta").unwrap();
    let alpha1 = bands.index_of("alpha1").unwrap();
    assert!(am.get(theta, alpha1).is_none());
    for c in 0..bands.len() {
        let sum: f64 = am
            .cells
            .iter()
            .filter(|x| x.carrier == c)
            .map(|x| x.value)
            .sum();
        assert!((sum + am.residual[c] - 1.0).abs() < 1e-9);
    }
    assert!(matches!(
        amplitude_modulation(&views(&x[..1]), FS, WelchParams::default(), &bands),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn sl_of_identical_series() {
    let x = noise(&mut SplitMix64::new(4), 2);
    let filtered: Vec<Vec<f64>> = x
        .iter()
        .map(|e| bandpass(e, FS, 8.5, 10.5).unwrap())
        .collect();
    let sl =
        synchronization_likelihood(&views(&filtered), &views(&filtered), alpha_params()).unwrap();
    assert!(sl >= 0.99, "{sl}");
}

#[test]
fn sl_of_independent_noise_near_p_ref() {
    let p = alpha_params();
    let mut mean = 0.0;
    for trial in 0..100 {
        let mut rng = SplitMix64::new(5000 + trial);
        let x = noise(&mut rng, 2);
        let y = noise(&mut rng, 2);
        let sl = synchronization_likelihood(&views(&x), &views(&y), p).unwrap();
        assert!((sl - p.p_ref).abs() <= 0.5 * p.p_ref, "trial {trial}: {sl}");
        mean += sl / 100.0;
    }
    assert!((mean - p.p_ref).abs() < 0.005, "{mean}");
}

#[test]
fn sl_grows_with_coupled_fraction() {
    let p = alpha_params();
    let mut rng = SplitMix64::new(77);
    let x = noise(&mut rng, 10);
    let other = noise(&mut rng, 10);
    let mut order: Vec<usize> = (0..10).collect();
    rng.shuffle(&mut order);
    let mut last = 0.0;
    for coupled in [0, 2, 5, 8, 10] {
        let y: Vec<Vec<f64>> = (0..10)
            .map(|e| {
                if order[..coupled].contains(&e) {
                    x[e].clone()
                } else {
                    other[e].clone()
                }
            })
            .collect();
        let sl = synchronization_likelihood(&views(&x), &views(&y), p).unwrap();
        if coupled == 5 {
            assert!(sl > p.p_ref && sl < 1.0, "{sl}");
        }
        assert!(sl > last, "coupled {coupled}: {sl} <= {last}");
        last = sl;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pairwise_symmetry_and_scaling(seed in any::<u64>(), scale in -50.0f64..50.0, exp in -4i32..5) {
        prop_assume!(scale.abs() > 1e-3);
        let mut rng = SplitMix64::new(seed);
        let x = noise(&mut rng, 4);
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|e| e.iter().map(|v| 0.6 * v + 0.8 * rng.normal()).collect())
            .collect();
        let bands = BandScheme::default();
        let w = WelchParams::default();

        let cxy = coherence(&views(&x), &views(&y), FS, w, &bands).unwrap();
        let cyx = coherence(&views(&y), &views(&x), FS, w, &bands).unwrap();
        prop_assert_eq!(&cxy, &cyx);
        let xs: Vec<Vec<f64>> = x.iter().map(|e| e.iter().map(|v| scale * v).collect()).collect();
        let cs = coherence(&views(&xs), &views(&y), FS, w, &bands).unwrap();
        for (a, b) in cxy.iter().zip(&cs) {
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(a));
        }

        let p = alpha_params();
        let sxy = synchronization_likelihood(&views(&x[..2]), &views(&y[..2]), p).unwrap();
        let syx = synchronization_likelihood(&views(&y[..2]), &views(&x[..2]), p).unwrap();
        prop_assert_eq!(sxy, syx);
        // Power-of-two scaling is exact in floating point, so neighbour
        // ranks cannot move.
        let c = 2f64.powi(exp);
        let x2: Vec<Vec<f64>> = x[..2].iter().map(|e| e.iter().map(|v| c * v).collect()).collect();
        let s2 = synchronization_likelihood(&views(&x2), &views(&y[..2]), p).unwrap();
        prop_assert_eq!(sxy, s2);

        let a1 = amplitude_modulation(&views(&x), FS, w, &bands).unwrap();
        let a2 = amplitude_modulation(&views(&xs), FS, w, &bands).unwrap();
        for (u, v) in a1.cells.iter().zip(&a2.cells) {
            prop_assert!((u.value - v.value).abs() < 1e-9);
        }
    }
}
