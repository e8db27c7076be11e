use cortexalign::design::{build_design, double_gamma, hrf_kernel, OVERSAMPLE_HZ};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Golden-section maximization of the continuous HRF on [2, 10] s.
fn continuous_peak() -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (2.0, 10.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if double_gamma(c) > double_gamma(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}

#[test]
fn sampled_peak_matches_continuous_peak() {
    let k = hrf_kernel(1.0 / OVERSAMPLE_HZ, 32.0).unwrap();
    let t = continuous_peak();
    assert!(
        (k.peak_time() - t).abs() <= 0.5 / OVERSAMPLE_HZ + 1e-12,
        "{} vs {t}",
        k.peak_time()
    );
    assert!(t > 4.0 && t < 6.0);
}

#[test]
fn undershoot_is_negative_after_peak() {
    let k = hrf_kernel(0.02, 32.0).unwrap();
    let min = k.samples.iter().cloned().fold(f64::MAX, f64::min);
    assert!(min < 0.0);
    let argmin = k.samples.iter().position(|&v| v == min).unwrap() as f64 * 0.02;
    assert!(argmin > 10.0 && argmin < 20.0);
}

/// Direct evaluation of the design at TR `k` from its definition.
fn design_oracle(f: &DMatrix<f64>, onsets: &[f64], tr: f64, k: usize) -> Vec<f64> {
    let kernel = hrf_kernel(0.02, 32.0).unwrap();
    let mut out = vec![0.0; f.ncols()];
    for (w, &o) in onsets.iter().enumerate() {
        let lag = (k as f64 * tr * 50.0).round() as i64 - (o * 50.0).round() as i64;
        if lag >= 0 && (lag as usize) < kernel.len() {
            for j in 0..f.ncols() {
                out[j] += kernel.samples[lag as usize] * f[(w, j)];
            }
        }
    }
    out
}

fn words(n: usize, seed: u64, duration: f64) -> (DMatrix<f64>, Vec<f64>) {
    let mut x = seed;
    let mut next = move || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 53) as f64
    };
    let onsets: Vec<f64> = (0..n).map(|_| next() * duration).collect();
    let f = DMatrix::from_fn(n, 3, |_, _| next() * 2.0 - 1.0);
    (f, onsets)
}

proptest! {
    #[test]
    fn matches_definition(seed in 1u64..u64::MAX, n in 1usize..30) {
        let (f, onsets) = words(n, seed, 60.0);
        let d = build_design(&f, &onsets, 1.5, 40).unwrap();
        for k in 0..40 {
            let o = design_oracle(&f, &onsets, 1.5, k);
            for j in 0..3 {
                prop_assert!((d[(k, j)] - o[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn superposition(seed in 1u64..u64::MAX, n in 2usize..30, split in 1usize..29) {
        let split = split.min(n - 1);
        let (f, onsets) = words(n, seed, 60.0);
        let all = build_design(&f, &onsets, 2.0, 30).unwrap();
        let a = build_design(&f.rows(0, split).into(), &onsets[..split], 2.0, 30).unwrap();
        let b = build_design(&f.rows(split, n - split).into(), &onsets[split..], 2.0, 30).unwrap();
        prop_assert!((all - (a + b)).abs().max() < 1e-12);
    }

    #[test]
    fn linear_in_features(seed in 1u64..u64::MAX, c in -5.0f64..5.0) {
        let (f, onsets) = words(10, seed, 40.0);
        let d = build_design(&f, &onsets, 2.0, 20).unwrap();
        let dc = build_design(&(&f * c), &onsets, 2.0, 20).unwrap();
        prop_assert!((dc - d * c).abs().max() < 1e-12);
    }
}
