use cortexalign::encoder::ScoreTensor;
use cortexalign::io::{Atlas, Network, Roi};
use cortexalign::maps::{
    average_ranks, map_convergence, mask_layers, network_profile, overlap_categories,
    preferred_layer, spearman, OverlapCategory,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn overlap_counts_match_triple_loop() {
    let mut x = 12345u64;
    let mut bit = move || {
        x = x
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        x >> 63 == 1
    };
    let masks: Vec<Vec<bool>> = (0..3).map(|_| (0..500).map(|_| bit()).collect()).collect();
    let o = overlap_categories([&masks[0], &masks[1], &masks[2]]).unwrap();
    let mut counts = [[[0usize; 2]; 2]; 2];
    for i in 0..500 {
        counts[masks[0][i] as usize][masks[1][i] as usize][masks[2][i] as usize] += 1;
    }
    use OverlapCategory::*;
    assert_eq!(o.count(None), counts[0][0][0]);
    assert_eq!(o.count(Only1), counts[1][0][0]);
    assert_eq!(o.count(Only2), counts[0][1][0]);
    assert_eq!(o.count(Only3), counts[0][0][1]);
    assert_eq!(o.count(Pair12), counts[1][1][0]);
    assert_eq!(o.count(Pair13), counts[1][0][1]);
    assert_eq!(o.count(Pair23), counts[0][1][1]);
    assert_eq!(o.count(SharedAll), counts[1][1][1]);
    assert_eq!(o.counts().iter().sum::<usize>(), 500);
    let min_sig = masks
        .iter()
        .map(|m| m.iter().filter(|&&b| b).count())
        .min()
        .unwrap();
    assert!(o.count(SharedAll) <= min_sig);
}

#[test]
fn boosted_layer_is_recovered_exactly() {
    let layers = [1, 2, 3, 4, 5];
    let boosted: Vec<usize> = (0..40).filter(|r| r % 3 == 0).collect();
    let means = DMatrix::from_fn(5, 40, |l, r| {
        let base = 0.1 + 0.01 * ((l * 7 + r * 3) % 5) as f64;
        if l == 3 && boosted.contains(&r) {
            base + 1.0
        } else {
            base
        }
    });
    let p = preferred_layer(&means, &layers).unwrap();
    for r in 0..40 {
        let max = means.column(r).max();
        let first = (0..5).find(|&l| means[(l, r)] == max).unwrap();
        assert_eq!(p.best[r], Some(layers[first]), "roi {r}");
        assert_eq!(p.score[r], max);
        if boosted.contains(&r) {
            assert_eq!(p.best[r], Some(4));
        }
    }
}

#[test]
fn significant_only_variant() {
    let means = DMatrix::from_row_slice(2, 3, &[0.5, 0.1, 0.2, 0.3, 0.4, 0.1]);
    let masks = vec![vec![false, true, false], vec![true, true, false]];
    let p = preferred_layer(&mask_layers(&means, &masks).unwrap(), &[1, 2]).unwrap();
    assert_eq!(p.best, vec![Some(2), Some(2), None]);
}

proptest! {
    #[test]
    fn preferred_layer_shift_invariant(
        vals in prop::collection::vec(-1.0f64..1.0, 24),
        roi in 0usize..6,
        c in -10.0f64..10.0,
    ) {
        let m = DMatrix::from_vec(4, 6, vals);
        let mut shifted = m.clone();
        for l in 0..4 {
            shifted[(l, roi)] += c;
        }
        let a = preferred_layer(&m, &[1, 2, 3, 4]).unwrap();
        let b = preferred_layer(&shifted, &[1, 2, 3, 4]).unwrap();
        prop_assert_eq!(a.best, b.best);
    }

    #[test]
    fn spearman_matches_rank_pearson(
        a in prop::collection::vec(prop_oneof![-3.0f64..3.0, Just(0.0), Just(1.0)], 3..30),
        seed in any::<u64>(),
    ) {
        let b: Vec<f64> = a.iter().enumerate()
            .map(|(i, v)| ((seed ^ i as u64).wrapping_mul(0x9E3779B97F4A7C15) >> 40) as f64 * 1e-6 + v * 0.5)
            .collect();
        // brute-force ranks: 1 + #less + (#equal - 1) / 2
        let rank = |x: &[f64]| -> Vec<f64> {
            x.iter().map(|v| {
                let less = x.iter().filter(|w| *w < v).count() as f64;
                let equal = x.iter().filter(|w| *w == v).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            }).collect()
        };
        let (ra, rb) = (rank(&a), rank(&b));
        prop_assert_eq!(&average_ranks(&a), &ra);
        let n = ra.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        let rho = spearman(&a, &b).unwrap();
        if va == 0.0 || vb == 0.0 {
            prop_assert!(rho.is_nan());
        } else {
            prop_assert!((rho - cov / (va * vb).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_invariant_under_monotone_transform(
        vals in prop::collection::vec(0.01f64..1.0, 60),
        mask in prop::collection::vec(any::<bool>(), 60),
    ) {
        let maps: Vec<DMatrix<f64>> = (0..3)
            .map(|k| DMatrix::from_fn(2, 10, |l, r| {
                let i = k * 20 + l * 10 + r;
                if mask[i] { vals[i] } else { f64::NAN }
            }))
            .collect();
        let a = map_convergence([&maps[0], &maps[1], &maps[2]], &[1, 2]).unwrap();
        let t = maps[1].map(|v| v.ln() * 3.0 + 7.0);
        let b = map_convergence([&maps[0], &t, &maps[2]], &[1, 2]).unwrap();
        for l in 0..2 {
            match (a.mean_abs[l], b.mean_abs[l]) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}

#[test]
fn spearman_ties_hand_case() {
    // ranks (1.5, 1.5, 3) and (1, 2, 3)
    let r = spearman(&[1.0, 1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap();
    assert!((r - 1.5 / 3f64.sqrt()).abs() < 1e-12);
    // ranks (1.5, 1.5, 3) and (1, 3, 2)
    assert!(spearman(&[1.0, 1.0, 2.0], &[3.0, 5.0, 4.0]).unwrap().abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).unwrap().is_nan());
}

#[test]
fn identical_maps_converge_fully() {
    let m = DMatrix::from_fn(3, 12, |l, r| ((l + 1) * (r * 7 % 12)) as f64);
    let c = map_convergence([&m, &m, &m], &[1, 2, 3]).unwrap();
    for l in 0..3 {
        assert!((c.mean_abs[l].unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sparse_overlap_is_missing() {
    let nan = f64::NAN;
    let a = DMatrix::from_row_slice(1, 4, &[0.1, nan, nan, 0.3]);
    let b = DMatrix::from_row_slice(1, 4, &[nan, 0.2, 0.5, 0.1]);
    let c = DMatrix::from_row_slice(1, 4, &[0.4, 0.3, 0.1, 0.2]);
    let conv = map_convergence([&a, &b, &c], &[1]).unwrap();
    assert_eq!(conv.pairs[0][0], None);
    assert!(conv.pairs[0][1].is_some());
}

fn atlas(n: usize) -> Atlas {
    Atlas::new(
        (0..n)
            .map(|i| Roi {
                roi_id: i as u32,
                name: format!("r{i}"),
                network: [Network::Default, Network::Limbic, Network::Vis][i % 3],
                hemisphere: "L".into(),
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn network_profile_matches_flat_average() {
    let (ns, nl, nr) = (4, 3, 12);
    let values: Vec<f64> = (0..ns * nl * nr)
        .map(|i| ((i * 37) % 101) as f64 / 100.0)
        .collect();
    let t = ScoreTensor::new(
        (0..ns).map(|s| s.to_string()).collect(),
        vec![1, 2, 3],
        (0..nr as u32).collect(),
        values.clone(),
    )
    .unwrap();
    let a = atlas(nr);
    let p = network_profile("xx", &t, &a, &[1, 3]).unwrap();
    assert_eq!(
        p.networks,
        vec![Network::Vis, Network::Limbic, Network::Default]
    );
    for (i, net) in p.networks.iter().enumerate() {
        for (li, &layer) in [1usize, 3].iter().enumerate() {
            // average over (subject, roi) pairs directly: balanced, so equals group-then-network
            let mut sum = 0.0;
            let mut n = 0;
            for s in 0..ns {
                for r in 0..nr {
                    if a.network(r) == *net {
                        sum += values[(s * nl + layer - 1) * nr + r];
                        n += 1;
                    }
                }
            }
            assert!((p.values[(i, li)] - sum / n as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_scores_give_uniform_profile() {
    let t = ScoreTensor::new(
        vec!["a".into(), "b".into()],
        vec![1],
        (0..6).collect(),
        vec![0.25; 12],
    )
    .unwrap();
    let p = network_profile("xx", &t, &atlas(6), &[1]).unwrap();
    assert!(p.values.iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn roi_outside_atlas_rejected() {
    let t = ScoreTensor::new(vec!["a".into()], vec![1], vec![0, 7], vec![0.1, 0.2]).unwrap();
    assert!(network_profile("xx", &t, &atlas(3), &[1]).is_err());
}
