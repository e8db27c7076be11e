use cortexalign::encoder::pearson;
use cortexalign::surprisal::{
    aggregate_word_surprisal, layer_mean_surprisal, run_profile, surprisal_convergence,
    SurprisalTable, TokenRecord, TokenTable,
};
use cortexalign::ErrorClass;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn record(token: usize, word: usize, run: u32) -> TokenRecord {
    TokenRecord {
        token,
        word,
        sentence: 0,
        run,
        position: token as u32,
    }
}

/// Tokens per word from a list of word lengths; runs split words evenly.
fn table(lengths: &[usize], layers: usize, runs: u32, seed: u64) -> TokenTable {
    let mut tokens = Vec::new();
    for (w, &len) in lengths.iter().enumerate() {
        let run = 1 + (w as u32 * runs) / lengths.len() as u32;
        for _ in 0..len {
            tokens.push(record(tokens.len(), w, run));
        }
    }
    let mut x = seed | 1;
    let s = DMatrix::from_fn(tokens.len(), layers, |_, _| {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 50) as f64
    });
    TokenTable::new(s, tokens).unwrap()
}

proptest! {
    #[test]
    fn word_sums_match_double_loop(
        lengths in prop::collection::vec(1usize..4, 1..40),
        seed in any::<u64>(),
    ) {
        let t = table(&lengths, 3, 2, seed);
        let w = aggregate_word_surprisal(&t).unwrap();
        for word in 0..lengths.len() {
            for l in 0..3 {
                let mut sum = 0.0;
                for (i, rec) in t.tokens.iter().enumerate() {
                    if rec.word == word {
                        sum += t.surprisal[(i, l)];
                    }
                }
                prop_assert_eq!(w.values[(word, l)], sum);
            }
        }
        let means = layer_mean_surprisal(&w).unwrap();
        for (l, mean) in means.iter().enumerate() {
            let direct = w.values.column(l).sum() / lengths.len() as f64;
            prop_assert!((mean - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn splitting_a_token_preserves_word_sum(
        lengths in prop::collection::vec(1usize..4, 2..20),
        seed in any::<u64>(),
        frac in 0.0f64..1.0,
    ) {
        // -ln p(ab) = -ln p(a) - ln p(b|a): split row 0 into two rows summing to it
        let t = table(&lengths, 2, 1, seed);
        let n = t.tokens.len();
        let mut s = DMatrix::zeros(n + 1, 2);
        for l in 0..2 {
            s[(0, l)] = t.surprisal[(0, l)] * frac;
            s[(1, l)] = t.surprisal[(0, l)] * (1.0 - frac);
            for i in 1..n {
                s[(i + 1, l)] = t.surprisal[(i, l)];
            }
        }
        let mut tokens = vec![record(0, 0, t.tokens[0].run)];
        tokens.extend(t.tokens.iter().map(|r| TokenRecord { token: r.token + 1, ..*r }));
        let split = TokenTable::new(s, tokens).unwrap();
        let a = aggregate_word_surprisal(&t).unwrap();
        let b = aggregate_word_surprisal(&split).unwrap();
        prop_assert!((a.values.clone() - b.values).abs().max() < 1e-12);
        prop_assert_eq!(a.runs, b.runs);
    }
}

#[test]
fn run_profile_matches_direct_means() {
    let t = aggregate_word_surprisal(&table(&[1, 2, 1, 3, 1, 1, 2, 1, 1], 2, 3, 4)).unwrap();
    let p = run_profile(&t);
    assert_eq!(p.runs, vec![1, 2, 3]);
    for (ri, &run) in p.runs.iter().enumerate() {
        for l in 0..2 {
            let vals: Vec<f64> = (0..t.n_words())
                .filter(|&w| t.runs[w] == run)
                .map(|w| t.values[(w, l)])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((p.means[(ri, l)] - m).abs() < 1e-12);
        }
    }
}

fn profile_table(profile: &[f64]) -> SurprisalTable {
    let n = profile.len();
    SurprisalTable {
        values: DMatrix::from_fn(2 * n, 1, |w, _| {
            profile[w / 2] + if w % 2 == 0 { 0.1 } else { -0.1 }
        }),
        runs: (0..2 * n).map(|w| (w / 2) as u32 + 1).collect(),
    }
}

#[test]
fn convergence_is_pearson_of_run_profiles() {
    let p = [
        [2.0, 3.5, 1.0, 4.0],
        [1.0, 3.0, 2.0, 5.0],
        [4.0, 1.0, 2.0, 2.5],
    ];
    let ts: Vec<SurprisalTable> = p.iter().map(|x| profile_table(x)).collect();
    let c = surprisal_convergence([&ts[0], &ts[1], &ts[2]]).unwrap();
    for (k, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
        let r = pearson(&p[a], &p[b]).unwrap();
        assert!((c.pairs[0][k].unwrap() - r).abs() < 1e-12);
    }
}

#[test]
fn constant_profile_is_missing() {
    let ts = [
        profile_table(&[1.0, 1.0, 1.0]),
        profile_table(&[1.0, 2.0, 3.0]),
        profile_table(&[3.0, 1.0, 2.0]),
    ];
    let c = surprisal_convergence([&ts[0], &ts[1], &ts[2]]).unwrap();
    assert_eq!(c.pairs[0][0], None);
    assert_eq!(c.pairs[0][1], None);
    assert!(c.pairs[0][2].is_some());
}

#[test]
fn malformed_tables_rejected() {
    let s = DMatrix::from_element(2, 1, 1.0);
    assert!(TokenTable::new(s.clone(), vec![record(0, 0, 1)]).is_err());
    assert!(TokenTable::new(s.clone(), vec![record(0, 0, 1), record(0, 1, 1)]).is_err());
    let neg = TokenTable::new(DMatrix::from_element(1, 1, -0.5), vec![record(0, 0, 1)]);
    assert_eq!(neg.unwrap_err().class(), ErrorClass::Numeric);
    let gap = TokenTable::new(s.clone(), vec![record(0, 0, 1), record(1, 2, 1)]).unwrap();
    assert!(aggregate_word_surprisal(&gap).is_err());
    let split = TokenTable::new(s, vec![record(0, 0, 1), record(1, 0, 2)]).unwrap();
    assert!(aggregate_word_surprisal(&split).is_err());
}

#[test]
fn too_few_shared_runs_rejected() {
    let one = profile_table(&[1.0]);
    assert!(surprisal_convergence([&one, &one, &one]).is_err());
}
