use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    /// H1: mean difference > 0.
    Greater,
    /// H1: mean difference < 0.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignFlipConfig {
    pub sidedness: Sidedness,
    /// Monte Carlo draws; ignored when the test is exact.
    pub n_perm: usize,
    pub seed: u64,
    /// Enumerate all `2^n` sign patterns when `n` is at most this.
    pub exact_max_subjects: usize,
}

pub const DEFAULT_N_PERM: usize = 10_000;
pub const EXACT_MAX_SUBJECTS: usize = 20;
const MIN_MC_PERM: usize = 100;

impl Default for SignFlipConfig {
    fn default() -> Self {
        SignFlipConfig {
            sidedness: Sidedness::TwoSided,
            n_perm: DEFAULT_N_PERM,
            seed: 0,
            exact_max_subjects: EXACT_MAX_SUBJECTS,
        }
    }
}

impl SignFlipConfig {
    /// Same settings, but always Monte Carlo.
    pub fn monte_carlo(self) -> Self {
        SignFlipConfig {
            exact_max_subjects: 0,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignFlipResult {
    /// Mean difference across subjects per ROI.
    pub stat: Vec<f64>,
    pub p: Vec<f64>,
    pub exact: bool,
    /// `2^n` for exact tests, the number of draws otherwise.
    pub n_patterns: u64,
}

/// Relative slack when comparing permuted and observed sums; absorbs rounding
/// so that patterns tying the observed statistic count as at least as extreme.
const TIE_RTOL: f64 = 1e-12;

#[inline]
fn extreme(s: f64, obs: f64, tol: f64, side: Sidedness) -> bool {
    match side {
        Sidedness::TwoSided => s.abs() >= obs.abs() - tol,
        Sidedness::Greater => s >= obs - tol,
        Sidedness::Less => s <= obs + tol,
    }
}

/// Paired sign-flip permutation test on a subjects x ROIs difference matrix.
///
/// The statistic is the mean difference across subjects. Up to
/// `exact_max_subjects` subjects every sign pattern is enumerated and
/// `p = #extreme / 2^n`. Beyond that, `n_perm` patterns are drawn, pattern `i`
/// from stream `i` under `seed`, each flipping a subject's whole difference
/// map, and `p = (#extreme + 1) / (n_perm + 1)`.
///
/// ROIs with a non-finite difference get `stat = NaN`, `p = 1`.
pub fn signflip_paired(diffs: &DMatrix<f64>, config: &SignFlipConfig) -> Result<SignFlipResult> {
    let n = diffs.nrows();
    if n < 2 {
        return Err(invalid!("sign-flip test needs >= 2 subjects, got {n}"));
    }
    let exact = n <= config.exact_max_subjects;
    if !exact && config.n_perm < MIN_MC_PERM {
        return Err(invalid!(
            "Monte Carlo sign-flip needs n_perm >= {MIN_MC_PERM}, got {}",
            config.n_perm
        ));
    }
    let columns: Vec<Vec<f64>> = diffs
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let finite: Vec<bool> = columns
        .iter()
        .map(|c| c.iter().all(|v| v.is_finite()))
        .collect();
    let stat: Vec<f64> = columns
        .iter()
        .zip(&finite)
        .map(|(c, &ok)| {
            if ok {
                c.iter().sum::<f64>() / n as f64
            } else {
                f64::NAN
            }
        })
        .collect();

    let (p, n_patterns) = if exact {
        let p = columns
            .par_iter()
            .zip(&finite)
            .map(|(c, &ok)| {
                if ok {
                    exact_p(c, config.sidedness)
                } else {
                    1.0
                }
            })
            .collect();
        (p, 1u64 << n)
    } else {
        (
            monte_carlo_p(&columns, &finite, config),
            config.n_perm as u64,
        )
    };
    Ok(SignFlipResult {
        stat,
        p,
        exact,
        n_patterns,
    })
}

/// Subset sums `Σ ±d_j` for every sign mask over `d`, bit set = negative.
fn signed_sums(d: &[f64]) -> Vec<f64> {
    (0..1usize << d.len())
        .map(|mask| {
            d.iter()
                .enumerate()
                .map(|(j, &v)| if mask >> j & 1 == 1 { -v } else { v })
                .sum()
        })
        .collect()
}

/// Exact enumeration, meet-in-the-middle: each pattern's sum is the sum of a
/// low-half and a high-half partial sum, each computed directly.
fn exact_p(d: &[f64], side: Sidedness) -> f64 {
    let half = d.len() / 2;
    let low = signed_sums(&d[..half]);
    let high = signed_sums(&d[half..]);
    let obs = low[0] + high[0];
    let tol = TIE_RTOL * d.iter().map(|v| v.abs()).sum::<f64>();
    let mut count: u64 = 0;
    for &h in &high {
        count += low
            .iter()
            .filter(|&&l| extreme(l + h, obs, tol, side))
            .count() as u64;
    }
    count as f64 / (low.len() * high.len()) as f64
}

const CHUNK: usize = 512;

fn monte_carlo_p(columns: &[Vec<f64>], finite: &[bool], config: &SignFlipConfig) -> Vec<f64> {
    let n = columns[0].len();
    let words = n.div_ceil(64);
    let observed: Vec<(f64, f64)> = columns
        .iter()
        .map(|c| {
            (
                c.iter().sum(),
                TIE_RTOL * c.iter().map(|v| v.abs()).sum::<f64>(),
            )
        })
        .collect();
    let n_chunks = config.n_perm.div_ceil(CHUNK);
    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut counts = vec![0u64; columns.len()];
            let mut signs = vec![1.0f64; n];
            let mut bits = vec![0u64; words];
            let end = ((chunk + 1) * CHUNK).min(config.n_perm);
            for perm in chunk * CHUNK..end {
                let mut r = rng::stream(config.seed, perm as u64);
                bits.iter_mut().for_each(|b| *b = r.next_u64());
                for (j, s) in signs.iter_mut().enumerate() {
                    *s = if bits[j / 64] >> (j % 64) & 1 == 1 {
                        -1.0
                    } else {
                        1.0
                    };
                }
                for (roi, c) in columns.iter().enumerate() {
                    let s: f64 = c.iter().zip(&signs).map(|(d, s)| d * s).sum();
                    let (obs, tol) = observed[roi];
                    if extreme(s, obs, tol, config.sidedness) {
                        counts[roi] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; columns.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    counts
        .iter()
        .zip(finite)
        .map(|(&c, &ok)| {
            if ok {
                (c + 1) as f64 / (config.n_perm + 1) as f64
            } else {
                1.0
            }
        })
        .collect()
}
