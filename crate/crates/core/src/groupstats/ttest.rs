use statrs::function::beta::beta_reg;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Upper-tail p value for H1: mean > 0.
    pub p: f64,
    pub df: f64,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub sd: f64,
}

/// Upper-tail probability `P(T > t)` of Student's t with `df` degrees of
/// freedom, through the regularized incomplete beta function.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == 0.0 {
        return 0.5;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    if t > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// One-sample, one-sided t test of `mean > 0`.
///
/// With zero spread the statistic is infinite: p = 0 for a positive mean, p =
/// 1 for a negative one, and t = 0, p = 0.5 when every value is exactly zero.
pub fn one_sample_t_one_sided(scores: &[f64]) -> Result<TTest> {
    let n = scores.len();
    if n < 2 {
        return Err(invalid!("t test needs >= 2 observations, got {n}"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t test input has non-finite values".into()));
    }
    let nf = n as f64;
    let mean = scores.iter().sum::<f64>() / nf;
    let ss = scores.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (nf - 1.0)).sqrt();
    let df = nf - 1.0;
    let (t, p) = if sd == 0.0 {
        if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        }
    } else {
        let t = mean / (sd / nf.sqrt());
        (t, student_t_sf(t, df))
    };
    Ok(TTest { t, p, df, mean, sd })
}
