//! Ridge and banded-ridge encoding models scored by leave-one-run-out
//! cross-validation.

mod cv;
mod ridge;
mod scores;

use nalgebra::DMatrix;

pub use cv::{
    default_alpha_grid, fit_fold, loro_cv, AlphaScope, CvResult, FoldDetail, FoldFit, InnerCv,
    RidgeConfig,
};
pub use ridge::{banded_ridge_fit, ridge_fit, validate_bands, RidgeSvd, MAX_BANDS};
pub use scores::{encode_dataset, ScoreTensor};

use crate::error::{dim_err, invalid, Result};

/// Sample Pearson correlation. NaN when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!(
            "pearson: lengths {} and {} differ",
            a.len(),
            b.len()
        ));
    }
    if a.len() < 2 {
        return Err(invalid!("pearson needs >= 2 observations, got {}", a.len()));
    }
    Ok(pearson_unchecked(
        a.iter().copied(),
        b.iter().copied(),
        a.len(),
    ))
}

fn pearson_unchecked(
    a: impl Iterator<Item = f64> + Clone,
    b: impl Iterator<Item = f64> + Clone,
    n: usize,
) -> f64 {
    let ma = a.clone().sum::<f64>() / n as f64;
    let mb = b.clone().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Column-wise Pearson correlation of two equally shaped matrices.
pub(crate) fn pearson_columns(pred: &DMatrix<f64>, obs: &DMatrix<f64>) -> Vec<f64> {
    debug_assert_eq!(pred.shape(), obs.shape());
    (0..obs.ncols())
        .map(|j| {
            pearson_unchecked(
                pred.column(j).iter().copied(),
                obs.column(j).iter().copied(),
                obs.nrows(),
            )
        })
        .collect()
}
