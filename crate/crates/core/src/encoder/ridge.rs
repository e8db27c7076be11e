use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, invalid, Error, Result};

/// Maximum number of feature bands accepted by the banded solver.
pub const MAX_BANDS: usize = 3;

/// Thin SVD of a design matrix, reused across a grid of penalties.
///
/// With `X = U S Vᵀ`, the ridge solution is `W(α) = V diag(s / (s² + α)) Uᵀ Y`.
#[derive(Debug, Clone)]
pub struct RidgeSvd {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
    /// Singular values at or below this are treated as zero when `α = 0`.
    cutoff: f64,
}

impl RidgeSvd {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "design matrix has non-finite entries".into(),
            ));
        }
        let svd = x.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v = svd.v_t.expect("v_t requested").transpose();
        let s = svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let cutoff = smax * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
        Ok(RidgeSvd { u, s, v, cutoff })
    }

    pub fn n_features(&self) -> usize {
        self.v.nrows()
    }

    fn shrinkage(&self, alpha: f64) -> DVector<f64> {
        self.s.map(|s| {
            if alpha == 0.0 && s <= self.cutoff {
                0.0
            } else {
                let d = s * s + alpha;
                if d == 0.0 {
                    0.0
                } else {
                    s / d
                }
            }
        })
    }

    /// `Uᵀ Y`, computed once per response matrix.
    pub fn project(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.u.nrows() {
            return Err(dim_err!(
                "X has {} rows, Y has {}",
                self.u.nrows(),
                y.nrows()
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "response matrix has non-finite entries".into(),
            ));
        }
        Ok(self.u.transpose() * y)
    }

    /// Weights from a projection returned by [`RidgeSvd::project`].
    pub fn weights_from_projection(&self, uty: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
        let d = self.shrinkage(alpha);
        let mut scaled = uty.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d[i];
        }
        &self.v * scaled
    }

    pub fn weights(&self, y: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
        check_alpha(alpha)?;
        Ok(self.weights_from_projection(&self.project(y)?, alpha))
    }

    /// Right singular vectors, `p x r`.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Predictions for new rows given precomputed `x_new V` and `Uᵀ Y`.
    pub fn predict_projected(
        &self,
        xv: &DMatrix<f64>,
        uty: &DMatrix<f64>,
        alpha: f64,
    ) -> DMatrix<f64> {
        let d = self.shrinkage(alpha);
        let mut scaled = uty.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d[i];
        }
        xv * scaled
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid!(
            "ridge penalty must be finite and >= 0, got {alpha}"
        ));
    }
    Ok(())
}

/// Ridge solution `argmin ‖Y − XW‖² + α‖W‖²` via SVD of `X`.
///
/// `alpha = 0` yields the minimum-norm least-squares solution.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if x.nrows() < 2 {
        return Err(invalid!("ridge fit needs >= 2 rows, got {}", x.nrows()));
    }
    RidgeSvd::new(x)?.weights(y, alpha)
}

/// Checks that `bands` are non-empty, disjoint and together cover `0..p`.
pub fn validate_bands(bands: &[Range<usize>], p: usize) -> Result<()> {
    if bands.is_empty() || bands.len() > MAX_BANDS {
        return Err(invalid!(
            "between 1 and {MAX_BANDS} bands required, got {}",
            bands.len()
        ));
    }
    let mut sorted: Vec<&Range<usize>> = bands.iter().collect();
    sorted.sort_by_key(|r| r.start);
    let mut next = 0;
    for r in sorted {
        if r.is_empty() {
            return Err(invalid!("empty band {r:?}"));
        }
        if r.start < next {
            return Err(invalid!("bands overlap at column {}", r.start));
        }
        if r.start > next {
            return Err(invalid!(
                "columns {next}..{} not covered by any band",
                r.start
            ));
        }
        next = r.end;
    }
    if next != p {
        return Err(invalid!("bands cover {next} columns, design has {p}"));
    }
    Ok(())
}

/// Per-column multiplier `1/√α_b` turning banded ridge into unit-penalty ridge.
pub(crate) fn band_column_scale(
    bands: &[Range<usize>],
    alphas: &[f64],
    p: usize,
) -> Result<Vec<f64>> {
    if alphas.len() != bands.len() {
        return Err(dim_err!(
            "{} band penalties for {} bands",
            alphas.len(),
            bands.len()
        ));
    }
    validate_bands(bands, p)?;
    let mut scale = vec![0.0; p];
    for (band, &a) in bands.iter().zip(alphas) {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid!("band penalties must be finite and > 0, got {a}"));
        }
        let s = 1.0 / a.sqrt();
        scale[band.clone()].iter_mut().for_each(|c| *c = s);
    }
    Ok(scale)
}

pub(crate) fn scale_columns(x: &DMatrix<f64>, scale: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    out
}

/// Ridge with a block-diagonal penalty `diag(α₁I, …, α_kI)` over column bands.
///
/// Rescaling band `b` by `1/√α_b` reduces the problem to ridge with unit
/// penalty; the weights are mapped back by the same factors.
pub fn banded_ridge_fit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    bands: &[Range<usize>],
    alphas: &[f64],
) -> Result<DMatrix<f64>> {
    let scale = band_column_scale(bands, alphas, x.ncols())?;
    let mut w = ridge_fit(&scale_columns(x, &scale), y, 1.0)?;
    for (j, mut row) in w.row_iter_mut().enumerate() {
        row *= scale[j];
    }
    Ok(w)
}
