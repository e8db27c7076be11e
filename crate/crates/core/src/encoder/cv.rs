use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::pearson_columns;
use super::ridge::{band_column_scale, scale_columns, validate_bands, RidgeSvd};
use crate::design::ZScore;
use crate::error::{dim_err, invalid, Result};

/// How the penalty is chosen inside each outer fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerCv {
    /// Leave-one-run-out over the training runs.
    #[default]
    LeaveOneRunOut,
}

/// Which ROIs share a selected penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaScope {
    /// Each ROI keeps the candidate with its best mean inner correlation.
    #[default]
    PerRoi,
    /// One candidate per fold, maximizing the inner correlation averaged
    /// across ROIs.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeConfig {
    /// Candidate penalties, positive and strictly increasing. With bands,
    /// every band draws its scale from this grid.
    #[serde(default = "default_alpha_grid")]
    pub alphas: Vec<f64>,
    /// Column ranges of a banded model; `None` is plain ridge.
    #[serde(default)]
    pub bands: Option<Vec<Range<usize>>>,
    #[serde(default)]
    pub inner_cv: InnerCv,
    #[serde(default)]
    pub alpha_scope: AlphaScope,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            alphas: default_alpha_grid(),
            bands: None,
            inner_cv: InnerCv::LeaveOneRunOut,
            alpha_scope: AlphaScope::PerRoi,
        }
    }
}

/// `10^-2, 10^-1, …, 10^6`.
pub fn default_alpha_grid() -> Vec<f64> {
    (-2..=6).map(|k| 10f64.powi(k)).collect()
}

impl RidgeConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(invalid!("alpha grid is empty"));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid!("alpha grid must hold finite positive values"));
        }
        if self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!("alpha grid must be strictly increasing"));
        }
        if let Some(bands) = &self.bands {
            validate_bands(bands, n_features)?;
        }
        Ok(())
    }

    /// Every penalty assignment the search considers: one value per band, or
    /// a single value for plain ridge.
    fn candidates(&self) -> Vec<Vec<f64>> {
        let k = self.bands.as_ref().map_or(1, |b| b.len());
        let mut out: Vec<Vec<f64>> = vec![vec![]];
        for _ in 0..k {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    self.alphas.iter().map(move |&a| {
                        let mut c = prefix.clone();
                        c.push(a);
                        c
                    })
                })
                .collect();
        }
        out
    }
}

/// Outcome of one outer fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldDetail {
    /// Index of the held-out run in the input order.
    pub test_run: usize,
    /// Selected penalty per ROI (one entry per band for banded models).
    pub alphas: Vec<Vec<f64>>,
    /// Inner-CV criterion of the selected penalty per ROI; NaN when the grid
    /// has a single candidate and no search ran.
    pub inner_score: Vec<f64>,
    /// Held-out Pearson r per ROI; NaN where the test run has no variance.
    pub r: Vec<f64>,
}

impl FoldDetail {
    pub fn n_nan(&self) -> usize {
        self.r.iter().filter(|v| v.is_nan()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Per-ROI mean of the finite fold correlations.
    pub scores: Vec<f64>,
    pub folds: Vec<FoldDetail>,
}

/// Weights and normalization fitted on the training runs of one fold.
#[derive(Debug, Clone)]
pub struct FoldFit {
    /// Selected penalty per ROI.
    pub alphas: Vec<Vec<f64>>,
    pub inner_score: Vec<f64>,
    pub weights: DMatrix<f64>,
    pub x_norm: ZScore,
    pub y_norm: ZScore,
}

impl FoldFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.x_norm.apply(x)? * &self.weights)
    }
}

fn stack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

fn mean_finite(v: &[f64]) -> f64 {
    let (s, n) = v
        .iter()
        .filter(|x| x.is_finite())
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Normalized training and validation blocks for one split.
struct Split {
    x_train: DMatrix<f64>,
    y_train: DMatrix<f64>,
    x_norm: ZScore,
    y_norm: ZScore,
}

impl Split {
    fn new(designs: &[DMatrix<f64>], bold: &[DMatrix<f64>], train: &[usize]) -> Result<Self> {
        let xs: Vec<&DMatrix<f64>> = train.iter().map(|&i| &designs[i]).collect();
        let ys: Vec<&DMatrix<f64>> = train.iter().map(|&i| &bold[i]).collect();
        let x = stack(&xs);
        let y = stack(&ys);
        let x_norm = ZScore::fit(&x)?;
        let y_norm = ZScore::fit(&y)?;
        Ok(Split {
            x_train: x_norm.apply(&x)?,
            y_train: y_norm.apply(&y)?,
            x_norm,
            y_norm,
        })
    }
}

/// Per-ROI validation correlation for every candidate.
fn score_candidates(
    split: &Split,
    x_val: &DMatrix<f64>,
    y_val: &DMatrix<f64>,
    candidates: &[Vec<f64>],
    bands: Option<&[Range<usize>]>,
) -> Result<Vec<Vec<f64>>> {
    let x_val = split.x_norm.apply(x_val)?;
    let y_val = split.y_norm.apply(y_val)?;
    match bands {
        None => {
            let svd = RidgeSvd::new(&split.x_train)?;
            let uty = svd.project(&split.y_train)?;
            let xv = &x_val * svd.v();
            Ok(candidates
                .iter()
                .map(|c| pearson_columns(&svd.predict_projected(&xv, &uty, c[0]), &y_val))
                .collect())
        }
        Some(bands) => candidates
            .iter()
            .map(|c| {
                let scale = band_column_scale(bands, c, split.x_train.ncols())?;
                let svd = RidgeSvd::new(&scale_columns(&split.x_train, &scale))?;
                let uty = svd.project(&split.y_train)?;
                let xv = scale_columns(&x_val, &scale) * svd.v();
                Ok(pearson_columns(
                    &svd.predict_projected(&xv, &uty, 1.0),
                    &y_val,
                ))
            })
            .collect(),
    }
}

fn check_runs(designs: &[DMatrix<f64>], bold: &[DMatrix<f64>]) -> Result<()> {
    if designs.len() != bold.len() {
        return Err(dim_err!(
            "{} design runs but {} BOLD runs",
            designs.len(),
            bold.len()
        ));
    }
    if designs.len() < 3 {
        return Err(invalid!(
            "leave-one-run-out needs >= 3 runs, got {}",
            designs.len()
        ));
    }
    let p = designs[0].ncols();
    let v = bold[0].ncols();
    for (i, (d, b)) in designs.iter().zip(bold).enumerate() {
        if d.nrows() != b.nrows() {
            return Err(dim_err!(
                "run {i}: design has {} rows, BOLD has {}",
                d.nrows(),
                b.nrows()
            ));
        }
        if d.ncols() != p || b.ncols() != v {
            return Err(dim_err!("run {i}: inconsistent column counts"));
        }
    }
    Ok(())
}

/// Running mean of finite values.
#[derive(Debug, Clone, Copy, Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: f64) {
        if v.is_finite() {
            self.sum += v;
            self.n += 1;
        }
    }

    fn get(self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Index of the largest non-NaN value, the first on ties; 0 when all are NaN.
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NAN);
    for (i, v) in values.enumerate() {
        if v > best.1 || (best.1.is_nan() && !v.is_nan()) {
            best = (i, v);
        }
    }
    best
}

/// Selects penalties on the training runs of fold `test` and refits on all of
/// them. The held-out run is never read.
pub fn fit_fold(
    designs: &[DMatrix<f64>],
    bold: &[DMatrix<f64>],
    test: usize,
    config: &RidgeConfig,
) -> Result<FoldFit> {
    check_runs(designs, bold)?;
    config.validate(designs[0].ncols())?;
    let n_rois = bold[0].ncols();
    let train: Vec<usize> = (0..designs.len()).filter(|&i| i != test).collect();
    let candidates = config.candidates();
    let bands = config.bands.as_deref();

    let (choice, inner_score) = if candidates.len() == 1 {
        (vec![0; n_rois], vec![f64::NAN; n_rois])
    } else {
        let mut per_roi = vec![vec![Mean::default(); n_rois]; candidates.len()];
        let mut global = vec![Mean::default(); candidates.len()];
        for &val in &train {
            let inner: Vec<usize> = train.iter().copied().filter(|&i| i != val).collect();
            let split = Split::new(designs, bold, &inner)?;
            let scores = score_candidates(&split, &designs[val], &bold[val], &candidates, bands)?;
            for (c, r) in scores.iter().enumerate() {
                global[c].push(mean_finite(r));
                for (m, &v) in per_roi[c].iter_mut().zip(r) {
                    m.push(v);
                }
            }
        }
        match config.alpha_scope {
            AlphaScope::Global => {
                let (best, score) = argmax(global.iter().map(|m| m.get()));
                (vec![best; n_rois], vec![score; n_rois])
            }
            AlphaScope::PerRoi => (0..n_rois)
                .map(|roi| argmax(per_roi.iter().map(|c| c[roi].get())))
                .unzip(),
        }
    };

    let split = Split::new(designs, bold, &train)?;
    let mut used = choice.clone();
    used.sort_unstable();
    used.dedup();
    let p = split.x_train.ncols();
    let mut weights = DMatrix::zeros(p, n_rois);
    let svd = match bands {
        None => Some(RidgeSvd::new(&split.x_train)?),
        Some(_) => None,
    };
    let uty = match &svd {
        Some(svd) => Some(svd.project(&split.y_train)?),
        None => None,
    };
    for &c in &used {
        let cols: Vec<usize> = (0..n_rois).filter(|&r| choice[r] == c).collect();
        let w = match (bands, &svd, &uty) {
            (None, Some(svd), Some(uty)) => {
                svd.weights_from_projection(&uty.select_columns(&cols), candidates[c][0])
            }
            (Some(b), _, _) => super::banded_ridge_fit(
                &split.x_train,
                &split.y_train.select_columns(&cols),
                b,
                &candidates[c],
            )?,
            _ => unreachable!("plain ridge always has an SVD"),
        };
        for (k, &col) in cols.iter().enumerate() {
            weights.set_column(col, &w.column(k));
        }
    }
    Ok(FoldFit {
        alphas: choice.iter().map(|&c| candidates[c].clone()).collect(),
        inner_score,
        weights,
        x_norm: split.x_norm,
        y_norm: split.y_norm,
    })
}

/// Leave-one-run-out cross-validated encoding scores for one subject and layer.
///
/// `designs[i]` and `bold[i]` hold run `i`. Each run is held out once; the
/// penalty is chosen by nested leave-one-run-out over the remaining runs,
/// maximizing the mean inner correlation per ROI or across all ROIs
/// depending on [`AlphaScope`]. The score of an ROI is the mean of its finite
/// fold correlations.
pub fn loro_cv(
    designs: &[DMatrix<f64>],
    bold: &[DMatrix<f64>],
    config: &RidgeConfig,
) -> Result<CvResult> {
    check_runs(designs, bold)?;
    let n_rois = bold[0].ncols();
    let mut folds = Vec::with_capacity(designs.len());
    for test in 0..designs.len() {
        let fit = fit_fold(designs, bold, test, config)?;
        let pred = fit.predict(&designs[test])?;
        let r = pearson_columns(&pred, &bold[test]);
        folds.push(FoldDetail {
            test_run: test,
            alphas: fit.alphas,
            inner_score: fit.inner_score,
            r,
        });
    }
    let scores = (0..n_rois)
        .map(|roi| mean_finite(&folds.iter().map(|f| f.r[roi]).collect::<Vec<_>>()))
        .collect();
    Ok(CvResult { scores, folds })
}
