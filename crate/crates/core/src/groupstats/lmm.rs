//! Pooled model contrast with crossed random intercepts:
//!
//! ```text
//! y = β₀ + β₁·model + u_subject + v_roi + ε
//! u ~ N(0, σ²_s), v ~ N(0, σ²_r), ε ~ N(0, σ²_e)
//! ```
//!
//! Variance components are estimated by EM-REML on Henderson's mixed model
//! equations; β and its standard error come from the GLS solution at the final
//! components, and the p value from a normal approximation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmRow {
    pub subject: usize,
    pub roi: usize,
    /// Model label; exactly two distinct labels must occur. The larger label
    /// is the contrast level coded 1.
    pub model: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub intercept: f64,
    /// Fixed effect of the contrast level over the reference level.
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    /// Two-sided normal-approximation p value.
    pub p: f64,
    pub var_subject: f64,
    pub var_roi: f64,
    pub var_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub reference_model: u32,
    pub contrast_model: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LmmOptions {
    fn default() -> Self {
        LmmOptions {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

/// Cross-products of the mixed model, built once.
struct Normal {
    n: usize,
    n_subjects: usize,
    n_rois: usize,
    /// `[X Z]ᵀ[X Z]`, with X = (1, model) and Z the two indicator blocks.
    cross: DMatrix<f64>,
    rhs: DVector<f64>,
    yty: f64,
}

const N_FIXED: usize = 2;

fn dense_ids(ids: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut map = BTreeMap::new();
    for id in ids {
        let next = map.len();
        map.entry(id).or_insert(next);
    }
    // renumber in sorted order so the fit does not depend on row order
    map.keys()
        .copied()
        .enumerate()
        .map(|(i, k)| (k, i))
        .collect()
}

impl Normal {
    fn build(rows: &[LmmRow]) -> Result<(Self, u32, u32)> {
        let mut levels: Vec<u32> = rows.iter().map(|r| r.model).collect();
        levels.sort_unstable();
        levels.dedup();
        if levels.len() != 2 {
            return Err(invalid!(
                "exactly 2 model levels required, found {}",
                levels.len()
            ));
        }
        if rows.iter().any(|r| !r.score.is_finite()) {
            return Err(Error::Numeric(
                "mixed model input has non-finite scores".into(),
            ));
        }
        let subjects = dense_ids(rows.iter().map(|r| r.subject));
        let rois = dense_ids(rows.iter().map(|r| r.roi));
        if subjects.len() < 2 || rois.len() < 2 {
            return Err(invalid!(
                "mixed model needs >= 2 subjects and >= 2 ROIs, got {} and {}",
                subjects.len(),
                rois.len()
            ));
        }
        let (ns, nr) = (subjects.len(), rois.len());
        let dim = N_FIXED + ns + nr;
        let mut cross = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        let mut yty = 0.0;
        for r in rows {
            let x1 = if r.model == levels[1] { 1.0 } else { 0.0 };
            let cols = [
                (0, 1.0),
                (1, x1),
                (N_FIXED + subjects[&r.subject], 1.0),
                (N_FIXED + ns + rois[&r.roi], 1.0),
            ];
            for &(i, vi) in &cols {
                rhs[i] += vi * r.score;
                for &(j, vj) in &cols {
                    cross[(i, j)] += vi * vj;
                }
            }
            yty += r.score * r.score;
        }
        Ok((
            Normal {
                n: rows.len(),
                n_subjects: ns,
                n_rois: nr,
                cross,
                rhs,
                yty,
            },
            levels[0],
            levels[1],
        ))
    }

    /// Solves the mixed model equations scaled by σ²_e.
    fn solve(&self, var_s: f64, var_r: f64, var_e: f64) -> Result<Solved> {
        let mut c = self.cross.clone();
        let ls = var_e / var_s;
        let lr = var_e / var_r;
        for i in 0..self.n_subjects {
            c[(N_FIXED + i, N_FIXED + i)] += ls;
        }
        for i in 0..self.n_rois {
            let k = N_FIXED + self.n_subjects + i;
            c[(k, k)] += lr;
        }
        let chol = c
            .cholesky()
            .ok_or_else(|| Error::Numeric("singular mixed-model design".into()))?;
        let log_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        let sol = chol.solve(&self.rhs);
        Ok(Solved {
            cinv: chol.inverse(),
            sol,
            log_det,
        })
    }

    /// REML deviance, `-2 log L` up to a constant.
    fn deviance(&self, var_s: f64, var_r: f64, var_e: f64) -> Result<f64> {
        let s = self.solve(var_s, var_r, var_e)?;
        Ok((self.n - N_FIXED) as f64 * var_e.ln()
            + self.n_subjects as f64 * (var_s / var_e).ln()
            + self.n_rois as f64 * (var_r / var_e).ln()
            + s.log_det
            + (self.yty - s.sol.dot(&self.rhs)) / var_e)
    }
}

struct Solved {
    sol: DVector<f64>,
    /// Inverse coefficient matrix.
    cinv: DMatrix<f64>,
    log_det: f64,
}

/// Share of the total variance below which a shrinking component is tested
/// against the boundary.
const BOUNDARY_SHARE: f64 = 1e-2;

/// Fits the crossed random-intercept model by EM-REML.
///
/// Iteration stops when the largest change of a variance component, relative
/// to their sum, falls below `options.tol`. EM creeps toward a zero component,
/// so a shrinking component under 1% of the total is pinned to the floor
/// whenever that does not raise the REML deviance. A fit that runs out of
/// iterations is returned with `converged = false`.
pub fn lmm_crossed_with(rows: &[LmmRow], options: LmmOptions) -> Result<LmmFit> {
    let (ne, reference_model, contrast_model) = Normal::build(rows)?;
    let nf = ne.n as f64;
    let ybar = ne.rhs[0] / nf;
    let var_y = (ne.yty / nf - ybar * ybar).max(0.0);
    // floor keeps λ = σ²_e/σ² finite as a component collapses to zero
    let floor = 1e-12 * var_y.max(1e-300);
    let init = (var_y / 3.0).max(floor);
    let (mut vs, mut vr, mut ve) = (init, init, init);
    let (ns, nr) = (ne.n_subjects, ne.n_rois);
    let dof = nf - N_FIXED as f64;
    if dof <= 0.0 {
        return Err(invalid!(
            "mixed model needs more than {N_FIXED} observations"
        ));
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let Solved { sol, cinv, .. } = ne.solve(vs, vr, ve)?;
        let u = sol.rows(N_FIXED, ns);
        let v = sol.rows(N_FIXED + ns, nr);
        let tr_s: f64 = (0..ns).map(|i| cinv[(N_FIXED + i, N_FIXED + i)]).sum();
        let tr_r: f64 = (0..nr)
            .map(|i| cinv[(N_FIXED + ns + i, N_FIXED + ns + i)])
            .sum();
        let mut new_vs = ((u.dot(&u) + ve * tr_s) / ns as f64).max(floor);
        let mut new_vr = ((v.dot(&v) + ve * tr_r) / nr as f64).max(floor);
        let new_ve = ((ne.yty - sol.dot(&ne.rhs)) / dof).max(floor);
        let share = |x: f64| x / (new_vs + new_vr + new_ve);
        let shrink_s = new_vs < vs && new_vs > floor && share(new_vs) < BOUNDARY_SHARE;
        let shrink_r = new_vr < vr && new_vr > floor && share(new_vr) < BOUNDARY_SHARE;
        if shrink_s || shrink_r {
            let current = ne.deviance(new_vs, new_vr, new_ve)?;
            if shrink_s && ne.deviance(floor, new_vr, new_ve)? <= current {
                new_vs = floor;
            } else if shrink_r && ne.deviance(new_vs, floor, new_ve)? <= current {
                new_vr = floor;
            }
        }

        let total = new_vs + new_vr + new_ve;
        let change = (new_vs - vs)
            .abs()
            .max((new_vr - vr).abs())
            .max((new_ve - ve).abs())
            / total;
        vs = new_vs;
        vr = new_vr;
        ve = new_ve;
        if change < options.tol {
            converged = true;
            break;
        }
    }

    let Solved { sol, cinv, .. } = ne.solve(vs, vr, ve)?;
    let estimate = sol[1];
    let se = (ve * cinv[(1, 1)]).max(0.0).sqrt();
    let z = if se > 0.0 {
        estimate / se
    } else if estimate == 0.0 {
        0.0
    } else {
        estimate.signum() * f64::INFINITY
    };
    let p = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(LmmFit {
        intercept: sol[0],
        estimate,
        se,
        z,
        p,
        var_subject: vs,
        var_roi: vr,
        var_residual: ve,
        converged,
        iterations,
        reference_model,
        contrast_model,
    })
}

/// [`lmm_crossed_with`] at the default tolerance (1e-8) and iteration cap (500).
pub fn lmm_crossed(rows: &[LmmRow]) -> Result<LmmFit> {
    lmm_crossed_with(rows, LmmOptions::default())
}
