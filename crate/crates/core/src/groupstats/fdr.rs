use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BhResult {
    pub rejected: Vec<bool>,
    /// BH-adjusted p values, clipped to 1.
    pub q: Vec<f64>,
}

impl BhResult {
    pub fn n_rejected(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

/// Benjamini–Hochberg step-up at level `q`.
///
/// Sort p ascending (stable, so ties keep their input order), find the
/// largest rank `k` with `p(k) <= k q / m` and reject ranks `1..=k`.
pub fn bh_fdr(p: &[f64], q: f64) -> Result<BhResult> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid!("FDR level must be in (0, 1], got {q}"));
    }
    if let Some(bad) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(invalid!("p values must lie in [0, 1], got {bad}"));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));

    let mf = m as f64;
    let k = (1..=m)
        .rev()
        .find(|&k| p[order[k - 1]] <= k as f64 * q / mf)
        .unwrap_or(0);
    let mut rejected = vec![false; m];
    for &i in &order[..k] {
        rejected[i] = true;
    }

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        running = running.min(mf * p[i] / rank as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(BhResult {
        rejected,
        q: adjusted,
    })
}
