//! Stimulus design matrices.
//!
//! Each word enters as a unit impulse at its onset on a 50 Hz grid, scaled by
//! its feature vector. The impulse train is convolved with a canonical
//! double-gamma HRF and read out at the acquisition times `k * TR`.

use nalgebra::DMatrix;

use crate::error::{dim_err, invalid, Result};
use crate::io::Dataset;

/// Oversampling rate of the impulse grid, in Hz.
pub const OVERSAMPLE_HZ: f64 = 50.0;
/// Support of the HRF used for design construction, in seconds.
pub const HRF_SUPPORT: f64 = 32.0;

const PEAK_SHAPE: f64 = 6.0;
const UNDERSHOOT_SHAPE: f64 = 16.0;
const UNDERSHOOT_RATIO: f64 = 1.0 / 6.0;

/// A sampled, peak-normalized HRF.
#[derive(Debug, Clone, PartialEq)]
pub struct HrfKernel {
    pub sample_period: f64,
    pub support: f64,
    pub samples: Vec<f64>,
}

impl HrfKernel {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of the sampled maximum, in seconds.
    pub fn peak_time(&self) -> f64 {
        let (i, _) = self
            .samples
            .iter()
            .enumerate()
            .fold(
                (0, f64::MIN),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        i as f64 * self.sample_period
    }
}

/// Gamma density with integer shape `a` and unit rate.
fn gamma_pdf(t: f64, a: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let gamma_a: f64 = (1..a as u64).map(|k| k as f64).product();
    t.powf(a - 1.0) * (-t).exp() / gamma_a
}

/// Unnormalized double-gamma HRF at time `t` seconds.
pub fn double_gamma(t: f64) -> f64 {
    gamma_pdf(t, PEAK_SHAPE) - UNDERSHOOT_RATIO * gamma_pdf(t, UNDERSHOOT_SHAPE)
}

/// Samples the canonical HRF on `[0, support]` and scales it to unit peak.
pub fn hrf_kernel(sample_period: f64, support: f64) -> Result<HrfKernel> {
    if !(sample_period > 0.0 && sample_period <= 0.1) {
        return Err(invalid!(
            "HRF sample period must be in (0, 0.1] s, got {sample_period}"
        ));
    }
    if !(support >= 24.0 && support.is_finite()) {
        return Err(invalid!("HRF support must be >= 24 s, got {support}"));
    }
    let n = (support / sample_period + 1e-9).floor() as usize + 1;
    let mut samples: Vec<f64> = (0..n)
        .map(|i| double_gamma(i as f64 * sample_period))
        .collect();
    let peak = samples.iter().cloned().fold(f64::MIN, f64::max);
    samples.iter_mut().for_each(|v| *v /= peak);
    Ok(HrfKernel {
        sample_period,
        support,
        samples,
    })
}

/// A TR-aligned design matrix for one (run, layer).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub run_id: u32,
    pub layer: u32,
    pub values: DMatrix<f64>,
}

fn grid_index(t: f64) -> i64 {
    (t * OVERSAMPLE_HZ).round() as i64
}

/// Builds the `n_tr x dim` design for one run from word-level features.
///
/// `features` has one row per entry of `onsets`. Output is truncated to the
/// run; responses past the last TR are dropped, nothing wraps around.
pub fn build_design(
    features: &DMatrix<f64>,
    onsets: &[f64],
    tr: f64,
    n_tr: usize,
) -> Result<DMatrix<f64>> {
    if features.nrows() != onsets.len() {
        return Err(dim_err!(
            "{} feature rows for {} word onsets",
            features.nrows(),
            onsets.len()
        ));
    }
    if tr.is_nan() || tr <= 0.0 {
        return Err(invalid!("TR must be > 0, got {tr}"));
    }
    let duration = tr * n_tr as f64;
    if let Some(&bad) = onsets.iter().find(|&&o| !(o >= 0.0 && o < duration)) {
        return Err(invalid!("word onset {bad} s outside run [0, {duration}) s"));
    }
    let kernel = hrf_kernel(1.0 / OVERSAMPLE_HZ, HRF_SUPPORT)?;
    let klen = kernel.len() as i64;
    let mut out = DMatrix::zeros(n_tr, features.ncols());
    for (w, &onset) in onsets.iter().enumerate() {
        let start = grid_index(onset);
        let feat = features.row(w);
        for k in 0..n_tr {
            let lag = grid_index(k as f64 * tr) - start;
            if lag < 0 {
                continue;
            }
            if lag >= klen {
                break;
            }
            let h = kernel.samples[lag as usize];
            for (j, f) in feat.iter().enumerate() {
                out[(k, j)] += h * f;
            }
        }
    }
    Ok(out)
}

/// Design matrices of every run for one layer (1-based), in manifest run order.
pub fn run_designs(dataset: &Dataset, layer: u32) -> Result<Vec<DesignMatrix>> {
    let features = dataset
        .features
        .get((layer as usize).wrapping_sub(1))
        .ok_or_else(|| invalid!("layer {layer} not in dataset"))?;
    dataset
        .runs
        .iter()
        .map(|run| {
            let words = dataset.run_words(run.id);
            let rows: Vec<usize> = words.iter().map(|w| w.word_index).collect();
            let onsets: Vec<f64> = words.iter().map(|w| w.onset_sec).collect();
            let feats = features.select_rows(rows.iter());
            Ok(DesignMatrix {
                run_id: run.id,
                layer,
                values: build_design(&feats, &onsets, run.tr, run.n_tr)?,
            })
        })
        .collect()
}

/// Column statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    /// Population standard deviation; columns below `1e-12` are zeroed.
    pub sd: Vec<f64>,
}

const DEGENERATE_SD: f64 = 1e-12;

impl ZScore {
    pub fn fit(train: &DMatrix<f64>) -> Result<Self> {
        let n = train.nrows();
        if n < 2 {
            return Err(invalid!("z-score fit needs >= 2 training rows, got {n}"));
        }
        let mut mean = Vec::with_capacity(train.ncols());
        let mut sd = Vec::with_capacity(train.ncols());
        for col in train.column_iter() {
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            mean.push(m);
            sd.push(v.sqrt());
        }
        Ok(ZScore { mean, sd })
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.mean.len() {
            return Err(dim_err!(
                "z-score fitted on {} columns, applied to {}",
                self.mean.len(),
                m.ncols()
            ));
        }
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if self.sd[j] < DEGENERATE_SD {
                col.fill(0.0);
            } else {
                col.apply(|x| *x = (*x - self.mean[j]) / self.sd[j]);
            }
        }
        Ok(out)
    }
}

/// Normalizes `train` and `apply_to` with statistics from `train` only.
pub fn fit_apply_zscore(
    train: &DMatrix<f64>,
    apply_to: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, ZScore)> {
    let z = ZScore::fit(train)?;
    Ok((z.apply(train)?, z.apply(apply_to)?, z))
}
