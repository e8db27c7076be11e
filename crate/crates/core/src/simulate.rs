//! Synthetic datasets with known ground truth.
//!
//! Words arrive with jittered onsets `(i + U) / rate`, features are standard
//! normal, and signal ROIs respond to the HRF design of one driving layer
//! through fixed random weights, scaled so the signal has standard deviation
//! `effect`. Every random draw comes from a stream keyed by the seed and the
//! drawing site, so output depends on nothing but the config.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::run_designs;
use crate::encoder::ScoreTensor;
use crate::error::{invalid, Error, Result};
use crate::groupstats::LmmRow;
use crate::io::{Atlas, Dataset, Network, Roi, RunSpec, WordRecord};
use crate::rng::{self, stream_id, Rng};

const TAG_WORDS: u8 = 1;
const TAG_FEATURES: u8 = 2;
const TAG_WEIGHTS: u8 = 3;
const TAG_NOISE: u8 = 4;
const TAG_SCORES: u8 = 5;
const TAG_LMM: u8 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub language: String,
    pub n_subjects: usize,
    pub n_runs: usize,
    pub n_tr: usize,
    pub tr: f64,
    pub n_rois: usize,
    pub dim: usize,
    pub n_layers: usize,
    /// Layer (1-based) whose features drive the signal ROIs.
    pub driving_layer: u32,
    pub signal_rois: Vec<u32>,
    /// Standard deviation of the signal component at signal ROIs.
    pub effect: f64,
    /// Noise standard deviation at signal ROIs.
    pub noise_sd: f64,
    /// Noise standard deviation at ROIs without signal.
    pub null_sd: f64,
    /// Words per second.
    pub word_rate: f64,
    /// Correlation of every other layer's features with the driving layer's.
    pub layer_similarity: f64,
    /// AR(1) coefficient of the noise; 0 gives white noise.
    pub ar1: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            language: "L1".into(),
            n_subjects: 4,
            n_runs: 9,
            n_tr: 120,
            tr: 2.0,
            n_rois: 20,
            dim: 8,
            n_layers: 2,
            driving_layer: 1,
            signal_rois: (0..5).collect(),
            effect: 1.0,
            noise_sd: 1.0,
            null_sd: 1.0,
            word_rate: 2.0,
            layer_similarity: 0.0,
            ar1: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_subjects", self.n_subjects),
            ("n_runs", self.n_runs),
            ("n_tr", self.n_tr),
            ("n_rois", self.n_rois),
            ("dim", self.dim),
            ("n_layers", self.n_layers),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(invalid!("{name} must be >= 1"));
        }
        if !(self.tr > 0.0 && self.tr.is_finite()) {
            return Err(invalid!("tr must be > 0, got {}", self.tr));
        }
        if !(self.word_rate > 0.0 && self.word_rate.is_finite()) {
            return Err(invalid!("word_rate must be > 0, got {}", self.word_rate));
        }
        for (name, v) in [
            ("effect", self.effect),
            ("noise_sd", self.noise_sd),
            ("null_sd", self.null_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid!("{name} must be >= 0, got {v}"));
            }
        }
        if self.layer_similarity.is_nan() || self.layer_similarity.abs() > 1.0 {
            return Err(invalid!("layer_similarity must be in [-1, 1]"));
        }
        if !(0.0..1.0).contains(&self.ar1) {
            return Err(invalid!("ar1 must be in [0, 1), got {}", self.ar1));
        }
        if self.driving_layer == 0 || self.driving_layer as usize > self.n_layers {
            return Err(invalid!(
                "driving_layer {} outside 1..={}",
                self.driving_layer,
                self.n_layers
            ));
        }
        if let Some(r) = self
            .signal_rois
            .iter()
            .find(|&&r| r as usize >= self.n_rois)
        {
            return Err(invalid!("signal ROI {r} outside 0..{}", self.n_rois));
        }
        Ok(())
    }
}

/// What the simulator planted.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Sorted, unique.
    pub signal_rois: Vec<u32>,
    pub driving_layer: u32,
    /// dim x signal ROIs, in `signal_rois` order.
    pub weights: DMatrix<f64>,
}

fn normal(r: &mut Rng) -> f64 {
    r.sample(StandardNormal)
}

fn normal_matrix(r: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // filled row by row
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal(r);
        }
    }
    m
}

fn synth_atlas(n_rois: usize) -> Atlas {
    let rois = (0..n_rois)
        .map(|i| Roi {
            roi_id: i as u32,
            name: format!("roi{i:03}"),
            network: Network::ALL[i % Network::ALL.len()],
            hemisphere: if i % 2 == 0 { "L" } else { "R" }.into(),
        })
        .collect();
    Atlas::new(rois).expect("dense ids")
}

fn synth_words(cfg: &SimConfig, runs: &[RunSpec]) -> Vec<WordRecord> {
    let mut words = Vec::new();
    for run in runs {
        let mut r = rng::stream(cfg.seed, stream_id(TAG_WORDS, run.id, 0));
        let n = (run.duration() * cfg.word_rate).floor() as usize;
        for i in 0..n {
            let u: f64 = r.random();
            words.push(WordRecord {
                word: format!("w{}", words.len()),
                onset_sec: (i as f64 + u) / cfg.word_rate,
                run_id: run.id,
                word_index: words.len(),
            });
        }
    }
    words
}

fn synth_features(cfg: &SimConfig, n_words: usize) -> Vec<DMatrix<f64>> {
    let own: Vec<DMatrix<f64>> = (0..cfg.n_layers)
        .map(|l| {
            let mut r = rng::stream(cfg.seed, stream_id(TAG_FEATURES, l as u32 + 1, 0));
            normal_matrix(&mut r, n_words, cfg.dim)
        })
        .collect();
    let d = cfg.driving_layer as usize - 1;
    let rho = cfg.layer_similarity;
    let keep = (1.0 - rho * rho).sqrt();
    own.iter()
        .enumerate()
        .map(|(l, f)| {
            if l == d {
                f.clone()
            } else {
                &own[d] * rho + f * keep
            }
        })
        .collect()
}

fn noise(cfg: &SimConfig, subject: usize, run: usize, n_tr: usize, n_rois: usize) -> DMatrix<f64> {
    let mut r = rng::stream(cfg.seed, stream_id(TAG_NOISE, subject as u32, run as u32));
    let mut e = normal_matrix(&mut r, n_tr, n_rois);
    if cfg.ar1 > 0.0 {
        let innov = (1.0 - cfg.ar1 * cfg.ar1).sqrt();
        for j in 0..n_rois {
            for t in 1..n_tr {
                e[(t, j)] = cfg.ar1 * e[(t - 1, j)] + innov * e[(t, j)];
            }
        }
    }
    e
}

/// Generates one dataset and its ground truth.
pub fn synth_dataset(cfg: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let runs: Vec<RunSpec> = (1..=cfg.n_runs as u32)
        .map(|id| RunSpec {
            id,
            tr: cfg.tr,
            n_tr: cfg.n_tr,
        })
        .collect();
    let words = synth_words(cfg, &runs);
    let features = synth_features(cfg, words.len());
    let mut signal_rois = cfg.signal_rois.clone();
    signal_rois.sort_unstable();
    signal_rois.dedup();

    let mut weights = DMatrix::zeros(cfg.dim, signal_rois.len());
    for (k, &roi) in signal_rois.iter().enumerate() {
        let mut r = rng::stream(cfg.seed, stream_id(TAG_WEIGHTS, roi, 0));
        for i in 0..cfg.dim {
            weights[(i, k)] = normal(&mut r);
        }
    }

    let mut dataset = Dataset {
        language: cfg.language.clone(),
        runs,
        subjects: (1..=cfg.n_subjects)
            .map(|s| format!("sub-{s:02}"))
            .collect(),
        atlas: synth_atlas(cfg.n_rois),
        words,
        features,
        bold: Vec::new(),
    };

    let designs = run_designs(&dataset, cfg.driving_layer)?;
    let signal: Vec<DMatrix<f64>> = designs.iter().map(|d| &d.values * &weights).collect();
    let total = cfg.n_runs * cfg.n_tr;
    let mut scale = DVector::zeros(signal_rois.len());
    for k in 0..signal_rois.len() {
        let vals: Vec<f64> = signal
            .iter()
            .flat_map(|s| s.column(k).iter().copied().collect::<Vec<_>>())
            .collect();
        let mean = vals.iter().sum::<f64>() / total as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / total as f64).sqrt();
        if sd == 0.0 && cfg.effect > 0.0 {
            return Err(Error::Numeric(format!(
                "signal at ROI {} has zero variance; raise word_rate or n_tr",
                signal_rois[k]
            )));
        }
        scale[k] = if sd > 0.0 { cfg.effect / sd } else { 0.0 };
    }

    let is_signal: Vec<Option<usize>> = (0..cfg.n_rois as u32)
        .map(|r| signal_rois.binary_search(&r).ok())
        .collect();
    dataset.bold = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|s| {
            (0..cfg.n_runs)
                .map(|r| {
                    let e = noise(cfg, s, r, cfg.n_tr, cfg.n_rois);
                    DMatrix::from_fn(cfg.n_tr, cfg.n_rois, |t, j| match is_signal[j] {
                        Some(k) => scale[k] * signal[r][(t, k)] + cfg.noise_sd * e[(t, j)],
                        None => cfg.null_sd * e[(t, j)],
                    })
                })
                .collect()
        })
        .collect();

    Ok((
        dataset,
        GroundTruth {
            signal_rois,
            driving_layer: cfg.driving_layer,
            weights,
        },
    ))
}

/// Three languages sharing `shared` signal ROIs, each adding its own private
/// set. Language `i` is tagged `L{i+1}` and seeded with a child of `cfg.seed`;
/// `cfg.signal_rois` is ignored.
pub fn synth_three_languages(
    cfg: &SimConfig,
    shared: &[u32],
    private: [&[u32]; 3],
) -> Result<Vec<(Dataset, GroundTruth)>> {
    if let Some((i, r)) = private
        .iter()
        .enumerate()
        .find_map(|(i, p)| p.iter().find(|r| shared.contains(r)).map(|r| (i, r)))
    {
        return Err(invalid!(
            "ROI {r} is both shared and private to language {}",
            i + 1
        ));
    }
    (0..3)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = rng::child_seed(cfg.seed, i as u64);
            c.language = format!("L{}", i + 1);
            c.signal_rois = shared.iter().chain(private[i]).copied().collect();
            synth_dataset(&c)
        })
        .collect()
}

/// Score-level simulation: `effect` at signal ROIs plus `sd` Gaussian noise,
/// independently per subject, layer and ROI.
pub fn synth_scores(
    seed: u64,
    n_subjects: usize,
    n_layers: usize,
    n_rois: usize,
    signal_rois: &[u32],
    effect: f64,
    sd: f64,
) -> Result<ScoreTensor> {
    let mut values = Vec::with_capacity(n_subjects * n_layers * n_rois);
    for s in 0..n_subjects {
        for l in 0..n_layers {
            let mut r = rng::stream(seed, stream_id(TAG_SCORES, s as u32, l as u32));
            for roi in 0..n_rois as u32 {
                let mean = if signal_rois.contains(&roi) {
                    effect
                } else {
                    0.0
                };
                values.push(mean + sd * normal(&mut r));
            }
        }
    }
    ScoreTensor::new(
        (1..=n_subjects).map(|s| format!("sub-{s:02}")).collect(),
        (1..=n_layers as u32).collect(),
        (0..n_rois as u32).collect(),
        values,
    )
}

/// Long-format rows from `y = effect * model + u_subject + v_roi + e` with
/// model labels 0 and 1 at every (subject, ROI).
pub fn synth_lmm_rows(
    seed: u64,
    n_subjects: usize,
    n_rois: usize,
    var_subject: f64,
    var_roi: f64,
    var_residual: f64,
    effect: f64,
) -> Vec<LmmRow> {
    let mut r = rng::stream(seed, stream_id(TAG_LMM, 0, 0));
    let u: Vec<f64> = (0..n_subjects)
        .map(|_| var_subject.sqrt() * normal(&mut r))
        .collect();
    let v: Vec<f64> = (0..n_rois)
        .map(|_| var_roi.sqrt() * normal(&mut r))
        .collect();
    let mut rows = Vec::with_capacity(2 * n_subjects * n_rois);
    for (s, us) in u.iter().enumerate() {
        for (roi, vr) in v.iter().enumerate() {
            for model in 0..2u32 {
                rows.push(LmmRow {
                    subject: s,
                    roi,
                    model,
                    score: effect * model as f64 + us + vr + var_residual.sqrt() * normal(&mut r),
                });
            }
        }
    }
    rows
}
