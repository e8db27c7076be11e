use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{loro_cv, RidgeConfig};
use crate::design::run_designs;
use crate::error::{dim_err, invalid, Error, Result};
use crate::io::{read_tensor, write_tensor, Dataset, Dtype, Tensor};

/// Subject x layer x ROI brain scores, with the per-fold detail they were
/// averaged from when produced by cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    pub subjects: Vec<String>,
    pub layers: Vec<u32>,
    pub rois: Vec<u32>,
    /// Held-out run ids in fold order; empty when no fold detail is stored.
    pub runs: Vec<u32>,
    scores: Vec<f64>,
    folds: Vec<f64>,
    /// Selected penalties `[s][l][r][f][band]`, flattened.
    alphas: Vec<f64>,
    n_bands: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreIndex {
    subjects: Vec<String>,
    layers: Vec<u32>,
    rois: Vec<u32>,
    runs: Vec<u32>,
    shape: Vec<usize>,
}

impl ScoreTensor {
    /// Scores without fold detail, `values[s][l][r]` flattened row-major.
    pub fn new(
        subjects: Vec<String>,
        layers: Vec<u32>,
        rois: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = subjects.len() * layers.len() * rois.len();
        if n == 0 {
            return Err(invalid!("score tensor needs >= 1 subject, layer and ROI"));
        }
        if values.len() != n {
            return Err(dim_err!("expected {n} scores, got {}", values.len()));
        }
        Ok(ScoreTensor {
            subjects,
            layers,
            rois,
            runs: Vec::new(),
            scores: values,
            folds: Vec::new(),
            alphas: Vec::new(),
            n_bands: 0,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_rois(&self) -> usize {
        self.rois.len()
    }

    pub fn n_folds(&self) -> usize {
        self.runs.len()
    }

    /// Penalty entries per selection: 1 for ridge, the band count for banded
    /// ridge, 0 when no fold detail is stored.
    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    /// Penalty selected for one ROI in one fold.
    pub fn fold_alphas(&self, subject: usize, layer: usize, roi: usize, fold: usize) -> &[f64] {
        let at = (self.idx(subject, layer, roi) * self.n_folds() + fold) * self.n_bands;
        &self.alphas[at..at + self.n_bands]
    }

    fn idx(&self, s: usize, l: usize, r: usize) -> usize {
        (s * self.n_layers() + l) * self.n_rois() + r
    }

    pub fn get(&self, subject: usize, layer: usize, roi: usize) -> f64 {
        self.scores[self.idx(subject, layer, roi)]
    }

    pub fn fold(&self, subject: usize, layer: usize, roi: usize, fold: usize) -> f64 {
        self.folds[self.idx(subject, layer, roi) * self.n_folds() + fold]
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }

    /// Position of a layer id.
    pub fn layer_index(&self, layer: u32) -> Result<usize> {
        self.layers
            .iter()
            .position(|&l| l == layer)
            .ok_or_else(|| invalid!("layer {layer} not in score tensor {:?}", self.layers))
    }

    /// Subjects x ROIs matrix of one layer (by position).
    pub fn layer_matrix(&self, layer: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_subjects(), self.n_rois(), |s, r| {
            self.get(s, layer, r)
        })
    }

    /// Mean over subjects of one layer, skipping non-finite scores.
    pub fn group_mean(&self, layer: usize) -> Vec<f64> {
        (0..self.n_rois())
            .map(|r| {
                let (sum, n) = (0..self.n_subjects())
                    .map(|s| self.get(s, layer, r))
                    .filter(|v| v.is_finite())
                    .fold((0.0, 0usize), |(a, n), v| (a + v, n + 1));
                if n == 0 {
                    f64::NAN
                } else {
                    sum / n as f64
                }
            })
            .collect()
    }

    /// Layers x ROIs matrix of group means.
    pub fn group_means(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_layers(), self.n_rois());
        for l in 0..self.n_layers() {
            for (r, v) in self.group_mean(l).into_iter().enumerate() {
                m[(l, r)] = v;
            }
        }
        m
    }

    pub fn same_space(&self, other: &ScoreTensor) -> bool {
        self.subjects == other.subjects && self.rois == other.rois
    }

    /// Writes `scores.enc`, `folds.enc` (if present) and `scores.json` to `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let shape = vec![self.n_subjects(), self.n_layers(), self.n_rois()];
        write_tensor(
            &Tensor::new(Dtype::F64, shape.clone(), self.scores.clone())?,
            dir.join("scores.enc"),
        )?;
        if self.n_folds() > 0 {
            let mut fshape = shape.clone();
            fshape.push(self.n_folds());
            write_tensor(
                &Tensor::new(Dtype::F64, fshape, self.folds.clone())?,
                dir.join("folds.enc"),
            )?;
            let mut ashape = fshape_of(&shape, self.n_folds());
            ashape.push(self.n_bands);
            write_tensor(
                &Tensor::new(Dtype::F64, ashape, self.alphas.clone())?,
                dir.join("alphas.enc"),
            )?;
        }
        let index = ScoreIndex {
            subjects: self.subjects.clone(),
            layers: self.layers.clone(),
            rois: self.rois.clone(),
            runs: self.runs.clone(),
            shape,
        };
        let path = dir.join("scores.json");
        let json = serde_json::to_string_pretty(&index).expect("index serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("scores.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: ScoreIndex = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
        let scores = read_tensor(dir.join("scores.enc"))?;
        let shape = vec![index.subjects.len(), index.layers.len(), index.rois.len()];
        if scores.shape() != shape.as_slice() || index.shape != shape {
            return Err(dim_err!(
                "scores.enc shape {:?} disagrees with index {:?}",
                scores.shape(),
                shape
            ));
        }
        let (folds, alphas, n_bands) = if index.runs.is_empty() {
            (Vec::new(), Vec::new(), 0)
        } else {
            let f = read_tensor(dir.join("folds.enc"))?;
            let fshape = fshape_of(&shape, index.runs.len());
            if f.shape() != fshape.as_slice() {
                return Err(dim_err!(
                    "folds.enc shape {:?}, expected {fshape:?}",
                    f.shape()
                ));
            }
            let a = read_tensor(dir.join("alphas.enc"))?;
            if a.shape().len() != 5 || a.shape()[..4] != fshape[..] {
                return Err(dim_err!(
                    "alphas.enc shape {:?}, expected {fshape:?} plus a band axis",
                    a.shape()
                ));
            }
            let n_bands = a.shape()[4];
            (f.into_data(), a.into_data(), n_bands)
        };
        Ok(ScoreTensor {
            subjects: index.subjects,
            layers: index.layers,
            rois: index.rois,
            runs: index.runs,
            scores: scores.into_data(),
            folds,
            alphas,
            n_bands,
        })
    }

    /// Writes a long-form CSV `subject,layer,roi_id,score`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        w.write_record(["subject", "layer", "roi_id", "score"])
            .map_err(|e| Error::parse(path, e))?;
        for (s, subj) in self.subjects.iter().enumerate() {
            for (l, layer) in self.layers.iter().enumerate() {
                for (r, roi) in self.rois.iter().enumerate() {
                    w.write_record([
                        subj.clone(),
                        layer.to_string(),
                        roi.to_string(),
                        self.get(s, l, r).to_string(),
                    ])
                    .map_err(|e| Error::parse(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn fshape_of(shape: &[usize], n_folds: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.push(n_folds);
    s
}

/// Runs leave-one-run-out encoding for every subject and requested layer.
///
/// Work is spread over the rayon pool per (subject, layer); each task is a
/// pure function of its inputs, so the result does not depend on the number
/// of threads.
pub fn encode_dataset(
    dataset: &Dataset,
    layers: &[u32],
    config: &RidgeConfig,
) -> Result<ScoreTensor> {
    if layers.is_empty() {
        return Err(invalid!("no layers requested"));
    }
    let designs: Vec<Vec<DMatrix<f64>>> = layers
        .par_iter()
        .map(|&l| {
            Ok(run_designs(dataset, l)?
                .into_iter()
                .map(|d| d.values)
                .collect())
        })
        .collect::<Result<_>>()?;
    let n_s = dataset.subjects.len();
    let n_l = layers.len();
    let tasks: Vec<(usize, usize)> = (0..n_s)
        .flat_map(|s| (0..n_l).map(move |l| (s, l)))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(s, l)| loro_cv(&designs[l], &dataset.bold[s], config))
        .collect::<Result<Vec<_>>>()?;

    let n_r = dataset.n_rois();
    let n_f = dataset.runs.len();
    let mut scores = Vec::with_capacity(n_s * n_l * n_r);
    let mut folds = Vec::with_capacity(n_s * n_l * n_r * n_f);
    let n_bands = config.bands.as_ref().map_or(1, |b| b.len());
    let mut alphas = Vec::with_capacity(n_s * n_l * n_r * n_f * n_bands);
    for res in &results {
        scores.extend_from_slice(&res.scores);
        for r in 0..n_r {
            folds.extend(res.folds.iter().map(|f| f.r[r]));
            for f in &res.folds {
                alphas.extend_from_slice(&f.alphas[r]);
            }
        }
    }
    Ok(ScoreTensor {
        subjects: dataset.subjects.clone(),
        layers: layers.to_vec(),
        rois: dataset.atlas.rois().iter().map(|r| r.roi_id).collect(),
        runs: dataset.runs.iter().map(|r| r.id).collect(),
        scores,
        folds,
        alphas,
        n_bands,
    })
}
