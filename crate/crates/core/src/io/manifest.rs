use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::atlas::Atlas;
use super::container::{self, Dtype};
use super::words::{read_words, write_words, WordRecord};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub id: u32,
    /// Repetition time in seconds.
    pub tr: f64,
    pub n_tr: usize,
}

impl RunSpec {
    pub fn duration(&self) -> f64 {
        self.tr * self.n_tr as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRun {
    pub run: u32,
    pub bold: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub id: String,
    pub runs: Vec<SubjectRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer: u32,
    pub path: PathBuf,
}

/// Dataset description as stored on disk. Paths are relative to the
/// manifest's directory unless absolute.
///
/// Layer 1 is the first transformer block; the input embedding layer is never
/// listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub language: String,
    pub atlas: PathBuf,
    pub words: PathBuf,
    pub runs: Vec<RunSpec>,
    pub subjects: Vec<SubjectSpec>,
    pub features: Vec<LayerSpec>,
    /// Declared ROI count, checked against the atlas when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_rois: Option<usize>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn run(&self, id: u32) -> Option<&RunSpec> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn n_layers(&self) -> usize {
        self.features.len()
    }

    /// Checks every invariant, opening each referenced file. Payloads of the
    /// binary containers are size-checked but not read.
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(invalid!("manifest lists no runs"));
        }
        let mut run_ids = BTreeSet::new();
        for r in &self.runs {
            if !(r.tr.is_finite() && r.tr > 0.0) {
                return Err(invalid!("run {}: TR must be > 0, got {}", r.id, r.tr));
            }
            if r.n_tr == 0 {
                return Err(invalid!("run {}: TR count must be >= 1", r.id));
            }
            if !run_ids.insert(r.id) {
                return Err(invalid!("duplicate run id {}", r.id));
            }
        }

        let atlas = Atlas::load(self.resolve(&self.atlas))?;
        if let Some(n) = self.expected_rois {
            if n != atlas.len() {
                return Err(invalid!(
                    "manifest declares {n} ROIs but atlas has {}",
                    atlas.len()
                ));
            }
        }

        if self.subjects.is_empty() {
            return Err(invalid!("manifest lists no subjects"));
        }
        let mut subject_ids = BTreeSet::new();
        for s in &self.subjects {
            if !subject_ids.insert(s.id.as_str()) {
                return Err(invalid!("duplicate subject id {:?}", s.id));
            }
            let mut seen = BTreeSet::new();
            for sr in &s.runs {
                let run = self
                    .run(sr.run)
                    .ok_or_else(|| invalid!("subject {}: unknown run {}", s.id, sr.run))?;
                if !seen.insert(sr.run) {
                    return Err(invalid!("subject {}: run {} listed twice", s.id, sr.run));
                }
                let path = self.resolve(&sr.bold);
                let info = container::inspect(&path)?;
                match info.shape.as_slice() {
                    &[rows, cols] => {
                        if rows != run.n_tr {
                            return Err(invalid!(
                                "subject {} run {}: bold matrix has {rows} rows but run declares {} TRs",
                                s.id,
                                run.id,
                                run.n_tr
                            ));
                        }
                        if cols != atlas.len() {
                            return Err(invalid!(
                                "subject {} run {}: bold has {cols} columns, atlas has {} ROIs",
                                s.id,
                                run.id,
                                atlas.len()
                            ));
                        }
                    }
                    s => return Err(invalid!("{}: bold must be 2-D, got {s:?}", path.display())),
                }
            }
            if seen != run_ids {
                return Err(invalid!("subject {} does not cover every run", s.id));
            }
        }

        let words = read_words(self.resolve(&self.words))?;
        check_words(&words, &self.runs)?;

        if self.features.is_empty() {
            return Err(invalid!("manifest lists no feature layers"));
        }
        let mut layers: Vec<u32> = self.features.iter().map(|f| f.layer).collect();
        layers.sort_unstable();
        if layers.iter().enumerate().any(|(i, &l)| l as usize != i + 1) {
            return Err(invalid!(
                "feature layers must be contiguous starting at 1, got {layers:?}"
            ));
        }
        for f in &self.features {
            let path = self.resolve(&f.path);
            let info = container::inspect(&path)?;
            match info.shape.as_slice() {
                &[rows, _] if rows == words.len() => {}
                &[rows, _] => {
                    return Err(invalid!(
                        "layer {}: feature matrix has {rows} rows but there are {} words",
                        f.layer,
                        words.len()
                    ))
                }
                s => {
                    return Err(invalid!(
                        "{}: features must be 2-D, got {s:?}",
                        path.display()
                    ))
                }
            }
        }
        Ok(())
    }
}

fn check_words(words: &[WordRecord], runs: &[RunSpec]) -> Result<()> {
    let mut idx: Vec<usize> = words.iter().map(|w| w.word_index).collect();
    idx.sort_unstable();
    if idx.iter().enumerate().any(|(i, &w)| w != i) {
        return Err(invalid!("word indices must be unique and dense from 0"));
    }
    for w in words {
        let run = runs
            .iter()
            .find(|r| r.id == w.run_id)
            .ok_or_else(|| invalid!("word {} references unknown run {}", w.word_index, w.run_id))?;
        if !(w.onset_sec >= 0.0 && w.onset_sec < run.duration()) {
            return Err(invalid!(
                "word {} onset {} s outside run {} ([0, {}) s)",
                w.word_index,
                w.onset_sec,
                run.id,
                run.duration()
            ));
        }
    }
    Ok(())
}

/// Loads and fully validates a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    m.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    m.validate()?;
    Ok(m)
}

/// A fully loaded dataset for one language.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub language: String,
    pub runs: Vec<RunSpec>,
    pub subjects: Vec<String>,
    pub atlas: Atlas,
    /// Word records sorted by `word_index`.
    pub words: Vec<WordRecord>,
    /// `features[l]` is the words x dim matrix of layer `l + 1`.
    pub features: Vec<DMatrix<f64>>,
    /// `bold[s][r]` is the TR x ROI matrix of subject `s`, run `runs[r]`.
    pub bold: Vec<Vec<DMatrix<f64>>>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let atlas = Atlas::load(manifest.resolve(&manifest.atlas))?;
        let mut words = read_words(manifest.resolve(&manifest.words))?;
        words.sort_by_key(|w| w.word_index);
        let mut layers = manifest.features.clone();
        layers.sort_by_key(|f| f.layer);
        let features = layers
            .iter()
            .map(|f| container::read_matrix(manifest.resolve(&f.path)))
            .collect::<Result<Vec<_>>>()?;
        let bold = manifest
            .subjects
            .iter()
            .map(|s| {
                let by_run: BTreeMap<u32, &PathBuf> =
                    s.runs.iter().map(|r| (r.run, &r.bold)).collect();
                manifest
                    .runs
                    .iter()
                    .map(|r| container::read_matrix(manifest.resolve(by_run[&r.id])))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            language: manifest.language.clone(),
            runs: manifest.runs.clone(),
            subjects: manifest.subjects.iter().map(|s| s.id.clone()).collect(),
            atlas,
            words,
            features,
            bold,
        })
    }

    pub fn n_rois(&self) -> usize {
        self.atlas.len()
    }

    pub fn n_layers(&self) -> usize {
        self.features.len()
    }

    /// Words of one run, paired with their feature-row index.
    pub fn run_words(&self, run_id: u32) -> Vec<&WordRecord> {
        self.words.iter().filter(|w| w.run_id == run_id).collect()
    }

    /// Writes every file under `dir` and returns the manifest, which is also
    /// saved as `dir/manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(dir)?;
        mkdir(&dir.join("features"))?;
        mkdir(&dir.join("bold"))?;

        self.atlas.save(dir.join("atlas.csv"))?;
        write_words(&self.words, dir.join("words.jsonl"))?;
        let mut features = Vec::new();
        for (l, f) in self.features.iter().enumerate() {
            let rel = PathBuf::from(format!("features/layer{:02}.enc", l + 1));
            container::write_matrix(f, Dtype::F64, dir.join(&rel))?;
            features.push(LayerSpec {
                layer: l as u32 + 1,
                path: rel,
            });
        }
        let mut subjects = Vec::new();
        for (s, id) in self.subjects.iter().enumerate() {
            let mut runs = Vec::new();
            for (r, run) in self.runs.iter().enumerate() {
                let rel = PathBuf::from(format!("bold/{id}_run-{}.enc", run.id));
                container::write_matrix(&self.bold[s][r], Dtype::F64, dir.join(&rel))?;
                runs.push(SubjectRun {
                    run: run.id,
                    bold: rel,
                });
            }
            subjects.push(SubjectSpec {
                id: id.clone(),
                runs,
            });
        }
        let manifest = DatasetManifest {
            language: self.language.clone(),
            atlas: "atlas.csv".into(),
            words: "words.jsonl".into(),
            runs: self.runs.clone(),
            subjects,
            features,
            expected_rois: Some(self.atlas.len()),
            root: dir.to_path_buf(),
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}
