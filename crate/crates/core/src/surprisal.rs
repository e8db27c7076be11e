//! Layer-wise pseudo-log-likelihood surprisal: token values summed into words,
//! averaged into layer curves and run profiles, and compared across languages.
//!
//! A token table is an `ENC1` matrix (tokens x layers) of `-ln p` in nats plus
//! a JSON-lines sidecar with one [`TokenRecord`] per row.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::encoder::pearson;
use crate::error::{dim_err, invalid, Error, Result};
use crate::io::{read_jsonl, read_matrix, write_csv};
use crate::maps::{Convergence, LANGUAGE_PAIRS};

/// Alignment of one token row to its word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    /// Row of the token in the surprisal matrix.
    pub token: usize,
    /// Word index in the language's word records.
    pub word: usize,
    pub sentence: u32,
    pub run: u32,
    /// Position of the token within its sentence.
    pub position: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    /// tokens x layers, `-ln p` in nats.
    pub surprisal: DMatrix<f64>,
    pub tokens: Vec<TokenRecord>,
}

impl TokenTable {
    pub fn new(surprisal: DMatrix<f64>, tokens: Vec<TokenRecord>) -> Result<Self> {
        if surprisal.nrows() != tokens.len() {
            return Err(dim_err!(
                "{} surprisal rows for {} token records",
                surprisal.nrows(),
                tokens.len()
            ));
        }
        if let Some((i, t)) = tokens.iter().enumerate().find(|(i, t)| t.token != *i) {
            return Err(invalid!("token record {i} claims row {}", t.token));
        }
        if let Some(v) = surprisal.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Numeric(format!(
                "surprisal must be finite and >= 0, got {v}"
            )));
        }
        Ok(TokenTable { surprisal, tokens })
    }

    pub fn load(matrix: impl AsRef<Path>, alignment: impl AsRef<Path>) -> Result<Self> {
        TokenTable::new(read_matrix(matrix)?, read_jsonl(alignment)?)
    }

    pub fn n_layers(&self) -> usize {
        self.surprisal.ncols()
    }
}

/// Word x layer surprisal.
#[derive(Debug, Clone, PartialEq)]
pub struct SurprisalTable {
    pub values: DMatrix<f64>,
    /// Run of each word.
    pub runs: Vec<u32>,
}

impl SurprisalTable {
    pub fn n_words(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_layers(&self) -> usize {
        self.values.ncols()
    }

    /// CSV with columns `word,run,layer1..layerL`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let names: Vec<String> = (1..=self.n_layers()).map(|l| format!("layer{l}")).collect();
        let mut header = vec!["word", "run"];
        header.extend(names.iter().map(String::as_str));
        write_csv(
            path,
            &header,
            (0..self.n_words()).map(|w| {
                [w.to_string(), self.runs[w].to_string()]
                    .into_iter()
                    .chain(self.values.row(w).iter().map(|v| v.to_string()))
                    .collect::<Vec<_>>()
            }),
        )
    }
}

/// Sums token surprisal into words `0..=max word`. Every word must have at
/// least one token, and all tokens of a word must share a run.
pub fn aggregate_word_surprisal(table: &TokenTable) -> Result<SurprisalTable> {
    let n_words = table
        .tokens
        .iter()
        .map(|t| t.word + 1)
        .max()
        .ok_or_else(|| invalid!("token table is empty"))?;
    let mut values = DMatrix::zeros(n_words, table.n_layers());
    let mut runs: Vec<Option<u32>> = vec![None; n_words];
    for (i, t) in table.tokens.iter().enumerate() {
        match runs[t.word] {
            Some(r) if r != t.run => {
                return Err(invalid!(
                    "word {} has tokens in runs {r} and {}",
                    t.word,
                    t.run
                ));
            }
            _ => runs[t.word] = Some(t.run),
        }
        for l in 0..table.n_layers() {
            values[(t.word, l)] += table.surprisal[(i, l)];
        }
    }
    let runs = runs
        .into_iter()
        .enumerate()
        .map(|(w, r)| r.ok_or_else(|| invalid!("word {w} has no aligned tokens")))
        .collect::<Result<_>>()?;
    Ok(SurprisalTable { values, runs })
}

/// Mean word surprisal per layer.
pub fn layer_mean_surprisal(table: &SurprisalTable) -> Result<Vec<f64>> {
    if table.n_words() == 0 {
        return Err(invalid!("surprisal table has no words"));
    }
    let n = table.n_words() as f64;
    Ok(table.values.column_iter().map(|c| c.sum() / n).collect())
}

/// Mean word surprisal per (run, layer).
#[derive(Debug, Clone, PartialEq)]
pub struct RunProfile {
    /// Ascending.
    pub runs: Vec<u32>,
    /// runs x layers.
    pub means: DMatrix<f64>,
}

impl RunProfile {
    fn row(&self, run: u32) -> usize {
        self.runs.binary_search(&run).expect("run present")
    }
}

pub fn run_profile(table: &SurprisalTable) -> RunProfile {
    let runs: Vec<u32> = table
        .runs
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut means = DMatrix::zeros(runs.len(), table.n_layers());
    let mut counts = vec![0usize; runs.len()];
    for (w, run) in table.runs.iter().enumerate() {
        let r = runs.binary_search(run).expect("run present");
        counts[r] += 1;
        for l in 0..table.n_layers() {
            means[(r, l)] += table.values[(w, l)];
        }
    }
    for (r, &c) in counts.iter().enumerate() {
        means.row_mut(r).unscale_mut(c as f64);
    }
    RunProfile { runs, means }
}

/// Per layer, Pearson across shared runs between every pair of three
/// languages' run profiles. Pairs with a constant profile are missing.
pub fn surprisal_convergence(tables: [&SurprisalTable; 3]) -> Result<Convergence> {
    let n_layers = tables[0].n_layers();
    if tables.iter().any(|t| t.n_layers() != n_layers) {
        return Err(dim_err!("surprisal tables disagree on layer count"));
    }
    let profiles = tables.map(run_profile);
    let shared: Vec<u32> = profiles[0]
        .runs
        .iter()
        .copied()
        .filter(|r| profiles[1..].iter().all(|p| p.runs.contains(r)))
        .collect();
    if shared.len() < 2 {
        return Err(invalid!(
            "surprisal convergence needs >= 2 runs shared by all languages, got {}",
            shared.len()
        ));
    }
    let series = |p: &RunProfile, l: usize| -> Vec<f64> {
        shared.iter().map(|&r| p.means[(p.row(r), l)]).collect()
    };
    let mut pairs = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let mut out = [None; 3];
        for (k, &(a, b)) in LANGUAGE_PAIRS.iter().enumerate() {
            let r = pearson(&series(&profiles[a], l), &series(&profiles[b], l))?;
            out[k] = r.is_finite().then_some(r);
        }
        pairs.push(out);
    }
    Ok(Convergence::from_pairs(
        (1..=n_layers as u32).collect(),
        pairs,
    ))
}
