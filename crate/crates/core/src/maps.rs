//! Spatial analytics over ROI maps: cross-lingual overlap classes, preferred
//! layers, network profiles and layer-wise convergence across languages.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::encoder::{pearson, ScoreTensor};
use crate::error::{dim_err, invalid, Result};
use crate::io::{write_csv, Atlas, Network};

/// Overlap class of one ROI across three languages, by mask triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OverlapCategory {
    None,
    Only1,
    Only2,
    Only3,
    Pair12,
    Pair13,
    Pair23,
    SharedAll,
}

/// The four classes shown in figures: pairs collapse into `Partial`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FigureCategory {
    None,
    /// Significant in this language only (0-based).
    Only(usize),
    Partial,
    SharedAll,
}

impl OverlapCategory {
    pub const ALL: [OverlapCategory; 8] = [
        OverlapCategory::None,
        OverlapCategory::Only1,
        OverlapCategory::Only2,
        OverlapCategory::Only3,
        OverlapCategory::Pair12,
        OverlapCategory::Pair13,
        OverlapCategory::Pair23,
        OverlapCategory::SharedAll,
    ];

    pub fn from_masks(a: bool, b: bool, c: bool) -> Self {
        use OverlapCategory::*;
        match (a, b, c) {
            (false, false, false) => None,
            (true, false, false) => Only1,
            (false, true, false) => Only2,
            (false, false, true) => Only3,
            (true, true, false) => Pair12,
            (true, false, true) => Pair13,
            (false, true, true) => Pair23,
            (true, true, true) => SharedAll,
        }
    }

    pub fn figure(self) -> FigureCategory {
        use OverlapCategory::*;
        match self {
            None => FigureCategory::None,
            Only1 => FigureCategory::Only(0),
            Only2 => FigureCategory::Only(1),
            Only3 => FigureCategory::Only(2),
            Pair12 | Pair13 | Pair23 => FigureCategory::Partial,
            SharedAll => FigureCategory::SharedAll,
        }
    }

    /// Label with language names substituted, e.g. `only-fr`, `pair-fr-en`.
    pub fn label(self, languages: &[&str; 3]) -> String {
        use OverlapCategory::*;
        match self {
            None => "none".into(),
            Only1 => format!("only-{}", languages[0]),
            Only2 => format!("only-{}", languages[1]),
            Only3 => format!("only-{}", languages[2]),
            Pair12 => format!("pair-{}-{}", languages[0], languages[1]),
            Pair13 => format!("pair-{}-{}", languages[0], languages[2]),
            Pair23 => format!("pair-{}-{}", languages[1], languages[2]),
            SharedAll => "shared-all".into(),
        }
    }
}

impl FigureCategory {
    pub fn label(self, languages: &[&str; 3]) -> String {
        match self {
            FigureCategory::None => "none".into(),
            FigureCategory::Only(i) => format!("only-{}", languages[i]),
            FigureCategory::Partial => "partial".into(),
            FigureCategory::SharedAll => "shared-all".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMap {
    pub categories: Vec<OverlapCategory>,
}

impl OverlapMap {
    /// Counts in [`OverlapCategory::ALL`] order.
    pub fn counts(&self) -> [usize; 8] {
        let mut c = [0; 8];
        for &cat in &self.categories {
            c[cat as usize] += 1;
        }
        c
    }

    pub fn count(&self, cat: OverlapCategory) -> usize {
        self.categories.iter().filter(|&&c| c == cat).count()
    }

    pub fn figure(&self) -> Vec<FigureCategory> {
        self.categories.iter().map(|c| c.figure()).collect()
    }

    /// CSV with columns `roi_id,category,figure_category`.
    pub fn write_csv(
        &self,
        rois: &[u32],
        languages: &[&str; 3],
        path: impl AsRef<Path>,
    ) -> Result<()> {
        if rois.len() != self.categories.len() {
            return Err(dim_err!(
                "{} ROI ids for {} categories",
                rois.len(),
                self.categories.len()
            ));
        }
        write_csv(
            path,
            &["roi_id", "category", "figure_category"],
            rois.iter().zip(&self.categories).map(|(r, c)| {
                [
                    r.to_string(),
                    c.label(languages),
                    c.figure().label(languages),
                ]
            }),
        )
    }
}

/// Classifies every ROI by which of three language masks mark it significant.
pub fn overlap_categories(masks: [&[bool]; 3]) -> Result<OverlapMap> {
    let n = masks[0].len();
    if masks.iter().any(|m| m.len() != n) {
        return Err(dim_err!(
            "mask lengths differ: {}, {}, {}",
            masks[0].len(),
            masks[1].len(),
            masks[2].len()
        ));
    }
    Ok(OverlapMap {
        categories: (0..n)
            .map(|i| OverlapCategory::from_masks(masks[0][i], masks[1][i], masks[2][i]))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferredLayerMap {
    pub layers: Vec<u32>,
    /// Best layer per ROI; `None` when no layer has a finite score.
    pub best: Vec<Option<u32>>,
    /// Group-mean score at the best layer; NaN when `best` is `None`.
    pub score: Vec<f64>,
}

impl PreferredLayerMap {
    /// CSV with columns `roi_id,preferred_layer,score`; empty layer when undefined.
    pub fn write_csv(&self, rois: &[u32], path: impl AsRef<Path>) -> Result<()> {
        if rois.len() != self.best.len() {
            return Err(dim_err!(
                "{} ROI ids for {} ROIs",
                rois.len(),
                self.best.len()
            ));
        }
        write_csv(
            path,
            &["roi_id", "preferred_layer", "score"],
            (0..rois.len()).map(|i| {
                [
                    rois[i].to_string(),
                    self.best[i].map(|l| l.to_string()).unwrap_or_default(),
                    self.score[i].to_string(),
                ]
            }),
        )
    }
}

/// Argmax over layers of a layers x ROIs group-mean matrix, ignoring
/// non-finite entries. Ties go to the lowest layer.
pub fn preferred_layer(means: &DMatrix<f64>, layers: &[u32]) -> Result<PreferredLayerMap> {
    if layers.is_empty() {
        return Err(invalid!("preferred layer needs >= 1 layer"));
    }
    if means.nrows() != layers.len() {
        return Err(dim_err!(
            "{} layer ids for {} matrix rows",
            layers.len(),
            means.nrows()
        ));
    }
    let mut best = Vec::with_capacity(means.ncols());
    let mut score = Vec::with_capacity(means.ncols());
    for col in means.column_iter() {
        let mut arg: Option<usize> = None;
        for (l, &v) in col.iter().enumerate() {
            if v.is_finite() && arg.is_none_or(|a| v > col[a]) {
                arg = Some(l);
            }
        }
        best.push(arg.map(|l| layers[l]));
        score.push(arg.map_or(f64::NAN, |l| col[l]));
    }
    Ok(PreferredLayerMap {
        layers: layers.to_vec(),
        best,
        score,
    })
}

/// Sets entries to NaN where the matching per-layer mask is false.
/// `masks[l]` is the significance mask of layer row `l`.
pub fn mask_layers(means: &DMatrix<f64>, masks: &[Vec<bool>]) -> Result<DMatrix<f64>> {
    if masks.len() != means.nrows() || masks.iter().any(|m| m.len() != means.ncols()) {
        return Err(dim_err!(
            "masks do not match a {}x{} map",
            means.nrows(),
            means.ncols()
        ));
    }
    Ok(DMatrix::from_fn(means.nrows(), means.ncols(), |l, r| {
        if masks[l][r] {
            means[(l, r)]
        } else {
            f64::NAN
        }
    }))
}

/// Mean group score per (network, layer).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkProfile {
    pub language: String,
    /// Networks with at least one ROI, in [`Network::ALL`] order.
    pub networks: Vec<Network>,
    pub n_rois: Vec<usize>,
    pub layers: Vec<u32>,
    /// networks x layers.
    pub values: DMatrix<f64>,
}

impl NetworkProfile {
    /// Long CSV with columns `language,network,layer,n_rois,mean_score`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut rows = Vec::new();
        for (i, net) in self.networks.iter().enumerate() {
            for (l, layer) in self.layers.iter().enumerate() {
                rows.push([
                    self.language.clone(),
                    net.to_string(),
                    layer.to_string(),
                    self.n_rois[i].to_string(),
                    self.values[(i, l)].to_string(),
                ]);
            }
        }
        write_csv(
            path,
            &["language", "network", "layer", "n_rois", "mean_score"],
            rows,
        )
    }
}

/// Averages group-mean scores over each network's ROIs for the given layers.
/// ROIs whose group mean is not finite are left out of their network's mean.
pub fn network_profile(
    language: &str,
    scores: &ScoreTensor,
    atlas: &Atlas,
    layers: &[u32],
) -> Result<NetworkProfile> {
    let networks_of: Vec<Network> = scores
        .rois
        .iter()
        .map(|&id| {
            if (id as usize) < atlas.len() {
                Ok(atlas.network(id as usize))
            } else {
                Err(invalid!("ROI {id} has no network label in the atlas"))
            }
        })
        .collect::<Result<_>>()?;
    let networks: Vec<Network> = Network::ALL
        .iter()
        .copied()
        .filter(|n| networks_of.contains(n))
        .collect();
    let n_rois = networks
        .iter()
        .map(|n| networks_of.iter().filter(|m| *m == n).count())
        .collect();
    let mut values = DMatrix::from_element(networks.len(), layers.len(), f64::NAN);
    for (l, &layer) in layers.iter().enumerate() {
        let mean = scores.group_mean(scores.layer_index(layer)?);
        for (i, net) in networks.iter().enumerate() {
            let (sum, n) = mean
                .iter()
                .zip(&networks_of)
                .filter(|(v, m)| *m == net && v.is_finite())
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            if n > 0 {
                values[(i, l)] = sum / n as f64;
            }
        }
    }
    Ok(NetworkProfile {
        language: language.to_string(),
        networks,
        n_rois,
        layers: layers.to_vec(),
        values,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson on average ranks. NaN when either side has
/// constant ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!(
            "spearman: lengths {} and {} differ",
            a.len(),
            b.len()
        ));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Language index pairs in reporting order.
pub const LANGUAGE_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Per-layer agreement between three languages' ROI maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub layers: Vec<u32>,
    /// `pairs[l][k]` for [`LANGUAGE_PAIRS`]`[k]`; `None` when missing.
    pub pairs: Vec<[Option<f64>; 3]>,
    /// Mean of absolute pairwise correlations, skipping missing pairs.
    pub mean_abs: Vec<Option<f64>>,
    /// Absolute value of the mean pairwise correlation, skipping missing pairs.
    pub abs_mean: Vec<Option<f64>>,
}

impl Convergence {
    /// Summarizes per-layer pairwise correlations.
    pub fn from_pairs(layers: Vec<u32>, pairs: Vec<[Option<f64>; 3]>) -> Self {
        let summarize = |p: &[Option<f64>; 3], f: &dyn Fn(&[f64]) -> f64| {
            let v: Vec<f64> = p.iter().flatten().copied().collect();
            (!v.is_empty()).then(|| f(&v))
        };
        let mean_abs = pairs
            .iter()
            .map(|p| {
                summarize(p, &|v| {
                    v.iter().map(|r| r.abs()).sum::<f64>() / v.len() as f64
                })
            })
            .collect();
        let abs_mean = pairs
            .iter()
            .map(|p| summarize(p, &|v| (v.iter().sum::<f64>() / v.len() as f64).abs()))
            .collect();
        Convergence {
            layers,
            pairs,
            mean_abs,
            abs_mean,
        }
    }

    /// CSV with columns `layer,pair,r` (empty `r` when missing) followed by
    /// summary rows labelled `mean_abs` and `abs_mean`.
    pub fn write_csv(&self, languages: &[&str; 3], path: impl AsRef<Path>) -> Result<()> {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut rows = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (k, (a, b)) in LANGUAGE_PAIRS.iter().enumerate() {
                rows.push([
                    layer.to_string(),
                    format!("{}-{}", languages[*a], languages[*b]),
                    fmt(self.pairs[l][k]),
                ]);
            }
            rows.push([layer.to_string(), "mean_abs".into(), fmt(self.mean_abs[l])]);
            rows.push([layer.to_string(), "abs_mean".into(), fmt(self.abs_mean[l])]);
        }
        write_csv(path, &["layer", "pair", "r"], rows)
    }
}

/// Spearman across ROIs between every pair of three languages' masked maps
/// (layers x ROIs, NaN off-mask), using ROIs finite in both maps. A pair is
/// missing when fewer than two such ROIs remain or a side has constant ranks.
pub fn map_convergence(maps: [&DMatrix<f64>; 3], layers: &[u32]) -> Result<Convergence> {
    let shape = maps[0].shape();
    if maps.iter().any(|m| m.shape() != shape) {
        return Err(dim_err!("convergence maps have different shapes"));
    }
    if shape.0 != layers.len() {
        return Err(dim_err!(
            "{} layer ids for {} map rows",
            layers.len(),
            shape.0
        ));
    }
    let pairs = (0..layers.len())
        .map(|l| {
            let mut out = [None; 3];
            for (k, &(a, b)) in LANGUAGE_PAIRS.iter().enumerate() {
                let (x, y): (Vec<f64>, Vec<f64>) = (0..shape.1)
                    .map(|r| (maps[a][(l, r)], maps[b][(l, r)]))
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .unzip();
                if x.len() >= 2 {
                    let rho = spearman(&x, &y)?;
                    out[k] = rho.is_finite().then_some(rho);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Convergence::from_pairs(layers.to_vec(), pairs))
}
