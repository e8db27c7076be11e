//! Intrinsic dimension of embedding clouds by the two-nearest-neighbor
//! maximum-likelihood estimator `d = N / Σ ln(r₂/r₁)`.

mod kdtree;

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{dim_err, invalid, Error, Result};
use crate::io::write_csv;
use crate::rng;

pub use kdtree::{sq_dist, KdTree};

/// Nearest-neighbor distances below this count as duplicates.
pub const DUPLICATE_DIST: f64 = 1e-12;
/// Mean `ln μ` at or below this is treated as zero.
const RATIO_LOG_FLOOR: f64 = 1e-12;
/// Default subsample cap per estimate.
pub const DEFAULT_MAX_N: usize = 8000;

/// Row-major point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(dim_err!(
                "{} coordinates do not form {dim}-D points",
                coords.len()
            ));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "point cloud has non-finite coordinates".into(),
            ));
        }
        Ok(PointCloud { dim, coords })
    }

    /// One point per matrix row.
    pub fn from_rows(m: &DMatrix<f64>) -> Result<Self> {
        let mut coords = Vec::with_capacity(m.len());
        for row in m.row_iter() {
            coords.extend(row.iter());
        }
        PointCloud::new(m.ncols().max(1), coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Points at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i));
        }
        PointCloud {
            dim: self.dim,
            coords,
        }
    }
}

/// Scales each row to unit Euclidean norm. All-zero rows are dropped; the
/// second value is how many.
pub fn l2_normalize_rows(points: &PointCloud) -> (PointCloud, usize) {
    let mut coords = Vec::with_capacity(points.coords.len());
    let mut dropped = 0;
    for i in 0..points.len() {
        let p = points.point(i);
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            dropped += 1;
            continue;
        }
        coords.extend(p.iter().map(|v| v / norm));
    }
    (
        PointCloud {
            dim: points.dim,
            coords,
        },
        dropped,
    )
}

/// First and second nearest-neighbor distances of the retained points.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRatios {
    /// Indices into the input cloud of the retained points.
    pub retained: Vec<usize>,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    /// `r2 / r1`.
    pub mu: Vec<f64>,
    pub duplicates_removed: usize,
}

impl NeighborRatios {
    pub fn n(&self) -> usize {
        self.retained.len()
    }
}

fn nearest_two_all(cloud: &PointCloud) -> Vec<(f64, f64)> {
    let tree = KdTree::new(&cloud.coords, cloud.dim);
    (0..cloud.len())
        .into_par_iter()
        .map(|i| tree.nearest_two(i))
        .collect()
}

/// Exact two-nearest-neighbor distances. Points whose nearest neighbor lies
/// closer than [`DUPLICATE_DIST`] are removed (every member of a duplicate
/// group), and neighbors are recomputed on the rest.
pub fn two_nn_ratios(points: &PointCloud) -> Result<NeighborRatios> {
    if points.len() < 3 {
        return Err(invalid!("2NN needs >= 3 points, got {}", points.len()));
    }
    let first = nearest_two_all(points);
    let retained: Vec<usize> = (0..points.len())
        .filter(|&i| first[i].0.sqrt() >= DUPLICATE_DIST)
        .collect();
    let duplicates_removed = points.len() - retained.len();
    if retained.len() < 3 {
        return Err(invalid!(
            "2NN needs >= 3 distinct points, {} remain after removing {duplicates_removed} duplicates",
            retained.len()
        ));
    }
    let nn = if duplicates_removed == 0 {
        first
    } else {
        nearest_two_all(&points.select(&retained))
    };
    let r1: Vec<f64> = nn.iter().map(|d| d.0.sqrt()).collect();
    let r2: Vec<f64> = nn.iter().map(|d| d.1.sqrt()).collect();
    let mu = r1.iter().zip(&r2).map(|(a, b)| b / a).collect();
    Ok(NeighborRatios {
        retained,
        r1,
        r2,
        mu,
        duplicates_removed,
    })
}

/// One intrinsic-dimension estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct IdEstimate {
    pub id: f64,
    /// Points entering the estimator after subsampling and deduplication.
    pub n_used: usize,
    pub duplicates_removed: usize,
    /// Set when the estimate exceeds twice the ambient dimension.
    pub exceeds_bound: bool,
}

/// Indices of a seeded subsample without replacement, sorted ascending; all
/// indices when `n <= max_n`.
pub fn subsample_indices(n: usize, max_n: usize, seed: u64) -> Vec<usize> {
    if n <= max_n {
        return (0..n).collect();
    }
    let mut r = rng::stream(seed, 0);
    let mut idx = sample(&mut r, n, max_n).into_vec();
    idx.sort_unstable();
    idx
}

/// 2NN maximum-likelihood intrinsic dimension on at most `max_n` points drawn
/// with `seed`.
pub fn two_nn_id(points: &PointCloud, max_n: usize, seed: u64) -> Result<IdEstimate> {
    if max_n < 3 {
        return Err(invalid!("max_n must be >= 3, got {max_n}"));
    }
    let idx = subsample_indices(points.len(), max_n, seed);
    let sub = if idx.len() == points.len() {
        points.clone()
    } else {
        points.select(&idx)
    };
    let ratios = two_nn_ratios(&sub)?;
    let sum_log: f64 = ratios.mu.iter().map(|m| m.ln()).sum();
    if sum_log <= RATIO_LOG_FLOOR * ratios.n() as f64 {
        return Err(Error::Numeric(
            "all neighbor ratios equal 1; intrinsic dimension undefined".into(),
        ));
    }
    let id = ratios.n() as f64 / sum_log;
    Ok(IdEstimate {
        id,
        n_used: ratios.n(),
        duplicates_removed: ratios.duplicates_removed,
        exceeds_bound: id > 2.0 * points.dim() as f64,
    })
}

/// One row of an ID curve.
#[derive(Debug, Clone, PartialEq)]
pub struct IdRecord {
    pub language: String,
    pub layer: u32,
    /// `None` for the estimate pooled over all runs.
    pub run: Option<u32>,
    pub estimate: IdEstimate,
}

/// Estimates per run on the points belonging to each run, sharing `seed`.
pub fn id_per_run(
    points: &PointCloud,
    runs: &[u32],
    max_n: usize,
    seed: u64,
) -> Result<Vec<(u32, IdEstimate)>> {
    if runs.len() != points.len() {
        return Err(dim_err!(
            "{} run labels for {} points",
            runs.len(),
            points.len()
        ));
    }
    let mut ids: Vec<u32> = runs.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.par_iter()
        .map(|&run| {
            let idx: Vec<usize> = (0..runs.len()).filter(|&i| runs[i] == run).collect();
            Ok((run, two_nn_id(&points.select(&idx), max_n, seed)?))
        })
        .collect()
}

/// Writes records as CSV with columns
/// `language,layer,run,n_used,duplicates_removed,id,exceeds_bound`; pooled
/// rows have an empty `run`.
pub fn write_id_csv(records: &[IdRecord], path: impl AsRef<Path>) -> Result<()> {
    write_csv(
        path,
        &[
            "language",
            "layer",
            "run",
            "n_used",
            "duplicates_removed",
            "id",
            "exceeds_bound",
        ],
        records.iter().map(|r| {
            [
                r.language.clone(),
                r.layer.to_string(),
                r.run.map(|v| v.to_string()).unwrap_or_default(),
                r.estimate.n_used.to_string(),
                r.estimate.duplicates_removed.to_string(),
                r.estimate.id.to_string(),
                (r.estimate.exceeds_bound as u8).to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let c = PointCloud::new(2, vec![3.0, 4.0]).unwrap();
        let (n, dropped) = l2_normalize_rows(&c);
        assert_eq!(dropped, 0);
        assert!((n.point(0)[0] - 0.6).abs() < 1e-15);
        assert!((n.point(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_row_dropped() {
        let c = PointCloud::new(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let (n, dropped) = l2_normalize_rows(&c);
        assert_eq!((n.len(), dropped), (1, 1));
    }

    #[test]
    fn duplicate_pair_removed() {
        let c = PointCloud::new(1, vec![0.0, 1.0, 3.0, 7.0, 7.0]).unwrap();
        let r = two_nn_ratios(&c).unwrap();
        assert_eq!(r.duplicates_removed, 2);
        assert_eq!(r.retained, vec![0, 1, 2]);
        assert_eq!(r.mu, vec![3.0, 2.0, 1.5]);
    }

    #[test]
    fn too_few_points() {
        let c = PointCloud::new(1, vec![0.0, 1.0]).unwrap();
        assert!(two_nn_ratios(&c).is_err());
        let d = PointCloud::new(1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(two_nn_ratios(&d).is_err());
    }

    #[test]
    fn ring_lattice_is_undefined() {
        let pts: Vec<f64> = (0..12)
            .flat_map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 12.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let c = PointCloud::new(2, pts).unwrap();
        let r = two_nn_ratios(&c).unwrap();
        assert!(r.mu.iter().all(|m| (m - 1.0).abs() < 1e-9));
        assert!(matches!(two_nn_id(&c, 100, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn subsample_is_seeded_and_sorted() {
        let a = subsample_indices(100, 10, 7);
        assert_eq!(a, subsample_indices(100, 10, 7));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_indices(5, 10, 7), vec![0, 1, 2, 3, 4]);
    }
}
