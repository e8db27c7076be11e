use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::fdr::bh_fdr;
use super::lmm::LmmRow;
use super::signflip::{signflip_paired, Sidedness, SignFlipConfig};
use super::ttest::one_sample_t_one_sided;
use crate::encoder::ScoreTensor;
use crate::error::{dim_err, invalid, Error, Result};
use crate::io::write_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    OneSampleT,
    SignFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDescriptor {
    pub kind: TestKind,
    pub sidedness: Sidedness,
    pub n_subjects: usize,
    pub fdr_q: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_permutations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Layers the map was computed from (one for t maps, two for contrasts).
    pub layers: Vec<u32>,
}

/// Per-ROI test results after BH correction.
#[derive(Debug, Clone, PartialEq)]
pub struct StatMap {
    pub rois: Vec<u32>,
    /// Test statistic: t for one-sample maps, mean difference for sign flips.
    pub stat: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub significant: Vec<bool>,
    /// Effect carried by the map: group-mean score or mean difference.
    pub value: Vec<f64>,
    pub descriptor: TestDescriptor,
}

impl StatMap {
    pub fn n_significant(&self) -> usize {
        self.significant.iter().filter(|&&s| s).count()
    }

    /// `value` on significant ROIs, NaN elsewhere.
    pub fn masked(&self) -> Vec<f64> {
        self.value
            .iter()
            .zip(&self.significant)
            .map(|(&v, &s)| if s { v } else { f64::NAN })
            .collect()
    }

    /// CSV with columns `roi_id,stat,p,q,significant`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(
            path,
            &["roi_id", "stat", "p", "q", "significant"],
            (0..self.rois.len()).map(|i| {
                [
                    self.rois[i].to_string(),
                    self.stat[i].to_string(),
                    self.p[i].to_string(),
                    self.q[i].to_string(),
                    (self.significant[i] as u8).to_string(),
                ]
            }),
        )
    }

    pub fn write_descriptor(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.descriptor).expect("descriptor serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// One-sided t test against zero per ROI, BH-corrected across ROIs.
///
/// Subjects with a non-finite score at an ROI are skipped for that ROI; an ROI
/// left with fewer than two subjects gets `t = NaN, p = 1`.
pub fn significance_map(scores: &ScoreTensor, layer: u32, q: f64) -> Result<StatMap> {
    if scores.n_subjects() < 2 {
        return Err(invalid!("significance map needs >= 2 subjects"));
    }
    let l = scores.layer_index(layer)?;
    let mut stat = Vec::with_capacity(scores.n_rois());
    let mut p = Vec::with_capacity(scores.n_rois());
    for r in 0..scores.n_rois() {
        let x: Vec<f64> = (0..scores.n_subjects())
            .map(|s| scores.get(s, l, r))
            .filter(|v| v.is_finite())
            .collect();
        if x.len() < 2 {
            stat.push(f64::NAN);
            p.push(1.0);
        } else {
            let t = one_sample_t_one_sided(&x)?;
            stat.push(t.t);
            p.push(t.p);
        }
    }
    let bh = bh_fdr(&p, q)?;
    Ok(StatMap {
        rois: scores.rois.clone(),
        stat,
        p,
        q: bh.q,
        significant: bh.rejected,
        value: scores.group_mean(l),
        descriptor: TestDescriptor {
            kind: TestKind::OneSampleT,
            sidedness: Sidedness::Greater,
            n_subjects: scores.n_subjects(),
            fdr_q: q,
            exact: None,
            n_permutations: None,
            seed: None,
            layers: vec![layer],
        },
    })
}

fn signflip_map(
    diffs: &DMatrix<f64>,
    rois: &[u32],
    config: &SignFlipConfig,
    q: f64,
    layers: Vec<u32>,
) -> Result<StatMap> {
    let res = signflip_paired(diffs, config)?;
    let bh = bh_fdr(&res.p, q)?;
    Ok(StatMap {
        rois: rois.to_vec(),
        value: res.stat.clone(),
        stat: res.stat,
        p: res.p,
        q: bh.q,
        significant: bh.rejected,
        descriptor: TestDescriptor {
            kind: TestKind::SignFlip,
            sidedness: config.sidedness,
            n_subjects: diffs.nrows(),
            fdr_q: q,
            exact: Some(res.exact),
            n_permutations: Some(res.n_patterns),
            seed: if res.exact { None } else { Some(config.seed) },
            layers,
        },
    })
}

/// Layer x layer matrix of the fraction of ROIs whose scores differ
/// significantly between the two layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFractions {
    pub layers: Vec<u32>,
    pub fraction: DMatrix<f64>,
}

impl LayerFractions {
    /// Square CSV: `layer` column then one column per layer.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let names: Vec<String> = self.layers.iter().map(|l| l.to_string()).collect();
        let mut header = vec!["layer"];
        header.extend(names.iter().map(String::as_str));
        write_csv(
            path,
            &header,
            self.layers.iter().enumerate().map(|(i, l)| {
                std::iter::once(l.to_string())
                    .chain((0..self.layers.len()).map(|j| self.fraction[(i, j)].to_string()))
                    .collect::<Vec<_>>()
            }),
        )
    }
}

/// Two-sided sign-flip test for every pair of layers, BH across ROIs, and the
/// fraction of significant ROIs. Symmetric with a zero diagonal.
pub fn layer_pair_fractions(
    scores: &ScoreTensor,
    q: f64,
    config: &SignFlipConfig,
) -> Result<LayerFractions> {
    let nl = scores.n_layers();
    if nl < 2 {
        return Err(invalid!("layer comparison needs >= 2 layers, got {nl}"));
    }
    let config = SignFlipConfig {
        sidedness: Sidedness::TwoSided,
        ..*config
    };
    let mats: Vec<DMatrix<f64>> = (0..nl).map(|l| scores.layer_matrix(l)).collect();
    let mut fraction = DMatrix::zeros(nl, nl);
    for i in 0..nl {
        for j in i + 1..nl {
            let diffs = &mats[i] - &mats[j];
            let map = signflip_map(
                &diffs,
                &scores.rois,
                &config,
                q,
                vec![scores.layers[i], scores.layers[j]],
            )?;
            let f = map.n_significant() as f64 / scores.n_rois() as f64;
            fraction[(i, j)] = f;
            fraction[(j, i)] = f;
        }
    }
    Ok(LayerFractions {
        layers: scores.layers.clone(),
        fraction,
    })
}

/// Per-ROI sign-flip test on `A(layer_a) − B(layer_b)`, BH across ROIs.
pub fn model_compare(
    a: &ScoreTensor,
    layer_a: u32,
    b: &ScoreTensor,
    layer_b: u32,
    config: &SignFlipConfig,
    q: f64,
) -> Result<StatMap> {
    if !a.same_space(b) {
        return Err(dim_err!(
            "score tensors disagree on subjects or ROIs ({}x{} vs {}x{})",
            a.n_subjects(),
            a.n_rois(),
            b.n_subjects(),
            b.n_rois()
        ));
    }
    let diffs = a.layer_matrix(a.layer_index(layer_a)?) - b.layer_matrix(b.layer_index(layer_b)?);
    signflip_map(&diffs, &a.rois, config, q, vec![layer_a, layer_b])
}

/// Long-format rows for the pooled mixed model: model label 1 for `a`, 0 for
/// `b`. Non-finite scores are dropped.
pub fn model_contrast_rows(
    a: &ScoreTensor,
    layer_a: u32,
    b: &ScoreTensor,
    layer_b: u32,
) -> Result<Vec<LmmRow>> {
    if !a.same_space(b) {
        return Err(dim_err!("score tensors disagree on subjects or ROIs"));
    }
    let (la, lb) = (a.layer_index(layer_a)?, b.layer_index(layer_b)?);
    let mut rows = Vec::with_capacity(2 * a.n_subjects() * a.n_rois());
    for s in 0..a.n_subjects() {
        for r in 0..a.n_rois() {
            for (model, t, l) in [(1, a, la), (0, b, lb)] {
                let score = t.get(s, l, r);
                if score.is_finite() {
                    rows.push(LmmRow {
                        subject: s,
                        roi: r,
                        model,
                        score,
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(
        n_s: usize,
        n_l: usize,
        n_r: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> ScoreTensor {
        let mut v = Vec::new();
        for s in 0..n_s {
            for l in 0..n_l {
                for r in 0..n_r {
                    v.push(f(s, l, r));
                }
            }
        }
        ScoreTensor::new(
            (0..n_s).map(|s| format!("s{s}")).collect(),
            (1..=n_l as u32).collect(),
            (0..n_r as u32).collect(),
            v,
        )
        .unwrap()
    }

    #[test]
    fn all_zero_scores_give_empty_mask() {
        let t = tensor(6, 1, 10, |_, _, _| 0.0);
        let m = significance_map(&t, 1, 0.05).unwrap();
        assert_eq!(m.n_significant(), 0);
        assert!(m.masked().iter().all(|v| v.is_nan()));
    }

    #[test]
    fn masked_is_nan_exactly_off_mask() {
        let t = tensor(
            8,
            1,
            4,
            |s, _, r| if r < 2 { 0.3 + 0.01 * s as f64 } else { 0.0 },
        );
        let m = significance_map(&t, 1, 0.05).unwrap();
        let masked = m.masked();
        for (v, sig) in masked.iter().zip(&m.significant) {
            assert_eq!(v.is_nan(), !sig);
        }
        assert_eq!(m.n_significant(), 2);
    }

    #[test]
    fn identical_layers_have_zero_fraction() {
        let t = tensor(5, 2, 6, |s, _, r| (s * 3 + r) as f64 * 0.01);
        let f = layer_pair_fractions(&t, 0.05, &SignFlipConfig::default()).unwrap();
        assert_eq!(f.fraction[(0, 1)], 0.0);
        assert_eq!(f.fraction[(0, 0)], 0.0);
    }

    #[test]
    fn model_compare_equal_inputs() {
        let t = tensor(6, 1, 5, |s, _, r| (s + r) as f64 * 0.02);
        let m = model_compare(&t, 1, &t, 1, &SignFlipConfig::default(), 0.05).unwrap();
        assert!(m.p.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn model_compare_shape_mismatch() {
        let a = tensor(6, 1, 5, |_, _, _| 0.0);
        let b = tensor(6, 1, 4, |_, _, _| 0.0);
        assert!(model_compare(&a, 1, &b, 1, &SignFlipConfig::default(), 0.05).is_err());
    }

    #[test]
    fn single_layer_rejected() {
        let t = tensor(4, 1, 3, |_, _, _| 0.0);
        assert!(layer_pair_fractions(&t, 0.05, &SignFlipConfig::default()).is_err());
    }
}
