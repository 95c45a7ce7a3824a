//! Per-component moment statistics and the annulus norm check.

use serde::Serialize;

use crate::error::Result;
use crate::tensor::Tensor;

use super::partition::PatchPartition;

/// Acceptance gates applied by [`GaussianityDiagnostics::passes`].
pub const MAX_SKEW: f64 = 0.5;
pub const MAX_EXCESS_KURTOSIS: f64 = 1.0;
pub const MAX_CORRELATION: f64 = 0.15;
pub const NORM_BAND: f64 = 0.05;

/// Statistics of a tensor seen through a patch partition. Entry `j` of the
/// per-component vectors describes within-patch position `j` across all
/// patches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianityDiagnostics {
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    pub pooled_skewness: f64,
    pub pooled_excess_kurtosis: f64,
    pub max_offdiag_correlation: f64,
    pub norm_ratio: f64,
    /// Some component (or the whole tensor) has zero variance.
    pub degenerate: bool,
}

fn skew_kurt(x: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let c = v - m;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if !(m2 > 0.0) {
        return None;
    }
    Some((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

impl GaussianityDiagnostics {
    pub fn max_abs_skewness(&self) -> f64 {
        self.skewness.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_excess_kurtosis(&self) -> f64 {
        self.excess_kurtosis.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_in_band(&self, gamma: f64) -> bool {
        (self.norm_ratio - gamma).abs() <= NORM_BAND * gamma
    }

    /// All gates: skewness, excess kurtosis, correlation and annulus norm.
    pub fn passes(&self, gamma: f64) -> bool {
        !self.degenerate
            && self.max_abs_skewness() < MAX_SKEW
            && self.max_abs_excess_kurtosis() < MAX_EXCESS_KURTOSIS
            && self.max_offdiag_correlation < MAX_CORRELATION
            && self.norm_in_band(gamma)
    }

    /// Scalar summary as a flat JSON object.
    pub fn to_flat_json(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert("max_abs_skewness".into(), self.max_abs_skewness().into());
        m.insert("max_abs_excess_kurtosis".into(), self.max_abs_excess_kurtosis().into());
        m.insert("pooled_skewness".into(), self.pooled_skewness.into());
        m.insert("pooled_excess_kurtosis".into(), self.pooled_excess_kurtosis.into());
        m.insert("max_offdiag_correlation".into(), self.max_offdiag_correlation.into());
        m.insert("norm_ratio".into(), self.norm_ratio.into());
        m.insert("degenerate".into(), self.degenerate.into());
        m
    }
}

pub fn diagnostics(z: &Tensor, p: &PatchPartition) -> Result<GaussianityDiagnostics> {
    let v = p.partition(z)?;
    let (d, n) = (v.rows(), v.cols());
    let rows: Vec<&[f64]> = (0..d).map(|i| &v.data()[i * n..(i + 1) * n]).collect();
    let mut degenerate = false;
    let mut skewness = Vec::with_capacity(d);
    let mut kurt = Vec::with_capacity(d);
    for r in &rows {
        match skew_kurt(r) {
            Some((s, k)) => {
                skewness.push(s);
                kurt.push(k);
            }
            None => {
                degenerate = true;
                skewness.push(0.0);
                kurt.push(0.0);
            }
        }
    }
    let (pooled_skewness, pooled_excess_kurtosis) = skew_kurt(z.data()).unwrap_or_else(|| {
        degenerate = true;
        (0.0, 0.0)
    });
    let centered: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|r| {
            let m = r.iter().sum::<f64>() / n as f64;
            let c: Vec<f64> = r.iter().map(|x| x - m).collect();
            let s = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            (c, s)
        })
        .collect();
    let mut corr = 0.0f64;
    for i in 0..d {
        for j in 0..i {
            let (ci, si) = &centered[i];
            let (cj, sj) = &centered[j];
            if *si > 0.0 && *sj > 0.0 {
                let r = ci.iter().zip(cj).map(|(a, b)| a * b).sum::<f64>() / (si * sj);
                corr = corr.max(r.abs());
            }
        }
    }
    Ok(GaussianityDiagnostics {
        skewness,
        excess_kurtosis: kurt,
        pooled_skewness,
        pooled_excess_kurtosis,
        max_offdiag_correlation: corr,
        norm_ratio: z.norm() / (z.len() as f64).sqrt(),
        degenerate,
    })
}
