//! Counting metrics and rank correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::DensityMap;

pub fn count(d: &DensityMap) -> f64 {
    d.sum()
}

fn check(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::shape(gts.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one image".into()));
    }
    Ok(())
}

/// Mean absolute count error.
pub fn mae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check(preds, gts)?;
    Ok(preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).sum::<f64>() / preds.len() as f64)
}

/// Root of the mean squared count error.
pub fn mse(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check(preds, gts)?;
    let m = preds.iter().zip(gts).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / preds.len() as f64;
    Ok(m.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    pub per_image: Vec<f64>,
}

impl EvalResult {
    pub fn new(preds: &[f64], gts: &[f64]) -> Result<Self> {
        Ok(EvalResult {
            n: preds.len(),
            mae: mae(preds, gts)?,
            mse: mse(preds, gts)?,
            per_image: preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).collect(),
        })
    }
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            out[*k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs two equal series of length >= 2".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidArgument("constant series has no correlation".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&ranks(a), &ranks(b))
}
