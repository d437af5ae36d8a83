//! Label-free validation: source feature content restyled with target
//! channel statistics, scored against the source labels.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::netcore::{estimate_density, feature_extract, FeatureMap, ModelParams};
use crate::rng;

/// Floor on the source deviation before dividing.
pub const SIGMA_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Per-channel mean and population standard deviation.
pub fn channel_stats(f: &FeatureMap) -> ChannelStats {
    let n = (f.height() * f.width()) as f64;
    let (mut mu, mut sigma) = (Vec::new(), Vec::new());
    for c in 0..f.channels() {
        let ch = f.channel(c);
        let m = ch.iter().sum::<f64>() / n;
        let v = ch.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        mu.push(m);
        sigma.push(v.sqrt());
    }
    ChannelStats { mu, sigma }
}

/// Source content with target style, channel by channel.
pub fn adain_mix(fs: &FeatureMap, ft: &FeatureMap) -> Result<FeatureMap> {
    if fs.tensor().shape() != ft.tensor().shape() {
        return Err(Error::shape(fs.tensor().shape(), ft.tensor().shape()));
    }
    let (ss, st) = (channel_stats(fs), channel_stats(ft));
    let mut out = Vec::with_capacity(fs.tensor().len());
    for c in 0..fs.channels() {
        let k = st.sigma[c] / ss.sigma[c].max(SIGMA_EPS);
        out.extend(fs.channel(c).iter().map(|x| st.mu[c] + k * (x - ss.mu[c])));
    }
    FeatureMap::from_vec(fs.channels(), fs.height(), fs.width(), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub source: usize,
    pub target: usize,
    pub predicted: f64,
    pub truth: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pairs: Vec<PairScore>,
    /// Negative mean absolute count error over `pairs`.
    pub reward: f64,
}

impl ValidationReport {
    pub fn from_pairs(pairs: Vec<PairScore>) -> Self {
        let reward = -pairs.iter().map(|p| p.abs_error).sum::<f64>() / pairs.len().max(1) as f64;
        ValidationReport { pairs, reward }
    }
}

/// Seeded `(source, target)` index pairs.
pub fn pairing(n_source: usize, n_target: usize, n_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut r = rng::stream(seed, "pairing", 0);
    (0..n_pairs)
        .map(|_| (r.random_range(0..n_source), r.random_range(0..n_target)))
        .collect()
}

/// Scores `p` on listed pairs; features are computed once per distinct image.
pub fn score_pairs(
    p: &ModelParams,
    source: &AnnotatedDataset,
    target: &UnlabeledDataset,
    pairs: &[(usize, usize)],
) -> Result<ValidationReport> {
    let extract_all = |images: Vec<(usize, &Image)>| {
        images
            .into_par_iter()
            .map(|(i, img)| Ok((i, feature_extract(p, img)?)))
            .collect::<Result<BTreeMap<usize, FeatureMap>>>()
    };
    let mut s_ids: Vec<usize> = pairs.iter().map(|x| x.0).collect();
    let mut t_ids: Vec<usize> = pairs.iter().map(|x| x.1).collect();
    s_ids.sort_unstable();
    s_ids.dedup();
    t_ids.sort_unstable();
    t_ids.dedup();
    if s_ids.last().is_some_and(|i| *i >= source.len()) || t_ids.last().is_some_and(|i| *i >= target.len()) {
        return Err(Error::InvalidArgument("pair index out of range".into()));
    }
    let fs = extract_all(s_ids.into_iter().map(|i| (i, &source.samples[i].image)).collect())?;
    let ft = extract_all(t_ids.into_iter().map(|i| (i, &target.images[i])).collect())?;
    let scores = pairs
        .par_iter()
        .map(|&(si, ti)| {
            let fv = adain_mix(&fs[&si], &ft[&ti])?;
            let predicted = estimate_density(p, &fv)?.sum();
            let truth = source.samples[si].count();
            Ok(PairScore {
                source: si,
                target: ti,
                predicted,
                truth,
                abs_error: (predicted - truth).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport::from_pairs(scores))
}

/// Reward of `p` over `n_pairs` seeded pairings.
pub fn validation_reward(
    p: &ModelParams,
    source: &AnnotatedDataset,
    target: &UnlabeledDataset,
    n_pairs: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if n_pairs == 0 || source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument(
            "validation needs n_pairs >= 1 and non-empty datasets".into(),
        ));
    }
    score_pairs(p, source, target, &pairing(source.len(), target.len(), n_pairs, seed))
}
