//! The trainable pipeline: feature extractor, density estimator and the
//! fine-grained foreground/background patch discriminator, plus the losses
//! that tie them together.
//!
//! Shapes for an `H x W` input with `C` feature channels:
//!
//! ```text
//! image [3, H, W] -> conv3x3 -> relu -> pool2 -> conv3x3 -> relu -> pool2 -> F [C, H/4, W/4]
//! F -> conv1x1 -> softplus                      -> density [1, H/4, W/4]
//! F -> GRL -> cell pool -> {fg, bg} heads (1x1 C->hidden, leaky relu, 1x1 hidden->1, sigmoid)
//!                                               -> O_F, O_B [1, H/g_h, W/g_w]
//! ```

pub mod checkpoint;
mod params;
mod train;

pub use params::{ModelConfig, ModelParams, ParamGroup, PARAM_NAMES};
pub use train::{
    adversarial_loss, grad_check, pair_loss, train, Adam, BatchLoss, DiscNorm, LrSchedule, StepInputs, TrainHyper, TrainLog, TrainRecord,
};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::{DensityMap, Image};

/// Spatial downsampling between the input image and the feature map.
pub const FEATURE_STRIDE: usize = 4;
const LEAKY_SLOPE: f64 = 0.2;

/// `C x h x w` activation grid produced by the feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 3 {
            return Err(Error::shape("[C, h, w]", t.shape()));
        }
        Ok(FeatureMap(t))
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        FeatureMap::new(Tensor::new(vec![c, h, w], data)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height() * self.width();
        &self.0.data()[c * n..(c + 1) * n]
    }
}

/// Binary foreground mask over grid cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl GridMask {
    pub fn weights(&self) -> Vec<f64> {
        self.cells.iter().map(|c| f64::from(u8::from(*c))).collect()
    }

    pub fn inverted_weights(&self) -> Vec<f64> {
        self.cells.iter().map(|c| f64::from(u8::from(!*c))).collect()
    }

    pub fn foreground(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }
}

/// Foreground and background head outputs, one probability per grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminationMaps {
    pub rows: usize,
    pub cols: usize,
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
}

/// Grid size `(g_h, g_w)` in image pixels.
pub type Grid = (usize, usize);

fn image_tensor(img: &Image) -> Tensor {
    Tensor::new(vec![3, img.height(), img.width()], img.data().to_vec()).expect("image layout")
}

/// Parameters bound as graph leaves.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Adds the parameters to `g`; groups listed in `trainable` become params,
/// the rest constants.
pub fn bind(g: &mut Graph, p: &ModelParams, trainable: &[ParamGroup]) -> Bound {
    let vars = p
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if trainable.contains(&ParamGroup::of(i)) {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    Bound { vars }
}

fn check_input(img: &Image) -> Result<()> {
    if !img.height().is_multiple_of(FEATURE_STRIDE) || !img.width().is_multiple_of(FEATURE_STRIDE) {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} is not divisible by the feature stride {FEATURE_STRIDE}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Extractor forward pass inside `g`.
pub fn extract_var(g: &mut Graph, b: &Bound, img: &Image) -> Result<Var> {
    check_input(img)?;
    let x = g.constant(image_tensor(img));
    let c1 = g.conv2d(x, b.var(params::CONV1_W), b.var(params::CONV1_B))?;
    let a1 = g.relu(c1);
    let p1 = g.avg_pool(a1, 2, 2)?;
    let c2 = g.conv2d(p1, b.var(params::CONV2_W), b.var(params::CONV2_B))?;
    let a2 = g.relu(c2);
    g.avg_pool(a2, 2, 2)
}

/// Estimator forward pass: softplus of a 1x1 convolution.
pub fn estimate_var(g: &mut Graph, b: &Bound, feat: Var) -> Result<Var> {
    let z = g.conv2d(feat, b.var(params::EST_W), b.var(params::EST_B))?;
    Ok(g.softplus(z))
}

/// Feature-map cell size for a pixel grid.
pub fn feature_cell(grid: Grid) -> Result<Grid> {
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || gh % FEATURE_STRIDE != 0 || gw % FEATURE_STRIDE != 0 {
        return Err(Error::InvalidArgument(format!(
            "grid {gh}x{gw} must be a positive multiple of the feature stride {FEATURE_STRIDE}"
        )));
    }
    Ok((gh / FEATURE_STRIDE, gw / FEATURE_STRIDE))
}

/// Discriminator heads on cell-pooled features; returns `(fg, bg)` maps.
pub fn discriminate_var(g: &mut Graph, b: &Bound, feat: Var, grid: Grid) -> Result<(Var, Var)> {
    let (ch, cw) = feature_cell(grid)?;
    let pooled = g.avg_pool(feat, ch, cw)?;
    let mut head = |base: usize| -> Result<Var> {
        let h = g.conv2d(pooled, b.var(base), b.var(base + 1))?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let o = g.conv2d(h, b.var(base + 2), b.var(base + 3))?;
        Ok(g.sigmoid(o))
    };
    let fg = head(params::DISC_FG)?;
    let bg = head(params::DISC_BG)?;
    Ok((fg, bg))
}

fn density_of(t: &Tensor) -> DensityMap {
    let (_, h, w) = t.chw();
    DensityMap::from_vec(h, w, t.data().to_vec()).expect("softplus output is non-negative")
}

pub fn feature_extract(p: &ModelParams, img: &Image) -> Result<FeatureMap> {
    let mut g = Graph::new();
    let b = bind(&mut g, p, &[]);
    let f = extract_var(&mut g, &b, img)?;
    FeatureMap::new(g.value(f).clone())
}

pub fn estimate_density(p: &ModelParams, f: &FeatureMap) -> Result<DensityMap> {
    let mut g = Graph::new();
    let b = bind(&mut g, p, &[]);
    let fv = g.constant(f.tensor().clone());
    let d = estimate_var(&mut g, &b, fv)?;
    Ok(density_of(g.value(d)))
}

/// Test-time path: extractor then estimator, discriminator untouched.
pub fn predict_density(p: &ModelParams, img: &Image) -> Result<DensityMap> {
    let mut g = Graph::new();
    let b = bind(&mut g, p, &[]);
    let f = extract_var(&mut g, &b, img)?;
    let d = estimate_var(&mut g, &b, f)?;
    Ok(density_of(g.value(d)))
}

pub fn predict_count(p: &ModelParams, img: &Image) -> Result<f64> {
    Ok(predict_density(p, img)?.sum())
}

/// `sum((gt - pred)^2)` over all cells.
pub fn density_loss(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(
            (gt.height(), gt.width()),
            (pred.height(), pred.width()),
        ));
    }
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Cell is foreground iff its block sum exceeds `th`. `grid` is in the
/// units of `d` (pixels for ground truth, feature cells for predictions).
pub fn make_patch_mask(d: &DensityMap, grid: Grid, th: f64) -> Result<GridMask> {
    let sums = crate::imaging::block_sums(d, grid.0, grid.1)?;
    Ok(GridMask {
        rows: sums.height(),
        cols: sums.width(),
        cells: sums.data().iter().map(|v| *v > th).collect(),
    })
}

pub fn discriminate(p: &ModelParams, f: &FeatureMap, grid: Grid) -> Result<DiscriminationMaps> {
    let mut g = Graph::new();
    let b = bind(&mut g, p, &[]);
    let fv = g.constant(f.tensor().clone());
    let (fg, bg) = discriminate_var(&mut g, &b, fv, grid)?;
    let (_, rows, cols) = g.value(fg).chw();
    Ok(DiscriminationMaps {
        rows,
        cols,
        fg: g.value(fg).data().to_vec(),
        bg: g.value(bg).data().to_vec(),
    })
}

/// The four terms of the fine-grained discrimination loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiscLoss {
    pub bs: f64,
    pub bt: f64,
    pub fs: f64,
    pub ft: f64,
}

impl DiscLoss {
    pub fn background(&self) -> f64 {
        self.bs + self.bt
    }

    pub fn foreground(&self) -> f64 {
        self.fs + self.ft
    }

    pub fn total(&self) -> f64 {
        self.background() + self.foreground()
    }
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(crate::autodiff::PROB_EPS, 1.0 - crate::autodiff::PROB_EPS)
}

/// Normalizer of one term: active-cell count in mean mode, 1 in sum mode.
pub(crate) fn term_scale(weights: &[f64], norm: DiscNorm) -> f64 {
    match norm {
        DiscNorm::Sum => 1.0,
        DiscNorm::Mean => {
            let active: f64 = weights.iter().sum();
            if active > 0.0 {
                1.0 / active
            } else {
                0.0
            }
        }
    }
}

/// Source is labeled 0 and target 1; background cells feed the background
/// head, foreground cells the foreground head.
pub fn discriminator_loss(
    source: &DiscriminationMaps,
    target: &DiscriminationMaps,
    m_s: &GridMask,
    m_t: &GridMask,
    norm: DiscNorm,
) -> Result<DiscLoss> {
    let n = source.fg.len();
    for len in [source.bg.len(), target.fg.len(), target.bg.len(), m_s.cells.len(), m_t.cells.len()] {
        if len != n {
            return Err(Error::shape(n, len));
        }
    }
    let term = |probs: &[f64], w: &[f64], complement: bool| {
        let s: f64 = probs
            .iter()
            .zip(w)
            .map(|(p, w)| {
                let q = if complement { 1.0 - p } else { *p };
                -w * clamp_p(q).ln()
            })
            .sum();
        s * term_scale(w, norm)
    };
    Ok(DiscLoss {
        bs: term(&source.bg, &m_s.inverted_weights(), true),
        bt: term(&target.bg, &m_t.inverted_weights(), false),
        fs: term(&source.fg, &m_s.weights(), true),
        ft: term(&target.fg, &m_t.weights(), false),
    })
}

/// Gradient-reversal backward rule.
pub fn grl_backward(g: f64, factor: f64) -> f64 {
    -factor * g
}

pub fn total_loss(l_e: f64, l_d: f64, lambda: f64) -> f64 {
    l_e + lambda * l_d
}
