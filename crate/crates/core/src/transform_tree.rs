//! The transform tree: a source set is split by ratio at three levels
//! (grayscale, scaling, perspective) into eight subsets and each image is
//! pushed through the units on its path. The result has the same cardinality
//! as the input.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedDataset, Sample};
use crate::error::{Error, Result};
use crate::imaging::{
    pad_to, perspective_warp, resize_bilinear, rgb_to_gray, DensityKernel, PathGeometry,
};
use crate::rng;

pub const DEFAULT_SPLIT: f64 = 0.5;
pub const DEFAULT_THETA_MAX: f64 = 30.0;

fn default_split() -> f64 {
    DEFAULT_SPLIT
}

/// One point of the searched augmentation space.
///
/// Only `p_g`, `scale` and `angle_deg` are searched and serialized; the
/// scaling and perspective split ratios are fixed by configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    pub p_g: f64,
    pub scale: f64,
    pub angle_deg: f64,
    #[serde(skip, default = "default_split")]
    pub p_s: f64,
    #[serde(skip, default = "default_split")]
    pub p_pt: f64,
}

impl TransformSpec {
    pub fn new(p_g: f64, scale: f64, angle_deg: f64) -> Self {
        TransformSpec {
            p_g,
            scale,
            angle_deg,
            p_s: DEFAULT_SPLIT,
            p_pt: DEFAULT_SPLIT,
        }
    }

    /// The transform that leaves every image untouched.
    pub fn identity() -> Self {
        TransformSpec::new(0.0, 1.0, 0.0)
    }

    pub fn with_splits(mut self, p_s: f64, p_pt: f64) -> Self {
        self.p_s = p_s;
        self.p_pt = p_pt;
        self
    }

    pub fn validate(&self, theta_max: f64) -> Result<()> {
        let ratio = |v: f64| (0.0..=1.0).contains(&v);
        if !(ratio(self.p_g) && ratio(self.p_s) && ratio(self.p_pt)) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must lie in [0, 1]: {self:?}"
            )));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "scale factor {} outside (0, 1]",
                self.scale
            )));
        }
        if !(self.angle_deg >= 0.0 && self.angle_deg <= theta_max) {
            return Err(Error::InvalidArgument(format!(
                "angle {} outside [0, {theta_max}]",
                self.angle_deg
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// Parses the `{"p_g", "scale", "angle_deg"}` schema and validates ranges.
    pub fn from_json(text: &str, theta_max: f64) -> Result<Self> {
        let spec: TransformSpec = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "transform spec",
            detail: e.to_string(),
        })?;
        spec.validate(theta_max)?;
        Ok(spec)
    }
}

/// Path through the tree: which of the three units an image receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathLabel(u8);

impl PathLabel {
    pub fn new(gray: bool, scaled: bool, warped: bool) -> Self {
        PathLabel(u8::from(gray) << 2 | u8::from(scaled) << 1 | u8::from(warped))
    }

    pub fn gray(self) -> bool {
        self.0 & 4 != 0
    }

    pub fn scaled(self) -> bool {
        self.0 & 2 != 0
    }

    pub fn warped(self) -> bool {
        self.0 & 1 != 0
    }

    /// Leaf index in `0..8`, gray branch first bit, perspective last.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Per-image path labels for a dataset of `labels.len()` images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathAssignment {
    pub labels: Vec<PathLabel>,
}

impl PathAssignment {
    pub fn histogram(&self) -> [usize; 8] {
        let mut h = [0; 8];
        for l in &self.labels {
            h[l.index()] += 1;
        }
        h
    }
}

/// `floor(p * n)`, tolerant of products that land a hair below an integer.
pub fn split_count(p: f64, n: usize) -> usize {
    ((p * n as f64 + 1e-9).floor().max(0.0) as usize).min(n)
}

/// Shuffles `members` with a stream keyed by the tree node and marks the
/// first `floor(p * len)` of them.
fn split(members: &[usize], p: f64, seed: u64, node: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order = members.to_vec();
    order.shuffle(&mut rng::stream(seed, "tree", node));
    let k = split_count(p, order.len());
    let rest = order.split_off(k);
    (order, rest)
}

pub fn assign_paths(n: usize, spec: &TransformSpec, seed: u64) -> PathAssignment {
    let mut labels = vec![PathLabel::new(false, false, false); n];
    let all: Vec<usize> = (0..n).collect();
    let (gray, color) = split(&all, spec.p_g, seed, 1);
    for (g, members) in [(true, gray), (false, color)] {
        let node = 2 + u64::from(g);
        let (scaled, plain) = split(&members, spec.p_s, seed, node);
        for (s, sub) in [(true, scaled), (false, plain)] {
            let node = 4 + 2 * u64::from(g) + u64::from(s);
            let (warped, rest) = split(&sub, spec.p_pt, seed, node);
            for i in warped {
                labels[i] = PathLabel::new(g, s, true);
            }
            for i in rest {
                labels[i] = PathLabel::new(g, s, false);
            }
        }
    }
    PathAssignment { labels }
}

/// Leaf sizes implied by the floor splitting rule, indexed like [`PathLabel::index`].
pub fn subset_cardinalities(spec: &TransformSpec, n: usize) -> [usize; 8] {
    let mut out = [0; 8];
    let gray = split_count(spec.p_g, n);
    for (g, size) in [(true, gray), (false, n - gray)] {
        let scaled = split_count(spec.p_s, size);
        for (s, sub) in [(true, scaled), (false, size - scaled)] {
            let warped = split_count(spec.p_pt, sub);
            out[PathLabel::new(g, s, true).index()] = warped;
            out[PathLabel::new(g, s, false).index()] = sub - warped;
        }
    }
    out
}

/// Pushes one sample through the units of its path, in the order
/// gray, scale + center pad, warp.
pub fn transform_sample(
    sample: &Sample,
    label: PathLabel,
    spec: &TransformSpec,
    kernel: &DensityKernel,
    theta_max: f64,
) -> Result<Sample> {
    let (h, w) = (sample.image.height(), sample.image.width());
    let mut img = if label.gray() {
        rgb_to_gray(&sample.image)
    } else {
        sample.image.clone()
    };
    let geom = PathGeometry {
        height: h,
        width: w,
        scale: label.scaled().then_some(spec.scale),
        theta: label.warped().then_some(spec.angle_deg),
    };
    if let Some(s) = geom.scale {
        img = pad_to(&resize_bilinear(&img, s)?, h, w)?.0;
    }
    if let Some(t) = geom.theta {
        img = perspective_warp(&img, t, theta_max)?;
    }
    let points = geom.map_points(&sample.points);
    Ok(Sample::new(img, points, kernel))
}

/// Builds `S+` from `src`: same size, same order, each image transformed
/// along its assigned path with annotations and densities following.
pub fn apply_transform(
    src: &AnnotatedDataset,
    spec: &TransformSpec,
    seed: u64,
    kernel: &DensityKernel,
    theta_max: f64,
) -> Result<AnnotatedDataset> {
    spec.validate(theta_max)?;
    let paths = assign_paths(src.len(), spec, seed);
    let samples = src
        .samples
        .par_iter()
        .zip(paths.labels.par_iter())
        .map(|(s, l)| transform_sample(s, *l, spec, kernel, theta_max))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotatedDataset::new(samples))
}
