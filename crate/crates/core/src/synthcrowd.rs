//! Seeded synthetic crowds: Gaussian-blob heads over saturated color
//! gradients. The target domain is the same generator pushed through a
//! hidden [`DomainShift`] plus luminance noise.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedDataset, HiddenLabels, Sample, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::imaging::{DensityKernel, Image, Point, PointSet};
use crate::rng::{self, Rng};
use crate::transform_tree::{assign_paths, transform_sample, TransformSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Poisson mean of the per-image head count.
    pub mean_count: f64,
    /// Gaussian radius of a rendered head, pixels.
    pub head_radius: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 96,
            mean_count: 30.0,
            head_radius: 2.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(16) || !self.width.is_multiple_of(16) {
            return Err(Error::InvalidArgument(format!(
                "scene size {}x{} must be a positive multiple of 16",
                self.height, self.width
            )));
        }
        if !(self.mean_count > 0.0 && self.mean_count.is_finite()) {
            return Err(Error::InvalidArgument("mean_count must be > 0".into()));
        }
        if !(self.head_radius > 0.0 && self.head_radius.is_finite()) {
            return Err(Error::InvalidArgument("head_radius must be > 0".into()));
        }
        Ok(())
    }
}

/// The planted transform separating source from target, plus pixel noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    pub p_g: f64,
    pub scale: f64,
    pub angle_deg: f64,
    pub noise_sigma: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        DomainShift {
            p_g: 0.8,
            scale: 0.5,
            angle_deg: 10.0,
            noise_sigma: 0.02,
        }
    }
}

impl DomainShift {
    pub fn identity() -> Self {
        DomainShift {
            p_g: 0.0,
            scale: 1.0,
            angle_deg: 0.0,
            noise_sigma: 0.0,
        }
    }

    /// The shift as a transform spec with the given split ratios.
    pub fn spec(&self, p_s: f64, p_pt: f64) -> TransformSpec {
        TransformSpec::new(self.p_g, self.scale, self.angle_deg).with_splits(p_s, p_pt)
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Renders one scene; points are head centers.
pub fn render_scene(cfg: &SceneConfig, r: &mut Rng) -> (Image, PointSet) {
    let (h, w) = (cfg.height, cfg.width);
    let hue = r.random_range(0.0..360.0);
    let c0 = hsv(hue, 1.0, r.random_range(0.3..0.6));
    let c1 = hsv(hue + r.random_range(90.0..270.0), 1.0, r.random_range(0.3..0.6));
    let dir = r.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (dir.cos(), dir.sin());
    let span = dx.abs() * w as f64 + dy.abs() * h as f64;
    let offset = dx.min(0.0) * w as f64 + dy.min(0.0) * h as f64;
    let mut img = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 * dx + y as f64 * dy) - offset) / span;
            for c in 0..3 {
                img.set(c, y, x, c0[c] + t * (c1[c] - c0[c]));
            }
        }
    }
    let n = Poisson::new(cfg.mean_count).expect("validated mean").sample(r) as usize;
    let mut points = Vec::with_capacity(n);
    let rad = cfg.head_radius;
    let reach = (3.0 * rad).ceil() as isize;
    for _ in 0..n {
        let p = Point::new(r.random_range(0.0..w as f64), r.random_range(0.0..h as f64));
        let color = hsv(r.random_range(0.0..360.0), 0.5, 1.0);
        let (cx, cy) = (p.x.floor() as isize, p.y.floor() as isize);
        for yy in (cy - reach).max(0)..=(cy + reach).min(h as isize - 1) {
            for xx in (cx - reach).max(0)..=(cx + reach).min(w as isize - 1) {
                let ddx = xx as f64 + 0.5 - p.x;
                let ddy = yy as f64 + 0.5 - p.y;
                let a = (-(ddx * ddx + ddy * ddy) / (2.0 * rad * rad)).exp();
                let (yy, xx) = (yy as usize, xx as usize);
                for (c, col) in color.iter().enumerate() {
                    let v = img.get(c, yy, xx);
                    img.set(c, yy, xx, v + a * (col - v));
                }
            }
        }
        points.push(p);
    }
    (img, PointSet::new(points))
}

fn scenes(n: usize, cfg: &SceneConfig, stream: &str, kernel: &DensityKernel) -> Vec<Sample> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, stream, i as u64);
            let (img, pts) = render_scene(cfg, &mut r);
            Sample::new(img, pts, kernel)
        })
        .collect()
}

/// `n` labeled source scenes.
pub fn gen_source(n: usize, cfg: &SceneConfig, kernel: &DensityKernel) -> Result<AnnotatedDataset> {
    cfg.validate()?;
    kernel.validate()?;
    Ok(AnnotatedDataset::new(scenes(n, cfg, "source-scene", kernel)))
}

/// `n` target scenes: fresh source-style scenes routed through the shift's
/// transform tree, then luminance noise. Labels come back separately.
pub fn gen_target(
    n: usize,
    cfg: &SceneConfig,
    shift: &DomainShift,
    splits: (f64, f64),
    kernel: &DensityKernel,
    theta_max: f64,
) -> Result<(UnlabeledDataset, HiddenLabels)> {
    cfg.validate()?;
    kernel.validate()?;
    if !(shift.noise_sigma >= 0.0 && shift.noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    let spec = shift.spec(splits.0, splits.1);
    spec.validate(theta_max)?;
    let base = scenes(n, cfg, "target-scene", kernel);
    let paths = assign_paths(n, &spec, rng::derive(cfg.seed, "target-paths", 0));
    let out = base
        .par_iter()
        .zip(paths.labels.par_iter())
        .enumerate()
        .map(|(i, (s, label))| {
            let mut t = transform_sample(s, *label, &spec, kernel, theta_max)?;
            if shift.noise_sigma > 0.0 {
                let noise = Normal::new(0.0, shift.noise_sigma).expect("validated sigma");
                let mut r = rng::stream(cfg.seed, "target-noise", i as u64);
                let (h, w) = (t.image.height(), t.image.width());
                for y in 0..h {
                    for x in 0..w {
                        let e = noise.sample(&mut r);
                        for c in 0..3 {
                            let v = t.image.get(c, y, x);
                            t.image.set(c, y, x, v + e);
                        }
                    }
                }
            }
            Ok((t.image, t.points))
        })
        .collect::<Result<Vec<_>>>()?;
    let (images, points) = out.into_iter().unzip();
    Ok((UnlabeledDataset::new(images), HiddenLabels { points }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::render_density;
    use crate::transform_tree::DEFAULT_THETA_MAX;

    fn small() -> SceneConfig {
        SceneConfig {
            height: 32,
            width: 48,
            mean_count: 10.0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn empty_scene_has_zero_density() {
        let cfg = SceneConfig {
            mean_count: 1e-9,
            ..small()
        };
        let d = gen_source(3, &cfg, &DensityKernel::default()).unwrap();
        for s in &d.samples {
            assert_eq!(s.count(), 0.0);
            assert!(s.density.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn mean_count_follows_poisson_mean() {
        let cfg = SceneConfig {
            mean_count: 50.0,
            ..small()
        };
        let d = gen_source(200, &cfg, &DensityKernel::default()).unwrap();
        let mean = d.counts().iter().sum::<f64>() / 200.0;
        assert!((45.0..=55.0).contains(&mean), "{mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        let k = DensityKernel::default();
        assert_eq!(gen_source(4, &small(), &k).unwrap(), gen_source(4, &small(), &k).unwrap());
        let other = SceneConfig { seed: 1, ..small() };
        assert_ne!(gen_source(4, &small(), &k).unwrap(), gen_source(4, &other, &k).unwrap());
        let sh = DomainShift::default();
        let a = gen_target(4, &small(), &sh, (0.5, 0.5), &k, DEFAULT_THETA_MAX).unwrap();
        let b = gen_target(4, &small(), &sh, (0.5, 0.5), &k, DEFAULT_THETA_MAX).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_shift_reproduces_the_generator() {
        let k = DensityKernel::default();
        let (t, labels) =
            gen_target(5, &small(), &DomainShift::identity(), (0.5, 0.5), &k, DEFAULT_THETA_MAX).unwrap();
        let plain = AnnotatedDataset::new(scenes(5, &small(), "target-scene", &k));
        assert_eq!(t.images, plain.images().cloned().collect::<Vec<_>>());
        assert_eq!(labels.points, plain.samples.iter().map(|s| s.points.clone()).collect::<Vec<_>>());
        // same generator, so statistics match the source stream
        let src = gen_source(100, &small(), &k).unwrap();
        let (t, _) =
            gen_target(100, &small(), &DomainShift::identity(), (0.5, 0.5), &k, DEFAULT_THETA_MAX).unwrap();
        let mean = |imgs: Vec<&Image>| imgs.iter().map(|i| i.sum()).sum::<f64>() / imgs.len() as f64;
        let (ms, mt) = (mean(src.images().collect()), mean(t.images.iter().collect()));
        assert!((ms - mt).abs() / ms < 0.05, "{ms} vs {mt}");
    }

    #[test]
    fn full_gray_shift_is_channel_equal() {
        let sh = DomainShift {
            p_g: 1.0,
            ..DomainShift::default()
        };
        let (t, _) = gen_target(6, &small(), &sh, (0.5, 0.5), &DensityKernel::default(), DEFAULT_THETA_MAX).unwrap();
        assert!(t.images.iter().all(Image::is_channel_equal));
    }

    #[test]
    fn hidden_counts_match_hidden_density() {
        let (t, labels) = gen_target(
            20,
            &small(),
            &DomainShift::default(),
            (0.5, 0.5),
            &DensityKernel::default(),
            DEFAULT_THETA_MAX,
        )
        .unwrap();
        assert_eq!(t.len(), labels.len());
        for p in &labels.points {
            let d = render_density(p, 32, 48);
            assert!((d.sum() - p.len() as f64).abs() < 1e-3);
            assert_eq!(p.count_in_bounds(32, 48), p.len());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let k = DensityKernel::default();
        assert!(gen_source(1, &SceneConfig { height: 30, ..small() }, &k).is_err());
        assert!(gen_source(1, &SceneConfig { mean_count: 0.0, ..small() }, &k).is_err());
        let bad = DomainShift { scale: 0.0, ..DomainShift::default() };
        assert!(gen_target(1, &small(), &bad, (0.5, 0.5), &k, DEFAULT_THETA_MAX).is_err());
    }
}
