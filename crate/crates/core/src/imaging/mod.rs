//! Pixel-level primitives: color conversion, bilinear scaling, perspective
//! warping, annotation co-transformation and density-map rendering.
//!
//! Coordinates are continuous pixel coordinates: pixel `(i, j)` covers
//! `[j, j+1) x [i, i+1)` and its center sits at `(j + 0.5, i + 0.5)`.

mod geometry;
pub mod io;

pub use geometry::{perspective_warp, warp_points, PathGeometry, Pitch};

use crate::error::{Error, Result};

/// Default Gaussian standard deviation used for ground-truth density maps.
pub const DEFAULT_SIGMA: f64 = 4.0;
/// Default (odd) kernel side length used for ground-truth density maps.
pub const DEFAULT_KERNEL: usize = 15;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Three-channel image with values in `[0, 1]`, stored as channel-major planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from channel-major planes, validating range and length.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != 3 * height * width {
            return Err(Error::shape(3 * height * width, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::zeros(height, width);
        for (c, v) in rgb.iter().enumerate() {
            img.plane_mut(c).fill(v.clamp(0.0, 1.0));
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Writes a pixel, clamping to `[0, 1]` so the range invariant holds.
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let idx = (c * self.height + y) * self.width + x;
        self.data[idx] = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    /// True when every pixel has identical channel values.
    pub fn is_channel_equal(&self) -> bool {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter().zip(g).zip(b).all(|((r, g), b)| r == g && g == b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Applies `f` to every value and clamps back into range.
    #[cfg(test)]
    pub(crate) fn map_values(&mut self, mut f: impl FnMut(f64) -> f64) {
        for v in &mut self.data {
            let w = f(*v);
            *v = if w.is_finite() { w.clamp(0.0, 1.0) } else { 0.0 };
        }
    }

    /// Bilinear sample at continuous coordinates `(u, v)`; zero outside the
    /// image area, edge-replicated within the outer half pixel.
    pub(crate) fn sample_bilinear(&self, c: usize, u: f64, v: f64) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= 0.0 && u < w && v >= 0.0 && v < h) {
            return 0.0;
        }
        sample_clamped(self.plane(c), self.height, self.width, u - 0.5, v - 0.5)
    }
}

/// Bilinear interpolation in index space with clamped coordinates.
fn sample_clamped(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = plane[y0 * w + x0] + fx * (plane[y0 * w + x1] - plane[y0 * w + x0]);
    let bot = plane[y1 * w + x0] + fx * (plane[y1 * w + x1] - plane[y1 * w + x0]);
    top + fy * (bot - top)
}

/// A head annotation in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn in_bounds(&self, height: usize, width: usize) -> bool {
        self.x >= 0.0 && self.x < width as f64 && self.y >= 0.0 && self.y < height as f64
    }
}

/// Head annotations of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point>,
}

impl PointSet {
    pub fn new(points: Vec<Point>) -> Self {
        PointSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count_in_bounds(&self, height: usize, width: usize) -> usize {
        self.points
            .iter()
            .filter(|p| p.in_bounds(height, width))
            .count()
    }

    /// Keeps only points inside an `height x width` canvas.
    pub fn retain_in_bounds(&mut self, height: usize, width: usize) {
        self.points.retain(|p| p.in_bounds(height, width));
    }
}

/// Non-negative single-channel map whose sum is a head count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        DensityMap {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(height * width, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "density value {v} is negative or non-finite"
            )));
        }
        Ok(DensityMap {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the largest cell as `(row, col)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Luminance conversion replicated into all three channels.
pub fn rgb_to_gray(img: &Image) -> Image {
    let n = img.height * img.width;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        let (r, g, b) = (img.data[i], img.data[n + i], img.data[2 * n + i]);
        let y = if r == g && g == b {
            r
        } else {
            (LUMA[0] * r + LUMA[1] * g + LUMA[2] * b).clamp(0.0, 1.0)
        };
        data[i] = y;
        data[n + i] = y;
        data[2 * n + i] = y;
    }
    Image {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Output size of a scale by `s`: `round(s*H) x round(s*W)`, at least one pixel.
pub fn scaled_size(height: usize, width: usize, s: f64) -> (usize, usize) {
    let h = ((s * height as f64).round() as usize).max(1);
    let w = ((s * width as f64).round() as usize).max(1);
    (h, w)
}

/// Bilinear downscaling with half-pixel-centered sampling.
pub fn resize_bilinear(img: &Image, s: f64) -> Result<Image> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor {s} outside (0, 1]"
        )));
    }
    if s == 1.0 {
        return Ok(img.clone());
    }
    let (oh, ow) = scaled_size(img.height, img.width, s);
    let ry = img.height as f64 / oh as f64;
    let rx = img.width as f64 / ow as f64;
    let mut out = Image::zeros(oh, ow);
    for c in 0..3 {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh {
            let sy = (y as f64 + 0.5) * ry - 0.5;
            for x in 0..ow {
                let sx = (x as f64 + 0.5) * rx - 0.5;
                dst[y * ow + x] = sample_clamped(src, img.height, img.width, sx, sy);
            }
        }
    }
    Ok(out)
}

/// Top-left offset `(dy, dx)` that centers an `h x w` image in an `H x W` canvas.
pub fn center_offset(h: usize, w: usize, height: usize, width: usize) -> (usize, usize) {
    ((height - h) / 2, (width - w) / 2)
}

/// Centers `img` on a zero canvas of `height x width`; returns the image and
/// the `(dy, dx)` offset of its top-left corner.
pub fn pad_to(img: &Image, height: usize, width: usize) -> Result<(Image, (usize, usize))> {
    if img.height > height || img.width > width {
        return Err(Error::InvalidArgument(format!(
            "cannot pad {}x{} image into {height}x{width}",
            img.height, img.width
        )));
    }
    if img.height == height && img.width == width {
        return Ok((img.clone(), (0, 0)));
    }
    let (dy, dx) = center_offset(img.height, img.width, height, width);
    let mut out = Image::zeros(height, width);
    for c in 0..3 {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..img.height {
            let row = &src[y * img.width..(y + 1) * img.width];
            dst[(y + dy) * width + dx..(y + dy) * width + dx + img.width].copy_from_slice(row);
        }
    }
    Ok((out, (dy, dx)))
}

/// Truncated Gaussian used to render one annotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityKernel {
    pub sigma: f64,
    pub size: usize,
}

impl Default for DensityKernel {
    fn default() -> Self {
        DensityKernel {
            sigma: DEFAULT_SIGMA,
            size: DEFAULT_KERNEL,
        }
    }
}

impl DensityKernel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) || self.size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "density kernel needs sigma > 0 and odd size, got sigma={} size={}",
                self.sigma, self.size
            )));
        }
        Ok(())
    }
}

/// Pixel index `(row, col)` that holds a point.
fn point_cell(p: &Point, height: usize, width: usize) -> (usize, usize) {
    let col = (p.x.floor().max(0.0) as usize).min(width - 1);
    let row = (p.y.floor().max(0.0) as usize).min(height - 1);
    (row, col)
}

/// Renders the density map of a point set with the default 15x15, sigma 4 kernel.
pub fn render_density(points: &PointSet, height: usize, width: usize) -> DensityMap {
    render_density_with(points, height, width, &DensityKernel::default())
}

/// Each in-bounds point adds a truncated Gaussian centered on its pixel,
/// clipped at the borders and renormalized to unit mass.
pub fn render_density_with(
    points: &PointSet,
    height: usize,
    width: usize,
    kernel: &DensityKernel,
) -> DensityMap {
    let mut map = DensityMap::zeros(height, width);
    let r = (kernel.size / 2) as isize;
    let inv = 1.0 / (2.0 * kernel.sigma * kernel.sigma);
    let side = kernel.size;
    let weights: Vec<f64> = (0..side * side)
        .map(|i| {
            let dy = (i / side) as isize - r;
            let dx = (i % side) as isize - r;
            (-((dx * dx + dy * dy) as f64) * inv).exp()
        })
        .collect();
    for p in points.points.iter().filter(|p| p.in_bounds(height, width)) {
        let (row, col) = point_cell(p, height, width);
        let (row, col) = (row as isize, col as isize);
        let y0 = (row - r).max(0);
        let y1 = (row + r).min(height as isize - 1);
        let x0 = (col - r).max(0);
        let x1 = (col + r).min(width as isize - 1);
        let mut total = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                total += weights[((y - row + r) as usize) * side + (x - col + r) as usize];
            }
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let w = weights[((y - row + r) as usize) * side + (x - col + r) as usize];
                map.data[y as usize * width + x as usize] += w / total;
            }
        }
    }
    map
}

/// Sums each `k x k` block; total mass is preserved.
pub fn sum_pool(d: &DensityMap, k: usize) -> Result<DensityMap> {
    block_sums(d, k, k)
}

/// Sums `kh x kw` blocks of a density map.
pub(crate) fn block_sums(d: &DensityMap, kh: usize, kw: usize) -> Result<DensityMap> {
    if kh == 0 || kw == 0 || !d.height.is_multiple_of(kh) || !d.width.is_multiple_of(kw) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} map is not divisible into {kh}x{kw} blocks",
            d.height, d.width
        )));
    }
    if kh == 1 && kw == 1 {
        return Ok(d.clone());
    }
    let (oh, ow) = (d.height / kh, d.width / kw);
    let mut out = DensityMap::zeros(oh, ow);
    for y in 0..d.height {
        for x in 0..d.width {
            out.data[(y / kh) * ow + x / kw] += d.data[y * d.width + x];
        }
    }
    Ok(out)
}
