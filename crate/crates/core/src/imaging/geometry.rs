use super::{Image, Point, PointSet};
use crate::error::{Error, Result};

/// Pitch homography `K * R_x(theta) * K^-1` for a pinhole camera with focal
/// length `max(H, W)` and principal point at the image center, followed by the
/// vertical shift `f * tan(theta)` that returns the principal point to itself.
#[derive(Clone, Copy, Debug)]
pub struct Pitch {
    f: f64,
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    shift: f64,
}

impl Pitch {
    pub fn new(height: usize, width: usize, theta_deg: f64) -> Self {
        let t = theta_deg.to_radians();
        Pitch {
            f: height.max(width) as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            cos: t.cos(),
            sin: t.sin(),
            shift: height.max(width) as f64 * t.tan(),
        }
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    fn apply(&self, u: f64, v: f64, sin: f64) -> Option<(f64, f64)> {
        let dx = u - self.cx;
        let dy = v - self.cy;
        let z = sin * dy + self.cos * self.f;
        if z <= 1e-9 * self.f {
            return None;
        }
        let u2 = self.cx + self.f * dx / z;
        let v2 = self.cy + self.f * (self.cos * dy - sin * self.f) / z;
        Some((u2, v2))
    }

    /// Maps a source-image point to its warped location.
    pub fn forward(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        self.apply(u, v, self.sin).map(|(a, b)| (a, b + self.shift))
    }

    /// Maps a warped-image point back to the source image.
    pub fn inverse(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        self.apply(u, v - self.shift, -self.sin)
    }
}

fn check_angle(theta: f64, theta_max: f64) -> Result<()> {
    if !(theta >= 0.0 && theta <= theta_max && theta_max < 90.0) {
        return Err(Error::InvalidArgument(format!(
            "perspective angle {theta} outside [0, {theta_max}]"
        )));
    }
    Ok(())
}

/// Inverse-warps `img` through the pitch homography with bilinear sampling;
/// samples falling outside the source are zero.
pub fn perspective_warp(img: &Image, theta: f64, theta_max: f64) -> Result<Image> {
    check_angle(theta, theta_max)?;
    if theta == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = (img.height(), img.width());
    let pitch = Pitch::new(h, w, theta);
    let mut out = Image::zeros(h, w);
    let n = h * w;
    for y in 0..h {
        for x in 0..w {
            let Some((u, v)) = pitch.inverse(x as f64 + 0.5, y as f64 + 0.5) else {
                continue;
            };
            for c in 0..3 {
                out.data[c * n + y * w + x] = img.sample_bilinear(c, u, v);
            }
        }
    }
    Ok(out)
}

/// Maps annotations through scale, pad offset and pitch in that order; points
/// leaving the `canvas` (height, width) are dropped.
pub fn warp_points(
    points: &PointSet,
    theta: f64,
    scale: (f64, f64),
    pad_offset: (usize, usize),
    canvas: (usize, usize),
) -> PointSet {
    let (sx, sy) = scale;
    let (dy, dx) = pad_offset;
    let (h, w) = canvas;
    let pitch = (theta != 0.0).then(|| Pitch::new(h, w, theta));
    let mapped = points
        .points
        .iter()
        .filter_map(|p| {
            let u = p.x * sx + dx as f64;
            let v = p.y * sy + dy as f64;
            let (u, v) = match &pitch {
                Some(pt) => pt.forward(u, v)?,
                None => (u, v),
            };
            let q = Point::new(u, v);
            q.in_bounds(h, w).then_some(q)
        })
        .collect();
    PointSet::new(mapped)
}

/// Geometry of one transform-tree path applied to an `height x width` image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathGeometry {
    pub height: usize,
    pub width: usize,
    /// Scale factor when the scaling unit is applied.
    pub scale: Option<f64>,
    /// Pitch angle in degrees when the perspective unit is applied.
    pub theta: Option<f64>,
}

impl PathGeometry {
    pub fn scaled_size(&self) -> (usize, usize) {
        match self.scale {
            Some(s) => super::scaled_size(self.height, self.width, s),
            None => (self.height, self.width),
        }
    }

    /// Per-axis `(sx, sy)` ratios actually realized by the resize.
    pub fn scale_ratios(&self) -> (f64, f64) {
        let (h, w) = self.scaled_size();
        (w as f64 / self.width as f64, h as f64 / self.height as f64)
    }

    pub fn pad_offset(&self) -> (usize, usize) {
        let (h, w) = self.scaled_size();
        super::center_offset(h, w, self.height, self.width)
    }

    pub fn map_points(&self, points: &PointSet) -> PointSet {
        warp_points(
            points,
            self.theta.unwrap_or(0.0),
            self.scale_ratios(),
            self.pad_offset(),
            (self.height, self.width),
        )
    }
}
