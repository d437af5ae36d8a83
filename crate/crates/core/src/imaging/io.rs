//! On-disk formats: 8-bit PNG images and `x,y` CSV head annotations.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::{Image, Point, PointSet};
use crate::error::{Error, Result};

/// Largest accepted PNG side; guards decoder allocations.
const MAX_SIDE: u32 = 8192;

/// Encodes an image as 8-bit RGB PNG, mapping `[0, 1]` linearly onto `0..=255`.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let (h, w) = (img.height(), img.width());
    let mut raw = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raw.push((img.get(c, y, x) * 255.0).round() as u8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&raw).map_err(png_err)?;
    }
    Ok(out)
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format {
        what: "png",
        detail: e.to_string(),
    }
}

/// Decodes gray, gray+alpha, RGB or RGBA PNG data (any bit depth) into an image.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut limits = png::Limits::default();
    limits.bytes = 64 << 20;
    let mut dec = png::Decoder::new_with_limits(Cursor::new(bytes), limits);
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(png_err)?;
    let (w, h) = {
        let info = reader.info();
        (info.width, info.height)
    };
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(png_err(format!("unsupported dimensions {w}x{h}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("output buffer size overflow"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err("indexed output after expansion")),
    };
    let (w, h) = (frame.width as usize, frame.height as usize);
    let stride = frame.line_size;
    if stride < w * channels || buf.len() < stride * h {
        return Err(png_err("truncated frame"));
    }
    let mut img = Image::zeros(h, w);
    for y in 0..h {
        let row = &buf[y * stride..y * stride + w * channels];
        for x in 0..w {
            let px = &row[x * channels..(x + 1) * channels];
            let rgb = if channels < 3 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            };
            for (c, v) in rgb.iter().enumerate() {
                img.set(c, y, x, f64::from(*v) / 255.0);
            }
        }
    }
    Ok(img)
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes = encode_png(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

/// Serializes annotations as CSV with header `x,y`.
pub fn encode_points(points: &PointSet) -> String {
    let mut s = String::from("x,y\n");
    for p in &points.points {
        s.push_str(&format!("{},{}\n", p.x, p.y));
    }
    s
}

/// Parses `x,y` CSV. Blank lines are skipped; every other row must hold two
/// finite numbers.
pub fn decode_points(text: &str) -> Result<PointSet> {
    let bad = |line: usize, detail: &str| Error::Format {
        what: "annotation csv",
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i, l),
            None => return Err(bad(1, "missing header")),
        }
    };
    let cols: Vec<&str> = header.1.trim().trim_start_matches('\u{feff}').split(',').collect();
    if cols.len() != 2 || cols[0].trim() != "x" || cols[1].trim() != "y" {
        return Err(bad(header.0 + 1, "expected header `x,y`"));
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let (Some(xs), Some(ys), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad(i + 1, "expected two columns"));
        };
        let x: f64 = xs.trim().parse().map_err(|_| bad(i + 1, "x is not a number"))?;
        let y: f64 = ys.trim().parse().map_err(|_| bad(i + 1, "y is not a number"))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(bad(i + 1, "non-finite coordinate"));
        }
        points.push(Point::new(x, y));
    }
    Ok(PointSet::new(points))
}

pub fn write_points(path: &Path, points: &PointSet) -> Result<()> {
    fs::write(path, encode_points(points)).map_err(|e| Error::io(path, e))
}

pub fn read_points(path: &Path) -> Result<PointSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_points(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn png_round_trip_is_quantized() {
        let mut img = Image::zeros(3, 5);
        for y in 0..3 {
            for x in 0..5 {
                img.set(0, y, x, (y * 5 + x) as f64 / 14.0);
                img.set(2, y, x, 1.0);
            }
        }
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!((back.height(), back.width()), (3, 5));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // quantized images survive exactly
        assert_eq!(decode_png(&encode_png(&back).unwrap()).unwrap(), back);
    }

    #[test]
    fn png_rejects_garbage() {
        assert!(decode_png(b"not a png").is_err());
        assert!(decode_png(&[]).is_err());
    }

    #[test]
    fn csv_parsing() {
        let p = decode_points("x,y\n1.5,2\n\n3,4.25\n").unwrap();
        assert_eq!(p.points, vec![Point::new(1.5, 2.0), Point::new(3.0, 4.25)]);
        assert!(decode_points("x,y\n").unwrap().is_empty());
        assert!(decode_points("").is_err());
        assert!(decode_points("a,b\n1,2\n").is_err());
        assert!(decode_points("x,y\n1\n").is_err());
        assert!(decode_points("x,y\n1,2,3\n").is_err());
        assert!(decode_points("x,y\nNaN,2\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(pts in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 0..30)) {
            let set = PointSet::new(pts.into_iter().map(|(x, y)| Point::new(x, y)).collect());
            prop_assert_eq!(decode_points(&encode_points(&set)).unwrap(), set);
        }
    }
}
