//! In-memory datasets and their PNG + CSV directory layout.
//!
//! A labeled directory holds `NNNNN.png` images with `NNNNN.csv` annotations
//! sharing the basename. Unlabeled directories hold only images; hidden
//! target labels live in their own directory of CSVs and are loaded into
//! [`HiddenLabels`], a type no training or search routine accepts.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::io::{read_png, read_points, write_png, write_points};
use crate::imaging::{render_density_with, DensityKernel, DensityMap, Image, PointSet};

/// One labeled image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub points: PointSet,
    /// Pixel-resolution ground truth rendered from `points`.
    pub density: DensityMap,
}

impl Sample {
    pub fn new(image: Image, points: PointSet, kernel: &DensityKernel) -> Self {
        let mut points = points;
        points.retain_in_bounds(image.height(), image.width());
        let density = render_density_with(&points, image.height(), image.width(), kernel);
        Sample {
            image,
            points,
            density,
        }
    }

    pub fn count(&self) -> f64 {
        self.points.len() as f64
    }
}

/// Images with head annotations and rendered density maps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotatedDataset {
    pub samples: Vec<Sample>,
}

impl AnnotatedDataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        AnnotatedDataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.samples.iter().map(|s| &s.image)
    }

    pub fn counts(&self) -> Vec<f64> {
        self.samples.iter().map(Sample::count).collect()
    }

    /// Shared `(height, width)` of all images, or an error if they differ.
    pub fn image_size(&self) -> Result<(usize, usize)> {
        uniform_size(self.images())
    }
}

/// Target-domain images without labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnlabeledDataset {
    pub images: Vec<Image>,
}

impl UnlabeledDataset {
    pub fn new(images: Vec<Image>) -> Self {
        UnlabeledDataset { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_size(&self) -> Result<(usize, usize)> {
        uniform_size(self.images.iter())
    }
}

/// Evaluation-only target annotations, index-aligned with an [`UnlabeledDataset`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenLabels {
    pub points: Vec<PointSet>,
}

impl HiddenLabels {
    pub fn counts(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.len() as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn uniform_size<'a>(mut images: impl Iterator<Item = &'a Image>) -> Result<(usize, usize)> {
    let first = images
        .next()
        .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
    let size = (first.height(), first.width());
    for img in images {
        if (img.height(), img.width()) != size {
            return Err(Error::shape(size, (img.height(), img.width())));
        }
    }
    Ok(size)
}

fn stem(i: usize) -> String {
    format!("{i:05}")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Sorted basenames of files with `ext` in `dir`.
fn list_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(s.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

fn file(dir: &Path, stem: &str, ext: &str) -> PathBuf {
    dir.join(format!("{stem}.{ext}"))
}

pub fn save_annotated(dir: &Path, data: &AnnotatedDataset) -> Result<()> {
    create_dir(dir)?;
    for (i, s) in data.samples.iter().enumerate() {
        write_png(&file(dir, &stem(i), "png"), &s.image)?;
        write_points(&file(dir, &stem(i), "csv"), &s.points)?;
    }
    Ok(())
}

pub fn save_unlabeled(dir: &Path, data: &UnlabeledDataset) -> Result<()> {
    create_dir(dir)?;
    for (i, img) in data.images.iter().enumerate() {
        write_png(&file(dir, &stem(i), "png"), img)?;
    }
    Ok(())
}

pub fn save_labels(dir: &Path, labels: &HiddenLabels) -> Result<()> {
    create_dir(dir)?;
    for (i, p) in labels.points.iter().enumerate() {
        write_points(&file(dir, &stem(i), "csv"), p)?;
    }
    Ok(())
}

/// Loads a labeled directory; every image needs a same-named CSV.
pub fn load_annotated(dir: &Path, kernel: &DensityKernel) -> Result<AnnotatedDataset> {
    let mut samples = Vec::new();
    for s in list_stems(dir, "png")? {
        let image = read_png(&file(dir, &s, "png"))?;
        let points = read_points(&file(dir, &s, "csv"))?;
        samples.push(Sample::new(image, points, kernel));
    }
    Ok(AnnotatedDataset::new(samples))
}

pub fn load_unlabeled(dir: &Path) -> Result<UnlabeledDataset> {
    let mut images = Vec::new();
    for s in list_stems(dir, "png")? {
        images.push(read_png(&file(dir, &s, "png"))?);
    }
    Ok(UnlabeledDataset::new(images))
}

pub fn load_labels(dir: &Path) -> Result<HiddenLabels> {
    let mut points = Vec::new();
    for s in list_stems(dir, "csv")? {
        points.push(read_points(&file(dir, &s, "csv"))?);
    }
    Ok(HiddenLabels { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Point;

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::filled(16, 16, [0.2, 0.4, 0.6]);
        img.set(1, 3, 3, 1.0);
        let k = DensityKernel::default();
        let data = AnnotatedDataset::new(vec![
            Sample::new(img.clone(), PointSet::new(vec![Point::new(3.5, 3.5)]), &k),
            Sample::new(img, PointSet::default(), &k),
        ]);
        save_annotated(dir.path(), &data).unwrap();
        let back = load_annotated(dir.path(), &k).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.counts(), vec![1.0, 0.0]);
        assert_eq!(back.samples[0].points, data.samples[0].points);
        assert!(load_annotated(&dir.path().join("missing"), &k).is_err());
    }

    #[test]
    fn sample_drops_out_of_bounds_points() {
        let s = Sample::new(
            Image::zeros(16, 16),
            PointSet::new(vec![Point::new(20.0, 1.0), Point::new(2.0, 2.0)]),
            &DensityKernel::default(),
        );
        assert_eq!(s.count(), 1.0);
        assert!((s.density.sum() - 1.0).abs() < 1e-12);
    }
}
