//! Images, dataset statistics, normalization and splitting.

pub mod augment;
pub mod synth;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream_id_for, RngStream};
use crate::tensor::Tensor;

pub use augment::{AugmentPolicy, JitterFactors, JitterStrength};
pub use synth::synth_dataset;

/// Row-major `height × width × 3` RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, pixels }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.pixels[(r * self.width + c) * 3 + ch]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: f64) {
        self.pixels[(r * self.width + c) * 3 + ch] = v;
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &Image) -> bool {
        self.height == other.height
            && self.width == other.width
            && self
                .pixels
                .iter()
                .zip(&other.pixels)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub image: Image,
    pub label: usize,
    pub split: Split,
}

impl ImageSample {
    /// The augmentation stream for this sample in a given epoch. Depends only
    /// on `(seed, id, epoch)`, never on processing order.
    pub fn stream(&self, seed: u64, epoch: u64) -> RngStream {
        RngStream::new(seed, stream_id_for(&self.id)).derive(epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub const STD_FLOOR: f64 = 1e-6;

impl DatasetStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Per-channel mean and population standard deviation over every pixel of
/// every sample (two-pass). Callers pass the training split only.
pub fn compute_stats<'a, I>(images: I) -> Result<DatasetStats>
where
    I: IntoIterator<Item = &'a Image> + Clone,
{
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for img in images.clone() {
        for px in img.pixels.chunks(3) {
            for ch in 0..3 {
                sum[ch] += px[ch];
            }
        }
        count += img.height * img.width;
    }
    if count == 0 {
        return Err(Error::Dataset("cannot compute statistics of an empty split".into()));
    }
    let mean = sum.map(|s| s / count as f64);
    let mut sq = [0.0; 3];
    for img in images {
        for px in img.pixels.chunks(3) {
            for ch in 0..3 {
                let d = px[ch] - mean[ch];
                sq[ch] += d * d;
            }
        }
    }
    let std = sq.map(|s| math::sqrt(s / count as f64).max(STD_FLOOR));
    Ok(DatasetStats { mean, std })
}

/// Channel-first `(v - mean) / std`, flattened as `3 × H × W`.
pub fn normalize_chw(img: &Image, stats: &DatasetStats) -> Vec<f64> {
    let plane = img.height * img.width;
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in img.pixels.chunks(3).enumerate() {
        for ch in 0..3 {
            out[ch * plane + i] = (px[ch] - stats.mean[ch]) / stats.std[ch];
        }
    }
    out
}

/// `normalize_chw` wrapped as a `[3, H, W]` tensor.
pub fn normalize(img: &Image, stats: &DatasetStats) -> Tensor {
    Tensor::new(&[3, img.height, img.width], normalize_chw(img, stats)).expect("image geometry")
}

/// Stack normalized images into a `[B, 3, H, W]` batch. All images must share a size.
pub fn batch_tensor(images: &[&Image], stats: &DatasetStats) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Dataset("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::Dimension(format!(
                "batch mixes {h}x{w} and {}x{} images",
                img.height, img.width
            )));
        }
        data.extend(normalize_chw(img, stats));
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Seeded stratified split: within each class, a shuffled `test_fraction`
/// (rounded, at least one when the class has two or more samples) goes to
/// the test split.
pub fn stratified_split(samples: &mut [ImageSample], test_fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    for class in 0..classes {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        RngStream::new(seed, stream_id_for("stratified_split")).derive(class as u64).shuffle(&mut idx);
        let mut n_test = math::floor(idx.len() as f64 * test_fraction + 0.5) as usize;
        if n_test == 0 && idx.len() >= 2 && test_fraction > 0.0 {
            n_test = 1;
        }
        for (k, &i) in idx.iter().enumerate() {
            samples[i].split = if k < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_constant_and_two_point_sets() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let s = compute_stats([&a, &a]).unwrap();
        assert_eq!(s.mean, [0.5; 3]);
        assert_eq!(s.std, [STD_FLOOR; 3]);

        let z = Image::filled(3, 3, [0.0; 3]);
        let o = Image::filled(3, 3, [1.0; 3]);
        let s = compute_stats([&z, &o]).unwrap();
        assert_eq!(s.mean, [0.5; 3]);
        assert_eq!(s.std, [0.5; 3]);
    }

    #[test]
    fn stats_empty_is_dataset_error() {
        let none: [&Image; 0] = [];
        assert!(matches!(compute_stats(none), Err(Error::Dataset(_))));
    }

    #[test]
    fn stats_match_compensated_two_pass_oracle() {
        let mut rng = RngStream::new(21, 0);
        let imgs: Vec<Image> = (0..5)
            .map(|_| Image::new(6, 7, (0..126).map(|_| rng.next_f64()).collect()).unwrap())
            .collect();
        let got = compute_stats(imgs.iter()).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = imgs
                .iter()
                .flat_map(|im| im.pixels.chunks(3).map(move |p| p[ch]))
                .collect();
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for v in &vals {
                let y = v - c;
                let t = s + y;
                c = (t - s) - y;
                s = t;
            }
            let mean = s / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((got.mean[ch] - mean).abs() < 1e-10);
            assert!((got.std[ch] - var.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn normalize_centers_and_passes_through() {
        let img = Image::filled(2, 2, [0.2, 0.4, 0.6]);
        let stats = DatasetStats { mean: [0.2, 0.4, 0.6], std: [0.1, 0.2, 0.3] };
        assert!(normalize(&img, &stats).data().iter().all(|&v| v == 0.0));
        let t = normalize(&img, &DatasetStats::identity());
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert_eq!(&t.data()[..4], &[0.2; 4]);
        assert_eq!(&t.data()[8..], &[0.6; 4]);
    }

    #[test]
    fn normalized_training_set_has_unit_moments() {
        let mut rng = RngStream::new(22, 0);
        let imgs: Vec<Image> = (0..8)
            .map(|_| Image::new(5, 5, (0..75).map(|_| rng.next_f64()).collect()).unwrap())
            .collect();
        let stats = compute_stats(imgs.iter()).unwrap();
        let refs: Vec<&Image> = imgs.iter().collect();
        let t = batch_tensor(&refs, &stats).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|b| t.data()[(b * 3 + ch) * 25..(b * 3 + ch + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let mut rng = RngStream::new(1, 1);
        let mut samples = synth_dataset(40, 16, &mut rng).unwrap();
        stratified_split(&mut samples, 0.1, 9).unwrap();
        for class in 0..5 {
            let n_test = samples
                .iter()
                .filter(|s| s.label == class && s.split == Split::Test)
                .count();
            assert_eq!(n_test, 4);
        }
        let mut again = samples.clone();
        stratified_split(&mut again, 0.1, 9).unwrap();
        assert_eq!(samples, again);
    }
}
