//! Geometric and photometric augmentations, and the 90° rotation pretext.
//!
//! Every random transform draws from its own child of the sample stream, so
//! turning one step off never shifts the draws seen by the others.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Image;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::RngStream;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

const TAG_FLIP: u64 = 1;
const TAG_ROTATE: u64 = 2;
const TAG_JITTER: u64 = 3;
const TAG_SHARPNESS: u64 = 4;
const TAG_BLUR: u64 = 5;

#[inline]
fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Bilinear resize with half-pixel centres (`align_corners = false`).
pub fn resize_bilinear(img: &Image, h: usize, w: usize) -> Result<Image> {
    if h == 0 || w == 0 {
        return Err(Error::Geometry(format!("cannot resize to {h}x{w}")));
    }
    if h == img.height && w == img.width {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / h as f64;
    let sx = img.width as f64 / w as f64;
    let axis = |dst: usize, scale: f64, extent: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (math::floor(src) as usize).min(extent - 1);
        let i1 = (i0 + 1).min(extent - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = Image::filled(h, w, [0.0; 3]);
    for r in 0..h {
        let (r0, r1, fy) = axis(r, sy, img.height);
        for c in 0..w {
            let (c0, c1, fx) = axis(c, sx, img.width);
            for ch in 0..3 {
                let top = img.get(r0, c0, ch) * (1.0 - fx) + img.get(r0, c1, ch) * fx;
                let bot = img.get(r1, c0, ch) * (1.0 - fx) + img.get(r1, c1, ch) * fx;
                out.set(r, c, ch, clamp01(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Ok(out)
}

pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    for r in 0..img.height {
        for c in 0..img.width {
            for ch in 0..3 {
                out.set(r, c, ch, img.get(r, img.width - 1 - c, ch));
            }
        }
    }
    out
}

pub fn random_horizontal_flip(img: &Image, prob: f64, rng: &mut RngStream) -> Image {
    if rng.bernoulli(prob) {
        flip_horizontal(img)
    } else {
        img.clone()
    }
}

/// Rotate by `deg` about the image centre with bilinear resampling. Positive
/// angles send `(r, c)` toward `(c, H-1-r)` (clockwise on screen). Samples
/// that fall outside the source read as 0.
pub fn rotate(img: &Image, deg: f64) -> Image {
    if deg == 0.0 {
        return img.clone();
    }
    let (sin, cos) = exact_sin_cos(deg);
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let mut out = Image::filled(img.height, img.width, [0.0; 3]);
    let fetch = |r: isize, c: isize, ch: usize| -> f64 {
        if r < 0 || c < 0 || r >= img.height as isize || c >= img.width as isize {
            0.0
        } else {
            img.get(r as usize, c as usize, ch)
        }
    };
    for r in 0..img.height {
        for c in 0..img.width {
            let (yo, xo) = (r as f64 - cy, c as f64 - cx);
            let x = xo * cos + yo * sin + cx;
            let y = -xo * sin + yo * cos + cy;
            let (x0, y0) = (math::floor(x), math::floor(y));
            let (fx, fy) = (x - x0, y - y0);
            let (xi, yi) = (x0 as isize, y0 as isize);
            for ch in 0..3 {
                let top = fetch(yi, xi, ch) * (1.0 - fx) + fetch(yi, xi + 1, ch) * fx;
                let bot = fetch(yi + 1, xi, ch) * (1.0 - fx) + fetch(yi + 1, xi + 1, ch) * fx;
                out.set(r, c, ch, clamp01(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    out
}

/// sin/cos of an angle in degrees, exact at multiples of 90°.
fn exact_sin_cos(deg: f64) -> (f64, f64) {
    let q = deg / 90.0;
    if q == math::floor(q) {
        return match (q as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        };
    }
    let rad = deg.to_radians();
    (math::sin(rad), math::cos(rad))
}

/// Rotation by an angle drawn uniformly from `[-max_deg, max_deg]`.
pub fn random_rotation(img: &Image, max_deg: f64, rng: &mut RngStream) -> Image {
    if max_deg <= 0.0 {
        return img.clone();
    }
    rotate(img, rng.uniform(-max_deg, max_deg))
}

/// Jitter magnitudes. Multiplicative factors are drawn from `[1-f, 1+f]`,
/// the hue shift from `[-hue, hue]` of a full turn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterStrength {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterStrength {
    pub const NONE: JitterStrength = JitterStrength {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
}

/// Concrete jitter draw: factors plus the order the four adjustments run in
/// (0 brightness, 1 contrast, 2 saturation, 3 hue).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
    pub order: [u8; 4],
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_shift: 0.0,
        order: [0, 1, 2, 3],
    };

    pub fn draw(strength: &JitterStrength, rng: &mut RngStream) -> Self {
        let mut factor = |f: f64| if f > 0.0 { rng.uniform(1.0 - f, 1.0 + f).max(0.0) } else { 1.0 };
        let brightness = factor(strength.brightness);
        let contrast = factor(strength.contrast);
        let saturation = factor(strength.saturation);
        let hue_shift = if strength.hue > 0.0 {
            rng.uniform(-strength.hue, strength.hue)
        } else {
            0.0
        };
        let mut order = [0u8, 1, 2, 3];
        rng.shuffle(&mut order);
        Self {
            brightness,
            contrast,
            saturation,
            hue_shift,
            order,
        }
    }
}

fn luma(px: &[f64]) -> f64 {
    LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]
}

fn blend_towards(img: &mut Image, factor: f64, target: impl Fn(&[f64]) -> f64) {
    for px in img.pixels.chunks_mut(3) {
        let t = target(px);
        for v in px.iter_mut() {
            *v = clamp01(factor * *v + (1.0 - factor) * t);
        }
    }
}

/// Apply a fixed jitter draw. Factors equal to 1 (shift 0) are skipped, so
/// the identity draw returns the input unchanged.
pub fn apply_jitter(img: &Image, f: &JitterFactors) -> Image {
    let mut out = img.clone();
    for step in f.order {
        match step {
            0 if f.brightness != 1.0 => {
                out.pixels.iter_mut().for_each(|v| *v = clamp01(*v * f.brightness));
            }
            1 if f.contrast != 1.0 => {
                let n = (out.height * out.width) as f64;
                let mean = out.pixels.chunks(3).map(luma).sum::<f64>() / n;
                blend_towards(&mut out, f.contrast, |_| mean);
            }
            2 if f.saturation != 1.0 => blend_towards(&mut out, f.saturation, luma),
            3 if f.hue_shift != 0.0 => {
                for px in out.pixels.chunks_mut(3) {
                    let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
                    let mut h = h + f.hue_shift;
                    h -= math::floor(h);
                    let rgb = hsv_to_rgb(h, s, v);
                    for (d, s) in px.iter_mut().zip(rgb) {
                        *d = clamp01(s);
                    }
                }
            }
            _ => {}
        }
    }
    out
}

pub fn color_jitter(img: &Image, strength: &JitterStrength, rng: &mut RngStream) -> Image {
    apply_jitter(img, &JitterFactors::draw(strength, rng))
}

/// Hue in turns `[0, 1)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    if d == 0.0 {
        return (0.0, s, max);
    }
    let h = if max == r {
        (g - b) / d
    } else if max == g {
        2.0 + (b - r) / d
    } else {
        4.0 + (r - g) / d
    };
    let mut h = h / 6.0;
    h -= math::floor(h);
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let i = math::floor(h6);
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// 3×3 smoothing with kernel `[1 1 1; 1 5 1; 1 1 1] / 13`, reflected edges.
pub fn smooth3x3(img: &Image) -> Image {
    const K: [[f64; 3]; 3] = [[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]];
    let mut out = img.clone();
    for r in 0..img.height {
        for c in 0..img.width {
            for ch in 0..3 {
                let mut s = 0.0;
                for (di, row) in K.iter().enumerate() {
                    for (dj, k) in row.iter().enumerate() {
                        let rr = reflect(r as isize + di as isize - 1, img.height);
                        let cc = reflect(c as isize + dj as isize - 1, img.width);
                        s += k * img.get(rr, cc, ch);
                    }
                }
                out.set(r, c, ch, s / 13.0);
            }
        }
    }
    out
}

/// `blur + factor * (img - blur)`, clamped. Factor 1 is the identity, 0 the
/// smoothed image, above 1 sharpens.
pub fn adjust_sharpness(img: &Image, factor: f64) -> Image {
    if factor == 1.0 {
        return img.clone();
    }
    let blur = smooth3x3(img);
    let pixels = blur
        .pixels
        .iter()
        .zip(&img.pixels)
        .map(|(b, x)| clamp01(b + factor * (x - b)))
        .collect();
    Image { pixels, ..blur }
}

pub fn random_sharpness(img: &Image, factor: f64, prob: f64, rng: &mut RngStream) -> Image {
    if rng.bernoulli(prob) {
        adjust_sharpness(img, factor)
    } else {
        img.clone()
    }
}

/// Normalized 1-D Gaussian weights `exp(-i²/2σ²)` for `i` in `-k/2..=k/2`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) {
        return Err(Error::Config(format!("blur kernel must be odd, got {size}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    let half = (size / 2) as isize;
    let w: Vec<f64> = (-half..=half)
        .map(|i| math::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Separable Gaussian blur with reflected edges.
pub fn gaussian_blur(img: &Image, size: usize, sigma: f64) -> Result<Image> {
    let k = gaussian_kernel(size, sigma)?;
    if size == 1 {
        return Ok(img.clone());
    }
    let half = (size / 2) as isize;
    let (h, w) = (img.height, img.width);
    let mut tmp = vec![0.0; img.pixels.len()];
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let mut s = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let cc = reflect(c as isize + t as isize - half, w);
                    s += kv * img.get(r, cc, ch);
                }
                tmp[(r * w + c) * 3 + ch] = s;
            }
        }
    }
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let mut s = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let rr = reflect(r as isize + t as isize - half, h);
                    s += kv * tmp[(rr * w + c) * 3 + ch];
                }
                out.set(r, c, ch, clamp01(s));
            }
        }
    }
    Ok(out)
}

/// The full augmentation recipe applied to one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    pub jitter: JitterStrength,
    pub sharpness_factor: f64,
    pub sharpness_prob: f64,
    /// Odd; 1 disables the blur.
    pub blur_kernel: usize,
    pub blur_sigma_range: (f64, f64),
    pub target_size: (usize, usize),
}

impl AugmentPolicy {
    /// Training recipe: flip 0.5, rotation up to 15°, jitter 0.2/0.2/0.2/0.05,
    /// sharpness factor 0.2 at probability 0.5, 3×3 blur with σ in [0.1, 2.0].
    pub fn train(size: usize) -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation_deg: 15.0,
            jitter: JitterStrength {
                brightness: 0.2,
                contrast: 0.2,
                saturation: 0.2,
                hue: 0.05,
            },
            sharpness_factor: 0.2,
            sharpness_prob: 0.5,
            blur_kernel: 3,
            blur_sigma_range: (0.1, 2.0),
            target_size: (size, size),
        }
    }

    /// Evaluation recipe: rotation up to 5° and milder jitter only.
    pub fn test(size: usize) -> Self {
        Self {
            flip_prob: 0.0,
            max_rotation_deg: 5.0,
            jitter: JitterStrength {
                brightness: 0.1,
                contrast: 0.1,
                saturation: 0.1,
                hue: 0.02,
            },
            sharpness_factor: 1.0,
            sharpness_prob: 0.0,
            blur_kernel: 1,
            blur_sigma_range: (0.1, 2.0),
            target_size: (size, size),
        }
    }

    /// Same target size with every random step switched off: resize only.
    pub fn without_randomness(&self) -> Self {
        Self {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            jitter: JitterStrength::NONE,
            sharpness_factor: 1.0,
            sharpness_prob: 0.0,
            blur_kernel: 1,
            blur_sigma_range: self.blur_sigma_range,
            target_size: self.target_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be a probability, got {p}")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("sharpness_prob", self.sharpness_prob)?;
        let j = &self.jitter;
        for (name, v) in [
            ("max_rotation_deg", self.max_rotation_deg),
            ("sharpness_factor", self.sharpness_factor),
            ("jitter.brightness", j.brightness),
            ("jitter.contrast", j.contrast),
            ("jitter.saturation", j.saturation),
            ("jitter.hue", j.hue),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.blur_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("blur_kernel must be odd, got {}", self.blur_kernel)));
        }
        let (lo, hi) = self.blur_sigma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("blur sigma range ({lo}, {hi}) must be positive and ordered")));
        }
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::Config("target size must be positive".into()));
        }
        Ok(())
    }

    /// resize → flip → rotate → jitter → sharpness → blur. Output stays in `[0, 1]`.
    pub fn apply(&self, img: &Image, rng: &RngStream) -> Result<Image> {
        let (h, w) = self.target_size;
        let mut out = resize_bilinear(img, h, w)?;
        if self.flip_prob > 0.0 {
            out = random_horizontal_flip(&out, self.flip_prob, &mut rng.derive(TAG_FLIP));
        }
        if self.max_rotation_deg > 0.0 {
            out = random_rotation(&out, self.max_rotation_deg, &mut rng.derive(TAG_ROTATE));
        }
        if self.jitter != JitterStrength::NONE {
            out = color_jitter(&out, &self.jitter, &mut rng.derive(TAG_JITTER));
        }
        if self.sharpness_prob > 0.0 {
            out = random_sharpness(
                &out,
                self.sharpness_factor,
                self.sharpness_prob,
                &mut rng.derive(TAG_SHARPNESS),
            );
        }
        if self.blur_kernel > 1 {
            let (lo, hi) = self.blur_sigma_range;
            let sigma = rng.derive(TAG_BLUR).uniform(lo, hi);
            out = gaussian_blur(&out, self.blur_kernel, sigma)?;
        }
        Ok(out)
    }
}

/// Lossless rotation by `quarter_turns × 90°`: `(r, c) → (c, H-1-r)` per turn.
pub fn rotate90(img: &Image, quarter_turns: u8) -> Result<Image> {
    if img.height != img.width {
        return Err(Error::Geometry(format!(
            "90° rotation needs a square image, got {}x{}",
            img.height, img.width
        )));
    }
    let n = img.height;
    let mut cur = img.clone();
    for _ in 0..quarter_turns % 4 {
        let mut next = cur.clone();
        for r in 0..n {
            for c in 0..n {
                for ch in 0..3 {
                    next.set(c, n - 1 - r, ch, cur.get(r, c, ch));
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Draw a rotation label uniformly from {0, 1, 2, 3} and rotate accordingly.
pub fn rotation_pretext_sample(img: &Image, rng: &mut RngStream) -> Result<(Image, u8)> {
    let label = rng.below(4) as u8;
    Ok((rotate90(img, label)?, label))
}
