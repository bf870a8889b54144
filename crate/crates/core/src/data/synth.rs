//! Five-class synthetic texture dataset for desk-scale runs.
//!
//! Each class has a dominant spatial frequency, a stripe orientation, a base
//! tint and a texture amplitude. Samples add a random phase, a small frequency
//! wobble, a brightness offset and per-pixel Gaussian noise.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{Image, ImageSample, Split};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::RngStream;

pub const SYNTH_CLASSES: usize = 5;

#[derive(Clone, Copy)]
enum Orientation {
    Vertical,
    Horizontal,
    Checker,
}

struct ClassSpec {
    cycles: f64,
    orientation: Orientation,
    tint: [f64; 3],
    amplitude: f64,
}

const CLASSES: [ClassSpec; SYNTH_CLASSES] = [
    ClassSpec { cycles: 2.0, orientation: Orientation::Vertical, tint: [0.72, 0.42, 0.58], amplitude: 0.12 },
    ClassSpec { cycles: 6.0, orientation: Orientation::Vertical, tint: [0.52, 0.30, 0.66], amplitude: 0.22 },
    ClassSpec { cycles: 2.0, orientation: Orientation::Horizontal, tint: [0.58, 0.62, 0.78], amplitude: 0.18 },
    ClassSpec { cycles: 6.0, orientation: Orientation::Horizontal, tint: [0.84, 0.66, 0.70], amplitude: 0.10 },
    ClassSpec { cycles: 4.0, orientation: Orientation::Checker, tint: [0.46, 0.48, 0.44], amplitude: 0.28 },
];

pub fn class_names() -> Vec<alloc::string::String> {
    (0..SYNTH_CLASSES).map(|k| format!("class_{k}")).collect()
}

/// `num_per_class` images of `size × size` for each of the five classes, in
/// class-major order. Deterministic for a given stream state.
pub fn synth_dataset(num_per_class: usize, size: usize, rng: &mut RngStream) -> Result<Vec<ImageSample>> {
    if num_per_class == 0 {
        return Err(Error::Config("synthetic dataset needs at least one sample per class".into()));
    }
    if size < 16 {
        return Err(Error::Config(format!("synthetic images must be at least 16 px, got {size}")));
    }
    let mut out = Vec::with_capacity(num_per_class * SYNTH_CLASSES);
    for (label, spec) in CLASSES.iter().enumerate() {
        for i in 0..num_per_class {
            let image = texture(spec, size, rng);
            out.push(ImageSample {
                id: format!("class_{label}/synth_{label}_{i:05}"),
                image,
                label,
                split: Split::Train,
            });
        }
    }
    Ok(out)
}

fn texture(spec: &ClassSpec, size: usize, rng: &mut RngStream) -> Image {
    let phase = rng.uniform(0.0, 2.0 * PI);
    let phase2 = rng.uniform(0.0, 2.0 * PI);
    let cycles = spec.cycles * rng.uniform(0.9, 1.1);
    let offset = rng.uniform(-0.04, 0.04);
    let k = 2.0 * PI * cycles / size as f64;
    let mut img = Image::filled(size, size, [0.0; 3]);
    for r in 0..size {
        for c in 0..size {
            let wave = match spec.orientation {
                Orientation::Vertical => math::sin(k * c as f64 + phase),
                Orientation::Horizontal => math::sin(k * r as f64 + phase),
                Orientation::Checker => math::sin(k * c as f64 + phase) * math::sin(k * r as f64 + phase2),
            };
            for ch in 0..3 {
                let v = spec.tint[ch] + offset + spec.amplitude * wave + 0.04 * rng.normal();
                img.set(r, c, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}
