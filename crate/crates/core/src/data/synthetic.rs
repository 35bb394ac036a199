//! Procedural seven-segment digits in the IDX layout.
//!
//! The generator exists so the full pipeline can run where the real corpora
//! are unavailable. Images are 28x28 bytes with dark background and bright
//! strokes; each sample jitters placement, size, slant, stroke width and
//! intensity, and adds sparse speckle noise. Results are a pure function of
//! the seed.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::{write_idx_images, write_idx_labels, Dataset, Source, Split, CLASSES, IMAGE_SIDE, PIXELS};
use crate::error::{Error, Result};
use crate::rng;

/// Segments a..g (top, upper right, lower right, bottom, lower left, upper
/// left, middle) lit for each digit.
const SEGMENTS: [[bool; 7]; CLASSES] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

const TRAIN_STREAM: u64 = 1 << 60;
const TEST_STREAM: u64 = (1 << 60) + 1;

fn segment_distance(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Renders one digit into 784 bytes.
pub fn render_digit<R: Rng + ?Sized>(digit: usize, rng: &mut R) -> Vec<u8> {
    assert!(digit < CLASSES, "digit {digit} out of range");
    let width: f32 = rng.gen_range(8.0..13.0);
    let height: f32 = rng.gen_range(15.0..20.0);
    let left = rng.gen_range(4.0..(24.0 - width));
    let top = rng.gen_range(3.0..(25.0 - height));
    let slant: f32 = rng.gen_range(-0.25..0.25);
    let half_stroke: f32 = rng.gen_range(0.9..1.7);
    let peak: f32 = rng.gen_range(180.0..255.0);

    // corner points before slant, y grows downward
    let (x0, x1) = (left, left + width);
    let (y0, ym, y1) = (top, top + height / 2.0, top + height);
    let shear = |(x, y): (f32, f32)| (x + slant * (ym - y), y);
    let ends = [
        ((x0, y0), (x1, y0)),
        ((x1, y0), (x1, ym)),
        ((x1, ym), (x1, y1)),
        ((x0, y1), (x1, y1)),
        ((x0, ym), (x0, y1)),
        ((x0, y0), (x0, ym)),
        ((x0, ym), (x1, ym)),
    ];
    let lit: Vec<_> = ends
        .iter()
        .zip(SEGMENTS[digit])
        .filter(|(_, on)| *on)
        .map(|(&(a, b), _)| (shear(a), shear(b)))
        .collect();

    let mut pixels = vec![0u8; PIXELS];
    for (i, p) in pixels.iter_mut().enumerate() {
        let (px, py) = ((i % IMAGE_SIDE) as f32 + 0.5, (i / IMAGE_SIDE) as f32 + 0.5);
        let d = lit
            .iter()
            .map(|&(a, b)| segment_distance(px, py, a, b))
            .fold(f32::INFINITY, f32::min);
        // one-pixel linear falloff outside the stroke core
        let coverage = (half_stroke + 0.5 - d).clamp(0.0, 1.0);
        let mut v = coverage * peak;
        if rng.gen_bool(0.02) {
            v = (v + rng.gen_range(0.0..120.0)).min(255.0);
        }
        *p = v.round() as u8;
    }
    pixels
}

/// `n` samples with labels cycling through a shuffled balanced order.
pub fn generate(n: usize, seed: u64, split: Split) -> (Vec<u8>, Vec<u8>) {
    let stream = match split {
        Split::Train => TRAIN_STREAM,
        Split::Test => TEST_STREAM,
    };
    let mut rng = rng::stream(seed, stream);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let digit = rng.gen_range(0..CLASSES);
        pixels.extend(render_digit(digit, &mut rng));
        labels.push(digit as u8);
    }
    (pixels, labels)
}

pub fn dataset(n: usize, seed: u64, split: Split) -> Dataset {
    let (pixels, labels) = generate(n, seed, split);
    Dataset::from_raw(&pixels, labels, split, Source::Mnist).expect("generator emits whole images")
}

/// Writes train and test splits under `<data_dir>/<source>/` using the
/// standard file names, so [`Dataset::load`] reads them like the real corpus.
pub fn write_corpus(data_dir: &Path, source: Source, train: usize, test: usize, seed: u64) -> Result<()> {
    let dir = data_dir.join(source.dir_name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for (split, n) in [(Split::Train, train), (Split::Test, test)] {
        let (pixels, labels) = generate(n, seed, split);
        let prefix = split.file_prefix();
        write_idx_images(
            &dir.join(format!("{prefix}-images-idx3-ubyte")),
            &pixels,
            n,
            IMAGE_SIDE,
            IMAGE_SIDE,
        )?;
        write_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")), &labels)?;
    }
    Ok(())
}
