//! Vanilla-gradient saliency maps and deletion-based fidelity curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IMAGE_SIDE, PIXELS};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, CnnModel};
use crate::rng;
use crate::tensor::{Element, Tensor};
use crate::train::{input_saliency, rank_ascending, RankMode, SaliencyTarget, EVAL_BATCH};

/// Normalized absolute input gradient for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// Row-major `28 x 28`, each value in `[0, 1]`.
    pub values: Vec<f32>,
    pub image_id: usize,
    pub target: usize,
    /// Largest absolute gradient before scaling; zero for an all-zero map.
    pub raw_max: f64,
}

impl SaliencyMap {
    pub fn side(&self) -> usize {
        IMAGE_SIDE
    }
}

/// `|∂ log_softmax(f(x))[target] / ∂x|` scaled so its maximum is exactly 1.
pub fn saliency_map<T: Element>(model: &CnnModel<T>, x: &Tensor<T>, target: usize, image_id: usize) -> Result<SaliencyMap> {
    if x.shape() != [1, 1, IMAGE_SIDE, IMAGE_SIDE] {
        return Err(Error::Input(format!("saliency expects one 1x1x28x28 image, got {:?}", x.shape())));
    }
    let grad = input_saliency(model, x, &[target], SaliencyTarget::True)?;
    let abs: Vec<f64> = grad.data().iter().map(|g| g.to_f64().unwrap().abs()).collect();
    let raw_max = abs.iter().copied().fold(0.0, f64::max);
    let values = if raw_max > 0.0 {
        abs.iter().map(|&a| (a / raw_max) as f32).collect()
    } else {
        vec![0.0; abs.len()]
    };
    Ok(SaliencyMap {
        values,
        image_id,
        target,
        raw_max,
    })
}

/// Number of pixels a fraction of an image covers.
pub fn pixel_count(fraction: f64, pixels: usize) -> usize {
    ((fraction * pixels as f64).floor() as usize).min(pixels)
}

/// Replaces the `floor(threshold · 784)` least salient pixels (ties by
/// ascending index) with uniform `[0, 1)` draws.
pub fn visualize_masked<R: Rng + ?Sized>(x: &[f32], map: &SaliencyMap, threshold: f64, rng: &mut R) -> Result<Vec<f32>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Input(format!("threshold {threshold} outside [0, 1]")));
    }
    if x.len() != map.values.len() {
        return Err(Error::Input(format!("{} pixels but map has {}", x.len(), map.values.len())));
    }
    let mut out = x.to_vec();
    let count = pixel_count(threshold, x.len());
    for &i in &rank_ascending(&map.values, RankMode::Absolute)[..count] {
        out[i] = rng.gen::<f64>() as f32;
    }
    Ok(out)
}

/// Accuracy as the most salient pixels are progressively replaced by noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationCurve {
    pub model_id: String,
    pub seed: u64,
    pub replacement: String,
    /// `(fraction removed, accuracy)`, fractions strictly increasing from 0.
    pub points: Vec<(f64, f64)>,
}

pub const REPLACEMENT: &str = "uniform[0,1)";

/// `0, 0.1, ..., 1.0`.
pub fn default_fractions() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    match fractions.first() {
        Some(&f) if f == 0.0 => {}
        _ => return Err(Error::Input("fractions must start at 0".into())),
    }
    if fractions.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("fractions must be strictly increasing".into()));
    }
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(Error::Input("fractions must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Options for [`degradation_curve`].
#[derive(Debug, Clone)]
pub struct DegradeOptions {
    pub seed: u64,
    pub target: SaliencyTarget,
    pub model_id: String,
}

/// Per-image deletion curve. For each image the pixels are ranked most
/// salient first and a replacement value is pre-drawn for every rank from
/// the image's own stream, so removal sets and their values are nested
/// across fractions and independent of scheduling. Batches follow the
/// evaluation partition, making the fraction-0 accuracy equal to the plain
/// test accuracy.
pub fn degradation_curve<T: Element>(
    model: &CnnModel<T>,
    dataset: &Dataset,
    fractions: &[f64],
    opts: &DegradeOptions,
) -> Result<DegradationCurve> {
    check_fractions(fractions)?;
    if dataset.is_empty() {
        return Err(Error::Input("cannot degrade an empty dataset".into()));
    }
    let counts: Vec<usize> = fractions.iter().map(|&f| pixel_count(f, PIXELS)).collect();
    let ranges: Vec<_> = dataset.chunks(EVAL_BATCH).collect();
    let per_chunk = ranges
        .into_par_iter()
        .map(|range| -> Result<Vec<usize>> {
            let idx: Vec<usize> = range.clone().collect();
            let (x, y) = dataset.gather(&idx);
            let x = x.cast::<T>();
            let saliency = input_saliency(model, &x, &y, opts.target)?;
            let plans: Vec<RemovalPlan<T>> = idx
                .iter()
                .zip(saliency.data().chunks_exact(PIXELS))
                .map(|(&image, sal)| RemovalPlan::new(sal, opts.seed, image))
                .collect();
            let mut correct = Vec::with_capacity(counts.len());
            for &count in &counts {
                let mut masked = x.clone();
                for (row, plan) in masked.data_mut().chunks_exact_mut(PIXELS).zip(&plans) {
                    plan.apply(row, count);
                }
                let pred = argmax_rows(&model.logits(&masked)?);
                correct.push(pred.iter().zip(&y).filter(|(a, b)| a == b).count());
            }
            Ok(correct)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = dataset.len() as f64;
    let points = fractions
        .iter()
        .enumerate()
        .map(|(i, &f)| (f, per_chunk.iter().map(|c| c[i]).sum::<usize>() as f64 / n))
        .collect();
    Ok(DegradationCurve {
        model_id: opts.model_id.clone(),
        seed: opts.seed,
        replacement: REPLACEMENT.into(),
        points,
    })
}

/// Removal order and replacement values for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalPlan<T> {
    /// Pixel indices, most salient first.
    pub order: Vec<usize>,
    /// `draws[r]` replaces the pixel of rank `r`.
    pub draws: Vec<T>,
}

impl<T: Element> RemovalPlan<T> {
    /// Draws come from the stream of `(seed, image)`, one per rank.
    pub fn new(saliency: &[T], seed: u64, image: usize) -> Self {
        let mut r = rng::stream(seed, rng::DEGRADE_BASE + image as u64);
        Self {
            order: rank_descending(saliency),
            draws: (0..saliency.len()).map(|_| T::from_f64(r.gen::<f64>()).unwrap()).collect(),
        }
    }

    /// Replaces the `count` most salient pixels of `row`.
    pub fn apply(&self, row: &mut [T], count: usize) {
        for (&pixel, &v) in self.order[..count].iter().zip(&self.draws) {
            row[pixel] = v;
        }
    }
}

/// Pixel indices, largest `|saliency|` first; ties keep ascending index.
pub fn rank_descending<T: Element>(saliency: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..saliency.len()).collect();
    order.sort_by(|&a, &b| {
        saliency[b]
            .abs()
            .partial_cmp(&saliency[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

impl DegradationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,accuracy\n");
        for (f, a) in &self.points {
            writeln!(out, "{f:.6},{a:.6}").unwrap();
        }
        out
    }

    pub fn accuracy_at(&self, fraction: f64) -> Option<f64> {
        let p = &self.points;
        let i = p.iter().position(|&(f, _)| f >= fraction)?;
        if p[i].0 == fraction {
            return Some(p[i].1);
        }
        if i == 0 {
            return None;
        }
        let ((f0, a0), (f1, a1)) = (p[i - 1], p[i]);
        Some(a0 + (a1 - a0) * (fraction - f0) / (f1 - f0))
    }
}

/// Fraction-major table with one accuracy column per model.
pub fn combined_csv(curves: &[DegradationCurve]) -> Result<String> {
    let first = curves.first().ok_or_else(|| Error::Input("no curves to combine".into()))?;
    let fractions: Vec<f64> = first.points.iter().map(|p| p.0).collect();
    if curves.iter().any(|c| c.points.iter().map(|p| p.0).ne(fractions.iter().copied())) {
        return Err(Error::Input("curves sample different fractions".into()));
    }
    let mut out = String::from("fraction");
    for c in curves {
        write!(out, ",{}", c.model_id).unwrap();
    }
    out.push('\n');
    for (i, f) in fractions.iter().enumerate() {
        write!(out, "{f:.6}").unwrap();
        for c in curves {
            write!(out, ",{:.6}", c.points[i].1).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveMetrics {
    /// `acc(0) - acc(0.5)`, interpolating linearly when 0.5 is not sampled.
    pub drop_at_50pct: f64,
    /// Trapezoid rule over the sampled fractions.
    pub area_under_curve: f64,
}

pub fn curve_metrics(curve: &DegradationCurve) -> Result<CurveMetrics> {
    let p = &curve.points;
    match p.first() {
        Some(&(f, _)) if f == 0.0 => {}
        _ => return Err(Error::Input("curve does not start at fraction 0".into())),
    }
    let at_half = curve
        .accuracy_at(0.5)
        .ok_or_else(|| Error::Input("curve does not reach fraction 0.5".into()))?;
    let area_under_curve = if p.len() == 1 {
        0.0
    } else {
        p.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
    };
    Ok(CurveMetrics {
        drop_at_50pct: p[0].1 - at_half,
        area_under_curve,
    })
}

/// Binary greyscale PGM, maxval 255, `pixel = round(value · 255)`.
pub fn pgm_bytes(values: &[f32], width: usize, height: usize) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "pixel count");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, values: &[f32], width: usize, height: usize) -> Result<()> {
    fs::write(path, pgm_bytes(values, width, height)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parses a P5 file written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let bad = || Error::Input(format!("{} is not a P5 PGM", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos + 1..).ok_or_else(bad)?.to_vec();
    if data.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, data))
}
