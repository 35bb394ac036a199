//! Simulated (fake) quantization.
//!
//! Weights use symmetric per-tensor quantization whose step is recomputed
//! from the live weight range on every call. Activations are clipped to a
//! learnable symmetric range `[-alpha, alpha]` and snapped to a uniform grid
//! spanning that range. Rounding is not differentiable, so both quantizers
//! use straight-through gradients gated to the representable range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Smallest value a PACT clip threshold may take after an update.
pub const ALPHA_FLOOR: f64 = 1e-3;

/// Default initial PACT clip threshold, on the scale of the [0, 1] inputs.
pub const ALPHA_INIT: f64 = 1.0;

/// Quantizer bit-width, between 2 and 32 inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BitWidth(u8);

impl BitWidth {
    pub const MIN: u8 = 2;
    pub const MAX: u8 = 32;

    pub fn new(bits: u8) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&bits) {
            Ok(Self(bits))
        } else {
            Err(Error::Config(format!(
                "bit-width {bits} outside [{}, {}]",
                Self::MIN,
                Self::MAX
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// `2^b`.
    pub fn levels(self) -> u64 {
        1u64 << self.0
    }

    /// Largest positive signed level, `2^(b-1) - 1`.
    pub fn max_level(self) -> u64 {
        (1u64 << (self.0 - 1)) - 1
    }
}

impl TryFrom<u8> for BitWidth {
    type Error = Error;

    fn try_from(bits: u8) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<BitWidth> for u8 {
    fn from(b: BitWidth) -> u8 {
        b.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantMode {
    SymmetricWeights,
    PactActivations,
}

/// Grid description of one quantizer application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub bits: BitWidth,
    pub n_levels: u64,
    pub step: f64,
    pub zero_point: i64,
    pub mode: QuantMode,
}

impl QuantParams {
    /// Open interval outside of which straight-through gradients are blocked.
    pub fn representable_range(&self) -> (f64, f64) {
        match self.mode {
            QuantMode::SymmetricWeights => {
                let top = self.bits.max_level() as f64;
                (-(top + 1.0) * self.step, top * self.step)
            }
            QuantMode::PactActivations => {
                let half = self.step * (self.n_levels - 1) as f64 / 2.0;
                (-half, half)
            }
        }
    }
}

/// Step and level count for symmetric weight quantization of `w`.
///
/// A step of zero means `w` is identically zero and passes through unchanged.
pub fn weight_quant_params<T: Element>(w: &Tensor<T>, bits: BitWidth) -> QuantParams {
    let step = weight_step(w.max_abs(), bits);
    QuantParams {
        bits,
        n_levels: bits.levels(),
        step: step.to_f64().unwrap(),
        zero_point: 0,
        mode: QuantMode::SymmetricWeights,
    }
}

fn weight_step<T: Element>(max_abs: T, bits: BitWidth) -> T {
    max_abs / T::from_u64(bits.max_level()).unwrap()
}

/// Symmetric per-tensor fake quantization:
/// `step = max|w| / (2^(b-1) - 1)`, `out = step * clamp(round(w / step), -2^(b-1), 2^(b-1) - 1)`.
pub fn fake_quant_weights<T: Element>(w: &Tensor<T>, bits: u8) -> Result<Tensor<T>> {
    let bits = BitWidth::new(bits)?;
    Ok(fake_quant_with(w, bits))
}

pub(crate) fn fake_quant_with<T: Element>(w: &Tensor<T>, bits: BitWidth) -> Tensor<T> {
    let max_abs = w.max_abs();
    if max_abs == T::zero() || !max_abs.is_finite() {
        return w.clone();
    }
    let step = weight_step(max_abs, bits);
    let top = T::from_u64(bits.max_level()).unwrap();
    let bottom = -(top + T::one());
    w.map(|x| {
        let q = (x / step).round().max(bottom).min(top);
        // The outermost levels map back to max|w| itself rather than
        // top * step, so re-quantizing recovers the same step bit-exactly.
        if q == top {
            max_abs
        } else if q == -top {
            -max_abs
        } else {
            q * step
        }
    })
}

/// Straight-through gradient: `grad_out` where `w_min < w < w_max`, else 0.
pub fn ste_backward<T: Element>(
    grad_out: &Tensor<T>,
    w_float: &Tensor<T>,
    w_min: T,
    w_max: T,
) -> Result<Tensor<T>> {
    if grad_out.shape() != w_float.shape() {
        return Err(Error::Input(format!(
            "ste_backward shape mismatch {:?} vs {:?}",
            grad_out.shape(),
            w_float.shape()
        )));
    }
    if !(w_min < w_max) {
        return Err(Error::Input(format!("ste_backward needs w_min < w_max, got {w_min} >= {w_max}")));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(w_float.data())
        .map(|(&g, &w)| if w > w_min && w < w_max { g } else { T::zero() })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

/// Default STE window for weights quantized with `params`.
pub fn weight_ste_range<T: Element>(params: &QuantParams) -> (T, T) {
    let (lo, hi) = params.representable_range();
    (T::from_f64(lo).unwrap(), T::from_f64(hi).unwrap())
}

/// Learnable PACT clip threshold with its gradient slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PactAlpha<T = f32> {
    pub value: T,
    pub grad: T,
    pub initial: T,
}

impl<T: Element> PactAlpha<T> {
    pub fn new(initial: T) -> Result<Self> {
        if !(initial > T::zero()) || !initial.is_finite() {
            return Err(Error::Config(format!("PACT alpha must be positive, got {initial}")));
        }
        Ok(Self {
            value: initial,
            grad: T::zero(),
            initial,
        })
    }

    /// One gradient-descent step, then clamp to the floor.
    pub fn step(&mut self, lr: T) {
        let floor = T::from_f64(ALPHA_FLOOR).unwrap();
        self.value = (self.value - lr * self.grad).max(floor);
    }

    pub fn zero_grad(&mut self) {
        self.grad = T::zero();
    }
}

impl<T: Element> Default for PactAlpha<T> {
    fn default() -> Self {
        Self::new(T::from_f64(ALPHA_INIT).unwrap()).unwrap()
    }
}

/// `min(max(a, -alpha), alpha)`.
pub fn pact_clip<T: Element>(a: &Tensor<T>, alpha: T) -> Tensor<T> {
    a.map(|x| x.max(-alpha).min(alpha))
}

/// Returns `(grad wrt a, grad wrt alpha)`.
///
/// Inside the open window the clip is the identity; at or beyond the
/// threshold the output is `sign(a) * alpha`.
pub fn pact_clip_backward<T: Element>(grad_out: &Tensor<T>, a: &Tensor<T>, alpha: T) -> (Tensor<T>, T) {
    let mut d_alpha = T::zero();
    let d_a = grad_out
        .data()
        .iter()
        .zip(a.data())
        .map(|(&g, &x)| {
            if x.abs() < alpha {
                g
            } else {
                d_alpha = d_alpha + g * x.signum();
                T::zero()
            }
        })
        .collect();
    (Tensor::new(a.shape().to_vec(), d_a).unwrap(), d_alpha)
}

pub fn pact_quant_params(alpha: f64, bits: BitWidth) -> QuantParams {
    let n = bits.levels();
    QuantParams {
        bits,
        n_levels: n,
        step: 2.0 * alpha / (n - 1) as f64,
        zero_point: 0,
        mode: QuantMode::PactActivations,
    }
}

/// Uniform `2^b`-level grid over `[-alpha, alpha]`:
/// `out = -alpha + step * round((a + alpha) / step)`, `step = 2 alpha / (2^b - 1)`.
pub fn pact_quantize<T: Element>(a_clip: &Tensor<T>, alpha: T, bits: u8) -> Result<Tensor<T>> {
    let bits = BitWidth::new(bits)?;
    if !(alpha > T::zero()) {
        return Err(Error::Input(format!("pact_quantize needs alpha > 0, got {alpha}")));
    }
    Ok(pact_quantize_with(a_clip, alpha, bits))
}

pub(crate) fn pact_quantize_with<T: Element>(a_clip: &Tensor<T>, alpha: T, bits: BitWidth) -> Tensor<T> {
    let top = T::from_u64(bits.levels() - 1).unwrap();
    let step = (alpha + alpha) / top;
    a_clip.map(|x| {
        let q = ((x + alpha) / step).round().max(T::zero()).min(top);
        if q == top {
            alpha
        } else {
            -alpha + step * q
        }
    })
}

/// Batch-norm folding correction: `c = sigma_b / sigma`,
/// `w_corrected = c * gamma * w / sigma_b`.
pub fn bn_correction<T: Element>(sigma_batch: T, sigma_running: T, gamma: T, w: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if !(sigma_batch > T::zero()) || !(sigma_running > T::zero()) {
        return Err(Error::Input(format!(
            "bn_correction needs positive deviations, got sigma_b={sigma_batch}, sigma={sigma_running}"
        )));
    }
    let c = sigma_batch / sigma_running;
    let scale = c * gamma / sigma_batch;
    Ok((c, w.map(|x| scale * x)))
}
