//! The two-conv, two-dense classifier with per-layer quantization.
//!
//! Layout (stride 1, same padding, no pooling):
//!
//! ```text
//! x [N,1,28,28] -> conv1 3x3x32 -> act1 -> conv2 3x3x64 -> act2
//!               -> flatten (28*28*64) -> fc1 128 -> relu -> fc2 10 -> logits
//! ```
//!
//! A conv layer with a bit-width fake-quantizes its weights (straight-through
//! gradient) and replaces ReLU with a PACT clip plus activation quantizer. The
//! dense layers always stay in full precision.

pub mod checkpoint;
pub mod flops;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{self, BitWidth, PactAlpha};
use crate::tensor::{ConvAlgo, Element, Gradients, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use flops::{count_flops, FlopsReport, LayerFlops};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 1;
pub const PADDING: usize = 1;

/// Layer sizes. [`Architecture::STANDARD`] is the model trained on the
/// 28x28 datasets; smaller instances exist for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub image_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    pub const STANDARD: Architecture = Architecture {
        in_channels: 1,
        image_size: 28,
        conv1_channels: 32,
        conv2_channels: 64,
        hidden: 128,
        classes: 10,
    };

    /// Flattened conv2 output size; same padding keeps the spatial extent.
    pub fn fc1_inputs(&self) -> usize {
        self.conv2_channels * self.image_size * self.image_size
    }

    pub fn pixels(&self) -> usize {
        self.in_channels * self.image_size * self.image_size
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Per-conv-layer precision. `None` means full precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BitConfig {
    pub layer1: Option<BitWidth>,
    pub layer2: Option<BitWidth>,
}

impl BitConfig {
    pub const REGULAR: BitConfig = BitConfig {
        layer1: None,
        layer2: None,
    };

    pub fn quantized(layer1: u8, layer2: u8) -> Result<Self> {
        Ok(Self {
            layer1: Some(BitWidth::new(layer1)?),
            layer2: Some(BitWidth::new(layer2)?),
        })
    }

    /// The three reduced-precision configurations compared against the
    /// regular model: (2,2), (4,2), (4,4).
    pub fn quantized_presets() -> [BitConfig; 3] {
        [
            Self::quantized(2, 2).unwrap(),
            Self::quantized(4, 2).unwrap(),
            Self::quantized(4, 4).unwrap(),
        ]
    }

    /// Regular followed by the three quantized presets.
    pub fn all_presets() -> [BitConfig; 4] {
        let [a, b, c] = Self::quantized_presets();
        [Self::REGULAR, a, b, c]
    }

    pub fn layer(&self, index: usize) -> Option<BitWidth> {
        match index {
            0 => self.layer1,
            1 => self.layer2,
            _ => None,
        }
    }

    pub fn is_regular(&self) -> bool {
        self.layer1.is_none() && self.layer2.is_none()
    }

    /// Compact identifier used in file and run names, e.g. `regular`, `q4x2`.
    pub fn slug(&self) -> String {
        if self.is_regular() {
            return "regular".into();
        }
        let part = |b: Option<BitWidth>| b.map_or("fp".to_string(), |b| b.get().to_string());
        format!("q{}x{}", part(self.layer1), part(self.layer2))
    }

    /// Wire encoding: 0 for full precision.
    pub fn to_bytes(self) -> [u8; 2] {
        [
            self.layer1.map_or(0, BitWidth::get),
            self.layer2.map_or(0, BitWidth::get),
        ]
    }

    pub fn from_bytes(bytes: [u8; 2]) -> Result<Self> {
        let decode = |b: u8| if b == 0 { Ok(None) } else { BitWidth::new(b).map(Some) };
        Ok(Self {
            layer1: decode(bytes[0])?,
            layer2: decode(bytes[1])?,
        })
    }
}

impl fmt::Display for BitConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_regular() {
            return write!(f, "regular");
        }
        let part = |b: Option<BitWidth>| b.map_or("fp".to_string(), |b| b.get().to_string());
        write!(f, "({},{})", part(self.layer1), part(self.layer2))
    }
}

/// Accepts `regular`, `fp`, `4,2`, `(4,2)`, `4x2`, `q4x2`, `4-2`.
impl FromStr for BitConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "regular" | "fp" | "fp32" | "none") {
            return Ok(Self::REGULAR);
        }
        let t = t.trim_start_matches('q').trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = t.split([',', 'x', '-', '/']).map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!("cannot parse bit configuration {s:?}")));
        }
        let parse = |p: &str| -> Result<Option<BitWidth>> {
            if p == "fp" || p == "0" || p == "32f" {
                return Ok(None);
            }
            let b: u8 = p
                .parse()
                .map_err(|_| Error::Config(format!("bad bit-width {p:?} in {s:?}")))?;
            BitWidth::new(b).map(Some)
        };
        Ok(Self {
            layer1: parse(parts[0])?,
            layer2: parse(parts[1])?,
        })
    }
}

/// Lets tests switch off one quantizer while keeping the PACT clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSwitches {
    pub weights: bool,
    pub activations: bool,
}

impl Default for QuantSwitches {
    fn default() -> Self {
        Self {
            weights: true,
            activations: true,
        }
    }
}

/// A trainable tensor with an accumulating gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Element = f32> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Element> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self { value, grad: None }
    }

    pub fn accumulate(&mut self, grad: &Tensor<T>) -> Result<()> {
        match &mut self.grad {
            Some(g) => g.add_assign(grad),
            None => {
                self.grad = Some(grad.clone());
                Ok(())
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// `value -= lr * grad`; no-op without a gradient.
    pub fn sgd_step(&mut self, lr: T) {
        if let Some(g) = &self.grad {
            for (w, &d) in self.value.data_mut().iter_mut().zip(g.data()) {
                *w = *w - lr * d;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Element = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub bits: Option<BitWidth>,
    pub alpha: PactAlpha<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Element = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T: Element = f32> {
    pub arch: Architecture,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub fc1: DenseLayer<T>,
    pub fc2: DenseLayer<T>,
    pub switches: QuantSwitches,
    pub conv_algo: ConvAlgo,
}

/// Tape handles of every model parameter for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub conv1_w: Var,
    pub conv1_b: Var,
    pub conv2_w: Var,
    pub conv2_b: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
    pub alpha1: Var,
    pub alpha2: Var,
}

/// Checkpoint tensor order.
pub const PARAM_NAMES: [&str; 10] = [
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b", "alpha1", "alpha2",
];

impl<T: Element> CnnModel<T> {
    /// Weights and biases uniform in `±sqrt(1 / fan_in)`.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, bits: BitConfig, rng: &mut R) -> Self {
        let bound = |fan_in: usize| T::from_f64((1.0 / fan_in as f64).sqrt()).unwrap();
        let k2 = KERNEL * KERNEL;
        let conv = |cin: usize, cout: usize, b: Option<BitWidth>, rng: &mut R| ConvLayer {
            weight: Param::new(Tensor::uniform([cout, cin, KERNEL, KERNEL], bound(cin * k2), rng)),
            bias: Param::new(Tensor::uniform([cout], bound(cin * k2), rng)),
            bits: b,
            alpha: PactAlpha::default(),
        };
        let dense = |fin: usize, fout: usize, rng: &mut R| DenseLayer {
            weight: Param::new(Tensor::uniform([fout, fin], bound(fin), rng)),
            bias: Param::new(Tensor::uniform([fout], bound(fin), rng)),
        };
        let conv1 = conv(arch.in_channels, arch.conv1_channels, bits.layer1, rng);
        let conv2 = conv(arch.conv1_channels, arch.conv2_channels, bits.layer2, rng);
        let fc1 = dense(arch.fc1_inputs(), arch.hidden, rng);
        let fc2 = dense(arch.hidden, arch.classes, rng);
        Self {
            arch,
            conv1,
            conv2,
            fc1,
            fc2,
            switches: QuantSwitches::default(),
            conv_algo: ConvAlgo::default(),
        }
    }

    /// Every weight and bias zero.
    pub fn zeros(arch: Architecture, bits: BitConfig) -> Self {
        let conv = |cin: usize, cout: usize, b: Option<BitWidth>| ConvLayer {
            weight: Param::new(Tensor::zeros([cout, cin, KERNEL, KERNEL])),
            bias: Param::new(Tensor::zeros([cout])),
            bits: b,
            alpha: PactAlpha::default(),
        };
        let dense = |fin: usize, fout: usize| DenseLayer {
            weight: Param::new(Tensor::zeros([fout, fin])),
            bias: Param::new(Tensor::zeros([fout])),
        };
        Self {
            arch,
            conv1: conv(arch.in_channels, arch.conv1_channels, bits.layer1),
            conv2: conv(arch.conv1_channels, arch.conv2_channels, bits.layer2),
            fc1: dense(arch.fc1_inputs(), arch.hidden),
            fc2: dense(arch.hidden, arch.classes),
            switches: QuantSwitches::default(),
            conv_algo: ConvAlgo::default(),
        }
    }

    pub fn bits(&self) -> BitConfig {
        BitConfig {
            layer1: self.conv1.bits,
            layer2: self.conv2.bits,
        }
    }

    fn conv_layers(&self) -> [&ConvLayer<T>; 2] {
        [&self.conv1, &self.conv2]
    }

    /// Weight and bias tensors in checkpoint order (alphas excluded).
    pub fn tensors(&self) -> [&Tensor<T>; 8] {
        [
            &self.conv1.weight.value,
            &self.conv1.bias.value,
            &self.conv2.weight.value,
            &self.conv2.bias.value,
            &self.fc1.weight.value,
            &self.fc1.bias.value,
            &self.fc2.weight.value,
            &self.fc2.bias.value,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 8] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum::<usize>() + 2
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let mut leaf = |t: &Tensor<T>| tape.leaf(t.clone(), trainable);
        let conv1_w = leaf(&self.conv1.weight.value);
        let conv1_b = leaf(&self.conv1.bias.value);
        let conv2_w = leaf(&self.conv2.weight.value);
        let conv2_b = leaf(&self.conv2.bias.value);
        let fc1_w = leaf(&self.fc1.weight.value);
        let fc1_b = leaf(&self.fc1.bias.value);
        let fc2_w = leaf(&self.fc2.weight.value);
        let fc2_b = leaf(&self.fc2.bias.value);
        // alphas of full-precision layers never enter the graph
        let alpha1 = tape.leaf(Tensor::new([1], vec![self.conv1.alpha.value]).unwrap(), trainable);
        let alpha2 = tape.leaf(Tensor::new([1], vec![self.conv2.alpha.value]).unwrap(), trainable);
        BoundParams {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            alpha1,
            alpha2,
        }
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        const OP: &str = "CnnModel::forward";
        if x.rank() != 4 {
            return Err(Error::dim(OP, "input rank", 4, x.rank()));
        }
        let s = x.shape();
        if s[1] != self.arch.in_channels {
            return Err(Error::dim(OP, "channels (axis 1)", self.arch.in_channels, s[1]));
        }
        if s[2] != self.arch.image_size {
            return Err(Error::dim(OP, "height (axis 2)", self.arch.image_size, s[2]));
        }
        if s[3] != self.arch.image_size {
            return Err(Error::dim(OP, "width (axis 3)", self.arch.image_size, s[3]));
        }
        if s[0] == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        Ok(())
    }

    fn conv_block(&self, tape: &mut Tape<T>, layer: &ConvLayer<T>, x: Var, w: Var, b: Var, alpha: Var) -> Result<Var> {
        let w = match layer.bits {
            Some(bits) if self.switches.weights => tape.fake_quant(w, bits),
            _ => w,
        };
        let h = tape.conv2d(x, w, b, STRIDE, PADDING)?;
        match layer.bits {
            None => Ok(tape.relu(h)),
            Some(bits) => {
                let clipped = tape.pact_clip(h, alpha)?;
                if self.switches.activations {
                    tape.pact_quantize(clipped, alpha, bits)
                } else {
                    Ok(clipped)
                }
            }
        }
    }

    /// Records the forward pass and returns the `N x classes` logits.
    pub fn forward(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let h = self.conv_block(tape, &self.conv1, x, p.conv1_w, p.conv1_b, p.alpha1)?;
        let h = self.conv_block(tape, &self.conv2, h, p.conv2_w, p.conv2_b, p.alpha2)?;
        let h = tape.flatten(h)?;
        let h = tape.linear(h, p.fc1_w, p.fc1_b)?;
        let h = tape.relu(h);
        tape.linear(h, p.fc2_w, p.fc2_b)
    }

    /// Forward without gradients.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::with_conv_algo(self.conv_algo);
        let p = self.bind(&mut tape, false);
        let xv = tape.leaf(x.clone(), false);
        let out = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(out).clone())
    }

    /// Predicted class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    /// Copies the gradients of a bound pass into the parameter slots.
    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, p: &BoundParams) -> Result<()> {
        let vars = [
            p.conv1_w, p.conv1_b, p.conv2_w, p.conv2_b, p.fc1_w, p.fc1_b, p.fc2_w, p.fc2_b,
        ];
        for (param, var) in self.params_mut().into_iter().zip(vars) {
            if let Some(g) = grads.get(var) {
                param.accumulate(g)?;
            }
        }
        for (alpha, var) in [(&mut self.conv1.alpha, p.alpha1), (&mut self.conv2.alpha, p.alpha2)] {
            if let Some(g) = grads.get(var) {
                alpha.grad = alpha.grad + g.item();
            }
        }
        Ok(())
    }

    /// Plain gradient descent on every parameter, alphas included.
    pub fn sgd_step(&mut self, lr: T) {
        for p in self.params_mut() {
            p.sgd_step(lr);
        }
        for layer in [&mut self.conv1, &mut self.conv2] {
            if layer.bits.is_some() {
                layer.alpha.step(lr);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
        self.conv1.alpha.zero_grad();
        self.conv2.alpha.zero_grad();
    }

    /// Debug hook: the weights conv layer `index` (0 or 1) actually
    /// convolves with in the forward pass.
    pub fn effective_conv_weight(&self, index: usize) -> Tensor<T> {
        let layer = self.conv_layers()[index];
        match layer.bits {
            Some(bits) if self.switches.weights => quant::fake_quant_with(&layer.weight.value, bits),
            _ => layer.weight.value.clone(),
        }
    }

    pub fn cast<U: Element>(&self) -> CnnModel<U> {
        let p = |x: &Param<T>| Param::new(x.value.cast());
        let a = |x: &PactAlpha<T>| PactAlpha {
            value: U::from_f64(x.value.to_f64().unwrap()).unwrap(),
            grad: U::zero(),
            initial: U::from_f64(x.initial.to_f64().unwrap()).unwrap(),
        };
        let conv = |l: &ConvLayer<T>| ConvLayer {
            weight: p(&l.weight),
            bias: p(&l.bias),
            bits: l.bits,
            alpha: a(&l.alpha),
        };
        let dense = |l: &DenseLayer<T>| DenseLayer {
            weight: p(&l.weight),
            bias: p(&l.bias),
        };
        CnnModel {
            arch: self.arch,
            conv1: conv(&self.conv1),
            conv2: conv(&self.conv2),
            fc1: dense(&self.fc1),
            fc2: dense(&self.fc2),
            switches: self.switches,
            conv_algo: self.conv_algo,
        }
    }
}

/// Row-wise argmax; the first maximum wins.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
