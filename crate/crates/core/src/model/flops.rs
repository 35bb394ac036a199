//! Bit-width-aware multiply-accumulate counting.
//!
//! One MAC counts as one FLOP and bias additions are ignored. A conv layer
//! running at `b` bits contributes `macs * b / 32`; dense layers always run at
//! full precision.

use super::{Architecture, BitConfig, KERNEL};
use crate::quant::BitWidth;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFlops {
    pub name: &'static str,
    pub macs: u64,
    pub bits: Option<BitWidth>,
    /// `macs * bits / 32`; equal to `macs` at full precision.
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub bits: BitConfig,
    pub layers: Vec<LayerFlops>,
    pub total: f64,
}

impl FlopsReport {
    pub fn layer(&self, name: &str) -> Option<&LayerFlops> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Total with every layer at full precision.
    pub fn unscaled_total(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }
}

pub fn count_flops(arch: &Architecture, bits: BitConfig) -> FlopsReport {
    let plane = (arch.image_size * arch.image_size) as u64;
    let k2 = (KERNEL * KERNEL) as u64;
    let conv1 = plane * arch.conv1_channels as u64 * k2 * arch.in_channels as u64;
    let conv2 = plane * arch.conv2_channels as u64 * k2 * arch.conv1_channels as u64;
    let fc1 = (arch.fc1_inputs() * arch.hidden) as u64;
    let fc2 = (arch.hidden * arch.classes) as u64;

    let scaled = |macs: u64, b: Option<BitWidth>| match b {
        // exact in f64: integer counts times a dyadic fraction
        Some(b) => macs as f64 * b.get() as f64 / 32.0,
        None => macs as f64,
    };
    let layers = vec![
        LayerFlops {
            name: "conv1",
            macs: conv1,
            bits: bits.layer1,
            scaled: scaled(conv1, bits.layer1),
        },
        LayerFlops {
            name: "conv2",
            macs: conv2,
            bits: bits.layer2,
            scaled: scaled(conv2, bits.layer2),
        },
        LayerFlops {
            name: "fc1",
            macs: fc1,
            bits: None,
            scaled: fc1 as f64,
        },
        LayerFlops {
            name: "fc2",
            macs: fc2,
            bits: None,
            scaled: fc2 as f64,
        },
    ];
    let total = layers.iter().map(|l| l.scaled).sum();
    FlopsReport { bits, layers, total }
}
