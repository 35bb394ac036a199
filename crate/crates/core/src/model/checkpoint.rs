//! Fixed-layout little-endian checkpoint format.
//!
//! ```text
//! "SAQ1" | version u32 | arch id u8 | layer1_bits u8 | layer2_bits u8
//!        | seed u64 | epochs u32
//!        | 10 x (rank u8 | dims u32 x rank | f32 data)
//! ```
//!
//! Tensors follow [`PARAM_NAMES`] order; the two alphas are rank-1 tensors of
//! length one. Bits are 0 for full precision. Arch id 0 is the standard
//! 28x28 model; id 1 marks any other size, recovered from the tensor shapes.

use std::fs;
use std::path::Path;

use super::{Architecture, BitConfig, CnnModel, ConvLayer, DenseLayer, Param, QuantSwitches, PARAM_NAMES};
use crate::error::CheckpointError;
use crate::quant::PactAlpha;
use crate::tensor::{ConvAlgo, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SAQ1";
pub const CHECKPOINT_VERSION: u32 = 1;

const ARCH_STANDARD: u8 = 0;
const ARCH_CUSTOM: u8 = 1;

/// A model plus the run metadata stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CnnModel<f32>,
    pub seed: u64,
    pub epochs: u32,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut out = Vec::with_capacity(4 * m.parameter_count() + 256);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(if m.arch == Architecture::STANDARD {
            ARCH_STANDARD
        } else {
            ARCH_CUSTOM
        });
        out.extend_from_slice(&m.bits().to_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epochs.to_le_bytes());
        let alpha1 = Tensor::new([1], vec![m.conv1.alpha.value]).unwrap();
        let alpha2 = Tensor::new([1], vec![m.conv2.alpha.value]).unwrap();
        for t in m.tensors().into_iter().chain([&alpha1, &alpha2]) {
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic { found: magic });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let arch_id = r.u8("architecture id")?;
        if arch_id != ARCH_STANDARD && arch_id != ARCH_CUSTOM {
            return Err(CheckpointError::Architecture(arch_id));
        }
        let bits = BitConfig::from_bytes([r.u8("layer1 bits")?, r.u8("layer2 bits")?])
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let seed = r.u64("seed")?;
        let epochs = r.u32("epoch count")?;

        let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
        for name in PARAM_NAMES {
            tensors.push(r.tensor(name)?);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }

        let arch = infer_arch(&tensors)?;
        if arch_id == ARCH_STANDARD && arch != Architecture::STANDARD {
            return Err(CheckpointError::Malformed(
                "architecture id 0 but tensor shapes differ from the standard model".into(),
            ));
        }
        let mut it = tensors.into_iter();
        let mut next = || Param::new(it.next().unwrap());
        let (c1w, c1b, c2w, c2b) = (next(), next(), next(), next());
        let (f1w, f1b, f2w, f2b) = (next(), next(), next(), next());
        let alpha = |p: Param<f32>| -> Result<PactAlpha<f32>, CheckpointError> {
            let v = p.value.item();
            let mut a = PactAlpha::default();
            if !(v > 0.0) || !v.is_finite() {
                return Err(CheckpointError::Malformed(format!("non-positive alpha {v}")));
            }
            a.value = v;
            Ok(a)
        };
        let (a1, a2) = (alpha(next())?, alpha(next())?);
        let model = CnnModel {
            arch,
            conv1: ConvLayer {
                weight: c1w,
                bias: c1b,
                bits: bits.layer1,
                alpha: a1,
            },
            conv2: ConvLayer {
                weight: c2w,
                bias: c2b,
                bits: bits.layer2,
                alpha: a2,
            },
            fc1: DenseLayer { weight: f1w, bias: f1b },
            fc2: DenseLayer { weight: f2w, bias: f2b },
            switches: QuantSwitches::default(),
            conv_algo: ConvAlgo::default(),
        };
        Ok(Self { model, seed, epochs })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension("saq.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(model: &CnnModel<f32>, seed: u64, epochs: u32, path: &Path) -> Result<(), CheckpointError> {
    Checkpoint {
        model: model.clone(),
        seed,
        epochs,
    }
    .save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<CnnModel<f32>, CheckpointError> {
    Checkpoint::load(path).map(|c| c.model)
}

fn infer_arch(t: &[Tensor<f32>]) -> Result<Architecture, CheckpointError> {
    let bad = |msg: String| CheckpointError::Malformed(msg);
    let shape = |i: usize, rank: usize| -> Result<&[usize], CheckpointError> {
        let s = t[i].shape();
        if s.len() != rank {
            return Err(bad(format!("{} has rank {}, expected {rank}", PARAM_NAMES[i], s.len())));
        }
        Ok(s)
    };
    let c1 = shape(0, 4)?;
    let c2 = shape(2, 4)?;
    let f1 = shape(4, 2)?;
    let f2 = shape(6, 2)?;
    let arch = Architecture {
        in_channels: c1[1],
        conv1_channels: c1[0],
        conv2_channels: c2[0],
        hidden: f1[0],
        classes: f2[0],
        image_size: {
            let per_channel = f1[1] / c2[0].max(1);
            (per_channel as f64).sqrt().round() as usize
        },
    };
    let expected: [Vec<usize>; 10] = [
        vec![arch.conv1_channels, arch.in_channels, 3, 3],
        vec![arch.conv1_channels],
        vec![arch.conv2_channels, arch.conv1_channels, 3, 3],
        vec![arch.conv2_channels],
        vec![arch.hidden, arch.fc1_inputs()],
        vec![arch.hidden],
        vec![arch.classes, arch.hidden],
        vec![arch.classes],
        vec![1],
        vec![1],
    ];
    for (i, want) in expected.iter().enumerate() {
        if t[i].shape() != want.as_slice() {
            return Err(bad(format!(
                "{} has shape {:?}, expected {:?}",
                PARAM_NAMES[i],
                t[i].shape(),
                want
            )));
        }
    }
    Ok(arch)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self, what: &'static str) -> Result<Tensor<f32>, CheckpointError> {
        let rank = self.u8(what)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32(what)? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("{what}: dimension overflow")))?;
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated { what })?, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(dims, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}
