//! Checkpoint container.
//!
//! Little-endian, fields in this order:
//!
//! ```text
//! magic        [u8; 8]  "SDLABCKP"
//! version      u32      1
//! spec         u32 count, then u32 widths
//! params       per layer: f64 weights (row-major), f64 biases
//! optimizer    f64 momentum, f64 weight_decay, u64 step, velocities in params layout
//! stage        u8       0 teacher, 1 distill, 2 finetune
//! epoch        u32      completed epochs
//! config_hash  u64
//! prng         [u8; 32] shuffle-stream key, u128 word position
//! ```

use std::path::Path;

use super::Stage;
use crate::codec::{read_file, write_file_atomic, ByteReader, ByteWriter};
use crate::error::Result;
use crate::nn::{Layer, MlpSpec, ModelParams};
use crate::optim::OptimState;
use crate::rng::StreamState;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDLABCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optim: OptimState,
    pub stage: Stage,
    pub epoch: u32,
    pub config_hash: u64,
    /// Position of the shuffle stream for the next epoch.
    pub shuffle: StreamState,
}

impl Checkpoint {
    pub fn spec(&self) -> &MlpSpec {
        self.params.spec()
    }
}

pub fn encode_checkpoint(cp: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let widths = cp.spec().widths();
    w.len_u32(widths.len(), "layer count")?;
    for &x in widths {
        w.len_u32(x, "width")?;
    }
    for t in cp.params.tensors() {
        w.f64s(t.data());
    }
    w.f64(cp.optim.momentum);
    w.f64(cp.optim.weight_decay);
    w.u64(cp.optim.step);
    for v in &cp.optim.velocities {
        w.f64s(v.data());
    }
    w.u8(cp.stage.code());
    w.u32(cp.epoch);
    w.u64(cp.config_hash);
    w.bytes(&cp.shuffle.key);
    w.u128(cp.shuffle.word_pos);
    Ok(w.into_bytes())
}

fn read_layers(r: &mut ByteReader<'_>, spec: &MlpSpec) -> Result<Vec<Layer>> {
    spec.widths()
        .windows(2)
        .map(|w| {
            Ok(Layer {
                weight: Tensor::matrix(w[0], w[1], r.f64s(w[0] * w[1])?)?,
                bias: Tensor::vector(r.f64s(w[1])?),
            })
        })
        .collect()
}

pub fn decode_checkpoint(bytes: &[u8], context: &str) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, context);
    r.magic(CHECKPOINT_MAGIC, "checkpoint")?;
    r.version(CHECKPOINT_VERSION)?;
    let count = r.u32()? as usize;
    if count > 1024 {
        return Err(r.corrupt(format!("implausible layer count {count}")));
    }
    let widths = (0..count)
        .map(|_| r.u32().map(|x| x as usize))
        .collect::<Result<Vec<_>>>()?;
    let spec = MlpSpec::new(widths).map_err(|e| r.corrupt(e.to_string()))?;
    let layers = read_layers(&mut r, &spec)?;
    let params = ModelParams::from_layers(spec.clone(), layers).map_err(|e| r.corrupt(e.to_string()))?;
    let momentum = r.f64()?;
    let weight_decay = r.f64()?;
    let step = r.u64()?;
    let velocities = read_layers(&mut r, &spec)?
        .into_iter()
        .flat_map(|l| [l.weight, l.bias])
        .collect();
    let stage_code = r.u8()?;
    let stage = Stage::from_code(stage_code).ok_or_else(|| r.corrupt(format!("unknown stage code {stage_code}")))?;
    let epoch = r.u32()?;
    let config_hash = r.u64()?;
    let key: [u8; 32] = r.take(32)?.try_into().unwrap();
    let word_pos = r.u128()?;
    r.finish()?;
    Ok(Checkpoint {
        params,
        optim: OptimState {
            velocities,
            momentum,
            weight_decay,
            step,
        },
        stage,
        epoch,
        config_hash,
        shuffle: StreamState { key, word_pos },
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, cp: &Checkpoint) -> Result<()> {
    write_file_atomic(path.as_ref(), &encode_checkpoint(cp)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&read_file(path)?, &path.display().to_string())
}
