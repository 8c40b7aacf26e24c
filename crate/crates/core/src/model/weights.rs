//! Flat parameter store and the `FNW1` weight file.
//!
//! Layout of a weight file (all integers little-endian):
//!
//! ```text
//! "FNW1"
//! u32 latent_channels, hidden_channels, num_blocks, levels,
//!     heads, head_dim, text_dim, text_tokens, temporal_conv (0 or 1)
//! u64 weight_seed
//! u64 value count
//! f32 values, parameters concatenated in declaration order
//! ```

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{stream, Array, Rng};

pub const WEIGHT_MAGIC: &[u8; 4] = b"FNW1";
const HEADER_LEN: usize = 4 + 9 * 4 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelWeights {
    params: Vec<Param>,
}

impl ModelWeights {
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.params[id.0].value
    }

    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

pub(crate) enum Init {
    /// `N(0, gain² / fan_in)`.
    Normal { fan_in: usize, gain: f32 },
    Zeros,
    Ones,
}

/// Allocates parameters in declaration order; parameter `i` is drawn from
/// stream `(weight_seed, WEIGHTS + i)`.
pub(crate) struct WeightBuilder {
    seed: u64,
    weights: ModelWeights,
}

impl WeightBuilder {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            seed,
            weights: ModelWeights::default(),
        }
    }

    pub(crate) fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let index = self.weights.params.len();
        let value = match init {
            Init::Zeros => Array::zeros(shape),
            Init::Ones => Array::full(shape, 1.0),
            Init::Normal { fan_in, gain } => {
                let mut rng = Rng::new(self.seed, stream::indexed(stream::WEIGHTS, index as u64));
                let std = gain as f64 / (fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| (rng.normal() * std) as f32).collect();
                Array::from_vec(shape, data).expect("parameter shape")
            }
        };
        self.weights.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(index)
    }

    pub(crate) fn finish(self) -> ModelWeights {
        self.weights
    }
}

pub(crate) fn encode_weight_file(config: &ModelConfig, weights: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + weights.value_count() * 4);
    out.extend_from_slice(WEIGHT_MAGIC);
    for v in [
        config.latent_channels,
        config.hidden_channels,
        config.num_blocks,
        config.levels,
        config.heads,
        config.head_dim,
        config.text_dim,
        config.text_tokens,
        config.temporal_conv as usize,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&config.weight_seed.to_le_bytes());
    out.extend_from_slice(&(weights.value_count() as u64).to_le_bytes());
    for p in &weights.params {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) fn decode_weight_file(bytes: &[u8]) -> Result<(ModelConfig, Vec<f32>)> {
    if bytes.len() < 4 || &bytes[..4] != WEIGHT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing FNW1 magic".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header, need {HEADER_LEN} bytes"),
        });
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let temporal_conv = match u32_at(8) {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format {
                offset: 36,
                message: format!("temporal_conv flag must be 0 or 1, got {other}"),
            })
        }
    };
    let config = ModelConfig {
        latent_channels: u32_at(0),
        hidden_channels: u32_at(1),
        num_blocks: u32_at(2),
        levels: u32_at(3),
        heads: u32_at(4),
        head_dim: u32_at(5),
        text_dim: u32_at(6),
        text_tokens: u32_at(7),
        temporal_conv,
        weight_seed: u64_at(40),
    };
    let count = u64_at(48) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(Error::Format {
            offset: (HEADER_LEN + payload.len().min(count * 4)) as u64,
            message: format!(
                "payload holds {} bytes, header declares {} values",
                payload.len(),
                count
            ),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((config, values))
}

impl ModelWeights {
    /// Overwrites all values from a flat buffer in declaration order.
    pub(crate) fn fill_from(&mut self, values: &[f32]) -> Result<()> {
        if values.len() != self.value_count() {
            return Err(Error::Format {
                offset: HEADER_LEN as u64,
                message: format!(
                    "weight file has {} values, architecture needs {}",
                    values.len(),
                    self.value_count()
                ),
            });
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }
}
