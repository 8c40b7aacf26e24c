//! Deterministic pseudo text encoder.
//!
//! Each whitespace token is embedded from a hash of `(token, position)`, so
//! prompts sharing a prefix share the leading rows. Missing positions are
//! filled with a padding token; the unconditional embedding is all padding.

use crate::error::{Error, Result};
use crate::numerics::{stream, Array, Rng};

const PAD_TOKEN: &str = "\u{0}<pad>";

/// Text conditioning, `[text_tokens, text_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbedding {
    pub tokens: Array,
}

impl PromptEmbedding {
    pub fn text_tokens(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn text_dim(&self) -> usize {
        self.tokens.shape()[1]
    }

    /// Embedding of the empty prompt, used by the unconditional guidance branch.
    pub fn unconditional(text_tokens: usize, text_dim: usize) -> Self {
        let rows = (0..text_tokens)
            .flat_map(|pos| token_row(PAD_TOKEN, pos, text_dim))
            .collect();
        Self {
            tokens: Array::from_vec(&[text_tokens, text_dim], rows).expect("non-zero dims"),
        }
    }
}

pub fn embed_prompt(text: &str, text_tokens: usize, text_dim: usize) -> Result<PromptEmbedding> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Input("prompt must not be empty".into()));
    }
    let data = (0..text_tokens)
        .flat_map(|pos| token_row(words.get(pos).copied().unwrap_or(PAD_TOKEN), pos, text_dim))
        .collect();
    Ok(PromptEmbedding {
        tokens: Array::from_vec(&[text_tokens, text_dim], data)?,
    })
}

fn token_row(token: &str, position: usize, dim: usize) -> Vec<f32> {
    let mut rng = Rng::new(token_seed(token, position), stream::TEXT);
    (0..dim).map(|_| (rng.uniform() * 2.0 - 1.0) as f32).collect()
}

fn token_seed(token: &str, position: usize) -> u64 {
    // FNV-1a over the token bytes, then a splitmix finalizer folding in the position
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ (position as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
