//! Canonical integer encodings of histories and futures.
//!
//! A history at step `h` is the pair sequence `(o_1, a_1, ..., o_{h-1}, a_{h-1})`
//! and a future at step `h` is `(o_h, a_h, ..., o_H, a_H)`. Both are encoded
//! lexicographically with the leftmost (earliest) pair most significant and
//! observation-major within a pair, i.e. a pair `(o, a)` contributes the digit
//! `o * A + a` in base `O * A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation/action/horizon sizes needed by the encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceDims {
    pub obs: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl SpaceDims {
    pub fn of(model: &crate::pomdp::TabularPomdp) -> Self {
        Self {
            obs: model.obs_count,
            actions: model.action_count,
            horizon: model.horizon,
        }
    }

    /// Base of one `(o, a)` digit.
    pub fn pair_base(&self) -> u64 {
        (self.obs * self.actions) as u64
    }

    /// Number of histories at step `h`: `(OA)^(h-1)`.
    pub fn history_count(&self, h: usize) -> u64 {
        self.pair_base().pow((h - 1) as u32)
    }

    /// Number of futures at step `h`: `(OA)^(H-h+1)`.
    pub fn future_count(&self, h: usize) -> u64 {
        self.pair_base().pow((self.horizon - h + 1) as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryIndex {
    pub step: usize,
    pub id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FutureIndex {
    pub step: usize,
    pub id: u64,
}

fn encode_pairs(dims: &SpaceDims, pairs: &[(usize, usize)]) -> Result<u64> {
    let base = dims.pair_base();
    let mut id = 0u64;
    for &(o, a) in pairs {
        if o >= dims.obs || a >= dims.actions {
            return Err(Error::Encoding(format!(
                "symbol (o={o}, a={a}) out of range O={}, A={}",
                dims.obs, dims.actions
            )));
        }
        id = id * base + (o * dims.actions + a) as u64;
    }
    Ok(id)
}

fn decode_pairs(dims: &SpaceDims, mut id: u64, len: usize) -> Vec<(usize, usize)> {
    let base = dims.pair_base();
    let mut pairs = vec![(0usize, 0usize); len];
    for slot in pairs.iter_mut().rev() {
        let digit = (id % base) as usize;
        *slot = (digit / dims.actions, digit % dims.actions);
        id /= base;
    }
    pairs
}

/// Encode the history `(o_1, a_1, ..., o_{h-1}, a_{h-1})`.
pub fn encode_history(dims: &SpaceDims, h: usize, pairs: &[(usize, usize)]) -> Result<HistoryIndex> {
    if h < 1 || h > dims.horizon {
        return Err(Error::Encoding(format!("step {h} outside 1..={}", dims.horizon)));
    }
    if pairs.len() != h - 1 {
        return Err(Error::Encoding(format!(
            "history at step {h} must have {} pairs, got {}",
            h - 1,
            pairs.len()
        )));
    }
    Ok(HistoryIndex {
        step: h,
        id: encode_pairs(dims, pairs)?,
    })
}

pub fn decode_history(dims: &SpaceDims, index: HistoryIndex) -> Vec<(usize, usize)> {
    decode_pairs(dims, index.id, index.step - 1)
}

/// Encode the future `(o_h, a_h, ..., o_H, a_H)`.
pub fn encode_future(dims: &SpaceDims, h: usize, pairs: &[(usize, usize)]) -> Result<FutureIndex> {
    if h < 1 || h > dims.horizon {
        return Err(Error::Encoding(format!("step {h} outside 1..={}", dims.horizon)));
    }
    if pairs.len() != dims.horizon - h + 1 {
        return Err(Error::Encoding(format!(
            "future at step {h} must have {} pairs, got {}",
            dims.horizon - h + 1,
            pairs.len()
        )));
    }
    Ok(FutureIndex {
        step: h,
        id: encode_pairs(dims, pairs)?,
    })
}

pub fn decode_future(dims: &SpaceDims, index: FutureIndex) -> Vec<(usize, usize)> {
    decode_pairs(dims, index.id, dims.horizon - index.step + 1)
}

/// Per-step indices of every history prefix and future suffix of one episode,
/// computed in one pass. `histories[h-1]` is the id of `(o_1, a_1, ..., o_{h-1},
/// a_{h-1})` and `futures[h-1]` the id of `(o_h, a_h, ..., o_H, a_H)`.
pub fn episode_indices(dims: &SpaceDims, obs: &[usize], acts: &[usize]) -> Result<(Vec<u64>, Vec<u64>)> {
    let horizon = dims.horizon;
    if obs.len() != horizon || acts.len() != horizon {
        return Err(Error::Encoding(format!(
            "episode must have H={horizon} steps, got {} obs / {} acts",
            obs.len(),
            acts.len()
        )));
    }
    let base = dims.pair_base();
    let mut histories = Vec::with_capacity(horizon);
    let mut prefix = 0u64;
    for h in 1..=horizon {
        histories.push(prefix);
        let (o, a) = (obs[h - 1], acts[h - 1]);
        if o >= dims.obs || a >= dims.actions {
            return Err(Error::Encoding(format!("symbol (o={o}, a={a}) out of range at step {h}")));
        }
        prefix = prefix * base + (o * dims.actions + a) as u64;
    }
    let mut futures = vec![0u64; horizon];
    let mut suffix = 0u64;
    let mut place = 1u64;
    for h in (1..=horizon).rev() {
        let digit = (obs[h - 1] * dims.actions + acts[h - 1]) as u64;
        suffix += digit * place;
        futures[h - 1] = suffix;
        place *= base;
    }
    Ok((histories, futures))
}
