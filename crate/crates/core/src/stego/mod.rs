//! Payload embedding and extraction: LSB substitution and spread spectrum
//! with LDPC coding.
//!
//! Carriers are the weight tensors (names ending in `weight`) in state-dict
//! order; biases are never touched. Each carrier layer holds at most one
//! chunk of the payload.

mod frame;
pub mod ldpc;
mod lsb;
mod spread;

use alloc::vec::Vec;

use thiserror::Error;

pub use frame::{
    chunk_payload, crc32, Chunk, ChunkHeader, ChunkStatus, Extraction, Payload, CHUNK_MAGIC, HEADER_LEN,
    TRAILER_LEN,
};
pub use ldpc::{ldpc_decode, ldpc_encode, Decoded, DecoderInput, LdpcCode, LdpcError};
pub use lsb::{embed_lsb, extract_lsb, lsb_layer_capacities, lsb_truth_stats};
pub use spread::{
    embed_spread, extract_spread, spread_layer_blocks, spread_layer_capacities, spread_truth_stats, DecodeMode,
    SpreadParams, DEFAULT_CHIPS_PER_BIT, DEFAULT_GAIN,
};

use crate::tensor::{is_weight_name, selected_entries, StateDict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StegoError {
    #[error("payload is empty")]
    EmptyPayload,
    #[error("insufficient capacity: {deficit_bits} more bits needed")]
    Capacity { deficit_bits: usize },
    #[error("payload needs {0} chunks, more than 65535")]
    TooManyChunks(usize),
    #[error("n_bits must be between 1 and 8, got {0}")]
    InvalidBits(u8),
    #[error("gain must be positive and finite, got {0}")]
    InvalidGain(f64),
    #[error("chips per bit must be at least 1")]
    InvalidChipsPerBit,
    #[error("LDPC message length {0} is not a whole number of bytes")]
    InvalidCode(usize),
    #[error("state has no weight tensors to carry a payload")]
    NoCarrier,
    #[error("no payload detected")]
    NoPayloadDetected,
    #[error("integrity failure: {bad_chunks} bad chunks, {recovered_bytes} bytes recovered")]
    Integrity {
        bad_chunks: usize,
        recovered_bytes: usize,
    },
    #[error(transparent)]
    Ldpc(#[from] LdpcError),
}

/// Entry indices of carrier tensors.
pub fn carrier_entries(state: &StateDict) -> Result<Vec<usize>, StegoError> {
    let e = selected_entries(state, is_weight_name);
    if e.is_empty() {
        return Err(StegoError::NoCarrier);
    }
    Ok(e)
}

/// Most significant bit first.
pub(crate) fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect()
}

/// Inverse of [`bytes_to_bits`]; a trailing partial byte is dropped.
pub(crate) fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks_exact(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| acc << 1 | (b & 1)))
        .collect()
}

/// Error counts measured against a known payload.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TruthStats {
    pub channel_errors: usize,
    pub channel_bits: usize,
    pub data_errors: usize,
    pub data_bits: usize,
}

impl TruthStats {
    pub(crate) fn record_channel(&mut self, error: bool) {
        self.channel_bits += 1;
        self.channel_errors += usize::from(error);
    }

    pub(crate) fn record_data(&mut self, error: bool) {
        self.data_bits += 1;
        self.data_errors += usize::from(error);
    }

    /// Errors over every embedded bit (coded bits for spread spectrum).
    pub fn channel_ber(&self) -> f64 {
        ratio(self.channel_errors, self.channel_bits)
    }

    /// Errors over payload data bits after decoding.
    pub fn true_ber(&self) -> f64 {
        ratio(self.data_errors, self.data_bits)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Scheme selector for [`capacity`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CapacityScheme {
    Lsb { n_bits: u8 },
    Spread { chips_per_bit: usize },
}

/// Raw capacity in bits over all carrier elements: `n_bits × count` for
/// LSB and `⌊count / L⌋` for spread spectrum. The usable spread capacity is
/// lower because each layer holds whole codewords; see
/// [`spread_layer_capacities`].
pub fn capacity(state: &StateDict, scheme: CapacityScheme) -> usize {
    let count: usize = selected_entries(state, is_weight_name)
        .iter()
        .map(|&e| state.entry(e).1.len())
        .sum();
    match scheme {
        CapacityScheme::Lsb { n_bits } => usize::from(n_bits) * count,
        CapacityScheme::Spread { chips_per_bit } => count.checked_div(chips_per_bit).unwrap_or(0),
    }
}

/// A configured embedding scheme.
#[derive(Clone, Debug, PartialEq)]
pub enum Scheme {
    Lsb { n_bits: u8 },
    Spread {
        code: LdpcCode,
        params: SpreadParams,
        mode: DecodeMode,
    },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Lsb { .. } => "lsb",
            Scheme::Spread { .. } => "spread",
        }
    }

    /// Frame bytes per carrier layer.
    pub fn layer_capacities(&self, state: &StateDict) -> Result<Vec<usize>, StegoError> {
        match self {
            Scheme::Lsb { n_bits } => lsb_layer_capacities(state, *n_bits),
            Scheme::Spread { code, params, .. } => spread_layer_capacities(state, code, params.chips_per_bit),
        }
    }

    pub fn embed(&self, state: &StateDict, payload: &Payload) -> Result<StateDict, StegoError> {
        match self {
            Scheme::Lsb { n_bits } => embed_lsb(state, payload, *n_bits),
            Scheme::Spread { code, params, .. } => embed_spread(state, payload, code, params),
        }
    }

    pub fn extract(&self, state: &StateDict) -> Result<Extraction, StegoError> {
        match self {
            Scheme::Lsb { n_bits } => extract_lsb(state, *n_bits),
            Scheme::Spread { code, params, mode } => extract_spread(state, code, params, *mode),
        }
    }

    pub fn truth_stats(&self, state: &StateDict, truth: &Payload) -> Result<TruthStats, StegoError> {
        match self {
            Scheme::Lsb { n_bits } => lsb_truth_stats(state, truth, *n_bits),
            Scheme::Spread { code, params, mode } => spread_truth_stats(state, truth, code, params, *mode),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn capacity_formulas() {
        let mut s = StateDict::new();
        s.insert("a.weight", Tensor::zeros(vec![10, 100]).unwrap()).unwrap();
        s.insert("a.bias", Tensor::zeros(vec![10]).unwrap()).unwrap();
        assert_eq!(capacity(&s, CapacityScheme::Lsb { n_bits: 1 }), 1000);
        assert_eq!(capacity(&s, CapacityScheme::Spread { chips_per_bit: 100 }), 10);
    }

    #[test]
    fn bit_helpers() {
        assert_eq!(bytes_to_bits(&[0xC5]), vec![1, 1, 0, 0, 0, 1, 0, 1]);
        assert_eq!(bits_to_bytes(&bytes_to_bits(&[1, 2, 255])), vec![1, 2, 255]);
        assert_eq!(bits_to_bytes(&[1, 0, 1]), Vec::<u8>::new());
    }
}
