//! Spread-spectrum embedding of LDPC-coded frames.
//!
//! Each carrier layer holds whole codewords. Codeword bit `i` of the layer
//! owns elements `[i·L, (i+1)·L)`; bit value `b` (as ±1) is added with chips
//! `c` drawn from the layer's own stream:
//! `w ← w + γ·σ·b·c`, with `σ` the layer's standard deviation before
//! embedding. Extraction correlates the same elements with the same chips.

use alloc::vec::Vec;

use super::frame::{chunk_payload, reassemble, Chunk, FoundChunk, Payload, HEADER_LEN, TRAILER_LEN};
use super::ldpc::{ldpc_decode, ldpc_encode, DecoderInput, LdpcCode};
use super::{bits_to_bytes, bytes_to_bits, carrier_entries, Extraction, StegoError, TruthStats};
use crate::rng::SplitMix64;
use crate::tensor::StateDict;

pub const DEFAULT_GAIN: f64 = 0.45;
pub const DEFAULT_CHIPS_PER_BIT: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpreadParams {
    pub seed: u64,
    /// Fraction of the layer's weight standard deviation.
    pub gain: f64,
    pub chips_per_bit: usize,
}

impl SpreadParams {
    pub fn new(seed: u64, gain: f64, chips_per_bit: usize) -> Result<Self, StegoError> {
        let p = Self {
            seed,
            gain,
            chips_per_bit,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), StegoError> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(StegoError::InvalidGain(self.gain));
        }
        if self.chips_per_bit == 0 {
            return Err(StegoError::InvalidChipsPerBit);
        }
        Ok(())
    }
}

/// Which decoder extraction runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum DecodeMode {
    #[default]
    Soft,
    Hard,
}

fn chip_stream(params: &SpreadParams, entry: usize) -> SplitMix64 {
    SplitMix64::for_indexed_stream(params.seed, "spread.chips", entry as u64)
}

fn population_std(data: &[f32]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = data.iter().map(|&v| { let d = f64::from(v) - mean; d * d }).sum::<f64>() / n;
    libm::sqrt(var)
}

fn check_code(code: &LdpcCode) -> Result<(), StegoError> {
    if code.k() % 8 != 0 {
        return Err(StegoError::InvalidCode(code.k()));
    }
    Ok(())
}

/// Whole codewords each carrier layer can hold.
pub fn spread_layer_blocks(state: &StateDict, code: &LdpcCode, chips_per_bit: usize) -> Result<Vec<usize>, StegoError> {
    if chips_per_bit == 0 {
        return Err(StegoError::InvalidChipsPerBit);
    }
    Ok(carrier_entries(state)?
        .iter()
        .map(|&e| state.entry(e).1.len() / chips_per_bit / code.n())
        .collect())
}

/// Frame bytes each carrier layer can hold.
pub fn spread_layer_capacities(state: &StateDict, code: &LdpcCode, chips_per_bit: usize) -> Result<Vec<usize>, StegoError> {
    check_code(code)?;
    Ok(spread_layer_blocks(state, code, chips_per_bit)?
        .into_iter()
        .map(|b| b * code.k() / 8)
        .collect())
}

fn plan(state: &StateDict, payload: &Payload, code: &LdpcCode, params: &SpreadParams) -> Result<(Vec<usize>, Vec<Chunk>), StegoError> {
    params.validate()?;
    let caps = spread_layer_capacities(state, code, params.chips_per_bit)?;
    let chunks = chunk_payload(payload, &caps).map_err(|e| match e {
        // Report the shortfall in channel bits: whole codewords.
        StegoError::Capacity { deficit_bits } => StegoError::Capacity {
            deficit_bits: deficit_bits.div_ceil(code.k()) * code.n(),
        },
        other => other,
    })?;
    Ok((carrier_entries(state)?, chunks))
}

/// Frame bits padded to whole messages, then encoded block by block.
fn encode_frame(frame: &[u8], code: &LdpcCode) -> Vec<u8> {
    let mut bits = bytes_to_bits(frame);
    bits.resize(bits.len().div_ceil(code.k()) * code.k(), 0);
    bits.chunks_exact(code.k())
        .flat_map(|m| ldpc_encode(m, code).expect("block length is k"))
        .collect()
}

pub fn embed_spread(
    state: &StateDict,
    payload: &Payload,
    code: &LdpcCode,
    params: &SpreadParams,
) -> Result<StateDict, StegoError> {
    let (entries, chunks) = plan(state, payload, code, params)?;
    let l = params.chips_per_bit;
    let mut out = state.clone();
    for chunk in &chunks {
        let entry = entries[chunk.layer];
        let codeword = encode_frame(&chunk.frame(payload.checksum()), code);
        let data = out.tensor_at_mut(entry).data_mut();
        let amplitude = params.gain * population_std(data);
        let mut chips = chip_stream(params, entry);
        for (slot, &bit) in codeword.iter().enumerate() {
            let sign = if bit == 1 { 1.0 } else { -1.0 };
            for w in &mut data[slot * l..(slot + 1) * l] {
                *w = (f64::from(*w) + amplitude * sign * chips.chip()) as f32;
            }
        }
    }
    Ok(out)
}

/// Correlation of each of the first `slots` bit positions with its chips.
fn correlate(data: &[f32], slots: usize, l: usize, chips: &mut SplitMix64) -> Vec<f64> {
    (0..slots)
        .map(|s| {
            data[s * l..(s + 1) * l]
                .iter()
                .map(|&w| f64::from(w) * chips.chip())
                .sum()
        })
        .collect()
}

fn decode_block(corr: &[f64], code: &LdpcCode, mode: DecodeMode) -> super::ldpc::Decoded {
    let result = match mode {
        DecodeMode::Soft => ldpc_decode(DecoderInput::Soft(corr), code),
        DecodeMode::Hard => {
            let hard: Vec<u8> = corr.iter().map(|&c| u8::from(c > 0.0)).collect();
            ldpc_decode(DecoderInput::Hard(&hard), code)
        }
    };
    result.expect("block length is n")
}

pub fn extract_spread(
    state: &StateDict,
    code: &LdpcCode,
    params: &SpreadParams,
    mode: DecodeMode,
) -> Result<Extraction, StegoError> {
    params.validate()?;
    check_code(code)?;
    let l = params.chips_per_bit;
    let (n, k) = (code.n(), code.k());
    let blocks = spread_layer_blocks(state, code, l)?;
    let mut found = Vec::new();
    let (mut raw_errors, mut raw_bits) = (0usize, 0usize);

    for (layer, &entry) in carrier_entries(state)?.iter().enumerate() {
        if blocks[layer] == 0 {
            continue;
        }
        let data = state.entry(entry).1.data();
        let corr = correlate(data, blocks[layer] * n, l, &mut chip_stream(params, entry));
        let mut message = Vec::new();
        let mut converged = true;
        let mut errors = 0;
        let mut decoded_blocks = 0;
        let mut needed = HEADER_LEN;
        while message.len() < needed * 8 && decoded_blocks < blocks[layer] {
            let block = &corr[decoded_blocks * n..(decoded_blocks + 1) * n];
            let d = decode_block(block, code, mode);
            let reencoded = ldpc_encode(&d.message, code).expect("message length is k");
            errors += block
                .iter()
                .zip(&reencoded)
                .filter(|(&c, &b)| u8::from(c > 0.0) != b)
                .count();
            converged &= d.converged;
            message.extend_from_slice(&d.message);
            decoded_blocks += 1;
            if needed == HEADER_LEN && message.len() >= HEADER_LEN * 8 {
                match FoundChunk::parse(layer, &bits_to_bytes(&message), None) {
                    Some(h) => needed = HEADER_LEN + usize::from(h.header.chunk_len) + TRAILER_LEN,
                    None => break,
                }
            }
        }
        debug_assert!(message.len() % k == 0);
        if let Some(f) = FoundChunk::parse(layer, &bits_to_bytes(&message), Some(converged)) {
            raw_errors += errors;
            raw_bits += decoded_blocks * n;
            found.push(f);
        }
    }
    let raw_ber = (raw_bits > 0).then(|| raw_errors as f64 / raw_bits as f64);
    Ok(reassemble(found, raw_ber))
}

/// Bit error rates against the known payload at the layout the embedding
/// would have used: channel errors over every codeword bit, and data errors
/// over the chunk bodies after decoding.
pub fn spread_truth_stats(
    state: &StateDict,
    truth: &Payload,
    code: &LdpcCode,
    params: &SpreadParams,
    mode: DecodeMode,
) -> Result<TruthStats, StegoError> {
    let (entries, chunks) = plan(state, truth, code, params)?;
    let l = params.chips_per_bit;
    let mut stats = TruthStats::default();
    for chunk in &chunks {
        let entry = entries[chunk.layer];
        let frame = chunk.frame(truth.checksum());
        let expected = encode_frame(&frame, code);
        let data = state.entry(entry).1.data();
        let corr = correlate(data, expected.len(), l, &mut chip_stream(params, entry));
        for (&c, &b) in corr.iter().zip(&expected) {
            stats.record_channel(u8::from(c > 0.0) != b);
        }
        let decoded: Vec<u8> = corr
            .chunks_exact(code.n())
            .flat_map(|block| decode_block(block, code, mode).message)
            .collect();
        let frame_bits = bytes_to_bits(&frame);
        let body = HEADER_LEN * 8..(HEADER_LEN + chunk.body.len()) * 8;
        for t in body {
            stats.record_data(decoded[t] != frame_bits[t]);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn state(seed: u64, lens: &[usize]) -> StateDict {
        let mut rng = SplitMix64::new(seed);
        let mut s = StateDict::new();
        for (i, &len) in lens.iter().enumerate() {
            let data = (0..len).map(|_| (rng.gaussian() * 0.05) as f32).collect();
            s.insert(alloc::format!("l{i}.weight"), Tensor::new(vec![len], data).unwrap())
                .unwrap();
            s.insert(alloc::format!("l{i}.bias"), Tensor::zeros(vec![4]).unwrap())
                .unwrap();
        }
        s
    }

    #[test]
    fn roundtrip_is_clean() {
        let code = LdpcCode::new(256, 128, 0).unwrap();
        let s = state(1, &[40_000, 40_000]);
        let params = SpreadParams::new(9, 0.5, 32).unwrap();
        let p = Payload::new((0..100).map(|i| (i * 13) as u8).collect());
        let out = embed_spread(&s, &p, &code, &params).unwrap();
        let ex = extract_spread(&out, &code, &params, DecodeMode::Soft).unwrap();
        assert!(ex.raw_ber.unwrap() < 0.05);
        assert_eq!(ex.into_payload().unwrap(), p);
        let t = spread_truth_stats(&out, &p, &code, &params, DecodeMode::Soft).unwrap();
        assert_eq!(t.true_ber(), 0.0);
    }

    #[test]
    fn perturbation_magnitude_is_gain_times_sigma() {
        let code = LdpcCode::new(32, 16, 0).unwrap();
        let s = state(2, &[5_000]);
        let params = SpreadParams::new(1, 0.25, 10).unwrap();
        let out = embed_spread(&s, &Payload::new(vec![7; 4]), &code, &params).unwrap();
        let before = s.get("l0.weight").unwrap().data();
        let after = out.get("l0.weight").unwrap().data();
        let amp = 0.25 * population_std(before);
        let frame_bits = (HEADER_LEN + 4 + TRAILER_LEN) * 8;
        let used = frame_bits.div_ceil(16) * 32 * 10;
        for (i, (&a, &b)) in before.iter().zip(after).enumerate() {
            let delta = (f64::from(b) - f64::from(a)).abs();
            if i < used {
                assert!((delta - amp).abs() < 1e-7, "{i}: {delta} vs {amp}");
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn tiny_gain_changes_almost_nothing() {
        let code = LdpcCode::new(32, 16, 0).unwrap();
        let s = state(3, &[5_000]);
        let params = SpreadParams::new(1, 1e-12, 10).unwrap();
        let out = embed_spread(&s, &Payload::new(vec![1, 2, 3]), &code, &params).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn chips_are_uncorrelated_with_random_weights() {
        let mut rng = SplitMix64::new(4);
        let trials = 10_000;
        let params = SpreadParams::new(5, 1.0, 16).unwrap();
        let mut chips = chip_stream(&params, 0);
        let mut sum = 0.0;
        for _ in 0..trials {
            let w: Vec<f32> = (0..16).map(|_| rng.gaussian() as f32).collect();
            // Normalized correlation has unit variance.
            sum += correlate(&w, 1, 16, &mut chips)[0] / 4.0;
        }
        let mean = sum / trials as f64;
        assert!(mean.abs() < 3.0 / (trials as f64).sqrt(), "{mean}");
    }

    #[test]
    fn deterministic_and_capacity_checked() {
        let code = LdpcCode::new(64, 32, 0).unwrap();
        let s = state(5, &[10_000]);
        let params = SpreadParams::new(3, 0.3, 20).unwrap();
        let p = Payload::new(vec![1; 10]);
        assert_eq!(
            embed_spread(&s, &p, &code, &params).unwrap(),
            embed_spread(&s, &p, &code, &params).unwrap()
        );
        // 10_000 / 20 / 64 = 7 blocks of 4 bytes = 28 frame bytes.
        let err = embed_spread(&s, &Payload::new(vec![1; 20]), &code, &params).unwrap_err();
        assert!(matches!(err, StegoError::Capacity { deficit_bits } if deficit_bits % 64 == 0));
        assert!(SpreadParams::new(0, 0.0, 1).is_err());
        assert!(SpreadParams::new(0, 0.1, 0).is_err());
    }

    #[test]
    fn clean_state_has_no_payload() {
        let code = LdpcCode::new(256, 128, 0).unwrap();
        let s = state(6, &[40_000]);
        let params = SpreadParams::new(9, 0.5, 32).unwrap();
        let ex = extract_spread(&s, &code, &params, DecodeMode::Soft).unwrap();
        assert!(!ex.detected && !ex.recovered);
    }
}
