//! Least-significant-bit substitution.
//!
//! Frame bits, most significant bit of each byte first, fill the low
//! `n_bits` of consecutive weight elements. Within an element the first
//! frame bit lands in bit `n_bits - 1`.

use alloc::vec::Vec;

use super::frame::{chunk_payload, reassemble, Chunk, FoundChunk, Payload, HEADER_LEN};
use super::{bits_to_bytes, bytes_to_bits, carrier_entries, StegoError, TruthStats};
use crate::tensor::StateDict;

fn check_bits(n_bits: u8) -> Result<usize, StegoError> {
    if (1..=8).contains(&n_bits) {
        Ok(usize::from(n_bits))
    } else {
        Err(StegoError::InvalidBits(n_bits))
    }
}

/// Frame bytes each carrier layer can hold.
pub fn lsb_layer_capacities(state: &StateDict, n_bits: u8) -> Result<Vec<usize>, StegoError> {
    let n = check_bits(n_bits)?;
    Ok(carrier_entries(state)?
        .iter()
        .map(|&e| n * state.entry(e).1.len() / 8)
        .collect())
}

fn plan(state: &StateDict, payload: &Payload, n_bits: u8) -> Result<(Vec<usize>, Vec<Chunk>), StegoError> {
    let caps = lsb_layer_capacities(state, n_bits)?;
    let chunks = chunk_payload(payload, &caps)?;
    Ok((carrier_entries(state)?, chunks))
}

pub fn embed_lsb(state: &StateDict, payload: &Payload, n_bits: u8) -> Result<StateDict, StegoError> {
    let n = check_bits(n_bits)?;
    let (entries, chunks) = plan(state, payload, n_bits)?;
    let mut out = state.clone();
    for chunk in &chunks {
        let bits = bytes_to_bits(&chunk.frame(payload.checksum()));
        let data = out.tensor_at_mut(entries[chunk.layer]).data_mut();
        for (t, &b) in bits.iter().enumerate() {
            let shift = n - 1 - t % n;
            let w = &mut data[t / n];
            let cleared = w.to_bits() & !(1u32 << shift);
            *w = f32::from_bits(cleared | u32::from(b) << shift);
        }
    }
    Ok(out)
}

/// All low-bit content of one layer as bytes.
fn read_layer(data: &[f32], n: usize, max_bits: usize) -> Vec<u8> {
    let total = (n * data.len()).min(max_bits);
    let bits: Vec<u8> = (0..total)
        .map(|t| ((data[t / n].to_bits() >> (n - 1 - t % n)) & 1) as u8)
        .collect();
    bits_to_bytes(&bits)
}

pub fn extract_lsb(state: &StateDict, n_bits: u8) -> Result<super::Extraction, StegoError> {
    let n = check_bits(n_bits)?;
    let mut found = Vec::new();
    for (layer, &e) in carrier_entries(state)?.iter().enumerate() {
        let data = state.entry(e).1.data();
        let head = read_layer(data, n, HEADER_LEN * 8);
        let Some(h) = FoundChunk::parse(layer, &head, None) else {
            continue;
        };
        let frame_len = HEADER_LEN + usize::from(h.header.chunk_len) + super::frame::TRAILER_LEN;
        let bytes = read_layer(data, n, frame_len * 8);
        found.extend(FoundChunk::parse(layer, &bytes, None));
    }
    Ok(reassemble(found, None))
}

/// Bit error rates against the known payload, reading each frame bit at
/// the position the embedding would have used.
pub fn lsb_truth_stats(state: &StateDict, truth: &Payload, n_bits: u8) -> Result<TruthStats, StegoError> {
    let n = check_bits(n_bits)?;
    let (entries, chunks) = plan(state, truth, n_bits)?;
    let mut stats = TruthStats::default();
    for chunk in &chunks {
        let expected = bytes_to_bits(&chunk.frame(truth.checksum()));
        let data = state.entry(entries[chunk.layer]).1.data();
        let got = bytes_to_bits(&read_layer(data, n, expected.len()));
        let body = HEADER_LEN * 8..(HEADER_LEN + chunk.body.len()) * 8;
        for (t, (&a, &b)) in expected.iter().zip(&got).enumerate() {
            stats.record_channel(a != b);
            if body.contains(&t) {
                stats.record_data(a != b);
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn state(len: usize) -> StateDict {
        let mut s = StateDict::new();
        let data = (0..len).map(|i| (i as f32 * 0.37).sin()).collect();
        s.insert("fc.weight", Tensor::new(vec![len], data).unwrap()).unwrap();
        s.insert("fc.bias", Tensor::new(vec![1], vec![0.5]).unwrap()).unwrap();
        s
    }

    #[test]
    fn one_bit_above_one() {
        let mut s = StateDict::new();
        s.insert("w.weight", Tensor::new(vec![200], vec![1.0; 200]).unwrap()).unwrap();
        // The header's first byte 0xC5 starts with a 1 bit.
        let out = embed_lsb(&s, &Payload::new(vec![0]), 1).unwrap();
        let w0 = out.get("w.weight").unwrap().data()[0];
        assert_eq!(w0.to_bits(), 1.0f32.to_bits() + 1);
        assert_eq!(w0, 1.0 + f32::EPSILON);
        // Second bit of 0xC5 is also 1, third is 0: element 2 is untouched.
        assert_eq!(out.get("w.weight").unwrap().data()[2], 1.0);
    }

    #[test]
    fn roundtrip_all_widths() {
        let s = state(3000);
        let p = Payload::new((0..150).map(|i| (i * 31 % 251) as u8).collect());
        for n_bits in 1..=8 {
            let out = embed_lsb(&s, &p, n_bits).unwrap();
            let mask = (1u32 << n_bits) - 1;
            for (a, b) in s.iter().zip(out.iter()) {
                for (x, y) in a.1.data().iter().zip(b.1.data()) {
                    assert_eq!(x.to_bits() & !mask, y.to_bits() & !mask);
                }
            }
            assert_eq!(out.get("fc.bias"), s.get("fc.bias"));
            let ex = extract_lsb(&out, n_bits).unwrap();
            assert_eq!(ex.into_payload().unwrap(), p);
            let t = lsb_truth_stats(&out, &p, n_bits).unwrap();
            assert_eq!((t.channel_ber(), t.true_ber()), (0.0, 0.0));
        }
    }

    #[test]
    fn clean_state_has_no_payload() {
        let ex = extract_lsb(&state(1000), 1).unwrap();
        assert!(!ex.detected);
        assert_eq!(ex.into_payload(), Err(StegoError::NoPayloadDetected));
    }

    #[test]
    fn capacity_and_range_errors() {
        let s = state(100);
        assert!(matches!(
            embed_lsb(&s, &Payload::new(vec![1; 20]), 1),
            Err(StegoError::Capacity { .. })
        ));
        assert_eq!(embed_lsb(&s, &Payload::new(vec![1]), 0), Err(StegoError::InvalidBits(0)));
        assert_eq!(embed_lsb(&s, &Payload::new(vec![1]), 9), Err(StegoError::InvalidBits(9)));
    }
}
