//! Payload framing: CRC-tagged chunks, one per carrier layer.
//!
//! A layer's frame is a 12-byte [`ChunkHeader`], the chunk body, and after
//! the last chunk only, the 4-byte CRC-32 of the whole payload.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::StegoError;

pub const CHUNK_MAGIC: [u8; 2] = [0xC5, 0x7E];
pub const HEADER_LEN: usize = 12;
pub const TRAILER_LEN: usize = 4;

pub fn crc32(data: &[u8]) -> u32 {
    crc32fast::hash(data)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    data: Vec<u8>,
    checksum: u32,
}

impl Payload {
    pub fn new(data: Vec<u8>) -> Self {
        let checksum = crc32(&data);
        Self { data, checksum }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

/// Little-endian layout: magic 2 | index u16 | count u16 | len u16 | crc u32.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkHeader {
    pub chunk_index: u16,
    pub chunk_count: u16,
    pub chunk_len: u16,
    pub chunk_crc: u32,
}

impl ChunkHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..2].copy_from_slice(&CHUNK_MAGIC);
        out[2..4].copy_from_slice(&self.chunk_index.to_le_bytes());
        out[4..6].copy_from_slice(&self.chunk_count.to_le_bytes());
        out[6..8].copy_from_slice(&self.chunk_len.to_le_bytes());
        out[8..12].copy_from_slice(&self.chunk_crc.to_le_bytes());
        out
    }

    /// Parses a header. `None` unless the magic matches and
    /// `chunk_index < chunk_count`.
    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < HEADER_LEN || bytes[..2] != CHUNK_MAGIC {
            return None;
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let h = Self {
            chunk_index: u16_at(2),
            chunk_count: u16_at(4),
            chunk_len: u16_at(6),
            chunk_crc: u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]),
        };
        (h.chunk_index < h.chunk_count).then_some(h)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub header: ChunkHeader,
    /// Position of the carrier layer in the capacity list.
    pub layer: usize,
    pub body: Vec<u8>,
}

impl Chunk {
    pub fn is_last(&self) -> bool {
        self.header.chunk_index + 1 == self.header.chunk_count
    }

    /// Header, body, and the payload CRC trailer on the last chunk.
    pub fn frame(&self, payload_crc: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len() + TRAILER_LEN);
        out.extend_from_slice(&self.header.encode());
        out.extend_from_slice(&self.body);
        if self.is_last() {
            out.extend_from_slice(&payload_crc.to_le_bytes());
        }
        out
    }
}

/// Splits `payload` across layers whose frame capacities, in bytes, are
/// `capacities`. Layers are filled greedily in order; a layer too small for
/// a header and one body byte is skipped.
pub fn chunk_payload(payload: &Payload, capacities: &[usize]) -> Result<Vec<Chunk>, StegoError> {
    if payload.is_empty() {
        return Err(StegoError::EmptyPayload);
    }
    let data = payload.data();
    let mut spans = Vec::new();
    let mut offset = 0;
    for (layer, &cap) in capacities.iter().enumerate() {
        let remaining = data.len() - offset;
        if remaining == 0 {
            break;
        }
        if cap <= HEADER_LEN {
            continue;
        }
        let room = (cap - HEADER_LEN).min(usize::from(u16::MAX));
        let body = if remaining + TRAILER_LEN <= room {
            remaining
        } else {
            room.min(remaining - 1)
        };
        if body == 0 {
            continue;
        }
        spans.push((layer, offset, body));
        offset += body;
    }
    let remaining = data.len() - offset;
    if remaining > 0 {
        return Err(StegoError::Capacity {
            deficit_bits: 8 * (remaining + HEADER_LEN + TRAILER_LEN),
        });
    }
    let count = u16::try_from(spans.len()).map_err(|_| StegoError::TooManyChunks(spans.len()))?;
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, (layer, start, len))| {
            let body = data[start..start + len].to_vec();
            Chunk {
                header: ChunkHeader {
                    chunk_index: i as u16,
                    chunk_count: count,
                    chunk_len: len as u16,
                    chunk_crc: crc32(&body),
                },
                layer,
                body,
            }
        })
        .collect())
}

/// Verdict on one chunk found (or expected but missing) during extraction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkStatus {
    pub index: u16,
    /// Carrier layer position, `None` when the chunk was never found.
    pub layer: Option<usize>,
    pub present: bool,
    pub crc_ok: bool,
    /// LDPC convergence of every block the chunk spans; `None` for LSB.
    pub ldpc_converged: Option<bool>,
}

/// Outcome of an extraction attempt.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    /// Some layer carried a valid chunk header.
    pub detected: bool,
    /// Every chunk present with a matching CRC and the payload CRC matches.
    pub recovered: bool,
    /// Verified payload bytes, if recovered.
    pub payload: Option<Vec<u8>>,
    /// Bytes of CRC-valid chunk bodies.
    pub recovered_bytes: usize,
    pub chunks: Vec<ChunkStatus>,
    /// Decoder-relative raw bit error rate, when any codeword was decoded.
    pub raw_ber: Option<f64>,
}

impl Extraction {
    pub fn into_payload(self) -> Result<Payload, StegoError> {
        match self.payload {
            Some(p) if self.recovered => Ok(Payload::new(p)),
            _ if !self.detected => Err(StegoError::NoPayloadDetected),
            _ => Err(StegoError::Integrity {
                bad_chunks: self.chunks.iter().filter(|c| !c.crc_ok).count(),
                recovered_bytes: self.recovered_bytes,
            }),
        }
    }
}

/// A header found at the start of a layer's frame bytes.
pub(crate) struct FoundChunk {
    pub layer: usize,
    pub header: ChunkHeader,
    pub body: Option<Vec<u8>>,
    pub trailer: Option<u32>,
    pub ldpc_converged: Option<bool>,
}

impl FoundChunk {
    /// Reads a frame from a layer's bytes. `None` without a valid header.
    pub fn parse(layer: usize, bytes: &[u8], ldpc_converged: Option<bool>) -> Option<Self> {
        let header = ChunkHeader::decode(bytes)?;
        let end = HEADER_LEN + usize::from(header.chunk_len);
        let body = bytes.get(HEADER_LEN..end).map(<[u8]>::to_vec);
        let trailer = if header.chunk_index + 1 == header.chunk_count {
            bytes
                .get(end..end + TRAILER_LEN)
                .map(|t| u32::from_le_bytes([t[0], t[1], t[2], t[3]]))
        } else {
            None
        };
        Some(Self {
            layer,
            header,
            body,
            trailer,
            ldpc_converged,
        })
    }

    fn crc_ok(&self) -> bool {
        self.body.as_deref().is_some_and(|b| crc32(b) == self.header.chunk_crc)
    }
}

/// Reassembles chunks found across layers.
///
/// The chunk count is taken from the CRC-valid headers (or, failing that,
/// from any header); indices beyond it are ignored and missing ones are
/// reported as absent.
pub(crate) fn reassemble(found: Vec<FoundChunk>, raw_ber: Option<f64>) -> Extraction {
    if found.is_empty() {
        return Extraction {
            detected: false,
            recovered: false,
            payload: None,
            recovered_bytes: 0,
            chunks: Vec::new(),
            raw_ber,
        };
    }
    let mut votes: BTreeMap<u16, (usize, usize)> = BTreeMap::new();
    for f in &found {
        let e = votes.entry(f.header.chunk_count).or_default();
        if f.crc_ok() {
            e.0 += 1;
        }
        e.1 += 1;
    }
    let count = votes
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&c, _)| c)
        .expect("nonempty");

    let mut by_index: BTreeMap<u16, FoundChunk> = BTreeMap::new();
    for f in found {
        if f.header.chunk_count != count {
            continue;
        }
        let replace = match by_index.get(&f.header.chunk_index) {
            None => true,
            Some(prev) => !prev.crc_ok() && f.crc_ok(),
        };
        if replace {
            by_index.insert(f.header.chunk_index, f);
        }
    }

    let mut chunks = Vec::with_capacity(usize::from(count));
    let mut data = Vec::new();
    let mut complete = true;
    let mut recovered_bytes = 0;
    let mut trailer = None;
    for index in 0..count {
        match by_index.get(&index) {
            Some(f) => {
                let ok = f.crc_ok();
                if ok {
                    let body = f.body.as_deref().expect("crc_ok implies body");
                    recovered_bytes += body.len();
                    data.extend_from_slice(body);
                } else {
                    complete = false;
                }
                if index + 1 == count {
                    trailer = f.trailer;
                }
                chunks.push(ChunkStatus {
                    index,
                    layer: Some(f.layer),
                    present: true,
                    crc_ok: ok,
                    ldpc_converged: f.ldpc_converged,
                });
            }
            None => {
                complete = false;
                chunks.push(ChunkStatus {
                    index,
                    layer: None,
                    present: false,
                    crc_ok: false,
                    ldpc_converged: None,
                });
            }
        }
    }
    let recovered = complete && trailer == Some(crc32(&data));
    Extraction {
        detected: true,
        recovered,
        payload: recovered.then_some(data),
        recovered_bytes,
        chunks,
        raw_ber,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn header_layout() {
        let h = ChunkHeader {
            chunk_index: 1,
            chunk_count: 3,
            chunk_len: 0x0102,
            chunk_crc: 0xAABBCCDD,
        };
        assert_eq!(
            h.encode(),
            [0xC5, 0x7E, 1, 0, 3, 0, 0x02, 0x01, 0xDD, 0xCC, 0xBB, 0xAA]
        );
        assert_eq!(ChunkHeader::decode(&h.encode()), Some(h));
        let mut bad = h.encode();
        bad[4] = 1; // index 1 of count 1
        assert_eq!(ChunkHeader::decode(&bad), None);
    }

    #[test]
    fn crc_reference_value() {
        // CRC-32/ISO-HDLC check value.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn single_chunk_when_room() {
        let p = Payload::new((0..10).collect());
        let chunks = chunk_payload(&p, &[1000]).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].header.chunk_count, 1);
        assert_eq!(chunks[0].body, p.data());
        assert_eq!(chunks[0].frame(p.checksum()).len(), 10 + HEADER_LEN + TRAILER_LEN);
    }

    #[test]
    fn spreads_over_layers_and_concatenates() {
        let p = Payload::new((0..100).map(|i| (i * 7) as u8).collect());
        let chunks = chunk_payload(&p, &[40, 40, 40, 40]).unwrap();
        assert_eq!(chunks.len(), 4);
        let joined: Vec<u8> = chunks.iter().flat_map(|c| c.body.clone()).collect();
        assert_eq!(joined, p.data());
        for (i, c) in chunks.iter().enumerate() {
            assert_eq!(c.layer, i);
            assert!(c.frame(p.checksum()).len() <= 40);
        }
    }

    #[test]
    fn capacity_error() {
        let p = Payload::new(vec![1; 100]);
        assert!(matches!(
            chunk_payload(&p, &[50, 10]),
            Err(StegoError::Capacity { .. })
        ));
        assert_eq!(chunk_payload(&Payload::new(vec![]), &[100]), Err(StegoError::EmptyPayload));
    }

    #[test]
    fn trailer_never_truncated() {
        // Every capacity split must leave room for the trailer.
        for cap in 13..40 {
            for len in 1..60 {
                let p = Payload::new(vec![9; len]);
                if let Ok(chunks) = chunk_payload(&p, &[cap, cap, cap, cap]) {
                    for c in &chunks {
                        assert!(c.frame(p.checksum()).len() <= cap, "cap {cap} len {len}");
                    }
                }
            }
        }
    }

    #[test]
    fn reassembly_roundtrip_and_damage() {
        let p = Payload::new((0..60).collect());
        let caps = [40, 40, 40];
        let chunks = chunk_payload(&p, &caps).unwrap();
        let frames: Vec<Vec<u8>> = chunks.iter().map(|c| c.frame(p.checksum())).collect();
        let parse = |frames: &[Vec<u8>]| {
            frames
                .iter()
                .enumerate()
                .filter_map(|(l, f)| FoundChunk::parse(l, f, None))
                .collect::<Vec<_>>()
        };
        let ok = reassemble(parse(&frames), None);
        assert!(ok.recovered);
        assert_eq!(ok.payload.as_deref(), Some(p.data()));

        let mut damaged = frames.clone();
        damaged[1][HEADER_LEN] ^= 1;
        let bad = reassemble(parse(&damaged), None);
        assert!(bad.detected && !bad.recovered);
        assert!(!bad.chunks[1].crc_ok && bad.chunks[0].crc_ok);

        let mut missing = frames;
        missing[2][0] = 0;
        let bad = reassemble(parse(&missing), None);
        assert!(!bad.recovered && !bad.chunks[2].present);

        let none = reassemble(Vec::new(), None);
        assert_eq!(none.into_payload(), Err(StegoError::NoPayloadDetected));
    }
}
