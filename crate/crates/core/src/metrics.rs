//! Accuracy quotient, payload integrity and rank correlation.

use alloc::vec::Vec;

use thiserror::Error;

use crate::stego::{Extraction, Payload, TruthStats};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MetricsError {
    #[error("accuracy quotient is undefined when accuracy before is {0}")]
    UndefinedQuotient(f64),
}

/// `after / before`.
pub fn accuracy_quotient(before: f64, after: f64) -> Result<f64, MetricsError> {
    if before > 0.0 && before.is_finite() {
        Ok(after / before)
    } else {
        Err(MetricsError::UndefinedQuotient(before))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChunkVerdict {
    pub index: u16,
    pub crc_ok: bool,
    pub ldpc_converged: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntegrityReport {
    /// All chunk CRCs and the payload CRC match and, when ground truth is
    /// known, the bytes equal it.
    pub recovered: bool,
    pub detected: bool,
    /// Pre-decoding errors against the re-encoded decoder output.
    pub raw_ber: Option<f64>,
    /// Pre-decoding errors against the embedded frame bits.
    pub channel_ber: Option<f64>,
    /// Payload data bit errors after decoding.
    pub true_ber: Option<f64>,
    pub recovered_bytes: usize,
    pub per_chunk: Vec<ChunkVerdict>,
}

/// Summarizes an extraction attempt, optionally against the known payload
/// and its error counts.
pub fn payload_integrity(extraction: &Extraction, truth: Option<(&Payload, TruthStats)>) -> IntegrityReport {
    let matches = truth.is_none_or(|(p, _)| extraction.payload.as_deref() == Some(p.data()));
    IntegrityReport {
        recovered: extraction.recovered && matches,
        detected: extraction.detected,
        raw_ber: extraction.raw_ber,
        channel_ber: truth.map(|(_, t)| t.channel_ber()),
        true_ber: truth.map(|(_, t)| t.true_ber()),
        recovered_bytes: extraction.recovered_bytes,
        per_chunk: extraction
            .chunks
            .iter()
            .map(|c| ChunkVerdict {
                index: c.index,
                crc_ok: c.crc_ok,
                ldpc_converged: c.ldpc_converged,
            })
            .collect(),
    }
}

/// Ranks starting at 1; tied values share their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = alloc::vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation. `None` for fewer than two points or when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}
