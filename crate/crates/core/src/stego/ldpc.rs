//! Regular LDPC codes with column weight 3, systematic encoding, and
//! bit-flipping decoders.
//!
//! `H` is drawn from the configuration model: every variable gets three
//! sockets, the sockets are shuffled and dealt round-robin to the checks, and
//! random edge swaps then remove repeated edges and identical columns. The
//! columns are reordered so the last `n - k` form an invertible block, which
//! makes codewords `[message | parity]`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::rng::{shuffle, SplitMix64};

pub const COLUMN_WEIGHT: usize = 3;
pub const MAX_ITERATIONS: usize = 50;

/// Seeds tried after the requested one before giving up.
const MAX_REGENERATIONS: u64 = 64;
const MAX_REPAIR_SWAPS: usize = 200_000;
/// Penalty on a bit's own reliability in the weighted flipping metric.
const GDBF_THRESHOLD: f64 = -0.6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LdpcError {
    #[error("invalid code dimensions n={n}, k={k}: need 1 <= k and n - k >= 3")]
    InvalidDimensions { n: usize, k: usize },
    #[error("no full-rank parity matrix found for seeds {first}..={last}")]
    NoFullRankCode { first: u64, last: u64 },
    #[error("expected {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LdpcCode {
    n: usize,
    k: usize,
    seed: u64,
    construction_seed: u64,
    /// Variables of each check (rows of `H`), ascending.
    checks: Vec<Vec<usize>>,
    /// Checks of each variable (columns of `H`), ascending.
    vars: Vec<Vec<usize>>,
    /// Row `r` gives parity bit `k + r` as a dot product with the message.
    parity_rows: Vec<Vec<u64>>,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn get_bit(row: &[u64], j: usize) -> bool {
    row[j / 64] >> (j % 64) & 1 == 1
}

fn set_bit(row: &mut [u64], j: usize) {
    row[j / 64] |= 1 << (j % 64);
}

/// Row-reduces `rows` over GF(2), choosing pivots among `columns` in the
/// given order. Returns the pivot column of each reduced row.
fn eliminate(rows: &mut [Vec<u64>], columns: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut next = 0;
    for col in columns {
        if next == rows.len() {
            break;
        }
        let Some(found) = (next..rows.len()).find(|&r| get_bit(&rows[r], col)) else {
            continue;
        };
        rows.swap(next, found);
        let pivot = rows[next].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != next && get_bit(row, col) {
                for (a, b) in row.iter_mut().zip(&pivot) {
                    *a ^= b;
                }
            }
        }
        pivots.push(col);
        next += 1;
    }
    pivots
}

/// Deals shuffled sockets to checks, then repairs repeated edges and
/// identical columns by random swaps. `None` if repair does not finish.
fn configuration_model(n: usize, m: usize, rng: &mut SplitMix64) -> Option<Vec<Vec<usize>>> {
    let mut sockets: Vec<usize> = (0..n).flat_map(|v| [v; COLUMN_WEIGHT]).collect();
    shuffle(rng, &mut sockets);
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (e, &v) in sockets.iter().enumerate() {
        rows[e % m].push(v);
    }

    for _ in 0..MAX_REPAIR_SWAPS {
        let Some((r, pos)) = find_defect(&rows, n) else {
            for row in &mut rows {
                row.sort_unstable();
            }
            return Some(rows);
        };
        let r2 = rng.below(m as u64) as usize;
        if r2 == r {
            continue;
        }
        let pos2 = rng.below(rows[r2].len() as u64) as usize;
        let (v, v2) = (rows[r][pos], rows[r2][pos2]);
        if v == v2 || rows[r].contains(&v2) || rows[r2].contains(&v) {
            continue;
        }
        rows[r][pos] = v2;
        rows[r2][pos2] = v;
    }
    None
}

/// First edge that is a repeat within its check, or that belongs to a
/// variable whose check set equals an earlier variable's.
fn find_defect(rows: &[Vec<usize>], n: usize) -> Option<(usize, usize)> {
    for (r, row) in rows.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            if row[..p].contains(v) {
                return Some((r, p));
            }
        }
    }
    let mut cols: Vec<Vec<usize>> = vec![Vec::with_capacity(COLUMN_WEIGHT); n];
    for (r, row) in rows.iter().enumerate() {
        for &v in row {
            cols[v].push(r);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cols[a].cmp(&cols[b]).then(a.cmp(&b)));
    for w in order.windows(2) {
        if cols[w[0]] == cols[w[1]] {
            let v = w[1];
            let r = cols[v][0];
            let p = rows[r].iter().position(|&x| x == v).expect("edge exists");
            return Some((r, p));
        }
    }
    None
}

impl LdpcCode {
    /// Builds the `(n, k)` code for `seed`. If that seed yields a
    /// rank-deficient `H`, the next seeds are tried in turn;
    /// [`LdpcCode::regenerations`] tells how many were skipped.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self, LdpcError> {
        if k == 0 || n < k + COLUMN_WEIGHT {
            return Err(LdpcError::InvalidDimensions { n, k });
        }
        for attempt in 0..=MAX_REGENERATIONS {
            let s = seed.wrapping_add(attempt);
            if let Some(code) = Self::try_build(n, k, seed, s) {
                return Ok(code);
            }
        }
        Err(LdpcError::NoFullRankCode {
            first: seed,
            last: seed.wrapping_add(MAX_REGENERATIONS),
        })
    }

    fn try_build(n: usize, k: usize, seed: u64, construction_seed: u64) -> Option<Self> {
        let m = n - k;
        let mut rng = SplitMix64::for_stream(construction_seed, "ldpc.construct");
        let rows = configuration_model(n, m, &mut rng)?;

        let dense = |rows: &[Vec<usize>]| -> Vec<Vec<u64>> {
            rows.iter()
                .map(|row| {
                    let mut bits = vec![0u64; words(n)];
                    for &v in row {
                        set_bit(&mut bits, v);
                    }
                    bits
                })
                .collect()
        };
        let mut reduced = dense(&rows);
        let pivots = eliminate(&mut reduced, 0..n);
        if pivots.len() < m {
            return None;
        }
        // Free columns first, pivot columns last.
        let mut order: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
        order.extend_from_slice(&pivots);
        let mut position = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let checks: Vec<Vec<usize>> = rows
            .iter()
            .map(|row| {
                let mut r: Vec<usize> = row.iter().map(|&v| position[v]).collect();
                r.sort_unstable();
                r
            })
            .collect();

        let mut systematic = dense(&checks);
        let piv = eliminate(&mut systematic, k..n);
        debug_assert_eq!(piv, (k..n).collect::<Vec<_>>());
        let parity_rows = systematic
            .iter()
            .map(|row| {
                let mut p = vec![0u64; words(k)];
                for c in 0..k {
                    if get_bit(row, c) {
                        set_bit(&mut p, c);
                    }
                }
                p
            })
            .collect();

        let mut vars = vec![Vec::with_capacity(COLUMN_WEIGHT); n];
        for (r, row) in checks.iter().enumerate() {
            for &v in row {
                vars[v].push(r);
            }
        }
        Some(Self {
            n,
            k,
            seed,
            construction_seed,
            checks,
            vars,
            parity_rows,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The seed that was requested.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The seed that actually produced `H`.
    pub fn construction_seed(&self) -> u64 {
        self.construction_seed
    }

    /// Number of rank-deficient seeds skipped during construction.
    pub fn regenerations(&self) -> u64 {
        self.construction_seed.wrapping_sub(self.seed)
    }

    /// Rows of `H` as ascending variable lists.
    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    /// Dense `H`, `(n - k) × n`, entries 0 or 1.
    pub fn parity_check_matrix(&self) -> Vec<Vec<u8>> {
        self.checks
            .iter()
            .map(|row| {
                let mut dense = vec![0u8; self.n];
                for &v in row {
                    dense[v] = 1;
                }
                dense
            })
            .collect()
    }

    fn unsatisfied(&self, bits: &[u8]) -> Vec<bool> {
        self.checks
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &v| acc ^ bits[v]) == 1)
            .collect()
    }

    /// True if `H·c = 0`.
    pub fn is_codeword(&self, bits: &[u8]) -> bool {
        bits.len() == self.n && !self.unsatisfied(bits).contains(&true)
    }
}

/// Systematic encoding: the codeword starts with the `k` message bits.
/// Bits are `0` or `1`; any nonzero byte counts as `1`.
pub fn ldpc_encode(message: &[u8], code: &LdpcCode) -> Result<Vec<u8>, LdpcError> {
    if message.len() != code.k {
        return Err(LdpcError::LengthMismatch {
            expected: code.k,
            actual: message.len(),
        });
    }
    let mut packed = vec![0u64; words(code.k)];
    for (i, &b) in message.iter().enumerate() {
        if b != 0 {
            set_bit(&mut packed, i);
        }
    }
    let mut out: Vec<u8> = message.iter().map(|&b| u8::from(b != 0)).collect();
    for row in &code.parity_rows {
        let ones: u32 = row.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
        out.push((ones & 1) as u8);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub enum DecoderInput<'a> {
    /// Hard decisions, `0` or `1`.
    Hard(&'a [u8]),
    /// Soft values; positive means `1`, magnitude is reliability.
    Soft(&'a [f64]),
}

impl DecoderInput<'_> {
    fn len(&self) -> usize {
        match self {
            DecoderInput::Hard(b) => b.len(),
            DecoderInput::Soft(y) => y.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub message: Vec<u8>,
    pub codeword: Vec<u8>,
    /// All parity checks satisfied.
    pub converged: bool,
    pub iterations: usize,
}

/// Bit-flipping decoding, at most [`MAX_ITERATIONS`] iterations.
///
/// Hard input uses Gallager's parallel rule: every bit with the largest
/// number of unsatisfied checks flips. Soft input uses gradient-descent bit
/// flipping on the reliabilities.
pub fn ldpc_decode(input: DecoderInput<'_>, code: &LdpcCode) -> Result<Decoded, LdpcError> {
    if input.len() != code.n {
        return Err(LdpcError::LengthMismatch {
            expected: code.n,
            actual: input.len(),
        });
    }
    let (mut bits, iterations, converged) = match input {
        DecoderInput::Hard(h) => decode_hard(code, h.iter().map(|&b| u8::from(b != 0)).collect()),
        DecoderInput::Soft(y) => decode_soft(code, y),
    };
    bits.truncate(code.n);
    Ok(Decoded {
        message: bits[..code.k].to_vec(),
        codeword: bits,
        converged,
        iterations,
    })
}

fn decode_hard(code: &LdpcCode, mut bits: Vec<u8>) -> (Vec<u8>, usize, bool) {
    for it in 0..MAX_ITERATIONS {
        let unsat = code.unsatisfied(&bits);
        if !unsat.contains(&true) {
            return (bits, it, true);
        }
        let counts: Vec<usize> = code
            .vars
            .iter()
            .map(|cs| cs.iter().filter(|&&c| unsat[c]).count())
            .collect();
        let max = *counts.iter().max().expect("n > 0");
        for (b, &c) in bits.iter_mut().zip(&counts) {
            if c == max {
                *b ^= 1;
            }
        }
    }
    let ok = code.is_codeword(&bits);
    (bits, MAX_ITERATIONS, ok)
}

/// Gradient-descent bit flipping on the bipolar objective
/// `Σ x_v y_v + Σ_c Π_{v∈c} x_v`, with `x_v = 1 - 2 b_v` so that a check's
/// product is `+1` exactly when its parity is even. Starts by flipping every bit whose
/// inversion gain is below a threshold and falls back to single flips once
/// the objective stops rising.
fn decode_soft(code: &LdpcCode, y: &[f64]) -> (Vec<u8>, usize, bool) {
    let scale = y.iter().map(|v| v.abs()).sum::<f64>() / y.len() as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let y: Vec<f64> = y.iter().map(|v| -v / scale).collect();
    let mut x: Vec<f64> = y.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut multi = true;
    let mut prev = f64::NEG_INFINITY;
    for it in 0..MAX_ITERATIONS {
        let s: Vec<f64> = code.checks.iter().map(|row| row.iter().map(|&v| x[v]).product()).collect();
        if s.iter().all(|&p| p > 0.0) {
            return (to_bits(&x), it, true);
        }
        let objective = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() + s.iter().sum::<f64>();
        if objective <= prev {
            multi = false;
        }
        prev = objective;
        let gain: Vec<f64> = code
            .vars
            .iter()
            .enumerate()
            .map(|(v, cs)| x[v] * y[v] + cs.iter().map(|&c| s[c]).sum::<f64>())
            .collect();
        let mut flipped = false;
        if multi {
            for (xv, &g) in x.iter_mut().zip(&gain) {
                if g < GDBF_THRESHOLD {
                    *xv = -*xv;
                    flipped = true;
                }
            }
        }
        if !flipped {
            multi = false;
            let mut best = 0;
            for (v, &g) in gain.iter().enumerate() {
                if g < gain[best] {
                    best = v;
                }
            }
            x[best] = -x[best];
        }
    }
    let bits = to_bits(&x);
    let ok = code.is_codeword(&bits);
    (bits, MAX_ITERATIONS, ok)
}

fn to_bits(x: &[f64]) -> Vec<u8> {
    x.iter().map(|&v| u8::from(v < 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_bits(rng: &mut SplitMix64, len: usize) -> Vec<u8> {
        (0..len).map(|_| rng.below(2) as u8).collect()
    }

    /// `H·c` by dense matrix multiply.
    fn syndrome_is_zero(code: &LdpcCode, c: &[u8]) -> bool {
        code.parity_check_matrix()
            .iter()
            .all(|row| row.iter().zip(c).map(|(h, b)| h * b).sum::<u8>() % 2 == 0)
    }

    #[test]
    fn structure_is_regular() {
        for (n, k) in [(32, 16), (64, 32), (256, 128)] {
            let code = LdpcCode::new(n, k, 7).unwrap();
            let h = code.parity_check_matrix();
            assert_eq!(h.len(), n - k);
            for col in 0..n {
                assert_eq!(h.iter().map(|r| r[col] as usize).sum::<usize>(), 3);
            }
            let row_weights: Vec<usize> = h.iter().map(|r| r.iter().map(|&b| b as usize).sum()).collect();
            assert!(row_weights.iter().all(|&w| w == 3 * n / (n - k)));
            assert_eq!(code, LdpcCode::new(n, k, 7).unwrap());
        }
    }

    #[test]
    fn zero_message_and_linearity() {
        let code = LdpcCode::new(32, 16, 1).unwrap();
        assert_eq!(ldpc_encode(&[0; 16], &code).unwrap(), vec![0; 32]);
        let mut rng = SplitMix64::new(2);
        for _ in 0..50 {
            let a = random_bits(&mut rng, 16);
            let b = random_bits(&mut rng, 16);
            let ca = ldpc_encode(&a, &code).unwrap();
            let cb = ldpc_encode(&b, &code).unwrap();
            let sum: Vec<u8> = ca.iter().zip(&cb).map(|(x, y)| x ^ y).collect();
            assert!(syndrome_is_zero(&code, &ca));
            assert!(syndrome_is_zero(&code, &sum));
            let ab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
            assert_eq!(ldpc_encode(&ab, &code).unwrap(), sum);
            assert_eq!(&ca[..16], &a[..]);
        }
    }

    #[test]
    fn every_single_bit_error_is_corrected() {
        // (24, 16) has checks of odd weight.
        for (n, k, seed) in [(16, 8, 1), (24, 16, 0), (32, 16, 0), (48, 24, 3), (64, 32, 5), (64, 48, 2)] {
            let code = LdpcCode::new(n, k, seed).unwrap();
            let mut rng = SplitMix64::new(seed + 100);
            for _ in 0..4 {
                let m = random_bits(&mut rng, k);
                let c = ldpc_encode(&m, &code).unwrap();
                for flip in 0..n {
                    let mut r = c.clone();
                    r[flip] ^= 1;
                    let d = ldpc_decode(DecoderInput::Hard(&r), &code).unwrap();
                    assert!(d.converged && d.message == m, "hard n={n} flip={flip}");
                    let soft: Vec<f64> = r.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect();
                    let d = ldpc_decode(DecoderInput::Soft(&soft), &code).unwrap();
                    assert!(d.converged && d.message == m, "soft n={n} flip={flip}");
                }
            }
        }
    }

    #[test]
    fn half_flipped_rarely_converges() {
        let code = LdpcCode::new(32, 16, 0).unwrap();
        let mut rng = SplitMix64::new(77);
        let mut converged_to_truth = 0;
        let mut converged = 0;
        for _ in 0..100 {
            let m = random_bits(&mut rng, 16);
            let mut c = ldpc_encode(&m, &code).unwrap();
            let mut idx: Vec<usize> = (0..32).collect();
            shuffle(&mut rng, &mut idx);
            for &i in &idx[..16] {
                c[i] ^= 1;
            }
            let d = ldpc_decode(DecoderInput::Hard(&c), &code).unwrap();
            converged += usize::from(d.converged);
            converged_to_truth += usize::from(d.converged && d.message == m);
        }
        assert!(converged_to_truth <= 2, "{converged_to_truth}");
        assert!(converged <= 30, "{converged}");
    }

    #[test]
    fn soft_decoder_handles_noisy_channel() {
        // BPSK at about 4% raw error rate.
        let code = LdpcCode::new(256, 128, 11).unwrap();
        let mut rng = SplitMix64::new(12);
        let mut ok = 0;
        for _ in 0..20 {
            let m = random_bits(&mut rng, 128);
            let c = ldpc_encode(&m, &code).unwrap();
            let y: Vec<f64> = c
                .iter()
                .map(|&b| if b == 1 { 1.0 } else { -1.0 } + 0.57 * rng.gaussian())
                .collect();
            let d = ldpc_decode(DecoderInput::Soft(&y), &code).unwrap();
            ok += usize::from(d.converged && d.message == m);
        }
        assert!(ok >= 19, "{ok}/20");
    }

    #[test]
    fn dimension_checks() {
        assert!(LdpcCode::new(4, 2, 0).is_err());
        assert!(LdpcCode::new(10, 0, 0).is_err());
        let code = LdpcCode::new(32, 16, 0).unwrap();
        assert!(ldpc_encode(&[0; 15], &code).is_err());
        assert!(ldpc_decode(DecoderInput::Hard(&[0; 31]), &code).is_err());
    }
}
