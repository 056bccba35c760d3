//! Index-list permutations.
//!
//! A permutation `p` acts by gathering: `out[i] = input[p[i]]`. Its inverse
//! `q` satisfies `q[p[i]] == i`, so gathering with `p` and then with `q`
//! restores the original order.

use alloc::vec::Vec;

/// True if `p` is a bijection on `0..p.len()`.
pub fn is_bijection(p: &[usize]) -> bool {
    let mut seen = alloc::vec![false; p.len()];
    for &v in p {
        if v >= p.len() || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

/// Inverse of a bijection.
///
/// # Panics
/// If `p` is not a bijection on `0..p.len()`.
pub fn invert(p: &[usize]) -> Vec<usize> {
    assert!(is_bijection(p), "not a permutation");
    let mut q = alloc::vec![0usize; p.len()];
    for (i, &v) in p.iter().enumerate() {
        q[v] = i;
    }
    q
}

pub fn identity(n: usize) -> Vec<usize> {
    (0..n).collect()
}

pub fn is_identity(p: &[usize]) -> bool {
    p.iter().enumerate().all(|(i, &v)| i == v)
}

/// Gathers contiguous blocks of `block` elements: block `i` of the output is
/// block `p[i]` of the input.
pub fn gather_blocks<T: Copy>(input: &[T], p: &[usize], block: usize) -> Vec<T> {
    debug_assert_eq!(input.len(), p.len() * block);
    let mut out = Vec::with_capacity(input.len());
    for &src in p {
        out.extend_from_slice(&input[src * block..(src + 1) * block]);
    }
    out
}

/// Expands a permutation of `p.len()` groups into one over `p.len() * group`
/// elements, keeping each group's elements contiguous and in order.
pub fn expand(p: &[usize], group: usize) -> Vec<usize> {
    p.iter()
        .flat_map(|&src| (src * group)..(src * group + group))
        .collect()
}
