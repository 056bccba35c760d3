//! Global unstructured magnitude pruning.

use alloc::vec::Vec;

use super::DefenseError;
use crate::tensor::{flatten_view, is_weight_name, StateDict};

/// Sets the `⌊rate × N⌋` smallest-magnitude weight elements to `+0.0`,
/// where `N` counts elements of every weight tensor. Ties go to the earlier
/// position in [`flatten_view`] order. Biases are never pruned.
pub fn prune_global(state: &StateDict, rate: f64) -> Result<StateDict, DefenseError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(DefenseError::PruneRate(rate));
    }
    let positions = flatten_view(state, is_weight_name).map_err(|_| DefenseError::NoWeights)?;
    let count = libm::floor(rate * positions.len() as f64) as usize;
    let mut out = state.clone();
    if count == 0 {
        return Ok(out);
    }
    // |w| bit patterns sort like magnitudes, NaN last.
    let mut keyed: Vec<(u32, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| (state.entry(p.entry).1.data()[p.offset].to_bits() & 0x7fff_ffff, i))
        .collect();
    keyed.select_nth_unstable(count - 1);
    for &(_, i) in &keyed[..count] {
        let p = positions[i];
        out.tensor_at_mut(p.entry).data_mut()[p.offset] = 0.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn state(w: &[f32]) -> StateDict {
        let mut s = StateDict::new();
        s.insert("a.weight", Tensor::new(vec![w.len()], w.to_vec()).unwrap()).unwrap();
        s.insert("a.bias", Tensor::new(vec![1], vec![0.001]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zeroes_the_smallest() {
        let out = prune_global(&state(&[0.1, -0.5, 0.05, 2.0]), 0.5).unwrap();
        assert_eq!(out.get("a.weight").unwrap().data(), &[0.0, -0.5, 0.0, 2.0]);
        assert_eq!(out.get("a.bias").unwrap().data(), &[0.001]);
    }

    #[test]
    fn ties_prune_earlier_positions_and_write_positive_zero() {
        let out = prune_global(&state(&[-1.0, 1.0, -1.0, 3.0]), 0.5).unwrap();
        let w = out.get("a.weight").unwrap().data();
        assert_eq!(w[0].to_bits(), 0);
        assert_eq!(w[1].to_bits(), 0);
        assert_eq!(w[2], -1.0);
    }

    #[test]
    fn counts_are_exact() {
        let mut rng = SplitMix64::new(4);
        for trial in 0..20 {
            let len = 1 + rng.below(300) as usize;
            // Plenty of exact ties and zeros.
            let w: Vec<f32> = (0..len).map(|_| (rng.below(7) as f32 - 3.0) * 0.5).collect();
            let s = state(&w);
            let rate = rng.next_f64() * 0.999;
            let out = prune_global(&s, rate).unwrap();
            let want = libm::floor(rate * len as f64) as usize;
            // Oracle: stable sort of positions by magnitude.
            let mut idx: Vec<usize> = (0..len).collect();
            idx.sort_by(|&a, &b| w[a].abs().partial_cmp(&w[b].abs()).unwrap());
            let mut expect = w.clone();
            for &i in &idx[..want] {
                expect[i] = 0.0;
            }
            let got = out.get("a.weight").unwrap().data();
            assert_eq!(
                got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                expect.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn range() {
        let s = state(&[1.0]);
        assert_eq!(prune_global(&s, 0.0).unwrap(), s);
        assert!(prune_global(&s, 1.0).is_err());
        assert!(prune_global(&s, -0.1).is_err());
        assert!(prune_global(&s, f64::NAN).is_err());
    }
}
