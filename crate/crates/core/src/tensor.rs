//! Tensors and the ordered state dictionary that carries a model's weights.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("tensor shape must have at least one dimension")]
    EmptyShape,
    #[error("extent of axis {axis} is zero")]
    ZeroExtent { axis: usize },
    #[error("shape holds {expected} elements but {actual} were supplied")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("no entry named {0:?}")]
    MissingEntry(String),
    #[error("selector matched no entries")]
    EmptySelection,
}

/// Element type tag. Only 32-bit IEEE-754 floats exist in this version.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DType {
    F32,
}

impl DType {
    pub const fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
        }
    }

    pub const fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            _ => None,
        }
    }

    pub const fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
        }
    }
}

/// Dense row-major tensor of `f32`.
///
/// Equality is bitwise: two NaNs with the same payload are equal and `0.0`
/// differs from `-0.0`.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = checked_numel(&shape)?;
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: alloc::vec![0.0; n],
        })
    }

    pub fn dtype(&self) -> DType {
        DType::F32
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Length of axis 0 times the product of the rest: `(rows, row_len)`.
    pub fn rows(&self) -> (usize, usize) {
        let rows = self.shape[0];
        (rows, self.data.len() / rows)
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() {
        return Err(TensorError::EmptyShape);
    }
    let mut n: usize = 1;
    for (axis, &e) in shape.iter().enumerate() {
        if e == 0 {
            return Err(TensorError::ZeroExtent { axis });
        }
        n = n.checked_mul(e).ok_or(TensorError::LengthMismatch {
            expected: usize::MAX,
            actual: 0,
        })?;
    }
    Ok(n)
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for Tensor {}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("len", &self.data.len())
            .finish()
    }
}

/// Ordered `(name, tensor)` entries. Iteration order is insertion order,
/// which is also the on-disk order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StateDict {
    entries: Vec<(String, Tensor)>,
}

impl StateDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), TensorError> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(TensorError::DuplicateName(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, TensorError> {
        self.get(name)
            .ok_or_else(|| TensorError::MissingEntry(name.to_string()))
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut Tensor, TensorError> {
        self.get_mut(name)
            .ok_or_else(|| TensorError::MissingEntry(name.to_string()))
    }

    pub fn entry(&self, index: usize) -> (&str, &Tensor) {
        let (n, t) = &self.entries[index];
        (n, t)
    }

    pub fn tensor_at_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

/// PyTorch-style naming: weight tensors end in `weight`.
pub fn is_weight_name(name: &str) -> bool {
    name.ends_with("weight")
}

pub fn is_bias_name(name: &str) -> bool {
    name.ends_with("bias")
}

/// One element slot: entry index in the state dict and row-major offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub entry: usize,
    pub offset: usize,
}

/// Enumerates every element of the selected entries, entry by entry in
/// state-dict order and row-major within each entry.
///
/// Embedding, extraction and pruning all walk weights in this order.
pub fn flatten_view(
    state: &StateDict,
    select: impl Fn(&str) -> bool,
) -> Result<Vec<Position>, TensorError> {
    let mut out = Vec::new();
    let mut any = false;
    for (entry, (name, t)) in state.iter().enumerate() {
        if select(name) {
            any = true;
            out.extend((0..t.len()).map(|offset| Position { entry, offset }));
        }
    }
    if !any {
        return Err(TensorError::EmptySelection);
    }
    Ok(out)
}

/// Entry indices selected by `select`, in state-dict order.
pub fn selected_entries(state: &StateDict, select: impl Fn(&str) -> bool) -> Vec<usize> {
    state
        .iter()
        .enumerate()
        .filter(|(_, (n, _))| select(n))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_invariants() {
        assert_eq!(Tensor::new(vec![], vec![]), Err(TensorError::EmptyShape));
        assert_eq!(
            Tensor::new(vec![2, 0], vec![]),
            Err(TensorError::ZeroExtent { axis: 1 })
        );
        assert_eq!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::LengthMismatch {
                expected: 4,
                actual: 3
            })
        );
    }

    #[test]
    fn equality_is_bitwise() {
        let nan = f32::from_bits(0x7FC0_0001);
        assert_eq!(t(&[1], &[nan]), t(&[1], &[nan]));
        assert_ne!(t(&[1], &[0.0]), t(&[1], &[-0.0]));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = StateDict::new();
        s.insert("w", t(&[1], &[1.0])).unwrap();
        assert_eq!(
            s.insert("w", t(&[1], &[2.0])),
            Err(TensorError::DuplicateName("w".into()))
        );
    }

    #[test]
    fn flatten_view_orders_positions() {
        let mut s = StateDict::new();
        s.insert("a.weight", t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        s.insert("a.bias", t(&[2], &[4.0, 5.0])).unwrap();
        let all = flatten_view(&s, |_| true).unwrap();
        assert_eq!(all.len(), 5);
        assert_eq!(all[3], Position { entry: 1, offset: 0 });
        let w = flatten_view(&s, is_weight_name).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|p| p.entry == 0));
        assert_eq!(flatten_view(&s, |_| true).unwrap(), all);
        assert_eq!(
            flatten_view(&s, |n| n == "zzz"),
            Err(TensorError::EmptySelection)
        );
    }
}
