//! Minimal dense-tensor numeric core: matrices, nonlinearities,
//! feedforward nets, recorded-tape reverse-mode gradients, and Adam.
//!
//! Everything is 64-bit floating point and single-threaded per tape.
//! Parameter tensors are plain values: share them read-only across
//! concurrent evaluations, take exclusive access to update.

mod adam;
mod net;
mod store;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use net::FeedForward;
pub use store::{read_store, write_store, StoreError, STORE_MAGIC, STORE_VERSION};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor2;

use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("all softmax entries are masked")]
    AllMasked,
    #[error("picked entry {pick} is masked or out of range")]
    MaskedPick { pick: usize },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: (usize, usize) },
    #[error("a feedforward net needs at least one layer")]
    EmptyNetwork,
}

/// Numerically stable sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Masked, max-shifted softmax. Masked entries are exactly zero; the
/// unmasked entries sum to one.
pub fn softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, NumError> {
    let all = vec![true; logits.len()];
    let mask = mask.unwrap_or(&all);
    debug_assert_eq!(mask.len(), logits.len());
    if !mask.iter().any(|&m| m) {
        return Err(NumError::AllMasked);
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Binds named parameter tensors onto a tape as leaves, memoizing by
/// name so a parameter used several times in one forward pass gets a
/// single leaf (and therefore one accumulated gradient).
#[derive(Default)]
pub struct BoundParams {
    ids: HashMap<String, NodeId>,
    order: Vec<(String, NodeId)>,
}

impl BoundParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, tape: &mut Tape, name: &str, tensor: &Tensor2) -> NodeId {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = tape.leaf(tensor.clone());
        self.ids.insert(name.to_string(), id);
        self.order.push((name.to_string(), id));
        id
    }

    /// Collects gradients for every bound parameter. Parameters the
    /// root does not depend on are omitted (their gradient is zero).
    pub fn grad_map(&self, grads: &Gradients) -> BTreeMap<String, Tensor2> {
        let mut out = BTreeMap::new();
        for (name, id) in &self.order {
            if let Some(g) = grads.get(*id) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}

/// Accumulates gradient maps across a mini-batch in a fixed order.
pub fn accumulate_grads(
    total: &mut BTreeMap<String, Tensor2>,
    delta: &BTreeMap<String, Tensor2>,
) -> Result<(), NumError> {
    for (name, g) in delta {
        match total.get_mut(name) {
            Some(t) => t.add_scaled(g, 1.0)?,
            None => {
                total.insert(name.clone(), g.clone());
            }
        }
    }
    Ok(())
}
