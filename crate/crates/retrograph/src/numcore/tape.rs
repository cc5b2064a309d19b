//! Recorded-tape reverse-mode gradient computation.
//!
//! The operation vocabulary is closed and small so that every backward
//! rule can be checked by hand:
//!
//! | op                 | value                                            | gradient w.r.t. inputs                     |
//! |--------------------|--------------------------------------------------|--------------------------------------------|
//! | `matmul`           | `A B`                                            | `dA += G B^T`, `dB += A^T G`               |
//! | `add`              | `A + B` (same shape)                             | `dA += G`, `dB += G`                       |
//! | `add_row`          | `A + r` (row broadcast)                          | `dA += G`, `dr += column sums of G`        |
//! | `mul`              | `A ⊙ B`                                          | `dA += G ⊙ B`, `dB += G ⊙ A`               |
//! | `mul_const`        | `A ⊙ C` (C constant)                             | `dA += G ⊙ C`                              |
//! | `affine`           | `a·A + b` (scalars)                              | `dA += a·G`                                |
//! | `concat_cols`      | `[A ‖ B]`                                        | column split of `G`                        |
//! | `relu`             | `max(A, 0)`                                      | `dA += G ⊙ [A > 0]`                        |
//! | `sigmoid`          | `σ(A)`                                           | `dA += G ⊙ y(1−y)`                         |
//! | `exp`              | `e^A`                                            | `dA += G ⊙ y`                              |
//! | `clamp`            | `min(max(A, lo), hi)`                            | passes `G` where `lo ≤ A ≤ hi`, else 0     |
//! | `sum`              | `Σ A` (scalar)                                   | `dA += G` broadcast                        |
//! | `gather_rows`      | selected rows of `A`                             | scatter-add of `G` rows                    |
//! | `log_softmax_pick` | `log softmax(A)[pick]` under a mask              | `dA_j += G·(δ_{j,pick} − p_j)` (unmasked)  |
//! | `bce_logits`       | Σ weighted binary cross-entropies from logits    | `dA_j += G·(s_j(1−y_j+w y_j) − w y_j)`     |
//!
//! `relu` takes subgradient 0 at the kink. `bce_logits` clamps the
//! sigmoid output to `[1e-12, 1 − 1e-12]` before the logs; its gradient
//! is computed from the clamped probability.
//!
//! A tape is built per forward pass: parameters and inputs enter as
//! leaves, operations append nodes, and [`Tape::backward`] walks the
//! record once in reverse. Gradients of leaves the root does not depend
//! on are zero (reported as `None`).

use super::tensor::Tensor2;
use super::NumError;

const BCE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor2),
    Affine(NodeId, f64),
    ConcatCols(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    GatherRows(NodeId, Vec<usize>),
    LogSoftmaxPick {
        input: NodeId,
        mask: Vec<bool>,
        pick: usize,
    },
    BceLogits {
        input: NodeId,
        labels: Vec<f64>,
        pos_weight: f64,
    },
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Records a forward computation over [`Tensor2`] values.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `id`, or `None`
    /// when the root does not depend on it (a zero gradient).
    pub fn get(&self, id: NodeId) -> Option<&Tensor2> {
        self.grads[id.0].as_ref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite tensor recorded on tape");
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumError::ShapeMismatch {
                expected: ta.shape(),
                got: tb.shape(),
            });
        }
        let mut v = ta.clone();
        v.add_scaled(tb, 1.0)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Broadcast-add a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, NumError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(NumError::ShapeMismatch {
                expected: (1, ta.cols()),
                got: tr.shape(),
            });
        }
        let v = Tensor2::from_fn(ta.rows(), ta.cols(), |r, c| ta.get(r, c) + tr.get(0, c));
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumError::ShapeMismatch {
                expected: ta.shape(),
                got: tb.shape(),
            });
        }
        let v = Tensor2::from_fn(ta.rows(), ta.cols(), |r, c| ta.get(r, c) * tb.get(r, c));
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn mul_const(&mut self, a: NodeId, c: Tensor2) -> Result<NodeId, NumError> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return Err(NumError::ShapeMismatch {
                expected: ta.shape(),
                got: c.shape(),
            });
        }
        let v = Tensor2::from_fn(ta.rows(), ta.cols(), |r, co| ta.get(r, co) * c.get(r, co));
        Ok(self.push(v, Op::MulConst(a, c)))
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let v = self.value(a).map(|x| mul * x + add);
        self.push(v, Op::Affine(a, mul))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(NumError::ShapeMismatch {
                expected: (ta.rows(), tb.cols()),
                got: tb.shape(),
            });
        }
        let v = Tensor2::from_fn(ta.rows(), ta.cols() + tb.cols(), |r, c| {
            if c < ta.cols() {
                ta.get(r, c)
            } else {
                tb.get(r, c - ta.cols())
            }
        });
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(super::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries, a `1 x 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor2::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Select rows (duplicates allowed); gradient scatter-adds.
    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> Result<NodeId, NumError> {
        let ta = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= ta.rows()) {
            return Err(NumError::IndexOutOfRange {
                index: bad,
                len: ta.rows(),
            });
        }
        let v = Tensor2::from_fn(rows.len(), ta.cols(), |r, c| ta.get(rows[r], c));
        Ok(self.push(v, Op::GatherRows(a, rows)))
    }

    /// Log-probability of entry `pick` under a masked softmax of the
    /// input logits (any shape, traversed row-major). Masked entries
    /// have probability exactly zero and receive no gradient.
    pub fn log_softmax_pick(
        &mut self,
        input: NodeId,
        mask: Vec<bool>,
        pick: usize,
    ) -> Result<NodeId, NumError> {
        let t = self.value(input);
        if mask.len() != t.len() {
            return Err(NumError::ShapeMismatch {
                expected: (t.len(), 1),
                got: (mask.len(), 1),
            });
        }
        if pick >= t.len() || !mask[pick] {
            return Err(NumError::MaskedPick { pick });
        }
        let logp = masked_log_softmax(t.data(), &mask)[pick];
        Ok(self.push(Tensor2::scalar(logp), Op::LogSoftmaxPick { input, mask, pick }))
    }

    /// Summed binary cross-entropy from logits with a weight on the
    /// positive terms: `Σ_j −(w·y_j·log s_j + (1−y_j)·log(1−s_j))`
    /// where `s_j = σ(x_j)` clamped away from 0 and 1.
    pub fn bce_logits(
        &mut self,
        input: NodeId,
        labels: Vec<f64>,
        pos_weight: f64,
    ) -> Result<NodeId, NumError> {
        let t = self.value(input);
        if labels.len() != t.len() {
            return Err(NumError::ShapeMismatch {
                expected: (t.len(), 1),
                got: (labels.len(), 1),
            });
        }
        let mut total = 0.0;
        for (&x, &y) in t.data().iter().zip(&labels) {
            let s = super::sigmoid(x).clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= pos_weight * y * s.ln() + (1.0 - y) * (1.0 - s).ln();
        }
        Ok(self.push(
            Tensor2::scalar(total),
            Op::BceLogits {
                input,
                labels,
                pos_weight,
            },
        ))
    }

    /// Propagates gradients from a scalar root back to every node it
    /// depends on.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, NumError> {
        if self.value(root).len() != 1 {
            return Err(NumError::NonScalarRoot {
                shape: self.value(root).shape(),
            });
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].clone() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gr.set(0, c, gr.get(0, c) + g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *row, gr)?;
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = Tensor2::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * tb.get(r, c));
                    let gb = Tensor2::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * ta.get(r, c));
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::MulConst(a, c) => {
                    let ga = Tensor2::from_fn(g.rows(), g.cols(), |r, co| g.get(r, co) * c.get(r, co));
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Affine(a, mul) => {
                    accumulate(&mut grads, *a, g.map(|x| mul * x))?;
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let ga = Tensor2::from_fn(g.rows(), ca, |r, c| g.get(r, c));
                    let gb = Tensor2::from_fn(g.rows(), g.cols() - ca, |r, c| g.get(r, c + ca));
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let ga = Tensor2::from_fn(g.rows(), g.cols(), |r, c| {
                        if ta.get(r, c) > 0.0 {
                            g.get(r, c)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = Tensor2::from_fn(g.rows(), g.cols(), |r, c| {
                        let s = y.get(r, c);
                        g.get(r, c) * s * (1.0 - s)
                    });
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let ga =
                        Tensor2::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * y.get(r, c));
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Clamp(a, lo, hi) => {
                    let ta = self.value(*a);
                    let ga = Tensor2::from_fn(g.rows(), g.cols(), |r, c| {
                        let x = ta.get(r, c);
                        if x >= *lo && x <= *hi {
                            g.get(r, c)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sum(a) => {
                    let ta = self.value(*a);
                    let gs = g.item();
                    accumulate(&mut grads, *a, Tensor2::from_fn(ta.rows(), ta.cols(), |_, _| gs))?;
                }
                Op::GatherRows(a, rows) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor2::zeros(ta.rows(), ta.cols());
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        for c in 0..g.cols() {
                            ga.set(src_r, c, ga.get(src_r, c) + g.get(out_r, c));
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::LogSoftmaxPick { input, mask, pick } => {
                    let t = self.value(*input);
                    let probs = masked_softmax_slice(t.data(), mask);
                    let gs = g.item();
                    let mut ga = Tensor2::zeros(t.rows(), t.cols());
                    for (j, gd) in ga.data_mut().iter_mut().enumerate() {
                        if mask[j] {
                            let delta = if j == *pick { 1.0 } else { 0.0 };
                            *gd = gs * (delta - probs[j]);
                        }
                    }
                    accumulate(&mut grads, *input, ga)?;
                }
                Op::BceLogits {
                    input,
                    labels,
                    pos_weight,
                } => {
                    let t = self.value(*input);
                    let gs = g.item();
                    let mut ga = Tensor2::zeros(t.rows(), t.cols());
                    for (j, gd) in ga.data_mut().iter_mut().enumerate() {
                        let s = super::sigmoid(t.data()[j]).clamp(BCE_EPS, 1.0 - BCE_EPS);
                        let y = labels[j];
                        *gd = gs * (s * (1.0 - y + pos_weight * y) - pos_weight * y);
                    }
                    accumulate(&mut grads, *input, ga)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], id: NodeId, delta: Tensor2) -> Result<(), NumError> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_scaled(&delta, 1.0),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

/// Max-shifted masked log-softmax over a flat slice. Masked entries
/// come back as `-inf`.
pub(crate) fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| (x - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { x - lse } else { f64::NEG_INFINITY })
        .collect()
}

fn masked_softmax_slice(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    masked_log_softmax(logits, mask)
        .into_iter()
        .map(|lp| if lp.is_finite() { lp.exp() } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences over a scalar function of one tensor.
    fn fd_gradient(f: impl Fn(&Tensor2) -> f64, at: &Tensor2) -> Tensor2 {
        let eps = 1e-5;
        let mut grad = Tensor2::zeros(at.rows(), at.cols());
        for i in 0..at.len() {
            let mut plus = at.clone();
            plus.data_mut()[i] += eps;
            let mut minus = at.clone();
            minus.data_mut()[i] -= eps;
            grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        grad
    }

    fn assert_close(analytic: &Tensor2, numeric: &Tensor2, tol: f64) {
        assert_eq!(analytic.shape(), numeric.shape());
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let scale = a.abs().max(n.abs()).max(1.0);
            assert!(
                (a - n).abs() / scale < tol,
                "gradient mismatch: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = tape.leaf(Tensor2::scalar(5.0));
        let grads = tape.backward(c).unwrap();
        assert!(grads.get(w).is_none());
    }

    #[test]
    fn sum_of_weights_has_unit_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor2::from_vec(2, 3, vec![0.1; 6]).unwrap());
        let s = tape.sum(w);
        let grads = tape.backward(s).unwrap();
        let gw = grads.get(w).unwrap();
        assert!(gw.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn backward_on_nonscalar_root_is_a_usage_error() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor2::zeros(2, 2));
        assert!(matches!(
            tape.backward(w),
            Err(NumError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let w0 = Tensor2::from_fn(3, 4, |_, _| rng.random_range(-0.8..0.8));
        let x = Tensor2::from_fn(2, 3, |_, _| rng.random_range(-0.8..0.8));
        let bias = Tensor2::from_fn(1, 4, |_, _| rng.random_range(-0.3..0.3));

        let eval = |w: &Tensor2| {
            let mut tape = Tape::new();
            let w = tape.leaf(w.clone());
            let x = tape.leaf(x.clone());
            let b = tape.leaf(bias.clone());
            let h = tape.matmul(x, w).unwrap();
            let h = tape.add_row(h, b).unwrap();
            let h = tape.relu(h);
            let h = tape.sigmoid(h);
            let s = tape.sum(h);
            tape.value(s).item()
        };

        let mut tape = Tape::new();
        let w = tape.leaf(w0.clone());
        let xi = tape.leaf(x.clone());
        let b = tape.leaf(bias.clone());
        let h = tape.matmul(xi, w).unwrap();
        let h = tape.add_row(h, b).unwrap();
        let h = tape.relu(h);
        let h = tape.sigmoid(h);
        let s = tape.sum(h);
        let grads = tape.backward(s).unwrap();

        let numeric = fd_gradient(eval, &w0);
        assert_close(grads.get(w).unwrap(), &numeric, 1e-4);
    }

    #[test]
    fn log_softmax_pick_gradient_matches_finite_differences() {
        let logits = Tensor2::row(&[0.3, -1.2, 0.7, 2.0]);
        let mask = vec![true, true, false, true];

        let eval = |t: &Tensor2| {
            let mut tape = Tape::new();
            let l = tape.leaf(t.clone());
            let p = tape.log_softmax_pick(l, mask.clone(), 3).unwrap();
            tape.value(p).item()
        };

        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone());
        let p = tape.log_softmax_pick(l, mask.clone(), 3).unwrap();
        let grads = tape.backward(p).unwrap();
        let numeric = fd_gradient(eval, &logits);
        assert_close(grads.get(l).unwrap(), &numeric, 1e-4);

        // masked entry gets exactly zero gradient
        assert_eq!(grads.get(l).unwrap().data()[2], 0.0);
    }

    #[test]
    fn log_softmax_pick_of_masked_entry_rejected() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor2::row(&[1.0, 2.0]));
        assert!(tape
            .log_softmax_pick(l, vec![true, false], 1)
            .is_err());
    }

    #[test]
    fn bce_logits_gradient_matches_finite_differences() {
        let logits = Tensor2::row(&[0.5, -0.8, 1.4]);
        let labels = vec![1.0, 0.0, 0.0];

        let eval = |t: &Tensor2| {
            let mut tape = Tape::new();
            let l = tape.leaf(t.clone());
            let p = tape.bce_logits(l, labels.clone(), 20.0).unwrap();
            tape.value(p).item()
        };

        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone());
        let p = tape.bce_logits(l, labels.clone(), 20.0).unwrap();
        let grads = tape.backward(p).unwrap();
        let numeric = fd_gradient(eval, &logits);
        assert_close(grads.get(l).unwrap(), &numeric, 1e-4);
    }

    #[test]
    fn gather_rows_accumulates_duplicate_indices() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let g = tape.gather_rows(a, vec![0, 0, 1]).unwrap();
        let s = tape.sum(g);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn exp_clamp_mul_chain_matches_finite_differences() {
        let x0 = Tensor2::row(&[0.4, -0.9, 2.5]);
        let eps = Tensor2::row(&[0.3, -1.1, 0.8]);

        let eval = |t: &Tensor2| {
            let mut tape = Tape::new();
            let x = tape.leaf(t.clone());
            let c = tape.clamp(x, -2.0, 2.0);
            let h = tape.affine(c, 0.5, 0.0);
            let e = tape.exp(h);
            let m = tape.mul_const(e, eps.clone()).unwrap();
            let s = tape.sum(m);
            tape.value(s).item()
        };

        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let c = tape.clamp(x, -2.0, 2.0);
        let h = tape.affine(c, 0.5, 0.0);
        let e = tape.exp(h);
        let m = tape.mul_const(e, eps.clone()).unwrap();
        let s = tape.sum(m);
        let grads = tape.backward(s).unwrap();
        // the clamped coordinate (2.5) gets zero flow; check the rest by FD
        let numeric = fd_gradient(eval, &x0);
        let ga = grads.get(x).unwrap();
        assert_eq!(ga.data()[2], 0.0);
        for i in 0..2 {
            assert!((ga.data()[i] - numeric.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn repeated_forward_is_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor2::from_vec(2, 2, vec![0.3, -1.7, 0.9, 0.2]).unwrap());
            let b = tape.leaf(Tensor2::from_vec(2, 2, vec![1.3, 0.7, -0.4, 0.6]).unwrap());
            let m = tape.matmul(a, b).unwrap();
            let r = tape.sigmoid(m);
            let s = tape.sum(r);
            tape.value(s).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
