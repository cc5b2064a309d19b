//! Feedforward networks: ReLU hidden layers, raw logits out.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor2;
use super::{BoundParams, NumError};
use rand::Rng;

#[derive(Clone)]
struct Layer {
    weight: Tensor2, // in x out
    bias: Tensor2,   // 1 x out
}

/// A plain multilayer perceptron. Weights are initialized uniformly in
/// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, biases at zero.
#[derive(Clone)]
pub struct FeedForward {
    layers: Vec<Layer>,
}

impl FeedForward {
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "a feedforward net needs at least two widths");
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: Tensor2::uniform_init(w[0], w[1], w[0], rng),
                bias: Tensor2::zeros(1, w[1]),
            })
            .collect();
        FeedForward { layers }
    }

    /// Builds a net from explicit `(weight, bias)` pairs, checking that
    /// consecutive layer widths are compatible.
    pub fn from_layers(layers: Vec<(Tensor2, Tensor2)>) -> Result<Self, NumError> {
        let mut prev_out = None;
        for (w, b) in &layers {
            if b.rows() != 1 || b.cols() != w.cols() {
                return Err(NumError::ShapeMismatch {
                    expected: (1, w.cols()),
                    got: b.shape(),
                });
            }
            if let Some(out) = prev_out {
                if w.rows() != out {
                    return Err(NumError::ShapeMismatch {
                        expected: (out, w.cols()),
                        got: w.shape(),
                    });
                }
            }
            prev_out = Some(w.cols());
        }
        if layers.is_empty() {
            return Err(NumError::EmptyNetwork);
        }
        Ok(FeedForward {
            layers: layers
                .into_iter()
                .map(|(weight, bias)| Layer { weight, bias })
                .collect(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    /// Evaluates the net on one input row without recording a tape.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>, NumError> {
        if input.len() != self.input_width() {
            return Err(NumError::ShapeMismatch {
                expected: (1, self.input_width()),
                got: (1, input.len()),
            });
        }
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.weight.cols()];
            for (r, &x) in h.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (c, n) in next.iter_mut().enumerate() {
                    *n += x * layer.weight.get(r, c);
                }
            }
            for (c, n) in next.iter_mut().enumerate() {
                *n += layer.bias.get(0, c);
            }
            if i + 1 < self.layers.len() {
                for n in next.iter_mut() {
                    *n = n.max(0.0);
                }
            }
            h = next;
        }
        Ok(h)
    }

    /// Records the net on a tape; `input` may hold many rows (one
    /// evaluation per row). Parameters bind under `prefix`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        prefix: &str,
        input: NodeId,
    ) -> Result<NodeId, NumError> {
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = bound.bind(tape, &format!("{prefix}.l{i}.w"), &layer.weight);
            let b = bound.bind(tape, &format!("{prefix}.l{i}.b"), &layer.bias);
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor2)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.l{i}.w"), layer.weight.clone()));
            out.push((format!("{prefix}.l{i}.b"), layer.bias.clone()));
        }
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor2)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, layer)| {
                vec![
                    (format!("{prefix}.l{i}.w"), &mut layer.weight),
                    (format!("{prefix}.l{i}.b"), &mut layer.bias),
                ]
            })
            .collect()
    }
}
