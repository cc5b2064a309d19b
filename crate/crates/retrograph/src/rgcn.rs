//! Relational graph-convolution encoder shared by both learned
//! modules.
//!
//! Each layer aggregates one message per bond type: with `E_i` the
//! adjacency matrix of bond type `i` plus self-loops, the update is
//! `H^l = Σ_i ReLU(E_i H^{l-1} W_i^l)`. Messages are unnormalized —
//! the update is applied exactly as written, with no degree scaling —
//! and there are no bias terms. Layer 0 projects the feature width to
//! the embedding width; later layers keep it fixed. The graph-level
//! embedding is the column-wise sum of the node embeddings.

use crate::molgraph::{BondType, Molecule, BOND_TYPES};
use crate::numcore::{BoundParams, NodeId, NumError, Tape, Tensor2};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RgcnError {
    #[error("encoder expects feature width {expected}, got {got}")]
    FeatureWidthMismatch { expected: usize, got: usize },
    #[error("cannot encode an empty molecule")]
    EmptyMolecule,
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Per-layer, per-bond-type weight matrices.
#[derive(Clone)]
pub struct RgcnParams {
    layers: Vec<Vec<Tensor2>>,
    input_width: usize,
    embed_dim: usize,
}

impl RgcnParams {
    pub fn new(input_width: usize, embed_dim: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        assert!(n_layers >= 1, "encoder needs at least one layer");
        let layers = (0..n_layers)
            .map(|l| {
                let w_in = if l == 0 { input_width } else { embed_dim };
                (0..BOND_TYPES)
                    .map(|_| Tensor2::uniform_init(w_in, embed_dim, w_in, rng))
                    .collect()
            })
            .collect();
        RgcnParams {
            layers,
            input_width,
            embed_dim,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor2)>) {
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, w) in layer.iter().enumerate() {
                out.push((format!("{prefix}.l{l}.e{i}.w"), w.clone()));
            }
        }
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor2)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(l, layer)| {
                layer
                    .iter_mut()
                    .enumerate()
                    .map(move |(i, w)| (format!("{prefix}.l{l}.e{i}.w"), w))
            })
            .collect()
    }
}

/// Adjacency of one bond type with self-loops added.
fn edge_matrix(mol: &Molecule, t: BondType) -> Tensor2 {
    let n = mol.n_atoms();
    let mut e = Tensor2::eye(n);
    for (a, b, bt) in mol.bonds() {
        if bt == t {
            e.set(a, b, 1.0);
            e.set(b, a, 1.0);
        }
    }
    e
}

/// Records the encoder on a tape and returns the `n x k` node
/// embedding node. `features` must be the molecule's feature matrix
/// (its row count is checked against the atom count).
pub fn encode_on_tape(
    tape: &mut Tape,
    bound: &mut BoundParams,
    prefix: &str,
    params: &RgcnParams,
    mol: &Molecule,
    features: Tensor2,
) -> Result<NodeId, RgcnError> {
    if mol.n_atoms() == 0 {
        return Err(RgcnError::EmptyMolecule);
    }
    if features.cols() != params.input_width {
        return Err(RgcnError::FeatureWidthMismatch {
            expected: params.input_width,
            got: features.cols(),
        });
    }
    debug_assert_eq!(features.rows(), mol.n_atoms());

    let edges: Vec<NodeId> = (0..BOND_TYPES)
        .map(|i| tape.leaf(edge_matrix(mol, BondType::from_index(i).unwrap())))
        .collect();

    let mut h = tape.leaf(features);
    for (l, layer) in params.layers.iter().enumerate() {
        let mut agg: Option<NodeId> = None;
        for (i, w) in layer.iter().enumerate() {
            let w = bound.bind(tape, &format!("{prefix}.l{l}.e{i}.w"), w);
            let hw = tape.matmul(h, w)?;
            let msg = tape.matmul(edges[i], hw)?;
            let msg = tape.relu(msg);
            agg = Some(match agg {
                None => msg,
                Some(acc) => tape.add(acc, msg)?,
            });
        }
        h = agg.expect("at least one bond type");
    }
    Ok(h)
}

/// Records the readout: sum of the selected rows of `h`, a `1 x k`
/// node. `selector` marks which rows participate (the translation
/// module reads out over state atoms only, skipping vocabulary slots).
pub fn readout_on_tape(
    tape: &mut Tape,
    h: NodeId,
    selector: &[bool],
) -> Result<NodeId, RgcnError> {
    let ones = Tensor2::from_fn(1, selector.len(), |_, c| if selector[c] { 1.0 } else { 0.0 });
    let ones = tape.leaf(ones);
    Ok(tape.matmul(ones, h)?)
}

/// Evaluates node embeddings without keeping the tape.
pub fn encode(
    params: &RgcnParams,
    mol: &Molecule,
    features: Tensor2,
) -> Result<Tensor2, RgcnError> {
    let mut tape = Tape::new();
    let mut bound = BoundParams::new();
    let h = encode_on_tape(&mut tape, &mut bound, "enc", params, mol, features)?;
    Ok(tape.value(h).clone())
}

/// Column-wise sum of node embeddings: the graph-level embedding.
pub fn readout(h: &Tensor2) -> Vec<f64> {
    let mut out = vec![0.0; h.cols()];
    for r in 0..h.rows() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += h.get(r, c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{parse_smiles, AtomFeaturizer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn featurizer_for(mol: &Molecule) -> AtomFeaturizer {
        AtomFeaturizer::from_molecules(std::iter::once(mol))
    }

    #[test]
    fn single_atom_uses_self_loops_only() {
        let mol = parse_smiles("C").unwrap();
        let f = featurizer_for(&mol);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = RgcnParams::new(f.width(), 6, 1, &mut rng);
        let h = encode(&params, &mol, f.features(&mol).unwrap()).unwrap();

        // E_i = I for every type, so H^1 = sum_i relu(X W_i)
        let x = f.features(&mol).unwrap();
        let mut expected = Tensor2::zeros(1, 6);
        let mut names = Vec::new();
        params.named_tensors("w", &mut names);
        for (_, w) in &names {
            let xw = x.matmul(w).unwrap().map(|v| v.max(0.0));
            expected.add_scaled(&xw, 1.0).unwrap();
        }
        for (a, b) in h.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let mol = parse_smiles("CCO").unwrap();
        let f = featurizer_for(&mol);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = RgcnParams::new(f.width(), 4, 2, &mut rng);
        for (_, w) in params.named_tensors_mut("x") {
            *w = Tensor2::zeros(w.rows(), w.cols());
        }
        let h = encode(&params, &mol, f.features(&mol).unwrap()).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_permutation_equivariant() {
        use crate::molgraph::{AtomRecord, BondType, Element};

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // hand-built 4-atom molecule and a relabeled copy
        let atoms = vec![
            AtomRecord::new(Element::C),
            AtomRecord::new(Element::O),
            AtomRecord::new(Element::N),
            AtomRecord::new(Element::C),
        ];
        let bonds = [(0usize, 1usize, BondType::Single), (1, 2, BondType::Double), (2, 3, BondType::Single)];
        let mol = Molecule::from_parts(atoms.clone(), &bonds).unwrap();

        // permutation pi maps old index -> new index
        let pi = [2usize, 0, 3, 1];
        let mut perm_atoms = vec![AtomRecord::new(Element::C); 4];
        for (old, rec) in atoms.iter().enumerate() {
            perm_atoms[pi[old]] = rec.clone();
        }
        let perm_bonds: Vec<(usize, usize, BondType)> =
            bonds.iter().map(|&(a, b, t)| (pi[a], pi[b], t)).collect();
        let perm = Molecule::from_parts(perm_atoms, &perm_bonds).unwrap();

        let f = AtomFeaturizer::new(vec![Element::C, Element::N, Element::O]);
        let params = RgcnParams::new(f.width(), 8, 3, &mut rng);

        let h = encode(&params, &mol, f.features(&mol).unwrap()).unwrap();
        let hp = encode(&params, &perm, f.features(&perm).unwrap()).unwrap();

        #[allow(clippy::needless_range_loop)]
        for old in 0..4 {
            for c in 0..8 {
                let diff = (h.get(old, c) - hp.get(pi[old], c)).abs();
                assert!(diff < 1e-9, "row {old} col {c}: {diff}");
            }
        }

        // readout is permutation-invariant
        let r = readout(&h);
        let rp = readout(&hp);
        for (a, b) in r.iter().zip(&rp) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn readout_matches_column_sums() {
        let h = Tensor2::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(readout(&h), vec![9.0, 12.0]);

        // single node: readout equals that node's embedding
        let single = Tensor2::from_vec(1, 2, vec![7.0, -1.0]).unwrap();
        assert_eq!(readout(&single), vec![7.0, -1.0]);
    }

    #[test]
    fn locality_edits_beyond_l_hops_do_not_change_embeddings() {
        // path of 6 carbons; with L=2 layers, atom 0 sees at most 2 hops
        let base = parse_smiles("CCCCCC").unwrap();
        let edited = parse_smiles("CCCCCO").unwrap(); // change atom 5
        let f = AtomFeaturizer::new(vec![
            crate::molgraph::Element::C,
            crate::molgraph::Element::O,
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params = RgcnParams::new(f.width(), 5, 2, &mut rng);
        let h0 = encode(&params, &base, f.features(&base).unwrap()).unwrap();
        let h1 = encode(&params, &edited, f.features(&edited).unwrap()).unwrap();
        for i in 0..=2 {
            // atoms 0..=2 are more than 2 hops from atom 5
            for c in 0..5 {
                assert!(
                    (h0.get(i, c) - h1.get(i, c)).abs() < 1e-12,
                    "atom {i} changed"
                );
            }
        }
        // atom 3 is exactly 2 hops away and should change
        assert!((0..5).any(|c| (h0.get(3, c) - h1.get(3, c)).abs() > 1e-9));
    }

    #[test]
    fn feature_width_mismatch_rejected() {
        let mol = parse_smiles("CC").unwrap();
        let f = featurizer_for(&mol);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = RgcnParams::new(f.width() + 3, 4, 1, &mut rng);
        assert!(matches!(
            encode(&params, &mol, f.features(&mol).unwrap()),
            Err(RgcnError::FeatureWidthMismatch { .. })
        ));
    }

    #[test]
    fn gradients_flow_to_every_weight() {
        let mol = parse_smiles("CC=O").unwrap();
        let f = featurizer_for(&mol);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let params = RgcnParams::new(f.width(), 4, 2, &mut rng);

        let mut tape = Tape::new();
        let mut bound = BoundParams::new();
        let h = encode_on_tape(
            &mut tape,
            &mut bound,
            "enc",
            &params,
            &mol,
            f.features(&mol).unwrap(),
        )
        .unwrap();
        let hg = readout_on_tape(&mut tape, h, &[true; 3]).unwrap();
        let s = tape.sum(hg);
        let sig = tape.sigmoid(s);
        let loss = tape.sum(sig);
        let grads = tape.backward(loss).unwrap();
        let gm = bound.grad_map(&grads);
        // single and double bond weights plus self-loops carry gradient
        assert!(gm.contains_key("enc.l0.e0.w"));
        assert!(gm.contains_key("enc.l1.e1.w"));
    }
}
