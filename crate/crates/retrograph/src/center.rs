//! Reaction-center identification: ground-truth labels from atom
//! maps, pair scoring, weighted cross-entropy training, center
//! selection, and synthon splitting.

use crate::molgraph::{
    canonical_ranks, connected_components, remove_bonds, AtomFeaturizer, FeatureError, GraphError,
    Molecule, Reaction, BOND_TYPES,
};
use crate::numcore::{
    accumulate_grads, sigmoid, AdamState, BoundParams, FeedForward, NodeId, NumError, Tape,
    Tensor2,
};
use crate::rgcn::{encode_on_tape, readout_on_tape, RgcnError, RgcnParams};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

/// Number of reaction classes (class ids run 1..=10).
pub const REACTION_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum CenterError {
    #[error("lambda must be at least 1, got {0}")]
    LambdaOutOfRange(f64),
    #[error("label matrix is {got}x{got} but the score matrix is {expected}x{expected}")]
    LabelShapeMismatch { expected: usize, got: usize },
    #[error("a class id was given but class conditioning is disabled")]
    ClassConditioningDisabled,
    #[error("this model was trained with class conditioning; a class id is required")]
    ClassRequired,
    #[error("class id {0} outside 1..=10")]
    ClassOutOfRange(u8),
    #[error("cannot score an empty product")]
    EmptyProduct,
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Rgcn(#[from] RgcnError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Symmetric binary matrix over product atoms marking reaction-center
/// bonds: 1 exactly where the product has a bond whose map-aligned
/// atoms are not bonded in any reactant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    n: usize,
    data: Vec<bool>,
}

impl LabelMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    /// Center pairs as `(i, j)` with `i < j`.
    pub fn center_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&b| !b)
    }
}

/// Derives the center label matrix by comparing each bonded product
/// pair against the map-aligned reactant pair. Bond existence is what
/// counts: a pair bonded in both product and reactant is not a center
/// even when the bond types differ.
pub fn derive_labels(rxn: &Reaction) -> LabelMatrix {
    let n = rxn.product.n_atoms();
    let by_map = rxn.reactant_atom_by_map();
    let mut data = vec![false; n * n];
    for (i, j, _) in rxn.product.bonds() {
        let mi = rxn.product.atom(i).map_num.expect("product atoms are mapped");
        let mj = rxn.product.atom(j).map_num.expect("product atoms are mapped");
        let (ri, ai) = by_map[&mi];
        let (rj, aj) = by_map[&mj];
        let bonded_in_reactant = ri == rj && rxn.reactants[ri].bond(ai, aj).is_some();
        if !bonded_in_reactant {
            data[i * n + j] = true;
            data[j * n + i] = true;
        }
    }
    LabelMatrix { n, data }
}

/// Parameters of the center-identification module.
#[derive(Clone)]
pub struct CenterParams {
    pub encoder: RgcnParams,
    pub scorer: FeedForward,
    pub class_embed: Option<Tensor2>, // 10 x c
}

impl CenterParams {
    /// Scorer input width: both node embeddings, the bond-type one-hot,
    /// the graph embedding, and optionally a class embedding.
    pub fn scorer_input_width(embed_dim: usize, class_embed_dim: Option<usize>) -> usize {
        3 * embed_dim + BOND_TYPES + class_embed_dim.unwrap_or(0)
    }

    pub fn new(
        feature_width: usize,
        embed_dim: usize,
        layers: usize,
        class_embed_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let encoder = RgcnParams::new(feature_width, embed_dim, layers, rng);
        let input = Self::scorer_input_width(embed_dim, class_embed_dim);
        let scorer = FeedForward::new(&[input, embed_dim, 1], rng);
        let class_embed = class_embed_dim
            .map(|c| Tensor2::uniform_init(REACTION_CLASSES, c, c, rng));
        CenterParams {
            encoder,
            scorer,
            class_embed,
        }
    }

    pub fn class_conditioned(&self) -> bool {
        self.class_embed.is_some()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor2)> {
        let mut out = Vec::new();
        self.encoder.named_tensors("center.enc", &mut out);
        self.scorer.named_tensors("center.scorer", &mut out);
        if let Some(t) = &self.class_embed {
            out.push(("center.class_embed".to_string(), t.clone()));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out = self.encoder.named_tensors_mut("center.enc");
        out.extend(self.scorer.named_tensors_mut("center.scorer"));
        if let Some(t) = &mut self.class_embed {
            out.push(("center.class_embed".to_string(), t));
        }
        out
    }
}

fn check_class(params: &CenterParams, class_id: Option<u8>) -> Result<Option<usize>, CenterError> {
    match (params.class_conditioned(), class_id) {
        (false, None) => Ok(None),
        (false, Some(_)) => Err(CenterError::ClassConditioningDisabled),
        (true, None) => Err(CenterError::ClassRequired),
        (true, Some(c)) => {
            if !(1..=10).contains(&c) {
                return Err(CenterError::ClassOutOfRange(c));
            }
            Ok(Some(c as usize - 1))
        }
    }
}

/// Records pair logits for every unordered atom pair of the product,
/// in lexicographic `(i, j)` order (`i < j`). Node embeddings enter
/// the pair feature in canonical-rank order so the score is exactly
/// symmetric.
fn pair_logits_on_tape(
    tape: &mut Tape,
    bound: &mut BoundParams,
    params: &CenterParams,
    featurizer: &AtomFeaturizer,
    product: &Molecule,
    class_row: Option<usize>,
) -> Result<(Vec<(usize, usize)>, NodeId), CenterError> {
    let n = product.n_atoms();
    if n == 0 {
        return Err(CenterError::EmptyProduct);
    }
    let features = featurizer.features(product)?;
    let h = encode_on_tape(tape, bound, "center.enc", &params.encoder, product, features)?;
    let h_g = readout_on_tape(tape, h, &vec![true; n])?;

    let ranks = canonical_ranks(product);
    let mut pairs = Vec::new();
    let mut firsts = Vec::new();
    let mut seconds = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
            let (a, b) = if ranks[i] <= ranks[j] { (i, j) } else { (j, i) };
            firsts.push(a);
            seconds.push(b);
        }
    }
    let p = pairs.len();
    if p == 0 {
        // single-atom product: no pairs to score
        let logits = tape.leaf(Tensor2::zeros(0, 1));
        return Ok((pairs, logits));
    }

    let hf = tape.gather_rows(h, firsts)?;
    let hs = tape.gather_rows(h, seconds)?;
    let mut e = tape.concat_cols(hf, hs)?;

    let mut bond_onehot = Tensor2::zeros(p, BOND_TYPES);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        if let Some(t) = product.bond(i, j) {
            bond_onehot.set(row, t.index(), 1.0);
        }
    }
    let bond_onehot = tape.leaf(bond_onehot);
    e = tape.concat_cols(e, bond_onehot)?;

    let hg_rows = tape.gather_rows(h_g, vec![0; p])?;
    e = tape.concat_cols(e, hg_rows)?;

    if let Some(row) = class_row {
        let table = bound.bind(
            tape,
            "center.class_embed",
            params.class_embed.as_ref().expect("checked by caller"),
        );
        let cls = tape.gather_rows(table, vec![row; p])?;
        e = tape.concat_cols(e, cls)?;
    }

    let logits = params
        .scorer
        .forward(tape, bound, "center.scorer", e)?;
    Ok((pairs, logits))
}

/// Reactivity scores for all atom pairs as a symmetric `n x n` matrix
/// with entries in `(0, 1)`; the diagonal is fixed at zero.
pub fn score_pairs(
    product: &Molecule,
    featurizer: &AtomFeaturizer,
    params: &CenterParams,
    class_id: Option<u8>,
) -> Result<Tensor2, CenterError> {
    let class_row = check_class(params, class_id)?;
    let mut tape = Tape::new();
    let mut bound = BoundParams::new();
    let (pairs, logits) =
        pair_logits_on_tape(&mut tape, &mut bound, params, featurizer, product, class_row)?;
    let n = product.n_atoms();
    let mut s = Tensor2::zeros(n, n);
    let values = tape.value(logits);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        let v = sigmoid(values.get(row, 0));
        s.set(i, j, v);
        s.set(j, i, v);
    }
    Ok(s)
}

/// Weighted binary cross-entropy over unordered pairs:
/// `-(lambda * Y * log s + (1 - Y) * log(1 - s))` summed once per pair,
/// with scores clamped to `[1e-12, 1 - 1e-12]`.
pub fn center_loss(scores: &Tensor2, labels: &LabelMatrix, lambda: f64) -> Result<f64, CenterError> {
    if lambda < 1.0 {
        return Err(CenterError::LambdaOutOfRange(lambda));
    }
    if scores.rows() != labels.size() || scores.cols() != labels.size() {
        return Err(CenterError::LabelShapeMismatch {
            expected: scores.rows(),
            got: labels.size(),
        });
    }
    let mut total = 0.0;
    for i in 0..labels.size() {
        for j in i + 1..labels.size() {
            let s = scores.get(i, j).clamp(1e-12, 1.0 - 1e-12);
            total -= if labels.get(i, j) {
                lambda * s.ln()
            } else {
                (1.0 - s).ln()
            };
        }
    }
    Ok(total)
}

/// Bonded pairs scoring above the threshold, best first, at most `k`.
/// Ties break on ascending pair indices so selection is deterministic.
pub fn select_centers(
    scores: &Tensor2,
    product: &Molecule,
    threshold: f64,
    k: usize,
) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(usize, usize, f64)> = product
        .bonds()
        .into_iter()
        .map(|(i, j, _)| (i, j, scores.get(i, j)))
        .filter(|&(_, _, s)| s > threshold)
        .collect();
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    candidates.into_iter().take(k).map(|(i, j, _)| (i, j)).collect()
}

/// A connected product fragment produced by disconnecting centers.
#[derive(Debug, Clone)]
pub struct Synthon {
    pub mol: Molecule,
    /// Local atom index -> product atom index.
    pub parent_map: Vec<usize>,
    /// True for atoms that lost a center bond (attachment points).
    pub attachments: Vec<bool>,
}

/// Disconnects the center bonds and returns each connected subgraph.
/// No valence repair is performed; with no centers the product itself
/// comes back as the single synthon.
pub fn split_synthons(
    product: &Molecule,
    centers: &[(usize, usize)],
) -> Result<Vec<Synthon>, GraphError> {
    let cut = remove_bonds(product, centers)?;
    let mut touched = vec![false; product.n_atoms()];
    for &(a, b) in centers {
        touched[a] = true;
        touched[b] = true;
    }
    Ok(connected_components(&cut)
        .into_iter()
        .map(|(mol, parent_map)| {
            let attachments = parent_map.iter().map(|&g| touched[g]).collect();
            Synthon {
                mol,
                parent_map,
                attachments,
            }
        })
        .collect())
}

/// True when every true center bond appears within the first `k`
/// selected pairs. Reactions with no center bonds count as hits.
pub fn center_hit_at(selected: &[(usize, usize)], truth: &[(usize, usize)], k: usize) -> bool {
    let window = &selected[..k.min(selected.len())];
    truth
        .iter()
        .all(|&(a, b)| window.contains(&(a, b)) || window.contains(&(b, a)))
}

/// Training loss of one product against its label matrix, plus the
/// parameter gradients. The loss is the weighted cross-entropy of
/// [`center_loss`] computed from logits on the tape.
pub fn center_loss_grads(
    params: &CenterParams,
    featurizer: &AtomFeaturizer,
    product: &Molecule,
    labels: &LabelMatrix,
    lambda: f64,
    class_id: Option<u8>,
) -> Result<(f64, std::collections::BTreeMap<String, Tensor2>), CenterError> {
    let class_row = check_class(params, class_id)?;
    let mut tape = Tape::new();
    let mut bound = BoundParams::new();
    let (pairs, logits) =
        pair_logits_on_tape(&mut tape, &mut bound, params, featurizer, product, class_row)?;
    let y: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| if labels.get(i, j) { 1.0 } else { 0.0 })
        .collect();
    let loss = tape.bce_logits(logits, y, lambda)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, bound.grad_map(&grads)))
}

#[derive(Debug, Clone)]
pub struct CenterTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub embed_dim: usize,
    pub layers: usize,
    pub class_conditioning: bool,
    pub class_embed_dim: usize,
    pub threshold: f64,
    pub metric_ks: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CenterEpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    /// `(k, accuracy)` pairs over the training reactions.
    pub accuracy: Vec<(usize, f64)>,
}

/// Trains the center module on the given reactions. Metrics are
/// computed against the same reactions each epoch. Passing `resume`
/// continues from saved parameters and optimizer state instead of a
/// fresh initialization.
pub fn train_center(
    reactions: &[Reaction],
    featurizer: &AtomFeaturizer,
    options: &CenterTrainOptions,
    rng: &mut impl Rng,
    resume: Option<(CenterParams, AdamState)>,
) -> Result<(CenterParams, AdamState, Vec<CenterEpochMetrics>), CenterError> {
    if reactions.is_empty() {
        return Err(CenterError::EmptyTrainingSet);
    }
    let class_dim = options.class_conditioning.then_some(options.class_embed_dim);
    let (mut params, mut adam) = match resume {
        Some(state) => state,
        None => (
            CenterParams::new(
                featurizer.width(),
                options.embed_dim,
                options.layers,
                class_dim,
                rng,
            ),
            AdamState::new(options.learning_rate),
        ),
    };
    let labels: Vec<LabelMatrix> = reactions.iter().map(derive_labels).collect();
    let mut history = Vec::with_capacity(options.epochs);

    let mut order: Vec<usize> = (0..reactions.len()).collect();
    for epoch in 0..options.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(options.batch_size.max(1)) {
            let mut grads = std::collections::BTreeMap::new();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let rxn = &reactions[idx];
                let class_row = check_class(&params, effective_class(&params, rxn))?;
                let mut tape = Tape::new();
                let mut bound = BoundParams::new();
                let (pairs, logits) = pair_logits_on_tape(
                    &mut tape,
                    &mut bound,
                    &params,
                    featurizer,
                    &rxn.product,
                    class_row,
                )?;
                if pairs.is_empty() {
                    continue;
                }
                let y: Vec<f64> = pairs
                    .iter()
                    .map(|&(i, j)| if labels[idx].get(i, j) { 1.0 } else { 0.0 })
                    .collect();
                let loss = tape.bce_logits(logits, y, options.lambda)?;
                let scaled = tape.affine(loss, scale, 0.0);
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(CenterError::Diverged { epoch });
                }
                epoch_loss += value;
                let g = tape.backward(scaled)?;
                accumulate_grads(&mut grads, &bound.grad_map(&g))?;
            }
            adam.update(&mut params.named_tensors_mut(), &grads)?;
        }

        let accuracy = center_accuracy(
            reactions,
            &labels,
            featurizer,
            &params,
            options.threshold,
            &options.metric_ks,
        )?;
        history.push(CenterEpochMetrics {
            epoch,
            mean_loss: epoch_loss / reactions.len() as f64,
            accuracy,
        });
    }
    Ok((params, adam, history))
}

fn effective_class(params: &CenterParams, rxn: &Reaction) -> Option<u8> {
    if params.class_conditioned() {
        rxn.class_id
    } else {
        None
    }
}

/// Top-k center accuracy over a reaction set: a reaction counts as a
/// hit at `k` when all of its true center bonds are within the top-k
/// selected pairs.
pub fn center_accuracy(
    reactions: &[Reaction],
    labels: &[LabelMatrix],
    featurizer: &AtomFeaturizer,
    params: &CenterParams,
    threshold: f64,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>, CenterError> {
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let mut hits = vec![0usize; ks.len()];
    for (rxn, label) in reactions.iter().zip(labels) {
        let s = score_pairs(
            &rxn.product,
            featurizer,
            params,
            effective_class(params, rxn),
        )?;
        let selected = select_centers(&s, &rxn.product, threshold, max_k);
        let truth = label.center_pairs();
        for (slot, &k) in ks.iter().enumerate() {
            if center_hit_at(&selected, &truth, k) {
                hits[slot] += 1;
            }
        }
    }
    Ok(ks
        .iter()
        .zip(hits)
        .map(|(&k, h)| (k, h as f64 / reactions.len() as f64))
        .collect())
}
