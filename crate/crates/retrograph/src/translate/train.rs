//! Translation-pair extraction and variational training.

use super::edits::{diff_edits, EditSet};
use super::model::elbo_loss_on_tape;
use super::{AtomTriple, GrowState, TranslateError, TranslateParams};
use crate::center::{derive_labels, split_synthons};
use crate::molgraph::{AtomFeaturizer, Molecule, Reaction};
use crate::numcore::{accumulate_grads, AdamState, BoundParams, Tape};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;

/// One supervised translation example: a synthon, the reactant it must
/// grow into, and the precomputed edit set.
#[derive(Debug, Clone)]
pub struct TranslatePair {
    pub synthon: GrowState,
    pub reactant: Molecule,
    pub class_id: Option<u8>,
    pub edits: EditSet,
}

/// Splits a reaction on its true centers and pairs each synthon with
/// the reactant holding its atom maps. Reactions whose synthons do not
/// map one-to-one onto reactants, or whose synthons fail to embed into
/// their reactant, are rejected for translation training (the caller
/// logs and skips them; they remain usable for center training).
pub fn extract_pairs(rxn: &Reaction) -> Result<Vec<TranslatePair>, TranslateError> {
    let labels = derive_labels(rxn);
    let synthons = split_synthons(&rxn.product, &labels.center_pairs())?;
    if synthons.len() != rxn.reactants.len() {
        return Err(TranslateError::SynthonReactantMismatch {
            synthons: synthons.len(),
            reactants: rxn.reactants.len(),
        });
    }
    let by_map = rxn.reactant_atom_by_map();
    let mut used = vec![false; rxn.reactants.len()];
    let mut pairs = Vec::with_capacity(synthons.len());
    for synthon in &synthons {
        let map0 = synthon
            .mol
            .atom(0)
            .map_num
            .ok_or(TranslateError::UnmappedSynthonAtom(0))?;
        let (ri, _) = *by_map
            .get(&map0)
            .ok_or(TranslateError::MapMissingFromReactant(map0))?;
        if used[ri] {
            return Err(TranslateError::SynthonReactantMismatch {
                synthons: synthons.len(),
                reactants: rxn.reactants.len(),
            });
        }
        used[ri] = true;
        let edits = diff_edits(&synthon.mol, &rxn.reactants[ri])?;
        pairs.push(TranslatePair {
            synthon: GrowState::from_synthon(synthon),
            reactant: rxn.reactants[ri].clone(),
            class_id: rxn.class_id,
            edits,
        });
    }
    Ok(pairs)
}

/// The new-atom vocabulary: every atom identity appearing as an added
/// atom across the training pairs, in sorted order.
pub fn build_vocab(pairs: &[TranslatePair]) -> Vec<AtomTriple> {
    let set: BTreeSet<AtomTriple> = pairs
        .iter()
        .flat_map(|p| p.edits.new_atoms.iter().map(|a| a.triple))
        .collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone)]
pub struct TranslateTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub embed_dim: usize,
    pub layers: usize,
    pub latent_dim: usize,
    pub mc_traces: usize,
    pub class_conditioning: bool,
    pub class_embed_dim: usize,
}

#[derive(Debug, Clone)]
pub struct TranslateEpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Trains the translation module on extracted pairs. A fresh run
/// freezes the new-atom vocabulary from the pairs; a resumed run keeps
/// the vocabulary frozen inside the saved parameters.
pub fn train_translate(
    pairs: &[TranslatePair],
    featurizer: &AtomFeaturizer,
    options: &TranslateTrainOptions,
    rng: &mut impl Rng,
    resume: Option<(TranslateParams, AdamState)>,
) -> Result<(TranslateParams, AdamState, Vec<TranslateEpochMetrics>), TranslateError> {
    if pairs.is_empty() {
        return Err(TranslateError::EmptyTrainingSet);
    }
    let class_dim = options
        .class_conditioning
        .then_some(options.class_embed_dim);
    let (mut params, mut adam) = match resume {
        Some(state) => state,
        None => (
            TranslateParams::new(
                featurizer.width() + 1,
                options.embed_dim,
                options.layers,
                options.latent_dim,
                build_vocab(pairs),
                class_dim,
                rng,
            ),
            AdamState::new(options.learning_rate),
        ),
    };
    let mut history = Vec::with_capacity(options.epochs);

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..options.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(options.batch_size.max(1)) {
            let mut grads = std::collections::BTreeMap::new();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let pair = &pairs[idx];
                let class_row = params.check_class(if options.class_conditioning {
                    pair.class_id
                } else {
                    None
                })?;
                let mut tape = Tape::new();
                let mut bound = BoundParams::new();
                let (loss, traces) = elbo_loss_on_tape(
                    &mut tape,
                    &mut bound,
                    &params,
                    featurizer,
                    &pair.synthon,
                    &pair.reactant,
                    &pair.edits,
                    options.mc_traces,
                    class_row,
                    rng,
                )?;
                if cfg!(debug_assertions) {
                    for trace in &traces {
                        let grown = trace.replay()?;
                        debug_assert_eq!(
                            crate::molgraph::write_canonical(&grown.mol),
                            crate::molgraph::write_canonical(&pair.reactant),
                            "sampled trace does not rebuild its reactant"
                        );
                    }
                }
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(TranslateError::Diverged { epoch });
                }
                epoch_loss += value;
                let scaled = tape.affine(loss, scale, 0.0);
                let g = tape.backward(scaled)?;
                accumulate_grads(&mut grads, &bound.grad_map(&g))?;
            }
            adam.update(&mut params.named_tensors_mut(), &grads)?;
        }
        history.push(TranslateEpochMetrics {
            epoch,
            mean_loss: epoch_loss / pairs.len() as f64,
        });
    }
    Ok((params, adam, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reaction(reactants: &[&str], product: &str) -> Reaction {
        Reaction::new(
            reactants.iter().map(|s| parse_smiles(s).unwrap()).collect(),
            parse_smiles(product).unwrap(),
            Some(1),
        )
        .unwrap()
    }

    #[test]
    fn pairs_align_synthons_with_reactants() {
        let rxn = reaction(&["[CH3:1]Br", "[OH2:2]"], "[CH3:1][OH:2]");
        // attribute mismatch on the O (OH vs OH2): rejected
        assert!(matches!(
            extract_pairs(&rxn),
            Err(TranslateError::AttributeMismatch { .. })
        ));

        let rxn = reaction(&["[CH3:1]Br", "[OH:2]"], "[CH3:1][OH:2]");
        let pairs = extract_pairs(&rxn).unwrap();
        assert_eq!(pairs.len(), 2);
        let with_edit = pairs.iter().find(|p| !p.edits.is_empty()).unwrap();
        assert_eq!(with_edit.edits.new_atoms.len(), 1);
        let identity = pairs.iter().find(|p| p.edits.is_empty()).unwrap();
        assert_eq!(identity.synthon.n_atoms(), 1);
    }

    #[test]
    fn vocab_collects_added_atom_identities() {
        let rxns = [
            reaction(&["[CH3:1]Br", "[OH:2]"], "[CH3:1][OH:2]"),
            reaction(&["[CH3:1]I", "[SH:2]"], "[CH3:1][SH:2]"),
        ];
        let pairs: Vec<TranslatePair> =
            rxns.iter().flat_map(|r| extract_pairs(r).unwrap()).collect();
        let vocab = build_vocab(&pairs);
        let elements: Vec<_> = vocab.iter().map(|t| t.element).collect();
        assert!(elements.contains(&crate::molgraph::Element::Br));
        assert!(elements.contains(&crate::molgraph::Element::I));
        assert_eq!(vocab.len(), 2);
    }

    #[test]
    fn short_training_run_decreases_loss() {
        let rxns = [
            reaction(&["[CH3:1]Br", "[OH:2]"], "[CH3:1][OH:2]"),
            reaction(&["[CH3:1][CH2:2]Br", "[NH2:3]"], "[CH3:1][CH2:2][NH2:3]"),
        ];
        let pairs: Vec<TranslatePair> =
            rxns.iter().flat_map(|r| extract_pairs(r).unwrap()).collect();
        let featurizer = AtomFeaturizer::from_molecules(
            rxns.iter()
                .flat_map(|r| r.reactants.iter().chain(std::iter::once(&r.product))),
        );
        let options = TranslateTrainOptions {
            epochs: 30,
            batch_size: 4,
            learning_rate: 0.01,
            embed_dim: 12,
            layers: 2,
            latent_dim: 3,
            mc_traces: 1,
            class_conditioning: false,
            class_embed_dim: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, _, history) = train_translate(&pairs, &featurizer, &options, &mut rng, None).unwrap();
        let first = history.first().unwrap().mean_loss;
        let last = history.last().unwrap().mean_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }
}
