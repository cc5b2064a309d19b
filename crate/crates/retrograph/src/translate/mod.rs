//! Variational synthon-to-reactant graph translation.
//!
//! A reactant grows from a synthon through a sequence of actions, each
//! adding one bond: between two existing atoms (ring or link closure)
//! or from an existing atom to a fresh atom drawn from the new-atom
//! vocabulary. A trace ends with an explicit stop action. Generation
//! is conditioned on a latent code; training maximizes an evidence
//! lower bound with a Gaussian posterior over that code.

mod beam;
mod edits;
mod model;
mod train;

pub use beam::beam_generate;
pub use edits::{
    diff_edits, enumerate_traces, sample_trace, EditSet, EndRef, NewAtom, NewBond, TraceMode,
    MAX_EXACT_EDITS,
};
pub use model::{
    elbo_loss, elbo_loss_on_tape, kl_to_standard_normal, marginal_logprob_exact, posterior,
    step_distributions, trace_logprob, StepDistributions,
};
pub use train::{
    build_vocab, extract_pairs, train_translate, TranslateEpochMetrics, TranslatePair,
    TranslateTrainOptions,
};

use crate::center::Synthon;
use crate::molgraph::{
    AtomRecord, BondType, Element, FeatureError, GraphError, Molecule, BOND_TYPES,
};
use crate::numcore::{FeedForward, NumError, Tensor2};
use crate::rgcn::{RgcnError, RgcnParams};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("synthon atom {0} has no atom-map number")]
    UnmappedSynthonAtom(usize),
    #[error("synthon map {0} is missing from the reactant")]
    MapMissingFromReactant(u32),
    #[error("synthon atom {synthon_atom} and its mapped reactant atom differ in attributes")]
    AttributeMismatch { synthon_atom: usize },
    #[error("synthon bond {0}-{1} is missing from the reactant or has a different type")]
    BondMismatch(usize, usize),
    #[error("edit set is not connected to the synthon")]
    DisconnectedEdits,
    #[error("{got} edits exceed the exact-enumeration guard of {limit}")]
    TooManyEdits { got: usize, limit: usize },
    #[error("synthon count {synthons} does not match reactant count {reactants}")]
    SynthonReactantMismatch { synthons: usize, reactants: usize },
    #[error("new atom {0:?} is not in the frozen vocabulary")]
    AtomNotInVocabulary(AtomTriple),
    #[error("a class id was given but class conditioning is disabled")]
    ClassConditioningDisabled,
    #[error("this model was trained with class conditioning; a class id is required")]
    ClassRequired,
    #[error("class id {0} outside 1..=10")]
    ClassOutOfRange(u8),
    #[error("latent code has width {got}, expected {expected}")]
    LatentWidthMismatch { expected: usize, got: usize },
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

/// Atom identity as it appears in the new-atom vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomTriple {
    pub element: Element,
    pub charge: i8,
    pub hydrogens: u8,
}

impl AtomTriple {
    pub fn of(record: &AtomRecord) -> Self {
        AtomTriple {
            element: record.element,
            charge: record.charge,
            hydrogens: record.hydrogens,
        }
    }

    pub fn record(&self) -> AtomRecord {
        AtomRecord {
            element: self.element,
            charge: self.charge,
            hydrogens: self.hydrogens,
            map_num: None,
        }
    }
}

/// Second-node choice of an edit action: an existing atom or a fresh
/// atom of the given identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodePick {
    Existing(usize),
    New(AtomTriple),
}

/// One graph-edit decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Stop,
    Edit {
        first: usize,
        second: NodePick,
        bond: BondType,
    },
}

/// The evolving graph during translation. Attachment flags mark the
/// synthon atoms that lost a center bond; freshly added atoms carry a
/// cleared flag.
#[derive(Debug, Clone)]
pub struct GrowState {
    pub mol: Molecule,
    pub attachments: Vec<bool>,
}

impl GrowState {
    pub fn from_synthon(synthon: &Synthon) -> Self {
        GrowState {
            mol: synthon.mol.clone(),
            attachments: synthon.attachments.clone(),
        }
    }

    /// The whole molecule as its own synthon (no attachment atoms).
    pub fn from_molecule(mol: &Molecule) -> Self {
        GrowState {
            attachments: vec![false; mol.n_atoms()],
            mol: mol.clone(),
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.mol.n_atoms()
    }

    /// Applies a non-stop action, returning the grown state.
    pub fn apply(&self, action: &Action) -> Result<GrowState, TranslateError> {
        match action {
            Action::Stop => Ok(self.clone()),
            Action::Edit {
                first,
                second,
                bond,
            } => match second {
                NodePick::Existing(j) => {
                    let mol = self.mol.with_bond_added(*first, *j, *bond)?;
                    Ok(GrowState {
                        mol,
                        attachments: self.attachments.clone(),
                    })
                }
                NodePick::New(triple) => {
                    let mol = self.mol.with_atom_added(triple.record());
                    let mol = mol.with_bond_added(*first, mol.n_atoms() - 1, *bond)?;
                    let mut attachments = self.attachments.clone();
                    attachments.push(false);
                    Ok(GrowState { mol, attachments })
                }
            },
        }
    }
}

/// An ordered action sequence transforming a synthon into a reactant.
#[derive(Debug, Clone)]
pub struct TraceSample {
    pub start: GrowState,
    /// Edit actions followed by exactly one terminal [`Action::Stop`].
    pub actions: Vec<Action>,
    /// Log-probability of this sample under the trace sampler (the
    /// product of per-step uniform choices). Exact whenever no two
    /// pending edits produce the same action from the same state.
    pub proposal_logprob: f64,
}

impl TraceSample {
    /// Replays the trace; the result must match the target reactant.
    pub fn replay(&self) -> Result<GrowState, TranslateError> {
        let mut state = self.start.clone();
        for action in &self.actions {
            state = state.apply(action)?;
        }
        Ok(state)
    }
}

/// Parameters of the translation module: the shared encoder, the four
/// decision heads, the posterior heads, and the frozen new-atom
/// vocabulary.
#[derive(Clone)]
pub struct TranslateParams {
    pub encoder: RgcnParams,
    pub stop_head: FeedForward,
    pub first_head: FeedForward,
    pub second_head: FeedForward,
    pub bond_head: FeedForward,
    pub mu_head: FeedForward,
    pub logvar_head: FeedForward,
    pub vocab: Vec<AtomTriple>,
    pub latent_dim: usize,
    pub class_embed: Option<Tensor2>,
}

impl TranslateParams {
    pub fn new(
        feature_width: usize,
        embed_dim: usize,
        layers: usize,
        latent_dim: usize,
        vocab: Vec<AtomTriple>,
        class_embed_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let k = embed_dim;
        let z = latent_dim;
        let c = class_embed_dim.unwrap_or(0);
        let encoder = RgcnParams::new(feature_width, k, layers, rng);
        let stop_head = FeedForward::new(&[k + z + c, k, 2], rng);
        let first_head = FeedForward::new(&[2 * k + z + c, k, 1], rng);
        let second_head = FeedForward::new(&[3 * k + z + c, k, 1], rng);
        let bond_head = FeedForward::new(&[3 * k + z + c, k, BOND_TYPES], rng);
        let mu_head = FeedForward::new(&[2 * k, k, z], rng);
        let logvar_head = FeedForward::new(&[2 * k, k, z], rng);
        let class_embed = class_embed_dim
            .map(|dim| Tensor2::uniform_init(crate::center::REACTION_CLASSES, dim, dim, rng));
        TranslateParams {
            encoder,
            stop_head,
            first_head,
            second_head,
            bond_head,
            mu_head,
            logvar_head,
            vocab,
            latent_dim,
            class_embed,
        }
    }

    pub fn class_conditioned(&self) -> bool {
        self.class_embed.is_some()
    }

    pub fn vocab_index(&self, triple: &AtomTriple) -> Result<usize, TranslateError> {
        self.vocab
            .iter()
            .position(|t| t == triple)
            .ok_or(TranslateError::AtomNotInVocabulary(*triple))
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor2)> {
        let mut out = Vec::new();
        self.encoder.named_tensors("translate.enc", &mut out);
        self.stop_head.named_tensors("translate.stop", &mut out);
        self.first_head.named_tensors("translate.first", &mut out);
        self.second_head.named_tensors("translate.second", &mut out);
        self.bond_head.named_tensors("translate.bond", &mut out);
        self.mu_head.named_tensors("translate.mu", &mut out);
        self.logvar_head.named_tensors("translate.logvar", &mut out);
        if let Some(t) = &self.class_embed {
            out.push(("translate.class_embed".to_string(), t.clone()));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out = self.encoder.named_tensors_mut("translate.enc");
        out.extend(self.stop_head.named_tensors_mut("translate.stop"));
        out.extend(self.first_head.named_tensors_mut("translate.first"));
        out.extend(self.second_head.named_tensors_mut("translate.second"));
        out.extend(self.bond_head.named_tensors_mut("translate.bond"));
        out.extend(self.mu_head.named_tensors_mut("translate.mu"));
        out.extend(self.logvar_head.named_tensors_mut("translate.logvar"));
        if let Some(t) = &mut self.class_embed {
            out.push(("translate.class_embed".to_string(), t));
        }
        out
    }

    pub(crate) fn check_class(
        &self,
        class_id: Option<u8>,
    ) -> Result<Option<usize>, TranslateError> {
        match (self.class_conditioned(), class_id) {
            (false, None) => Ok(None),
            (false, Some(_)) => Err(TranslateError::ClassConditioningDisabled),
            (true, None) => Err(TranslateError::ClassRequired),
            (true, Some(c)) => {
                if !(1..=10).contains(&c) {
                    return Err(TranslateError::ClassOutOfRange(c));
                }
                Ok(Some(c as usize - 1))
            }
        }
    }
}
