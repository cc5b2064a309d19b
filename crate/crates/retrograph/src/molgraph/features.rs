//! Node feature encoding: one-hot element over a frozen vocabulary,
//! one-hot charge (-2..+2), one-hot explicit hydrogen count (0..4),
//! plus an optional trailing attachment flag column.

use super::{Element, Molecule};
use crate::numcore::Tensor2;
use thiserror::Error;

pub const CHARGE_SLOTS: usize = 5;
pub const HYDROGEN_SLOTS: usize = 5;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("element {0:?} is not in the frozen vocabulary")]
    ElementNotInVocabulary(Element),
    #[error("flag vector length {got} does not match atom count {atoms}")]
    FlagLengthMismatch { got: usize, atoms: usize },
}

/// Deterministic atom encoder over a vocabulary frozen at training
/// time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomFeaturizer {
    elements: Vec<Element>,
}

impl AtomFeaturizer {
    pub fn new(mut elements: Vec<Element>) -> Self {
        elements.sort();
        elements.dedup();
        AtomFeaturizer { elements }
    }

    pub fn from_molecules<'a>(mols: impl Iterator<Item = &'a Molecule>) -> Self {
        let mut elements: Vec<Element> = mols
            .flat_map(|m| m.atoms().iter().map(|a| a.element))
            .collect();
        elements.sort();
        elements.dedup();
        AtomFeaturizer { elements }
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Feature width without the attachment flag column.
    pub fn width(&self) -> usize {
        self.elements.len() + CHARGE_SLOTS + HYDROGEN_SLOTS
    }

    /// Encodes one atom identity as a feature row.
    pub fn atom_row(
        &self,
        element: Element,
        charge: i8,
        hydrogens: u8,
    ) -> Result<Vec<f64>, FeatureError> {
        let e = self
            .elements
            .iter()
            .position(|&x| x == element)
            .ok_or(FeatureError::ElementNotInVocabulary(element))?;
        let mut row = vec![0.0; self.width()];
        row[e] = 1.0;
        row[self.elements.len() + (charge + 2) as usize] = 1.0;
        row[self.elements.len() + CHARGE_SLOTS + hydrogens as usize] = 1.0;
        Ok(row)
    }

    /// The `n x d` feature matrix of a molecule.
    pub fn features(&self, mol: &Molecule) -> Result<Tensor2, FeatureError> {
        self.features_with_flags(mol, None)
    }

    /// Feature matrix with a trailing 0/1 column (`n x (d+1)`); used to
    /// mark synthon attachment atoms for the translation encoder.
    pub fn features_with_flags(
        &self,
        mol: &Molecule,
        flags: Option<&[bool]>,
    ) -> Result<Tensor2, FeatureError> {
        if let Some(f) = flags {
            if f.len() != mol.n_atoms() {
                return Err(FeatureError::FlagLengthMismatch {
                    got: f.len(),
                    atoms: mol.n_atoms(),
                });
            }
        }
        let width = self.width() + usize::from(flags.is_some());
        let mut out = Tensor2::zeros(mol.n_atoms(), width);
        for (i, atom) in mol.atoms().iter().enumerate() {
            let row = self.atom_row(atom.element, atom.charge, atom.hydrogens)?;
            for (c, v) in row.into_iter().enumerate() {
                out.set(i, c, v);
            }
            if let Some(f) = flags {
                out.set(i, width - 1, if f[i] { 1.0 } else { 0.0 });
            }
        }
        Ok(out)
    }
}
