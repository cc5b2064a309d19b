//! Atom-mapped reactions: a set of reactant molecules plus one product.

use super::Molecule;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReactionError {
    #[error("reaction has no reactants")]
    NoReactants,
    #[error("product is not a single connected molecule")]
    DisconnectedProduct,
    #[error("product atom {0} has no atom-map number")]
    UnmappedProductAtom(usize),
    #[error("atom-map number {0} appears more than once on one side")]
    DuplicateMap(u32),
    #[error("product atom-map number {0} appears in no reactant")]
    MapMissingFromReactants(u32),
    #[error("reactant {0} shares no atom-map number with the product")]
    ReactantWithoutMappedAtoms(usize),
    #[error("reaction class {0} outside 1..=10")]
    ClassOutOfRange(u8),
}

/// A single-product reaction. Construction enforces the atom-map
/// alignment the rest of the pipeline relies on: every product atom is
/// mapped, map numbers are unique per side, every product map lands in
/// exactly one reactant, and every reactant anchors at least one
/// product atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub reactants: Vec<Molecule>,
    pub product: Molecule,
    pub class_id: Option<u8>,
}

impl Reaction {
    pub fn new(
        reactants: Vec<Molecule>,
        product: Molecule,
        class_id: Option<u8>,
    ) -> Result<Self, ReactionError> {
        if reactants.is_empty() {
            return Err(ReactionError::NoReactants);
        }
        if let Some(c) = class_id {
            if !(1..=10).contains(&c) {
                return Err(ReactionError::ClassOutOfRange(c));
            }
        }
        if super::edit::connected_components(&product).len() != 1 {
            return Err(ReactionError::DisconnectedProduct);
        }

        let mut product_maps = HashMap::new();
        for (i, atom) in product.atoms().iter().enumerate() {
            match atom.map_num {
                None => return Err(ReactionError::UnmappedProductAtom(i)),
                Some(m) => {
                    if product_maps.insert(m, i).is_some() {
                        return Err(ReactionError::DuplicateMap(m));
                    }
                }
            }
        }

        let mut reactant_maps: HashMap<u32, (usize, usize)> = HashMap::new();
        for (ri, r) in reactants.iter().enumerate() {
            let mut any = false;
            for (ai, atom) in r.atoms().iter().enumerate() {
                if let Some(m) = atom.map_num {
                    if reactant_maps.insert(m, (ri, ai)).is_some() {
                        return Err(ReactionError::DuplicateMap(m));
                    }
                    if product_maps.contains_key(&m) {
                        any = true;
                    }
                }
            }
            if !any {
                return Err(ReactionError::ReactantWithoutMappedAtoms(ri));
            }
        }

        for &m in product_maps.keys() {
            if !reactant_maps.contains_key(&m) {
                return Err(ReactionError::MapMissingFromReactants(m));
            }
        }

        Ok(Reaction {
            reactants,
            product,
            class_id,
        })
    }

    /// Map number -> (reactant index, atom index).
    pub fn reactant_atom_by_map(&self) -> HashMap<u32, (usize, usize)> {
        let mut out = HashMap::new();
        for (ri, r) in self.reactants.iter().enumerate() {
            for (ai, atom) in r.atoms().iter().enumerate() {
                if let Some(m) = atom.map_num {
                    out.insert(m, (ri, ai));
                }
            }
        }
        out
    }
}
