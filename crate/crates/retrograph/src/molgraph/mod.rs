//! Molecular graph data model, SMILES-subset parsing and canonical
//! serialization, valence accounting, and graph surgery.
//!
//! Molecules are immutable after construction: every surgery operation
//! returns a new value, so molecules can be shared and sent freely.

mod canon;
mod edit;
mod features;
mod reaction;
mod smiles;
mod valence;

pub use canon::{canonical_ranks, write_canonical};
pub use edit::{connected_components, remove_bonds};
pub use features::{AtomFeaturizer, FeatureError, CHARGE_SLOTS, HYDROGEN_SLOTS};
pub use reaction::{Reaction, ReactionError};
pub use smiles::{parse_smiles, SmilesError, SmilesErrorKind};
pub use valence::{bond_units, capacity, valence_ok, valence_violations, ValenceViolation};

use thiserror::Error;

/// Bond types, in feature-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
}

/// Number of bond types (the depth of the adjacency tensor).
pub const BOND_TYPES: usize = 4;

impl BondType {
    pub fn index(self) -> usize {
        match self {
            BondType::Single => 0,
            BondType::Double => 1,
            BondType::Triple => 2,
            BondType::Aromatic => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<BondType> {
        match i {
            0 => Some(BondType::Single),
            1 => Some(BondType::Double),
            2 => Some(BondType::Triple),
            3 => Some(BondType::Aromatic),
            _ => None,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BondType::Single => '-',
            BondType::Double => '=',
            BondType::Triple => '#',
            BondType::Aromatic => ':',
        }
    }
}

/// The supported element set (the SMILES organic subset).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    /// True for elements that may carry the aromatic lowercase form.
    pub fn supports_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }
}

/// One atom: element, formal charge, explicit hydrogen count, and an
/// optional atom-map number. Hydrogens are exactly those written in
/// brackets; plain organic-subset atoms carry zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AtomRecord {
    pub element: Element,
    pub charge: i8,
    pub hydrogens: u8,
    pub map_num: Option<u32>,
}

impl AtomRecord {
    pub fn new(element: Element) -> Self {
        AtomRecord {
            element,
            charge: 0,
            hydrogens: 0,
            map_num: None,
        }
    }

    /// Identity triple without the map number.
    pub fn triple(&self) -> (Element, i8, u8) {
        (self.element, self.charge, self.hydrogens)
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("atom index {index} out of range for {len} atoms")]
    AtomOutOfRange { index: usize, len: usize },
    #[error("self-bond on atom {0}")]
    SelfBond(usize),
    #[error("atoms {0} and {1} are already bonded")]
    DuplicateBond(usize, usize),
    #[error("atoms {0} and {1} are not bonded")]
    PairNotBonded(usize, usize),
}

/// A labeled molecular graph: atom records plus a symmetric adjacency
/// with at most one bond type per pair and no self-bonds.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    atoms: Vec<AtomRecord>,
    adj: Vec<Option<BondType>>, // n x n, symmetric, None on the diagonal
}

impl Molecule {
    pub fn from_parts(
        atoms: Vec<AtomRecord>,
        bonds: &[(usize, usize, BondType)],
    ) -> Result<Self, GraphError> {
        let n = atoms.len();
        let mut mol = Molecule {
            atoms,
            adj: vec![None; n * n],
        };
        for &(a, b, t) in bonds {
            mol.insert_bond(a, b, t)?;
        }
        Ok(mol)
    }

    pub fn single_atom(record: AtomRecord) -> Self {
        Molecule {
            atoms: vec![record],
            adj: vec![None],
        }
    }

    fn insert_bond(&mut self, a: usize, b: usize, t: BondType) -> Result<(), GraphError> {
        let n = self.atoms.len();
        for &i in &[a, b] {
            if i >= n {
                return Err(GraphError::AtomOutOfRange { index: i, len: n });
            }
        }
        if a == b {
            return Err(GraphError::SelfBond(a));
        }
        if self.adj[a * n + b].is_some() {
            return Err(GraphError::DuplicateBond(a, b));
        }
        self.adj[a * n + b] = Some(t);
        self.adj[b * n + a] = Some(t);
        Ok(())
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom(&self, i: usize) -> &AtomRecord {
        &self.atoms[i]
    }

    pub fn atoms(&self) -> &[AtomRecord] {
        &self.atoms
    }

    pub fn bond(&self, a: usize, b: usize) -> Option<BondType> {
        self.adj[a * self.atoms.len() + b]
    }

    /// All bonds as `(a, b, type)` with `a < b`, in index order.
    pub fn bonds(&self) -> Vec<(usize, usize, BondType)> {
        let n = self.atoms.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if let Some(t) = self.adj[a * n + b] {
                    out.push((a, b, t));
                }
            }
        }
        out
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds().len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, BondType)> + '_ {
        let n = self.atoms.len();
        (0..n).filter_map(move |j| self.adj[i * n + j].map(|t| (j, t)))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Sum of bond valence units on atom `i` (see [`bond_units`]).
    pub fn bond_order_sum(&self, i: usize) -> u32 {
        self.neighbors(i).map(|(_, t)| bond_units(t)).sum()
    }

    /// New molecule with one extra (isolated) atom appended.
    pub fn with_atom_added(&self, record: AtomRecord) -> Molecule {
        let n = self.atoms.len();
        let mut atoms = self.atoms.clone();
        atoms.push(record);
        let m = n + 1;
        let mut adj = vec![None; m * m];
        for a in 0..n {
            for b in 0..n {
                adj[a * m + b] = self.adj[a * n + b];
            }
        }
        Molecule { atoms, adj }
    }

    /// New molecule with one extra bond.
    pub fn with_bond_added(&self, a: usize, b: usize, t: BondType) -> Result<Molecule, GraphError> {
        let mut mol = self.clone();
        mol.insert_bond(a, b, t)?;
        Ok(mol)
    }

    /// True when the atom-map numbers present are unique.
    pub fn maps_unique(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.atoms
            .iter()
            .filter_map(|a| a.map_num)
            .all(|m| seen.insert(m))
    }

    /// New molecule with all atom-map numbers cleared.
    pub fn without_maps(&self) -> Molecule {
        let mut mol = self.clone();
        for a in &mut mol.atoms {
            a.map_num = None;
        }
        mol
    }

    /// Index of the atom carrying map number `m`, if any.
    pub fn atom_by_map(&self, m: u32) -> Option<usize> {
        self.atoms.iter().position(|a| a.map_num == Some(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bond_insertion_respects_invariants() {
        let atoms = vec![AtomRecord::new(Element::C), AtomRecord::new(Element::C)];
        let mol = Molecule::from_parts(atoms.clone(), &[(0, 1, BondType::Single)]).unwrap();
        assert_eq!(mol.bond(0, 1), Some(BondType::Single));
        assert_eq!(mol.bond(1, 0), Some(BondType::Single));

        assert!(matches!(
            Molecule::from_parts(atoms.clone(), &[(0, 0, BondType::Single)]),
            Err(GraphError::SelfBond(0))
        ));
        assert!(matches!(
            Molecule::from_parts(
                atoms,
                &[(0, 1, BondType::Single), (1, 0, BondType::Double)]
            ),
            Err(GraphError::DuplicateBond(1, 0))
        ));
    }

    #[test]
    fn with_atom_added_preserves_bonds() {
        let mol = Molecule::from_parts(
            vec![AtomRecord::new(Element::C), AtomRecord::new(Element::O)],
            &[(0, 1, BondType::Double)],
        )
        .unwrap();
        let bigger = mol.with_atom_added(AtomRecord::new(Element::N));
        assert_eq!(bigger.n_atoms(), 3);
        assert_eq!(bigger.bond(0, 1), Some(BondType::Double));
        assert_eq!(bigger.degree(2), 0);
    }
}
