//! Valence accounting.
//!
//! Base capacities: B 3, C 4, N 3, O 2, P 5, S 6, halogens 1. Formal
//! charge shifts capacity by one unit per charge with a sign that
//! depends on the element class: a cation on N, O, P, S or a halogen
//! gains capacity (ammonium, oxonium) and an anion loses it; boron is
//! the mirror image (borate anions gain); carbon loses capacity for
//! either charge sign. Aromatic bonds count one unit — without
//! kekulization a fractional order cannot be assigned consistently, so
//! the check is deliberately lenient for aromatic systems.

use super::{BondType, Element, Molecule};

/// Valence units a bond consumes on each endpoint.
pub fn bond_units(t: BondType) -> u32 {
    match t {
        BondType::Single => 1,
        BondType::Double => 2,
        BondType::Triple => 3,
        BondType::Aromatic => 1,
    }
}

/// Maximum total valence units for an element with a formal charge.
pub fn capacity(element: Element, charge: i8) -> u32 {
    let base: i32 = match element {
        Element::B => 3,
        Element::C => 4,
        Element::N => 3,
        Element::O => 2,
        Element::P => 5,
        Element::S => 6,
        Element::F | Element::Cl | Element::Br | Element::I => 1,
    };
    let shift: i32 = match element {
        Element::B => -(charge as i32),
        Element::C => -(charge as i32).abs(),
        _ => charge as i32,
    };
    (base + shift).max(0) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValenceViolation {
    pub atom: usize,
    pub used: u32,
    pub capacity: u32,
}

/// Atoms whose bond-order sum plus explicit hydrogens exceeds their
/// capacity.
pub fn valence_violations(mol: &Molecule) -> Vec<ValenceViolation> {
    let mut out = Vec::new();
    for i in 0..mol.n_atoms() {
        let rec = mol.atom(i);
        let used = mol.bond_order_sum(i) + rec.hydrogens as u32;
        let cap = capacity(rec.element, rec.charge);
        if used > cap {
            out.push(ValenceViolation {
                atom: i,
                used,
                capacity: cap,
            });
        }
    }
    out
}

pub fn valence_ok(mol: &Molecule) -> bool {
    valence_violations(mol).is_empty()
}
