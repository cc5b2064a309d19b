//! Shared helpers for the integration and acceptance suites.

#![allow(dead_code)]

use rand::Rng;
use retrograph::molgraph::{
    bond_units, capacity, AtomRecord, BondType, Element, Molecule, BOND_TYPES,
};
use retrograph::translate::{
    step_distributions, AtomTriple, GrowState, NodePick, TranslateParams,
};
use std::path::PathBuf;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

pub fn desk_corpus_text() -> String {
    std::fs::read_to_string(data_path("desk50.txt")).expect("desk corpus present")
}

pub fn fixture_smiles() -> Vec<String> {
    std::fs::read_to_string(data_path("smiles_fixture.txt"))
        .expect("smiles fixture present")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Applies a permutation (old index -> new index) to a molecule.
pub fn permute_molecule(mol: &Molecule, perm: &[usize]) -> Molecule {
    let n = mol.n_atoms();
    let mut atoms = vec![AtomRecord::new(Element::C); n];
    for old in 0..n {
        atoms[perm[old]] = mol.atom(old).clone();
    }
    let bonds: Vec<(usize, usize, BondType)> = mol
        .bonds()
        .into_iter()
        .map(|(a, b, t)| (perm[a], perm[b], t))
        .collect();
    Molecule::from_parts(atoms, &bonds).expect("permutation preserves validity")
}

pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// A randomly grown (synthon, reactant) pair with at most `max_edits`
/// edits. New atoms carry pairwise-distinct identities so every edit
/// maps to a unique action (the trace sampler's proposal probability
/// is then exact).
pub fn random_pair(rng: &mut impl Rng, max_edits: usize) -> (GrowState, Molecule) {
    let n_synthon = rng.random_range(1..=3);
    let mut atoms: Vec<AtomRecord> = (0..n_synthon)
        .map(|i| {
            let mut rec = AtomRecord::new(Element::C);
            rec.map_num = Some(i as u32 + 1);
            rec
        })
        .collect();
    let mut bonds: Vec<(usize, usize, BondType)> = (1..n_synthon)
        .map(|i| (i - 1, i, BondType::Single))
        .collect();
    let synthon_bonds = bonds.clone();

    // distinct identities for the new atoms
    let mut pool = vec![
        AtomTriple { element: Element::N, charge: 0, hydrogens: 2 },
        AtomTriple { element: Element::O, charge: 0, hydrogens: 1 },
        AtomTriple { element: Element::S, charge: 0, hydrogens: 1 },
        AtomTriple { element: Element::F, charge: 0, hydrogens: 0 },
        AtomTriple { element: Element::Cl, charge: 0, hydrogens: 0 },
        AtomTriple { element: Element::Br, charge: 0, hydrogens: 0 },
    ];
    let n_new = rng.random_range(1..=max_edits.min(pool.len()));
    for _ in 0..n_new {
        let triple = pool.remove(rng.random_range(0..pool.len()));
        let host = loop {
            let candidate = rng.random_range(0..atoms.len());
            let used: u32 = bonds
                .iter()
                .filter(|&&(a, b, _)| a == candidate || b == candidate)
                .map(|&(_, _, t)| bond_units(t))
                .sum();
            let rec = &atoms[candidate];
            if used + (rec.hydrogens as u32) < capacity(rec.element, rec.charge) {
                break candidate;
            }
        };
        atoms.push(triple.record());
        bonds.push((host, atoms.len() - 1, BondType::Single));
    }

    let reactant = Molecule::from_parts(atoms.clone(), &bonds).expect("valid construction");
    let synthon_mol = Molecule::from_parts(atoms[..n_synthon].to_vec(), &synthon_bonds)
        .expect("valid synthon");
    let mut attachments = vec![false; n_synthon];
    for &(a, b, _) in bonds.iter().skip(synthon_bonds.len()) {
        if a < n_synthon {
            attachments[a] = true;
        }
        if b < n_synthon {
            attachments[b] = true;
        }
    }
    (
        GrowState {
            mol: synthon_mol,
            attachments,
        },
        reactant,
    )
}

/// Independent validity filter used by the exhaustive decode oracle.
fn oracle_action_valid(state: &GrowState, first: usize, pick: &NodePick, bond: BondType) -> bool {
    let units = bond_units(bond);
    let headroom = |mol: &Molecule, i: usize| {
        let rec = mol.atom(i);
        capacity(rec.element, rec.charge)
            .saturating_sub(mol.bond_order_sum(i) + rec.hydrogens as u32)
    };
    if headroom(&state.mol, first) < units {
        return false;
    }
    match pick {
        NodePick::Existing(j) => {
            state.mol.bond(first, *j).is_none() && headroom(&state.mol, *j) >= units
        }
        NodePick::New(t) => {
            t.hydrogens as u32 + units <= capacity(t.element, t.charge)
        }
    }
}

/// Exhaustively enumerates every terminal graph reachable within
/// `max_steps` valid edits, scoring each with its best trace
/// log-likelihood (including the stop factor), ranked like the beam.
#[allow(clippy::too_many_arguments)]
pub fn exhaustive_decode(
    synthon: &GrowState,
    params: &TranslateParams,
    featurizer: &retrograph::molgraph::AtomFeaturizer,
    z: &[f64],
    max_steps: usize,
) -> Vec<(String, f64)> {
    let mut pool: std::collections::BTreeMap<String, f64> = std::collections::BTreeMap::new();
    fn walk(
        state: &GrowState,
        logprob: f64,
        depth: usize,
        max_steps: usize,
        params: &TranslateParams,
        featurizer: &retrograph::molgraph::AtomFeaturizer,
        z: &[f64],
        pool: &mut std::collections::BTreeMap<String, f64>,
    ) {
        let d = step_distributions(params, featurizer, state, z, None).expect("eval");
        let stop_score = logprob + d.stop[1].ln();
        let key = retrograph::molgraph::write_canonical(&state.mol);
        let entry = pool.entry(key).or_insert(f64::NEG_INFINITY);
        if stop_score > *entry {
            *entry = stop_score;
        }
        if depth == max_steps {
            return;
        }
        let n = state.n_atoms();
        let total = n + params.vocab.len();
        for first in 0..n {
            for second_ext in 0..total {
                if second_ext == first {
                    continue;
                }
                let pick = if second_ext < n {
                    NodePick::Existing(second_ext)
                } else {
                    NodePick::New(params.vocab[second_ext - n])
                };
                for b in 0..BOND_TYPES {
                    let bond = BondType::from_index(b).unwrap();
                    if !oracle_action_valid(state, first, &pick, bond) {
                        continue;
                    }
                    let p = d.stop[0].ln()
                        + d.first[first].ln()
                        + d.second[first][second_ext].ln()
                        + d.bond[first][second_ext][b].ln();
                    if !p.is_finite() {
                        continue;
                    }
                    let action = retrograph::translate::Action::Edit {
                        first,
                        second: pick,
                        bond,
                    };
                    let next = state.apply(&action).expect("valid action applies");
                    walk(
                        &next,
                        logprob + p,
                        depth + 1,
                        max_steps,
                        params,
                        featurizer,
                        z,
                        pool,
                    );
                }
            }
        }
    }
    walk(synthon, 0.0, 0, max_steps, params, featurizer, z, &mut pool);
    let mut out: Vec<(String, f64)> = pool.into_iter().collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
