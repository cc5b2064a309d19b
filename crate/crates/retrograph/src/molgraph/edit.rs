//! Graph surgery: bond removal and connected components.

use super::{GraphError, Molecule};

/// Returns a copy of `mol` with the listed bonds cleared. Atom indices
/// and attributes are untouched; every pair must currently be bonded.
pub fn remove_bonds(mol: &Molecule, pairs: &[(usize, usize)]) -> Result<Molecule, GraphError> {
    for &(a, b) in pairs {
        if a >= mol.n_atoms() || b >= mol.n_atoms() {
            return Err(GraphError::AtomOutOfRange {
                index: a.max(b),
                len: mol.n_atoms(),
            });
        }
        if mol.bond(a, b).is_none() {
            return Err(GraphError::PairNotBonded(a, b));
        }
    }
    let keep: Vec<(usize, usize, super::BondType)> = mol
        .bonds()
        .into_iter()
        .filter(|&(a, b, _)| {
            !pairs
                .iter()
                .any(|&(x, y)| (x, y) == (a, b) || (y, x) == (a, b))
        })
        .collect();
    Ok(Molecule::from_parts(mol.atoms().to_vec(), &keep).expect("filtered bonds stay valid"))
}

/// Splits a molecule into connected components. Each component comes
/// with the map from its local atom indices back to the parent's.
pub fn connected_components(mol: &Molecule) -> Vec<(Molecule, Vec<usize>)> {
    let n = mol.n_atoms();
    let mut component = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let mut queue = vec![start];
        component[start] = count;
        while let Some(u) = queue.pop() {
            for (v, _) in mol.neighbors(u) {
                if component[v] == usize::MAX {
                    component[v] = count;
                    queue.push(v);
                }
            }
        }
        count += 1;
    }

    let mut out = Vec::with_capacity(count);
    for c in 0..count {
        let members: Vec<usize> = (0..n).filter(|&i| component[i] == c).collect();
        let mut local = vec![usize::MAX; n];
        for (li, &gi) in members.iter().enumerate() {
            local[gi] = li;
        }
        let atoms = members.iter().map(|&i| mol.atom(i).clone()).collect();
        let bonds: Vec<(usize, usize, super::BondType)> = mol
            .bonds()
            .into_iter()
            .filter(|&(a, _, _)| component[a] == c)
            .map(|(a, b, t)| (local[a], local[b], t))
            .collect();
        let sub = Molecule::from_parts(atoms, &bonds).expect("component bonds stay valid");
        out.push((sub, members));
    }
    out
}
