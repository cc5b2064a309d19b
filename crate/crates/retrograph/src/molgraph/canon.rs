//! Canonical atom ranking and canonical SMILES output.
//!
//! Ranks come from iterative neighborhood refinement over (element,
//! charge, hydrogen count, degree, bond-type multiset), the classic
//! connectivity-index approach. When refinement leaves a class with
//! several members, one member is individualized and the search
//! recurses; the candidate yielding the lexicographically smallest
//! serialization wins. Atom-map numbers never participate, and the
//! canonical string omits them, so mapped and unmapped copies of a
//! molecule canonicalize identically.
//!
//! Canonical output is the comparison key for exact-match evaluation;
//! it is internally consistent but makes no attempt to agree with any
//! external toolkit.

use super::edit::connected_components;
use super::{AtomRecord, BondType, Molecule};

/// Canonical rank per atom: a permutation of `0..n` that depends only
/// on graph structure and atom attributes, never on input order.
pub fn canonical_ranks(mol: &Molecule) -> Vec<usize> {
    canonicalize(mol).0
}

/// Canonical SMILES of the molecule. Components are serialized
/// independently and joined with `.` in sorted order.
pub fn write_canonical(mol: &Molecule) -> String {
    canonicalize(mol).1
}

fn canonicalize(mol: &Molecule) -> (Vec<usize>, String) {
    let comps = connected_components(mol);
    let mut pieces: Vec<(String, Vec<usize>, Vec<usize>)> = comps
        .into_iter()
        .map(|(sub, members)| {
            let (ranks, text) = canonical_component(&sub);
            (text, ranks, members)
        })
        .collect();
    pieces.sort_by(|a, b| a.0.cmp(&b.0));

    let mut ranks = vec![0usize; mol.n_atoms()];
    let mut offset = 0;
    let mut texts = Vec::with_capacity(pieces.len());
    for (text, local_ranks, members) in pieces {
        for (local, &global) in members.iter().enumerate() {
            ranks[global] = offset + local_ranks[local];
        }
        offset += members.len();
        texts.push(text);
    }
    (ranks, texts.join("."))
}

fn canonical_component(mol: &Molecule) -> (Vec<usize>, String) {
    let classes = initial_classes(mol);
    let (classes, text) = search(mol, classes);
    (normalize(&classes), text)
}

type Key = (u8, i8, u8, usize, Vec<u8>);

fn initial_classes(mol: &Molecule) -> Vec<usize> {
    let keys: Vec<Key> = (0..mol.n_atoms())
        .map(|i| {
            let a: &AtomRecord = mol.atom(i);
            let mut bonds: Vec<u8> = mol.neighbors(i).map(|(_, t)| t.index() as u8).collect();
            bonds.sort_unstable();
            (a.element as u8, a.charge, a.hydrogens, mol.degree(i), bonds)
        })
        .collect();
    index_by_sorted(&keys)
}

fn index_by_sorted<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).unwrap())
        .collect()
}

fn refine(mol: &Molecule, classes: &mut Vec<usize>) {
    loop {
        let before = distinct(classes);
        let keys: Vec<(usize, Vec<(u8, usize)>)> = (0..mol.n_atoms())
            .map(|i| {
                let mut nbr: Vec<(u8, usize)> = mol
                    .neighbors(i)
                    .map(|(j, t)| (t.index() as u8, classes[j]))
                    .collect();
                nbr.sort_unstable();
                (classes[i], nbr)
            })
            .collect();
        *classes = index_by_sorted(&keys);
        if distinct(classes) == before {
            return;
        }
    }
}

fn distinct(classes: &[usize]) -> usize {
    let mut seen = classes.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

fn search(mol: &Molecule, mut classes: Vec<usize>) -> (Vec<usize>, String) {
    refine(mol, &mut classes);
    let n = mol.n_atoms();
    if distinct(&classes) == n {
        let text = write_component(mol, &classes);
        return (classes, text);
    }
    // individualize each member of the lowest tied class; the smallest
    // resulting serialization is canonical
    let tied_class = (0..n)
        .map(|i| classes[i])
        .filter(|&c| classes.iter().filter(|&&x| x == c).count() > 1)
        .min()
        .expect("a non-singleton class exists");
    let mut best: Option<(Vec<usize>, String)> = None;
    for atom in 0..n {
        if classes[atom] != tied_class {
            continue;
        }
        let mut bumped: Vec<usize> = classes.iter().map(|&c| c * 2 + 2).collect();
        bumped[atom] -= 1;
        let candidate = search(mol, bumped);
        let better = match &best {
            None => true,
            Some((_, text)) => candidate.1 < *text,
        };
        if better {
            best = Some(candidate);
        }
    }
    best.expect("tied class was non-empty")
}

fn normalize(classes: &[usize]) -> Vec<usize> {
    index_by_sorted(classes)
}

/// Serializes one connected component from discrete classes.
fn write_component(mol: &Molecule, classes: &[usize]) -> String {
    let n = mol.n_atoms();
    let lower: Vec<bool> = (0..n)
        .map(|i| {
            mol.atom(i).element.supports_aromatic()
                && mol.neighbors(i).any(|(_, t)| t == BondType::Aromatic)
        })
        .collect();

    let root = (0..n).min_by_key(|&i| classes[i]).expect("nonempty component");

    // spanning DFS in class order; non-tree edges become ring closures
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ring_bonds: Vec<(usize, usize)> = Vec::new();
    let mut stack = vec![(root, usize::MAX)];
    visited[root] = true;
    // iterative pre-order with explicit neighbor ordering
    while let Some((u, parent)) = stack.pop() {
        let mut nbrs: Vec<usize> = mol.neighbors(u).map(|(j, _)| j).collect();
        nbrs.sort_by_key(|&j| classes[j]);
        for &v in &nbrs {
            if v == parent {
                continue;
            }
            if visited[v] {
                let key = (u.min(v), u.max(v));
                if !ring_bonds.contains(&key) {
                    ring_bonds.push(key);
                }
            } else {
                visited[v] = true;
                children[u].push(v);
                stack.push((v, u));
            }
        }
    }
    // the stack-based traversal visits children before exploring them,
    // which matches the emission order below (children in class order)

    let mut writer = ComponentWriter {
        mol,
        classes,
        lower: &lower,
        ring_bonds: &ring_bonds,
        open: Vec::new(),
        used_digits: vec![false; 100],
        out: String::new(),
    };
    writer.emit(root, &children);
    writer.out
}

struct ComponentWriter<'a> {
    mol: &'a Molecule,
    classes: &'a [usize],
    lower: &'a [bool],
    ring_bonds: &'a [(usize, usize)],
    open: Vec<((usize, usize), u16)>,
    used_digits: Vec<bool>,
    out: String,
}

impl<'a> ComponentWriter<'a> {
    fn default_bond(&self, a: usize, b: usize) -> BondType {
        if self.lower[a] && self.lower[b] {
            BondType::Aromatic
        } else {
            BondType::Single
        }
    }

    fn bond_prefix(&mut self, a: usize, b: usize) {
        let t = self.mol.bond(a, b).expect("edge exists");
        if t != self.default_bond(a, b) {
            self.out.push(t.symbol());
        }
    }

    fn alloc_digit(&mut self) -> u16 {
        for d in 1..100 {
            if !self.used_digits[d] {
                self.used_digits[d] = true;
                return d as u16;
            }
        }
        panic!("more than 99 concurrently open ring closures");
    }

    fn push_digit(&mut self, d: u16) {
        if d < 10 {
            self.out.push(char::from(b'0' + d as u8));
        } else {
            self.out.push('%');
            self.out.push(char::from(b'0' + (d / 10) as u8));
            self.out.push(char::from(b'0' + (d % 10) as u8));
        }
    }

    fn emit(&mut self, u: usize, children: &[Vec<usize>]) {
        self.out.push_str(&atom_token(self.mol.atom(u), self.lower[u]));

        // ring closures at this atom, ordered by partner class
        let mut partners: Vec<usize> = self
            .ring_bonds
            .iter()
            .filter(|&&(a, b)| a == u || b == u)
            .map(|&(a, b)| if a == u { b } else { a })
            .collect();
        partners.sort_by_key(|&v| self.classes[v]);
        for v in partners {
            let key = (u.min(v), u.max(v));
            if let Some(slot) = self.open.iter().position(|(k, _)| *k == key) {
                let (_, d) = self.open.remove(slot);
                self.used_digits[d as usize] = false;
                self.push_digit(d);
            } else {
                let d = self.alloc_digit();
                self.open.push((key, d));
                self.bond_prefix(u, v);
                self.push_digit(d);
            }
        }

        let kids = &children[u];
        for (pos, &c) in kids.iter().enumerate() {
            let last = pos + 1 == kids.len();
            if !last {
                self.out.push('(');
            }
            self.bond_prefix(u, c);
            self.emit(c, children);
            if !last {
                self.out.push(')');
            }
        }
    }
}

fn atom_token(rec: &AtomRecord, lowercase: bool) -> String {
    let sym = if lowercase {
        rec.element.symbol().to_lowercase()
    } else {
        rec.element.symbol().to_string()
    };
    if rec.charge == 0 && rec.hydrogens == 0 {
        return sym;
    }
    let mut t = format!("[{sym}");
    if rec.hydrogens > 0 {
        t.push('H');
        if rec.hydrogens > 1 {
            t.push(char::from(b'0' + rec.hydrogens));
        }
    }
    match rec.charge {
        0 => {}
        1 => t.push('+'),
        -1 => t.push('-'),
        c if c > 0 => t.push_str(&format!("+{c}")),
        c => t.push_str(&format!("{c}")),
    }
    t.push(']');
    t
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;

    #[test]
    fn single_carbon_is_c() {
        let mol = parse_smiles("C").unwrap();
        assert_eq!(write_canonical(&mol), "C");
        assert_eq!(canonical_ranks(&mol), vec![0]);
    }

    #[test]
    fn permuted_inputs_canonicalize_identically() {
        let a = parse_smiles("CCO").unwrap();
        let b = parse_smiles("OCC").unwrap();
        assert_eq!(write_canonical(&a), write_canonical(&b));

        let a = parse_smiles("CC(=O)OC").unwrap();
        let b = parse_smiles("COC(C)=O").unwrap();
        assert_eq!(write_canonical(&a), write_canonical(&b));
    }

    #[test]
    fn linear_heteroatom_chain_has_distinct_ranks() {
        let mol = parse_smiles("CNO").unwrap();
        let ranks = canonical_ranks(&mol);
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn symmetric_ring_resolves_ties() {
        let mol = parse_smiles("C1CC1").unwrap();
        let ranks = canonical_ranks(&mol);
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
        let text = write_canonical(&mol);
        assert_eq!(parse_and_rewrite(&text), text);
    }

    #[test]
    fn round_trip_is_stable() {
        for s in [
            "CC(=O)OC",
            "c1ccccc1",
            "Cc1ccc(O)cc1",
            "[NH4+].[O-]C(=O)C",
            "C1CC2CCC1CC2",
            "BrCCl",
            "[CH3:7][OH:2]",
            "N#Cc1ccccc1",
            "C%10CCCC%10",
        ] {
            let mol = parse_smiles(s).unwrap();
            let canon = write_canonical(&mol);
            assert_eq!(parse_and_rewrite(&canon), canon, "unstable for {s}");
        }
    }

    #[test]
    fn maps_are_omitted_from_canonical_output() {
        let mapped = parse_smiles("[CH3:1][OH:2]").unwrap();
        let plain = parse_smiles("[CH3][OH]").unwrap();
        assert_eq!(write_canonical(&mapped), write_canonical(&plain));
        assert!(!write_canonical(&mapped).contains(':'));
    }

    #[test]
    fn component_order_is_sorted() {
        let a = parse_smiles("O.CC").unwrap();
        let b = parse_smiles("CC.O").unwrap();
        assert_eq!(write_canonical(&a), write_canonical(&b));
    }

    #[test]
    fn aromatic_single_bond_between_rings_is_explicit() {
        let mol = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
        let canon = write_canonical(&mol);
        assert!(canon.contains('-'), "biphenyl bridge must stay single: {canon}");
        assert_eq!(parse_and_rewrite(&canon), canon);
    }

    fn parse_and_rewrite(s: &str) -> String {
        write_canonical(&parse_smiles(s).unwrap())
    }
}
