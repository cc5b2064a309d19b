//! Supervision extraction: the edit set between a synthon and its
//! reactant, and the trace orderings over that edit set.
//!
//! Trace orderings come in two universes. `AllOrders` admits any
//! sequence in which each added bond touches the already-built graph
//! (the exact-marginal oracle). `BfsOrders` additionally requires new
//! atoms to materialize in breadth-first layers measured from the
//! synthon, which shrinks the universe during training. Sampling picks
//! uniformly among the addable oriented actions at every step.

use super::{Action, AtomTriple, GrowState, NodePick, TraceSample, TranslateError};
use crate::molgraph::{BondType, Molecule};
use rand::Rng;
use std::collections::BTreeSet;

/// Exact trace enumeration refuses edit sets larger than this.
pub const MAX_EXACT_EDITS: usize = 6;

/// One atom present in the reactant but not the synthon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NewAtom {
    /// Index of the atom in the reactant (stable reference).
    pub reactant_idx: usize,
    pub triple: AtomTriple,
}

/// Endpoint of a new bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndRef {
    /// Atom index in the synthon.
    Synthon(usize),
    /// Index into [`EditSet::new_atoms`].
    New(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NewBond {
    pub a: EndRef,
    pub b: EndRef,
    pub bond: BondType,
}

/// Everything the reactant has that the synthon lacks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EditSet {
    pub new_atoms: Vec<NewAtom>,
    pub new_bonds: Vec<NewBond>,
}

impl EditSet {
    /// Number of actions in any trace (one per new bond).
    pub fn len(&self) -> usize {
        self.new_bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_bonds.is_empty()
    }
}

/// Computes the edit set turning `synthon` into `reactant` under the
/// atom mapping. The synthon must embed into the reactant: every
/// synthon atom maps to a reactant atom with identical attributes and
/// every synthon bond exists there with the same type.
pub fn diff_edits(synthon: &Molecule, reactant: &Molecule) -> Result<EditSet, TranslateError> {
    let mut matched = vec![None; reactant.n_atoms()];
    let mut synthon_to_reactant = vec![0usize; synthon.n_atoms()];
    for (i, atom) in synthon.atoms().iter().enumerate() {
        let map = atom
            .map_num
            .ok_or(TranslateError::UnmappedSynthonAtom(i))?;
        let r = reactant
            .atom_by_map(map)
            .ok_or(TranslateError::MapMissingFromReactant(map))?;
        if reactant.atom(r).triple() != atom.triple() {
            return Err(TranslateError::AttributeMismatch { synthon_atom: i });
        }
        matched[r] = Some(i);
        synthon_to_reactant[i] = r;
    }
    for (a, b, t) in synthon.bonds() {
        let (ra, rb) = (synthon_to_reactant[a], synthon_to_reactant[b]);
        if reactant.bond(ra, rb) != Some(t) {
            return Err(TranslateError::BondMismatch(a, b));
        }
    }

    let new_atoms: Vec<NewAtom> = (0..reactant.n_atoms())
        .filter(|&r| matched[r].is_none())
        .map(|r| NewAtom {
            reactant_idx: r,
            triple: AtomTriple::of(reactant.atom(r)),
        })
        .collect();
    let new_index = |r: usize| new_atoms.iter().position(|a| a.reactant_idx == r);

    let mut new_bonds = Vec::new();
    for (ra, rb, t) in reactant.bonds() {
        let covered = match (matched[ra], matched[rb]) {
            (Some(sa), Some(sb)) => synthon.bond(sa, sb).is_some(),
            _ => false,
        };
        if covered {
            continue;
        }
        let end = |r: usize| match matched[r] {
            Some(s) => EndRef::Synthon(s),
            None => EndRef::New(new_index(r).expect("unmatched atoms are new")),
        };
        new_bonds.push(NewBond {
            a: end(ra),
            b: end(rb),
            bond: t,
        });
    }

    let edits = EditSet {
        new_atoms,
        new_bonds,
    };
    check_connected(synthon.n_atoms(), &edits)?;
    Ok(edits)
}

/// Every new atom must be reachable from the synthon through new
/// bonds, otherwise no trace can build it.
fn check_connected(_n_synthon: usize, edits: &EditSet) -> Result<(), TranslateError> {
    let mut reach = vec![false; edits.new_atoms.len()];
    let mut changed = true;
    while changed {
        changed = false;
        for b in &edits.new_bonds {
            let ok_a = match b.a {
                EndRef::Synthon(_) => true,
                EndRef::New(i) => reach[i],
            };
            let ok_b = match b.b {
                EndRef::Synthon(_) => true,
                EndRef::New(i) => reach[i],
            };
            if ok_a || ok_b {
                for end in [b.a, b.b] {
                    if let EndRef::New(i) = end {
                        if !reach[i] {
                            reach[i] = true;
                            changed = true;
                        }
                    }
                }
            }
        }
    }
    if reach.iter().all(|&r| r) {
        Ok(())
    } else {
        Err(TranslateError::DisconnectedEdits)
    }
}

/// Breadth-first layer of each new atom: distance from the synthon
/// through new bonds.
fn bfs_layers(edits: &EditSet) -> Vec<usize> {
    let mut layer = vec![usize::MAX; edits.new_atoms.len()];
    let mut frontier: Vec<usize> = Vec::new();
    for b in &edits.new_bonds {
        for (x, y) in [(b.a, b.b), (b.b, b.a)] {
            if let (EndRef::Synthon(_), EndRef::New(i)) = (x, y) {
                if layer[i] != 1 {
                    layer[i] = 1;
                    frontier.push(i);
                }
            }
        }
    }
    let mut depth = 1;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for b in &edits.new_bonds {
            if let (EndRef::New(i), EndRef::New(j)) = (b.a, b.b) {
                for (from, to) in [(i, j), (j, i)] {
                    if layer[from] < depth && layer[to] == usize::MAX {
                        layer[to] = depth;
                        next.push(to);
                    }
                }
            }
        }
        frontier = next;
    }
    layer
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// Every connected-growth ordering.
    AllOrders,
    /// Orderings whose new atoms materialize in BFS-layer order.
    BfsOrders,
}

struct Walk<'a> {
    edits: &'a EditSet,
    layers: Vec<usize>,
    mode: TraceMode,
    /// Growing-graph index of each materialized new atom.
    place: Vec<Option<usize>>,
    added: Vec<bool>,
    n_current: usize,
}

impl<'a> Walk<'a> {
    fn new(n_synthon: usize, edits: &'a EditSet, mode: TraceMode) -> Self {
        Walk {
            edits,
            layers: bfs_layers(edits),
            mode,
            place: vec![None; edits.new_atoms.len()],
            added: vec![false; edits.new_bonds.len()],
            n_current: n_synthon,
        }
    }

    fn grow_index(&self, end: EndRef) -> Option<usize> {
        match end {
            EndRef::Synthon(i) => Some(i),
            EndRef::New(i) => self.place[i],
        }
    }

    fn min_pending_layer(&self) -> Option<usize> {
        self.place
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(i, _)| self.layers[i])
            .min()
    }

    /// Addable oriented actions with the edit bond they consume.
    fn addable(&self) -> Vec<(usize, Action)> {
        let min_layer = self.min_pending_layer();
        let mut out = Vec::new();
        for (bi, b) in self.edits.new_bonds.iter().enumerate() {
            if self.added[bi] {
                continue;
            }
            match (self.grow_index(b.a), self.grow_index(b.b)) {
                (Some(x), Some(y)) => {
                    for (first, second) in [(x, y), (y, x)] {
                        out.push((
                            bi,
                            Action::Edit {
                                first,
                                second: NodePick::Existing(second),
                                bond: b.bond,
                            },
                        ));
                    }
                }
                (Some(x), None) | (None, Some(x)) => {
                    let new_end = if self.grow_index(b.a).is_none() { b.a } else { b.b };
                    let EndRef::New(j) = new_end else { unreachable!() };
                    if self.mode == TraceMode::BfsOrders && Some(self.layers[j]) != min_layer {
                        continue;
                    }
                    out.push((
                        bi,
                        Action::Edit {
                            first: x,
                            second: NodePick::New(self.edits.new_atoms[j].triple),
                            bond: b.bond,
                        },
                    ));
                }
                (None, None) => {}
            }
        }
        out
    }

    fn apply(&mut self, bond_idx: usize, action: &Action) {
        self.added[bond_idx] = true;
        if let Action::Edit {
            second: NodePick::New(_),
            ..
        } = action
        {
            let b = &self.edits.new_bonds[bond_idx];
            for end in [b.a, b.b] {
                if let EndRef::New(j) = end {
                    if self.place[j].is_none() {
                        self.place[j] = Some(self.n_current);
                        self.n_current += 1;
                    }
                }
            }
        }
    }

    fn done(&self) -> bool {
        self.added.iter().all(|&a| a)
    }
}

/// Enumerates every distinct trace (action sequence ending in stop)
/// under the given universe. Refuses edit sets beyond
/// [`MAX_EXACT_EDITS`].
pub fn enumerate_traces(
    synthon: &GrowState,
    edits: &EditSet,
    mode: TraceMode,
) -> Result<Vec<Vec<Action>>, TranslateError> {
    if edits.len() > MAX_EXACT_EDITS {
        return Err(TranslateError::TooManyEdits {
            got: edits.len(),
            limit: MAX_EXACT_EDITS,
        });
    }
    let mut walk = Walk::new(synthon.n_atoms(), edits, mode);
    let mut prefix = Vec::new();
    let mut sequences = BTreeSet::new();
    recurse(&mut walk, &mut prefix, &mut sequences);
    Ok(sequences.into_iter().collect())
}

fn recurse(walk: &mut Walk, prefix: &mut Vec<Action>, out: &mut BTreeSet<Vec<Action>>) {
    if walk.done() {
        let mut seq = prefix.clone();
        seq.push(Action::Stop);
        out.insert(seq);
        return;
    }
    for (bond_idx, action) in walk.addable() {
        let saved_place = walk.place.clone();
        let saved_n = walk.n_current;
        walk.apply(bond_idx, &action);
        prefix.push(action);
        recurse(walk, prefix, out);
        prefix.pop();
        walk.added[bond_idx] = false;
        walk.place = saved_place;
        walk.n_current = saved_n;
    }
}

/// Samples one BFS-restricted trace, choosing uniformly among the
/// addable oriented actions at each step.
pub fn sample_trace(synthon: &GrowState, edits: &EditSet, rng: &mut impl Rng) -> TraceSample {
    let mut walk = Walk::new(synthon.n_atoms(), edits, TraceMode::BfsOrders);
    let mut actions = Vec::with_capacity(edits.len() + 1);
    let mut logq = 0.0;
    while !walk.done() {
        let options = walk.addable();
        debug_assert!(!options.is_empty(), "connected edit sets always progress");
        let (bond_idx, action) = options[rng.random_range(0..options.len())];
        logq -= (options.len() as f64).ln();
        walk.apply(bond_idx, &action);
        actions.push(action);
    }
    actions.push(Action::Stop);
    TraceSample {
        start: synthon.clone(),
        actions,
        proposal_logprob: logq,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state_of(smiles: &str) -> GrowState {
        GrowState::from_molecule(&parse_smiles(smiles).unwrap())
    }

    #[test]
    fn identical_graphs_have_empty_edits() {
        let s = parse_smiles("[CH3:1][OH:2]").unwrap();
        let edits = diff_edits(&s, &s).unwrap();
        assert!(edits.is_empty());
        assert!(edits.new_atoms.is_empty());
    }

    #[test]
    fn halide_addition_is_one_atom_one_bond() {
        let s = parse_smiles("[CH3:1]").unwrap();
        let g = parse_smiles("[CH3:1]Br").unwrap();
        let edits = diff_edits(&s, &g).unwrap();
        assert_eq!(edits.new_atoms.len(), 1);
        assert_eq!(edits.new_bonds.len(), 1);
        assert_eq!(
            edits.new_atoms[0].triple.element,
            crate::molgraph::Element::Br
        );
        assert_eq!(edits.new_bonds[0].bond, BondType::Single);
    }

    #[test]
    fn ring_closure_is_zero_atoms_one_bond() {
        let s = parse_smiles("[CH2:1][CH2:2][CH2:3]").unwrap();
        let g = parse_smiles("[CH2:1]1[CH2:2][CH2:3]1").unwrap();
        let edits = diff_edits(&s, &g).unwrap();
        assert!(edits.new_atoms.is_empty());
        assert_eq!(edits.new_bonds.len(), 1);
        assert!(matches!(edits.new_bonds[0].a, EndRef::Synthon(_)));
    }

    #[test]
    fn attribute_mismatch_rejected() {
        let s = parse_smiles("[OH:1]").unwrap();
        let g = parse_smiles("[OH2:1]").unwrap();
        assert!(matches!(
            diff_edits(&s, &g),
            Err(TranslateError::AttributeMismatch { .. })
        ));
    }

    #[test]
    fn bond_type_mismatch_rejected() {
        let s = parse_smiles("[CH2:1]=[CH2:2]").unwrap();
        let g = parse_smiles("[CH2:1][CH2:2]").unwrap();
        assert!(matches!(
            diff_edits(&s, &g),
            Err(TranslateError::BondMismatch(_, _))
        ));
    }

    #[test]
    fn empty_edit_set_has_the_stop_trace_only() {
        let s = state_of("[CH3:1][OH:2]");
        let traces = enumerate_traces(&s, &EditSet::default(), TraceMode::AllOrders).unwrap();
        assert_eq!(traces, vec![vec![Action::Stop]]);
    }

    #[test]
    fn chain_respects_bfs_order() {
        // synthon C:1, reactant C:1-O-S: the O (layer 1) must always
        // materialize before the S (layer 2)
        let s = state_of("[CH3:1]");
        let g = parse_smiles("[CH3:1]OS").unwrap();
        let edits = diff_edits(&s.mol, &g).unwrap();
        let traces = enumerate_traces(&s, &edits, TraceMode::BfsOrders).unwrap();
        assert_eq!(traces.len(), 1);
        let expected = [
            Action::Edit {
                first: 0,
                second: NodePick::New(AtomTriple {
                    element: crate::molgraph::Element::O,
                    charge: 0,
                    hydrogens: 0,
                }),
                bond: BondType::Single,
            },
            Action::Edit {
                first: 1,
                second: NodePick::New(AtomTriple {
                    element: crate::molgraph::Element::S,
                    charge: 0,
                    hydrogens: 0,
                }),
                bond: BondType::Single,
            },
            Action::Stop,
        ];
        assert_eq!(traces[0], expected);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t = sample_trace(&s, &edits, &mut rng);
            assert_eq!(t.actions, expected);
            assert!((t.proposal_logprob - 0.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_edits_enumerate_all_permutations() {
        // two different halides off the same carbon: 2 orderings
        let s = state_of("[CH2:1]");
        let g = parse_smiles("[CH2:1](Br)Cl").unwrap();
        let edits = diff_edits(&s.mol, &g).unwrap();
        let all = enumerate_traces(&s, &edits, TraceMode::AllOrders).unwrap();
        assert_eq!(all.len(), 2);
        let bfs = enumerate_traces(&s, &edits, TraceMode::BfsOrders).unwrap();
        assert_eq!(bfs.len(), 2);
    }

    #[test]
    fn bfs_restriction_shrinks_the_universe() {
        // reactant: C:1(-O-S)(-Br): orders where the layer-2 sulfur
        // precedes the layer-1 bromine are connected-growth legal but
        // not BFS legal
        let s = state_of("[CH2:1]");
        let g = parse_smiles("[CH2:1](OS)Br").unwrap();
        let edits = diff_edits(&s.mol, &g).unwrap();
        let all = enumerate_traces(&s, &edits, TraceMode::AllOrders).unwrap();
        let bfs = enumerate_traces(&s, &edits, TraceMode::BfsOrders).unwrap();
        assert!(bfs.len() < all.len(), "{} vs {}", bfs.len(), all.len());
        // all BFS traces are within the full universe
        for t in &bfs {
            assert!(all.contains(t));
        }
    }

    #[test]
    fn duplicate_actions_are_not_double_counted() {
        // two bromines on one carbon: both edit orders give the same
        // action sequence, which must appear once
        let s = state_of("[CH2:1]");
        let g = parse_smiles("[CH2:1](Br)Br").unwrap();
        let edits = diff_edits(&s.mol, &g).unwrap();
        let traces = enumerate_traces(&s, &edits, TraceMode::AllOrders).unwrap();
        assert_eq!(traces.len(), 1);
    }

    #[test]
    fn sampler_is_uniform_over_independent_edits() {
        // three distinct single-atom edits: 3! = 6 equally likely
        // orders; chi-square over 1200 draws at p > 0.01 (df = 5)
        let s = state_of("[CH:1]");
        let g = parse_smiles("[CH:1](F)(Cl)Br").unwrap();
        let edits = diff_edits(&s.mol, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = std::collections::HashMap::new();
        let draws = 1200;
        for _ in 0..draws {
            let t = sample_trace(&s, &edits, &mut rng);
            assert!((t.proposal_logprob - (6.0f64).recip().ln()).abs() < 1e-12);
            *counts.entry(t.actions.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 0.99 quantile of chi-square with 5 degrees of freedom
        assert!(chi2 < 15.086, "chi-square statistic {chi2}");
    }

    #[test]
    fn oversized_edit_sets_are_refused() {
        let s = state_of("[CH:1]");
        let mut edits = EditSet::default();
        for i in 0..7 {
            edits.new_atoms.push(NewAtom {
                reactant_idx: i + 1,
                triple: AtomTriple {
                    element: crate::molgraph::Element::C,
                    charge: 0,
                    hydrogens: 3,
                },
            });
            edits.new_bonds.push(NewBond {
                a: EndRef::Synthon(0),
                b: EndRef::New(i),
                bond: BondType::Single,
            });
        }
        assert!(matches!(
            enumerate_traces(&s, &edits, TraceMode::AllOrders),
            Err(TranslateError::TooManyEdits { .. })
        ));
    }

    #[test]
    fn replay_reproduces_the_reactant() {
        let s = state_of("[CH2:1][CH2:2]");
        let g = parse_smiles("[CH2:1]1[CH2:2]CO1").unwrap();
        let edits = diff_edits(&s.mol, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let t = sample_trace(&s, &edits, &mut rng);
            let grown = t.replay().unwrap();
            assert_eq!(
                crate::molgraph::write_canonical(&grown.mol),
                crate::molgraph::write_canonical(&g)
            );
        }
    }
}
