//! Beam-search generation of reactants from a synthon.
//!
//! One latent code is drawn from the standard-normal prior per call.
//! Each step ranks every action of every live candidate — the stop
//! action by its own probability, edit actions by the product of the
//! continue, node and bond factors — keeps the top `k` valid actions
//! per candidate, then the top `k` resulting graphs overall. Branches
//! that pick stop (or run out of steps, in which case the stop factor
//! at the final state is charged) move into the terminal pool with
//! their accumulated trace log-likelihood. Terminal duplicates
//! collapse onto the best-scoring trace.

use super::model::step_distributions;
use super::{Action, GrowState, NodePick, TranslateError, TranslateParams};
use crate::center::Synthon;
use crate::molgraph::{bond_units, capacity, AtomFeaturizer, BondType, Molecule};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

struct Branch {
    state: GrowState,
    logprob: f64,
}

/// True when adding this bond keeps both endpoints within valence
/// capacity and does not duplicate an existing bond.
fn action_valid(state: &GrowState, first: usize, pick: &NodePick, bond: BondType) -> bool {
    let units = bond_units(bond);
    let fits = |i: usize| {
        let rec = state.mol.atom(i);
        state.mol.bond_order_sum(i) + rec.hydrogens as u32 + units
            <= capacity(rec.element, rec.charge)
    };
    if !fits(first) {
        return false;
    }
    match pick {
        NodePick::Existing(j) => state.mol.bond(first, *j).is_none() && fits(*j),
        NodePick::New(t) => t.hydrogens as u32 + units <= capacity(t.element, t.charge),
    }
}

/// Generates up to `beam_size` reactant candidates for a synthon,
/// ranked by descending accumulated log-likelihood. Every returned
/// molecule satisfies the valence rules by construction.
pub fn beam_generate(
    synthon: &Synthon,
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    beam_size: usize,
    max_steps: usize,
    class_id: Option<u8>,
    rng: &mut impl Rng,
) -> Result<Vec<(Molecule, f64)>, TranslateError> {
    params.check_class(class_id)?;
    let beam_size = beam_size.max(1);
    let z: Vec<f64> = (0..params.latent_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();

    let mut live = vec![Branch {
        state: GrowState::from_synthon(synthon),
        logprob: 0.0,
    }];
    // canonical form -> (molecule, best score)
    let mut pool: BTreeMap<String, (Molecule, f64)> = BTreeMap::new();
    let settle = |pool: &mut BTreeMap<String, (Molecule, f64)>, mol: Molecule, score: f64| {
        let key = crate::molgraph::write_canonical(&mol);
        match pool.get_mut(&key) {
            Some(entry) if entry.1 >= score => {}
            Some(entry) => *entry = (mol, score),
            None => {
                pool.insert(key, (mol, score));
            }
        }
    };

    for _ in 0..max_steps {
        if live.is_empty() {
            break;
        }
        let mut children: Vec<Branch> = Vec::new();
        for branch in &live {
            let d = step_distributions(params, featurizer, &branch.state, &z, class_id)?;
            let n = branch.state.n_atoms();
            let total = n + params.vocab.len();

            let mut scored: Vec<(f64, Action)> = Vec::new();
            if d.stop[1] > 0.0 {
                scored.push((branch.logprob + d.stop[1].ln(), Action::Stop));
            }
            let ln_cont = d.stop[0].ln();
            for first in 0..n {
                if d.first[first] == 0.0 {
                    continue;
                }
                let ln_first = d.first[first].ln();
                for second_ext in 0..total {
                    if second_ext == first || d.second[first][second_ext] == 0.0 {
                        continue;
                    }
                    let pick = if second_ext < n {
                        NodePick::Existing(second_ext)
                    } else {
                        NodePick::New(params.vocab[second_ext - n])
                    };
                    let ln_second = d.second[first][second_ext].ln();
                    for b in 0..crate::molgraph::BOND_TYPES {
                        let bond = BondType::from_index(b).unwrap();
                        if !action_valid(&branch.state, first, &pick, bond) {
                            continue;
                        }
                        let p = d.bond[first][second_ext][b];
                        if p == 0.0 {
                            continue;
                        }
                        scored.push((
                            branch.logprob + ln_cont + ln_first + ln_second + p.ln(),
                            Action::Edit {
                                first,
                                second: pick,
                                bond,
                            },
                        ));
                    }
                }
            }
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            for (score, action) in scored.into_iter().take(beam_size) {
                match action {
                    Action::Stop => settle(&mut pool, branch.state.mol.clone(), score),
                    edit => children.push(Branch {
                        state: branch.state.apply(&edit)?,
                        logprob: score,
                    }),
                }
            }
        }
        children.sort_by(|a, b| b.logprob.partial_cmp(&a.logprob).unwrap());
        children.truncate(beam_size);
        live = children;
    }

    // step budget exhausted: charge the stop factor and pool what's left
    for branch in live {
        let d = step_distributions(params, featurizer, &branch.state, &z, class_id)?;
        let score = branch.logprob + d.stop[1].ln();
        settle(&mut pool, branch.state.mol, score);
    }

    let mut out: Vec<(String, Molecule, f64)> = pool
        .into_iter()
        .map(|(key, (mol, score))| (key, mol, score))
        .collect();
    out.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then_with(|| a.0.cmp(&b.0)));
    out.truncate(beam_size);
    Ok(out.into_iter().map(|(_, mol, score)| (mol, score)).collect())
}
