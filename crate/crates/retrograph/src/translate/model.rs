//! Head wiring and the translation likelihoods.
//!
//! Every step evaluates the encoder on the extended graph: the current
//! state plus one isolated atom per vocabulary entry. The termination
//! head reads the state's graph embedding; the node heads score rows
//! of the extended embedding with the state embedding and the latent
//! code concatenated in; the bond head sees both chosen nodes. Masks
//! keep the first node among existing atoms and bar the second node
//! from repeating the first. The latent code, and the optional class
//! embedding, are concatenated into every head input.

use super::edits::{diff_edits, enumerate_traces, sample_trace, EditSet, TraceMode};
use super::{Action, GrowState, NodePick, TraceSample, TranslateError, TranslateParams};
use crate::molgraph::{AtomFeaturizer, Molecule, BOND_TYPES};
use crate::numcore::{softmax, BoundParams, NodeId, NumError, Tape, Tensor2};
use crate::rgcn::{encode_on_tape, readout_on_tape};
use rand::Rng;
use rand_distr::StandardNormal;

const LOGVAR_CLAMP: f64 = 10.0;

/// Extended graph: the state atoms followed by one isolated atom per
/// vocabulary entry, with the attachment flag column.
fn extended_inputs(
    featurizer: &AtomFeaturizer,
    state: &GrowState,
    params: &TranslateParams,
) -> Result<(Molecule, Tensor2), TranslateError> {
    let mut atoms = state.mol.atoms().to_vec();
    atoms.extend(params.vocab.iter().map(|t| t.record()));
    let ext = Molecule::from_parts(atoms, &state.mol.bonds())?;
    let mut flags = state.attachments.clone();
    flags.resize(ext.n_atoms(), false);
    let features = featurizer.features_with_flags(&ext, Some(&flags))?;
    Ok((ext, features))
}

/// Per-step network state on a tape.
struct StepNet {
    n: usize,
    m: usize,
    h: NodeId,       // (n+m) x k
    h_state: NodeId, // 1 x k
    z: NodeId,       // 1 x z
    class_row: Option<NodeId>,
}

impl StepNet {
    fn build(
        tape: &mut Tape,
        bound: &mut BoundParams,
        params: &TranslateParams,
        featurizer: &AtomFeaturizer,
        state: &GrowState,
        z: NodeId,
        class_row: Option<usize>,
    ) -> Result<Self, TranslateError> {
        let (ext, features) = extended_inputs(featurizer, state, params)?;
        let n = state.n_atoms();
        let m = params.vocab.len();
        let h = encode_on_tape(tape, bound, "translate.enc", &params.encoder, &ext, features)?;
        let mut selector = vec![true; n];
        selector.resize(n + m, false);
        let h_state = readout_on_tape(tape, h, &selector)?;
        let class_row = match class_row {
            None => None,
            Some(row) => {
                let table = bound.bind(
                    tape,
                    "translate.class_embed",
                    params.class_embed.as_ref().expect("conditioning checked"),
                );
                Some(tape.gather_rows(table, vec![row])?)
            }
        };
        Ok(StepNet {
            n,
            m,
            h,
            h_state,
            z,
            class_row,
        })
    }

    fn replicate(&self, tape: &mut Tape, row: NodeId, count: usize) -> Result<NodeId, NumError> {
        tape.gather_rows(row, vec![0; count])
    }

    /// Appends `h_state`, `z`, and the class embedding to every row.
    fn with_context(
        &self,
        tape: &mut Tape,
        mut input: NodeId,
        rows: usize,
    ) -> Result<NodeId, NumError> {
        let hs = self.replicate(tape, self.h_state, rows)?;
        input = tape.concat_cols(input, hs)?;
        let z = self.replicate(tape, self.z, rows)?;
        input = tape.concat_cols(input, z)?;
        if let Some(cls) = self.class_row {
            let c = self.replicate(tape, cls, rows)?;
            input = tape.concat_cols(input, c)?;
        }
        Ok(input)
    }

    /// Termination logits, `1 x 2` as `[continue, stop]`.
    fn stop_logits(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        params: &TranslateParams,
    ) -> Result<NodeId, TranslateError> {
        let mut input = self.h_state;
        input = tape.concat_cols(input, self.z)?;
        if let Some(cls) = self.class_row {
            input = tape.concat_cols(input, cls)?;
        }
        Ok(params.stop_head.forward(tape, bound, "translate.stop", input)?)
    }

    /// First-node logits over the extended graph, `(n+m) x 1`.
    fn first_logits(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        params: &TranslateParams,
    ) -> Result<NodeId, TranslateError> {
        let input = self.with_context(tape, self.h, self.n + self.m)?;
        Ok(params.first_head.forward(tape, bound, "translate.first", input)?)
    }

    /// Second-node logits conditioned on the first, `(n+m) x 1`.
    fn second_logits(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        params: &TranslateParams,
        first: usize,
    ) -> Result<NodeId, TranslateError> {
        let first_row = tape.gather_rows(self.h, vec![first])?;
        let rep = self.replicate(tape, first_row, self.n + self.m)?;
        let input = tape.concat_cols(self.h, rep)?;
        let input = self.with_context(tape, input, self.n + self.m)?;
        Ok(params
            .second_head
            .forward(tape, bound, "translate.second", input)?)
    }

    /// Bond-type logits for one node pair, `1 x b`.
    fn bond_logits(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        params: &TranslateParams,
        first: usize,
        second: usize,
    ) -> Result<NodeId, TranslateError> {
        let f = tape.gather_rows(self.h, vec![first])?;
        let s = tape.gather_rows(self.h, vec![second])?;
        let input = tape.concat_cols(f, s)?;
        let input = self.with_context(tape, input, 1)?;
        Ok(params.bond_head.forward(tape, bound, "translate.bond", input)?)
    }

    /// Bond-type logits for a fixed first node against every second
    /// node, `(n+m) x b`.
    fn bond_logits_all(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        params: &TranslateParams,
        first: usize,
    ) -> Result<NodeId, TranslateError> {
        let f = tape.gather_rows(self.h, vec![first])?;
        let rep = self.replicate(tape, f, self.n + self.m)?;
        let input = tape.concat_cols(rep, self.h)?;
        let input = self.with_context(tape, input, self.n + self.m)?;
        Ok(params.bond_head.forward(tape, bound, "translate.bond", input)?)
    }

    fn first_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.n];
        mask.resize(self.n + self.m, false);
        mask
    }

    fn second_mask(&self, first: usize) -> Vec<bool> {
        let mut mask = vec![true; self.n + self.m];
        mask[first] = false;
        mask
    }
}

/// The four per-step action distributions, fully materialized.
#[derive(Debug, Clone)]
pub struct StepDistributions {
    /// `[continue, stop]`.
    pub stop: [f64; 2],
    /// First-node probabilities over the extended graph; vocabulary
    /// slots are masked to exactly zero.
    pub first: Vec<f64>,
    /// `second[a2][v]`: second-node probabilities given first node
    /// `a2`; entry `v == a2` is exactly zero.
    pub second: Vec<Vec<f64>>,
    /// `bond[a2][a3][t]`: bond-type probabilities for the node pair.
    pub bond: Vec<Vec<Vec<f64>>>,
}

/// Evaluates all step distributions at a state. The first index space
/// is the current atoms (`0..n`); the second index space appends the
/// vocabulary slots (`n..n+m`).
pub fn step_distributions(
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    state: &GrowState,
    z: &[f64],
    class_id: Option<u8>,
) -> Result<StepDistributions, TranslateError> {
    let class_row = params.check_class(class_id)?;
    if z.len() != params.latent_dim {
        return Err(TranslateError::LatentWidthMismatch {
            expected: params.latent_dim,
            got: z.len(),
        });
    }
    let mut tape = Tape::new();
    let mut bound = BoundParams::new();
    let z_node = tape.leaf(Tensor2::row(z));
    let net = StepNet::build(&mut tape, &mut bound, params, featurizer, state, z_node, class_row)?;

    let stop_node = net.stop_logits(&mut tape, &mut bound, params)?;
    let stop_probs = softmax(tape.value(stop_node).data(), None)?;

    let first_node = net.first_logits(&mut tape, &mut bound, params)?;
    let first = softmax(
        tape.value(first_node).data(),
        Some(&net.first_mask()),
    )?;

    let total = net.n + net.m;
    let mut second = Vec::with_capacity(net.n);
    let mut bond = Vec::with_capacity(net.n);
    for a2 in 0..net.n {
        let s_node = net.second_logits(&mut tape, &mut bound, params, a2)?;
        second.push(softmax(
            tape.value(s_node).data(),
            Some(&net.second_mask(a2)),
        )?);
        let b_node = net.bond_logits_all(&mut tape, &mut bound, params, a2)?;
        let values = tape.value(b_node);
        let mut rows = Vec::with_capacity(total);
        for a3 in 0..total {
            rows.push(softmax(values.row_slice(a3), None)?);
        }
        bond.push(rows);
    }

    Ok(StepDistributions {
        stop: [stop_probs[0], stop_probs[1]],
        first,
        second,
        bond,
    })
}

pub(crate) enum TraceNode {
    Logprob(NodeId),
    /// The trace takes an action with zero probability under the
    /// masks (or one that cannot be applied to the graph).
    Illegal { step: usize },
}

/// Records the teacher-forced trace log-probability on a tape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn trace_logprob_on_tape(
    tape: &mut Tape,
    bound: &mut BoundParams,
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    start: &GrowState,
    actions: &[Action],
    z: NodeId,
    class_row: Option<usize>,
) -> Result<TraceNode, TranslateError> {
    let mut state = start.clone();
    let mut total: Option<NodeId> = None;
    let add = |tape: &mut Tape, total: &mut Option<NodeId>, node: NodeId| -> Result<(), NumError> {
        *total = Some(match *total {
            None => node,
            Some(acc) => tape.add(acc, node)?,
        });
        Ok(())
    };

    for (step, action) in actions.iter().enumerate() {
        let net = StepNet::build(tape, bound, params, featurizer, &state, z, class_row)?;
        let stop_node = net.stop_logits(tape, bound, params)?;
        match action {
            Action::Stop => {
                if step + 1 != actions.len() {
                    return Ok(TraceNode::Illegal { step });
                }
                let lp = tape.log_softmax_pick(stop_node, vec![true, true], 1)?;
                add(tape, &mut total, lp)?;
            }
            Action::Edit {
                first,
                second,
                bond,
            } => {
                if *first >= net.n {
                    return Ok(TraceNode::Illegal { step });
                }
                let second_ext = match second {
                    NodePick::Existing(j) => {
                        if *j >= net.n {
                            return Ok(TraceNode::Illegal { step });
                        }
                        *j
                    }
                    NodePick::New(triple) => match params.vocab_index(triple) {
                        Ok(v) => net.n + v,
                        Err(_) => return Ok(TraceNode::Illegal { step }),
                    },
                };

                let lp_cont = tape.log_softmax_pick(stop_node, vec![true, true], 0)?;
                add(tape, &mut total, lp_cont)?;

                let first_node = net.first_logits(tape, bound, params)?;
                let lp_first =
                    match tape.log_softmax_pick(first_node, net.first_mask(), *first) {
                        Ok(n) => n,
                        Err(NumError::MaskedPick { .. }) => {
                            return Ok(TraceNode::Illegal { step })
                        }
                        Err(e) => return Err(e.into()),
                    };
                add(tape, &mut total, lp_first)?;

                let second_node = net.second_logits(tape, bound, params, *first)?;
                let lp_second =
                    match tape.log_softmax_pick(second_node, net.second_mask(*first), second_ext) {
                        Ok(n) => n,
                        Err(NumError::MaskedPick { .. }) => {
                            return Ok(TraceNode::Illegal { step })
                        }
                        Err(e) => return Err(e.into()),
                    };
                add(tape, &mut total, lp_second)?;

                let bond_node = net.bond_logits(tape, bound, params, *first, second_ext)?;
                let lp_bond =
                    tape.log_softmax_pick(bond_node, vec![true; BOND_TYPES], bond.index())?;
                add(tape, &mut total, lp_bond)?;

                state = match state.apply(action) {
                    Ok(s) => s,
                    Err(_) => return Ok(TraceNode::Illegal { step }),
                };
            }
        }
    }
    match total {
        Some(node) => Ok(TraceNode::Logprob(node)),
        None => Ok(TraceNode::Illegal { step: 0 }),
    }
}

/// Log-probability of a trace under the model: the sum over steps of
/// the chosen factors of the step distributions. Returns negative
/// infinity for traces that take a masked or inapplicable action.
pub fn trace_logprob(
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    trace: &TraceSample,
    z: &[f64],
    class_id: Option<u8>,
) -> Result<f64, TranslateError> {
    let class_row = params.check_class(class_id)?;
    if z.len() != params.latent_dim {
        return Err(TranslateError::LatentWidthMismatch {
            expected: params.latent_dim,
            got: z.len(),
        });
    }
    let mut tape = Tape::new();
    let mut bound = BoundParams::new();
    let z_node = tape.leaf(Tensor2::row(z));
    match trace_logprob_on_tape(
        &mut tape,
        &mut bound,
        params,
        featurizer,
        &trace.start,
        &trace.actions,
        z_node,
        class_row,
    )? {
        TraceNode::Logprob(node) => Ok(tape.value(node).item()),
        TraceNode::Illegal { .. } => Ok(f64::NEG_INFINITY),
    }
}

/// Exact translation log-likelihood by enumerating every trace in the
/// chosen universe and log-sum-exp-ing their log-probabilities. A
/// test-grade oracle: refuses edit sets beyond the enumeration guard.
pub fn marginal_logprob_exact(
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    synthon: &GrowState,
    reactant: &Molecule,
    z: &[f64],
    class_id: Option<u8>,
    mode: TraceMode,
) -> Result<f64, TranslateError> {
    let edits = diff_edits(&synthon.mol, reactant)?;
    let traces = enumerate_traces(synthon, &edits, mode)?;
    let mut lps = Vec::with_capacity(traces.len());
    for actions in traces {
        let sample = TraceSample {
            start: synthon.clone(),
            actions,
            proposal_logprob: 0.0,
        };
        lps.push(trace_logprob(params, featurizer, &sample, z, class_id)?);
    }
    Ok(logsumexp(&lps))
}

pub(crate) fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Records the posterior heads: mean and (clamped) log-variance of
/// `q(z | G, S)` from the concatenated graph embeddings.
pub(crate) fn posterior_on_tape(
    tape: &mut Tape,
    bound: &mut BoundParams,
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    reactant: &Molecule,
    synthon: &GrowState,
) -> Result<(NodeId, NodeId), TranslateError> {
    let g_features =
        featurizer.features_with_flags(reactant, Some(&vec![false; reactant.n_atoms()]))?;
    let h_g = encode_on_tape(
        tape,
        bound,
        "translate.enc",
        &params.encoder,
        reactant,
        g_features,
    )?;
    let hg = readout_on_tape(tape, h_g, &vec![true; reactant.n_atoms()])?;

    let s_features =
        featurizer.features_with_flags(&synthon.mol, Some(&synthon.attachments))?;
    let h_s = encode_on_tape(
        tape,
        bound,
        "translate.enc",
        &params.encoder,
        &synthon.mol,
        s_features,
    )?;
    let hs = readout_on_tape(tape, h_s, &vec![true; synthon.n_atoms()])?;

    let cat = tape.concat_cols(hg, hs)?;
    let mu = params.mu_head.forward(tape, bound, "translate.mu", cat)?;
    let lv = params
        .logvar_head
        .forward(tape, bound, "translate.logvar", cat)?;
    let lv = tape.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP);
    Ok((mu, lv))
}

/// Posterior mean and log-variance of the latent code.
pub fn posterior(
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    reactant: &Molecule,
    synthon: &GrowState,
) -> Result<(Vec<f64>, Vec<f64>), TranslateError> {
    let mut tape = Tape::new();
    let mut bound = BoundParams::new();
    let (mu, lv) = posterior_on_tape(&mut tape, &mut bound, params, featurizer, reactant, synthon)?;
    Ok((
        tape.value(mu).data().to_vec(),
        tape.value(lv).data().to_vec(),
    ))
}

/// Closed-form KL divergence from a diagonal Gaussian to the standard
/// normal: `0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1)`.
pub fn kl_to_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

fn kl_on_tape(
    tape: &mut Tape,
    mu: NodeId,
    logvar: NodeId,
    width: usize,
) -> Result<NodeId, NumError> {
    let sq = tape.mul(mu, mu)?;
    let s1 = tape.sum(sq);
    let ev = tape.exp(logvar);
    let s2 = tape.sum(ev);
    let s3 = tape.sum(logvar);
    let t = tape.add(s1, s2)?;
    let neg = tape.affine(s3, -1.0, 0.0);
    let t = tape.add(t, neg)?;
    Ok(tape.affine(t, 0.5, -0.5 * width as f64))
}

/// Records the full variational loss for one `(S, G)` pair:
/// `-mean(trace log-likelihoods under z ~ q) + KL(q || prior)`, with
/// the reparameterized latent code keeping gradients flowing into the
/// posterior heads. Returns the loss node plus the sampled traces.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss_on_tape(
    tape: &mut Tape,
    bound: &mut BoundParams,
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    synthon: &GrowState,
    reactant: &Molecule,
    edits: &EditSet,
    mc_traces: usize,
    class_row: Option<usize>,
    rng: &mut impl Rng,
) -> Result<(NodeId, Vec<TraceSample>), TranslateError> {
    let (mu, lv) = posterior_on_tape(tape, bound, params, featurizer, reactant, synthon)?;
    let eps = Tensor2::from_fn(1, params.latent_dim, |_, _| rng.sample(StandardNormal));
    let half = tape.affine(lv, 0.5, 0.0);
    let sigma = tape.exp(half);
    let noise = tape.mul_const(sigma, eps)?;
    let z = tape.add(mu, noise)?;

    let count = mc_traces.max(1);
    let mut traces = Vec::with_capacity(count);
    let mut lp_total: Option<NodeId> = None;
    for _ in 0..count {
        let trace = sample_trace(synthon, edits, rng);
        match trace_logprob_on_tape(
            tape,
            bound,
            params,
            featurizer,
            &trace.start,
            &trace.actions,
            z,
            class_row,
        )? {
            TraceNode::Logprob(node) => {
                lp_total = Some(match lp_total {
                    None => node,
                    Some(acc) => tape.add(acc, node)?,
                });
            }
            TraceNode::Illegal { step } => {
                // sampled supervision traces are legal by construction
                unreachable!("sampled trace illegal at step {step}");
            }
        }
        traces.push(trace);
    }
    let mean_lp = tape.affine(lp_total.expect("at least one trace"), 1.0 / count as f64, 0.0);
    let kl = kl_on_tape(tape, mu, lv, params.latent_dim)?;
    let neg = tape.affine(mean_lp, -1.0, 0.0);
    let loss = tape.add(neg, kl)?;
    Ok((loss, traces))
}

/// Variational loss for one pair, evaluated without keeping the tape.
pub fn elbo_loss(
    params: &TranslateParams,
    featurizer: &AtomFeaturizer,
    synthon: &GrowState,
    reactant: &Molecule,
    rng: &mut impl Rng,
    mc_traces: usize,
    class_id: Option<u8>,
) -> Result<f64, TranslateError> {
    let class_row = params.check_class(class_id)?;
    let edits = diff_edits(&synthon.mol, reactant)?;
    let mut tape = Tape::new();
    let mut bound = BoundParams::new();
    let (loss, _) = elbo_loss_on_tape(
        &mut tape,
        &mut bound,
        params,
        featurizer,
        synthon,
        reactant,
        &edits,
        mc_traces,
        class_row,
        rng,
    )?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::super::edits::TraceMode;
    use super::*;
    use crate::molgraph::{parse_smiles, AtomFeaturizer, Element};
    use crate::translate::AtomTriple;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_setup(vocab: &[(Element, i8, u8)]) -> (AtomFeaturizer, TranslateParams) {
        let featurizer = AtomFeaturizer::new(vec![
            Element::C,
            Element::N,
            Element::O,
            Element::S,
            Element::F,
            Element::Cl,
            Element::Br,
        ]);
        let vocab: Vec<AtomTriple> = vocab
            .iter()
            .map(|&(element, charge, hydrogens)| AtomTriple {
                element,
                charge,
                hydrogens,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let params = TranslateParams::new(
            featurizer.width() + 1,
            8,
            2,
            4,
            vocab,
            None,
            &mut rng,
        );
        (featurizer, params)
    }

    fn state_of(smiles: &str) -> GrowState {
        GrowState::from_molecule(&parse_smiles(smiles).unwrap())
    }

    #[test]
    fn distributions_are_masked_and_normalized() {
        let (featurizer, params) = test_setup(&[(Element::Br, 0, 0), (Element::O, 0, 0)]);
        let state = state_of("[CH3:1][CH2:2]");
        let z = vec![0.1, -0.2, 0.3, 0.0];
        let d = step_distributions(&params, &featurizer, &state, &z, None).unwrap();

        assert!((d.stop[0] + d.stop[1] - 1.0).abs() < 1e-9);
        assert!((d.first.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // vocabulary slots masked out of the first-node distribution
        assert_eq!(d.first[2], 0.0);
        assert_eq!(d.first[3], 0.0);
        for a2 in 0..2 {
            let s = &d.second[a2];
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(s[a2], 0.0, "second node may not repeat the first");
            for a3 in 0..4 {
                assert!((d.bond[a2][a3].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_atom_state_has_point_mass_first() {
        let (featurizer, params) = test_setup(&[(Element::Br, 0, 0)]);
        let state = state_of("[CH3:1]");
        let z = vec![0.0; 4];
        let d = step_distributions(&params, &featurizer, &state, &z, None).unwrap();
        assert!((d.first[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.first[1], 0.0);
    }

    #[test]
    fn trace_logprob_matches_factored_recomputation() {
        let (featurizer, params) = test_setup(&[(Element::Br, 0, 0), (Element::O, 0, 0)]);
        let synthon = state_of("[CH3:1][CH2:2]");
        let reactant = parse_smiles("[CH3:1][CH2:2]OBr").unwrap();
        let edits = diff_edits(&synthon.mol, &reactant).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trace = sample_trace(&synthon, &edits, &mut rng);
        let z = vec![0.4, -0.1, 0.0, 0.2];

        let lp = trace_logprob(&params, &featurizer, &trace, &z, None).unwrap();

        // independent recomputation: walk the trace multiplying the
        // eagerly-evaluated distribution entries
        let mut state = synthon.clone();
        let mut manual = 0.0;
        for action in &trace.actions {
            let d = step_distributions(&params, &featurizer, &state, &z, None).unwrap();
            match action {
                Action::Stop => manual += d.stop[1].ln(),
                Action::Edit {
                    first,
                    second,
                    bond,
                } => {
                    manual += d.stop[0].ln();
                    manual += d.first[*first].ln();
                    let ext = match second {
                        NodePick::Existing(j) => *j,
                        NodePick::New(t) => state.n_atoms() + params.vocab_index(t).unwrap(),
                    };
                    manual += d.second[*first][ext].ln();
                    manual += d.bond[*first][ext][bond.index()].ln();
                    state = state.apply(action).unwrap();
                }
            }
        }
        assert!((lp - manual).abs() < 1e-10, "{lp} vs {manual}");
        assert!(lp < 0.0);
    }

    #[test]
    fn stop_only_trace_is_one_factor() {
        let (featurizer, params) = test_setup(&[(Element::Br, 0, 0)]);
        let synthon = state_of("[CH3:1][OH:2]");
        let trace = TraceSample {
            start: synthon.clone(),
            actions: vec![Action::Stop],
            proposal_logprob: 0.0,
        };
        let z = vec![0.0; 4];
        let lp = trace_logprob(&params, &featurizer, &trace, &z, None).unwrap();
        let d = step_distributions(&params, &featurizer, &synthon, &z, None).unwrap();
        assert!((lp - d.stop[1].ln()).abs() < 1e-12);
    }

    #[test]
    fn illegal_actions_give_negative_infinity() {
        let (featurizer, params) = test_setup(&[(Element::Br, 0, 0)]);
        let synthon = state_of("[CH3:1][OH:2]");
        // second node repeats the first: masked
        let trace = TraceSample {
            start: synthon.clone(),
            actions: vec![
                Action::Edit {
                    first: 0,
                    second: NodePick::Existing(0),
                    bond: crate::molgraph::BondType::Single,
                },
                Action::Stop,
            ],
            proposal_logprob: 0.0,
        };
        let lp = trace_logprob(&params, &featurizer, &trace, &[0.0; 4], None).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);

        // out-of-vocabulary new atom
        let trace = TraceSample {
            start: synthon.clone(),
            actions: vec![
                Action::Edit {
                    first: 0,
                    second: NodePick::New(AtomTriple {
                        element: Element::P,
                        charge: 0,
                        hydrogens: 0,
                    }),
                    bond: crate::molgraph::BondType::Single,
                },
                Action::Stop,
            ],
            proposal_logprob: 0.0,
        };
        let lp = trace_logprob(&params, &featurizer, &trace, &[0.0; 4], None).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn appending_a_step_never_increases_logprob() {
        let (featurizer, params) = test_setup(&[(Element::Br, 0, 0)]);
        let synthon = state_of("[CH3:1][CH2:2]");
        let z = vec![0.3; 4];
        let stop_only = TraceSample {
            start: synthon.clone(),
            actions: vec![Action::Stop],
            proposal_logprob: 0.0,
        };
        let with_step = TraceSample {
            start: synthon.clone(),
            actions: vec![
                Action::Edit {
                    first: 0,
                    second: NodePick::New(AtomTriple {
                        element: Element::Br,
                        charge: 0,
                        hydrogens: 0,
                    }),
                    bond: crate::molgraph::BondType::Single,
                },
                Action::Stop,
            ],
            proposal_logprob: 0.0,
        };
        let a = trace_logprob(&params, &featurizer, &stop_only, &z, None).unwrap();
        let b = trace_logprob(&params, &featurizer, &with_step, &z, None).unwrap();
        assert!(b <= a + 1e-12 || b <= 0.0);
    }

    #[test]
    fn empty_edit_set_marginal_equals_stop_trace() {
        let (featurizer, params) = test_setup(&[(Element::Br, 0, 0)]);
        let synthon = state_of("[CH3:1][OH:2]");
        let z = vec![0.1; 4];
        let marginal = marginal_logprob_exact(
            &params,
            &featurizer,
            &synthon,
            &synthon.mol,
            &z,
            None,
            TraceMode::AllOrders,
        )
        .unwrap();
        let stop = TraceSample {
            start: synthon.clone(),
            actions: vec![Action::Stop],
            proposal_logprob: 0.0,
        };
        let lp = trace_logprob(&params, &featurizer, &stop, &z, None).unwrap();
        assert!((marginal - lp).abs() < 1e-12);
    }

    #[test]
    fn two_independent_edits_sum_two_orderings() {
        let (featurizer, params) = test_setup(&[
            (Element::Br, 0, 0),
            (Element::Cl, 0, 0),
        ]);
        let synthon = state_of("[CH2:1]");
        let reactant = parse_smiles("[CH2:1](Br)Cl").unwrap();
        let z = vec![0.2, 0.0, -0.3, 0.1];
        let edits = diff_edits(&synthon.mol, &reactant).unwrap();
        let traces = enumerate_traces(&synthon, &edits, TraceMode::AllOrders).unwrap();
        assert_eq!(traces.len(), 2);
        let lps: Vec<f64> = traces
            .into_iter()
            .map(|actions| {
                trace_logprob(
                    &params,
                    &featurizer,
                    &TraceSample {
                        start: synthon.clone(),
                        actions,
                        proposal_logprob: 0.0,
                    },
                    &z,
                    None,
                )
                .unwrap()
            })
            .collect();
        let marginal = marginal_logprob_exact(
            &params,
            &featurizer,
            &synthon,
            &reactant,
            &z,
            None,
            TraceMode::AllOrders,
        )
        .unwrap();
        assert!((marginal - logsumexp(&lps)).abs() < 1e-12);
    }

    #[test]
    fn jensen_bound_holds() {
        let (featurizer, params) = test_setup(&[
            (Element::Br, 0, 0),
            (Element::O, 0, 0),
            (Element::Cl, 0, 0),
        ]);
        let synthon = state_of("[CH2:1][CH2:2]");
        let reactant = parse_smiles("[CH2:1](Br)[CH2:2]OCl").unwrap();
        let z = vec![-0.4, 0.2, 0.6, 0.0];
        let edits = diff_edits(&synthon.mol, &reactant).unwrap();
        let traces = enumerate_traces(&synthon, &edits, TraceMode::BfsOrders).unwrap();
        let lps: Vec<f64> = traces
            .iter()
            .map(|actions| {
                trace_logprob(
                    &params,
                    &featurizer,
                    &TraceSample {
                        start: synthon.clone(),
                        actions: actions.clone(),
                        proposal_logprob: 0.0,
                    },
                    &z,
                    None,
                )
                .unwrap()
            })
            .collect();
        let count = lps.len() as f64;
        let bound = count.ln() + lps.iter().sum::<f64>() / count;
        let exact = marginal_logprob_exact(
            &params,
            &featurizer,
            &synthon,
            &reactant,
            &z,
            None,
            TraceMode::BfsOrders,
        )
        .unwrap();
        assert!(bound <= exact + 1e-9, "bound {bound} vs exact {exact}");
    }

    #[test]
    fn posterior_zero_weights_match_prior() {
        let (featurizer, mut params) = test_setup(&[(Element::Br, 0, 0)]);
        for (name, t) in params.named_tensors_mut() {
            if name.starts_with("translate.mu.l1") || name.starts_with("translate.logvar.l1") {
                *t = Tensor2::zeros(t.rows(), t.cols());
            }
        }
        let synthon = state_of("[CH3:1][OH:2]");
        let g = parse_smiles("[CH3:1][OH:2]").unwrap();
        let (mu, lv) = posterior(&params, &featurizer, &g, &synthon).unwrap();
        assert!(mu.iter().all(|&v| v == 0.0));
        assert!(lv.iter().all(|&v| v == 0.0));
        assert_eq!(kl_to_standard_normal(&mu, &lv), 0.0);
    }

    #[test]
    fn kl_closed_form_values() {
        assert_eq!(kl_to_standard_normal(&[0.0], &[0.0]), 0.0);
        let kl = kl_to_standard_normal(&[1.0], &[0.0]);
        assert!((kl - 0.5).abs() < 1e-12);
        // nonnegative on random inputs
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..200 {
            let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lv: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(kl_to_standard_normal(&mu, &lv) >= -1e-12);
        }
    }

    #[test]
    fn reparameterized_mean_concentrates_on_mu() {
        let (featurizer, params) = test_setup(&[(Element::Br, 0, 0)]);
        let synthon = state_of("[CH3:1][OH:2]");
        let g = parse_smiles("[CH3:1][OH:2]").unwrap();
        let (mu, lv) = posterior(&params, &featurizer, &g, &synthon).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let mut mean = vec![0.0; mu.len()];
        for _ in 0..draws {
            for (j, m) in mean.iter_mut().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                *m += mu[j] + (0.5 * lv[j]).exp() * eps;
            }
        }
        for (j, m) in mean.iter().enumerate() {
            let avg = m / draws as f64;
            let se = (0.5 * lv[j]).exp() / (draws as f64).sqrt();
            assert!(
                (avg - mu[j]).abs() < 3.0 * se + 1e-9,
                "dim {j}: {avg} vs {} (se {se})",
                mu[j]
            );
        }
    }

    #[test]
    fn elbo_degenerate_case_equals_negative_trace_logprob() {
        // zero posterior heads (KL = 0) and an empty edit set (single
        // deterministic trace): loss = -trace_logprob
        let (featurizer, mut params) = test_setup(&[(Element::Br, 0, 0)]);
        for (name, t) in params.named_tensors_mut() {
            if name.starts_with("translate.mu") || name.starts_with("translate.logvar") {
                *t = Tensor2::zeros(t.rows(), t.cols());
            }
        }
        let synthon = state_of("[CH3:1][OH:2]");
        let g = parse_smiles("[CH3:1][OH:2]").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let loss = elbo_loss(&params, &featurizer, &synthon, &g, &mut rng, 1, None).unwrap();
        let stop = TraceSample {
            start: synthon.clone(),
            actions: vec![Action::Stop],
            proposal_logprob: 0.0,
        };
        // z = mu + sigma*eps = 0 + 1*eps: reproduce the same eps
        let mut rng2 = ChaCha8Rng::seed_from_u64(21);
        let z: Vec<f64> = (0..4).map(|_| rng2.sample(StandardNormal)).collect();
        let lp = trace_logprob(&params, &featurizer, &stop, &z, None).unwrap();
        assert!((loss + lp).abs() < 1e-10, "loss {loss}, lp {lp}");
    }
}
