//! End-to-end prediction: centers -> synthons -> per-synthon decoding
//! -> joint ranking.

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::PipelineError;
use crate::center::{score_pairs, select_centers, split_synthons, CenterParams};
use crate::molgraph::{valence_ok, AtomFeaturizer, Molecule};
use crate::translate::{beam_generate, TranslateParams};
use rand::Rng;

/// A ranked list of candidate reactant sets.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub entries: Vec<PredictionEntry>,
}

#[derive(Debug, Clone)]
pub struct PredictionEntry {
    /// Canonical reactant strings, sorted (duplicates preserved).
    pub reactants: Vec<String>,
    /// Center log-score plus the summed decode log-likelihoods.
    pub score: f64,
    /// The center hypothesis behind this candidate.
    pub centers: Vec<(usize, usize)>,
}

impl PredictionEntry {
    /// Order-insensitive comparison key.
    pub fn key(&self) -> String {
        self.reactants.join(".")
    }
}

/// Cartesian combination of per-synthon decodes, best-first, truncated
/// to `k`.
pub(crate) fn combine_decodes(
    per_synthon: &[Vec<(String, f64)>],
    k: usize,
) -> Vec<(Vec<String>, f64)> {
    let mut combos: Vec<(Vec<String>, f64)> = vec![(Vec::new(), 0.0)];
    for options in per_synthon {
        let mut next = Vec::with_capacity(combos.len() * options.len());
        for (strings, score) in &combos {
            for (s, ds) in options {
                let mut grown = strings.clone();
                grown.push(s.clone());
                next.push((grown, score + ds));
            }
        }
        next.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        next.truncate(k.max(1) * 64);
        combos = next;
    }
    for (strings, _) in &mut combos {
        strings.sort();
    }
    combos
}

/// Both trained modules plus the frozen vocabularies, ready to
/// predict.
pub struct Predictor {
    pub featurizer: AtomFeaturizer,
    pub center: CenterParams,
    pub translate: TranslateParams,
    pub config: RunConfig,
}

impl Predictor {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, PipelineError> {
        let featurizer = ckpt.vocab.featurizer();
        let center = ckpt
            .center
            .ok_or(PipelineError::MissingModule("center"))?
            .0;
        let translate = ckpt
            .translate
            .ok_or(PipelineError::MissingModule("translate"))?
            .0;
        Ok(Predictor {
            featurizer,
            center,
            translate,
            config: ckpt.config,
        })
    }

    /// Ranked reactant-set candidates for a product.
    ///
    /// Center hypotheses are the prefixes of the selected pair list up
    /// to `centers_k`; with nothing above the threshold the product
    /// itself is the single synthon. A hypothesis scores as the log-
    /// likelihood of its bond labeling (chosen pairs `log s`, other
    /// bonded pairs `log(1-s)`); each full candidate adds the decode
    /// log-likelihoods of its synthons. Candidates merge across
    /// hypotheses, deduplicate by reactant set keeping the best score,
    /// and truncate to `k`.
    pub fn predict(
        &self,
        product: &Molecule,
        k: usize,
        class_id: Option<u8>,
        rng: &mut impl Rng,
    ) -> Result<Prediction, PipelineError> {
        let config = &self.config;
        let scores = score_pairs(product, &self.featurizer, &self.center, class_id)?;
        let selected = select_centers(&scores, product, config.threshold, config.centers_k);

        let hypotheses: Vec<Vec<(usize, usize)>> = if selected.is_empty() {
            vec![Vec::new()]
        } else {
            (1..=selected.len()).map(|i| selected[..i].to_vec()).collect()
        };

        let bonded: Vec<(usize, usize)> = product
            .bonds()
            .into_iter()
            .map(|(a, b, _)| (a, b))
            .collect();

        let mut entries: Vec<PredictionEntry> = Vec::new();
        for hypothesis in hypotheses {
            let mut center_score = 0.0;
            for &(a, b) in &bonded {
                let s = scores.get(a, b).clamp(1e-12, 1.0 - 1e-12);
                if hypothesis.contains(&(a, b)) {
                    center_score += s.ln();
                } else {
                    center_score += (1.0 - s).ln();
                }
            }

            let synthons = split_synthons(product, &hypothesis)?;
            let mut per_synthon: Vec<Vec<(String, f64)>> = Vec::with_capacity(synthons.len());
            for synthon in &synthons {
                let mut decoded: std::collections::BTreeMap<String, (Molecule, f64)> =
                    std::collections::BTreeMap::new();
                for _ in 0..config.samples.max(1) {
                    let beams = beam_generate(
                        synthon,
                        &self.translate,
                        &self.featurizer,
                        config.beam_size,
                        config.max_steps,
                        class_id,
                        rng,
                    )?;
                    for (mol, score) in beams {
                        debug_assert!(valence_ok(&mol));
                        let key = crate::molgraph::write_canonical(&mol);
                        match decoded.get_mut(&key) {
                            Some(entry) if entry.1 >= score => {}
                            Some(entry) => *entry = (mol, score),
                            None => {
                                decoded.insert(key, (mol, score));
                            }
                        }
                    }
                }
                let mut options: Vec<(String, f64)> = decoded
                    .into_iter()
                    .map(|(key, (_, score))| (key, score))
                    .collect();
                options.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
                per_synthon.push(options);
            }

            for (reactants, decode_score) in combine_decodes(&per_synthon, k) {
                entries.push(PredictionEntry {
                    reactants,
                    score: center_score + decode_score,
                    centers: hypothesis.clone(),
                });
            }
        }

        // dedupe by reactant set, best score wins
        entries.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.key().cmp(&b.key()))
        });
        let mut seen = std::collections::HashSet::new();
        entries.retain(|e| seen.insert(e.key()));
        entries.truncate(k);
        Ok(Prediction { entries })
    }
}

/// Line-delimited key=value records for a prediction.
pub fn prediction_records(reaction_id: &str, prediction: &Prediction) -> String {
    let mut out = String::new();
    for (rank, entry) in prediction.entries.iter().enumerate() {
        out.push_str(&format!(
            "type=prediction reaction={} rank={} score={:.6} reactants={}\n",
            reaction_id,
            rank + 1,
            entry.score,
            entry.key(),
        ));
    }
    out
}
