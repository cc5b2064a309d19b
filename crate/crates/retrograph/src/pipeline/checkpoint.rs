//! Versioned, checksummed checkpoint container.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic        8  "RGCKPT01"
//! version      u32
//! config_hash  u64          FNV-1a of the embedded config text
//! config       u32 len + canonical RunConfig text
//! elements     u32 count + (u8 len, utf-8 symbol)*
//! new_atoms    u32 count + (u8 len, utf-8 symbol, i8 charge, u8 h)*
//! sections     u8 bitmask   bit 0 center, bit 1 translate
//! section*     u64 adam_step + u64 store_len + tensor store bytes
//! checksum     u64          FNV-1a of everything above
//! ```
//!
//! Tensor stores hold the module parameters plus the Adam moments
//! under `adam.m.` / `adam.v.` prefixes. Serialization is
//! deterministic, so save -> load -> save is byte-exact.

use super::config::{fnv1a, RunConfig};
use super::dataset::Vocab;
use crate::center::CenterParams;
use crate::molgraph::Element;
use crate::numcore::{read_store, write_store, AdamState, StoreError, Tensor2};
use crate::translate::{AtomTriple, TranslateParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"RGCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("input truncated at byte {0}")]
    Truncated(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: the checkpoint is corrupted")]
    Corrupted,
    #[error("embedded config does not match its hash")]
    ConfigHashMismatch,
    #[error("embedded config: {0}")]
    Config(String),
    #[error("unknown element symbol `{0}` in vocabulary")]
    UnknownElement(String),
    #[error("tensor store: {0}")]
    Store(#[from] StoreError),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?} (vocabulary or config mismatch)")]
    TensorShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub center: Option<(CenterParams, AdamState)>,
    pub translate: Option<(TranslateParams, AdamState)>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, vocab: Vocab) -> Self {
        Checkpoint {
            config,
            vocab,
            center: None,
            translate: None,
        }
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn module_store(params: Vec<(String, Tensor2)>, adam: &AdamState) -> Vec<u8> {
    let mut entries: Vec<(String, Tensor2)> = params;
    for (name, m, v) in adam.moment_tensors() {
        entries.push((format!("adam.m.{name}"), m.clone()));
        entries.push((format!("adam.v.{name}"), v.clone()));
    }
    let refs: Vec<(String, &Tensor2)> = entries.iter().map(|(n, t)| (n.clone(), t)).collect();
    let mut bytes = Vec::new();
    write_store(&mut bytes, &refs);
    bytes
}

pub fn save_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION);
    let config_text = ckpt.config.to_text();
    push_u64(&mut out, fnv1a(config_text.as_bytes()));
    push_u32(&mut out, config_text.len() as u32);
    out.extend_from_slice(config_text.as_bytes());

    push_u32(&mut out, ckpt.vocab.elements.len() as u32);
    for e in &ckpt.vocab.elements {
        let sym = e.symbol().as_bytes();
        out.push(sym.len() as u8);
        out.extend_from_slice(sym);
    }
    push_u32(&mut out, ckpt.vocab.new_atoms.len() as u32);
    for t in &ckpt.vocab.new_atoms {
        let sym = t.element.symbol().as_bytes();
        out.push(sym.len() as u8);
        out.extend_from_slice(sym);
        out.push(t.charge as u8);
        out.push(t.hydrogens);
    }

    let mut mask = 0u8;
    if ckpt.center.is_some() {
        mask |= 1;
    }
    if ckpt.translate.is_some() {
        mask |= 2;
    }
    out.push(mask);

    if let Some((params, adam)) = &ckpt.center {
        push_u64(&mut out, adam.step_count());
        let store = module_store(params.named_tensors(), adam);
        push_u64(&mut out, store.len() as u64);
        out.extend_from_slice(&store);
    }
    if let Some((params, adam)) = &ckpt.translate {
        push_u64(&mut out, adam.step_count());
        let store = module_store(params.named_tensors(), adam);
        push_u64(&mut out, store.len() as u64);
        out.extend_from_slice(&store);
    }

    let checksum = fnv1a(&out);
    push_u64(&mut out, checksum);
    out
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    Ok(std::fs::write(path, save_bytes(ckpt))?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn symbol(&mut self) -> Result<Element, CheckpointError> {
        let len = self.u8()? as usize;
        if len > 2 {
            return Err(CheckpointError::UnknownElement(format!("len {len}")));
        }
        let text = std::str::from_utf8(self.take(len)?)
            .map_err(|_| CheckpointError::UnknownElement("non-utf8".into()))?;
        Element::from_symbol(text).ok_or_else(|| CheckpointError::UnknownElement(text.to_string()))
    }
}

fn fill_tensors(
    targets: Vec<(String, &mut Tensor2)>,
    stored: &BTreeMap<String, Tensor2>,
    prefix: &str,
) -> Result<(), CheckpointError> {
    for (name, target) in targets {
        let key = format!("{prefix}{name}");
        let source = stored
            .get(&key)
            .ok_or_else(|| CheckpointError::MissingTensor(key.clone()))?;
        if source.shape() != target.shape() {
            return Err(CheckpointError::TensorShapeMismatch {
                name: key,
                expected: target.shape(),
                got: source.shape(),
            });
        }
        *target = source.clone();
    }
    Ok(())
}

fn restore_adam(
    param_names: &[String],
    stored: &BTreeMap<String, Tensor2>,
    step: u64,
    learning_rate: f64,
) -> Result<AdamState, CheckpointError> {
    let mut moments = BTreeMap::new();
    for name in param_names {
        let (mk, vk) = (format!("adam.m.{name}"), format!("adam.v.{name}"));
        match (stored.get(&mk), stored.get(&vk)) {
            (Some(m), Some(v)) => {
                moments.insert(name.clone(), (m.clone(), v.clone()));
            }
            // a fresh optimizer has no moments yet
            (None, None) => {}
            _ => return Err(CheckpointError::MissingTensor(mk)),
        }
    }
    Ok(AdamState::from_parts(step, learning_rate, moments))
}

pub fn load_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let declared = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a(body) != declared {
        return Err(CheckpointError::Corrupted);
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config_hash = cur.u64()?;
    let config_len = cur.u32()? as usize;
    let config_text = std::str::from_utf8(cur.take(config_len)?)
        .map_err(|_| CheckpointError::Config("non-utf8".into()))?;
    if fnv1a(config_text.as_bytes()) != config_hash {
        return Err(CheckpointError::ConfigHashMismatch);
    }
    let config =
        RunConfig::parse(config_text).map_err(|e| CheckpointError::Config(e.to_string()))?;

    let n_elements = cur.u32()? as usize;
    let mut elements = Vec::with_capacity(n_elements.min(16));
    for _ in 0..n_elements {
        elements.push(cur.symbol()?);
    }
    let n_new = cur.u32()? as usize;
    let mut new_atoms = Vec::with_capacity(n_new.min(256));
    for _ in 0..n_new {
        let element = cur.symbol()?;
        let charge = cur.u8()? as i8;
        let hydrogens = cur.u8()?;
        new_atoms.push(AtomTriple {
            element,
            charge,
            hydrogens,
        });
    }
    let vocab = Vocab {
        elements,
        new_atoms,
    };
    let featurizer = vocab.featurizer();

    let mask = cur.u8()?;
    let mut ckpt = Checkpoint::new(config.clone(), vocab.clone());
    // construction source for shapes; every value is overwritten
    let mut shape_rng = ChaCha8Rng::seed_from_u64(0);
    let class_dim = config.class_conditioning.then_some(config.class_embed_dim);

    if mask & 1 != 0 {
        let step = cur.u64()?;
        let store_len = cur.u64()? as usize;
        let stored: BTreeMap<String, Tensor2> =
            read_store(cur.take(store_len)?)?.into_iter().collect();
        let mut params = CenterParams::new(
            featurizer.width(),
            config.embed_dim,
            config.layers,
            class_dim,
            &mut shape_rng,
        );
        fill_tensors(params.named_tensors_mut(), &stored, "")?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let adam = restore_adam(&names, &stored, step, config.learning_rate)?;
        ckpt.center = Some((params, adam));
    }
    if mask & 2 != 0 {
        let step = cur.u64()?;
        let store_len = cur.u64()? as usize;
        let stored: BTreeMap<String, Tensor2> =
            read_store(cur.take(store_len)?)?.into_iter().collect();
        let mut params = TranslateParams::new(
            featurizer.width() + 1,
            config.embed_dim,
            config.layers,
            config.latent_dim,
            vocab.new_atoms.clone(),
            class_dim,
            &mut shape_rng,
        );
        fill_tensors(params.named_tensors_mut(), &stored, "")?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let adam = restore_adam(&names, &stored, step, config.learning_rate)?;
        ckpt.translate = Some((params, adam));
    }
    if cur.pos != body.len() {
        return Err(CheckpointError::Truncated(cur.pos));
    }
    Ok(ckpt)
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    load_bytes(&std::fs::read(path)?)
}

/// One human-readable line per header field and tensor, for the
/// inspect subcommand.
pub fn describe(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    out.push_str(&format!("config_hash = {:016x}\n", ckpt.config.hash()));
    out.push_str(&format!(
        "elements = {}\n",
        ckpt.vocab
            .elements
            .iter()
            .map(|e| e.symbol())
            .collect::<Vec<_>>()
            .join(",")
    ));
    out.push_str(&format!("new_atoms = {}\n", ckpt.vocab.new_atoms.len()));
    for (label, section) in [
        ("center", ckpt.center.as_ref().map(|(p, a)| (p.named_tensors(), a))),
        (
            "translate",
            ckpt.translate.as_ref().map(|(p, a)| (p.named_tensors(), a)),
        ),
    ] {
        match section {
            None => out.push_str(&format!("{label} = absent\n")),
            Some((tensors, adam)) => {
                out.push_str(&format!(
                    "{label} = {} tensors, adam_step {}\n",
                    tensors.len(),
                    adam.step_count()
                ));
                for (name, t) in tensors {
                    let norm: f64 = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                    out.push_str(&format!(
                        "  {name} {}x{} |w| {:.6}\n",
                        t.rows(),
                        t.cols(),
                        norm
                    ));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::Element;

    fn sample_checkpoint() -> Checkpoint {
        let config = RunConfig {
            embed_dim: 8,
            layers: 2,
            latent_dim: 3,
            ..RunConfig::default()
        };
        let vocab = Vocab {
            elements: vec![Element::C, Element::O, Element::Br],
            new_atoms: vec![AtomTriple {
                element: Element::Br,
                charge: 0,
                hydrogens: 0,
            }],
        };
        let featurizer = vocab.featurizer();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let center = CenterParams::new(featurizer.width(), 8, 2, None, &mut rng);
        let translate = TranslateParams::new(
            featurizer.width() + 1,
            8,
            2,
            3,
            vocab.new_atoms.clone(),
            None,
            &mut rng,
        );
        let mut ckpt = Checkpoint::new(config, vocab);
        ckpt.center = Some((center, AdamState::new(0.0001)));
        ckpt.translate = Some((translate, AdamState::new(0.0001)));
        ckpt
    }

    #[test]
    fn save_load_save_is_byte_exact() {
        let ckpt = sample_checkpoint();
        let bytes = save_bytes(&ckpt);
        let loaded = load_bytes(&bytes).unwrap();
        let bytes2 = save_bytes(&loaded);
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn parameters_survive_the_round_trip() {
        let ckpt = sample_checkpoint();
        let loaded = load_bytes(&save_bytes(&ckpt)).unwrap();
        let (orig, _) = ckpt.center.as_ref().unwrap();
        let (back, _) = loaded.center.as_ref().unwrap();
        assert_eq!(orig.named_tensors(), back.named_tensors());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = save_bytes(&sample_checkpoint());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(
            load_bytes(&bytes),
            Err(CheckpointError::Corrupted)
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = save_bytes(&sample_checkpoint());
        for cut in [4, 20, bytes.len() - 1] {
            assert!(load_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn shape_mismatch_against_header_rejected() {
        // tensors built at embed_dim 8 saved under a config declaring
        // 16: the stored shapes no longer match the header
        let ckpt = sample_checkpoint();
        let mut wide_config = ckpt.config.clone();
        wide_config.embed_dim = 16;
        let tampered = Checkpoint {
            config: wide_config,
            vocab: ckpt.vocab.clone(),
            center: ckpt.center,
            translate: None,
        };
        assert!(matches!(
            load_bytes(&save_bytes(&tampered)),
            Err(CheckpointError::TensorShapeMismatch { .. })
        ));
    }

    #[test]
    fn vocabulary_size_mismatch_rejected() {
        // drop one element from the vocabulary after training: the
        // feature width shrinks and every encoder tensor misfits
        let ckpt = sample_checkpoint();
        let tampered = Checkpoint {
            config: ckpt.config.clone(),
            vocab: Vocab {
                elements: vec![Element::C, Element::O],
                new_atoms: ckpt.vocab.new_atoms.clone(),
            },
            center: ckpt.center,
            translate: None,
        };
        assert!(matches!(
            load_bytes(&save_bytes(&tampered)),
            Err(CheckpointError::TensorShapeMismatch { .. })
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = save_bytes(&sample_checkpoint());
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        // fix the checksum so the version check is what fires
        let len = bytes.len();
        let sum = fnv1a(&bytes[..len - 8]);
        bytes[len - 8..].copy_from_slice(&sum.to_le_bytes());
        assert!(matches!(
            load_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }
}
