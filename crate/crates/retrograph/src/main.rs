//! Command-line interface.
//!
//! Human-readable summaries and tables go to stdout; structured
//! line-delimited records go to the path given with `--out` (or
//! stdout when `--out -` is passed). Evaluation is deterministic for
//! fixed seeds.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use retrograph::center::train_center;
use retrograph::molgraph::parse_smiles;
use retrograph::pipeline::{
    describe, evaluate_center_topk, evaluate_topk, evaluate_translation_topk, ingest,
    load_checkpoint, prediction_records, save_checkpoint, Checkpoint, Dataset, Predictor,
    RunConfig, Split,
};
use retrograph::translate::train_translate;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "retrograph",
    about = "Template-free retrosynthesis: reaction-center identification plus variational synthon-to-reactant translation"
)]
struct Cli {
    /// Key=value run configuration file (defaults are built in)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Condition on reaction classes: training builds a conditioned
    /// model, evaluation passes the true class ids
    #[arg(long, global = true)]
    class_known: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a reaction file, print diagnostics, write vocabulary artifacts
    Ingest {
        #[arg(long)]
        data: PathBuf,
        /// Directory for split/vocabulary artifacts
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the reaction-center module on the training split
    TrainCenter {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to create or update (resumes when it exists)
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train the translation module on the training split
    TrainTranslate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Predict ranked reactant sets for one product or a file of products
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Product SMILES
        #[arg(long, conflicts_with = "file")]
        smiles: Option<String>,
        /// File with one product SMILES per line
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Reaction class id (requires a class-conditioned checkpoint)
        #[arg(long)]
        class: Option<u8>,
        /// Latent draws per synthon (more samples, more diverse routes)
        #[arg(long)]
        samples: Option<usize>,
        /// Where to write prediction records (`-` for stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full-pipeline top-k exact-match evaluation
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reaction-center top-k accuracy
    EvalCenter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translation top-k accuracy from oracle reaction centers
    EvalTranslate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the header and tensor inventory of a checkpoint
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = active_config(&cli)?;
    match cli.command {
        Command::Ingest { ref data, ref out } => cmd_ingest(&config, data, out.as_deref()),
        Command::TrainCenter {
            ref data,
            ref checkpoint,
        } => cmd_train_center(&config, data, checkpoint),
        Command::TrainTranslate {
            ref data,
            ref checkpoint,
        } => cmd_train_translate(&config, data, checkpoint),
        Command::Predict {
            ref checkpoint,
            ref smiles,
            ref file,
            k,
            class,
            samples,
            ref out,
        } => cmd_predict(
            &config,
            checkpoint,
            smiles.as_deref(),
            file.as_deref(),
            k,
            class,
            samples,
            out.as_deref(),
        ),
        Command::Eval {
            ref data,
            ref checkpoint,
            ref split,
            ref out,
        } => cmd_eval(&config, data, checkpoint, split, out.as_deref(), EvalKind::Full),
        Command::EvalCenter {
            ref data,
            ref checkpoint,
            ref split,
            ref out,
        } => cmd_eval_center(&config, data, checkpoint, split, out.as_deref()),
        Command::EvalTranslate {
            ref data,
            ref checkpoint,
            ref split,
            ref out,
        } => cmd_eval(&config, data, checkpoint, split, out.as_deref(), EvalKind::Translation),
        Command::InspectCheckpoint { ref checkpoint } => {
            let ckpt = load_checkpoint(checkpoint)?;
            print!("{}", describe(&ckpt));
            Ok(())
        }
    }
}

fn active_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.class_known {
        config.class_conditioning = true;
    }
    Ok(config)
}

fn write_records(out: Option<&Path>, records: &str) -> Result<()> {
    match out {
        None => {}
        Some(p) if p.as_os_str() == "-" => print!("{records}"),
        Some(p) => std::fs::write(p, records).with_context(|| format!("writing {}", p.display()))?,
    }
    Ok(())
}

fn load_dataset(config: &RunConfig, data: &Path) -> Result<Dataset> {
    let dataset = ingest(data, config.seed)?;
    for (line, why) in &dataset.report.skipped {
        eprintln!("skipped line {line}: {why}");
    }
    for (idx, why) in &dataset.report.translate_rejected {
        eprintln!("reaction {idx}: no translation pairs: {why}");
    }
    Ok(dataset)
}

fn split_arg(name: &str) -> Result<Split> {
    Split::from_name(name).ok_or_else(|| anyhow!("unknown split `{name}` (train|val|test)"))
}

/// Model shape comes from the checkpoint; runtime knobs come from the
/// active configuration.
fn overlay_runtime(mut ckpt_config: RunConfig, active: &RunConfig) -> RunConfig {
    ckpt_config.beam_size = active.beam_size;
    ckpt_config.max_steps = active.max_steps;
    ckpt_config.threshold = active.threshold;
    ckpt_config.centers_k = active.centers_k;
    ckpt_config.samples = active.samples;
    ckpt_config
}

fn load_checkpoint_warned(path: &Path, active: &RunConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if ckpt.config.hash() != active.hash() {
        eprintln!(
            "warning: checkpoint config hash {:016x} differs from the active config {:016x}",
            ckpt.config.hash(),
            active.hash()
        );
    }
    Ok(ckpt)
}

fn cmd_ingest(config: &RunConfig, data: &Path, out: Option<&Path>) -> Result<()> {
    let dataset = load_dataset(config, data)?;
    let (train, val, test) = (
        dataset.indices_in(Split::Train).len(),
        dataset.indices_in(Split::Val).len(),
        dataset.indices_in(Split::Test).len(),
    );
    println!(
        "reactions {}  train {}  val {}  test {}",
        dataset.reactions.len(),
        train,
        val,
        test
    );
    println!(
        "elements {}  new-atom vocabulary {}  skipped lines {}  translate-rejected {}",
        dataset.vocab.elements.len(),
        dataset.vocab.new_atoms.len(),
        dataset.report.skipped.len(),
        dataset.report.translate_rejected.len()
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut splits = String::new();
        for (i, s) in dataset.splits.iter().enumerate() {
            splits.push_str(&format!("{i}\t{}\n", s.name()));
        }
        std::fs::write(dir.join("splits.tsv"), splits)?;
        let elements: String = dataset
            .vocab
            .elements
            .iter()
            .map(|e| format!("{}\n", e.symbol()))
            .collect();
        std::fs::write(dir.join("atom_vocab.txt"), elements)?;
        let new_atoms: String = dataset
            .vocab
            .new_atoms
            .iter()
            .map(|t| format!("{} {} {}\n", t.element.symbol(), t.charge, t.hydrogens))
            .collect();
        std::fs::write(dir.join("new_atom_vocab.txt"), new_atoms)?;
        let skipped: String = dataset
            .report
            .skipped
            .iter()
            .map(|(line, why)| format!("line {line}: {why}\n"))
            .collect();
        std::fs::write(dir.join("skipped.log"), skipped)?;
    }
    Ok(())
}

fn cmd_train_center(config: &RunConfig, data: &Path, checkpoint: &Path) -> Result<()> {
    let dataset = load_dataset(config, data)?;
    let train: Vec<_> = dataset
        .indices_in(Split::Train)
        .into_iter()
        .map(|i| dataset.reactions[i].clone())
        .collect();

    let (mut ckpt, featurizer, resume) = if checkpoint.exists() {
        let ckpt = load_checkpoint_warned(checkpoint, config)?;
        let featurizer = ckpt.vocab.featurizer();
        let mut ckpt = ckpt;
        let resume = ckpt.center.take();
        (ckpt, featurizer, resume)
    } else {
        (
            Checkpoint::new(config.clone(), dataset.vocab.clone()),
            dataset.featurizer(),
            None,
        )
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (params, adam, history) =
        train_center(&train, &featurizer, &config.center_options(), &mut rng, resume)?;
    for m in &history {
        let accs: String = m
            .accuracy
            .iter()
            .map(|(k, a)| format!(" top{k}={a:.6}"))
            .collect();
        println!("type=center_epoch epoch={} loss={:.6}{}", m.epoch, m.mean_loss, accs);
    }
    ckpt.center = Some((params, adam));
    save_checkpoint(checkpoint, &ckpt)?;
    eprintln!("wrote {}", checkpoint.display());
    Ok(())
}

fn cmd_train_translate(config: &RunConfig, data: &Path, checkpoint: &Path) -> Result<()> {
    let dataset = load_dataset(config, data)?;
    let pairs = dataset.training_pairs();
    if pairs.is_empty() {
        bail!("no usable translation pairs in the training split");
    }

    let (mut ckpt, featurizer, resume) = if checkpoint.exists() {
        let mut ckpt = load_checkpoint_warned(checkpoint, config)?;
        let featurizer = ckpt.vocab.featurizer();
        let resume = ckpt.translate.take();
        (ckpt, featurizer, resume)
    } else {
        (
            Checkpoint::new(config.clone(), dataset.vocab.clone()),
            dataset.featurizer(),
            None,
        )
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (params, adam, history) = train_translate(
        &pairs,
        &featurizer,
        &config.translate_options(),
        &mut rng,
        resume,
    )?;
    for m in &history {
        println!("type=translate_epoch epoch={} loss={:.6}", m.epoch, m.mean_loss);
    }
    // the frozen new-atom vocabulary lives with the parameters
    ckpt.vocab.new_atoms = params.vocab.clone();
    ckpt.translate = Some((params, adam));
    save_checkpoint(checkpoint, &ckpt)?;
    eprintln!("wrote {}", checkpoint.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    config: &RunConfig,
    checkpoint: &Path,
    smiles: Option<&str>,
    file: Option<&Path>,
    k: usize,
    class: Option<u8>,
    samples: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let ckpt = load_checkpoint_warned(checkpoint, config)?;
    let mut run_config = overlay_runtime(ckpt.config.clone(), config);
    if let Some(s) = samples {
        run_config.samples = s.max(1);
    }
    let mut predictor = Predictor::from_checkpoint(ckpt)?;
    predictor.config = run_config;

    let products: Vec<(String, String)> = match (smiles, file) {
        (Some(s), None) => vec![("input".to_string(), s.to_string())],
        (None, Some(path)) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| (i.to_string(), l.trim().to_string()))
            .collect(),
        _ => bail!("pass exactly one of --smiles or --file"),
    };

    let mut records = String::new();
    for (i, (id, text)) in products.iter().enumerate() {
        let product = parse_smiles(text).with_context(|| format!("product {id}"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let prediction = predictor.predict(&product, k, class, &mut rng)?;
        println!("product {id}: {text}");
        for (rank, entry) in prediction.entries.iter().enumerate() {
            println!("  {:>2}. {:>10.4}  {}", rank + 1, entry.score, entry.key());
        }
        records.push_str(&prediction_records(id, &prediction));
    }
    write_records(out, &records)
}

enum EvalKind {
    Full,
    Translation,
}

fn cmd_eval(
    config: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    split: &str,
    out: Option<&Path>,
    kind: EvalKind,
) -> Result<()> {
    let split = split_arg(split)?;
    let ckpt = load_checkpoint_warned(checkpoint, config)?;
    // the split must match the one used at training time
    let dataset = ingest(data, ckpt.config.seed)?;
    let run_config = overlay_runtime(ckpt.config.clone(), config);
    let mut predictor = Predictor::from_checkpoint(ckpt)?;
    predictor.config = run_config;

    let (table, records) = match kind {
        EvalKind::Full => evaluate_topk(
            &dataset,
            split,
            &predictor,
            &[1, 3, 5, 10],
            config.class_conditioning,
            config.seed,
        )?,
        EvalKind::Translation => evaluate_translation_topk(
            &dataset,
            split,
            &predictor,
            &[1, 3, 5, 10],
            config.class_conditioning,
            config.seed,
        )?,
    };
    print!("{}", table.render());
    let mut full = table.records();
    full.push_str(&records);
    write_records(out, &full)
}

fn cmd_eval_center(
    config: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    split: &str,
    out: Option<&Path>,
) -> Result<()> {
    let split = split_arg(split)?;
    let ckpt = load_checkpoint_warned(checkpoint, config)?;
    let dataset = ingest(data, ckpt.config.seed)?;
    let featurizer = ckpt.vocab.featurizer();
    let (center, _) = ckpt
        .center
        .as_ref()
        .ok_or_else(|| anyhow!("checkpoint has no center module"))?;
    let table = evaluate_center_topk(
        &dataset,
        split,
        center,
        &featurizer,
        &[1, 2, 3, 5],
        config.class_conditioning,
        config.threshold,
    )?;
    print!("{}", table.render());
    write_records(out, &table.records())
}
