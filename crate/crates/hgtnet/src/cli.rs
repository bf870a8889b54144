//! Command definitions and their implementations.
//!
//! Exit codes: 0 success, 1 gradient check failure, 2 config error, 3 data
//! error, 4 I/O error, 5 checkpoint format error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hgtnet_core::data::synth::{class_names, synth_dataset};
use hgtnet_core::data::{compute_stats, stratified_split, ImageSample, Split};
use hgtnet_core::gradcheck::run_suite;
use hgtnet_core::metrics::{render_report, MetricsReport};
use hgtnet_core::rng::stream_id_for;
use hgtnet_core::train::{Evaluation, Trainer};
use hgtnet_core::{HgtNet, RngStream};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_entries, RunConfig};
use crate::error::{HgtError, Result};
use crate::eval::evaluate_parallel;
use crate::{csv, dataset, fsio, ppm};

pub const BEST_CHECKPOINT: &str = "checkpoint.hgtn";
pub const LAST_CHECKPOINT: &str = "last.hgtn";

#[derive(Debug, Parser)]
#[command(name = "hgtnet", version, about = "Hybrid graph-transformer image classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Dataset tree root: one subdirectory of PPM files per class.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Use the built-in synthetic texture dataset instead of `--data`.
    #[arg(long)]
    pub synth: bool,
    /// Synthetic samples per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Worker threads for evaluation.
    #[arg(long)]
    pub eval_threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyKind {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset tree or synthetic data and write all artifacts.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print the merged configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Defaults to `<out>/checkpoint.hgtn`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render the report for a predictions CSV.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Number of classes; taken from the header when omitted.
        #[arg(long)]
        classes: Option<usize>,
        /// Comma-separated class names in label order.
        #[arg(long)]
        class_names: Option<String>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt_op: Option<String>,
    },
    /// Write the synthetic dataset as a PPM tree.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Apply an augmentation policy to one PPM and write before/after images.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        policy: PolicyKind,
        /// Switch every random step off (resize only).
        #[arg(long)]
        disable_random: bool,
        #[arg(long)]
        image_size: Option<usize>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, overrides, resume, print_config } => {
            cmd_train(&common, &overrides, resume.as_deref(), print_config)
        }
        Command::Eval { common, overrides, checkpoint } => cmd_eval(&common, &overrides, checkpoint.as_deref()),
        Command::Metrics { common, predictions, classes, class_names } => {
            cmd_metrics(&common, &predictions, classes, class_names.as_deref())
        }
        Command::Gradcheck { common, corrupt_op } => cmd_gradcheck(&common, corrupt_op.as_deref()),
        Command::Synth { common, overrides } => cmd_synth(&common, &overrides),
        Command::Augment { common, input, policy, disable_random, image_size } => {
            cmd_augment(&common, &input, policy, disable_random, image_size)
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(common: &Common, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fsio::read_text(path)?;
        for e in parse_entries(&text)? {
            cfg.set(&e.key, &e.value)
                .map_err(|err| HgtError::Config(format!("{}:{}: {err}", path.display(), e.line)))?;
        }
    }
    apply_overrides(&mut cfg, common, ov)?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common, ov: &Overrides) -> Result<()> {
    let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
    set("seed", common.seed.map(|v| v.to_string()))?;
    set("image_size", ov.image_size.map(|v| v.to_string()))?;
    set("encoder_layers", ov.encoder_layers.map(|v| v.to_string()))?;
    set("max_epochs", ov.epochs.map(|v| v.to_string()))?;
    set("learning_rate", ov.lr.map(|v| v.to_string()))?;
    set("batch_size", ov.batch_size.map(|v| v.to_string()))?;
    set("patience", ov.patience.map(|v| v.to_string()))?;
    set("eval_threads", ov.eval_threads.map(|v| v.to_string()))?;
    if let Some(d) = &common.data {
        cfg.data_root = d.to_string_lossy().into_owned();
        cfg.synth_per_class = 0;
    }
    if ov.synth {
        cfg.synth_per_class = ov.per_class.unwrap_or(40);
        cfg.data_root.clear();
    } else if let Some(n) = ov.per_class {
        cfg.synth_per_class = n;
    }
    Ok(())
}

/// Class names and samples with the seeded stratified split applied.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<String>, Vec<ImageSample>)> {
    let (names, mut samples) = if cfg.synth_per_class > 0 {
        let mut rng = RngStream::new(cfg.train.seed, stream_id_for("synth"));
        (class_names(), synth_dataset(cfg.synth_per_class, cfg.model.image_size, &mut rng)?)
    } else if !cfg.data_root.is_empty() {
        dataset::load_tree(Path::new(&cfg.data_root))?
    } else {
        return Err(HgtError::Config("no data source: pass --data DIR or --synth".into()));
    };
    if names.len() != cfg.model.num_classes {
        return Err(HgtError::Config(format!(
            "dataset has {} classes but num_classes = {}",
            names.len(),
            cfg.model.num_classes
        )));
    }
    stratified_split(&mut samples, cfg.test_fraction, cfg.train.seed)?;
    for split in [Split::Train, Split::Test] {
        if !samples.iter().any(|s| s.split == split) {
            return Err(HgtError::Data(format!("{split:?} split is empty; add more samples per class")));
        }
    }
    Ok((names, samples))
}

fn split_refs(samples: &[ImageSample], split: Split) -> Vec<&ImageSample> {
    samples.iter().filter(|s| s.split == split).collect()
}

/// Predictions CSV, rendered report, confusion CSV and one ROC CSV per class
/// with both positives and negatives. Returns the report text.
pub fn write_eval_artifacts(out: &Path, names: &[String], ev: &Evaluation) -> Result<String> {
    let report = MetricsReport::from_records(&ev.records, names)?;
    let text = render_report(&report);
    fsio::write_atomic(&out.join("predictions.csv"), csv::predictions(&ev.records).as_bytes())?;
    fsio::write_atomic(&out.join("confusion.csv"), csv::confusion(&report.confusion, names).as_bytes())?;
    write_roc(out, &report)?;
    fsio::write_atomic(&out.join("report.txt"), text.as_bytes())?;
    Ok(text)
}

fn write_roc(out: &Path, report: &MetricsReport) -> Result<()> {
    for (k, curve) in report.roc.iter().enumerate() {
        if !curve.is_empty() {
            fsio::write_atomic(&out.join(format!("roc_class{k}.csv")), csv::roc(curve).as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_train(common: &Common, ov: &Overrides, resume: Option<&Path>, print_config: bool) -> Result<()> {
    let mut cfg = resolve_config(common, ov)?;
    if print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let resumed = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            cfg = ck.config.clone();
            let keep = Overrides { epochs: ov.epochs, eval_threads: ov.eval_threads, ..Default::default() };
            let no_data = Common { data: None, seed: None, ..common.clone() };
            apply_overrides(&mut cfg, &no_data, &keep)?;
            cfg.validate()?;
            Some(ck)
        }
        None => None,
    };
    let (names, samples) = load_data(&cfg)?;
    let train = split_refs(&samples, Split::Train);
    let test = split_refs(&samples, Split::Test);
    let mut trainer = match resumed {
        Some(ck) => {
            if ck.class_names != names {
                return Err(HgtError::Config("checkpoint class names differ from the dataset".into()));
            }
            let mut tr = ck.into_trainer();
            tr.config.max_epochs = cfg.train.max_epochs;
            tr
        }
        None => {
            let stats = compute_stats(train.iter().map(|s| &s.image))?;
            let model = HgtNet::new(cfg.model.clone(), cfg.train.seed)?;
            Trainer::new(model, cfg.train.clone(), cfg.train_policy.clone(), stats)?
        }
    };
    let out = &common.out;
    let (bs, threads) = (cfg.train.batch_size, cfg.eval_threads);
    println!(
        "training on {} samples, testing on {} ({} classes)",
        train.len(),
        test.len(),
        names.len()
    );
    let mut best: Option<Checkpoint> = None;
    while (trainer.epoch as usize) < trainer.config.max_epochs {
        let o = trainer.run_epoch_with(&train, &test, |m, s, st| evaluate_parallel(m, s, st, bs, threads))?;
        let r = o.record;
        println!(
            "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  test_loss {:.4}  test_acc {:.4}{}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.test_loss,
            r.test_acc,
            if o.improved { "  *" } else { "" }
        );
        let ck = Checkpoint::from_trainer(&trainer, &cfg, &names);
        ck.save(&out.join(LAST_CHECKPOINT))?;
        if o.improved {
            ck.save(&out.join(BEST_CHECKPOINT))?;
            best = Some(ck);
        }
        fsio::write_atomic(&out.join("history.csv"), csv::history(&trainer.history).as_bytes())?;
        if o.stop {
            println!("early stop: no improvement for {} epochs", trainer.config.patience);
            break;
        }
    }
    let best = match best {
        Some(b) => b,
        None if out.join(BEST_CHECKPOINT).exists() => Checkpoint::load(&out.join(BEST_CHECKPOINT))?,
        None => {
            let ck = Checkpoint::from_trainer(&trainer, &cfg, &names);
            ck.save(&out.join(BEST_CHECKPOINT))?;
            ck
        }
    };
    let ev = evaluate_parallel(&best.model(), &test, &best.stats, bs, threads)?;
    print!("{}", write_eval_artifacts(out, &names, &ev)?);
    Ok(())
}

fn cmd_eval(common: &Common, ov: &Overrides, checkpoint: Option<&Path>) -> Result<()> {
    let path = checkpoint.map_or_else(|| common.out.join(BEST_CHECKPOINT), Path::to_path_buf);
    let ck = Checkpoint::load(&path)?;
    let mut cfg = ck.config.clone();
    let ov = Overrides { synth: ov.synth, per_class: ov.per_class, eval_threads: ov.eval_threads, ..Default::default() };
    apply_overrides(&mut cfg, common, &ov)?;
    cfg.validate()?;
    let (names, samples) = load_data(&cfg)?;
    if names.len() != ck.class_names.len() {
        return Err(HgtError::Config("checkpoint and dataset disagree on the number of classes".into()));
    }
    let test = split_refs(&samples, Split::Test);
    let ev = evaluate_parallel(&ck.model(), &test, &ck.stats, cfg.train.batch_size, cfg.eval_threads)?;
    print!("{}", write_eval_artifacts(&common.out, &ck.class_names, &ev)?);
    Ok(())
}

fn cmd_metrics(common: &Common, predictions: &Path, classes: Option<usize>, names: Option<&str>) -> Result<()> {
    let names: Option<Vec<String>> = names.map(|n| n.split(',').map(|s| s.trim().to_string()).collect());
    let k = classes.or(names.as_ref().map(Vec::len));
    let text = fsio::read_text(predictions)?;
    let records = csv::parse_predictions(predictions, &text, k)?;
    let k = records[0].scores.len();
    let names = names.unwrap_or_else(|| (0..k).map(|i| format!("class_{i}")).collect());
    if names.len() != k {
        return Err(HgtError::Config(format!("{} class names for {k} classes", names.len())));
    }
    let report = MetricsReport::from_records(&records, &names)?;
    write_roc(&common.out, &report)?;
    print!("{}", render_report(&report));
    Ok(())
}

fn cmd_gradcheck(common: &Common, corrupt: Option<&str>) -> Result<()> {
    let seed = match common.config {
        Some(_) => resolve_config(common, &Overrides::default())?.train.seed,
        None => common.seed.unwrap_or(0),
    };
    let results = run_suite(seed, corrupt)?;
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.passed();
        println!(
            "{:<24} instances {:>3}  worst_rel {:.3e}  worst_abs {:.3e}  tol {:.0e}  refined {:>2}  {}",
            r.name,
            r.instances,
            r.diff.worst_rel,
            r.diff.worst_abs,
            r.tolerance,
            r.diff.refined,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name);
        }
    }
    let worst = results.iter().map(|r| r.diff.worst_rel).fold(0.0, f64::max);
    println!("worst relative error {worst:.3e} over {} checks", results.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HgtError::GradCheck(failed.join(", ")))
    }
}

fn cmd_synth(common: &Common, ov: &Overrides) -> Result<()> {
    let mut cfg = resolve_config(common, ov)?;
    if cfg.synth_per_class == 0 {
        cfg.synth_per_class = 40;
    }
    let mut rng = RngStream::new(cfg.train.seed, stream_id_for("synth"));
    let samples = synth_dataset(cfg.synth_per_class, cfg.model.image_size, &mut rng)?;
    let n = dataset::write_tree(&common.out, &class_names(), &samples)?;
    println!("wrote {n} images under {}", common.out.display());
    Ok(())
}

fn cmd_augment(
    common: &Common,
    input: &Path,
    kind: PolicyKind,
    disable_random: bool,
    image_size: Option<usize>,
) -> Result<()> {
    let ov = Overrides { image_size, ..Default::default() };
    let cfg = resolve_config(common, &ov)?;
    let mut policy = match kind {
        PolicyKind::Train => cfg.train_policy,
        PolicyKind::Test => cfg.test_policy,
    };
    if disable_random {
        policy = policy.without_randomness();
    }
    let bytes = fsio::read(input)?;
    let img = ppm::decode(&bytes).map_err(|msg| HgtError::Image { path: input.to_path_buf(), msg })?;
    let after = policy.apply(&img, &RngStream::new(cfg.train.seed, stream_id_for("augment")))?;
    let stem = input.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let before_path = common.out.join(format!("{stem}_before.ppm"));
    let after_path = common.out.join(format!("{stem}_after.ppm"));
    fsio::write_atomic(&before_path, &ppm::encode(&img))?;
    fsio::write_atomic(&after_path, &ppm::encode(&after))?;
    println!("wrote {} and {}", before_path.display(), after_path.display());
    Ok(())
}
