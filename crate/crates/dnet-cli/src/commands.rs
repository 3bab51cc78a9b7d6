//! The five subcommands: corpus generation, training, evaluation, per-cloud
//! scoring, and the ablation grid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dnet::geometry::{
    Dataset, ManifestEntry, Rotation, ShapeKind, Split, SynthOptions, export_ply_scalar,
    load_cloud, save_cloud, synth_split, write_manifest,
};
use dnet::model::{
    CkptMeta, Model, TaskKind, TrainOptions, Trainer, evaluate_classifier, load_checkpoint,
    save_checkpoint,
};
use dnet::sgc::GateMode;
use dnet::sps::Sampling;
use dnet::fusion::FusionMode;
use dnet::{Error, Result};

use crate::config::RunConfig;

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn make_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

// ── gen-data ───────────────────────────────────────────────────────────────

pub struct GenDataArgs {
    pub out: PathBuf,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub noise: f32,
    pub rotation: Rotation,
    pub seed: u64,
}

/// Writes a synthetic eight-class corpus under `out/` with a manifest.
pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let total = args.train_per_class + args.test_per_class;
    if total == 0 {
        return Err(Error::Config("corpus would be empty".into()));
    }
    let opts = SynthOptions {
        noise_sigma: args.noise,
        rotation: args.rotation,
        surface_seed: None,
    };
    // One seed stream per class covers both splits, so they cannot collide.
    let clouds = synth_split(total, args.points, &opts, args.seed)?;
    make_dir(&args.out.join("train"))?;
    make_dir(&args.out.join("test"))?;
    let mut entries = Vec::with_capacity(clouds.len());
    for (i, cloud) in clouds.iter().enumerate() {
        let (class, in_class) = (i / total, i % total);
        let name = ShapeKind::ALL[class].name();
        let (split, idx) = if in_class < args.train_per_class {
            (Split::Train, in_class)
        } else {
            (Split::Test, in_class - args.train_per_class)
        };
        let rel = format!("{}/{name}_{idx:04}.xyz", split.as_str());
        save_cloud(cloud, args.out.join(&rel))?;
        entries.push(ManifestEntry { path: rel, label: class as u32, split });
    }
    write_manifest(&entries, args.out.join("manifest.csv"))?;
    println!(
        "wrote {} clouds ({} train / {} test per class, {} points each) to {}",
        entries.len(),
        args.train_per_class,
        args.test_per_class,
        args.points,
        args.out.display()
    );
    Ok(())
}

// ── train ──────────────────────────────────────────────────────────────────

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: RunConfig,
    pub resume: Option<PathBuf>,
    pub model_seed: u64,
    pub quiet: bool,
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() { data.join("manifest.csv") } else { data.to_path_buf() }
}

/// Trains a classifier on a corpus, logging metrics and checkpointing.
pub fn train(args: &TrainArgs) -> Result<()> {
    let config = args.config.clone();
    let dataset = Dataset::open(manifest_path(&args.data))?;
    let classes = dataset.num_classes();
    if config.model.classes != classes {
        return Err(Error::Config(format!(
            "config expects {} classes but the corpus has {classes}; set classes = {classes}",
            config.model.classes
        )));
    }
    if config.model.task != TaskKind::Classify {
        return Err(Error::Config("train drives the whole-cloud task".into()));
    }
    let train_set = dataset.load_split(Split::Train)?;
    let test_set = dataset.load_split(Split::Test)?;

    make_dir(&args.out)?;
    write_text(&args.out.join("config.resolved"), &config.resolved())?;
    if !args.quiet {
        print!("{}", config.resolved());
        println!(
            "corpus: {} train / {} test clouds, {classes} classes",
            train_set.len(),
            test_set.len()
        );
    }

    let mut trainer = match &args.resume {
        Some(ckpt_path) => {
            let ck = load_checkpoint(ckpt_path)?;
            if *ck.model.config() != config.model {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint {} was trained with a different configuration; \
                     drop --resume or match the config",
                    ckpt_path.display()
                )));
            }
            let adam = ck.adam.ok_or_else(|| {
                Error::State("checkpoint has no optimizer state; cannot resume".into())
            })?;
            if !args.quiet {
                println!("resuming from {} at epoch {}", ckpt_path.display(), ck.meta.epoch);
            }
            Trainer::from_parts(ck.model, adam, config.train, ck.meta.epoch as usize)
        }
        None => Trainer::new(Model::new(config.model.clone(), args.model_seed)?, config.train),
    };

    let metrics_path = args.out.join("metrics.csv");
    let mut metrics = if trainer.epochs_done() == 0 {
        String::from("epoch,train_loss,test_acc\n")
    } else {
        std::fs::read_to_string(&metrics_path).unwrap_or_else(|_| String::from("epoch,train_loss,test_acc\n"))
    };
    let mut best_acc = 0.0f64;
    while trainer.epochs_done() < config.train.epochs {
        let stats = trainer.run_epoch(&train_set)?;
        let acc = evaluate_classifier(trainer.model(), &test_set)?;
        writeln!(metrics, "{},{:.6},{:.4}", stats.epoch, stats.mean_loss, acc).unwrap();
        write_text(&metrics_path, &metrics)?;
        if !args.quiet {
            println!(
                "epoch {:>3}/{} loss {:.4} test acc {:.4}",
                stats.epoch, config.train.epochs, stats.mean_loss, acc
            );
        }
        let meta = CkptMeta {
            init_seed: args.model_seed,
            epoch: trainer.epochs_done() as u64,
            adam_step: trainer.adam().step_count(),
            note: format!("test acc {acc:.4}"),
        };
        save_checkpoint(args.out.join("last.ckpt"), trainer.model(), Some(trainer.adam()), &meta)?;
        if acc >= best_acc {
            best_acc = acc;
            save_checkpoint(args.out.join("best.ckpt"), trainer.model(), Some(trainer.adam()), &meta)?;
        }
    }
    println!("done: best test acc {best_acc:.4}; checkpoints in {}", args.out.display());
    Ok(())
}

// ── eval ───────────────────────────────────────────────────────────────────

pub struct EvalArgs {
    pub data: PathBuf,
    pub ckpt: PathBuf,
    pub split: Split,
}

/// Prints the accuracy of a checkpoint on one corpus split.
pub fn eval(args: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&args.ckpt)?;
    let dataset = Dataset::open(manifest_path(&args.data))?;
    if dataset.num_classes() > ck.model.config().classes {
        return Err(Error::ConfigMismatch(format!(
            "corpus has {} classes, checkpoint handles {}",
            dataset.num_classes(),
            ck.model.config().classes
        )));
    }
    let clouds = dataset.load_split(args.split)?;
    let acc = evaluate_classifier(&ck.model, &clouds)?;
    println!(
        "{} accuracy {:.4} over {} clouds ({})",
        args.split.as_str(),
        acc,
        clouds.len(),
        args.ckpt.display()
    );
    Ok(())
}

// ── score ──────────────────────────────────────────────────────────────────

pub struct ScoreArgs {
    pub ckpt: PathBuf,
    pub cloud: PathBuf,
    pub ply: Option<PathBuf>,
    pub top: usize,
    pub dump_weights: bool,
}

/// Runs one cloud through a checkpoint and reports scores and prediction.
pub fn score(args: &ScoreArgs) -> Result<()> {
    let ck = load_checkpoint(&args.ckpt)?;
    let cloud = load_cloud(&args.cloud)?;
    let report = ck.model.inspect(&cloud)?;

    let pred = report.predicted[0];
    let name = ShapeKind::from_label(pred).map(|k| k.name()).unwrap_or("?");
    println!("cloud: {} ({} points)", args.cloud.display(), cloud.len());
    println!("prediction: class {pred} ({name})");
    let logits: Vec<String> = report.logits.iter().map(|v| format!("{v:.3}")).collect();
    println!("logits: [{}]", logits.join(", "));

    if let Some(alpha) = &report.alpha {
        let (mut lo, mut hi, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
        for &a in alpha {
            lo = lo.min(a);
            hi = hi.max(a);
            sum += a as f64;
        }
        println!(
            "distinction scores: min {lo:.4}  mean {:.4}  max {hi:.4}",
            sum / alpha.len() as f64
        );
        if let Some((high, low)) = &report.subsets {
            let k = args.top.min(high.len());
            println!("most distinctive points: {:?}", &high[..k]);
            println!("least distinctive points: {:?}", &low[..k]);
        }
        if let Some(path) = &args.ply {
            export_ply_scalar(&cloud, alpha, path)?;
            println!("wrote scored cloud to {}", path.display());
        }
    } else if args.ply.is_some() {
        return Err(Error::Config(
            "this checkpoint does not produce distinction scores (sampling is not attentive)"
                .into(),
        ));
    }

    if let Some(psi) = &report.psi {
        for (row, branch) in psi.iter().zip(ck.model.config().branches.names()) {
            let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / row.len() as f64;
            println!("fusion weight mean, {branch} branch: {mean:.4}");
        }
    }
    if args.dump_weights {
        println!("{:<24} {:>12} {:>12}", "parameter", "shape", "l2 norm");
        for p in ck.model.params().iter() {
            let norm: f64 =
                p.value.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            println!("{:<24} {:>12} {:>12.4}", p.name, format!("{:?}", p.value.shape()), norm);
        }
    }
    Ok(())
}

// ── ablate ─────────────────────────────────────────────────────────────────

pub struct AblateArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: RunConfig,
    pub groups: Vec<String>,
    pub seeds: u64,
    pub quiet: bool,
}

struct Cell {
    id: String,
    group: &'static str,
    mutate: Box<dyn Fn(&mut RunConfig)>,
}

fn cell(id: impl Into<String>, group: &'static str, f: impl Fn(&mut RunConfig) + 'static) -> Cell {
    Cell { id: id.into(), group, mutate: Box::new(f) }
}

fn grid() -> Vec<Cell> {
    let mut cells = vec![
        cell("sampling=attentive", "sampling", |c| c.model.sampling = Sampling::Attentive),
        cell("sampling=farthest", "sampling", |c| c.model.sampling = Sampling::Farthest),
        cell("sampling=random", "sampling", |c| c.model.sampling = Sampling::Random),
        cell("gate=scalar", "gate", |c| c.model.sgc.gate = GateMode::Scalar),
        cell("gate=channel", "gate", |c| c.model.sgc.gate = GateMode::Channel),
        cell("gate=off", "gate", |c| c.model.sgc.gate = GateMode::Off),
        cell("fusion=learned", "fusion", |c| c.model.fusion.mode = FusionMode::Learned),
        cell("fusion=max", "fusion", |c| c.model.fusion.mode = FusionMode::Max),
        cell("fusion=mean", "fusion", |c| c.model.fusion.mode = FusionMode::Mean),
        cell("fusion=concat", "fusion", |c| c.model.fusion.mode = FusionMode::Concat),
        cell("sets=all", "sets", |c| {
            c.model.branches.full = true;
            c.model.branches.high = true;
            c.model.branches.low = true;
        }),
        cell("sets=full", "sets", |c| {
            c.model.branches.full = true;
            c.model.branches.high = false;
            c.model.branches.low = false;
        }),
        cell("sets=high+low", "sets", |c| {
            c.model.branches.full = false;
            c.model.branches.high = true;
            c.model.branches.low = true;
        }),
    ];
    for k in [5usize, 10, 15, 20, 25, 30] {
        cells.push(cell(format!("k={k}"), "k", move |c| c.model.sgc.k = k));
    }
    for r in [0.125f32, 0.1875, 0.25, 0.3125, 0.375] {
        cells.push(cell(format!("n1_ratio={r}"), "n1", move |c| c.model.n1_ratio = r));
    }
    cells
}

/// Trains every requested grid cell over several seeds and writes a CSV.
pub fn ablate(args: &AblateArgs) -> Result<()> {
    let dataset = Dataset::open(manifest_path(&args.data))?;
    let train_set = dataset.load_split(Split::Train)?;
    let test_set = dataset.load_split(Split::Test)?;
    if args.seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let cells: Vec<Cell> = grid()
        .into_iter()
        .filter(|c| {
            args.groups.is_empty()
                || args.groups.iter().any(|g| g == "all" || g == c.group)
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::Config(format!(
            "no ablation groups match {:?} (try sampling, gate, fusion, sets, k, n1, all)",
            args.groups
        )));
    }

    let mut csv = String::new();
    csv.push_str("# accuracy per ablation cell; mean/std over model seeds\n");
    csv.push_str("# full-scale reference runs (1024-point corpus, full widths):\n");
    csv.push_str("#   sampling=attentive 0.9315, fusion=max 0.9234, k=20 0.9315, n1_ratio=0.3125 0.9315\n");
    csv.push_str("cell_id,group,sampling,gate,fusion,sets,k,n1_ratio,seed_count,mean_acc,std_acc\n");

    for c in &cells {
        let mut cfg = args.config.clone();
        cfg.model.classes = dataset.num_classes();
        (c.mutate)(&mut cfg);
        let mut accs = Vec::with_capacity(args.seeds as usize);
        for s in 0..args.seeds {
            let mut trainer =
                Trainer::new(Model::new(cfg.model.clone(), 1000 + s)?, TrainOptions {
                    seed: cfg.train.seed + s,
                    ..cfg.train
                });
            for _ in 0..cfg.train.epochs {
                trainer.run_epoch(&train_set)?;
            }
            let acc = evaluate_classifier(trainer.model(), &test_set)?;
            accs.push(acc);
            if !args.quiet {
                println!("{} seed {s}: acc {acc:.4}", c.id);
            }
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
        let sets = format!(
            "{}{}{}",
            if cfg.model.branches.full { "F" } else { "" },
            if cfg.model.branches.high { "H" } else { "" },
            if cfg.model.branches.low { "L" } else { "" },
        );
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{:.4},{:.4}",
            c.id,
            c.group,
            cfg.model.sampling.name(),
            cfg.model.sgc.gate.name(),
            cfg.model.fusion.mode.name(),
            sets,
            cfg.model.sgc.k,
            cfg.model.n1_ratio,
            args.seeds,
            mean,
            var.sqrt()
        )
        .unwrap();
        write_text(&args.out, &csv)?;
    }
    println!("wrote {} ablation cells to {}", cells.len(), args.out.display());
    Ok(())
}

// ── tests ─────────────────────────────────────────────────────────────────
