use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use dclnet_core::metrics::evaluate_case;
use dclnet_core::model::load_checkpoint;
use dclnet_core::phantom::generate_dataset;
use dclnet_core::tractlabels::{read_streamlines, streamlines_to_label_volume, IslandPolicy, StreamlineBundle};
use dclnet_core::trainer::{
    make_folds, predict_subject, run_ablation_matrix, train_model, write_ablation_table, EpochLog,
};
use dclnet_core::volume::{default_class_names, read_geometry, read_label_volume, read_volume, write_label_volume, write_volume};
use dclnet_core::{Dclnet, Manifest, PhantomConfig, TrainConfig};

use crate::args::{Cli, Command};
use crate::plot;

/// A fully resolved invocation. Building one performs every check that
/// counts as a usage error; running it can only fail at runtime.
#[derive(Debug)]
pub enum Job {
    GenPhantom { cfg: PhantomConfig, n: usize, out: PathBuf },
    Voxelize {
        streamlines: PathBuf,
        geometry: PathBuf,
        tau: u32,
        policy: IslandPolicy,
        classes: Option<Vec<String>>,
        out: PathBuf,
    },
    Train { manifest: PathBuf, cfg: TrainConfig, fold: usize, out: PathBuf },
    Ablate { manifest: PathBuf, cfg: TrainConfig, folds: Option<Vec<usize>>, out: PathBuf },
    Eval { pred: PathBuf, truth: PathBuf, out: PathBuf },
    Predict { checkpoint: PathBuf, t1w: PathBuf, fa: PathBuf, threshold: f64, out: PathBuf },
    MetricsPlot { log: Option<PathBuf>, metrics: Option<PathBuf>, out: PathBuf },
    ModelSummary { checkpoint: Option<PathBuf>, cfg: TrainConfig, out: PathBuf },
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
}

fn train_config(cli: &Cli, preset: &str) -> Result<TrainConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => load_json::<TrainConfig>(p)?,
        None => TrainConfig::preset(preset)?,
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required_out(cli: &Cli) -> Result<PathBuf> {
    cli.global
        .out
        .clone()
        .with_context(|| format!("`{}` needs --out", cli.command.name()))
}

/// Refuses to write into a non-empty directory unless `--overwrite`.
fn check_dir(out: &Path, overwrite: bool) -> Result<()> {
    if overwrite || !out.exists() {
        return Ok(());
    }
    ensure!(out.is_dir(), "--out {} exists and is not a directory", out.display());
    let busy = fs::read_dir(out)
        .with_context(|| format!("listing {}", out.display()))?
        .next()
        .is_some();
    ensure!(!busy, "--out {} is not empty; pass --overwrite to reuse it", out.display());
    Ok(())
}

fn no_config(cli: &Cli) -> Result<()> {
    if cli.global.config.is_some() {
        bail!("--config is not used by `{}`", cli.command.name());
    }
    Ok(())
}

pub fn plan(cli: &Cli) -> Result<Job> {
    let overwrite = cli.global.overwrite;
    let job = match &cli.command {
        Command::GenPhantom { n } => {
            let mut cfg = match &cli.global.config {
                Some(p) => load_json::<PhantomConfig>(p)?,
                None => PhantomConfig::default(),
            };
            if let Some(s) = cli.global.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            ensure!(*n > 0, "--n must be at least 1");
            let out = required_out(cli)?;
            check_dir(&out, overwrite)?;
            Job::GenPhantom { cfg, n: *n, out }
        }
        Command::Voxelize {
            streamlines,
            geometry,
            tau,
            min_island,
            keep_largest,
            classes,
        } => {
            no_config(cli)?;
            ensure!(*tau >= 1, "--tau must be at least 1");
            let out = required_out(cli)?;
            check_dir(&out, overwrite)?;
            Job::Voxelize {
                streamlines: streamlines.clone(),
                geometry: geometry.clone(),
                tau: *tau,
                policy: if *keep_largest {
                    IslandPolicy::KeepLargest
                } else {
                    IslandPolicy::MinSize(*min_island)
                },
                classes: classes.clone(),
                out,
            }
        }
        Command::Train { manifest, fold, preset } => {
            let cfg = train_config(cli, preset)?;
            ensure!(*fold < cfg.folds, "--fold {fold} out of range 0..{}", cfg.folds);
            let out = required_out(cli)?;
            check_dir(&out, overwrite)?;
            Job::Train {
                manifest: manifest.clone(),
                cfg,
                fold: *fold,
                out,
            }
        }
        Command::Ablate { manifest, folds, preset } => {
            let cfg = train_config(cli, preset)?;
            if let Some(bad) = folds.iter().flatten().find(|&&f| f >= cfg.folds) {
                bail!("--folds entry {bad} out of range 0..{}", cfg.folds);
            }
            let out = required_out(cli)?;
            check_dir(&out, overwrite)?;
            Job::Ablate {
                manifest: manifest.clone(),
                cfg,
                folds: folds.clone(),
                out,
            }
        }
        Command::Eval { pred, truth } => {
            no_config(cli)?;
            let out = required_out(cli)?;
            ensure!(overwrite || !out.exists(), "--out {} exists; pass --overwrite", out.display());
            Job::Eval {
                pred: pred.clone(),
                truth: truth.clone(),
                out,
            }
        }
        Command::Predict {
            checkpoint,
            t1w,
            fa,
            threshold,
        } => {
            no_config(cli)?;
            ensure!(*threshold > 0.0 && *threshold < 1.0, "--threshold {threshold} outside (0, 1)");
            let out = required_out(cli)?;
            check_dir(&out, overwrite)?;
            Job::Predict {
                checkpoint: checkpoint.clone(),
                t1w: t1w.clone(),
                fa: fa.clone(),
                threshold: *threshold,
                out,
            }
        }
        Command::MetricsPlot { log, metrics } => {
            no_config(cli)?;
            ensure!(log.is_some() || metrics.is_some(), "`metrics-plot` needs --log and/or --metrics");
            let out = required_out(cli)?;
            Job::MetricsPlot {
                log: log.clone(),
                metrics: metrics.clone(),
                out,
            }
        }
        Command::ModelSummary { checkpoint, preset } => {
            if checkpoint.is_some() {
                no_config(cli)?;
            }
            Job::ModelSummary {
                checkpoint: checkpoint.clone(),
                cfg: train_config(cli, preset)?,
                out: cli.global.out.clone().unwrap_or_else(|| PathBuf::from(".")),
            }
        }
    };
    Ok(job)
}

impl Job {
    /// Directory that receives `run.json`.
    pub fn run_dir(&self) -> PathBuf {
        match self {
            Job::Eval { out, .. } => out.parent().map(Path::to_path_buf).unwrap_or_default(),
            Job::GenPhantom { out, .. }
            | Job::Voxelize { out, .. }
            | Job::Train { out, .. }
            | Job::Ablate { out, .. }
            | Job::Predict { out, .. }
            | Job::MetricsPlot { out, .. }
            | Job::ModelSummary { out, .. } => out.clone(),
        }
    }

    pub fn config_echo(&self) -> Value {
        match self {
            Job::GenPhantom { cfg, n, .. } => json!({ "phantom": cfg, "n": n }),
            Job::Voxelize {
                streamlines,
                geometry,
                tau,
                policy,
                classes,
                ..
            } => json!({ "streamlines": streamlines, "geometry": geometry, "tau": tau, "islands": policy, "classes": classes }),
            Job::Train { manifest, cfg, fold, .. } => json!({ "manifest": manifest, "fold": fold, "train": cfg }),
            Job::Ablate { manifest, cfg, folds, .. } => json!({ "manifest": manifest, "folds": folds, "train": cfg }),
            Job::Eval { pred, truth, .. } => json!({ "pred": pred, "truth": truth }),
            Job::Predict {
                checkpoint,
                t1w,
                fa,
                threshold,
                ..
            } => json!({ "checkpoint": checkpoint, "t1w": t1w, "fa": fa, "threshold": threshold }),
            Job::MetricsPlot { log, metrics, .. } => json!({ "log": log, "metrics": metrics }),
            Job::ModelSummary { checkpoint, cfg, .. } => json!({ "checkpoint": checkpoint, "model": cfg.model_config() }),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::GenPhantom { cfg, .. } => Some(cfg.seed),
            Job::Train { cfg, .. } | Job::Ablate { cfg, .. } => Some(cfg.seed),
            _ => None,
        }
    }

    pub fn run(&self, quiet: bool) -> Result<()> {
        let say = |s: String| {
            if !quiet {
                println!("{s}");
            }
        };
        match self {
            Job::GenPhantom { cfg, n, out } => {
                let m = generate_dataset(cfg, *n, out)?;
                say(format!("wrote {} subjects to {}", m.subjects.len(), out.display()));
            }
            Job::Voxelize {
                streamlines,
                geometry,
                tau,
                policy,
                classes,
                out,
            } => {
                let lines = read_streamlines(streamlines)?;
                let classes = classes.clone().unwrap_or_else(|| {
                    let mut seen: Vec<String> = Vec::new();
                    for s in &lines {
                        if !seen.contains(&s.class) {
                            seen.push(s.class.clone());
                        }
                    }
                    seen
                });
                let bundle = StreamlineBundle::new(classes, lines)?;
                let g = read_geometry(geometry)?;
                let labels = streamlines_to_label_volume(&bundle, &g, *tau, *policy)?;
                write_label_volume(&labels, out)?;
                for (c, name) in labels.class_names().iter().enumerate() {
                    say(format!("{name}: {} voxels", labels.count(c)));
                }
            }
            Job::Train { manifest, cfg, fold, out } => {
                let m = Manifest::load(manifest)?;
                let rec = train_model(&m, cfg, *fold, out)?;
                say(format!(
                    "fold {fold}: best epoch {} val_dice {} ({:.0}s); checkpoint {}",
                    rec.best_epoch,
                    rec.best_val_dice.map_or("n/a".into(), |d| format!("{d:.4}")),
                    rec.seconds,
                    rec.best_checkpoint.display()
                ));
            }
            Job::Ablate { manifest, cfg, folds, out } => {
                let m = Manifest::load(manifest)?;
                let folds = match folds {
                    Some(f) => f.clone(),
                    None => (0..make_folds(&m.ids(), cfg.folds, cfg.seed)?.len()).collect(),
                };
                let table = run_ablation_matrix(&m, cfg, &folds, out)?;
                write_ablation_table(&table, out)?;
                say(fs::read_to_string(out.join("table3.csv"))?);
            }
            Job::Eval { pred, truth, out } => {
                let p = read_label_volume(pred)?;
                let t = read_label_volume(truth)?;
                let report = evaluate_case(&p, &t)?;
                if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                fs::write(out, serde_json::to_string_pretty(&report.to_json())? + "\n")
                    .with_context(|| format!("writing {}", out.display()))?;
                say(format!(
                    "mean dice {}",
                    report.mean.dice.map_or("n/a".into(), |d| format!("{d:.4}"))
                ));
            }
            Job::Predict {
                checkpoint,
                t1w,
                fa,
                threshold,
                out,
            } => {
                let (net, meta) = load_checkpoint::<f32>(checkpoint)?;
                let names = checkpoint_classes(&net, &meta);
                let p = predict_subject(&net, &read_volume(t1w)?, &read_volume(fa)?, &names, *threshold)?;
                write_label_volume(&p.labels, &out.join("labels"))?;
                // class names may contain '/', so files are numbered
                let probs = out.join("probabilities");
                fs::create_dir_all(&probs)?;
                let mut files = Vec::new();
                for (c, v) in p.probabilities.iter().enumerate() {
                    let file = format!("class{c}.json");
                    write_volume(v, &probs.join(&file))?;
                    files.push(file);
                }
                let index = json!({ "classes": names, "files": files, "threshold": threshold, "padded": p.padded });
                fs::write(probs.join("probabilities.json"), serde_json::to_string_pretty(&index)? + "\n")?;
                for (c, name) in names.iter().enumerate() {
                    say(format!("{name}: {} voxels", p.labels.count(c)));
                }
            }
            Job::MetricsPlot { log, metrics, out } => {
                fs::create_dir_all(out)?;
                if let Some(path) = log {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    let entries = text
                        .lines()
                        .enumerate()
                        .filter(|(_, l)| !l.trim().is_empty())
                        .map(|(i, l)| {
                            serde_json::from_str::<EpochLog>(l).with_context(|| format!("{} line {}", path.display(), i + 1))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let svg = out.join("loss_curves.svg");
                    plot::loss_curves(&entries, &svg)?;
                    say(format!("wrote {}", svg.display()));
                }
                if let Some(path) = metrics {
                    let report: Value = load_json(path)?;
                    let svg = out.join("class_metrics.svg");
                    plot::class_bars(&report, &svg)?;
                    say(format!("wrote {}", svg.display()));
                }
            }
            Job::ModelSummary { checkpoint, cfg, .. } => {
                let net = match checkpoint {
                    Some(p) => load_checkpoint::<f32>(p)?.0,
                    None => Dclnet::<f32>::new(cfg.model_config())?,
                };
                let counts = net.params().counts_by_prefix(2);
                let width = counts.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
                for (name, n) in &counts {
                    say(format!("{name:<width$}  {n:>9}"));
                }
                say(format!("{:<width$}  {:>9}", "total", net.num_parameters()));
            }
        }
        Ok(())
    }
}

fn checkpoint_classes(net: &Dclnet<f32>, meta: &Value) -> Vec<String> {
    let stored: Option<Vec<String>> = meta
        .get("class_names")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .filter(|v: &Vec<String>| v.len() == net.config().classes);
    stored.unwrap_or_else(|| {
        let mut names = default_class_names();
        names.resize_with(net.config().classes, Default::default);
        names.iter().enumerate().map(|(i, n)| if n.is_empty() { format!("class{i}") } else { n.clone() }).collect()
    })
}
