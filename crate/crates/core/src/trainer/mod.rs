//! Slice-based SGD training of the dual-label objective, cross-validation
//! folds, volumetric inference and the ablation matrix.

mod ablation;
mod config;
mod data;
mod eval;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{ablation_rows, run_ablation_matrix, write_ablation_table, AblationRow, AblationTable, RowResult};
pub use config::{Augmentation, TrainConfig, DESK_WIDTHS};
pub use data::{assemble_batch, augment_slice, crop, make_folds, pad_reflect, padded_len, Batch, Fold, PreparedSubject};
pub use eval::{evaluate_checkpoint, evaluate_model, mean_dice, predict_subject, Evaluation, Prediction};

use crate::autograd::{Tape, Tensor};
use crate::losses::{total_loss, LossBreakdown};
use crate::model::{apply_bn_updates, save_checkpoint, Dclnet, Forward, Mode, ParamId, ParamStore};
use crate::phantom::Manifest;
use crate::{Error, Result};

/// SGD with heavy-ball momentum: `v ← μv + g`, `θ ← θ − lr·v`.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<ParamId, Tensor<f32>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: Vec<(ParamId, Tensor<f32>)>) {
        let (lr, mu) = (self.lr as f32, self.momentum as f32);
        for (id, g) in grads {
            let v = self.velocity.entry(id).or_insert_with(|| Tensor::zeros(g.shape()));
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = mu * *vi + gi;
            }
            for (p, &vi) in store.get_mut(id).data_mut().iter_mut().zip(v.data()) {
                *p -= lr * vi;
            }
        }
    }
}

fn loss_of(
    net: &Dclnet<f32>,
    f: &Forward<'_, '_, f32>,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Option<Vec<(ParamId, Tensor<f32>)>>)> {
    let tape = f.tape();
    let out = net.forward(f, tape.constant(batch.t1w.clone()), tape.constant(batch.fa.clone()), cfg.use_dcl)?;
    let p1 = out.p1.value().cast::<f64>();
    let p2 = out.p2.map(|v| v.value().cast::<f64>());
    let coarse = cfg.use_dcl.then_some(&batch.coarse);
    let loss = total_loss(&p1, p2.as_ref(), &batch.precise, coarse, &cfg.loss)?;
    if !tape.grad_enabled() {
        return Ok((loss.breakdown, None));
    }
    let mut seeds = vec![(out.p1, loss.grad_p1.cast())];
    if let (Some(v), Some(g)) = (out.p2, loss.grad_p2.as_ref()) {
        seeds.push((v, g.cast()));
    }
    let mut grads = tape.backward(&seeds);
    Ok((loss.breakdown, Some(f.param_grads(&mut grads))))
}

/// Loss of a batch without updating anything.
pub fn batch_loss(net: &Dclnet<f32>, batch: &Batch, cfg: &TrainConfig, mode: Mode, dropout_seed: u64) -> Result<LossBreakdown> {
    let tape = Tape::inference();
    let f = Forward::new(&tape, net.params(), mode, dropout_seed);
    Ok(loss_of(net, &f, batch, cfg)?.0)
}

/// One forward/backward pass and optimizer update. Non-finite gradients
/// leave the parameters untouched and return [`Error::Divergence`].
pub fn train_step(
    net: &mut Dclnet<f32>,
    batch: &Batch,
    cfg: &TrainConfig,
    opt: &mut Sgd,
    dropout_seed: u64,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let (breakdown, grads, bn) = {
        let f = Forward::new(&tape, net.params(), Mode::Train, dropout_seed);
        let (breakdown, grads) = match loss_of(net, &f, batch, cfg) {
            Err(Error::NonFinite(m)) => return Err(Error::Divergence(m)),
            other => other?,
        };
        (breakdown, grads.expect("gradients recorded"), f.take_bn_updates())
    };
    if let Some((id, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        let name = &net.params().entry(*id).name;
        return Err(Error::Divergence(format!("non-finite gradient for {name}")));
    }
    opt.step(net.params_mut(), grads);
    apply_bn_updates(net.params_mut(), bn, cfg.bn_momentum);
    Ok(breakdown)
}

/// Mean training losses of one epoch and the validation score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub dice_loss: f64,
    pub bce_loss: f64,
    pub coarse_loss: f64,
    pub total: f64,
    /// Mean 3-D Dice of P₁ over the validation subjects.
    pub val_dice: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub best_checkpoint: PathBuf,
    pub seconds: f64,
    pub config: TrainConfig,
}

/// ChaCha8 stream ids under the training seed.
const STREAM_EPOCH: u64 = 1 << 32;
const STREAM_LABEL_NOISE: u64 = 2 << 32;

/// Loads and prepares subjects; training subjects optionally get noisy
/// precise labels.
fn prepare(manifest: &Manifest, ids: &[String], cfg: &TrainConfig, noisy: bool) -> Result<Vec<PreparedSubject>> {
    let all = manifest.ids();
    ids.iter()
        .map(|id| {
            let p = PreparedSubject::new(manifest.load_sample(id)?);
            if noisy {
                let pos = all.iter().position(|a| a == id).unwrap_or(0) as u64;
                p.with_noisy_labels(cfg.train_label_flip_rate, cfg.seed, STREAM_LABEL_NOISE + pos)
            } else {
                Ok(p)
            }
        })
        .collect()
}

fn validation_dice(net: &Dclnet<f32>, val: &[PreparedSubject], threshold: f64) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for s in val {
        let p = predict_subject(net, &s.sample.t1w, &s.sample.fa, s.sample.precise.class_names(), threshold)?;
        if let Some(d) = mean_dice(&p.labels, &s.sample.precise)? {
            scores.push(d);
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Runs one epoch over every axial slice of `train` in a seeded order.
pub fn train_epoch(
    net: &mut Dclnet<f32>,
    train: &[PreparedSubject],
    cfg: &TrainConfig,
    opt: &mut Sgd,
    epoch: usize,
) -> Result<LossBreakdown> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_EPOCH + epoch as u64);
    let mut order: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(s, p)| (0..p.num_slices()).map(move |k| (s, k)))
        .collect();
    order.shuffle(&mut rng);
    let mut sum = LossBreakdown::default();
    let mut steps = 0usize;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let groups: Vec<_> = chunk
            .iter()
            .map(|&(s, k)| {
                let p = &train[s];
                (augment_slice(&p.slice_group(k), &cfg.augmentation, &mut rng), p.t1w_stats, p.fa_stats)
            })
            .collect();
        let batch = assemble_batch(&groups)?;
        let dropout_seed = rng.random::<u64>();
        let l = train_step(net, &batch, cfg, opt, dropout_seed)
            .map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("epoch {epoch} batch {b}: {m}")),
                e => e,
            })?;
        sum.dice += l.dice;
        sum.bce += l.bce;
        sum.coarse += l.coarse;
        sum.total += l.total;
        steps += 1;
    }
    let n = steps.max(1) as f64;
    Ok(LossBreakdown {
        dice: sum.dice / n,
        bce: sum.bce / n,
        coarse: sum.coarse / n,
        total: sum.total / n,
        per_class: Vec::new(),
    })
}

fn write_line(file: &mut fs::File, path: &Path, log: &EpochLog) -> Result<()> {
    let line = serde_json::to_string(log)?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

/// Trains on one fold of the manifest. Writes `train_log.jsonl`,
/// `best.ckpt` and `run_record.json` under `out`.
pub fn train_model(manifest: &Manifest, cfg: &TrainConfig, fold: usize, out: &Path) -> Result<RunRecord> {
    cfg.validate()?;
    let folds = make_folds(&manifest.ids(), cfg.folds, cfg.seed)?;
    let f = folds
        .get(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} out of range 0..{}", cfg.folds)))?;
    let train = prepare(manifest, &f.train, cfg, true)?;
    let val = prepare(manifest, &f.val, cfg, false)?;
    train_prepared(&train, &val, cfg, fold, out)
}

/// Training loop on already loaded subjects.
pub fn train_prepared(
    train: &[PreparedSubject],
    val: &[PreparedSubject],
    cfg: &TrainConfig,
    fold: usize,
    out: &Path,
) -> Result<RunRecord> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let best_path = out.join("best.ckpt");
    let mut net = Dclnet::<f32>::new(cfg.model_config())?;
    let class_names = train.first().map(|s| s.sample.precise.class_names().to_vec()).unwrap_or_default();
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let start = Instant::now();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<f64>)> = None;
    for epoch in 0..cfg.epochs {
        let t = Instant::now();
        let l = match train_epoch(&mut net, train, cfg, &mut opt, epoch) {
            Err(Error::Divergence(m)) => {
                let last = out.join("last_finite.ckpt");
                save_checkpoint(&last, &net, serde_json::json!({ "fold": fold, "diverged_in_epoch": epoch }))?;
                return Err(Error::Divergence(format!("{m}; last finite weights in {}", last.display())));
            }
            other => other?,
        };
        let val_dice = validation_dice(&net, val, cfg.threshold)?;
        let entry = EpochLog {
            epoch,
            dice_loss: l.dice,
            bce_loss: l.bce,
            coarse_loss: l.coarse,
            total: l.total,
            val_dice,
        };
        write_line(&mut log_file, &log_path, &entry)?;
        log::info!(
            "fold {fold} epoch {epoch}: total {:.4} (dice {:.4}, bce {:.4}, coarse {:.4}) val_dice {} [{:.1}s]",
            l.total,
            l.dice,
            l.bce,
            l.coarse,
            val_dice.map_or("n/a".into(), |d| format!("{d:.4}")),
            t.elapsed().as_secs_f64()
        );
        let improved = match best {
            None => true,
            Some((_, prev)) => val_dice.unwrap_or(f64::NEG_INFINITY) > prev.unwrap_or(f64::NEG_INFINITY),
        };
        if improved {
            best = Some((epoch, val_dice));
            save_checkpoint(
                &best_path,
                &net,
                serde_json::json!({ "fold": fold, "epoch": epoch, "val_dice": val_dice, "class_names": class_names }),
            )?;
        }
        epochs.push(entry);
    }
    let (best_epoch, best_val_dice) = best.expect("at least one epoch");
    let record = RunRecord {
        fold,
        train_ids: train.iter().map(|s| s.sample.id.clone()).collect(),
        val_ids: val.iter().map(|s| s.sample.id.clone()).collect(),
        epochs,
        best_epoch,
        best_val_dice,
        best_checkpoint: best_path,
        seconds: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    let rec_path = out.join("run_record.json");
    fs::write(&rec_path, serde_json::to_vec_pretty(&record)?).map_err(|e| Error::io(&rec_path, e))?;
    Ok(record)
}
