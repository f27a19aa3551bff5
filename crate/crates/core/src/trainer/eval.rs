use std::path::Path;

use crate::autograd::{Tape, Tensor};
use crate::metrics::{aggregate, evaluate_case, AggregateMetrics, MetricsReport};
use crate::model::{load_checkpoint, Dclnet, Forward, Mode};
use crate::phantom::Manifest;
use crate::volume::{apply_zscore, zscore_stats, LabelVolume, Volume3D};
use crate::{Error, Result};

use super::data::{crop, pad_reflect, padded_len};

/// Slices evaluated per forward pass during inference.
const INFER_BATCH: usize = 8;

/// Binarized P₁ labels plus the per-class probability volumes.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub labels: LabelVolume,
    pub probabilities: Vec<Volume3D>,
    /// Whether slices had to be padded to a multiple of 16.
    pub padded: bool,
}

/// Slice-wise eval-mode inference on decoder 1. Inputs are z-scored the
/// same way as during training.
pub fn predict_subject(
    net: &Dclnet<f32>,
    t1w: &Volume3D,
    fa: &Volume3D,
    class_names: &[String],
    threshold: f64,
) -> Result<Prediction> {
    t1w.geometry().ensure_matches(fa.geometry(), "T1w vs FA")?;
    let classes = net.config().classes;
    if class_names.len() != classes {
        return Err(Error::Config(format!(
            "{} class names for a {classes}-class network",
            class_names.len()
        )));
    }
    let geometry = t1w.geometry().clone();
    let [nx, ny, nz] = geometry.dims();
    let (ph, pw) = (padded_len(ny), padded_len(nx));
    let padded = (ph, pw) != (ny, nx);
    if padded {
        log::info!("padding {ny}x{nx} slices to {ph}x{pw} (reflect), cropping after");
    }
    let plane = nx * ny;
    let (ts, fs) = (zscore_stats(t1w.data()), zscore_stats(fa.data()));
    let mut probs = vec![Vec::with_capacity(geometry.len()); classes];
    for k0 in (0..nz).step_by(INFER_BATCH) {
        let ks = k0..(k0 + INFER_BATCH).min(nz);
        let n = ks.len();
        let input = |v: &Volume3D, st| {
            let data = ks
                .clone()
                .flat_map(|k| {
                    let z: Vec<f32> = v.data()[k * plane..(k + 1) * plane].iter().map(|&x| apply_zscore(x, st)).collect();
                    pad_reflect(&z, ny, nx, ph, pw)
                })
                .collect();
            Tensor::new(&[n, 1, ph, pw], data)
        };
        let tape = Tape::inference();
        let f = Forward::new(&tape, net.params(), Mode::Eval, 0);
        let out = net.forward(&f, tape.constant(input(t1w, ts)), tape.constant(input(fa, fs)), false)?;
        let p1 = out.p1.value();
        for b in 0..n {
            for (c, dst) in probs.iter_mut().enumerate() {
                let start = (b * classes + c) * ph * pw;
                dst.extend(crop(&p1.data()[start..start + ph * pw], pw, ny, nx));
            }
        }
    }
    let probabilities = probs
        .into_iter()
        .map(|d| Volume3D::new(geometry.clone(), d))
        .collect::<Result<Vec<_>>>()?;
    let channels = probabilities
        .iter()
        .map(|p| p.data().iter().map(|&v| u8::from(v as f64 >= threshold)).collect())
        .collect();
    Ok(Prediction {
        labels: LabelVolume::new(geometry, class_names.to_vec(), channels)?,
        probabilities,
        padded,
    })
}

/// Per-subject reports and their summary.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub reports: Vec<(String, MetricsReport)>,
    pub aggregate: AggregateMetrics,
}

pub fn evaluate_model(net: &Dclnet<f32>, manifest: &Manifest, ids: &[String], threshold: f64) -> Result<Evaluation> {
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let s = manifest.load_sample(id)?;
        let p = predict_subject(net, &s.t1w, &s.fa, s.precise.class_names(), threshold)?;
        reports.push((id.clone(), evaluate_case(&p.labels, &s.precise)?));
    }
    Ok(Evaluation {
        aggregate: aggregate(&reports),
        reports,
    })
}

pub fn evaluate_checkpoint(path: &Path, manifest: &Manifest, ids: &[String], threshold: f64) -> Result<Evaluation> {
    let (net, _) = load_checkpoint::<f32>(path)?;
    evaluate_model(&net, manifest, ids, threshold)
}

/// Mean over classes of the 3-D Dice, skipping classes where it is
/// undefined. Cheaper than a full report; used for model selection.
pub fn mean_dice(pred: &LabelVolume, truth: &LabelVolume) -> Result<Option<f64>> {
    let counts = crate::metrics::confusion_counts(pred, truth)?;
    let d: Vec<f64> = counts.iter().filter_map(|c| crate::metrics::overlap_scores(c).dice).collect();
    Ok((!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64))
}
