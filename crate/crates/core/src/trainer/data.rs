use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::phantom::{degrade_labels, Degradation};
use crate::volume::{apply_zscore, zscore_stats, LabelVolume, ModalitySample, Slice2D, SliceGroup};
use crate::{Error, Result};

use super::config::Augmentation;

/// One cross-validation split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Shuffles the ids with `seed` and deals them round-robin into `k`
/// validation sets; each fold trains on the remaining ids.
pub fn make_folds(ids: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("need k >= 2 folds, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Config(format!("{} subjects cannot fill {k} folds", ids.len())));
    }
    let mut order = ids.to_vec();
    order.sort();
    order.dedup();
    if order.len() != ids.len() {
        return Err(Error::Config("duplicate subject ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok((0..k)
        .map(|f| {
            let (val, train): (Vec<_>, Vec<_>) = order.iter().enumerate().partition(|(i, _)| i % k == f);
            Fold {
                index: f,
                train: train.into_iter().map(|(_, id)| id.clone()).collect(),
                val: val.into_iter().map(|(_, id)| id.clone()).collect(),
            }
        })
        .collect())
}

fn flip_rows(s: &mut Slice2D) {
    for c in &mut s.channels {
        for row in c.chunks_mut(s.nx) {
            row.reverse();
        }
    }
}

fn jitter(s: &mut Slice2D, aug: &Augmentation, rng: &mut impl Rng) {
    let draw = |rng: &mut dyn rand::RngCore, a: f64| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
    let gamma = 1.0 + draw(rng, aug.hue);
    let gain = 1.0 + draw(rng, aug.contrast);
    let offset = draw(rng, aug.brightness);
    if gamma == 1.0 && gain == 1.0 && offset == 0.0 {
        return;
    }
    for c in &mut s.channels {
        for v in c.iter_mut().filter(|v| **v != 0.0) {
            let x = *v as f64;
            let y = x.signum() * x.abs().powf(gamma) * gain + offset;
            // keep background distinguishable from tissue
            *v = if y == 0.0 { f32::MIN_POSITIVE } else { y as f32 };
        }
    }
}

/// Random horizontal flip of all four planes, then independent intensity
/// jitter of T1w and FA. Only nonzero (foreground) intensities change.
pub fn augment_slice(group: &SliceGroup, aug: &Augmentation, rng: &mut impl Rng) -> SliceGroup {
    let mut g = group.clone();
    if aug.flip_p > 0.0 && rng.random_bool(aug.flip_p) {
        for s in [&mut g.t1w, &mut g.fa, &mut g.precise, &mut g.coarse] {
            flip_rows(s);
        }
    }
    jitter(&mut g.t1w, aug, rng);
    jitter(&mut g.fa, aug, rng);
    g
}

/// Raw volumes of one subject with its normalization statistics.
#[derive(Clone, Debug)]
pub struct PreparedSubject {
    pub sample: ModalitySample,
    pub t1w_stats: Option<(f64, f64)>,
    pub fa_stats: Option<(f64, f64)>,
}

impl PreparedSubject {
    pub fn new(sample: ModalitySample) -> Self {
        PreparedSubject {
            t1w_stats: zscore_stats(sample.t1w.data()),
            fa_stats: zscore_stats(sample.fa.data()),
            sample,
        }
    }

    /// Replaces the precise labels by a boundary-flipped copy.
    pub fn with_noisy_labels(mut self, rate: f64, seed: u64, stream: u64) -> Result<Self> {
        if rate > 0.0 {
            let d = Degradation {
                flip_rate: rate,
                ..Degradation::none()
            };
            self.sample.precise = degrade_labels(&self.sample.precise, &d, seed, stream)?;
        }
        Ok(self)
    }

    pub fn num_slices(&self) -> usize {
        self.sample.geometry().dims()[2]
    }

    /// Raw (un-normalized) planes at `z = k`.
    pub fn slice_group(&self, k: usize) -> SliceGroup {
        let [nx, ny, _] = self.sample.geometry().dims();
        let plane = nx * ny;
        let cut = |d: &[f32]| d[k * plane..(k + 1) * plane].to_vec();
        let labels = |l: &LabelVolume| {
            l.channels()
                .iter()
                .map(|c| c[k * plane..(k + 1) * plane].iter().map(|&v| v as f32).collect())
                .collect()
        };
        let mk = |channels| Slice2D {
            subject: self.sample.id.clone(),
            k,
            nx,
            ny,
            channels,
        };
        SliceGroup {
            t1w: mk(vec![cut(self.sample.t1w.data())]),
            fa: mk(vec![cut(self.sample.fa.data())]),
            precise: mk(labels(&self.sample.precise)),
            coarse: mk(labels(&self.sample.coarse)),
        }
    }
}

/// Smallest multiple of 16 that is at least `n`.
pub fn padded_len(n: usize) -> usize {
    n.div_ceil(16) * 16
}

/// Mirror index without repeating the edge sample (`reflect` mode).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Pads an `h×w` plane to `ph×pw` by reflecting past the bottom and right
/// edges. A plane already at the target size is copied unchanged.
pub fn pad_reflect(src: &[f32], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        let row = &src[reflect(y, h) * w..][..w];
        out.extend((0..pw).map(|x| row[reflect(x, w)]));
    }
    out
}

/// Top-left `h×w` window of a `ph×pw` plane.
pub fn crop(src: &[f32], pw: usize, h: usize, w: usize) -> Vec<f32> {
    (0..h).flat_map(|y| src[y * pw..y * pw + w].iter().copied()).collect()
}

/// Network-ready tensors for a list of slice groups, padded to multiples
/// of 16 and z-scored with the owning subjects' statistics.
pub struct Batch {
    pub t1w: Tensor<f32>,
    pub fa: Tensor<f32>,
    pub precise: Tensor<f64>,
    pub coarse: Tensor<f64>,
}

pub fn assemble_batch(groups: &[(SliceGroup, Option<(f64, f64)>, Option<(f64, f64)>)]) -> Result<Batch> {
    let first = &groups.first().ok_or_else(|| Error::Shape("empty batch".into()))?.0;
    let (h, w) = (first.t1w.ny, first.t1w.nx);
    let classes = first.precise.channels.len();
    let (ph, pw) = (padded_len(h), padded_len(w));
    let n = groups.len();
    let mut t1w = Vec::with_capacity(n * ph * pw);
    let mut fa = Vec::with_capacity(n * ph * pw);
    let mut precise = Vec::with_capacity(n * classes * ph * pw);
    let mut coarse = Vec::with_capacity(n * classes * ph * pw);
    for (g, ts, fs) in groups {
        if g.t1w.ny != h || g.t1w.nx != w || g.precise.channels.len() != classes {
            return Err(Error::Shape("slices in a batch must share size and classes".into()));
        }
        let norm = |s: &Slice2D, st| s.channels[0].iter().map(|&x| apply_zscore(x, st)).collect::<Vec<_>>();
        t1w.extend(pad_reflect(&norm(&g.t1w, *ts), h, w, ph, pw));
        fa.extend(pad_reflect(&norm(&g.fa, *fs), h, w, ph, pw));
        for c in 0..classes {
            precise.extend(pad_reflect(&g.precise.channels[c], h, w, ph, pw).into_iter().map(f64::from));
            coarse.extend(pad_reflect(&g.coarse.channels[c], h, w, ph, pw).into_iter().map(f64::from));
        }
    }
    Ok(Batch {
        t1w: Tensor::new(&[n, 1, ph, pw], t1w),
        fa: Tensor::new(&[n, 1, ph, pw], fa),
        precise: Tensor::new(&[n, classes, ph, pw], precise),
        coarse: Tensor::new(&[n, classes, ph, pw], coarse),
    })
}
