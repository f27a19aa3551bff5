//! Overlap scores and average Hausdorff distance on binary label volumes.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::volume::{Geometry, LabelVolume};
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &[u8], truth: &[u8]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Per-class counts; label volumes must share geometry and classes.
pub fn confusion_counts(pred: &LabelVolume, truth: &LabelVolume) -> Result<Vec<ConfusionCounts>> {
    pred.ensure_compatible(truth, "prediction vs truth")?;
    Ok(pred
        .channels()
        .iter()
        .zip(truth.channels())
        .map(|(p, t)| ConfusionCounts::from_masks(p, t))
        .collect())
}

/// Dice, Jaccard and precision; `None` where the denominator is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapScores {
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    pub precision: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn overlap_scores(c: &ConfusionCounts) -> OverlapScores {
    OverlapScores {
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
    }
}

fn d2(a: [i64; 3], b: [i64; 3], spacing: [f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let d = (a[k] - b[k]) as f64 * spacing[k];
            d * d
        })
        .sum()
}

fn mean_nearest(from: &[[i64; 3]], nearest_d2: impl Fn([i64; 3]) -> f64) -> f64 {
    from.iter().map(|&a| nearest_d2(a).sqrt()).sum::<f64>() / from.len() as f64
}

/// Average Hausdorff distance between voxel sets, in mm, by exhaustive
/// search. `None` if either set is empty.
pub fn ahd_brute_force(a: &[[i64; 3]], b: &[[i64; 3]], spacing: [f64; 3]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let nearest = |set: &[[i64; 3]]| {
        let set = set.to_vec();
        move |p: [i64; 3]| set.iter().map(|&q| d2(p, q, spacing)).fold(f64::INFINITY, f64::min)
    };
    Some(0.5 * (mean_nearest(a, nearest(b)) + mean_nearest(b, nearest(a))))
}

/// Uniform bucket grid over integer voxel coordinates for nearest-point
/// queries.
struct PointGrid {
    cell: i64,
    origin: [i64; 3],
    size: [i64; 3],
    buckets: Vec<Vec<[i64; 3]>>,
    min_spacing: f64,
    spacing: [f64; 3],
}

impl PointGrid {
    fn new(points: &[[i64; 3]], spacing: [f64; 3]) -> Self {
        let cell = 4;
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let size = [0, 1, 2].map(|k| (hi[k] - lo[k]) / cell + 1);
        let mut buckets = vec![Vec::new(); (size[0] * size[1] * size[2]) as usize];
        let mut grid = PointGrid {
            cell,
            origin: lo,
            size,
            buckets: Vec::new(),
            min_spacing: spacing.iter().copied().fold(f64::INFINITY, f64::min),
            spacing,
        };
        for &p in points {
            let c = grid.cell_of(p);
            buckets[grid.flat(c)].push(p);
        }
        grid.buckets = buckets;
        grid
    }

    fn cell_of(&self, p: [i64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|k| (p[k] - self.origin[k]).div_euclid(self.cell))
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        (c[0] + self.size[0] * (c[1] + self.size[1] * c[2])) as usize
    }

    /// Squared distance to the nearest stored point. Cells are visited in
    /// Chebyshev rings around the query's cell until no unvisited cell can
    /// hold a closer point.
    fn nearest_d2(&self, p: [i64; 3]) -> f64 {
        let centre = self.cell_of(p);
        let mut best = f64::INFINITY;
        let max_ring = (0..3)
            .map(|k| centre[k].abs().max((centre[k] - self.size[k] + 1).abs()))
            .max()
            .unwrap_or(0)
            .max(self.size.iter().copied().max().unwrap_or(1));
        for r in 0..=max_ring {
            if r > 0 {
                // points in ring r are at least (r-1)·cell + 1 voxels away along some axis
                let gap = ((r - 1) * self.cell + 1) as f64 * self.min_spacing;
                if gap * gap > best {
                    break;
                }
            }
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let c = [centre[0] + dx, centre[1] + dy, centre[2] + dz];
                        if (0..3).any(|k| c[k] < 0 || c[k] >= self.size[k]) {
                            continue;
                        }
                        for &q in &self.buckets[self.flat(c)] {
                            best = best.min(d2(p, q, self.spacing));
                        }
                    }
                }
            }
        }
        best
    }
}

/// Average Hausdorff distance using bucket-grid nearest neighbours.
/// Bit-identical to [`ahd_brute_force`]: the same squared distances are
/// minimized and summed in the same order.
pub fn ahd(a: &[[i64; 3]], b: &[[i64; 3]], spacing: [f64; 3]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let (ga, gb) = (PointGrid::new(a, spacing), PointGrid::new(b, spacing));
    Some(0.5 * (mean_nearest(a, |p| gb.nearest_d2(p)) + mean_nearest(b, |p| ga.nearest_d2(p))))
}

/// Voxel coordinates of the set voxels of a mask.
pub fn mask_points(mask: &[u8], geometry: &Geometry) -> Vec<[i64; 3]> {
    mask.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| geometry.coords(i).map(|c| c as i64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    pub precision: Option<f64>,
    pub ahd: Option<f64>,
    pub counts: ConfusionCounts,
}

/// Means over the classes where each metric is defined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    pub precision: Option<f64>,
    pub ahd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub mean: MeanMetrics,
    /// Classes with at least one undefined metric.
    pub undefined: Vec<String>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsReport {
    pub fn from_classes(classes: Vec<ClassMetrics>) -> Self {
        let mean = MeanMetrics {
            dice: mean_defined(classes.iter().map(|c| c.dice)),
            jaccard: mean_defined(classes.iter().map(|c| c.jaccard)),
            precision: mean_defined(classes.iter().map(|c| c.precision)),
            ahd: mean_defined(classes.iter().map(|c| c.ahd)),
        };
        let undefined = classes
            .iter()
            .filter(|c| c.dice.is_none() || c.jaccard.is_none() || c.precision.is_none() || c.ahd.is_none())
            .map(|c| c.name.clone())
            .collect();
        MetricsReport {
            classes,
            mean,
            undefined,
        }
    }

    /// `{"classes": {name: {...}}, "mean": {...}, "undefined": [...]}`.
    pub fn to_json(&self) -> Value {
        let mut classes = Map::new();
        for c in &self.classes {
            classes.insert(
                c.name.clone(),
                json!({
                    "dice": c.dice,
                    "jaccard": c.jaccard,
                    "precision": c.precision,
                    "ahd": c.ahd,
                    "tp": c.counts.tp,
                    "fp": c.counts.fp,
                    "fn": c.counts.fn_,
                }),
            );
        }
        json!({
            "classes": classes,
            "mean": self.mean,
            "undefined": self.undefined,
        })
    }
}

/// Scores every class of a binarized prediction against the truth.
pub fn evaluate_case(pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricsReport> {
    let counts = confusion_counts(pred, truth)?;
    let g = truth.geometry();
    let classes = counts
        .into_iter()
        .enumerate()
        .map(|(c, counts)| {
            let s = overlap_scores(&counts);
            ClassMetrics {
                name: truth.class_names()[c].clone(),
                dice: s.dice,
                jaccard: s.jaccard,
                precision: s.precision,
                ahd: ahd(&mask_points(pred.channel(c), g), &mask_points(truth.channel(c), g), g.spacing()),
                counts,
            }
        })
        .collect();
    Ok(MetricsReport::from_classes(classes))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Mean and sample standard deviation of the defined values.
pub fn mean_sd(values: impl IntoIterator<Item = Option<f64>>) -> Option<MeanSd> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanSd { mean, sd, n })
}

/// Across-subject summary of per-subject reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub subjects: Vec<String>,
    pub dice: Option<MeanSd>,
    pub jaccard: Option<MeanSd>,
    pub precision: Option<MeanSd>,
    pub ahd: Option<MeanSd>,
    /// Per-class `(name, dice)` summaries.
    pub class_dice: Vec<(String, Option<MeanSd>)>,
}

pub fn aggregate(reports: &[(String, MetricsReport)]) -> AggregateMetrics {
    let pick = |f: fn(&MeanMetrics) -> Option<f64>| mean_sd(reports.iter().map(|(_, r)| f(&r.mean)));
    let names: Vec<String> = reports
        .first()
        .map(|(_, r)| r.classes.iter().map(|c| c.name.clone()).collect())
        .unwrap_or_default();
    let class_dice = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), mean_sd(reports.iter().map(|(_, r)| r.classes.get(i).and_then(|c| c.dice)))))
        .collect();
    AggregateMetrics {
        subjects: reports.iter().map(|(id, _)| id.clone()).collect(),
        dice: pick(|m| m.dice),
        jaccard: pick(|m| m.jaccard),
        precision: pick(|m| m.precision),
        ahd: pick(|m| m.ahd),
        class_dice,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_hand_values() {
        let s = overlap_scores(&ConfusionCounts {
            tp: 1,
            fp: 1,
            fn_: 1,
            tn: 5,
        });
        assert_eq!(s.dice, Some(0.5));
        assert_eq!(s.jaccard, Some(1.0 / 3.0));
        assert_eq!(s.precision, Some(0.5));
        let empty = overlap_scores(&ConfusionCounts::default());
        assert_eq!((empty.dice, empty.jaccard, empty.precision), (None, None, None));
    }

    #[test]
    fn contained_prediction_has_full_precision() {
        let truth = [1, 1, 1, 0, 0];
        let pred = [0, 1, 1, 0, 0];
        let s = overlap_scores(&ConfusionCounts::from_masks(&pred, &truth));
        assert_eq!(s.precision, Some(1.0));
    }

    #[test]
    fn ahd_single_pair_and_identity() {
        let a = [[0, 0, 0]];
        let b = [[3, 0, 0]];
        assert_eq!(ahd(&a, &b, [1.0; 3]), Some(3.0));
        assert_eq!(ahd_brute_force(&a, &b, [1.0; 3]), Some(3.0));
        let s = [[1, 2, 3], [4, 4, 4], [0, 9, 2]];
        assert_eq!(ahd(&s, &s, [1.0, 2.0, 0.5]), Some(0.0));
        assert_eq!(ahd(&s, &[], [1.0; 3]), None);
    }

    #[test]
    fn perfect_case_and_empty_class() {
        let g = Geometry::unit([4, 4, 2]).unwrap();
        let mut c0 = vec![0u8; g.len()];
        c0[3] = 1;
        c0[9] = 1;
        let truth = LabelVolume::new(g.clone(), vec!["a".into(), "b".into()], vec![c0, vec![0; g.len()]]).unwrap();
        let r = evaluate_case(&truth, &truth).unwrap();
        assert_eq!(r.classes[0].dice, Some(1.0));
        assert_eq!(r.classes[0].ahd, Some(0.0));
        assert_eq!(r.undefined, vec!["b".to_string()]);
        assert_eq!(r.mean.dice, Some(1.0));
        let j = r.to_json();
        assert_eq!(j["classes"]["a"]["tp"], 2);
        assert!(j["classes"]["b"]["dice"].is_null());
    }

    #[test]
    fn mismatched_geometry_is_an_error() {
        let a = LabelVolume::empty(Geometry::unit([2, 2, 2]).unwrap(), vec!["a".into()]);
        let b = LabelVolume::empty(Geometry::unit([2, 2, 3]).unwrap(), vec!["a".into()]);
        assert!(evaluate_case(&a, &b).is_err());
    }
}
