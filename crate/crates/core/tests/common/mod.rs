//! Oracles and generators shared by the integration targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use dclnet_core::tractlabels::Streamline;
use rand::Rng;

/// Random polyline inside (and slightly beyond) a cube of side `n`, with
/// no repeated consecutive points.
pub fn random_streamline(rng: &mut impl Rng, n: usize, id: usize) -> Streamline {
    let side = n as f64;
    let count = rng.random_range(2..8);
    let mut points = vec![[0.0; 3].map(|_| rng.random_range(-1.0..side))];
    while points.len() < count {
        let last = *points.last().unwrap();
        let step = [0; 3].map(|_| rng.random_range(-6.0..6.0));
        let next = [0, 1, 2].map(|k| (last[k] + step[k]).clamp(-2.0, side + 1.0));
        if next != last {
            points.push(next);
        }
    }
    Streamline {
        id: format!("s{id}"),
        class: "a".into(),
        points,
    }
}

fn voxel_of(p: [f64; 3]) -> [i64; 3] {
    p.map(|v| (v + 0.5).floor() as i64)
}

fn inside(v: [i64; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|k| v[k] >= 0 && v[k] < dims[k] as i64)
}

/// Voxels hit by points spaced at most `step` apart along every segment.
pub fn sampled_voxels(points: &[[f64; 3]], dims: [usize; 3], step: f64) -> BTreeSet<[i64; 3]> {
    let mut out = BTreeSet::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (0..3).map(|k| (b[k] - a[k]).powi(2)).sum::<f64>().sqrt();
        let n = (len / step).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let v = voxel_of([0, 1, 2].map(|k| a[k] + t * (b[k] - a[k])));
            if inside(v, dims) {
                out.insert(v);
            }
        }
    }
    out
}

pub fn exact_voxels(points: &[[f64; 3]], dims: [usize; 3]) -> BTreeSet<[i64; 3]> {
    let mut out = BTreeSet::new();
    for w in points.windows(2) {
        dclnet_core::tractlabels::traverse_segment(w[0], w[1], dims, |v| {
            out.insert(v.map(|c| c as i64));
        });
    }
    out
}

/// Longest piece of the polyline inside the voxel's box.
pub fn longest_chord(points: &[[f64; 3]], v: [i64; 3]) -> f64 {
    let mut best: f64 = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..3 {
            let (lo, hi) = (v[k] as f64 - 0.5, v[k] as f64 + 0.5);
            let d = b[k] - a[k];
            if d == 0.0 {
                if a[k] < lo || a[k] >= hi {
                    t1 = -1.0;
                }
            } else {
                let (ta, tb) = ((lo - a[k]) / d, (hi - a[k]) / d);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if t1 > t0 {
            let len = (0..3).map(|k| (b[k] - a[k]).powi(2)).sum::<f64>().sqrt();
            best = best.max((t1 - t0) * len);
        }
    }
    best
}

/// Outcome of comparing exact traversal with point sampling.
#[derive(Debug, Default)]
pub struct VoxelComparison {
    pub exact: usize,
    pub sampled: usize,
    /// Sampled voxels the traversal missed.
    pub sampled_only: usize,
    /// Traversed voxels the sampler skipped.
    pub exact_only: usize,
    /// Longest chord among the skipped voxels.
    pub max_skipped_chord: f64,
}

pub fn compare_voxelization(lines: &[Streamline], dims: [usize; 3], step: f64) -> VoxelComparison {
    let mut c = VoxelComparison::default();
    for s in lines {
        let e = exact_voxels(&s.points, dims);
        let p = sampled_voxels(&s.points, dims, step);
        c.exact += e.len();
        c.sampled += p.len();
        c.sampled_only += p.difference(&e).count();
        for v in e.difference(&p) {
            c.exact_only += 1;
            c.max_skipped_chord = c.max_skipped_chord.max(longest_chord(&s.points, *v));
        }
    }
    c
}
