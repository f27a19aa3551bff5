//! Streamline bundles to voxel labels: exact segment traversal, visit
//! thresholding, island removal and transfer into subject space.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::volume::{apply_affine, resample_with_affine, Affine, Geometry, LabelVolume, ResampleMode, Volume3D};
use crate::{Error, Result};

/// Polyline in world millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Streamline {
    pub id: String,
    pub class: String,
    pub points: Vec<[f64; 3]>,
}

impl Streamline {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::Shape(format!("streamline `{}` has fewer than 2 points", self.id)));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("streamline `{}`", self.id)));
        }
        if self.points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Shape(format!("streamline `{}` repeats a point", self.id)));
        }
        Ok(())
    }
}

/// Streamlines tagged with classes from an ordered class list.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamlineBundle {
    classes: Vec<String>,
    streamlines: Vec<Streamline>,
}

impl StreamlineBundle {
    pub fn new(classes: Vec<String>, streamlines: Vec<Streamline>) -> Result<Self> {
        for s in &streamlines {
            s.validate()?;
            if !classes.contains(&s.class) {
                return Err(Error::Config(format!(
                    "streamline `{}` has class `{}` outside {classes:?}",
                    s.id, s.class
                )));
            }
        }
        Ok(StreamlineBundle { classes, streamlines })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn streamlines(&self) -> &[Streamline] {
        &self.streamlines
    }

    pub fn len(&self) -> usize {
        self.streamlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streamlines.is_empty()
    }
}

/// Parses a JSON-lines streamline file; blank lines are skipped.
pub fn read_streamlines(path: &Path) -> Result<Vec<Streamline>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse { line: i + 1, reason };
        let s: Streamline = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        s.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_streamlines(streamlines: &[Streamline], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for s in streamlines {
        let line = serde_json::to_string(s)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Calls `visit` for every voxel whose cell `[v-½, v+½)³` the segment
/// `a → b` (continuous voxel coordinates) passes through, in order.
pub fn traverse_segment(a: [f64; 3], b: [f64; 3], dims: [usize; 3], mut visit: impl FnMut([usize; 3])) {
    // shift so that voxel v occupies [v, v+1)
    let p = a.map(|v| v + 0.5);
    let q = b.map(|v| v + 0.5);
    let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for ax in 0..3 {
        let n = dims[ax] as f64;
        if d[ax] == 0.0 {
            if p[ax] < 0.0 || p[ax] >= n {
                return;
            }
        } else {
            let (mut lo, mut hi) = ((0.0 - p[ax]) / d[ax], (n - p[ax]) / d[ax]);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
    }
    if t0 >= t1 {
        return;
    }
    let start = [0, 1, 2].map(|ax| p[ax] + t0 * d[ax]);
    let mut v = [0, 1, 2].map(|ax| (start[ax].floor().max(0.0) as usize).min(dims[ax] - 1));
    let mut step = [0isize; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..3 {
        if d[ax] > 0.0 {
            step[ax] = 1;
            t_max[ax] = ((v[ax] + 1) as f64 - p[ax]) / d[ax];
            t_delta[ax] = 1.0 / d[ax];
        } else if d[ax] < 0.0 {
            step[ax] = -1;
            t_max[ax] = (v[ax] as f64 - p[ax]) / d[ax];
            t_delta[ax] = -1.0 / d[ax];
        }
    }
    loop {
        visit(v);
        let ax = (0..3)
            .min_by(|&i, &j| t_max[i].partial_cmp(&t_max[j]).expect("finite"))
            .expect("three axes");
        if t_max[ax] >= t1 {
            break;
        }
        let next = v[ax] as isize + step[ax];
        if next < 0 || next >= dims[ax] as isize {
            break;
        }
        v[ax] = next as usize;
        t_max[ax] += t_delta[ax];
    }
}

/// Per-class count of streamlines passing through each voxel; a
/// streamline contributes at most 1 to any voxel.
pub fn voxelize_streamlines(bundle: &StreamlineBundle, geometry: &Geometry) -> Vec<Volume3D> {
    let to_voxel = geometry.world_to_voxel_affine();
    let dims = geometry.dims();
    let n = geometry.len();
    let mut counts: Vec<Vec<f32>> = vec![vec![0.0; n]; bundle.classes.len()];
    // stamp[i] = 1 + index of the last streamline that touched voxel i
    let mut stamp = vec![0usize; n];
    for (si, s) in bundle.streamlines.iter().enumerate() {
        let c = bundle.classes.iter().position(|k| *k == s.class).expect("validated class");
        let pts: Vec<[f64; 3]> = s.points.iter().map(|&p| apply_affine(&to_voxel, p)).collect();
        for w in pts.windows(2) {
            traverse_segment(w[0], w[1], dims, |v| {
                let i = geometry.index(v[0], v[1], v[2]);
                if stamp[i] != si + 1 {
                    stamp[i] = si + 1;
                    counts[c][i] += 1.0;
                }
            });
        }
    }
    counts
        .into_iter()
        .map(|data| Volume3D::new(geometry.clone(), data).expect("sized to geometry"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IslandPolicy {
    /// Keep only the largest 26-connected component; ties go to the
    /// component containing the smallest linear index.
    KeepLargest,
    /// Drop components with fewer voxels than this.
    MinSize(usize),
}

impl Default for IslandPolicy {
    fn default() -> Self {
        IslandPolicy::MinSize(5)
    }
}

/// 26-connected components as voxel lists, ordered by their smallest
/// linear index.
pub fn connected_components(mask: &[u8], geometry: &Geometry) -> Vec<Vec<usize>> {
    let [nx, ny, nz] = geometry.dims();
    let mut seen = vec![false; mask.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if mask[seed] == 0 || seen[seed] {
            continue;
        }
        seen[seed] = true;
        queue.push_back(seed);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let [x, y, z] = geometry.coords(i);
            for zz in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
                for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                        let j = geometry.index(xx, yy, zz);
                        if mask[j] == 1 && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

pub fn remove_islands(mask: &[u8], geometry: &Geometry, policy: IslandPolicy) -> Vec<u8> {
    let comps = connected_components(mask, geometry);
    let mut out = vec![0u8; mask.len()];
    let keep: Vec<&Vec<usize>> = match policy {
        IslandPolicy::KeepLargest => {
            // max_by_key keeps the last maximum; iterate reversed so the
            // earliest component wins ties
            comps.iter().rev().max_by_key(|c| c.len()).into_iter().collect()
        }
        IslandPolicy::MinSize(min) => comps.iter().filter(|c| c.len() >= min).collect(),
    };
    for comp in keep {
        for &i in comp {
            out[i] = 1;
        }
    }
    out
}

/// Voxelize, keep voxels visited by at least `tau` streamlines, then
/// remove islands, per class.
pub fn streamlines_to_label_volume(
    bundle: &StreamlineBundle,
    geometry: &Geometry,
    tau: u32,
    policy: IslandPolicy,
) -> Result<LabelVolume> {
    if tau < 1 {
        return Err(Error::Config("visit threshold tau must be at least 1".into()));
    }
    let channels = voxelize_streamlines(bundle, geometry)
        .iter()
        .map(|counts| {
            let binary: Vec<u8> = counts.data().iter().map(|&c| (c >= tau as f32) as u8).collect();
            remove_islands(&binary, geometry, policy)
        })
        .collect();
    LabelVolume::new(geometry.clone(), bundle.classes.clone(), channels)
}

/// Nearest-neighbour transfer of atlas labels onto a subject grid;
/// `transform` maps subject world coordinates into atlas world coordinates.
pub fn transfer_labels(atlas: &LabelVolume, transform: &Affine, subject: &Geometry) -> Result<LabelVolume> {
    let mut channels = Vec::with_capacity(atlas.num_classes());
    for c in 0..atlas.num_classes() {
        let v = resample_with_affine(&atlas.channel_volume(c), subject, Some(transform), ResampleMode::Nearest)?;
        channels.push(v.data().iter().map(|&x| (x > 0.5) as u8).collect());
    }
    LabelVolume::new(subject.clone(), atlas.class_names().to_vec(), channels)
}
