//! Synthetic T1w/FA phantoms with curved tube "nerves", their exact labels
//! and atlas-like coarse labels.
//!
//! Every random draw comes from a ChaCha8 stream selected by
//! `(seed, subject, purpose)`, so a subject is reproducible on its own and
//! independently of how many other subjects are generated.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::volume::{
    default_class_names, read_label_volume, read_volume, write_label_volume, write_volume, Geometry,
    LabelVolume, ModalitySample, Provenance, Volume3D,
};
use crate::{Error, Result};

/// Parameters of the coarse-label degradation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Degradation {
    /// Number of 6-connected dilation passes.
    pub dilation_radius: usize,
    /// Probability of flipping each boundary voxel.
    pub flip_rate: f64,
    /// Per-axis shift drawn as `round(U(-t, t))` voxels.
    pub max_translation: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        Degradation {
            dilation_radius: 2,
            flip_rate: 0.1,
            max_translation: 1.0,
        }
    }
}

impl Degradation {
    pub fn none() -> Self {
        Degradation {
            dilation_radius: 0,
            flip_rate: 0.0,
            max_translation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.flip_rate) {
            return Err(Error::Config(format!("flip_rate {} must lie in [0, 0.5)", self.flip_rate)));
        }
        if !(self.max_translation >= 0.0 && self.max_translation.is_finite()) {
            return Err(Error::Config(format!(
                "max_translation {} must be a non-negative number",
                self.max_translation
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub seed: u64,
    /// `(nx, ny, nz)`; axial slices are `nx × ny`.
    pub dims: [usize; 3],
    pub classes: usize,
    /// 1 (single tube) or 2 (mirrored left/right pair).
    pub tubes_per_class: usize,
    pub radius_range: [f64; 2],
    pub t1w_tissue: f64,
    pub t1w_nerve: f64,
    pub t1w_noise_sd: f64,
    pub fa_background: f64,
    pub fa_nerve: f64,
    pub fa_noise_sd: f64,
    pub coarse: Degradation,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            seed: 0,
            dims: [64, 80, 64],
            classes: 4,
            tubes_per_class: 2,
            radius_range: [1.5, 3.0],
            t1w_tissue: 0.5,
            t1w_nerve: 0.7,
            t1w_noise_sd: 0.05,
            fa_background: 0.05,
            fa_nerve: 0.8,
            fa_noise_sd: 0.05,
            coarse: Degradation::default(),
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 32) {
            return Err(Error::Config(format!("dims {:?}: every axis needs at least 32 voxels", self.dims)));
        }
        if self.classes == 0 || self.classes > TEMPLATES.len() {
            return Err(Error::Config(format!("classes must be in 1..={}", TEMPLATES.len())));
        }
        if !(1..=2).contains(&self.tubes_per_class) {
            return Err(Error::Config("tubes_per_class must be 1 or 2".into()));
        }
        let [lo, hi] = self.radius_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("radius_range {:?} must be positive and ordered", self.radius_range)));
        }
        if self.t1w_noise_sd < 0.0 || self.fa_noise_sd < 0.0 {
            return Err(Error::Config("noise standard deviations must be non-negative".into()));
        }
        self.coarse.validate()
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::unit(self.dims)
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names = default_class_names();
        names.truncate(self.classes);
        names
    }
}

const STREAM_ANATOMY: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_COARSE: u64 = 2;

/// Stream for one subject and purpose.
fn stream(seed: u64, subject: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject * 4 + purpose);
    rng
}

/// Right-hemisphere centerline endpoints per class in normalized
/// `[0,1]³` coordinates; pairs are mirrored across `x = 0.5`.
/// Each class keeps its own band along y (anterior to posterior), so a
/// single axial slice is enough to tell them apart.
const TEMPLATES: [([f64; 3], [f64; 3]); 4] = [
    ([0.56, 0.74, 0.48], [0.64, 0.92, 0.50]),
    ([0.56, 0.56, 0.43], [0.68, 0.62, 0.45]),
    ([0.58, 0.40, 0.38], [0.80, 0.45, 0.40]),
    ([0.58, 0.26, 0.33], [0.82, 0.22, 0.32]),
];

/// Cubic Bézier centerline with linearly varying radius, in voxels.
#[derive(Clone, Debug)]
struct Tube {
    control: [[f64; 3]; 4],
    radius: [f64; 2],
}

impl Tube {
    fn point(&self, t: f64) -> [f64; 3] {
        let u = 1.0 - t;
        let b = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
        let mut p = [0.0; 3];
        for (w, c) in b.iter().zip(&self.control) {
            for a in 0..3 {
                p[a] += w * c[a];
            }
        }
        p
    }

    fn radius_at(&self, t: f64) -> f64 {
        self.radius[0] + (self.radius[1] - self.radius[0]) * t
    }

    fn approx_length(&self) -> f64 {
        let pts: Vec<[f64; 3]> = (0..=64).map(|i| self.point(i as f64 / 64.0)).collect();
        pts.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn random_tube(cfg: &PhantomConfig, class: usize, mirror: bool, rng: &mut ChaCha8Rng) -> Tube {
    let (start, end) = TEMPLATES[class];
    let mut jitter = |p: [f64; 3], amp: f64| p.map(|v| v + rng.random_range(-amp..=amp));
    let p0 = jitter(start, 0.02);
    let p3 = jitter(end, 0.03);
    let lerp = |t: f64| [0, 1, 2].map(|a| p0[a] + (p3[a] - p0[a]) * t);
    let p1 = jitter(lerp(1.0 / 3.0), 0.04);
    let p2 = jitter(lerp(2.0 / 3.0), 0.04);
    let [nx, ny, nz] = cfg.dims;
    let scale = [(nx - 1) as f64, (ny - 1) as f64, (nz - 1) as f64];
    let control = [p0, p1, p2, p3].map(|p| {
        let x = if mirror { 1.0 - p[0] } else { p[0] };
        [x * scale[0], p[1] * scale[1], p[2] * scale[2]]
    });
    let [lo, hi] = cfg.radius_range;
    let mut radius = || if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Tube {
        control,
        radius: [radius(), radius()],
    }
}

/// Minimum of `distance / radius` to any centerline sample, per voxel.
/// Voxels farther than 2 radii keep `INFINITY`.
fn normalized_distance(tube: &Tube, geometry: &Geometry, field: &mut [f64]) {
    let [nx, ny, nz] = geometry.dims();
    let steps = (tube.approx_length() / 0.1).ceil().max(16.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let c = tube.point(t);
        let r = tube.radius_at(t);
        let reach = 2.0 * r;
        let lo = |a: usize| (c[a] - reach).floor().max(0.0) as usize;
        let hi = |a: usize, n: usize| ((c[a] + reach).ceil().max(0.0) as usize).min(n - 1);
        for z in lo(2)..=hi(2, nz) {
            for y in lo(1)..=hi(1, ny) {
                for x in lo(0)..=hi(0, nx) {
                    let s = dist(c, [x as f64, y as f64, z as f64]) / r;
                    let idx = geometry.index(x, y, z);
                    if s < field[idx] {
                        field[idx] = s;
                    }
                }
            }
        }
    }
}

/// FA weight as a function of normalized distance: flat core out to half
/// the radius, then a linear ramp reaching zero at 1.5 radii.
fn fa_profile(s: f64) -> f64 {
    (1.5 - s).clamp(0.0, 1.0)
}

fn inside_brain(dims: [usize; 3], x: usize, y: usize, z: usize) -> bool {
    let p = [x, y, z];
    (0..3)
        .map(|a| {
            let c = (dims[a] - 1) as f64 / 2.0;
            let r = 0.47 * dims[a] as f64;
            ((p[a] as f64 - c) / r).powi(2)
        })
        .sum::<f64>()
        <= 1.0
}

/// One subject with its precise labels and degraded coarse labels.
pub fn generate_phantom(cfg: &PhantomConfig, index: usize) -> Result<ModalitySample> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let n = geometry.len();
    let mut anatomy = stream(cfg.seed, index as u64, STREAM_ANATOMY);
    let mut channels = Vec::with_capacity(cfg.classes);
    let mut fa_weight = vec![0.0f64; n];
    for class in 0..cfg.classes {
        let mut field = vec![f64::INFINITY; n];
        for side in 0..cfg.tubes_per_class {
            let tube = random_tube(cfg, class, side == 1, &mut anatomy);
            normalized_distance(&tube, &geometry, &mut field);
        }
        for (w, &s) in fa_weight.iter_mut().zip(&field) {
            *w = w.max(fa_profile(s));
        }
        channels.push(field.iter().map(|&s| (s <= 1.0) as u8).collect::<Vec<u8>>());
    }
    let precise = LabelVolume::new(geometry.clone(), cfg.class_names(), channels)?;

    let mut noise = stream(cfg.seed, index as u64, STREAM_NOISE);
    let t1_noise = Normal::new(0.0, cfg.t1w_noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let fa_noise = Normal::new(0.0, cfg.fa_noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut t1w = vec![0.0f32; n];
    let mut fa = vec![0.0f32; n];
    for i in 0..n {
        let [x, y, z] = geometry.coords(i);
        if !inside_brain(cfg.dims, x, y, z) {
            continue;
        }
        let nerve = precise.channels().iter().any(|c| c[i] == 1);
        let base = if nerve { cfg.t1w_nerve } else { cfg.t1w_tissue };
        let t = base + t1_noise.sample(&mut noise);
        let f = cfg.fa_background + (cfg.fa_nerve - cfg.fa_background) * fa_weight[i] + fa_noise.sample(&mut noise);
        // keep brain voxels strictly nonzero so the brain mask survives
        t1w[i] = t.max(1e-3) as f32;
        fa[i] = f.clamp(1e-3, 1.0) as f32;
    }
    let coarse = degrade_labels(&precise, &cfg.coarse, cfg.seed, stream_id(index, STREAM_COARSE))?;
    ModalitySample::new(
        format!("sub-{index:03}"),
        Volume3D::new(geometry.clone(), t1w)?,
        Volume3D::new(geometry, fa)?,
        precise,
        coarse,
        Provenance::Phantom,
    )
}

fn stream_id(subject: usize, purpose: u64) -> u64 {
    subject as u64 * 4 + purpose
}

/// Coarse labels with the config's degradation, drawn from the stream
/// reserved for this seed.
pub fn degrade_to_coarse(precise: &LabelVolume, cfg: &PhantomConfig, seed: u64) -> Result<LabelVolume> {
    degrade_labels(precise, &cfg.coarse, seed, 0)
}

/// Dilation, then boundary flips, then translation, independently per
/// channel. `stream` selects the ChaCha8 stream under `seed`.
pub fn degrade_labels(labels: &LabelVolume, d: &Degradation, seed: u64, stream: u64) -> Result<LabelVolume> {
    d.validate()?;
    let g = labels.geometry().clone();
    let mut out = Vec::with_capacity(labels.num_classes());
    for (c, channel) in labels.channels().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(c as u128 * (1u128 << 40));
        let mut mask = channel.clone();
        for _ in 0..d.dilation_radius {
            mask = dilate6(&mask, &g);
        }
        if d.flip_rate > 0.0 {
            mask = flip_boundary(&mask, &g, d.flip_rate, &mut rng);
        }
        if d.max_translation > 0.0 {
            let t = d.max_translation;
            let shift = [0; 3].map(|_: i32| rng.random_range(-t..=t).round() as isize);
            mask = translate(&mask, &g, shift);
        }
        out.push(mask);
    }
    LabelVolume::new(g, labels.class_names().to_vec(), out)
}

const FACE_NEIGHBORS: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn neighbor(g: &Geometry, i: usize, o: [isize; 3]) -> Option<usize> {
    let c = g.coords(i);
    let v = [0, 1, 2].map(|a| c[a] as isize + o[a]);
    g.contains(v).then(|| g.index(v[0] as usize, v[1] as usize, v[2] as usize))
}

/// One pass of binary dilation with the 6-connected structuring element.
pub fn dilate6(mask: &[u8], g: &Geometry) -> Vec<u8> {
    let mut out = mask.to_vec();
    for (i, &m) in mask.iter().enumerate() {
        if m == 1 {
            for o in FACE_NEIGHBORS {
                if let Some(j) = neighbor(g, i, o) {
                    out[j] = 1;
                }
            }
        }
    }
    out
}

/// Voxels with at least one 6-neighbor of the opposite value.
fn is_boundary(mask: &[u8], g: &Geometry, i: usize) -> bool {
    FACE_NEIGHBORS
        .iter()
        .any(|&o| neighbor(g, i, o).is_some_and(|j| mask[j] != mask[i]))
}

/// Flips each boundary voxel (inner or outer) with probability `rate`.
pub fn flip_boundary(mask: &[u8], g: &Geometry, rate: f64, rng: &mut impl Rng) -> Vec<u8> {
    let mut out = mask.to_vec();
    for i in 0..mask.len() {
        if is_boundary(mask, g, i) && rng.random_bool(rate) {
            out[i] = 1 - mask[i];
        }
    }
    out
}

/// Shifts by whole voxels, zero-filling what enters from outside.
pub fn translate(mask: &[u8], g: &Geometry, shift: [isize; 3]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len()];
    for (i, &m) in mask.iter().enumerate() {
        if m == 1 {
            if let Some(j) = neighbor(g, i, shift) {
                out[j] = 1;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub t1w: String,
    pub fa: String,
    pub precise: String,
    pub coarse: String,
}

/// Dataset index; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub subjects: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("subject `{id}` not in manifest")))
    }

    pub fn load_sample(&self, id: &str) -> Result<ModalitySample> {
        let e = self.entry(id)?;
        let p = |rel: &str| self.root.join(rel);
        ModalitySample::new(
            &e.id,
            read_volume(&p(&e.t1w))?,
            read_volume(&p(&e.fa))?,
            read_label_volume(&p(&e.precise))?,
            read_label_volume(&p(&e.coarse))?,
            Provenance::Phantom,
        )
    }
}

/// Writes `n` subjects under `out` plus `manifest.json`.
pub fn generate_dataset(cfg: &PhantomConfig, n: usize, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Config("need at least one subject".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut subjects = Vec::with_capacity(n);
    for index in 0..n {
        let s = generate_phantom(cfg, index)?;
        let dir = out.join(&s.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_volume(&s.t1w, &dir.join("t1w.json"))?;
        write_volume(&s.fa, &dir.join("fa.json"))?;
        write_label_volume(&s.precise, &dir.join("precise"))?;
        write_label_volume(&s.coarse, &dir.join("coarse"))?;
        subjects.push(ManifestEntry {
            t1w: format!("{}/t1w.json", s.id),
            fa: format!("{}/fa.json", s.id),
            precise: format!("{}/precise", s.id),
            coarse: format!("{}/coarse", s.id),
            id: s.id,
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        subjects,
        root: out.to_path_buf(),
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomConfig {
        PhantomConfig {
            seed: 3,
            dims: [32, 40, 32],
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_subject() {
        let cfg = small();
        assert_eq!(generate_phantom(&cfg, 1).unwrap(), generate_phantom(&cfg, 1).unwrap());
        assert_ne!(generate_phantom(&cfg, 1).unwrap().t1w, generate_phantom(&cfg, 2).unwrap().t1w);
    }

    #[test]
    fn config_bounds() {
        let mut cfg = small();
        cfg.coarse.flip_rate = 0.5;
        assert!(matches!(generate_phantom(&cfg, 0), Err(Error::Config(_))));
        let cfg = PhantomConfig {
            dims: [31, 64, 64],
            ..Default::default()
        };
        assert!(matches!(generate_phantom(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn no_op_degradation_is_identity() {
        let mut cfg = small();
        cfg.coarse = Degradation::none();
        cfg.t1w_noise_sd = 0.0;
        cfg.fa_noise_sd = 0.0;
        let s = generate_phantom(&cfg, 0).unwrap();
        assert_eq!(s.coarse, s.precise);
    }

    #[test]
    fn single_voxel_dilation_is_the_face_star() {
        let g = Geometry::unit([5, 5, 5]).unwrap();
        let mut m = vec![0u8; g.len()];
        m[g.index(2, 2, 2)] = 1;
        let d = dilate6(&m, &g);
        let set: Vec<[usize; 3]> = (0..g.len()).filter(|&i| d[i] == 1).map(|i| g.coords(i)).collect();
        let mut expected = vec![[2, 2, 2], [1, 2, 2], [3, 2, 2], [2, 1, 2], [2, 3, 2], [2, 2, 1], [2, 2, 3]];
        expected.sort_by_key(|c| (c[2], c[1], c[0]));
        assert_eq!(set, expected);
    }

    #[test]
    fn pure_dilation_contains_precise() {
        let cfg = small();
        let s = generate_phantom(&cfg, 0).unwrap();
        let d = Degradation {
            dilation_radius: 1,
            flip_rate: 0.0,
            max_translation: 0.0,
        };
        let c = degrade_labels(&s.precise, &d, 9, 0).unwrap();
        for (p, q) in s.precise.channels().iter().zip(c.channels()) {
            assert!(p.iter().zip(q).all(|(&a, &b)| b >= a));
        }
    }
}
