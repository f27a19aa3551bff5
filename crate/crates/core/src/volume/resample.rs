use serde::{Deserialize, Serialize};

use super::{compose_affine, invert_affine, Affine, Geometry, Volume3D};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    Nearest,
    Trilinear,
}

/// Samples `src` on `target`'s grid. `transform` maps target world
/// coordinates into source world coordinates (identity when `None`).
/// Points falling outside the source grid read as 0.
pub fn resample_with_affine(
    src: &Volume3D,
    target: &Geometry,
    transform: Option<&Affine>,
    mode: ResampleMode,
) -> Result<Volume3D> {
    let to_src_voxel = invert_affine(src.geometry().affine())?;
    let mut chain = *target.affine();
    if let Some(t) = transform {
        invert_affine(t)?;
        chain = compose_affine(t, &chain);
    }
    let m = compose_affine(&to_src_voxel, &chain);
    let [nx, ny, nz] = target.dims();
    let mut out = Vec::with_capacity(target.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = super::apply_affine(&m, [x as f64, y as f64, z as f64]);
                out.push(match mode {
                    ResampleMode::Nearest => sample_nearest(src, p),
                    ResampleMode::Trilinear => sample_trilinear(src, p),
                });
            }
        }
    }
    Volume3D::new(target.clone(), out)
}

/// Coordinates within 1e-9 voxel of an integer snap to it, so exact
/// integer transforms are not perturbed by rounding in the affine chain.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn sample_nearest(src: &Volume3D, p: [f64; 3]) -> f32 {
    let g = src.geometry();
    let v = [0, 1, 2].map(|a| snap(p[a]).round() as isize);
    if g.contains(v) {
        src.get(v[0] as usize, v[1] as usize, v[2] as usize)
    } else {
        0.0
    }
}

fn sample_trilinear(src: &Volume3D, p: [f64; 3]) -> f32 {
    let dims = src.dims();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let c = snap(p[a]);
        if c < 0.0 || c > (dims[a] - 1) as f64 {
            return 0.0;
        }
        let f = c.floor();
        lo[a] = f as usize;
        hi[a] = (lo[a] + 1).min(dims[a] - 1);
        frac[a] = c - f;
    }
    let mut acc = 0.0f64;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                w *= frac[a];
                idx[a] = hi[a];
            } else {
                w *= 1.0 - frac[a];
                idx[a] = lo[a];
            }
        }
        if w != 0.0 {
            acc += w * src.get(idx[0], idx[1], idx[2]) as f64;
        }
    }
    acc as f32
}

/// Mean and population standard deviation of the nonzero values; `None`
/// when there are none or they are constant.
pub fn zscore_stats(data: &[f32]) -> Option<(f64, f64)> {
    let masked: Vec<f64> = data.iter().filter(|&&x| x != 0.0).map(|&x| x as f64).collect();
    if masked.is_empty() {
        return None;
    }
    let n = masked.len() as f64;
    let mean = masked.iter().sum::<f64>() / n;
    let var = masked.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (sd > 1e-12 * mean.abs().max(1.0)).then_some((mean, sd))
}

/// Applies precomputed statistics; zeros stay zero, `None` maps all to 0.
pub fn apply_zscore(x: f32, stats: Option<(f64, f64)>) -> f32 {
    match stats {
        Some((mean, sd)) if x != 0.0 => ((x as f64 - mean) / sd) as f32,
        _ => 0.0,
    }
}

/// Z-score over the nonzero voxels (population standard deviation);
/// zero voxels stay zero, and degenerate inputs map to all zeros.
pub fn normalize_zscore(v: &Volume3D) -> Volume3D {
    let stats = zscore_stats(v.data());
    v.map(|x| apply_zscore(x, stats))
}

#[cfg(test)]
mod tests {
    use super::super::translation_affine;
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume3D {
        let g = Geometry::unit(dims).unwrap();
        let n = g.len();
        Volume3D::new(g, (0..n).map(|i| i as f32 + 1.0).collect()).unwrap()
    }

    #[test]
    fn identity_is_exact_in_both_modes() {
        let v = ramp([4, 3, 2]);
        for mode in [ResampleMode::Nearest, ResampleMode::Trilinear] {
            assert_eq!(resample_with_affine(&v, v.geometry(), None, mode).unwrap(), v);
        }
    }

    #[test]
    fn one_voxel_shift_zero_fills_the_border() {
        let v = ramp([4, 3, 2]);
        let t = translation_affine([1.0, 0.0, 0.0]);
        let out = resample_with_affine(&v, v.geometry(), Some(&t), ResampleMode::Nearest).unwrap();
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let expected = if x + 1 < 4 { v.get(x + 1, y, z) } else { 0.0 };
                    assert_eq!(out.get(x, y, z), expected);
                }
            }
        }
    }

    #[test]
    fn trilinear_midpoint_averages_neighbors() {
        let v = ramp([2, 1, 1]);
        let t = translation_affine([0.5, 0.0, 0.0]);
        let out = resample_with_affine(&v, v.geometry(), Some(&t), ResampleMode::Trilinear).unwrap();
        assert_eq!(out.data(), &[1.5, 0.0]);
    }

    #[test]
    fn singular_transform_is_rejected() {
        let v = ramp([2, 2, 2]);
        let mut t = translation_affine([0.0; 3]);
        t[1][1] = 0.0;
        assert!(resample_with_affine(&v, v.geometry(), Some(&t), ResampleMode::Nearest).is_err());
    }

    #[test]
    fn zscore_hand_cases() {
        let g = Geometry::unit([4, 1, 1]).unwrap();
        let v = Volume3D::new(g.clone(), vec![0.0, 1.0, 3.0, 0.0]).unwrap();
        assert_eq!(normalize_zscore(&v).data(), &[0.0, -1.0, 1.0, 0.0]);
        let c = Volume3D::new(g, vec![5.0; 4]).unwrap();
        assert!(normalize_zscore(&c).data().iter().all(|&x| x == 0.0));
    }
}
