use super::{Geometry, LabelVolume, ModalitySample, Volume3D};
use crate::{Error, Result};

/// One axial plane `z = k`; each channel is an `nx·ny` grid, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice2D {
    pub subject: String,
    pub k: usize,
    pub nx: usize,
    pub ny: usize,
    pub channels: Vec<Vec<f32>>,
}

impl Slice2D {
    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }
}

/// The four aligned planes a training example is built from.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceGroup {
    pub t1w: Slice2D,
    pub fa: Slice2D,
    pub precise: Slice2D,
    pub coarse: Slice2D,
}

fn planes(channels: &[&[f32]], dims: [usize; 3], subject: &str) -> Vec<Slice2D> {
    let [nx, ny, nz] = dims;
    let plane = nx * ny;
    (0..nz)
        .map(|k| Slice2D {
            subject: subject.to_string(),
            k,
            nx,
            ny,
            channels: channels.iter().map(|c| c[k * plane..(k + 1) * plane].to_vec()).collect(),
        })
        .collect()
}

pub fn extract_axial_slices(v: &Volume3D, subject: &str) -> Vec<Slice2D> {
    planes(&[v.data()], v.dims(), subject)
}

fn label_planes(l: &LabelVolume, subject: &str) -> Vec<Slice2D> {
    let as_f32: Vec<Vec<f32>> = l.channels().iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect();
    let refs: Vec<&[f32]> = as_f32.iter().map(Vec::as_slice).collect();
    planes(&refs, l.geometry().dims(), subject)
}

/// Slice groups for every `k` in `0..nz`.
pub fn extract_slice_groups(s: &ModalitySample) -> Vec<SliceGroup> {
    let t1w = extract_axial_slices(&s.t1w, &s.id);
    let fa = extract_axial_slices(&s.fa, &s.id);
    let precise = label_planes(&s.precise, &s.id);
    let coarse = label_planes(&s.coarse, &s.id);
    t1w.into_iter()
        .zip(fa)
        .zip(precise.into_iter().zip(coarse))
        .map(|((t1w, fa), (precise, coarse))| SliceGroup {
            t1w,
            fa,
            precise,
            coarse,
        })
        .collect()
}

fn check_stack(slices: &[Slice2D], geometry: &Geometry, channels: usize) -> Result<()> {
    let [nx, ny, nz] = geometry.dims();
    if slices.len() != nz {
        return Err(Error::Shape(format!("{} slices for nz = {nz}", slices.len())));
    }
    for s in slices {
        if s.nx != nx || s.ny != ny || s.channels.len() != channels {
            return Err(Error::Shape(format!(
                "slice {} is {}x{} with {} channels, expected {nx}x{ny} with {channels}",
                s.k,
                s.nx,
                s.ny,
                s.channels.len()
            )));
        }
        if s.channels.iter().any(|c| c.len() != nx * ny) {
            return Err(Error::Shape(format!("slice {} has a short channel", s.k)));
        }
    }
    Ok(())
}

/// Reassembles single-channel slices in the given order.
pub fn stack_slices(slices: &[Slice2D], geometry: &Geometry) -> Result<Volume3D> {
    check_stack(slices, geometry, 1)?;
    let data = slices.iter().flat_map(|s| s.channels[0].iter().copied()).collect();
    Volume3D::new(geometry.clone(), data)
}

/// Reassembles multi-channel slices into one volume per channel.
pub fn stack_channels(slices: &[Slice2D], geometry: &Geometry, channels: usize) -> Result<Vec<Volume3D>> {
    check_stack(slices, geometry, channels)?;
    (0..channels)
        .map(|c| {
            let data = slices.iter().flat_map(|s| s.channels[c].iter().copied()).collect();
            Volume3D::new(geometry.clone(), data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distinct_planes() -> Volume3D {
        let g = Geometry::unit([3, 2, 4]).unwrap();
        let n = g.len();
        Volume3D::new(g, (0..n).map(|i| (i / 6) as f32 * 10.0 + (i % 6) as f32).collect()).unwrap()
    }

    #[test]
    fn extract_then_stack_is_identity() {
        let v = distinct_planes();
        let slices = extract_axial_slices(&v, "s");
        assert_eq!(slices.len(), 4);
        assert_eq!(slices.iter().map(|s| s.k).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(stack_slices(&slices, v.geometry()).unwrap(), v);
    }

    #[test]
    fn order_and_count_matter() {
        let v = distinct_planes();
        let mut slices = extract_axial_slices(&v, "s");
        slices.swap(0, 3);
        assert_ne!(stack_slices(&slices, v.geometry()).unwrap(), v);
        slices.pop();
        assert!(stack_slices(&slices, v.geometry()).is_err());
    }

    #[test]
    fn plane_of_ones_is_extracted() {
        let g = Geometry::unit([3, 2, 4]).unwrap();
        let mut v = Volume3D::zeros(g);
        for y in 0..2 {
            for x in 0..3 {
                v.set(x, y, 2, 1.0);
            }
        }
        let slices = extract_axial_slices(&v, "s");
        assert!(slices[2].channels[0].iter().all(|&x| x == 1.0));
        assert!(slices[1].channels[0].iter().all(|&x| x == 0.0));
    }
}
