//! Volumetric data model, persistence, resampling, normalization and
//! axial slicing.

mod geometry;
mod io;
mod resample;
mod slices;

pub use geometry::{
    apply_affine, compose_affine, identity_affine, invert_affine, scaling_affine, translation_affine, Affine,
    Geometry,
};
pub use io::{read_geometry, read_label_volume, read_volume, write_label_volume, write_volume};
pub use resample::{apply_zscore, normalize_zscore, resample_with_affine, zscore_stats, ResampleMode};
pub use slices::{extract_axial_slices, extract_slice_groups, stack_channels, stack_slices, Slice2D, SliceGroup};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_CLASS_NAMES: [&str; 4] = ["CN II", "CN III", "CN V", "CN VII/VIII"];

pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Scalar `f32` grid with geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::SizeMismatch(format!(
                "dims {:?} need {} values, got {}",
                geometry.dims(),
                geometry.len(),
                data.len()
            )));
        }
        Ok(Volume3D { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let data = vec![0.0; geometry.len()];
        Volume3D { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.geometry.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.geometry.index(x, y, z);
        self.data[i] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume3D {
        Volume3D {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Multi-channel binary label grid; all channels share one geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    class_names: Vec<String>,
    channels: Vec<Vec<u8>>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, class_names: Vec<String>, channels: Vec<Vec<u8>>) -> Result<Self> {
        if channels.is_empty() || channels.len() != class_names.len() {
            return Err(Error::Shape(format!(
                "{} channels for {} class names",
                channels.len(),
                class_names.len()
            )));
        }
        for (name, ch) in class_names.iter().zip(&channels) {
            if ch.len() != geometry.len() {
                return Err(Error::SizeMismatch(format!(
                    "channel `{name}` has {} voxels, geometry needs {}",
                    ch.len(),
                    geometry.len()
                )));
            }
            if ch.iter().any(|&v| v > 1) {
                return Err(Error::Shape(format!("channel `{name}` is not binary")));
            }
        }
        Ok(LabelVolume {
            geometry,
            class_names,
            channels,
        })
    }

    pub fn empty(geometry: Geometry, class_names: Vec<String>) -> Self {
        let channels = vec![vec![0; geometry.len()]; class_names.len()];
        LabelVolume {
            geometry,
            class_names,
            channels,
        }
    }

    /// Binarizes each volume with `v > threshold`; volumes must share geometry.
    pub fn from_volumes(volumes: &[Volume3D], class_names: Vec<String>, threshold: f32) -> Result<Self> {
        let geometry = volumes
            .first()
            .ok_or_else(|| Error::Shape("no channels".into()))?
            .geometry()
            .clone();
        let mut channels = Vec::with_capacity(volumes.len());
        for v in volumes {
            geometry.ensure_matches(v.geometry(), "label channel")?;
            channels.push(v.data().iter().map(|&x| (x > threshold) as u8).collect());
        }
        Self::new(geometry, class_names, channels)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<u8>] {
        &self.channels
    }

    /// Replaces one channel; the caller must keep it binary.
    pub fn set_channel(&mut self, c: usize, data: Vec<u8>) -> Result<()> {
        if data.len() != self.geometry.len() || data.iter().any(|&v| v > 1) {
            return Err(Error::Shape(format!("replacement for channel {c} is not a binary grid")));
        }
        self.channels[c] = data;
        Ok(())
    }

    pub fn channel_volume(&self, c: usize) -> Volume3D {
        let data = self.channels[c].iter().map(|&v| v as f32).collect();
        Volume3D::new(self.geometry.clone(), data).expect("channel sized to geometry")
    }

    pub fn count(&self, c: usize) -> usize {
        self.channels[c].iter().map(|&v| v as usize).sum()
    }

    pub fn ensure_compatible(&self, other: &LabelVolume, what: &str) -> Result<()> {
        self.geometry.ensure_matches(&other.geometry, what)?;
        if self.class_names != other.class_names {
            return Err(Error::Geometry(format!(
                "{what}: classes {:?} vs {:?}",
                self.class_names, other.class_names
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Phantom,
    Imported,
}

/// One subject: aligned T1w and FA volumes with precise and coarse labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalitySample {
    pub id: String,
    pub t1w: Volume3D,
    pub fa: Volume3D,
    pub precise: LabelVolume,
    pub coarse: LabelVolume,
    pub provenance: Provenance,
}

impl ModalitySample {
    pub fn new(
        id: impl Into<String>,
        t1w: Volume3D,
        fa: Volume3D,
        precise: LabelVolume,
        coarse: LabelVolume,
        provenance: Provenance,
    ) -> Result<Self> {
        let g = t1w.geometry();
        g.ensure_matches(fa.geometry(), "FA vs T1w")?;
        g.ensure_matches(precise.geometry(), "precise labels vs T1w")?;
        precise.ensure_compatible(&coarse, "coarse vs precise labels")?;
        Ok(ModalitySample {
            id: id.into(),
            t1w,
            fa,
            precise,
            coarse,
            provenance,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        self.t1w.geometry()
    }
}
