use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major 4×4 homogeneous transform.
pub type Affine = [[f64; 4]; 4];

pub fn identity_affine() -> Affine {
    let mut a = [[0.0; 4]; 4];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    a
}

/// Diagonal voxel-to-world transform for the given spacing.
pub fn scaling_affine(spacing: [f64; 3]) -> Affine {
    let mut a = identity_affine();
    for i in 0..3 {
        a[i][i] = spacing[i];
    }
    a
}

pub fn translation_affine(t: [f64; 3]) -> Affine {
    let mut a = identity_affine();
    for i in 0..3 {
        a[i][3] = t[i];
    }
    a
}

pub fn apply_affine(a: &Affine, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i][0] * p[0] + a[i][1] * p[1] + a[i][2] * p[2] + a[i][3];
    }
    out
}

pub fn compose_affine(a: &Affine, b: &Affine) -> Affine {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn det3(a: &Affine) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Whether the linear part is numerically invertible.
fn is_singular(a: &Affine) -> bool {
    let det = det3(a);
    let scale: f64 = (0..3)
        .map(|j| (0..3).map(|i| a[i][j] * a[i][j]).sum::<f64>().sqrt())
        .product();
    !det.is_finite() || scale == 0.0 || det.abs() <= 1e-12 * scale
}

/// Inverse of an affine transform whose last row is `[0, 0, 0, 1]`.
pub fn invert_affine(a: &Affine) -> Result<Affine> {
    if is_singular(a) {
        return Err(Error::SingularAffine(format!("linear part {:?} is not invertible", &a[..3])));
    }
    let det = det3(a);
    let m = |r: usize, c: usize| a[r][c];
    let mut inv = identity_affine();
    inv[0][0] = (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) / det;
    inv[0][1] = (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / det;
    inv[0][2] = (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / det;
    inv[1][0] = (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) / det;
    inv[1][1] = (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / det;
    inv[1][2] = (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / det;
    inv[2][0] = (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) / det;
    inv[2][1] = (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / det;
    inv[2][2] = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / det;
    for i in 0..3 {
        inv[i][3] = -(0..3).map(|k| inv[i][k] * a[k][3]).sum::<f64>();
    }
    Ok(inv)
}

/// Grid size, voxel spacing in mm and voxel-to-world affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Affine,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Affine) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Geometry(format!("dims {dims:?} must all be at least 1")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Geometry(format!("spacing {spacing:?} must be positive")));
        }
        if affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("affine has non-finite entries".into()));
        }
        if is_singular(&affine) {
            return Err(Error::SingularAffine(format!("voxel affine {:?}", &affine[..3])));
        }
        Ok(Geometry { dims, spacing, affine })
    }

    /// Axis-aligned geometry whose affine is the spacing diagonal.
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, scaling_affine(spacing))
    }

    /// Unit spacing, identity affine.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::with_spacing(dims, [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index of voxel `(x, y, z)`, x fastest.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn contains(&self, v: [isize; 3]) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a])
    }

    pub fn voxel_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        apply_affine(&self.affine, v)
    }

    pub fn world_to_voxel_affine(&self) -> Affine {
        invert_affine(&self.affine).expect("validated at construction")
    }

    /// Same grid and transform (exact equality).
    pub fn matches(&self, other: &Geometry) -> bool {
        self == other
    }

    pub fn ensure_matches(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{what}: dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips_points() {
        let mut a = compose_affine(&translation_affine([3.0, -2.0, 5.5]), &scaling_affine([1.5, 2.0, 0.5]));
        a[0][1] = 0.3;
        let inv = invert_affine(&a).unwrap();
        let p = [1.0, 2.0, 3.0];
        let q = apply_affine(&inv, apply_affine(&a, p));
        for i in 0..3 {
            assert!((p[i] - q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_geometry() {
        assert!(Geometry::unit([0, 2, 2]).is_err());
        assert!(Geometry::with_spacing([2, 2, 2], [1.0, -1.0, 1.0]).is_err());
        let mut a = identity_affine();
        a[2][2] = 0.0;
        assert!(matches!(Geometry::new([2, 2, 2], [1.0; 3], a), Err(Error::SingularAffine(_))));
    }

    #[test]
    fn index_and_coords_agree() {
        let g = Geometry::unit([3, 4, 5]).unwrap();
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
    }
}
