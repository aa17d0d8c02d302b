//! Affine voxel-to-world algebra and the mean-space construction.
//!
//! The central object is the [`AffineMap`]: a homogeneous (D+1)x(D+1)
//! matrix mapping 0-based voxel indices to world millimetre coordinates,
//! as stored in medical image headers. A [`GridSpec`] pairs such a map
//! with voxel counts and fully identifies a sampling grid.
//!
//! A population of grids is summarized by [`mean_space`]: the barycentric
//! mean of the linear parts (computed by iterating between the matrix-log
//! tangent space and the group), projected onto the closest
//! rotation x anisotropic-scaling factorization, with a field of view
//! covering every input voxel center.

mod factor;
mod karcher;
mod matlog;
mod mean_space;

pub use factor::{closest_rot_scale, extract_flips, polar_rotation, RotScale};
pub use karcher::{karcher_mean, karcher_mean_detailed};
pub use matlog::{matrix_exp, real_log};
pub use mean_space::{mean_space, round_dim_up, MeanSpaceResult, SpaceDescriptor};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Determinants below this are treated as singular.
pub const SINGULARITY_THRESHOLD: f64 = 1e-12;

/// Homogeneous voxel-to-world matrix.
///
/// Invariants, enforced at construction: the last row is `[0, ..., 0, 1]`
/// and the upper-left DxD linear part is invertible. Voxel `n` sits at
/// coordinate `n` (integer grid, zero origin); the map sends those integer
/// coordinates to world millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
}

impl AffineMap {
    /// Wraps a (D+1)x(D+1) homogeneous matrix, validating the invariants.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || !(2..=4).contains(&matrix.nrows()) {
            return Err(Error::InvalidGrid(format!(
                "affine must be square (D+1)x(D+1) with D in 1..=3, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let d = matrix.nrows() - 1;
        for j in 0..=d {
            let expected = if j == d { 1.0 } else { 0.0 };
            if matrix[(d, j)] != expected {
                return Err(Error::InvalidGrid(format!(
                    "affine last row must be [0, ..., 0, 1], found {} at column {j}",
                    matrix[(d, j)]
                )));
            }
        }
        let det = matrix.view((0, 0), (d, d)).clone_owned().determinant();
        if det.abs() <= SINGULARITY_THRESHOLD {
            return Err(Error::SingularMatrix { det });
        }
        Ok(Self { matrix })
    }

    /// Builds the map from a DxD linear part and a length-D translation.
    pub fn from_parts(linear: &DMatrix<f64>, translation: &DVector<f64>) -> Result<Self> {
        let d = linear.nrows();
        if linear.ncols() != d || translation.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "linear part {}x{} with translation of length {}",
                linear.nrows(),
                linear.ncols(),
                translation.len()
            )));
        }
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(linear);
        m.view_mut((0, d), (d, 1)).copy_from(translation);
        m[(d, d)] = 1.0;
        Self::new(m)
    }

    /// Identity map in `d` dimensions.
    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d + 1, d + 1)).expect("identity is a valid affine")
    }

    /// Diagonal scaling map (voxel sizes on the diagonal, no translation).
    pub fn scaling(scales: &[f64]) -> Result<Self> {
        let d = scales.len();
        let mut m = DMatrix::identity(d + 1, d + 1);
        for (i, &s) in scales.iter().enumerate() {
            m[(i, i)] = s;
        }
        Self::new(m)
    }

    /// Spatial dimensionality D.
    pub fn dim(&self) -> usize {
        self.matrix.nrows() - 1
    }

    /// The full homogeneous matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The DxD linear part (orientation and voxel size).
    pub fn linear(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.matrix.view((0, 0), (d, d)).clone_owned()
    }

    /// The length-D translation column.
    pub fn translation(&self) -> DVector<f64> {
        let d = self.dim();
        self.matrix
            .view((0, d), (d, 1))
            .clone_owned()
            .column(0)
            .into()
    }

    /// Matrix product `self * other`, the map applying `other` first.
    pub fn compose(&self, other: &AffineMap) -> Result<AffineMap> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "compose of {}D and {}D affines",
                self.dim(),
                other.dim()
            )));
        }
        AffineMap::new(&self.matrix * &other.matrix)
    }

    /// Inverse map, so that `a.compose(&a.invert()?)` is the identity.
    pub fn invert(&self) -> Result<AffineMap> {
        let inv = self
            .matrix
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { det: 0.0 })?;
        // The inverse of a homogeneous affine is homogeneous; rounding can
        // leave dust in the last row, so rebuild it from parts.
        let d = self.dim();
        let linear = inv.view((0, 0), (d, d)).clone_owned();
        let translation: DVector<f64> = inv.view((0, d), (d, 1)).clone_owned().column(0).into();
        AffineMap::from_parts(&linear, &translation)
    }

    /// Applies the map to a voxel coordinate.
    pub fn apply(&self, point: &[f64]) -> Vec<f64> {
        let d = self.dim();
        assert_eq!(point.len(), d, "point dimensionality");
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.matrix[(i, d)];
            for (j, &p) in point.iter().enumerate() {
                acc += self.matrix[(i, j)] * p;
            }
            *o = acc;
        }
        out
    }
}

/// Voxel counts plus the affine that places them in world space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    dims: Vec<usize>,
    affine: AffineMap,
}

impl GridSpec {
    pub fn new(dims: Vec<usize>, affine: AffineMap) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::InvalidGrid(format!(
                "grids must have 1..=3 dimensions, got {}",
                dims.len()
            )));
        }
        if dims.len() != affine.dim() {
            return Err(Error::InvalidGrid(format!(
                "{} dims with a {}D affine",
                dims.len(),
                affine.dim()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("zero-sized axis in {dims:?}")));
        }
        Ok(Self { dims, affine })
    }

    /// Grid with the identity affine.
    pub fn isotropic(dims: Vec<usize>) -> Result<Self> {
        let d = dims.len();
        Self::new(dims, AffineMap::identity(d))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn affine(&self) -> &AffineMap {
        &self.affine
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    /// Total voxel count.
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear index of a voxel, first axis fastest.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut lin = 0;
        for axis in (0..self.dims.len()).rev() {
            debug_assert!(idx[axis] < self.dims[axis]);
            lin = lin * self.dims[axis] + idx[axis];
        }
        lin
    }

    /// Voxel index of a linear offset, inverse of [`Self::linear_index`].
    pub fn voxel_index(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (i, &n) in idx.iter_mut().zip(&self.dims) {
            *i = lin % n;
            lin /= n;
        }
        idx
    }

    /// Per-axis voxel size: the Euclidean norm of each column of the linear
    /// part (millimetres between neighbouring voxel centers along one axis).
    pub fn voxel_size(&self) -> Vec<f64> {
        let linear = self.affine.linear();
        (0..self.dim()).map(|j| linear.column(j).norm()).collect()
    }

    /// World coordinates of the voxel centers at the 2^D corners of the grid.
    pub fn corner_points_world(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(1 << d);
        for mask in 0..1usize << d {
            let corner: Vec<f64> = (0..d)
                .map(|axis| {
                    if mask >> axis & 1 == 1 {
                        (self.dims[axis] - 1) as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            out.push(self.affine.apply(&corner));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn diag2(a: f64) -> AffineMap {
        AffineMap::new(dmatrix![a, 0.0; 0.0, 1.0]).unwrap()
    }

    #[test]
    fn compose_identity() {
        let i = AffineMap::identity(2);
        assert_eq!(i.compose(&i).unwrap(), i);
    }

    #[test]
    fn compose_toy_scalings() {
        // inv(diag(2.5)) * I = diag(0.4) and inv(I) * diag(2.5) = diag(2.5)
        let native = diag2(2.5);
        let mean = AffineMap::identity(1);
        let resample = native.invert().unwrap().compose(&mean).unwrap();
        assert_eq!(resample.matrix()[(0, 0)], 0.4);
        let splat = mean.invert().unwrap().compose(&native).unwrap();
        assert_eq!(splat.matrix()[(0, 0)], 2.5);
    }

    #[test]
    fn invert_toy() {
        assert_eq!(diag2(2.5).invert().unwrap().matrix()[(0, 0)], 0.4);
        let i = AffineMap::identity(3);
        assert_eq!(i.invert().unwrap(), i);
    }

    #[test]
    fn invert_translation() {
        let t = AffineMap::from_parts(
            &DMatrix::identity(3, 3),
            &DVector::from_vec(vec![1.5, -2.0, 0.25]),
        )
        .unwrap();
        let inv = t.invert().unwrap();
        assert_eq!(inv.translation(), DVector::from_vec(vec![-1.5, 2.0, -0.25]));
    }

    #[test]
    fn invert_roundtrip_is_identity() {
        let a = AffineMap::new(dmatrix![
            0.9, 0.1, 0.0, 3.0;
            -0.2, 1.1, 0.05, -1.0;
            0.0, 0.3, 0.8, 0.5;
            0.0, 0.0, 0.0, 1.0
        ])
        .unwrap();
        let prod = a.compose(&a.invert().unwrap()).unwrap();
        let eye = DMatrix::<f64>::identity(4, 4);
        assert_abs_diff_eq!(prod.matrix(), &eye, epsilon = 1e-10);
    }

    #[test]
    fn rejects_bad_last_row() {
        let m = dmatrix![1.0, 0.0; 0.5, 1.0];
        assert!(AffineMap::new(m).is_err());
    }

    #[test]
    fn rejects_singular_linear_part() {
        let m = dmatrix![0.0, 0.0, 0.0; 0.0, 1.0, 0.0; 0.0, 0.0, 1.0];
        assert!(matches!(
            AffineMap::new(m),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn grid_linear_index_first_axis_fastest() {
        let g = GridSpec::isotropic(vec![3, 4, 5]).unwrap();
        assert_eq!(g.linear_index(&[0, 0, 0]), 0);
        assert_eq!(g.linear_index(&[1, 0, 0]), 1);
        assert_eq!(g.linear_index(&[0, 1, 0]), 3);
        assert_eq!(g.linear_index(&[0, 0, 1]), 12);
        assert_eq!(g.linear_index(&[2, 3, 4]), 59);
        for lin in [0usize, 1, 3, 12, 59, 37] {
            assert_eq!(g.linear_index(&g.voxel_index(lin)), lin);
        }
    }

    #[test]
    fn corner_points_cover_extents() {
        let g = GridSpec::new(vec![4], diag2(2.5)).unwrap();
        let corners = g.corner_points_world();
        assert_eq!(corners, vec![vec![0.0], vec![7.5]]);
    }

    #[test]
    fn grid_dimension_checks() {
        assert!(GridSpec::new(vec![4, 4], AffineMap::identity(3)).is_err());
        assert!(GridSpec::new(vec![0], AffineMap::identity(1)).is_err());
        assert!(GridSpec::new(vec![], AffineMap::identity(1)).is_err());
    }
}
