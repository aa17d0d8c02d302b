//! Mean space of a population of grids.
//!
//! Given the voxel-to-world headers of a cohort, this builds one common
//! grid whose orientation is the barycentric mean of the cohort's linear
//! parts: per-axis reflections are factored out first, the reflection-free
//! matrices are averaged with [`karcher_mean`], the barycentre is projected
//! onto its closest rotation x scale factorization, the scales are replaced
//! by a caller-chosen voxel size, and majority reflections are re-applied.
//! The field of view is then sized and centred so every input voxel center
//! falls inside the new grid.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::factor::{closest_rot_scale, extract_flips};
use super::karcher::karcher_mean_detailed;
use super::{AffineMap, GridSpec};

/// A mean space together with the intermediate quantities that produced it.
#[derive(Debug, Clone)]
pub struct MeanSpaceResult {
    /// The constructed common grid.
    pub space: GridSpec,
    /// Barycentre of the reflection-free linear parts, before the
    /// rotation x scale projection.
    pub mean_linear: DMatrix<f64>,
    /// Proper rotation factor of the barycentre.
    pub rotation: DMatrix<f64>,
    /// Positive scale factors of the barycentre (the cohort's natural voxel
    /// sizes; the grid itself uses the requested voxel size instead).
    pub scales: Vec<f64>,
    /// Barycentre update steps taken.
    pub iterations: usize,
}

/// Serialized form of a grid, shared between CLI invocations as JSON.
///
/// `affine` is row-major with D+1 rows. [`SpaceDescriptor::to_json`] writes
/// every real with 17 significant digits, enough to reproduce the exact
/// double-precision values on parse.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SpaceDescriptor {
    pub dims: Vec<usize>,
    pub affine: Vec<Vec<f64>>,
    pub voxel_size: Vec<f64>,
}

impl SpaceDescriptor {
    /// Captures a grid (and the voxel size of its axes) for serialization.
    pub fn from_grid(grid: &GridSpec) -> Self {
        let m = grid.affine().matrix();
        let affine = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        Self {
            dims: grid.dims().to_vec(),
            affine,
            voxel_size: grid.voxel_size(),
        }
    }

    /// Validates and converts back into a grid.
    pub fn to_grid(&self) -> Result<GridSpec> {
        let rows = self.affine.len();
        if rows == 0 || self.affine.iter().any(|r| r.len() != rows) {
            return Err(Error::Format(format!(
                "affine must be square, got {} rows of lengths {:?}",
                rows,
                self.affine.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        let m = DMatrix::from_fn(rows, rows, |i, j| self.affine[i][j]);
        GridSpec::new(self.dims.clone(), AffineMap::new(m)?)
    }

    /// Serializes to JSON with 17 significant digits on every real.
    pub fn to_json(&self) -> String {
        let fmt_f64 = |x: f64| format!("{x:.16e}");
        let dims = self
            .dims
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let affine = self
            .affine
            .iter()
            .map(|row| {
                format!(
                    "[{}]",
                    row.iter()
                        .map(|&x| fmt_f64(x))
                        .collect::<Vec<_>>()
                        .join(",")
                )
            })
            .collect::<Vec<_>>()
            .join(",");
        let voxel_size = self
            .voxel_size
            .iter()
            .map(|&x| fmt_f64(x))
            .collect::<Vec<_>>()
            .join(",");
        format!("{{\"dims\":[{dims}],\"affine\":[{affine}],\"voxel_size\":[{voxel_size}]}}\n")
    }

    /// Parses the JSON form.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("space descriptor: {e}")))
    }
}

/// Smallest integer `>= n` of the form `2^a * 3^b` with `b <= 1`.
///
/// Grid dimensions are constrained to this form so that repeated stride-2
/// halving stays integral down to a size of 1 or 3.
pub fn round_dim_up(n: usize) -> usize {
    assert!(n >= 1, "dimensions are positive");
    (n..)
        .find(|&m| {
            let k = if m % 3 == 0 { m / 3 } else { m };
            k.is_power_of_two()
        })
        .expect("every range above n contains a power of two")
}

/// Builds the mean space of a cohort of grids.
///
/// `voxel_size` defaults to 1 mm isotropic. The output linear part is
/// `rotation * diag(flips * voxel_size)` where `rotation` comes from the
/// barycentre of the cohort's reflection-free linear parts and `flips` is
/// the per-axis majority reflection; dimensions are rounded up with
/// [`round_dim_up`]; the translation centres the union of the input
/// voxel-center bounding boxes in the new grid.
pub fn mean_space(grids: &[GridSpec], voxel_size: Option<&[f64]>) -> Result<MeanSpaceResult> {
    let first = grids.first().ok_or(Error::EmptyInput("mean_space"))?;
    let d = first.dim();
    if grids.iter().any(|g| g.dim() != d) {
        return Err(Error::DimensionMismatch(format!(
            "mean_space cohort mixes dimensionalities: {:?}",
            grids.iter().map(GridSpec::dim).collect::<Vec<_>>()
        )));
    }
    let default_vs = vec![1.0; d];
    let voxel_size = voxel_size.unwrap_or(&default_vs);
    if voxel_size.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "voxel size has {} entries for a {d}D cohort",
            voxel_size.len()
        )));
    }
    if voxel_size.iter().any(|&v| !v.is_finite() || v <= 0.0) {
        return Err(Error::InvalidGrid(format!(
            "voxel size must be positive and finite, got {voxel_size:?}"
        )));
    }

    // Reflections have no real logarithm: factor them out, average, and
    // re-apply the per-axis majority at the end.
    let mut flip_votes = vec![0i64; d];
    let mut positives = Vec::with_capacity(grids.len());
    for grid in grids {
        let linear = grid.affine().linear();
        let flips = extract_flips(&linear)?;
        let mut m = linear;
        for j in 0..d {
            if flips[j] < 0.0 {
                flip_votes[j] -= 1;
                for i in 0..d {
                    m[(i, j)] = -m[(i, j)];
                }
            } else {
                flip_votes[j] += 1;
            }
        }
        positives.push(m);
    }

    let (mean_linear, iterations) = karcher_mean_detailed(&positives)?;
    let factors = closest_rot_scale(&mean_linear)?;

    let mut signed_voxel = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let majority = if flip_votes[j] < 0 { -1.0 } else { 1.0 };
        signed_voxel[(j, j)] = majority * factors.flip[j] * voxel_size[j];
    }
    let linear = &factors.rotation * signed_voxel;
    let linear_inv = linear
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix { det: 0.0 })?;

    // Bounding box, in mean-space voxel units, of every input voxel center.
    // Affine images of boxes are spanned by corner images, so the 2^D grid
    // corners of each input suffice.
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for grid in grids {
        for corner in grid.corner_points_world() {
            let v = &linear_inv * DVector::from_vec(corner);
            for j in 0..d {
                lo[j] = lo[j].min(v[j]);
                hi[j] = hi[j].max(v[j]);
            }
        }
    }

    let mut dims = Vec::with_capacity(d);
    let mut start = DVector::<f64>::zeros(d);
    for j in 0..d {
        let extent = hi[j] - lo[j];
        let needed = extent.floor() as usize + 1;
        let n = round_dim_up(needed);
        dims.push(n);
        // Centre the data: leave equal margins on both sides of the box.
        let margin = ((n - 1) as f64 - extent) / 2.0;
        start[j] = lo[j] - margin;
    }
    let translation = &linear * start;
    let space = GridSpec::new(dims, AffineMap::from_parts(&linear, &translation)?)?;

    Ok(MeanSpaceResult {
        space,
        mean_linear,
        rotation: factors.rotation,
        scales: factors.scales,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn rot_grid(dims: Vec<usize>, theta: f64) -> GridSpec {
        let linear = dmatrix![theta.cos(), -theta.sin(); theta.sin(), theta.cos()];
        GridSpec::new(
            dims,
            AffineMap::from_parts(&linear, &DVector::zeros(2)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rounding_rule_examples() {
        let cases = [
            (1, 1),
            (2, 2),
            (3, 3),
            (4, 4),
            (5, 6),
            (7, 8),
            (9, 12),
            (13, 16),
            (17, 24),
            (25, 32),
            (33, 48),
            (97, 128),
            (129, 192),
            (193, 256),
        ];
        for (n, expected) in cases {
            assert_eq!(round_dim_up(n), expected, "round_dim_up({n})");
        }
    }

    #[test]
    fn single_identity_grid_is_unchanged() {
        let g = GridSpec::isotropic(vec![4, 4, 4]).unwrap();
        let m = mean_space(&[g], None).unwrap();
        assert_eq!(m.mean_linear, DMatrix::identity(3, 3));
        assert_eq!(m.space.dims(), &[4, 4, 4]);
        let eye = DMatrix::<f64>::identity(4, 4);
        assert_abs_diff_eq!(m.space.affine().matrix(), &eye, epsilon = 1e-12);
    }

    #[test]
    fn toy_1d_cohort_gives_eight_voxels() {
        let g = GridSpec::new(vec![4], AffineMap::scaling(&[2.5]).unwrap()).unwrap();
        let m = mean_space(&[g], None).unwrap();
        assert_eq!(m.space.dims(), &[8]);
        // Unit voxels, oriented like the input; centring puts the first
        // voxel center at 0.25 so the span [0, 7.5] sits symmetrically.
        assert_abs_diff_eq!(m.space.affine().matrix()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.space.affine().matrix()[(0, 1)], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(m.scales[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn opposite_rotations_cancel() {
        let th = 30f64.to_radians();
        let m = mean_space(&[rot_grid(vec![4, 4], th), rot_grid(vec![4, 4], -th)], None).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_abs_diff_eq!(&m.rotation, &eye, epsilon = 1e-8);
        assert_abs_diff_eq!(&m.space.affine().linear(), &eye, epsilon = 1e-8);
    }

    #[test]
    fn majority_reflection_is_reapplied() {
        let flipped = |s: f64| {
            GridSpec::new(
                vec![4, 4],
                AffineMap::new(dmatrix![-s, 0.0, 0.0; 0.0, 1.0, 0.0; 0.0, 0.0, 1.0]).unwrap(),
            )
            .unwrap()
        };
        let plain = GridSpec::isotropic(vec![4, 4]).unwrap();
        let m = mean_space(&[flipped(1.5), flipped(0.5), plain], None).unwrap();
        let linear = m.space.affine().linear();
        assert_abs_diff_eq!(linear[(0, 0)], -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(linear[(1, 1)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn all_input_centers_land_inside_the_grid() {
        let grids = vec![
            rot_grid(vec![5, 3], 0.4),
            rot_grid(vec![3, 7], -0.2),
            GridSpec::new(vec![4, 4], AffineMap::scaling(&[2.0, 0.7]).unwrap()).unwrap(),
        ];
        let m = mean_space(&grids, None).unwrap();
        let inv = m.space.affine().invert().unwrap();
        for g in &grids {
            for corner in g.corner_points_world() {
                let v = inv.apply(&corner);
                for (j, &vj) in v.iter().enumerate() {
                    assert!(
                        vj >= -0.5 && vj <= m.space.dims()[j] as f64 - 0.5,
                        "corner {corner:?} maps to voxel coordinate {v:?}, outside {:?}",
                        m.space.dims()
                    );
                }
            }
        }
    }

    #[test]
    fn requested_voxel_size_is_honoured() {
        let g = GridSpec::isotropic(vec![6, 6]).unwrap();
        let m = mean_space(&[g], Some(&[2.0, 0.5])).unwrap();
        let vs = m.space.voxel_size();
        assert_abs_diff_eq!(vs[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vs[1], 0.5, epsilon = 1e-12);
        // 5 mm of data at 2 mm voxels: floor(2.5)+1 = 3 centers needed.
        assert_eq!(m.space.dims()[0], 3);
        assert_eq!(m.space.dims()[1], 12);
    }

    #[test]
    fn cohort_validation_errors() {
        assert!(matches!(
            mean_space(&[], None),
            Err(Error::EmptyInput("mean_space"))
        ));
        let a = GridSpec::isotropic(vec![4]).unwrap();
        let b = GridSpec::isotropic(vec![4, 4]).unwrap();
        assert!(matches!(
            mean_space(&[a.clone(), b], None),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(mean_space(&[a], Some(&[0.0])).is_err());
    }

    #[test]
    fn descriptor_json_roundtrip_is_exact() {
        let linear = dmatrix![0.1, 0.0; 0.0, std::f64::consts::PI];
        let g = GridSpec::new(
            vec![4, 6],
            AffineMap::from_parts(&linear, &DVector::from_vec(vec![-0.3, 2.0 / 3.0])).unwrap(),
        )
        .unwrap();
        let desc = SpaceDescriptor::from_grid(&g);
        let text = desc.to_json();
        let back = SpaceDescriptor::from_json(&text).unwrap();
        assert_eq!(back, desc);
        assert_eq!(back.to_grid().unwrap(), g);
        // 17 significant digits: mantissa with 16 decimal places.
        assert!(text.contains("1.0000000000000001e-1"));
    }

    #[test]
    fn descriptor_rejects_malformed_affine() {
        let desc = SpaceDescriptor {
            dims: vec![4, 4],
            affine: vec![vec![1.0, 0.0], vec![0.0, 1.0, 0.0]],
            voxel_size: vec![1.0, 1.0],
        };
        assert!(desc.to_grid().is_err());
        assert!(SpaceDescriptor::from_json("{\"dims\": 3}").is_err());
    }
}
