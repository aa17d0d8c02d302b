//! Explicit sparse-matrix form of the pull and push operators.
//!
//! Resampling is a linear map, so on small grids it can be materialized as
//! a sparse matrix and applied by plain matrix-vector product. The matrices
//! here serve as oracles for the streaming kernels: they are built by an
//! independent per-axis weight enumeration rather than the kernels' corner
//! masks, and the push matrix is constructed purely structurally, as the
//! transpose of the pull matrix of the reversed grid pair.

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::volume::{Volume, VolumeKind};

use super::affine_grid;

/// Largest voxel count per grid for which a matrix is materialized.
const MAX_MATRIX_VOXELS: usize = 100_000;

/// Which operator a matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Gather: rows indexed by destination voxels.
    Pull,
    /// Scatter: the transpose of the reversed pair's gather.
    Push,
}

/// A pull or push operator as an explicit list of matrix entries.
///
/// Entries are sorted by `(row, col)` with no duplicates; weights lie in
/// `[0, 1]`. Rows of a pull matrix sum to 1 when the sample point is fully
/// interior to the source grid and to less than 1 when part of the kernel
/// support lies outside (zero padding).
#[derive(Debug, Clone)]
pub struct SparseOperator {
    src: GridSpec,
    dst: GridSpec,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseOperator {
    /// Number of rows (destination voxels).
    pub fn rows(&self) -> usize {
        self.dst.numel()
    }

    /// Number of columns (source voxels).
    pub fn cols(&self) -> usize {
        self.src.numel()
    }

    /// The grid whose data the operator consumes.
    pub fn src_grid(&self) -> &GridSpec {
        &self.src
    }

    /// The grid the operator maps onto.
    pub fn dst_grid(&self) -> &GridSpec {
        &self.dst
    }

    /// `(row, col, weight)` triples, sorted by `(row, col)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// The transposed operator (rows and columns swapped, same weights).
    pub fn transpose(&self) -> SparseOperator {
        let mut entries: Vec<(usize, usize, f64)> =
            self.entries.iter().map(|&(r, c, w)| (c, r, w)).collect();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        SparseOperator {
            src: self.dst.clone(),
            dst: self.src.clone(),
            entries,
        }
    }

    /// Dense form, rows x cols; for inspection on toy grids.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows(), self.cols());
        for &(r, c, w) in &self.entries {
            m[(r, c)] += w;
        }
        m
    }

    /// Sum of the weights in one row.
    pub fn row_sum(&self, row: usize) -> f64 {
        self.entries
            .iter()
            .filter(|&&(r, _, _)| r == row)
            .map(|&(_, _, w)| w)
            .sum()
    }
}

/// Materializes the operator mapping volumes on `src` to volumes on `dst`.
///
/// Pull rows are indexed by `dst` voxels; the push matrix is the transpose
/// of the pull matrix of the reversed grid pair, weight for weight. Grids
/// beyond 100 000 voxels are refused: matrices here are oracles, not the
/// production path.
pub fn as_matrix(src: &GridSpec, dst: &GridSpec, kind: OperatorKind) -> Result<SparseOperator> {
    for g in [src, dst] {
        if g.numel() > MAX_MATRIX_VOXELS {
            return Err(Error::GridTooLarge(g.numel(), MAX_MATRIX_VOXELS));
        }
    }
    match kind {
        OperatorKind::Pull => pull_matrix(src, dst),
        OperatorKind::Push => Ok(pull_matrix(dst, src)?.transpose()),
    }
}

/// Builds the gather matrix by per-axis weight enumeration: each axis
/// contributes its one or two in-range neighbours, and rows are the
/// cross products of the axis lists.
fn pull_matrix(src: &GridSpec, dst: &GridSpec) -> Result<SparseOperator> {
    let field = affine_grid(src, dst)?;
    let d = src.dim();
    let dims = src.dims();
    let mut strides = vec![0usize; d];
    let mut s = 1;
    for a in 0..d {
        strides[a] = s;
        s *= dims[a];
    }

    let mut entries = Vec::new();
    let mut idx = vec![0usize; d];
    for row in 0..dst.numel() {
        let point = field.point(&idx);
        // Per-axis neighbour lists: (source index along axis, axis weight).
        let mut axis_terms: Vec<Vec<(usize, f64)>> = Vec::with_capacity(d);
        for a in 0..d {
            let floor = point[a].floor();
            let frac = point[a] - floor;
            let mut terms = Vec::with_capacity(2);
            if floor >= 0.0 && floor <= (dims[a] - 1) as f64 {
                terms.push((floor as usize, 1.0 - frac));
            }
            let upper = floor + 1.0;
            if upper >= 0.0 && upper <= (dims[a] - 1) as f64 {
                terms.push((upper as usize, frac));
            }
            axis_terms.push(terms);
        }
        // Cross product of the axis lists.
        let mut combos: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (a, terms) in axis_terms.iter().enumerate() {
            let mut grown = Vec::with_capacity(combos.len() * terms.len());
            for &(lin, w) in &combos {
                for &(i, wa) in terms {
                    grown.push((lin + i * strides[a], w * wa));
                }
            }
            combos = grown;
        }
        for (col, w) in combos {
            entries.push((row, col, w));
        }

        for a in 0..d {
            idx[a] += 1;
            if idx[a] < dst.dims()[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    entries.sort_by_key(|&(r, c, _)| (r, c));
    Ok(SparseOperator {
        src: src.clone(),
        dst: dst.clone(),
        entries,
    })
}

/// Applies the operator: an exact sparse matrix-vector product per channel.
///
/// The input only has to match the operator's column count; the output
/// lives on the operator's destination grid.
pub fn apply_matrix(op: &SparseOperator, f: &Volume) -> Result<Volume> {
    if f.grid().numel() != op.cols() {
        return Err(Error::SizeMismatch(format!(
            "operator has {} columns, volume has {} voxels",
            op.cols(),
            f.grid().numel()
        )));
    }
    let nt = op.rows();
    let channels = f.channels();
    let mut out = vec![0.0f64; channels * nt];
    for c in 0..channels {
        let src = f.channel(c);
        let dst = &mut out[c * nt..(c + 1) * nt];
        for &(r, col, w) in &op.entries {
            dst[r] += w * src[col];
        }
    }
    Ok(Volume::from_parts(
        op.dst_grid().clone(),
        channels,
        out,
        VolumeKind::Continuous,
    ))
}
