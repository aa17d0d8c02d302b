//! The pull (resampling) and push (splatting) operators.
//!
//! Both operators connect a volume on one grid to another grid through the
//! voxel-to-voxel affine between their headers. *Pull* gathers: every target
//! voxel interpolates the source at one mapped point. *Push* scatters: every
//! source voxel deposits its value onto the multilinear-weight neighbourhood
//! of its mapped point, and is the adjoint (transpose) of pulling the other
//! way. Out-of-bounds reads are zero and out-of-bounds deposits are
//! discarded; the interpolation kernel is the separable tent of support 2
//! per axis (multilinear).
//!
//! Push accumulates floating-point sums, so the order of additions is part
//! of the contract: the default deterministic mode reproduces the exact
//! bit pattern of a sequential source-order scatter at any thread count, by
//! evaluating weights in parallel over fixed-size source chunks and playing
//! the contributions back in canonical order. An opt-in non-deterministic
//! mode scatters through atomic adds instead and is only reproducible up to
//! addition order.

// Kernels index several fixed-size axis arrays in lockstep; range loops are
// the clearest form for that.
#![allow(clippy::needless_range_loop)]

mod sparse;

pub use sparse::{apply_matrix, as_matrix, OperatorKind, SparseOperator};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::error::{Error, Result};
use crate::geometry::{AffineMap, GridSpec};
use crate::volume::{Volume, VolumeKind};

/// Execution options for the operators.
#[derive(Debug, Clone)]
pub struct Exec {
    /// Worker threads; 0 means all available parallelism.
    pub threads: usize,
    /// When true (the default), push is bitwise identical to a sequential
    /// source-order scatter at any thread count. When false, push uses
    /// atomic scatter-adds whose accumulation order is unspecified.
    pub deterministic: bool,
}

impl Default for Exec {
    fn default() -> Self {
        Self {
            threads: 0,
            deterministic: true,
        }
    }
}

impl Exec {
    /// Single-threaded, deterministic.
    pub fn serial() -> Self {
        Self {
            threads: 1,
            deterministic: true,
        }
    }

    fn effective_threads(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }
}

/// A splatted volume together with its count image.
///
/// The count image is the push of an all-ones volume through the same
/// geometry: it records how much source mass reached each target voxel
/// (a diagonal approximation of the operator's Hessian). Wherever the
/// count is zero, no source voxel reached the target voxel and the pushed
/// value there is zero too.
#[derive(Debug, Clone)]
pub struct PushResult {
    pub pushed: Volume,
    pub count: Volume,
}

/// Affine deformation field sending destination voxels into source voxel
/// coordinates.
///
/// The field of an affine grid pair is itself affine, so it is stored as
/// its linear part and translation rather than densely; [`DeformField::points`]
/// materializes it voxel by voxel when a dense view is wanted.
#[derive(Debug, Clone)]
pub struct DeformField {
    map: AffineMap,
    dims: Vec<usize>,
}

impl DeformField {
    /// The voxel-to-voxel affine (destination into source coordinates).
    pub fn map(&self) -> &AffineMap {
        &self.map
    }

    /// Destination grid dimensions.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Source-voxel coordinates sampled by one destination voxel.
    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        let coords: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
        self.map.apply(&coords)
    }

    /// All sampled points, destination voxels in linear order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.dims.len();
        let numel: usize = self.dims.iter().product();
        let mut idx = vec![0usize; d];
        let mut out = Vec::with_capacity(numel);
        for _ in 0..numel {
            out.push(self.point(&idx));
            for a in 0..d {
                idx[a] += 1;
                if idx[a] < self.dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}

/// Deformation field of an affine grid pair: where each `dst` voxel lands
/// in `src` voxel coordinates, i.e. `src.affine^-1 * dst.affine`.
///
/// When the two headers are identical the map is built as the exact
/// identity rather than through inversion, so resampling a grid onto
/// itself reproduces values bit for bit.
pub fn affine_grid(src: &GridSpec, dst: &GridSpec) -> Result<DeformField> {
    if src.dim() != dst.dim() {
        return Err(Error::DimensionMismatch(format!(
            "grid pair of {}D and {}D",
            src.dim(),
            dst.dim()
        )));
    }
    let map = if src.affine() == dst.affine() {
        AffineMap::identity(src.dim())
    } else {
        src.affine().invert()?.compose(dst.affine())?
    };
    Ok(DeformField {
        map,
        dims: dst.dims().to_vec(),
    })
}

/// Fixed-size grid geometry for the kernels (D <= 3, first axis fastest).
#[derive(Clone, Copy)]
struct Geom {
    d: usize,
    dims: [usize; 3],
    strides: [usize; 3],
}

impl Geom {
    fn of(g: &GridSpec) -> Self {
        let d = g.dim();
        let mut dims = [1usize; 3];
        dims[..d].copy_from_slice(g.dims());
        let mut strides = [0usize; 3];
        let mut s = 1;
        for a in 0..d {
            strides[a] = s;
            s *= dims[a];
        }
        Self { d, dims, strides }
    }

    fn numel(&self) -> usize {
        self.dims[..self.d].iter().product()
    }

    fn decode(&self, mut lin: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for a in 0..self.d {
            idx[a] = lin % self.dims[a];
            lin /= self.dims[a];
        }
        idx
    }

    #[inline]
    fn advance(&self, idx: &mut [usize; 3]) {
        for a in 0..self.d {
            idx[a] += 1;
            if idx[a] < self.dims[a] {
                return;
            }
            idx[a] = 0;
        }
    }
}

/// The voxel-to-voxel affine in kernel-friendly form. `apply` mirrors
/// [`AffineMap::apply`] operation for operation, so kernel sample points
/// are bitwise identical to [`DeformField::point`].
#[derive(Clone, Copy)]
struct VoxelMap {
    d: usize,
    linear: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl VoxelMap {
    fn of(map: &AffineMap) -> Self {
        let d = map.dim();
        let m = map.matrix();
        let mut linear = [[0.0; 3]; 3];
        let mut translation = [0.0; 3];
        for i in 0..d {
            translation[i] = m[(i, d)];
            for j in 0..d {
                linear[i][j] = m[(i, j)];
            }
        }
        Self {
            d,
            linear,
            translation,
        }
    }

    #[inline]
    fn apply(&self, idx: &[usize; 3], out: &mut [f64; 3]) {
        for i in 0..self.d {
            let mut acc = self.translation[i];
            for j in 0..self.d {
                acc += self.linear[i][j] * idx[j] as f64;
            }
            out[i] = acc;
        }
    }
}

/// Multilinear corner weights of one sample point, in fixed corner order
/// (corner bit `a` selects the upper neighbour on axis `a`). Out-of-bounds
/// corners are omitted; returns how many of `out`'s slots were filled.
#[inline]
fn corner_weights(point: &[f64; 3], geom: &Geom, out: &mut [(usize, f64); 8]) -> usize {
    let d = geom.d;
    let mut lo = [0isize; 3];
    let mut frac = [0f64; 3];
    let mut interior = true;
    for a in 0..d {
        let fl = point[a].floor();
        // All corners on this axis fall outside [0, dims-1]: nothing to do.
        if fl < -1.0 || fl > (geom.dims[a] - 1) as f64 {
            return 0;
        }
        lo[a] = fl as isize;
        frac[a] = point[a] - fl;
        if lo[a] < 0 || lo[a] + 2 > geom.dims[a] as isize {
            interior = false;
        }
    }
    let mut filled = 0;
    if interior {
        for mask in 0..1usize << d {
            let mut w = 1.0f64;
            let mut lin = 0usize;
            for a in 0..d {
                if mask >> a & 1 == 1 {
                    w *= frac[a];
                    lin += (lo[a] as usize + 1) * geom.strides[a];
                } else {
                    w *= 1.0 - frac[a];
                    lin += lo[a] as usize * geom.strides[a];
                }
            }
            out[filled] = (lin, w);
            filled += 1;
        }
    } else {
        'corner: for mask in 0..1usize << d {
            let mut w = 1.0f64;
            let mut lin = 0usize;
            for a in 0..d {
                let c = lo[a] + (mask >> a & 1) as isize;
                if c < 0 || c >= geom.dims[a] as isize {
                    continue 'corner;
                }
                if mask >> a & 1 == 1 {
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
                lin += c as usize * geom.strides[a];
            }
            out[filled] = (lin, w);
            filled += 1;
        }
    }
    filled
}

fn require_continuous(f: &Volume) -> Result<()> {
    if f.kind() != VolumeKind::Continuous {
        return Err(Error::LabelsNotInterpolable);
    }
    Ok(())
}

/// Resamples `f` onto `target`: each target voxel gathers the multilinear
/// interpolation of `f` at its mapped point, with zero padding outside the
/// source field of view. Runs with default execution options.
pub fn pull(f: &Volume, target: &GridSpec) -> Result<Volume> {
    pull_with(f, target, &Exec::default())
}

/// [`pull`] with explicit execution options. Pull output is a pure
/// per-voxel function, so every thread count yields identical bits.
pub fn pull_with(f: &Volume, target: &GridSpec, exec: &Exec) -> Result<Volume> {
    require_continuous(f)?;
    let field = affine_grid(f.grid(), target)?;
    let map = VoxelMap::of(field.map());
    let src_geom = Geom::of(f.grid());
    let tgt_geom = Geom::of(target);
    let nt = tgt_geom.numel();
    let channels = f.channels();
    let mut out = vec![0.0f64; channels * nt];
    let threads = exec.effective_threads().min(nt).max(1);

    for c in 0..channels {
        let src = f.channel(c);
        let dst = &mut out[c * nt..(c + 1) * nt];
        if threads == 1 {
            pull_range(src, dst, 0, &map, &src_geom, &tgt_geom);
        } else {
            let chunk = nt.div_ceil(threads);
            std::thread::scope(|scope| {
                for (k, piece) in dst.chunks_mut(chunk).enumerate() {
                    let map = &map;
                    let src_geom = &src_geom;
                    let tgt_geom = &tgt_geom;
                    scope.spawn(move || {
                        pull_range(src, piece, k * chunk, map, src_geom, tgt_geom);
                    });
                }
            });
        }
    }
    Ok(Volume::from_parts(
        target.clone(),
        channels,
        out,
        VolumeKind::Continuous,
    ))
}

fn pull_range(
    src: &[f64],
    dst: &mut [f64],
    start: usize,
    map: &VoxelMap,
    src_geom: &Geom,
    tgt_geom: &Geom,
) {
    let mut idx = tgt_geom.decode(start);
    let mut point = [0f64; 3];
    let mut buf = [(0usize, 0f64); 8];
    for slot in dst.iter_mut() {
        map.apply(&idx, &mut point);
        let filled = corner_weights(&point, src_geom, &mut buf);
        let mut acc = 0.0;
        for &(lin, w) in &buf[..filled] {
            acc += w * src[lin];
        }
        *slot = acc;
        tgt_geom.advance(&mut idx);
    }
}

/// Splats `f` onto `target`: each source voxel scatters its value to the
/// corners around its mapped point, weights landing outside the target
/// discarded. The count image accumulates the bare weights. Runs with
/// default execution options (parallel, deterministic).
pub fn push(f: &Volume, target: &GridSpec) -> Result<PushResult> {
    push_with(f, target, &Exec::default())
}

/// [`push`] with explicit execution options.
pub fn push_with(f: &Volume, target: &GridSpec, exec: &Exec) -> Result<PushResult> {
    require_continuous(f)?;
    // The scatter field is the gather field of the reversed grid pair.
    let field = affine_grid(target, f.grid())?;
    let map = VoxelMap::of(field.map());
    let src_geom = Geom::of(f.grid());
    let tgt_geom = Geom::of(target);
    let threads = exec.effective_threads();

    let (pushed, count) = if threads == 1 {
        push_sequential(f, &map, &src_geom, &tgt_geom)
    } else if exec.deterministic {
        push_deterministic(f, &map, &src_geom, &tgt_geom, threads)
    } else {
        push_atomic(f, &map, &src_geom, &tgt_geom, threads)
    };

    Ok(PushResult {
        pushed: Volume::from_parts(target.clone(), f.channels(), pushed, VolumeKind::Continuous),
        count: Volume::from_parts(target.clone(), 1, count, VolumeKind::Continuous),
    })
}

/// The reference scatter: source voxels in linear order, corners in fixed
/// order. Every other push mode reproduces this addition sequence (or, for
/// the atomic mode, this result up to addition order).
fn push_sequential(
    f: &Volume,
    map: &VoxelMap,
    src_geom: &Geom,
    tgt_geom: &Geom,
) -> (Vec<f64>, Vec<f64>) {
    let ns = src_geom.numel();
    let nt = tgt_geom.numel();
    let channels = f.channels();
    let mut pushed = vec![0.0f64; channels * nt];
    let mut count = vec![0.0f64; nt];
    let sources: Vec<&[f64]> = (0..channels).map(|c| f.channel(c)).collect();
    let mut targets: Vec<&mut [f64]> = pushed.chunks_mut(nt).collect();

    let mut idx = [0usize; 3];
    let mut point = [0f64; 3];
    let mut buf = [(0usize, 0f64); 8];
    for n in 0..ns {
        map.apply(&idx, &mut point);
        let filled = corner_weights(&point, tgt_geom, &mut buf);
        for &(lin, w) in &buf[..filled] {
            for (c, src) in sources.iter().enumerate() {
                targets[c][lin] += w * src[n];
            }
            count[lin] += w;
        }
        src_geom.advance(&mut idx);
    }
    (pushed, count)
}

/// Sources per deterministic work unit. Fixed (never derived from the
/// thread count) so that the stream of contributions, and therefore every
/// accumulation order, is the same no matter how many workers run.
const PUSH_CHUNK: usize = 4096;

/// One scattered contribution: source voxel, target voxel, weight.
type Contribution = (usize, usize, f64);

/// Deterministic parallel push. Workers evaluate the mapping and weights
/// of fixed-size source chunks into contribution lists; the applier plays
/// the lists back strictly in chunk order, reproducing the sequential
/// scatter's addition sequence bit for bit. A sliding window (enforced by
/// making workers wait while far ahead of the applier) bounds the number
/// of lists alive at once.
fn push_deterministic(
    f: &Volume,
    map: &VoxelMap,
    src_geom: &Geom,
    tgt_geom: &Geom,
    threads: usize,
) -> (Vec<f64>, Vec<f64>) {
    let ns = src_geom.numel();
    let nt = tgt_geom.numel();
    let channels = f.channels();
    let chunks = ns.div_ceil(PUSH_CHUNK);
    let window = 4 * threads;

    let mut pushed = vec![0.0f64; channels * nt];
    let mut count = vec![0.0f64; nt];
    let sources: Vec<&[f64]> = (0..channels).map(|c| f.channel(c)).collect();

    let next_chunk = AtomicUsize::new(0);
    let applied = AtomicUsize::new(0);
    let (tx, rx) = mpsc::sync_channel::<(usize, Vec<Contribution>)>(2 * threads);

    std::thread::scope(|scope| {
        for _ in 0..threads.min(chunks) {
            let tx = tx.clone();
            let next_chunk = &next_chunk;
            let applied = &applied;
            scope.spawn(move || {
                let mut point = [0f64; 3];
                let mut buf = [(0usize, 0f64); 8];
                loop {
                    let k = next_chunk.fetch_add(1, Ordering::Relaxed);
                    if k >= chunks {
                        return;
                    }
                    while k >= applied.load(Ordering::Acquire) + window {
                        std::thread::yield_now();
                    }
                    let lo = k * PUSH_CHUNK;
                    let hi = (lo + PUSH_CHUNK).min(ns);
                    let mut entries = Vec::with_capacity((hi - lo) << src_geom.d.min(tgt_geom.d));
                    let mut idx = src_geom.decode(lo);
                    for n in lo..hi {
                        map.apply(&idx, &mut point);
                        let filled = corner_weights(&point, tgt_geom, &mut buf);
                        for &(lin, w) in &buf[..filled] {
                            entries.push((n, lin, w));
                        }
                        src_geom.advance(&mut idx);
                    }
                    if tx.send((k, entries)).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);

        let mut targets: Vec<&mut [f64]> = pushed.chunks_mut(nt).collect();
        let mut pending: BTreeMap<usize, Vec<Contribution>> = BTreeMap::new();
        let mut next_apply = 0usize;
        while next_apply < chunks {
            let (k, entries) = rx.recv().expect("every chunk is sent exactly once");
            pending.insert(k, entries);
            while let Some(entries) = pending.remove(&next_apply) {
                for (n, lin, w) in entries {
                    for (c, src) in sources.iter().enumerate() {
                        targets[c][lin] += w * src[n];
                    }
                    count[lin] += w;
                }
                next_apply += 1;
                applied.store(next_apply, Ordering::Release);
            }
        }
    });
    (pushed, count)
}

/// Adds `v` to an f64 stored as atomic bits.
fn atomic_add(cell: &AtomicU64, v: f64) {
    let mut current = cell.load(Ordering::Relaxed);
    loop {
        let updated = (f64::from_bits(current) + v).to_bits();
        match cell.compare_exchange_weak(current, updated, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(actual) => current = actual,
        }
    }
}

/// Opt-in non-deterministic push: a single shared target accumulated with
/// atomic adds. The set of contributions is identical to the other modes;
/// only the order in which they meet each accumulator is scheduling
/// dependent, so results match the deterministic mode up to roundoff.
fn push_atomic(
    f: &Volume,
    map: &VoxelMap,
    src_geom: &Geom,
    tgt_geom: &Geom,
    threads: usize,
) -> (Vec<f64>, Vec<f64>) {
    let ns = src_geom.numel();
    let nt = tgt_geom.numel();
    let channels = f.channels();
    let cells: Vec<AtomicU64> = (0..(channels + 1) * nt)
        .map(|_| AtomicU64::new(0))
        .collect();
    let sources: Vec<&[f64]> = (0..channels).map(|c| f.channel(c)).collect();
    let next_chunk = AtomicUsize::new(0);
    let chunks = ns.div_ceil(PUSH_CHUNK);

    std::thread::scope(|scope| {
        for _ in 0..threads.min(chunks) {
            let cells = &cells;
            let sources = &sources;
            let next_chunk = &next_chunk;
            scope.spawn(move || {
                let mut point = [0f64; 3];
                let mut buf = [(0usize, 0f64); 8];
                loop {
                    let k = next_chunk.fetch_add(1, Ordering::Relaxed);
                    if k >= chunks {
                        return;
                    }
                    let lo = k * PUSH_CHUNK;
                    let hi = (lo + PUSH_CHUNK).min(ns);
                    let mut idx = src_geom.decode(lo);
                    for n in lo..hi {
                        map.apply(&idx, &mut point);
                        let filled = corner_weights(&point, tgt_geom, &mut buf);
                        for &(lin, w) in &buf[..filled] {
                            for (c, src) in sources.iter().enumerate() {
                                atomic_add(&cells[c * nt + lin], w * src[n]);
                            }
                            atomic_add(&cells[channels * nt + lin], w);
                        }
                        src_geom.advance(&mut idx);
                    }
                }
            });
        }
    });

    let mut values: Vec<f64> = cells
        .into_iter()
        .map(|cell| f64::from_bits(cell.into_inner()))
        .collect();
    let count = values.split_off(channels * nt);
    (values, count)
}

/// Back-propagated sensitivity of [`pull`] with respect to its input: the
/// adjoint applied to `g`, i.e. `push(g).pushed` through the same grid
/// pair. Named separately so the gather/scatter pair binds the way a
/// training framework expects.
pub fn pull_gradient(g: &Volume, src: &GridSpec) -> Result<Volume> {
    pull_gradient_with(g, src, &Exec::default())
}

/// [`pull_gradient`] with explicit execution options.
pub fn pull_gradient_with(g: &Volume, src: &GridSpec, exec: &Exec) -> Result<Volume> {
    push_with(g, src, exec).map(|r| r.pushed)
}
