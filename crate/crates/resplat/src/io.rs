//! Reading and writing volumes as NIfTI-1 files.
//!
//! This is a deliberately small subset of the format: single-file images
//! (magic `n+1`, data following the 348-byte header and a four-byte
//! extension pad), scalar datatypes `uint8`, `int16`, `float32` and
//! `float64`, world orientation taken from the header's affine rows, and
//! at most three spatial dimensions plus an optional channel dimension.
//! Compression, quaternion orientations, slope/intercept scaling and
//! header extensions are out of scope; files relying on them are rejected
//! or, where harmless, ignored (a quaternion next to a valid affine).
//!
//! Files in either byte order are readable — the byte order is detected
//! from the `sizeof_hdr` field — while written files are always
//! little-endian. The affine survives a write/read round trip only to
//! single precision because the header stores its rows as `f32`; voxel
//! data of every supported datatype round-trips bit for bit.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{AffineMap, GridSpec};
use crate::volume::{Volume, VolumeKind};

/// Size of the fixed header, and the value of its `sizeof_hdr` field.
pub const HEADER_SIZE: usize = 348;

/// Offset at which written files place the voxel data: the fixed header
/// followed by four zero extension-flag bytes.
pub const DATA_OFFSET: usize = 352;

const MAGIC: &[u8; 4] = b"n+1\0";

/// On-disk element type of a volume file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
    Float64,
}

impl Datatype {
    /// The header's `datatype` code.
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    /// Datatype for a header code, if it is one of the supported ones.
    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::Uint8),
            4 => Some(Datatype::Int16),
            16 => Some(Datatype::Float32),
            64 => Some(Datatype::Float64),
            _ => None,
        }
    }

    /// Bytes per stored element.
    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }

    /// Lower-case name, as accepted by [`Datatype::from_str`].
    pub fn name(self) -> &'static str {
        match self {
            Datatype::Uint8 => "uint8",
            Datatype::Int16 => "int16",
            Datatype::Float32 => "float32",
            Datatype::Float64 => "float64",
        }
    }

    fn bitpix(self) -> i16 {
        (self.bytes() * 8) as i16
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Datatype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uint8" => Ok(Datatype::Uint8),
            "int16" => Ok(Datatype::Int16),
            "float32" => Ok(Datatype::Float32),
            "float64" => Ok(Datatype::Float64),
            other => Err(Error::Format(format!("unknown datatype name {other:?}"))),
        }
    }
}

/// Header metadata of a volume file, read without decoding the payload.
#[derive(Debug, Clone)]
pub struct VolumeFile {
    /// Path the header was read from.
    pub path: PathBuf,
    /// Spatial grid dimensions.
    pub dims: Vec<usize>,
    /// Channel count (the fourth dimension, 1 when absent).
    pub channels: usize,
    /// On-disk element type.
    pub datatype: Datatype,
    /// Per-axis voxel extents from the `pixdim` field.
    pub pixdim: Vec<f64>,
    /// Voxel-to-world map.
    pub affine: AffineMap,
    /// True when the affine came from the header's world-transform rows,
    /// false when it was reconstructed as a diagonal `pixdim` scaling.
    pub sform: bool,
    /// Byte order of the file.
    pub little_endian: bool,
}

struct RawHeader {
    dim: [i16; 8],
    datatype: i16,
    bitpix: i16,
    pixdim: [f32; 8],
    vox_offset: f32,
    sform_code: i16,
    srow: [[f32; 4]; 3],
    magic: [u8; 4],
}

fn parse_raw<E: ByteOrder>(h: &[u8]) -> RawHeader {
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = E::read_i16(&h[40 + 2 * i..]);
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&h[76 + 4 * i..]);
    }
    let mut srow = [[0f32; 4]; 3];
    for (i, row) in srow.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = E::read_f32(&h[280 + 16 * i + 4 * j..]);
        }
    }
    RawHeader {
        dim,
        datatype: E::read_i16(&h[70..]),
        bitpix: E::read_i16(&h[72..]),
        pixdim,
        vox_offset: E::read_f32(&h[108..]),
        sform_code: E::read_i16(&h[254..]),
        srow,
        magic: [h[344], h[345], h[346], h[347]],
    }
}

fn interpret(path: &Path, raw: &RawHeader, little_endian: bool) -> Result<VolumeFile> {
    if raw.magic != *MAGIC {
        return Err(Error::Format(format!(
            "unknown magic {:?}; expected \"n+1\"",
            String::from_utf8_lossy(&raw.magic)
        )));
    }

    let ndim = raw.dim[0];
    if !(1..=4).contains(&ndim) {
        return Err(Error::Format(format!(
            "unsupported dimensionality {ndim}; this reader handles 1 to 4 dims"
        )));
    }
    let ndim = ndim as usize;
    let spatial = ndim.min(3);
    let mut dims = Vec::with_capacity(spatial);
    for a in 0..spatial {
        let n = raw.dim[1 + a];
        if n < 1 {
            return Err(Error::Format(format!("axis {a} has size {n}")));
        }
        dims.push(n as usize);
    }
    let channels = if ndim == 4 {
        let c = raw.dim[4];
        if c < 1 {
            return Err(Error::Format(format!("channel dimension has size {c}")));
        }
        c as usize
    } else {
        1
    };

    let datatype = Datatype::from_code(raw.datatype)
        .ok_or_else(|| Error::Format(format!("unsupported datatype code {}", raw.datatype)))?;
    if raw.bitpix != datatype.bitpix() {
        return Err(Error::Format(format!(
            "bitpix {} does not match datatype {datatype}",
            raw.bitpix
        )));
    }

    if !raw.vox_offset.is_finite()
        || raw.vox_offset < DATA_OFFSET as f32
        || raw.vox_offset.fract() != 0.0
    {
        return Err(Error::Format(format!(
            "invalid data offset {}",
            raw.vox_offset
        )));
    }

    let pixdim: Vec<f64> = (0..spatial).map(|a| raw.pixdim[1 + a] as f64).collect();
    let affine = if raw.sform_code > 0 {
        let mut m = DMatrix::zeros(spatial + 1, spatial + 1);
        for i in 0..spatial {
            for j in 0..spatial {
                m[(i, j)] = raw.srow[i][j] as f64;
            }
            m[(i, spatial)] = raw.srow[i][3] as f64;
        }
        m[(spatial, spatial)] = 1.0;
        AffineMap::new(m)?
    } else {
        AffineMap::scaling(&pixdim)?
    };

    Ok(VolumeFile {
        path: path.to_path_buf(),
        dims,
        channels,
        datatype,
        pixdim,
        affine,
        sform: raw.sform_code > 0,
        little_endian,
    })
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(VolumeFile, usize)> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file has {} bytes; a volume header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let le_size = LittleEndian::read_i32(&bytes[0..4]);
    let be_size = BigEndian::read_i32(&bytes[0..4]);
    let (raw, little_endian) = if le_size == HEADER_SIZE as i32 {
        (parse_raw::<LittleEndian>(bytes), true)
    } else if be_size == HEADER_SIZE as i32 {
        (parse_raw::<BigEndian>(bytes), false)
    } else {
        return Err(Error::Format(format!(
            "header size field is {le_size}; not a volume file"
        )));
    };
    let file = interpret(path, &raw, little_endian)?;
    Ok((file, raw.vox_offset as usize))
}

/// Reads a file's header without touching the voxel data.
pub fn probe(path: impl AsRef<Path>) -> Result<VolumeFile> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    parse_header(path, &bytes).map(|(file, _)| file)
}

fn decode<E: ByteOrder>(datatype: Datatype, raw: &[u8], out: &mut Vec<f64>) {
    match datatype {
        Datatype::Uint8 => out.extend(raw.iter().map(|&b| b as f64)),
        Datatype::Int16 => out.extend(raw.chunks_exact(2).map(|c| E::read_i16(c) as f64)),
        Datatype::Float32 => out.extend(raw.chunks_exact(4).map(|c| E::read_f32(c) as f64)),
        Datatype::Float64 => out.extend(raw.chunks_exact(8).map(E::read_f64)),
    }
}

/// Reads a volume file.
///
/// The grid affine comes from the header's world-transform rows when
/// present (`sform_code > 0`) and falls back to a diagonal `pixdim`
/// scaling otherwise. Voxel values of every datatype are widened to
/// `f64`, which is exact for all four supported types.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (file, offset) = parse_header(path, &bytes)?;

    let numel: usize = file.dims.iter().product();
    let payload = numel * file.channels * file.datatype.bytes();
    if bytes.len() < offset + payload {
        return Err(Error::Format(format!(
            "truncated payload: need {payload} bytes at offset {offset}, file holds {}",
            bytes.len().saturating_sub(offset)
        )));
    }
    let raw = &bytes[offset..offset + payload];

    let mut data = Vec::with_capacity(numel * file.channels);
    if file.little_endian {
        decode::<LittleEndian>(file.datatype, raw, &mut data);
    } else {
        decode::<BigEndian>(file.datatype, raw, &mut data);
    }

    let grid = GridSpec::new(file.dims.clone(), file.affine.clone())?;
    Volume::new(grid, file.channels, data, VolumeKind::Continuous)
}

fn encode(v: &Volume, datatype: Datatype) -> Result<Vec<u8>> {
    let data = v.data();
    let mut out = Vec::with_capacity(data.len() * datatype.bytes());
    match datatype {
        Datatype::Uint8 => {
            for &x in data {
                if x.fract() != 0.0 || !(0.0..=255.0).contains(&x) {
                    return Err(Error::ValueOverflow {
                        value: x,
                        datatype: "uint8",
                    });
                }
                out.push(x as u8);
            }
        }
        Datatype::Int16 => {
            for &x in data {
                if x.fract() != 0.0 || !(-32768.0..=32767.0).contains(&x) {
                    return Err(Error::ValueOverflow {
                        value: x,
                        datatype: "int16",
                    });
                }
                let mut buf = [0u8; 2];
                LittleEndian::write_i16(&mut buf, x as i16);
                out.extend_from_slice(&buf);
            }
        }
        Datatype::Float32 => {
            for &x in data {
                let mut buf = [0u8; 4];
                LittleEndian::write_f32(&mut buf, x as f32);
                out.extend_from_slice(&buf);
            }
        }
        Datatype::Float64 => {
            for &x in data {
                let mut buf = [0u8; 8];
                LittleEndian::write_f64(&mut buf, x);
                out.extend_from_slice(&buf);
            }
        }
    }
    Ok(out)
}

fn build_header(v: &Volume, datatype: Datatype) -> Vec<u8> {
    let grid = v.grid();
    let d = grid.dim();
    let spatial = if v.channels() > 1 { 3 } else { d };
    let ndim = if v.channels() > 1 { 4 } else { d };

    let mut h = vec![0u8; DATA_OFFSET];
    LittleEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r';

    let mut dim = [1i16; 8];
    dim[0] = ndim as i16;
    for a in 0..spatial {
        dim[1 + a] = *grid.dims().get(a).unwrap_or(&1) as i16;
    }
    if v.channels() > 1 {
        dim[4] = v.channels() as i16;
    }
    for (i, &x) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..], x);
    }

    LittleEndian::write_i16(&mut h[70..], datatype.code());
    LittleEndian::write_i16(&mut h[72..], datatype.bitpix());

    let voxel_size = grid.voxel_size();
    let mut pixdim = [1f32; 8];
    for a in 0..spatial {
        pixdim[1 + a] = *voxel_size.get(a).unwrap_or(&1.0) as f32;
    }
    for (i, &x) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..], x);
    }

    LittleEndian::write_f32(&mut h[108..], DATA_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..], 1.0);

    LittleEndian::write_i16(&mut h[252..], 0);
    LittleEndian::write_i16(&mut h[254..], 2);

    let linear = grid.affine().linear();
    let translation = grid.affine().translation();
    for i in 0..3 {
        let mut row = [0f32; 4];
        if i < d {
            for j in 0..d {
                row[j] = linear[(i, j)] as f32;
            }
            row[3] = translation[i] as f32;
        } else {
            row[i] = 1.0;
        }
        for (j, &x) in row.iter().enumerate() {
            LittleEndian::write_f32(&mut h[280 + 16 * i + 4 * j..], x);
        }
    }

    h[344..348].copy_from_slice(MAGIC);
    h
}

/// Writes a volume as a little-endian single-file image.
///
/// Values must fit the chosen datatype: writing a non-integral or
/// out-of-range value as `uint8` or `int16` is an error rather than a
/// silent rounding. `float32` narrows by the usual rounding; `float64`
/// stores values bit for bit. The header carries the grid affine in its
/// world-transform rows and the per-axis voxel extents in `pixdim`.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    let payload = encode(v, datatype)?;
    let mut bytes = build_header(v, datatype);
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use tempfile::tempdir;

    fn skewed_grid() -> GridSpec {
        let linear = DMatrix::from_row_slice(2, 2, &[1.9, -0.3, 0.4, 2.2]);
        let translation = DVector::from_row_slice(&[-12.5, 7.25]);
        let affine = AffineMap::from_parts(&linear, &translation).unwrap();
        GridSpec::new(vec![3, 2], affine).unwrap()
    }

    #[test]
    fn round_trip_preserves_every_datatype() {
        let dir = tempdir().unwrap();
        let grid = skewed_grid();
        let cases: Vec<(Datatype, Vec<f64>)> = vec![
            (Datatype::Uint8, vec![0.0, 1.0, 17.0, 128.0, 254.0, 255.0]),
            (
                Datatype::Int16,
                vec![-32768.0, -7.0, 0.0, 1.0, 300.0, 32767.0],
            ),
            (
                Datatype::Float32,
                vec![0.5, -3.25, 1024.0, -0.125, 6.0e7, 0.0],
            ),
            (
                Datatype::Float64,
                vec![
                    1.0 / 3.0,
                    -std::f64::consts::PI,
                    1e-300,
                    0.1,
                    2.5,
                    f64::MIN_POSITIVE,
                ],
            ),
        ];
        for (datatype, data) in cases {
            let v = Volume::new(grid.clone(), 1, data.clone(), VolumeKind::Continuous).unwrap();
            let path = dir.path().join(format!("{datatype}.nii"));
            write_volume(&v, &path, datatype).unwrap();
            let back = read_volume(&path).unwrap();
            assert_eq!(back.grid().dims(), grid.dims());
            assert_eq!(back.channels(), 1);
            assert_eq!(back.data(), &data[..], "{datatype} payload");
            let orig = grid.affine().matrix();
            let read = back.grid().affine().matrix();
            for (a, b) in orig.iter().zip(read.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn multichannel_round_trip() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::isotropic(vec![2, 2]).unwrap();
        let data = vec![1.5, 2.5, 3.5, 4.5, -1.0, -2.0, -3.0, -4.0];
        let v = Volume::new(grid, 2, data.clone(), VolumeKind::Continuous).unwrap();
        let path = dir.path().join("mc.nii");
        write_volume(&v, &path, Datatype::Float64).unwrap();

        let file = probe(&path).unwrap();
        assert_eq!(file.dims, vec![2, 2, 1]);
        assert_eq!(file.channels, 2);

        let back = read_volume(&path).unwrap();
        assert_eq!(back.channels(), 2);
        assert_eq!(back.data(), &data[..]);
    }

    #[test]
    fn one_dimensional_round_trip() {
        let dir = tempdir().unwrap();
        let affine = AffineMap::from_parts(
            &DMatrix::from_row_slice(1, 1, &[2.5]),
            &DVector::from_row_slice(&[-4.0]),
        )
        .unwrap();
        let grid = GridSpec::new(vec![4], affine).unwrap();
        let v = Volume::new(
            grid,
            1,
            vec![10.0, 11.0, 12.0, 13.0],
            VolumeKind::Continuous,
        )
        .unwrap();
        let path = dir.path().join("line.nii");
        write_volume(&v, &path, Datatype::Float64).unwrap();

        let file = probe(&path).unwrap();
        assert_eq!(file.dims, vec![4]);
        assert!(file.sform);
        assert!(file.little_endian);
        assert_eq!(file.datatype, Datatype::Float64);

        let back = read_volume(&path).unwrap();
        assert_eq!(back.grid().dims(), &[4]);
        assert_eq!(back.data(), &[10.0, 11.0, 12.0, 13.0]);
        assert_abs_diff_eq!(back.grid().affine().matrix()[(0, 0)], 2.5, epsilon = 1e-6);
        assert_abs_diff_eq!(back.grid().affine().matrix()[(0, 1)], -4.0, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_three_dimensional_volume() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::isotropic(vec![4, 1, 1]).unwrap();
        let v = Volume::new(
            grid,
            1,
            vec![10.0, 11.0, 12.0, 13.0],
            VolumeKind::Continuous,
        )
        .unwrap();
        let path = dir.path().join("degenerate.nii");
        write_volume(&v, &path, Datatype::Float64).unwrap();
        let file = probe(&path).unwrap();
        assert_eq!(file.dims, vec![4, 1, 1]);
        let back = read_volume(&path).unwrap();
        assert_eq!(back.data(), &[10.0, 11.0, 12.0, 13.0]);
    }

    #[test]
    fn labels_round_trip_as_uint8() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::isotropic(vec![2, 2]).unwrap();
        let labels = Volume::labels(grid, vec![0.0, 3.0, 1.0, 2.0]).unwrap();
        let path = dir.path().join("labels.nii");
        write_volume(&labels, &path, Datatype::Uint8).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.data(), labels.data());
    }

    #[test]
    fn zeros_file_layout() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::isotropic(vec![8, 8, 8]).unwrap();
        let v = Volume::zeros(grid, 1);
        let path = dir.path().join("zeros.nii");
        write_volume(&v, &path, Datatype::Float32).unwrap();

        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), DATA_OFFSET + 8 * 8 * 8 * 4);
        assert_eq!(LittleEndian::read_f32(&bytes[108..]), DATA_OFFSET as f32);
        assert_eq!(&bytes[344..348], MAGIC);
        assert!(bytes[DATA_OFFSET..].iter().all(|&b| b == 0));
        assert!(bytes[348..352].iter().all(|&b| b == 0));
    }

    fn big_endian_file() -> Vec<u8> {
        let mut h = vec![0u8; DATA_OFFSET];
        BigEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
        BigEndian::write_i16(&mut h[40..], 2);
        BigEndian::write_i16(&mut h[42..], 2);
        BigEndian::write_i16(&mut h[44..], 1);
        BigEndian::write_i16(&mut h[70..], 64);
        BigEndian::write_i16(&mut h[72..], 64);
        BigEndian::write_f32(&mut h[76..], 1.0);
        BigEndian::write_f32(&mut h[80..], 2.0);
        BigEndian::write_f32(&mut h[84..], 3.0);
        BigEndian::write_f32(&mut h[108..], DATA_OFFSET as f32);
        h[344..348].copy_from_slice(MAGIC);
        let mut payload = [0u8; 16];
        BigEndian::write_f64(&mut payload[0..], 1.5);
        BigEndian::write_f64(&mut payload[8..], -2.5);
        h.extend_from_slice(&payload);
        h
    }

    #[test]
    fn big_endian_files_are_readable() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("be.nii");
        fs::write(&path, big_endian_file()).unwrap();

        let file = probe(&path).unwrap();
        assert!(!file.little_endian);
        assert!(!file.sform);
        assert_eq!(file.dims, vec![2, 1]);
        assert_eq!(file.pixdim, vec![2.0, 3.0]);

        let back = read_volume(&path).unwrap();
        assert_eq!(back.data(), &[1.5, -2.5]);
        let m = back.grid().affine().matrix();
        assert_eq!(m[(0, 0)], 2.0);
        assert_eq!(m[(1, 1)], 3.0);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn pixdim_fallback_without_world_rows() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::isotropic(vec![3]).unwrap();
        let v = Volume::new(grid, 1, vec![1.0, 2.0, 3.0], VolumeKind::Continuous).unwrap();
        let path = dir.path().join("fallback.nii");
        write_volume(&v, &path, Datatype::Float64).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        LittleEndian::write_i16(&mut bytes[254..], 0);
        LittleEndian::write_f32(&mut bytes[80..], 4.0);
        fs::write(&path, &bytes).unwrap();

        let back = read_volume(&path).unwrap();
        assert_eq!(back.grid().affine().matrix()[(0, 0)], 4.0);
        assert_eq!(back.grid().affine().matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn extra_header_space_is_respected() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::isotropic(vec![2]).unwrap();
        let v = Volume::new(grid, 1, vec![5.0, 6.0], VolumeKind::Continuous).unwrap();
        let path = dir.path().join("offset.nii");
        write_volume(&v, &path, Datatype::Float64).unwrap();

        let bytes = fs::read(&path).unwrap();
        let mut moved = bytes[..DATA_OFFSET].to_vec();
        LittleEndian::write_f32(&mut moved[108..], 368.0);
        moved.extend_from_slice(&[0u8; 16]);
        moved.extend_from_slice(&bytes[DATA_OFFSET..]);
        fs::write(&path, &moved).unwrap();

        let back = read_volume(&path).unwrap();
        assert_eq!(back.data(), &[5.0, 6.0]);
    }

    #[test]
    fn integer_overflow_is_rejected() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::isotropic(vec![1]).unwrap();
        let path = dir.path().join("overflow.nii");
        let cases = [
            (256.0, Datatype::Uint8),
            (-1.0, Datatype::Uint8),
            (0.5, Datatype::Uint8),
            (40000.0, Datatype::Int16),
            (-32769.0, Datatype::Int16),
            (2.25, Datatype::Int16),
        ];
        for (value, datatype) in cases {
            let v = Volume::new(grid.clone(), 1, vec![value], VolumeKind::Continuous).unwrap();
            match write_volume(&v, &path, datatype) {
                Err(Error::ValueOverflow { value: got, .. }) => assert_eq!(got, value),
                other => panic!("expected overflow for {value} as {datatype}, got {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::isotropic(vec![4]).unwrap();
        let v = Volume::new(grid, 1, vec![1.0, 2.0, 3.0, 4.0], VolumeKind::Continuous).unwrap();
        let path = dir.path().join("good.nii");
        write_volume(&v, &path, Datatype::Float64).unwrap();
        let good = fs::read(&path).unwrap();

        let too_short = &good[..200];
        fs::write(&path, too_short).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format(_))));

        let mut bad_size = good.clone();
        LittleEndian::write_i32(&mut bad_size[0..], 500);
        fs::write(&path, &bad_size).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format(_))));

        let mut bad_magic = good.clone();
        bad_magic[344..348].copy_from_slice(b"ni1\0");
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format(_))));

        let mut bad_datatype = good.clone();
        LittleEndian::write_i16(&mut bad_datatype[70..], 8);
        LittleEndian::write_i16(&mut bad_datatype[72..], 32);
        fs::write(&path, &bad_datatype).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format(_))));

        let mut bad_bitpix = good.clone();
        LittleEndian::write_i16(&mut bad_bitpix[72..], 16);
        fs::write(&path, &bad_bitpix).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format(_))));

        let truncated = &good[..good.len() - 8];
        fs::write(&path, truncated).unwrap();
        match read_volume(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected truncation error, got {other:?}"),
        }

        let missing = dir.path().join("missing.nii");
        assert!(matches!(read_volume(&missing), Err(Error::Io(_))));
    }

    #[test]
    fn datatype_names_parse_and_print() {
        for datatype in [
            Datatype::Uint8,
            Datatype::Int16,
            Datatype::Float32,
            Datatype::Float64,
        ] {
            assert_eq!(datatype.name().parse::<Datatype>().unwrap(), datatype);
            assert_eq!(Datatype::from_code(datatype.code()), Some(datatype));
        }
        assert!("int32".parse::<Datatype>().is_err());
    }
}
