//! Multi-channel voxel data bound to a grid.

use crate::error::{Error, Result};
use crate::geometry::GridSpec;

/// How a volume's values are to be treated by the operators.
///
/// Interpolating label indices invents values that were never present
/// (the midpoint of labels 1 and 3 is not label 2), so the resampling and
/// splatting operators refuse `Labels` volumes outright; label maps travel
/// through the pipeline as one-hot or soft probability channels instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    /// Real-valued samples; interpolation is meaningful.
    Continuous,
    /// Non-negative integer class indices; interpolation is forbidden.
    Labels,
}

/// `C` channels of voxel values on a [`GridSpec`].
///
/// Data is stored channel-major: channel `c` occupies the contiguous block
/// `[c * numel, (c+1) * numel)`, and within a block the first grid axis
/// varies fastest. All values are finite; `Labels` volumes additionally
/// hold only non-negative integers.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: GridSpec,
    channels: usize,
    data: Vec<f64>,
    kind: VolumeKind,
}

impl Volume {
    /// Validates and wraps voxel data.
    pub fn new(grid: GridSpec, channels: usize, data: Vec<f64>, kind: VolumeKind) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidVolume(
                "volumes need at least one channel".into(),
            ));
        }
        let expected = channels
            .checked_mul(grid.numel())
            .ok_or_else(|| Error::InvalidVolume("voxel count overflows".into()))?;
        if data.len() != expected {
            return Err(Error::SizeMismatch(format!(
                "{} values for {} channels of {:?} ({} expected)",
                data.len(),
                channels,
                grid.dims(),
                expected
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("voxel value {bad}")));
        }
        if kind == VolumeKind::Labels {
            if let Some(bad) = data.iter().find(|&&v| v < 0.0 || v.fract() != 0.0) {
                return Err(Error::InvalidVolume(format!(
                    "label volumes hold non-negative integers, found {bad}"
                )));
            }
        }
        Ok(Self {
            grid,
            channels,
            data,
            kind,
        })
    }

    /// Continuous volume of zeros.
    pub fn zeros(grid: GridSpec, channels: usize) -> Self {
        let n = grid.numel() * channels;
        Self {
            grid,
            channels,
            data: vec![0.0; n],
            kind: VolumeKind::Continuous,
        }
    }

    /// Continuous volume of ones.
    pub fn ones(grid: GridSpec, channels: usize) -> Self {
        let n = grid.numel() * channels;
        Self {
            grid,
            channels,
            data: vec![1.0; n],
            kind: VolumeKind::Continuous,
        }
    }

    /// Single-channel label map.
    pub fn labels(grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, data, VolumeKind::Labels)
    }

    /// Skips validation; for operator outputs whose values are finite by
    /// construction.
    pub(crate) fn from_parts(
        grid: GridSpec,
        channels: usize,
        data: Vec<f64>,
        kind: VolumeKind,
    ) -> Self {
        debug_assert_eq!(data.len(), channels * grid.numel());
        Self {
            grid,
            channels,
            data,
            kind,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    /// All values, channel-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// One channel's contiguous block.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.numel();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.numel();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Consumes the volume, returning its raw values.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_grid_and_channels() {
        let g = GridSpec::isotropic(vec![2, 3]).unwrap();
        assert!(Volume::new(g.clone(), 2, vec![0.0; 12], VolumeKind::Continuous).is_ok());
        assert!(matches!(
            Volume::new(g, 2, vec![0.0; 11], VolumeKind::Continuous),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn labels_must_be_non_negative_integers() {
        let g = GridSpec::isotropic(vec![4]).unwrap();
        assert!(Volume::labels(g.clone(), vec![0.0, 1.0, 2.0, 2.0]).is_ok());
        assert!(Volume::labels(g.clone(), vec![0.5, 1.0, 2.0, 2.0]).is_err());
        assert!(Volume::labels(g, vec![-1.0, 1.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let g = GridSpec::isotropic(vec![2]).unwrap();
        assert!(matches!(
            Volume::new(g, 1, vec![f64::NAN, 0.0], VolumeKind::Continuous),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn channel_blocks_are_contiguous() {
        let g = GridSpec::isotropic(vec![2, 2]).unwrap();
        let v = Volume::new(
            g,
            2,
            vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0],
            VolumeKind::Continuous,
        )
        .unwrap();
        assert_eq!(v.channel(0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(v.channel(1), &[10.0, 11.0, 12.0, 13.0]);
    }

    #[test]
    fn zero_channels_is_rejected() {
        let g = GridSpec::isotropic(vec![2]).unwrap();
        assert!(Volume::new(g, 0, vec![], VolumeKind::Continuous).is_err());
    }
}
