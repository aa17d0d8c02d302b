//! Forward compositions for training and evaluating on native-space data.
//!
//! A [`Subject`] carries one or more native-space modality volumes plus a
//! label volume, each on its own grid. Three composition strategies turn
//! that heterogeneous bundle into a prediction on the label grid, named
//! after the stage at which resampling happens:
//!
//! * [`forward_eq1`] — resample first: pull every modality onto the label
//!   grid and run the transform there (the classic preprocessing
//!   baseline).
//! * [`forward_eq2`] — run in a common space: pull the modalities onto a
//!   chosen space, run the transform there, then pull the K-channel
//!   output onto the label grid.
//! * [`forward_eq3`] — splat instead of pull: push each modality (and an
//!   all-ones companion recording how much mass arrived) onto the common
//!   space with the adjoint operator, run the transform on the assembled
//!   `2C`-channel tensor, pull the logits onto the label grid, and
//!   softmax there. Information never leaves native space through an
//!   interpolation bottleneck, and the count channels let the transform
//!   see exactly where data existed.
//!
//! The transform itself is abstract ([`GridTransform`]): anything that
//! maps a multi-channel volume to a K-channel volume on the same grid,
//! typically a neural network evaluated by an external engine.
//!
//! Evaluation helpers follow the same native-space philosophy:
//! [`hard_labels`] reduces soft maps to label maps and [`dice`] scores
//! them against the reference on the reference's own grid.

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::gridops::{pull, push};
use crate::volume::{Volume, VolumeKind};

/// One subject's native-space data: `C` single-channel modality volumes
/// and a label volume, each on its own grid.
#[derive(Debug, Clone)]
pub struct Subject {
    id: String,
    channels: Vec<Volume>,
    labels: Volume,
}

impl Subject {
    /// Bundles modality channels and labels after validating them.
    ///
    /// Every channel must be a single-channel volume, the labels must be a
    /// single-channel label volume, and all grids must share the same
    /// spatial dimensionality (the grids themselves may differ freely).
    pub fn new(id: impl Into<String>, channels: Vec<Volume>, labels: Volume) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::EmptyInput("subject needs at least one channel"));
        }
        if labels.kind() != VolumeKind::Labels {
            return Err(Error::InvalidVolume(
                "subject labels must be a label volume".into(),
            ));
        }
        if labels.channels() != 1 {
            return Err(Error::InvalidVolume(format!(
                "label volume must have one channel, has {}",
                labels.channels()
            )));
        }
        let d = labels.grid().dim();
        for (c, ch) in channels.iter().enumerate() {
            if ch.channels() != 1 {
                return Err(Error::InvalidVolume(format!(
                    "modality channel {c} must be single-channel, has {}",
                    ch.channels()
                )));
            }
            if ch.grid().dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "channel {c} is {}-dimensional, labels are {d}-dimensional",
                    ch.grid().dim()
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            channels,
            labels,
        })
    }

    /// Subject identifier.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Native-space modality volumes.
    pub fn channels(&self) -> &[Volume] {
        &self.channels
    }

    /// Native-space label volume.
    pub fn labels(&self) -> &Volume {
        &self.labels
    }
}

/// A transformation from a multi-channel volume to a `K`-channel volume
/// on the same grid — the slot where a network (or any fixed map) plugs
/// into the forward compositions.
///
/// Implementations must keep the grid: the output lives on the input's
/// grid with exactly [`output_classes`](GridTransform::output_classes)
/// channels; the compositions verify both. Subjects may be processed
/// concurrently, so implementations should either be safe for concurrent
/// invocation or be serialized by the caller.
pub trait GridTransform {
    /// Channels the transform expects on its input.
    fn input_channels(&self) -> usize;

    /// Channels (classes `K`) of the output.
    fn output_classes(&self) -> usize;

    /// Maps the input to `K` channels on the same grid.
    fn apply(&self, input: &Volume) -> Result<Volume>;
}

/// A subject's modalities splatted onto a common space: per channel `c`,
/// the pushed values and the pushed ones (the count image), interleaved
/// as `[splat_1, count_1, …, splat_C, count_C]`.
#[derive(Debug, Clone)]
pub struct AssembledInput {
    /// The common space the tensor lives on.
    pub space: GridSpec,
    /// `2C`-channel volume on `space`.
    pub tensor: Volume,
}

/// Prediction of [`forward_eq1`]: the transform's output on the label
/// grid next to the untouched native labels, ready for a loss.
#[derive(Debug, Clone)]
pub struct LossPair {
    /// `K`-channel prediction on the label grid.
    pub prediction: Volume,
    /// The subject's native labels.
    pub target: Volume,
}

/// Prediction of [`forward_eq3`]: logits and their softmax, both on the
/// label grid.
#[derive(Debug, Clone)]
pub struct SoftPrediction {
    /// `K`-channel logits on the label grid, including the background
    /// bias added at voxels the common space cannot reach.
    pub logits: Volume,
    /// Per-voxel softmax of the logits.
    pub probabilities: Volume,
}

fn check_input_channels(declared: usize, available: usize) -> Result<()> {
    if declared != available {
        return Err(Error::ChannelMismatch {
            expected: declared,
            actual: available,
        });
    }
    Ok(())
}

fn apply_transform<T: GridTransform + ?Sized>(transform: &T, input: &Volume) -> Result<Volume> {
    let out = transform.apply(input)?;
    if out.grid() != input.grid() {
        return Err(Error::GridMismatch(
            "transform moved the volume off its grid".into(),
        ));
    }
    if out.channels() != transform.output_classes() {
        return Err(Error::ChannelMismatch {
            expected: transform.output_classes(),
            actual: out.channels(),
        });
    }
    Ok(out)
}

fn stack_pulled(channels: &[Volume], grid: &GridSpec) -> Result<Volume> {
    let mut data = Vec::with_capacity(channels.len() * grid.numel());
    for ch in channels {
        data.extend_from_slice(pull(ch, grid)?.data());
    }
    Volume::new(grid.clone(), channels.len(), data, VolumeKind::Continuous)
}

/// Splats every channel of a subject onto a common space with the adjoint
/// operator, pairing each with its count image.
///
/// Mass falling outside the space is dropped by the boundary policy, so
/// the space should cover every subject (mean-space construction
/// guarantees this for the population it was built from). The count
/// channels are exactly the push of an all-ones volume through the same
/// geometry.
pub fn assemble_splat(subject: &Subject, space: &GridSpec) -> Result<AssembledInput> {
    let numel = space.numel();
    let c = subject.channels().len();
    let mut data = Vec::with_capacity(2 * c * numel);
    for ch in subject.channels() {
        let result = push(ch, space)?;
        data.extend_from_slice(result.pushed.data());
        data.extend_from_slice(result.count.data());
    }
    let tensor = Volume::new(space.clone(), 2 * c, data, VolumeKind::Continuous)?;
    Ok(AssembledInput {
        space: space.clone(),
        tensor,
    })
}

/// Resample-first composition: pulls every channel onto the label grid,
/// applies the transform there, and returns the prediction alongside the
/// untouched labels.
pub fn forward_eq1<T: GridTransform + ?Sized>(
    subject: &Subject,
    transform: &T,
) -> Result<LossPair> {
    check_input_channels(transform.input_channels(), subject.channels().len())?;
    let label_grid = subject.labels().grid().clone();
    let stacked = stack_pulled(subject.channels(), &label_grid)?;
    let prediction = apply_transform(transform, &stacked)?;
    Ok(LossPair {
        prediction,
        target: subject.labels().clone(),
    })
}

/// Common-space composition: pulls every channel onto `space`, applies
/// the transform there, then pulls the `K`-channel output onto the label
/// grid.
///
/// With `space` equal to the label grid this reproduces [`forward_eq1`]
/// bit for bit, because resampling a grid onto itself is exact.
pub fn forward_eq2<T: GridTransform + ?Sized>(
    subject: &Subject,
    transform: &T,
    space: &GridSpec,
) -> Result<Volume> {
    check_input_channels(transform.input_channels(), subject.channels().len())?;
    let stacked = stack_pulled(subject.channels(), space)?;
    let out = apply_transform(transform, &stacked)?;
    pull(&out, subject.labels().grid())
}

/// Splat composition: assembles the `2C`-channel splat tensor on `space`,
/// applies the transform there, pulls the `K` logit channels onto the
/// label grid, and softmaxes per voxel.
///
/// Label-grid voxels with zero pull support — the common space cannot
/// reach them, so every logit there is zero — get `+1` added to their
/// class-0 logit, biasing the softmax toward the background class
/// instead of leaving it uniform.
pub fn forward_eq3<T: GridTransform + ?Sized>(
    subject: &Subject,
    transform: &T,
    space: &GridSpec,
) -> Result<SoftPrediction> {
    let assembled = assemble_splat(subject, space)?;
    check_input_channels(transform.input_channels(), assembled.tensor.channels())?;
    let k = transform.output_classes();
    if k < 2 {
        return Err(Error::InvalidVolume(format!(
            "a classifier transform needs at least 2 classes, declares {k}"
        )));
    }
    let out = apply_transform(transform, &assembled.tensor)?;

    let label_grid = subject.labels().grid().clone();
    let mut logits = pull(&out, &label_grid)?;
    let support = pull(&Volume::ones(space.clone(), 1), &label_grid)?;
    let background = logits.channel_mut(0);
    for (b, &s) in background.iter_mut().zip(support.data()) {
        if s == 0.0 {
            *b += 1.0;
        }
    }

    let probabilities = softmax(&logits)?;
    Ok(SoftPrediction {
        logits,
        probabilities,
    })
}

/// Per-voxel softmax across channels.
///
/// Uses the max-subtraction form, so any finite logits are safe; outputs
/// are strictly inside `(0, 1)` and sum to 1 per voxel up to rounding.
pub fn softmax(logits: &Volume) -> Result<Volume> {
    let k = logits.channels();
    if k < 2 {
        return Err(Error::InvalidVolume(format!(
            "softmax needs at least 2 channels, got {k}"
        )));
    }
    let n = logits.grid().numel();
    let src = logits.data();
    let mut data = vec![0.0; k * n];
    for v in 0..n {
        let mut top = f64::NEG_INFINITY;
        for c in 0..k {
            top = top.max(src[c * n + v]);
        }
        let mut z = 0.0;
        for c in 0..k {
            let e = (src[c * n + v] - top).exp();
            data[c * n + v] = e;
            z += e;
        }
        for c in 0..k {
            data[c * n + v] /= z;
        }
    }
    Volume::new(logits.grid().clone(), k, data, VolumeKind::Continuous)
}

/// Per-voxel argmax over channels, returning a label volume.
///
/// Ties break toward the lowest channel index.
pub fn hard_labels(soft: &Volume) -> Result<Volume> {
    let k = soft.channels();
    if k < 2 {
        return Err(Error::InvalidVolume(format!(
            "argmax needs at least 2 channels, got {k}"
        )));
    }
    let n = soft.grid().numel();
    let data = soft.data();
    let mut out = Vec::with_capacity(n);
    for v in 0..n {
        let mut best_c = 0usize;
        let mut best = data[v];
        for c in 1..k {
            let x = data[c * n + v];
            if x > best {
                best = x;
                best_c = c;
            }
        }
        out.push(best_c as f64);
    }
    Volume::labels(soft.grid().clone(), out)
}

/// Per-class overlap scores between two label maps on the same grid.
///
/// For every foreground class `k ∈ 1..classes` (background class 0 is
/// excluded), the score is `2·|pred = k ∧ target = k| / (|pred = k| +
/// |target = k|)`, so the returned vector has `classes - 1` entries with
/// index `i` scoring class `i + 1`. A class absent from both maps scores
/// 1.0; absent from exactly one, 0.0. The score is symmetric in its two
/// arguments and invariant under any relabeling applied to both.
pub fn dice(pred: &Volume, target: &Volume, classes: usize) -> Result<Vec<f64>> {
    if pred.grid() != target.grid() {
        return Err(Error::GridMismatch(
            "label maps live on different grids".into(),
        ));
    }
    for v in [pred, target] {
        if v.kind() != VolumeKind::Labels || v.channels() != 1 {
            return Err(Error::InvalidVolume(
                "dice expects single-channel label volumes".into(),
            ));
        }
    }
    let mut pred_count = vec![0usize; classes];
    let mut target_count = vec![0usize; classes];
    let mut intersection = vec![0usize; classes];
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        for label in [p, t] {
            if label >= classes as f64 {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        let (p, t) = (p as usize, t as usize);
        pred_count[p] += 1;
        target_count[t] += 1;
        if p == t {
            intersection[p] += 1;
        }
    }
    Ok((1..classes)
        .map(|k| {
            let denom = pred_count[k] + target_count[k];
            if denom == 0 {
                1.0
            } else {
                2.0 * intersection[k] as f64 / denom as f64
            }
        })
        .collect())
}
