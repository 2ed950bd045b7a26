//! Core tensor types, per-sample normalisation and positional encoding.

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-channel n-dimensional intensity image, laid out `[channel, spatial...]`.
///
/// Spatial rank is 1, 2 or 3 and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct NdImage {
    data: ArrayD<f32>,
}

impl NdImage {
    pub fn new(data: ArrayD<f32>) -> Result<Self> {
        let rank = data.ndim();
        if !(2..=4).contains(&rank) {
            return Err(Error::InvalidShape(format!(
                "expected [channel, spatial...] with spatial rank 1-3, got rank {rank}"
            )));
        }
        if data.shape().contains(&0) {
            return Err(Error::InvalidShape(format!(
                "zero-length axis in {:?}",
                data.shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(NdImage { data })
    }

    /// Wraps a spatial array as a single-channel image.
    pub fn from_spatial(spatial: ArrayD<f32>) -> Result<Self> {
        Self::new(spatial.insert_axis(Axis(0)))
    }

    pub fn from_vec(channels: usize, spatial_shape: &[usize], values: Vec<f32>) -> Result<Self> {
        let mut shape = vec![channels];
        shape.extend_from_slice(spatial_shape);
        let data = ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|e| Error::InvalidShape(e.to_string()))?;
        Self::new(data)
    }

    pub fn zeros(channels: usize, spatial_shape: &[usize]) -> Result<Self> {
        let mut shape = vec![channels];
        shape.extend_from_slice(spatial_shape);
        Self::new(ArrayD::zeros(IxDyn(&shape)))
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.data.shape()[1..]
    }

    pub fn spatial_rank(&self) -> usize {
        self.data.ndim() - 1
    }

    pub fn data(&self) -> &ArrayD<f32> {
        &self.data
    }

    pub fn into_data(self) -> ArrayD<f32> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut ArrayD<f32> {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> ArrayViewD<'_, f32> {
        self.data.index_axis(Axis(0), c)
    }

    /// Channel mean as a spatial f64 array.
    pub fn channel_mean(&self) -> ArrayD<f64> {
        let c = self.channels() as f64;
        let mut acc = self.channel(0).mapv(f64::from);
        for ch in 1..self.channels() {
            acc.zip_mut_with(&self.channel(ch), |a, &b| *a += f64::from(b));
        }
        if self.channels() > 1 {
            acc.mapv_inplace(|v| v / c);
        }
        acc
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Copies the window `origin .. origin + extent` across all channels.
    pub fn window(&self, origin: &[usize], extent: &[usize]) -> Result<NdImage> {
        check_window(self.spatial_shape(), origin, extent)?;
        let view = self.data.slice_each_axis(|ax| {
            let a = ax.axis.index();
            if a == 0 {
                ndarray::Slice::from(..)
            } else {
                ndarray::Slice::from(origin[a - 1]..origin[a - 1] + extent[a - 1])
            }
        });
        NdImage::new(view.to_owned())
    }

    /// Writes `patch` into the window starting at `origin`.
    pub fn paste_window(&mut self, patch: &NdImage, origin: &[usize]) -> Result<()> {
        if patch.channels() != self.channels() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.channels()],
                actual: vec![patch.channels()],
            });
        }
        check_window(self.spatial_shape(), origin, patch.spatial_shape())?;
        let extent = patch.spatial_shape().to_vec();
        let mut view = self.data.slice_each_axis_mut(|ax| {
            let a = ax.axis.index();
            if a == 0 {
                ndarray::Slice::from(..)
            } else {
                ndarray::Slice::from(origin[a - 1]..origin[a - 1] + extent[a - 1])
            }
        });
        view.assign(&patch.data);
        Ok(())
    }

    /// Appends the channels of `other`, which must share the spatial shape.
    pub fn concat_channels(&self, other: &NdImage) -> Result<NdImage> {
        if self.spatial_shape() != other.spatial_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.spatial_shape().to_vec(),
                actual: other.spatial_shape().to_vec(),
            });
        }
        let data = ndarray::concatenate(Axis(0), &[self.data.view(), other.data.view()])
            .map_err(|e| Error::InvalidShape(e.to_string()))?;
        NdImage::new(data)
    }
}

pub(crate) fn check_window(shape: &[usize], origin: &[usize], extent: &[usize]) -> Result<()> {
    let ok = origin.len() == shape.len()
        && extent.len() == shape.len()
        && (0..shape.len()).all(|a| extent[a] >= 1 && origin[a] + extent[a] <= shape[a]);
    if ok {
        Ok(())
    } else {
        Err(Error::OutOfBounds {
            origin: origin.to_vec(),
            extent: extent.to_vec(),
            image: shape.to_vec(),
        })
    }
}

/// Pixel-wise anomaly label or score map with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    values: ArrayD<f32>,
}

impl AnomalyMap {
    pub fn new(values: ArrayD<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("anomaly map"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "anomaly map values must lie in [0, 1]".into(),
            ));
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(AnomalyMap { values })
    }

    pub fn zeros(spatial_shape: &[usize]) -> Self {
        AnomalyMap {
            values: ArrayD::zeros(IxDyn(spatial_shape)),
        }
    }

    pub fn values(&self) -> &ArrayD<f32> {
        &self.values
    }

    pub fn into_values(self) -> ArrayD<f32> {
        self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }
}

/// Boolean map of non-background pixels over a spatial shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    mask: ArrayD<bool>,
}

impl ForegroundMask {
    pub fn new(mask: ArrayD<bool>) -> Self {
        let mask = if mask.is_standard_layout() {
            mask
        } else {
            mask.as_standard_layout().into_owned()
        };
        ForegroundMask { mask }
    }

    pub fn full(spatial_shape: &[usize]) -> Self {
        ForegroundMask::new(ArrayD::from_elem(IxDyn(spatial_shape), true))
    }

    pub fn mask(&self) -> &ArrayD<bool> {
        &self.mask
    }

    pub fn shape(&self) -> &[usize] {
        self.mask.shape()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Per-axis `(min, max)` inclusive bounding box of set pixels.
    pub fn bounding_box(&self) -> Option<Vec<(usize, usize)>> {
        let d = self.mask.ndim();
        let mut lo = vec![usize::MAX; d];
        let mut hi = vec![0usize; d];
        let mut any = false;
        for (idx, &m) in self.mask.indexed_iter() {
            if m {
                any = true;
                for a in 0..d {
                    lo[a] = lo[a].min(idx[a]);
                    hi[a] = hi[a].max(idx[a]);
                }
            }
        }
        any.then(|| lo.into_iter().zip(hi).collect())
    }

    /// Fraction of set pixels inside the window `origin .. origin + extent`.
    pub fn window_fraction(&self, origin: &[usize], extent: &[usize]) -> f64 {
        let view = self.mask.slice_each_axis(|ax| {
            let a = ax.axis.index();
            ndarray::Slice::from(origin[a]..origin[a] + extent[a])
        });
        let total = view.len();
        if total == 0 {
            return 0.0;
        }
        view.iter().filter(|&&m| m).count() as f64 / total as f64
    }
}

/// Per-axis mean bounding-box extent and mean area of foreground masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForegroundStats {
    pub avg_extent: Vec<f64>,
    pub avg_area: f64,
}

/// Standardises all values of the image to zero mean and unit standard deviation.
///
/// A constant image maps to all zeros.
pub fn zscore_normalize(img: &NdImage) -> NdImage {
    let n = img.data.len() as f64;
    let mean = img.data.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = img
        .data
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let constant = img.min_value() == img.max_value();
    let data = if constant || std == 0.0 {
        ArrayD::zeros(img.data.raw_dim())
    } else {
        img.data.mapv(|v| ((f64::from(v) - mean) / std) as f32)
    };
    NdImage { data }
}

/// Coordinate channels in [-1, 1], one per spatial axis.
pub fn positional_encoding(spatial_shape: &[usize]) -> Result<NdImage> {
    let d = spatial_shape.len();
    let mut shape = vec![d];
    shape.extend_from_slice(spatial_shape);
    let mut data = ArrayD::<f32>::zeros(IxDyn(&shape));
    for (idx, v) in data.indexed_iter_mut() {
        let axis = idx[0];
        let extent = spatial_shape[axis];
        if extent > 1 {
            let i = idx[axis + 1] as f64;
            *v = (2.0 * i / (extent - 1) as f64 - 1.0) as f32;
        }
    }
    NdImage::new(data)
}

/// Returns `img` with its positional-encoding channels appended.
pub fn with_positional_encoding(img: &NdImage) -> Result<NdImage> {
    img.concat_channels(&positional_encoding(img.spatial_shape())?)
}
