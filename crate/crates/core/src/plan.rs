//! Experiment planning: the dataset-derived plan handed to task calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foreground::foreground_stats;
use crate::image::{ForegroundMask, ForegroundStats, NdImage};

pub const NORMALISATION_ZSCORE: &str = "zscore";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub spatial_rank: usize,
    pub channels: usize,
    pub median_shape: Vec<usize>,
    pub patch_size: Vec<usize>,
    /// Global minimum of the normalised training images.
    pub dataset_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreground: Option<ForegroundStats>,
    pub normalisation: String,
    pub sample_count: usize,
}

/// Lower median of each axis extent.
pub fn median_shape(shapes: &[Vec<usize>]) -> Result<Vec<usize>> {
    let first = shapes.first().ok_or(Error::EmptyDataset)?;
    (0..first.len())
        .map(|a| {
            let mut v: Vec<usize> = shapes
                .iter()
                .map(|s| {
                    s.get(a).copied().ok_or_else(|| Error::ShapeMismatch {
                        expected: first.clone(),
                        actual: s.clone(),
                    })
                })
                .collect::<Result<_>>()?;
            v.sort_unstable();
            Ok(v[(v.len() - 1) / 2])
        })
        .collect()
}

/// Patch size per axis: the median extent capped at 256 (1D/2D) or 96 (3D),
/// rounded down to a multiple of 16 with a floor of 32; axes shorter than 32
/// use their full extent.
pub fn plan_patch_size(median: &[usize]) -> Vec<usize> {
    let cap = if median.len() >= 3 { 96 } else { 256 };
    median
        .iter()
        .map(|&m| {
            if m < 32 {
                m
            } else {
                (m.min(cap) / 16 * 16).max(32)
            }
        })
        .collect()
}

/// Builds a plan from normalised training images and, for uniform-background
/// datasets, their foreground masks.
pub fn build_plan(images: &[NdImage], masks: Option<&[ForegroundMask]>) -> Result<ExperimentPlan> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    for img in images {
        if img.spatial_rank() != first.spatial_rank() || img.channels() != first.channels() {
            return Err(Error::ShapeMismatch {
                expected: first.data().shape().to_vec(),
                actual: img.data().shape().to_vec(),
            });
        }
    }
    let shapes: Vec<Vec<usize>> = images.iter().map(|i| i.spatial_shape().to_vec()).collect();
    let median = median_shape(&shapes)?;
    let dataset_min = images
        .iter()
        .map(|i| f64::from(i.min_value()))
        .fold(f64::INFINITY, f64::min);
    let foreground = masks.map(foreground_stats).transpose()?;
    Ok(ExperimentPlan {
        spatial_rank: first.spatial_rank(),
        channels: first.channels(),
        patch_size: plan_patch_size(&median),
        median_shape: median,
        dataset_min,
        foreground,
        normalisation: NORMALISATION_ZSCORE.to_string(),
        sample_count: images.len(),
    })
}
