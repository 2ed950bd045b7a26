//! Sobel gradient magnitude, corner-seeded region growing and foreground statistics.

use std::collections::VecDeque;

use ndarray::{ArrayD, Axis, Zip};

use crate::error::{Error, Result};
use crate::image::{ForegroundMask, ForegroundStats, NdImage};
use crate::util::{percentile, Grid};

const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];
const DERIV: [f64; 3] = [-1.0, 0.0, 1.0];

/// Applies a 3-tap kernel along `axis` with edge replication.
fn filter_axis(input: &ArrayD<f64>, axis: usize, kernel: [f64; 3]) -> ArrayD<f64> {
    let mut out = ArrayD::<f64>::zeros(input.raw_dim());
    Zip::from(out.lanes_mut(Axis(axis)))
        .and(input.lanes(Axis(axis)))
        .for_each(|mut o, i| {
            let n = i.len();
            for x in 0..n {
                let prev = i[x.saturating_sub(1)];
                let next = i[(x + 1).min(n - 1)];
                o[x] = kernel[0] * prev + kernel[1] * i[x] + kernel[2] * next;
            }
        });
    out
}

/// Spatial Sobel magnitude in f64; multi-channel images use the channel mean.
pub(crate) fn sobel_magnitude_f64(img: &NdImage) -> Result<ArrayD<f64>> {
    let d = img.spatial_rank();
    if !(2..=3).contains(&d) {
        return Err(Error::UnsupportedRank {
            op: "sobel_magnitude",
            rank: d,
        });
    }
    let base = img.channel_mean();
    let mut sum_sq = ArrayD::<f64>::zeros(base.raw_dim());
    for axis in 0..d {
        let mut resp = filter_axis(&base, axis, DERIV);
        for other in (0..d).filter(|&o| o != axis) {
            resp = filter_axis(&resp, other, SMOOTH);
        }
        sum_sq.zip_mut_with(&resp, |s, &r| *s += r * r);
    }
    sum_sq.mapv_inplace(f64::sqrt);
    Ok(sum_sq)
}

/// Per-pixel Euclidean norm of the directional Sobel responses, as a one-channel image.
pub fn sobel_magnitude(img: &NdImage) -> Result<NdImage> {
    let mag = sobel_magnitude_f64(img)?;
    NdImage::from_spatial(mag.mapv(|v| v as f32))
}

/// Extracts the foreground of an image with a uniform background.
///
/// Background is grown from every corner pixel through face-adjacent pixels
/// whose Sobel magnitude is below the threshold
/// `max(1e-6 * value_range, p10(nonzero magnitudes))`, or whose intensity
/// equals that of the background pixel they are reached from (to within
/// `1e-6 * value_range`). The second rule strips the one-pixel Sobel halo that
/// surrounds every edge. Only call this for datasets declared to have a
/// uniform background.
pub fn foreground_mask(img: &NdImage) -> Result<ForegroundMask> {
    let mag = sobel_magnitude_f64(img)?;
    let intensity = img.channel_mean();
    let intensity = intensity.as_slice().expect("standard layout");
    let mag_flat = mag.as_slice().expect("standard layout");

    let range = f64::from(img.max_value()) - f64::from(img.min_value());
    let mut nonzero: Vec<f64> = mag_flat.iter().copied().filter(|&m| m > 0.0).collect();
    let p10 = percentile(&mut nonzero, 0.10).unwrap_or(0.0);
    let tau = (1e-6 * range).max(p10).max(f64::MIN_POSITIVE);
    let equal_tol = 1e-6 * range;

    let grid = Grid::new(img.spatial_shape());
    let mut background = vec![false; grid.len];
    let mut queue = VecDeque::new();
    for corner in 0..(1usize << grid.shape.len()) {
        let idx: usize = grid
            .shape
            .iter()
            .zip(&grid.strides)
            .enumerate()
            .map(|(a, (&n, &s))| if corner >> a & 1 == 1 { (n - 1) * s } else { 0 })
            .sum();
        if !background[idx] && mag_flat[idx] < tau {
            background[idx] = true;
            queue.push_back(idx);
        }
    }

    let mut nbrs = Vec::with_capacity(6);
    while let Some(p) = queue.pop_front() {
        grid.neighbours(p, &mut nbrs);
        for &q in &nbrs {
            if background[q] {
                continue;
            }
            if mag_flat[q] < tau || (intensity[q] - intensity[p]).abs() <= equal_tol {
                background[q] = true;
                queue.push_back(q);
            }
        }
    }

    if background.iter().all(|&b| b) {
        return Err(Error::EmptyForeground);
    }
    let fg = ArrayD::from_shape_vec(mag.raw_dim(), background.iter().map(|&b| !b).collect())
        .expect("shape preserved");
    Ok(ForegroundMask::new(fg))
}

/// Mean bounding-box extent per axis and mean foreground pixel count.
pub fn foreground_stats(masks: &[ForegroundMask]) -> Result<ForegroundStats> {
    let first = masks.first().ok_or(Error::EmptyDataset)?;
    let d = first.shape().len();
    let mut extent_sum = vec![0.0; d];
    let mut area_sum = 0.0;
    for m in masks {
        if m.shape().len() != d {
            return Err(Error::ShapeMismatch {
                expected: first.shape().to_vec(),
                actual: m.shape().to_vec(),
            });
        }
        let bbox = m.bounding_box().ok_or(Error::EmptyForeground)?;
        for (a, (lo, hi)) in bbox.into_iter().enumerate() {
            extent_sum[a] += (hi - lo + 1) as f64;
        }
        area_sum += m.count() as f64;
    }
    let n = masks.len() as f64;
    Ok(ForegroundStats {
        avg_extent: extent_sum.into_iter().map(|s| s / n).collect(),
        avg_area: area_sum / n,
    })
}
