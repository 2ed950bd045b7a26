//! Inference patch grids, training location sampling with anomaly
//! oversampling, patch extraction and Gaussian-weighted tile aggregation.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{AnomalyMap, NdImage};

/// Fraction of each training batch forced to contain an anomaly centre, as
/// `OVERSAMPLE_NUM / OVERSAMPLE_DEN`.
const OVERSAMPLE_NUM: usize = 3;
const OVERSAMPLE_DEN: usize = 10;
const WEIGHT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: Vec<usize>,
    pub positions: Vec<Vec<usize>>,
}

impl PatchGrid {
    fn contains(&self, origin: &[usize], point: &[usize]) -> bool {
        origin
            .iter()
            .zip(&self.patch_size)
            .zip(point)
            .all(|((&o, &p), &c)| o <= c && c < o + p)
    }
}

/// Evenly spread window origins along one axis with a nominal step of half a patch.
pub fn axis_positions(extent: usize, patch: usize) -> Vec<usize> {
    if extent == patch {
        return vec![0];
    }
    let span = (extent - patch) as f64;
    let n = (span / (patch as f64 / 2.0)).ceil() as usize + 1;
    let mut out: Vec<usize> = (0..n)
        .map(|i| (i as f64 * span / (n - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

pub fn inference_grid(image_shape: &[usize], patch_size: &[usize]) -> Result<PatchGrid> {
    if image_shape.len() != patch_size.len()
        || patch_size
            .iter()
            .zip(image_shape)
            .any(|(&p, &d)| p == 0 || p > d)
    {
        return Err(Error::InvalidShape(format!(
            "patch {patch_size:?} does not fit image {image_shape:?}"
        )));
    }
    let axes: Vec<Vec<usize>> = image_shape
        .iter()
        .zip(patch_size)
        .map(|(&d, &p)| axis_positions(d, p))
        .collect();
    let mut positions = vec![Vec::new()];
    for axis in &axes {
        positions = positions
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&o| {
                    let mut v = prefix.clone();
                    v.push(o);
                    v
                })
            })
            .collect();
    }
    Ok(PatchGrid {
        patch_size: patch_size.to_vec(),
        positions,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingDraw {
    pub origins: Vec<Vec<usize>>,
    /// How many leading draws were restricted to anomaly-containing patches.
    pub oversampled: usize,
    /// Set when no grid patch contains an anomaly centre, so every draw was uniform.
    pub no_anomaly_patch: bool,
}

/// `ceil(0.3 * batch)`.
pub fn oversample_count(batch: usize) -> usize {
    (OVERSAMPLE_NUM * batch).div_ceil(OVERSAMPLE_DEN)
}

/// Draws training patch origins from the inference grid; the first
/// `ceil(0.3 * batch)` are restricted to patches containing an anomaly centre.
pub fn sample_training_locations<R: Rng + ?Sized>(
    grid: &PatchGrid,
    anomaly_centres: &[Vec<usize>],
    batch: usize,
    rng: &mut R,
) -> Result<TrainingDraw> {
    if grid.positions.is_empty() {
        return Err(Error::InvalidShape("empty patch grid".into()));
    }
    if batch == 0 {
        return Err(Error::InvalidParameter("batch must be at least 1".into()));
    }
    let feasible: Vec<&Vec<usize>> = grid
        .positions
        .iter()
        .filter(|o| anomaly_centres.iter().any(|c| grid.contains(o, c)))
        .collect();
    let forced = if feasible.is_empty() {
        0
    } else {
        oversample_count(batch)
    };
    let mut origins = Vec::with_capacity(batch);
    for _ in 0..forced {
        origins.push(feasible[rng.random_range(0..feasible.len())].clone());
    }
    for _ in forced..batch {
        origins.push(grid.positions[rng.random_range(0..grid.positions.len())].clone());
    }
    Ok(TrainingDraw {
        origins,
        oversampled: forced,
        no_anomaly_patch: feasible.is_empty(),
    })
}

pub fn extract_patch(img: &NdImage, origin: &[usize], patch_size: &[usize]) -> Result<NdImage> {
    img.window(origin, patch_size)
}

pub fn paste_patch(img: &mut NdImage, patch: &NdImage, origin: &[usize]) -> Result<()> {
    img.paste_window(patch, origin)
}

/// Separable Gaussian centred in the patch, sigma = P/8 per axis, scaled to a
/// peak of 1 and floored at 1e-8.
pub fn gaussian_weights(patch_size: &[usize]) -> ArrayD<f64> {
    let per_axis: Vec<Vec<f64>> = patch_size
        .iter()
        .map(|&p| {
            let c = (p as f64 - 1.0) / 2.0;
            let sigma = p as f64 / 8.0;
            let w: Vec<f64> = (0..p)
                .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
                .collect();
            let peak = w.iter().copied().fold(0.0, f64::max);
            w.into_iter().map(|v| v / peak).collect()
        })
        .collect();
    ArrayD::from_shape_fn(IxDyn(patch_size), |idx| {
        let w: f64 = per_axis
            .iter()
            .enumerate()
            .map(|(a, w)| w[idx[a]])
            .product();
        w.max(WEIGHT_FLOOR)
    })
}

/// Gaussian-weighted mean of overlapping tile scores. Tiles are accumulated in
/// the given order.
pub fn aggregate_tiles(
    tiles: &[(Vec<usize>, ArrayD<f32>)],
    image_shape: &[usize],
    patch_size: &[usize],
) -> Result<AnomalyMap> {
    let weights = gaussian_weights(patch_size);
    let mut num = ArrayD::<f64>::zeros(IxDyn(image_shape));
    let mut den = ArrayD::<f64>::zeros(IxDyn(image_shape));
    let mut lo = ArrayD::from_elem(IxDyn(image_shape), f32::INFINITY);
    let mut hi = ArrayD::from_elem(IxDyn(image_shape), f32::NEG_INFINITY);
    let mut global = vec![0usize; image_shape.len()];
    for (origin, scores) in tiles {
        if scores.shape() != patch_size {
            return Err(Error::ShapeMismatch {
                expected: patch_size.to_vec(),
                actual: scores.shape().to_vec(),
            });
        }
        crate::image::check_window(image_shape, origin, patch_size)?;
        for (idx, &s) in scores.indexed_iter() {
            for (a, g) in global.iter_mut().enumerate() {
                *g = idx[a] + origin[a];
            }
            let gi = IxDyn(&global);
            let w = weights[&idx];
            num[&gi] += w * f64::from(s);
            den[&gi] += w;
            lo[&gi] = lo[&gi].min(s);
            hi[&gi] = hi[&gi].max(s);
        }
    }
    if den.iter().any(|&d| d == 0.0) {
        return Err(Error::InvalidParameter(
            "tiles leave pixels uncovered".into(),
        ));
    }
    let mut out = ArrayD::<f32>::zeros(IxDyn(image_shape));
    for (idx, v) in out.indexed_iter_mut() {
        let mean = (num[&idx] / den[&idx]) as f32;
        *v = mean.clamp(lo[&idx], hi[&idx]);
    }
    AnomalyMap::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_examples() {
        assert_eq!(axis_positions(10, 4), vec![0, 2, 4, 6]);
        assert_eq!(axis_positions(4, 4), vec![0]);
        assert_eq!(axis_positions(7, 4), vec![0, 2, 3]);
        let g = inference_grid(&[10, 7], &[4, 4]).unwrap();
        assert_eq!(g.positions.len(), 12);
        assert_eq!(g.positions[0], vec![0, 0]);
        assert_eq!(g.positions[11], vec![6, 3]);
        assert!(inference_grid(&[3, 8], &[4, 4]).is_err());
    }

    #[test]
    fn oversample_counts() {
        assert_eq!(oversample_count(10), 3);
        assert_eq!(oversample_count(1), 1);
        assert_eq!(oversample_count(2), 1);
        assert_eq!(oversample_count(11), 4);
    }

    #[test]
    fn oversampled_draws_contain_centre() {
        let grid = inference_grid(&[64, 64], &[16, 16]).unwrap();
        let centres = vec![vec![40, 9]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = sample_training_locations(&grid, &centres, 10, &mut rng).unwrap();
        assert_eq!(draw.origins.len(), 10);
        assert_eq!(draw.oversampled, 3);
        for o in &draw.origins[..3] {
            assert!(grid.contains(o, &centres[0]));
        }

        let none = sample_training_locations(&grid, &[], 5, &mut rng).unwrap();
        assert!(none.no_anomaly_patch);
        assert_eq!(none.oversampled, 0);
        let empty = PatchGrid {
            patch_size: vec![4],
            positions: vec![],
        };
        assert!(sample_training_locations(&empty, &[], 3, &mut rng).is_err());
    }

    #[test]
    fn extract_and_paste_round_trip() {
        let img = NdImage::from_vec(2, &[5, 6], (0..60).map(|v| v as f32).collect()).unwrap();
        assert_eq!(extract_patch(&img, &[0, 0], &[5, 6]).unwrap(), img);
        let px = extract_patch(&img, &[2, 3], &[1, 1]).unwrap();
        assert_eq!(px.data().as_slice().unwrap(), &[15.0, 45.0]);
        let patch = extract_patch(&img, &[1, 2], &[3, 3]).unwrap();
        let mut copy = img.clone();
        paste_patch(&mut copy, &patch, &[1, 2]).unwrap();
        assert_eq!(copy, img);
        assert!(matches!(
            extract_patch(&img, &[3, 0], &[3, 3]),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn aggregate_constant_and_single_tile() {
        let tiles: Vec<_> = inference_grid(&[20, 13], &[8, 8])
            .unwrap()
            .positions
            .into_iter()
            .map(|o| (o, ArrayD::from_elem(IxDyn(&[8, 8]), 0.3f32)))
            .collect();
        let out = aggregate_tiles(&tiles, &[20, 13], &[8, 8]).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.3));

        let tile = ArrayD::from_shape_fn(IxDyn(&[4, 5]), |i| (i[0] * 5 + i[1]) as f32 / 20.0);
        let out = aggregate_tiles(&[(vec![0, 0], tile.clone())], &[4, 5], &[4, 5]).unwrap();
        assert_eq!(out.values(), &tile);

        assert!(aggregate_tiles(&[(vec![0, 0], tile)], &[8, 5], &[4, 5]).is_err());
    }

    #[test]
    fn aggregate_overlap_is_monotone() {
        // Two 1D tiles of 8 overlapping on 4 pixels.
        let tiles = vec![
            (vec![0], ArrayD::from_elem(IxDyn(&[8]), 0.0f32)),
            (vec![4], ArrayD::from_elem(IxDyn(&[8]), 1.0f32)),
        ];
        let out = aggregate_tiles(&tiles, &[12], &[8]).unwrap();
        let v = out.values();
        // Oracle: weights w(i) = exp(-(i-3.5)^2 / (2 * 1^2)) normalised to the peak.
        let w = |i: usize| (-(i as f64 - 3.5).powi(2) / 2.0).exp();
        for x in 4..8 {
            let expect = w(x - 4) / (w(x) + w(x - 4));
            assert!((v[[x]] as f64 - expect).abs() < 1e-6);
            assert!(v[[x]] > 0.0 && v[[x]] < 1.0);
        }
        for x in 4..7 {
            assert!(v[[x]] < v[[x + 1]]);
        }
    }

    proptest! {
        #[test]
        fn grid_covers_every_pixel(p in 1usize..20, k in 0usize..60) {
            let d = p + k % (3 * p + 1);
            let pos = axis_positions(d, p);
            prop_assert_eq!(pos[0], 0);
            prop_assert_eq!(*pos.last().unwrap(), d - p);
            for x in 0..d {
                prop_assert!(pos.iter().any(|&o| o <= x && x < o + p));
            }
        }

        #[test]
        fn aggregate_within_tile_range(values in proptest::collection::vec(0.0f32..=1.0, 4)) {
            let grid = inference_grid(&[12, 12], &[8, 8]).unwrap();
            let tiles: Vec<_> = grid.positions.iter().cloned().zip(values.iter())
                .map(|(o, &v)| (o, ArrayD::from_elem(IxDyn(&[8, 8]), v)))
                .collect();
            let out = aggregate_tiles(&tiles, &[12, 12], &[8, 8]).unwrap();
            let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(out.values().iter().all(|&v| v >= lo && v <= hi));
        }
    }
}
