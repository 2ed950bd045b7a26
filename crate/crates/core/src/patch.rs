//! Patch framework: shape creation, spatial and intensity transforms,
//! direct blending and labelling.
//!
//! A synthetic patch anomaly is built in four stages: create the patch shape
//! ([`make_rect_patch`]), transform its content ([`apply_transforms`]), blend
//! it into the destination ([`alpha_blend`], [`paste`] or
//! [`crate::poisson::seamless_clone`]) and label the result
//! ([`label_interpolation`], [`label_binary`], [`label_logistic_diff`]).

use ndarray::{ArrayD, Dimension, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{check_window, AnomalyMap, NdImage};

/// Placement of a patch in the destination frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    pub origin: Vec<usize>,
    pub extent: Vec<usize>,
    /// Which pixels of the `extent` box belong to the patch.
    pub footprint: ArrayD<bool>,
}

impl PatchSpec {
    pub fn rect(origin: Vec<usize>, extent: Vec<usize>) -> Self {
        let footprint = ArrayD::from_elem(IxDyn(&extent), true);
        PatchSpec {
            origin,
            extent,
            footprint,
        }
    }

    pub fn with_footprint(origin: Vec<usize>, footprint: ArrayD<bool>) -> Result<Self> {
        if !footprint.iter().any(|&f| f) {
            return Err(Error::InvalidParameter("empty patch footprint".into()));
        }
        Ok(PatchSpec {
            origin,
            extent: footprint.shape().to_vec(),
            footprint: footprint.as_standard_layout().into_owned(),
        })
    }

    pub fn check(&self, image_shape: &[usize]) -> Result<()> {
        check_window(image_shape, &self.origin, &self.extent)?;
        if self.footprint.shape() != self.extent.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.extent.clone(),
                actual: self.footprint.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Integer centre of the patch box in the destination frame.
    pub fn centre(&self) -> Vec<usize> {
        self.origin
            .iter()
            .zip(&self.extent)
            .map(|(o, e)| o + e / 2)
            .collect()
    }

    pub fn footprint_len(&self) -> usize {
        self.footprint.iter().filter(|&&f| f).count()
    }

    /// Iterates destination coordinates of footprint pixels.
    pub fn footprint_coords(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.footprint
            .indexed_iter()
            .filter(|(_, &f)| f)
            .map(|(idx, _)| {
                let idx = idx.slice();
                idx.iter().zip(&self.origin).map(|(i, o)| i + o).collect()
            })
    }
}

/// Patch content together with its support.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub content: NdImage,
    pub footprint: ArrayD<bool>,
}

impl Patch {
    pub fn full(content: NdImage) -> Self {
        let footprint = ArrayD::from_elem(IxDyn(content.spatial_shape()), true);
        Patch { content, footprint }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatchTransform {
    Resize {
        scale: Vec<f64>,
    },
    /// Rotation in the plane of the two given axes, counter-clockwise in degrees.
    Rotate {
        angle: f64,
        plane: (usize, usize),
    },
    Flip {
        axis: usize,
    },
    Brightness {
        factor: f64,
    },
    Contrast {
        factor: f64,
    },
}

impl PatchTransform {
    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            PatchTransform::Resize { .. }
                | PatchTransform::Rotate { .. }
                | PatchTransform::Flip { .. }
        )
    }

    fn stage(&self) -> u8 {
        match self {
            PatchTransform::Resize { .. } => 0,
            PatchTransform::Rotate { .. } | PatchTransform::Flip { .. } => 1,
            PatchTransform::Brightness { .. } | PatchTransform::Contrast { .. } => 2,
        }
    }

    fn validate(&self, rank: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            PatchTransform::Resize { scale } => {
                if scale.len() != rank || scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return bad(format!("resize scale {scale:?} for rank {rank}"));
                }
            }
            PatchTransform::Rotate { angle, plane } => {
                if !(*angle > -180.0 && *angle <= 180.0) {
                    return bad(format!("rotation angle {angle} outside (-180, 180]"));
                }
                if plane.0 == plane.1 || plane.0 >= rank || plane.1 >= rank {
                    return bad(format!("rotation plane {plane:?} for rank {rank}"));
                }
            }
            PatchTransform::Flip { axis } => {
                if *axis >= rank {
                    return bad(format!("flip axis {axis} for rank {rank}"));
                }
            }
            PatchTransform::Brightness { factor } | PatchTransform::Contrast { factor } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return bad(format!("intensity factor {factor}"));
                }
            }
        }
        Ok(())
    }
}

/// Draws a rectangular patch with per-axis extent uniform in `bounds` and a
/// uniformly placed origin.
pub fn make_rect_patch<R: Rng + ?Sized>(
    image_shape: &[usize],
    bounds: &[(usize, usize)],
    rng: &mut R,
) -> Result<PatchSpec> {
    if bounds.len() != image_shape.len() {
        return Err(Error::InfeasibleBounds(format!(
            "{} bounds for rank {}",
            bounds.len(),
            image_shape.len()
        )));
    }
    for (&(lo, hi), &d) in bounds.iter().zip(image_shape) {
        if lo < 1 || lo > hi || hi > d {
            return Err(Error::InfeasibleBounds(format!(
                "({lo}, {hi}) for image extent {d}"
            )));
        }
    }
    let extent: Vec<usize> = bounds
        .iter()
        .map(|&(lo, hi)| rng.random_range(lo..=hi))
        .collect();
    let origin = extent
        .iter()
        .zip(image_shape)
        .map(|(&e, &d)| rng.random_range(0..=d - e))
        .collect();
    Ok(PatchSpec::rect(origin, extent))
}

/// Linear resampling coordinate helper: returns `(lower, upper, frac)`.
fn lerp_coord(x: f64, n: usize) -> (usize, usize, f64) {
    let lo = (x.floor().max(0.0) as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, x - lo as f64)
}

/// Resamples `img` to `target` spatial shape with align-corners linear interpolation.
pub fn resize_to(img: &NdImage, target: &[usize]) -> Result<NdImage> {
    let src_shape = img.spatial_shape().to_vec();
    if target.len() != src_shape.len() || target.contains(&0) {
        return Err(Error::InvalidShape(format!("resize target {target:?}")));
    }
    let mut data = img.data().clone();
    // Separable: resample one axis at a time.
    for a in 0..src_shape.len() {
        let n_in = data.shape()[a + 1];
        let n_out = target[a];
        if n_in == n_out {
            continue;
        }
        let mut shape = data.shape().to_vec();
        shape[a + 1] = n_out;
        let src = data;
        data = ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
            let i = idx[a + 1];
            let x = if n_out == 1 || n_in == 1 {
                0.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let (lo, hi, t) = lerp_coord(x, n_in);
            let mut idx_lo = idx.slice().to_vec();
            idx_lo[a + 1] = lo;
            let mut idx_hi = idx_lo.clone();
            idx_hi[a + 1] = hi;
            let v0 = f64::from(src[IxDyn(&idx_lo)]);
            let v1 = f64::from(src[IxDyn(&idx_hi)]);
            if t == 0.0 {
                v0 as f32
            } else {
                (v0 + t * (v1 - v0)) as f32
            }
        });
    }
    NdImage::new(data)
}

fn resize_mask(mask: &ArrayD<bool>, target: &[usize]) -> ArrayD<bool> {
    let src = mask.shape().to_vec();
    ArrayD::from_shape_fn(IxDyn(target), |idx| {
        let s: Vec<usize> = (0..target.len())
            .map(|a| {
                if target[a] == 1 || src[a] == 1 {
                    0
                } else {
                    let x = idx[a] as f64 * (src[a] - 1) as f64 / (target[a] - 1) as f64;
                    (x.round() as usize).min(src[a] - 1)
                }
            })
            .collect();
        mask[IxDyn(&s)]
    })
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

fn rotate(patch: &Patch, angle_deg: f64, plane: (usize, usize)) -> Result<Patch> {
    let (pa, pb) = plane;
    let shape = patch.content.spatial_shape().to_vec();
    let (na, nb) = (shape[pa], shape[pb]);
    let (ca, cb) = ((na as f64 - 1.0) / 2.0, (nb as f64 - 1.0) / 2.0);
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let src = patch.content.data();

    // Source position of each output pixel in the rotation plane.
    let source_of = |ia: usize, ib: usize| -> Option<(f64, f64)> {
        let (da, db) = (ia as f64 - ca, ib as f64 - cb);
        let sa = snap(ca + cos * da + sin * db);
        let sb = snap(cb - sin * da + cos * db);
        let inside = |s: f64, n: usize| s >= -1e-9 && s <= n as f64 - 1.0 + 1e-9;
        (inside(sa, na) && inside(sb, nb)).then(|| {
            (
                sa.clamp(0.0, (na - 1) as f64),
                sb.clamp(0.0, (nb - 1) as f64),
            )
        })
    };

    let footprint = ArrayD::from_shape_fn(IxDyn(&shape), |idx| match source_of(idx[pa], idx[pb]) {
        Some((sa, sb)) => {
            let mut s = idx.slice().to_vec();
            s[pa] = sa.round() as usize;
            s[pb] = sb.round() as usize;
            patch.footprint[IxDyn(&s)]
        }
        None => false,
    });

    let mut full_shape = vec![patch.content.channels()];
    full_shape.extend_from_slice(&shape);
    let data = ArrayD::from_shape_fn(IxDyn(&full_shape), |idx| {
        let (ia, ib) = (idx[pa + 1], idx[pb + 1]);
        let Some((sa, sb)) = source_of(ia, ib) else {
            return 0.0;
        };
        let (a0, a1, ta) = lerp_coord(sa, na);
        let (b0, b1, tb) = lerp_coord(sb, nb);
        let mut i = idx.slice().to_vec();
        let mut sample = |a: usize, b: usize| {
            i[pa + 1] = a;
            i[pb + 1] = b;
            f64::from(src[IxDyn(&i)])
        };
        if ta == 0.0 && tb == 0.0 {
            return sample(a0, b0) as f32;
        }
        let v00 = sample(a0, b0);
        let v01 = sample(a0, b1);
        let v10 = sample(a1, b0);
        let v11 = sample(a1, b1);
        let top = v00 + tb * (v01 - v00);
        let bottom = v10 + tb * (v11 - v10);
        (top + ta * (bottom - top)) as f32
    });
    Ok(Patch {
        content: NdImage::new(data)?,
        footprint,
    })
}

/// Applies a spatial transform (resize, rotate or flip) to a patch.
///
/// Rotation keeps the box size; pixels whose source falls outside the box
/// leave the footprint and are later filled by the destination.
pub fn apply_spatial(patch: &Patch, t: &PatchTransform) -> Result<Patch> {
    let rank = patch.content.spatial_rank();
    t.validate(rank)?;
    match t {
        PatchTransform::Resize { scale } => {
            let target: Vec<usize> = patch
                .content
                .spatial_shape()
                .iter()
                .zip(scale)
                .map(|(&n, &s)| ((n as f64 * s).round() as usize).max(1))
                .collect();
            Ok(Patch {
                content: resize_to(&patch.content, &target)?,
                footprint: resize_mask(&patch.footprint, &target),
            })
        }
        PatchTransform::Rotate { angle, plane } => {
            if *angle == 0.0 {
                return Ok(patch.clone());
            }
            rotate(patch, *angle, *plane)
        }
        PatchTransform::Flip { axis } => {
            let mut content = patch.content.data().clone();
            content.invert_axis(ndarray::Axis(axis + 1));
            let mut footprint = patch.footprint.clone();
            footprint.invert_axis(ndarray::Axis(*axis));
            Ok(Patch {
                content: NdImage::new(content)?,
                footprint: footprint.as_standard_layout().into_owned(),
            })
        }
        _ => Err(Error::InvalidParameter(format!(
            "{t:?} is not a spatial transform"
        ))),
    }
}

/// `out = dataset_min + factor * (in - dataset_min)`.
pub fn apply_brightness(patch: &NdImage, factor: f64, dataset_min: f64) -> Result<NdImage> {
    PatchTransform::Brightness { factor }.validate(patch.spatial_rank())?;
    NdImage::new(
        patch
            .data()
            .mapv(|v| (dataset_min + factor * (f64::from(v) - dataset_min)) as f32),
    )
}

/// Scales each channel about its own patch mean.
pub fn apply_contrast(patch: &NdImage, factor: f64) -> Result<NdImage> {
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(Error::InvalidParameter(format!("contrast factor {factor}")));
    }
    let mut data = patch.data().clone();
    for mut ch in data.outer_iter_mut() {
        let n = ch.len() as f64;
        let mean = ch.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        ch.mapv_inplace(|v| (mean + factor * (f64::from(v) - mean)) as f32);
    }
    NdImage::new(data)
}

/// Applies a transform list in the fixed stage order resize, rotate/flip,
/// intensity. Within a stage the list order is kept.
pub fn apply_transforms(
    patch: &Patch,
    transforms: &[PatchTransform],
    dataset_min: f64,
) -> Result<Patch> {
    let mut ordered: Vec<&PatchTransform> = transforms.iter().collect();
    ordered.sort_by_key(|t| t.stage());
    let mut out = patch.clone();
    for t in ordered {
        out = match t {
            PatchTransform::Brightness { factor } => Patch {
                content: apply_brightness(&out.content, *factor, dataset_min)?,
                footprint: out.footprint,
            },
            PatchTransform::Contrast { factor } => {
                t.validate(out.content.spatial_rank())?;
                Patch {
                    content: apply_contrast(&out.content, *factor)?,
                    footprint: out.footprint,
                }
            }
            spatial => apply_spatial(&out, spatial)?,
        };
    }
    Ok(out)
}

fn check_patch_fit(dest: &NdImage, src_patch: &NdImage, spec: &PatchSpec) -> Result<()> {
    spec.check(dest.spatial_shape())?;
    if src_patch.spatial_shape() != spec.extent.as_slice()
        || src_patch.channels() != dest.channels()
    {
        let mut expected = vec![dest.channels()];
        expected.extend_from_slice(&spec.extent);
        return Err(Error::ShapeMismatch {
            expected,
            actual: src_patch.data().shape().to_vec(),
        });
    }
    Ok(())
}

/// Visits `(channel, dest index, patch index)` for every footprint pixel.
fn for_each_footprint(spec: &PatchSpec, channels: usize, mut f: impl FnMut(&[usize], &[usize])) {
    let d = spec.extent.len();
    let mut di = vec![0usize; d + 1];
    let mut pi = vec![0usize; d + 1];
    for (idx, &inside) in spec.footprint.indexed_iter() {
        if !inside {
            continue;
        }
        for a in 0..d {
            pi[a + 1] = idx[a];
            di[a + 1] = idx[a] + spec.origin[a];
        }
        for c in 0..channels {
            di[0] = c;
            pi[0] = c;
            f(&di, &pi);
        }
    }
}

/// Convex blend `dest + alpha * (src - dest)` inside the footprint.
pub fn alpha_blend(
    dest: &NdImage,
    src_patch: &NdImage,
    spec: &PatchSpec,
    alpha: f64,
) -> Result<NdImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    check_patch_fit(dest, src_patch, spec)?;
    let mut out = dest.clone();
    let src = src_patch.data();
    let data = out.data_mut();
    for_each_footprint(spec, dest.channels(), |di, pi| {
        let d = f64::from(data[IxDyn(di)]);
        let s = f64::from(src[IxDyn(pi)]);
        data[IxDyn(di)] = (d + alpha * (s - d)) as f32;
    });
    Ok(out)
}

/// Copies patch content into the footprint unchanged.
pub fn paste(dest: &NdImage, src_patch: &NdImage, spec: &PatchSpec) -> Result<NdImage> {
    check_patch_fit(dest, src_patch, spec)?;
    let mut out = dest.clone();
    let src = src_patch.data();
    let data = out.data_mut();
    for_each_footprint(spec, dest.channels(), |di, pi| {
        data[IxDyn(di)] = src[IxDyn(pi)];
    });
    Ok(out)
}

/// Label map holding `alpha` on the footprint and 0 elsewhere.
pub fn label_interpolation(
    spec: &PatchSpec,
    alpha: f64,
    image_shape: &[usize],
) -> Result<AnomalyMap> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    spec.check(image_shape)?;
    let mut values = ArrayD::<f32>::zeros(IxDyn(image_shape));
    let a = alpha as f32;
    for c in spec.footprint_coords() {
        values[IxDyn(&c)] = a;
    }
    AnomalyMap::new(values)
}

/// Binary label over the union of footprints.
pub fn label_binary(specs: &[PatchSpec], image_shape: &[usize]) -> Result<AnomalyMap> {
    let mut values = ArrayD::<f32>::zeros(IxDyn(image_shape));
    for spec in specs {
        spec.check(image_shape)?;
        for c in spec.footprint_coords() {
            values[IxDyn(&c)] = 1.0;
        }
    }
    AnomalyMap::new(values)
}

/// Scaled logistic `L(d) = 1 / (1 + exp(-k (d - d0)))` mapping mean absolute
/// intensity differences to labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub k: f64,
    pub d0: f64,
    /// The difference at which the fit saturates.
    pub q40: f64,
}

impl LogisticFit {
    pub const LOWER_LABEL: f64 = 0.1;
    pub const SATURATED_LABEL: f64 = 0.99;

    /// The unique fit with `L(0) = 0.1` and `L(q40) = 0.99`.
    pub fn from_saturation(q40: f64) -> Result<Self> {
        if !(q40 > 0.0 && q40.is_finite()) {
            return Err(Error::Calibration(format!(
                "saturation difference must be positive, got {q40}"
            )));
        }
        // logit(0.99) - logit(0.1) = ln 99 + ln 9
        let k = (9f64.ln() + 99f64.ln()) / q40;
        let d0 = 9f64.ln() / k;
        Ok(LogisticFit { k, d0, q40 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k > 0.0 && self.k.is_finite() && self.d0.is_finite() && self.q40 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("logistic fit {self:?}")))
        }
    }

    pub fn eval(&self, d: f64) -> f64 {
        1.0 / (1.0 + (-self.k * (d - self.d0)).exp())
    }
}

/// Labels footprint pixels by the logistic of the channel-mean absolute difference.
pub fn label_logistic_diff(
    orig: &NdImage,
    altered: &NdImage,
    footprints: &[PatchSpec],
    fit: &LogisticFit,
) -> Result<AnomalyMap> {
    fit.validate()?;
    if orig.data().shape() != altered.data().shape() {
        return Err(Error::ShapeMismatch {
            expected: orig.data().shape().to_vec(),
            actual: altered.data().shape().to_vec(),
        });
    }
    let shape = orig.spatial_shape().to_vec();
    let mut covered = ArrayD::from_elem(IxDyn(&shape), false);
    for spec in footprints {
        spec.check(&shape)?;
        for c in spec.footprint_coords() {
            covered[IxDyn(&c)] = true;
        }
    }
    let channels = orig.channels();
    let (o, a) = (orig.data(), altered.data());
    let mut values = ArrayD::<f32>::zeros(IxDyn(&shape));
    let mut full = vec![0usize; shape.len() + 1];
    for (idx, &inside) in covered.indexed_iter() {
        if !inside {
            continue;
        }
        full[1..].copy_from_slice(idx.slice());
        let mut diff = 0.0;
        for c in 0..channels {
            full[0] = c;
            diff += (f64::from(a[IxDyn(&full)]) - f64::from(o[IxDyn(&full)])).abs();
        }
        diff /= channels as f64;
        if diff > 0.0 {
            values[idx] = fit.eval(diff) as f32;
        }
    }
    AnomalyMap::new(values)
}

/// Per-pixel channel-mean absolute difference over the footprint union,
/// positive values only.
pub(crate) fn positive_diffs(
    orig: &NdImage,
    altered: &NdImage,
    footprints: &[PatchSpec],
) -> Vec<f64> {
    let shape = orig.spatial_shape().to_vec();
    let mut covered = ArrayD::from_elem(IxDyn(&shape), false);
    for spec in footprints {
        for c in spec.footprint_coords() {
            covered[IxDyn(&c)] = true;
        }
    }
    let channels = orig.channels();
    let mut out = Vec::new();
    let mut full = vec![0usize; shape.len() + 1];
    for (idx, &inside) in covered.indexed_iter() {
        if !inside {
            continue;
        }
        full[1..].copy_from_slice(idx.slice());
        let mut diff = 0.0;
        for c in 0..channels {
            full[0] = c;
            diff += (f64::from(altered.data()[IxDyn(&full)])
                - f64::from(orig.data()[IxDyn(&full)]))
            .abs();
        }
        diff /= channels as f64;
        if diff > 0.0 {
            out.push(diff);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(a: ArrayD<f32>) -> NdImage {
        NdImage::from_spatial(a).unwrap()
    }

    #[test]
    fn full_image_patch_when_bounds_equal_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = make_rect_patch(&[6, 9], &[(6, 6), (9, 9)], &mut rng).unwrap();
        assert_eq!(p.origin, vec![0, 0]);
        assert_eq!(p.extent, vec![6, 9]);
        assert!(p.footprint.iter().all(|&f| f));
    }

    #[test]
    fn infeasible_bounds_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            make_rect_patch(&[16, 16], &[(5, 4), (5, 4)], &mut rng),
            Err(Error::InfeasibleBounds(_))
        ));
        assert!(make_rect_patch(&[16, 16], &[(0, 4), (1, 4)], &mut rng).is_err());
        assert!(make_rect_patch(&[16, 16], &[(1, 17), (1, 4)], &mut rng).is_err());
    }

    #[test]
    fn origin_placement_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut counts = [[0usize; 13]; 13];
        for _ in 0..draws {
            let p = make_rect_patch(&[16, 16], &[(4, 4), (4, 4)], &mut rng).unwrap();
            counts[p.origin[0]][p.origin[1]] += 1;
        }
        let cells = 169.0;
        let expected = draws as f64 / cells;
        let sigma = (draws as f64 * (1.0 / cells) * (1.0 - 1.0 / cells)).sqrt();
        let mut chi2 = 0.0;
        for row in counts {
            for c in row {
                assert!((c as f64 - expected).abs() <= 5.0 * sigma, "count {c}");
                chi2 += (c as f64 - expected).powi(2) / expected;
            }
        }
        // 168 dof: mean 168, sd ~18.3
        assert!(chi2 < 168.0 + 5.0 * (2.0f64 * 168.0).sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn rotate_zero_is_identity() {
        let p = Patch::full(img(array![[1.0f32, 2.0], [3.0, 4.0]].into_dyn()));
        let out = apply_spatial(
            &p,
            &PatchTransform::Rotate {
                angle: 0.0,
                plane: (0, 1),
            },
        )
        .unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn rotate_ninety_permutes() {
        let p = Patch::full(img(array![[1.0f32, 2.0], [3.0, 4.0]].into_dyn()));
        let out = apply_spatial(
            &p,
            &PatchTransform::Rotate {
                angle: 90.0,
                plane: (0, 1),
            },
        )
        .unwrap();
        assert_eq!(
            out.content.channel(0),
            array![[2.0f32, 4.0], [1.0, 3.0]].into_dyn()
        );
        assert!(out.footprint.iter().all(|&f| f));
    }

    #[test]
    fn rotate_drops_out_of_support_corners() {
        let p = Patch::full(img(ArrayD::from_elem(IxDyn(&[9, 9]), 1.0)));
        let out = apply_spatial(
            &p,
            &PatchTransform::Rotate {
                angle: 45.0,
                plane: (0, 1),
            },
        )
        .unwrap();
        assert!(!out.footprint[[0, 0]]);
        assert!(out.footprint[[4, 4]]);
        for (idx, &f) in out.footprint.indexed_iter() {
            if f {
                assert!((out.content.channel(0)[idx] - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn resize_align_corners() {
        let out = resize_to(&img(array![1.0f32, 3.0].into_dyn()), &[3]).unwrap();
        assert_eq!(out.data().as_slice().unwrap(), &[1.0, 2.0, 3.0]);
        let p = Patch::full(img(array![1.0f32, 3.0].into_dyn()));
        let out = apply_spatial(&p, &PatchTransform::Resize { scale: vec![1.5] }).unwrap();
        assert_eq!(out.content.data().as_slice().unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn flip_reverses_axis() {
        let p = Patch::full(img(array![[1.0f32, 2.0, 3.0]].into_dyn()));
        let out = apply_spatial(&p, &PatchTransform::Flip { axis: 1 }).unwrap();
        assert_eq!(
            out.content.channel(0),
            array![[3.0f32, 2.0, 1.0]].into_dyn()
        );
    }

    #[test]
    fn brightness_formula() {
        let x = img(array![2.0f32, 0.0].into_dyn());
        assert_eq!(apply_brightness(&x, 1.0, 0.0).unwrap(), x);
        assert_eq!(apply_brightness(&x, 1.5, 0.0).unwrap().data()[[0, 0]], 3.0);
        assert_eq!(apply_brightness(&x, 2.0, -1.0).unwrap().data()[[0, 1]], 1.0);
        assert!(apply_brightness(&x, 0.0, 0.0).is_err());
    }

    #[test]
    fn contrast_formula() {
        let x = img(array![1.0f32, 3.0].into_dyn());
        assert_eq!(apply_contrast(&x, 1.0).unwrap(), x);
        assert_eq!(
            apply_contrast(&x, 2.0).unwrap().data().as_slice().unwrap(),
            &[0.0, 4.0]
        );
        assert_eq!(
            apply_contrast(&x, 0.0).unwrap().data().as_slice().unwrap(),
            &[2.0, 2.0]
        );
    }

    #[test]
    fn contrast_preserves_channel_means() {
        let data = ArrayD::from_shape_fn(IxDyn(&[2, 4, 5]), |i| {
            (i[0] * 7 + i[1] * 3 + i[2] * i[2]) as f32
        });
        let x = NdImage::new(data).unwrap();
        let y = apply_contrast(&x, 1.7).unwrap();
        for c in 0..2 {
            let m0: f64 = x.channel(c).iter().map(|&v| v as f64).sum::<f64>() / 20.0;
            let m1: f64 = y.channel(c).iter().map(|&v| v as f64).sum::<f64>() / 20.0;
            assert!((m0 - m1).abs() < 1e-6);
        }
    }

    #[test]
    fn transform_stage_order_is_fixed() {
        let p = Patch::full(img(array![1.0f32, 3.0].into_dyn()));
        let a = apply_transforms(
            &p,
            &[
                PatchTransform::Brightness { factor: 2.0 },
                PatchTransform::Resize { scale: vec![1.5] },
            ],
            0.0,
        )
        .unwrap();
        let b = apply_transforms(
            &p,
            &[
                PatchTransform::Resize { scale: vec![1.5] },
                PatchTransform::Brightness { factor: 2.0 },
            ],
            0.0,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content.data().as_slice().unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn alpha_blend_cases() {
        let dest = img(ArrayD::from_elem(IxDyn(&[4, 4]), 2.0));
        let src = img(ArrayD::from_elem(IxDyn(&[2, 2]), 4.0));
        let spec = PatchSpec::rect(vec![1, 1], vec![2, 2]);
        assert_eq!(alpha_blend(&dest, &src, &spec, 0.0).unwrap(), dest);
        let one = alpha_blend(&dest, &src, &spec, 1.0).unwrap();
        assert_eq!(one.channel(0)[[1, 1]], 4.0);
        let half = alpha_blend(&dest, &src, &spec, 0.5).unwrap();
        assert_eq!(half.channel(0)[[2, 2]], 3.0);
        assert_eq!(half.channel(0)[[0, 0]], 2.0);
        assert_eq!(half.channel(0)[[3, 3]], 2.0);

        let wrong = img(ArrayD::from_elem(IxDyn(&[3, 2]), 4.0));
        assert!(matches!(
            alpha_blend(&dest, &wrong, &spec, 0.5),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn interpolation_labels() {
        let spec = PatchSpec::rect(vec![2, 3], vec![4, 4]);
        let m = label_interpolation(&spec, 0.7, &[8, 8]).unwrap();
        let hot = m.values().iter().filter(|&&v| v == 0.7f32).count();
        let cold = m.values().iter().filter(|&&v| v == 0.0).count();
        assert_eq!((hot, cold), (16, 48));
        let z = label_interpolation(&spec, 0.0, &[8, 8]).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let full = PatchSpec::rect(vec![0, 0], vec![8, 8]);
        let o = label_interpolation(&full, 1.0, &[8, 8]).unwrap();
        assert!(o.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn logistic_labels() {
        let fit = LogisticFit::from_saturation(1.0).unwrap();
        assert!((fit.k - 891f64.ln()).abs() < 1e-12);
        assert!((fit.d0 - 9f64.ln() / fit.k).abs() < 1e-12);
        assert!((fit.eval(1.0) - 0.99).abs() < 1e-9);
        assert!((fit.eval(0.0) - 0.1).abs() < 1e-9);
        assert_eq!(fit.eval(fit.d0), 0.5);

        let orig = img(ArrayD::from_elem(IxDyn(&[4, 4]), 0.0));
        let spec = PatchSpec::rect(vec![0, 0], vec![2, 2]);
        let same = label_logistic_diff(&orig, &orig, std::slice::from_ref(&spec), &fit).unwrap();
        assert!(same.values().iter().all(|&v| v == 0.0));

        let mut altered = orig.clone();
        altered.data_mut()[[0, 0, 0]] = 1.0;
        altered.data_mut()[[0, 1, 1]] = fit.d0 as f32;
        let lab = label_logistic_diff(&orig, &altered, &[spec], &fit).unwrap();
        assert!((lab.values()[[0, 0]] as f64 - 0.99).abs() < 1e-6);
        assert!((lab.values()[[1, 1]] as f64 - 0.5).abs() < 1e-6);
        assert_eq!(lab.values()[[0, 1]], 0.0);
    }

    #[test]
    fn logistic_rejects_degenerate_saturation() {
        assert!(LogisticFit::from_saturation(0.0).is_err());
        assert!(LogisticFit::from_saturation(f64::NAN).is_err());
    }
}
