//! Synthetic anomaly tasks: calibration `θ = g(X, P)` and generation
//! `(x̃, ỹ) = f_θ(x_i, x_j, [m_i, m_j])` for FPI, CutPaste, PII, NSA and
//! NSA with mixed gradients.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayD;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AnomalyMap, ForegroundMask, NdImage};
use crate::patch::{
    alpha_blend, apply_transforms, label_binary, label_interpolation, label_logistic_diff,
    make_rect_patch, paste, positive_diffs, resize_to, LogisticFit, Patch, PatchSpec,
    PatchTransform,
};
use crate::plan::ExperimentPlan;
use crate::poisson::{seamless_clone, GuidanceMode};
use crate::util::percentile;

/// Rejection-sampling cap for constrained patch placement.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 200;
/// Number of anomalies generated to fit the NSA label logistic.
pub const CALIBRATION_ANOMALIES: usize = 100;
/// Percentile of calibration differences at which NSA labels saturate.
pub const SATURATION_PERCENTILE: f64 = 0.40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Fpi,
    Cutpaste,
    Pii,
    Nsa,
    NsaMixed,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Fpi,
        TaskKind::Cutpaste,
        TaskKind::Pii,
        TaskKind::Nsa,
        TaskKind::NsaMixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Fpi => "fpi",
            TaskKind::Cutpaste => "cutpaste",
            TaskKind::Pii => "pii",
            TaskKind::Nsa => "nsa",
            TaskKind::NsaMixed => "nsa_mixed",
        }
    }

    pub fn is_nsa(self) -> bool {
        matches!(self, TaskKind::Nsa | TaskKind::NsaMixed)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fpi" => Ok(TaskKind::Fpi),
            "cutpaste" | "cut-paste" | "cut_paste" => Ok(TaskKind::Cutpaste),
            "pii" => Ok(TaskKind::Pii),
            "nsa" => Ok(TaskKind::Nsa),
            "nsa-mixed" | "nsa_mixed" | "nsamixed" => Ok(TaskKind::NsaMixed),
            other => Err(Error::InvalidParameter(format!("unknown task '{other}'"))),
        }
    }
}

/// CutPaste intensity and rotation jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    /// Degrees.
    pub rotate_range: (f64, f64),
    pub brightness_prob: f64,
    pub contrast_prob: f64,
    pub rotate_prob: f64,
}

/// CutPaste patch geometry, relative to the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPasteGeometry {
    pub area_ratio: (f64, f64),
    pub aspect_ratio: (f64, f64),
}

/// Calibrated task parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub task: TaskKind,
    /// Per-axis inclusive `(lo, hi)` patch extent in pixels.
    pub extent_bounds: Vec<(usize, usize)>,
    pub max_anomalies: usize,
    pub min_fg_fraction: f64,
    pub alpha_range: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logistic: Option<LogisticFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<Jitter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<CutPasteGeometry>,
    /// Per-axis resize factor range for NSA patches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize_range: Option<(f64, f64)>,
    pub dataset_min: f64,
}

impl TaskParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.extent_bounds.is_empty()
            || self.extent_bounds.iter().any(|&(lo, hi)| lo < 1 || lo > hi)
        {
            return bad(format!("extent bounds {:?}", self.extent_bounds));
        }
        if self.max_anomalies < 1 {
            return bad("max_anomalies must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_fg_fraction) {
            return bad(format!("min_fg_fraction {}", self.min_fg_fraction));
        }
        let (alo, ahi) = self.alpha_range;
        if !(0.0 <= alo && alo <= ahi && ahi <= 1.0) {
            return bad(format!("alpha range {:?}", self.alpha_range));
        }
        if self.logistic.is_some() != self.task.is_nsa() {
            return bad(format!(
                "logistic fit presence does not match task {}",
                self.task
            ));
        }
        if let Some(fit) = &self.logistic {
            fit.validate()?;
        }
        if self.task == TaskKind::Cutpaste && (self.jitter.is_none() || self.geometry.is_none()) {
            return bad("cutpaste requires jitter and geometry".into());
        }
        if self.task.is_nsa() && self.resize_range.is_none() {
            return bad("nsa requires a resize range".into());
        }
        Ok(())
    }

    fn bounds_for(&self, shape: &[usize]) -> Result<Vec<(usize, usize)>> {
        if shape.len() != self.extent_bounds.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.extent_bounds.len()],
                actual: vec![shape.len()],
            });
        }
        Ok(self
            .extent_bounds
            .iter()
            .zip(shape)
            .map(|(&(lo, hi), &d)| (lo.min(d), hi.min(d)))
            .collect())
    }
}

/// A calibrated synthetic anomaly task.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    params: TaskParams,
}

impl Task {
    pub fn new(params: TaskParams) -> Result<Self> {
        params.validate()?;
        Ok(Task { params })
    }

    pub fn kind(&self) -> TaskKind {
        self.params.task
    }

    pub fn params(&self) -> &TaskParams {
        &self.params
    }
}

/// How one anomaly was made; enough to audit a generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub source_origin: Vec<usize>,
    pub source_extent: Vec<usize>,
    pub dest_origin: Vec<usize>,
    pub dest_extent: Vec<usize>,
    pub footprint_pixels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<PatchTransform>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: NdImage,
    pub label: AnomalyMap,
    pub anomaly_centres: Vec<Vec<usize>>,
    pub patches: Vec<PatchRecord>,
    /// Destination specs including footprints, in application order.
    pub specs: Vec<PatchSpec>,
}

fn fractional_bounds(extent: &[f64], lo_frac: f64, hi_frac: f64) -> Vec<(usize, usize)> {
    extent
        .iter()
        .map(|&e| {
            let lo = ((lo_frac * e).round() as usize).max(1);
            let hi = ((hi_frac * e).round() as usize).max(lo);
            (lo, hi)
        })
        .collect()
}

/// Calibration function: derives task parameters from the normal dataset and plan.
///
/// NSA variants generate [`CALIBRATION_ANOMALIES`] single-patch anomalies and
/// fit the label logistic so that `L(0) = 0.1` and `L(q40) = 0.99`, with
/// `q40` the 40th percentile of the positive per-pixel differences.
pub fn calibrate<R: Rng + ?Sized>(
    kind: TaskKind,
    dataset: &[NdImage],
    masks: Option<&[ForegroundMask]>,
    plan: &ExperimentPlan,
    rng: &mut R,
) -> Result<TaskParams> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(ms) = masks {
        if ms.len() != dataset.len() {
            return Err(Error::InvalidParameter(format!(
                "{} masks for {} images",
                ms.len(),
                dataset.len()
            )));
        }
        if ms.iter().any(ForegroundMask::is_empty) {
            return Err(Error::EmptyForeground);
        }
    }
    let patch: Vec<f64> = plan.patch_size.iter().map(|&p| p as f64).collect();
    let base = TaskParams {
        task: kind,
        extent_bounds: fractional_bounds(&patch, 0.10, 0.40),
        max_anomalies: 1,
        min_fg_fraction: 0.0,
        alpha_range: (0.05, 0.95),
        logistic: None,
        jitter: None,
        geometry: None,
        resize_range: None,
        dataset_min: plan.dataset_min,
    };
    let params = match kind {
        TaskKind::Fpi | TaskKind::Pii => base,
        TaskKind::Cutpaste => TaskParams {
            extent_bounds: plan.median_shape.iter().map(|&d| (1, d)).collect(),
            alpha_range: (1.0, 1.0),
            jitter: Some(Jitter {
                brightness_range: (0.9, 1.1),
                contrast_range: (0.9, 1.1),
                rotate_range: (-45.0, 45.0),
                brightness_prob: 0.5,
                contrast_prob: 0.5,
                rotate_prob: 0.5,
            }),
            geometry: Some(CutPasteGeometry {
                area_ratio: (0.02, 0.15),
                aspect_ratio: (0.3, 3.3),
            }),
            ..base
        },
        TaskKind::Nsa | TaskKind::NsaMixed => {
            let extent: Vec<f64> = match &plan.foreground {
                Some(fg) => fg.avg_extent.clone(),
                None => plan.median_shape.iter().map(|&d| d as f64).collect(),
            };
            let mut params = TaskParams {
                extent_bounds: fractional_bounds(&extent, 0.05, 0.50),
                max_anomalies: 3,
                min_fg_fraction: 0.25,
                alpha_range: (1.0, 1.0),
                resize_range: Some((0.7, 1.3)),
                ..base
            };
            params.logistic = Some(fit_nsa_logistic(&params, dataset, masks, rng)?);
            params
        }
    };
    params.validate()?;
    Ok(params)
}

fn fit_nsa_logistic<R: Rng + ?Sized>(
    params: &TaskParams,
    dataset: &[NdImage],
    masks: Option<&[ForegroundMask]>,
    rng: &mut R,
) -> Result<LogisticFit> {
    let mut diffs = Vec::new();
    let mut made = 0;
    let mut attempts = 0;
    while made < CALIBRATION_ANOMALIES && attempts < CALIBRATION_ANOMALIES * 4 {
        attempts += 1;
        let i = rng.random_range(0..dataset.len());
        let j = pick_other(rng, dataset.len(), i);
        let (mi, mj) = match masks {
            Some(ms) => (Some(&ms[i]), Some(&ms[j])),
            None => (None, None),
        };
        match nsa_alter(params, &dataset[i], &dataset[j], mi, mj, 1, rng) {
            Ok((altered, specs, _)) => {
                diffs.extend(positive_diffs(&dataset[i], &altered, &specs));
                made += 1;
            }
            Err(Error::Placement { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if made == 0 {
        return Err(Error::Calibration(
            "no calibration anomaly could be placed".into(),
        ));
    }
    let q40 = percentile(&mut diffs, SATURATION_PERCENTILE)
        .ok_or_else(|| Error::Calibration("calibration anomalies changed no pixels".into()))?;
    LogisticFit::from_saturation(q40)
}

/// Uniform index in `0..n` different from `exclude` (or `exclude` itself when `n == 1`).
pub fn pick_other<R: Rng + ?Sized>(rng: &mut R, n: usize, exclude: usize) -> usize {
    if n <= 1 {
        return exclude;
    }
    let k = rng.random_range(0..n - 1);
    if k >= exclude {
        k + 1
    } else {
        k
    }
}

fn check_pair(x_i: &NdImage, x_j: &NdImage, masks: [Option<&ForegroundMask>; 2]) -> Result<()> {
    if x_i.data().shape() != x_j.data().shape() {
        return Err(Error::ShapeMismatch {
            expected: x_i.data().shape().to_vec(),
            actual: x_j.data().shape().to_vec(),
        });
    }
    for m in masks.into_iter().flatten() {
        if m.shape() != x_i.spatial_shape() {
            return Err(Error::ShapeMismatch {
                expected: x_i.spatial_shape().to_vec(),
                actual: m.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// The anomaly generating function `f_θ`.
pub fn apply_task<R: Rng + ?Sized>(
    task: &Task,
    x_i: &NdImage,
    x_j: &NdImage,
    m_i: Option<&ForegroundMask>,
    m_j: Option<&ForegroundMask>,
    rng: &mut R,
) -> Result<AugmentedSample> {
    check_pair(x_i, x_j, [m_i, m_j])?;
    let p = &task.params;
    let shape = x_i.spatial_shape().to_vec();
    match p.task {
        TaskKind::Fpi | TaskKind::Pii => {
            let spec = make_rect_patch(&shape, &p.bounds_for(&shape)?, rng)?;
            let alpha = f64::from(rng.random_range(p.alpha_range.0..=p.alpha_range.1) as f32);
            let src = x_j.window(&spec.origin, &spec.extent)?;
            let image = if p.task == TaskKind::Fpi {
                alpha_blend(x_i, &src, &spec, alpha)?
            } else {
                seamless_clone(x_i, &src, &spec, GuidanceMode::Interpolated { alpha })?
            };
            let label = label_interpolation(&spec, alpha, &shape)?;
            let record = PatchRecord {
                source_origin: spec.origin.clone(),
                source_extent: spec.extent.clone(),
                dest_origin: spec.origin.clone(),
                dest_extent: spec.extent.clone(),
                footprint_pixels: spec.footprint_len(),
                alpha: Some(alpha),
                transforms: Vec::new(),
            };
            Ok(AugmentedSample {
                image,
                label,
                anomaly_centres: vec![spec.centre()],
                patches: vec![record],
                specs: vec![spec],
            })
        }
        TaskKind::Cutpaste => cutpaste(p, x_i, rng),
        TaskKind::Nsa | TaskKind::NsaMixed => {
            let fit = p.logistic.as_ref().expect("validated");
            let n = rng.random_range(1..=p.max_anomalies);
            let (image, specs, patches) = nsa_alter(p, x_i, x_j, m_i, m_j, n, rng)?;
            let label = label_logistic_diff(x_i, &image, &specs, fit)?;
            Ok(AugmentedSample {
                image,
                label,
                anomaly_centres: specs.iter().map(PatchSpec::centre).collect(),
                patches,
                specs,
            })
        }
    }
}

fn cutpaste_extent<R: Rng + ?Sized>(
    geom: &CutPasteGeometry,
    shape: &[usize],
    rng: &mut R,
) -> Vec<usize> {
    let area = rng.random_range(geom.area_ratio.0..=geom.area_ratio.1);
    let aspect = rng.random_range(geom.aspect_ratio.0..=geom.aspect_ratio.1);
    let total = area * shape.iter().map(|&d| d as f64).product::<f64>();
    let d = shape.len();
    let side = total.powf(1.0 / d as f64);
    shape
        .iter()
        .enumerate()
        .map(|(a, &dim)| {
            let e = match (d, a) {
                (1, _) => total,
                (_, 0) => side * aspect.sqrt(),
                (_, 1) => side / aspect.sqrt(),
                _ => side,
            };
            (e.round() as usize).clamp(1, dim)
        })
        .collect()
}

fn cutpaste<R: Rng + ?Sized>(
    p: &TaskParams,
    x_i: &NdImage,
    rng: &mut R,
) -> Result<AugmentedSample> {
    let shape = x_i.spatial_shape().to_vec();
    let geom = p.geometry.as_ref().expect("validated");
    let jitter = p.jitter.as_ref().expect("validated");
    let bounds = p.bounds_for(&shape)?;
    let extent: Vec<usize> = cutpaste_extent(geom, &shape, rng)
        .into_iter()
        .zip(&bounds)
        .map(|(e, &(lo, hi))| e.clamp(lo, hi))
        .collect();
    let draw_origin = |rng: &mut R| -> Vec<usize> {
        extent
            .iter()
            .zip(&shape)
            .map(|(&e, &d)| rng.random_range(0..=d - e))
            .collect()
    };
    let src_origin = draw_origin(rng);
    let mut dest_origin = None;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let o = draw_origin(rng);
        if o != src_origin {
            dest_origin = Some(o);
            break;
        }
    }
    let dest_origin = dest_origin.ok_or(Error::Placement {
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })?;

    let mut transforms = Vec::new();
    if shape.len() >= 2 && rng.random_bool(jitter.rotate_prob) {
        let angle = rng.random_range(jitter.rotate_range.0..=jitter.rotate_range.1);
        transforms.push(PatchTransform::Rotate {
            angle,
            plane: (0, 1),
        });
    }
    if rng.random_bool(jitter.brightness_prob) {
        let factor = rng.random_range(jitter.brightness_range.0..=jitter.brightness_range.1);
        transforms.push(PatchTransform::Brightness { factor });
    }
    if rng.random_bool(jitter.contrast_prob) {
        let factor = rng.random_range(jitter.contrast_range.0..=jitter.contrast_range.1);
        transforms.push(PatchTransform::Contrast { factor });
    }

    let patch = Patch::full(x_i.window(&src_origin, &extent)?);
    let patch = apply_transforms(&patch, &transforms, p.dataset_min)?;
    let spec = PatchSpec::with_footprint(dest_origin.clone(), patch.footprint.clone())?;
    let image = paste(x_i, &patch.content, &spec)?;
    let label = label_binary(std::slice::from_ref(&spec), &shape)?;
    let record = PatchRecord {
        source_origin: src_origin,
        source_extent: extent.clone(),
        dest_origin,
        dest_extent: extent,
        footprint_pixels: spec.footprint_len(),
        alpha: None,
        transforms,
    };
    Ok(AugmentedSample {
        image,
        label,
        anomaly_centres: vec![spec.centre()],
        patches: vec![record],
        specs: vec![spec],
    })
}

fn place_with_mask<R: Rng + ?Sized>(
    shape: &[usize],
    extent: &[usize],
    mask: Option<&ForegroundMask>,
    min_fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let origin: Vec<usize> = extent
            .iter()
            .zip(shape)
            .map(|(&e, &d)| rng.random_range(0..=d - e))
            .collect();
        match mask {
            Some(m) if m.window_fraction(&origin, extent) < min_fraction => continue,
            _ => return Ok(origin),
        }
    }
    Err(Error::Placement {
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

/// Pastes `n` resized, seamlessly cloned patches of `x_j` into `x_i`.
fn nsa_alter<R: Rng + ?Sized>(
    p: &TaskParams,
    x_i: &NdImage,
    x_j: &NdImage,
    m_i: Option<&ForegroundMask>,
    m_j: Option<&ForegroundMask>,
    n: usize,
    rng: &mut R,
) -> Result<(NdImage, Vec<PatchSpec>, Vec<PatchRecord>)> {
    let shape = x_i.spatial_shape().to_vec();
    let bounds = p.bounds_for(&shape)?;
    let (slo, shi) = p.resize_range.expect("validated");
    let mode = if p.task == TaskKind::NsaMixed {
        GuidanceMode::Mixed
    } else {
        GuidanceMode::Source
    };
    let mut current = x_i.clone();
    let mut specs = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let src_extent: Vec<usize> = bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        let scale: Vec<f64> = (0..shape.len())
            .map(|_| rng.random_range(slo..=shi))
            .collect();
        let dest_extent: Vec<usize> = src_extent
            .iter()
            .zip(&scale)
            .zip(&bounds)
            .map(|((&e, &s), &(lo, hi))| ((e as f64 * s).round() as usize).clamp(lo, hi))
            .collect();
        let src_origin = place_with_mask(&shape, &src_extent, m_j, p.min_fg_fraction, rng)?;
        let dest_origin = place_with_mask(&shape, &dest_extent, m_i, p.min_fg_fraction, rng)?;
        let content = resize_to(&x_j.window(&src_origin, &src_extent)?, &dest_extent)?;
        let spec = PatchSpec::rect(dest_origin.clone(), dest_extent.clone());
        current = seamless_clone(&current, &content, &spec, mode)?;
        records.push(PatchRecord {
            source_origin: src_origin,
            source_extent: src_extent,
            dest_origin,
            dest_extent: dest_extent.clone(),
            footprint_pixels: spec.footprint_len(),
            alpha: None,
            transforms: vec![PatchTransform::Resize { scale }],
        });
        specs.push(spec);
    }
    Ok((current, specs, records))
}

/// Maps raw evaluation scores to an anomaly map: identity when already in
/// [0, 1], otherwise a logistic squashing.
pub fn score_transform(_kind: TaskKind, raw: &ArrayD<f32>) -> Result<AnomalyMap> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    if raw.iter().all(|v| (0.0..=1.0).contains(v)) {
        return AnomalyMap::new(raw.clone());
    }
    AnomalyMap::new(raw.mapv(|v| (1.0 / (1.0 + (-f64::from(v)).exp())).clamp(0.0, 1.0) as f32))
}
