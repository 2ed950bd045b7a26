//! Command implementations behind the `nnoodkit` binary.
//!
//! Every command is a plain function over paths so it can be driven from
//! tests. Randomness comes only from the `seed` argument: sample `k` uses a
//! generator seeded with `mix_seed(seed, k)`, which keeps output independent
//! of thread count and scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, BoundingBox, MetricReport};
use crate::image::{AnomalyMap, ForegroundMask, NdImage};
use crate::io;
use crate::plan::{build_plan, ExperimentPlan};
use crate::tasks::{
    apply_task, calibrate, pick_other, AugmentedSample, PatchRecord, Task, TaskKind, TaskParams,
};
use crate::util::mix_seed;

pub const PLAN_FILE: &str = "plan.json";
pub const PARAMS_FILE: &str = "task_params.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Writes `plan.json` for the dataset at `dataset_dir`.
pub fn cmd_plan(dataset_dir: &Path, out: &Path) -> Result<ExperimentPlan> {
    let ds = Dataset::load_training(dataset_dir)?;
    let masks = ds.foreground_masks()?;
    let plan = build_plan(&ds.images, masks.as_deref())?;
    io::write_json(out, &plan)?;
    Ok(plan)
}

fn check_plan(plan: &ExperimentPlan, ds: &Dataset) -> Result<()> {
    if plan.spatial_rank != ds.descriptor.spatial_rank
        || plan.patch_size.len() != plan.spatial_rank
        || plan.channels != ds.descriptor.channels
    {
        return Err(Error::InvalidParameter(format!(
            "plan (rank {}, {} channel(s)) does not match dataset (rank {}, {} channel(s))",
            plan.spatial_rank, plan.channels, ds.descriptor.spatial_rank, ds.descriptor.channels
        )));
    }
    Ok(())
}

/// Calibrates `task` on the training set and writes `task_params.json`.
pub fn cmd_calibrate(
    dataset_dir: &Path,
    task: TaskKind,
    plan_path: &Path,
    seed: u64,
    out: &Path,
) -> Result<TaskParams> {
    let ds = Dataset::load_training(dataset_dir)?;
    let plan: ExperimentPlan = io::read_json(plan_path)?;
    check_plan(&plan, &ds)?;
    let masks = ds.foreground_masks()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = calibrate(task, &ds.images, masks.as_deref(), &plan, &mut rng)?;
    io::write_json(out, &params)?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub index: usize,
    pub name: String,
}

/// Destination placement with its footprint flattened row-major (1 = inside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub origin: Vec<usize>,
    pub extent: Vec<usize>,
    pub footprint: Vec<u8>,
}

/// JSON sidecar written next to each generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub task: TaskKind,
    pub base_seed: u64,
    pub index: usize,
    pub sample_seed: u64,
    pub source: ImageRef,
    pub partner: ImageRef,
    pub anomaly_centres: Vec<Vec<usize>>,
    pub patches: Vec<PatchRecord>,
    pub specs: Vec<SpecRecord>,
    pub image_file: String,
    pub label_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_png_file: Option<String>,
    /// Stored 16-bit value = round(label * scale).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_png_scale: Option<f64>,
}

/// Draws the image pair for sample `k` and applies the task. Replaying with
/// the same arguments reproduces the sample bit for bit.
pub fn generate_sample(
    images: &[NdImage],
    masks: Option<&[ForegroundMask]>,
    task: &Task,
    base_seed: u64,
    k: usize,
) -> Result<(usize, usize, AugmentedSample)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if masks.is_some_and(|m| m.len() != images.len()) {
        return Err(Error::InvalidParameter(
            "one mask per image is required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(base_seed, k as u64));
    let n = images.len();
    let i = rng.random_range(0..n);
    let j = pick_other(&mut rng, n, i);
    let (mi, mj) = match masks {
        Some(m) => (Some(&m[i]), Some(&m[j])),
        None => (None, None),
    };
    let sample = apply_task(task, &images[i], &images[j], mi, mj, &mut rng)?;
    Ok((i, j, sample))
}

#[derive(Debug, Clone, Default)]
pub struct GenerateReport {
    pub written: Vec<usize>,
    pub failures: Vec<(usize, String)>,
}

fn load_task(params_path: &Path) -> Result<Task> {
    let params: TaskParams = io::read_json(params_path)?;
    Task::new(params)
}

fn check_task(task: &Task, ds: &Dataset) -> Result<()> {
    if task.params().extent_bounds.len() != ds.descriptor.spatial_rank {
        return Err(Error::InvalidParameter(format!(
            "task parameters are for rank {}, dataset has rank {}",
            task.params().extent_bounds.len(),
            ds.descriptor.spatial_rank
        )));
    }
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

fn write_sample(out_dir: &Path, record: &mut SampleRecord, sample: &AugmentedSample) -> Result<()> {
    let stem = format!("sample_{:05}", record.index);
    record.image_file = format!("{stem}.nii");
    record.label_file = format!("{stem}_label.nii");
    io::write_nifti_f32(&out_dir.join(&record.image_file), sample.image.data())?;
    io::write_label_nifti(&out_dir.join(&record.label_file), &sample.label)?;
    if sample.label.shape().len() == 2 {
        let name = format!("{stem}_label.png");
        io::write_atomic(&out_dir.join(&name), &io::encode_label_png(&sample.label)?)?;
        record.label_png_file = Some(name);
        record.label_png_scale = Some(io::LABEL_PNG_SCALE);
    }
    io::write_json(&out_dir.join(format!("{stem}.json")), record)
}

/// Generates `count` augmented samples into `out_dir`. A failed sample is
/// reported in the returned report and does not stop the others.
pub fn cmd_generate(
    dataset_dir: &Path,
    params_path: &Path,
    count: usize,
    seed: u64,
    out_dir: &Path,
    jobs: usize,
) -> Result<GenerateReport> {
    if count < 1 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let ds = Dataset::load_training(dataset_dir)?;
    let task = load_task(params_path)?;
    check_task(&task, &ds)?;
    let masks = ds.foreground_masks()?;
    fs::create_dir_all(out_dir)?;

    let results: Vec<Result<()>> = thread_pool(jobs)?.install(|| {
        (0..count)
            .into_par_iter()
            .map(|k| {
                let (i, j, sample) = generate_sample(&ds.images, masks.as_deref(), &task, seed, k)?;
                let mut record = SampleRecord {
                    task: task.kind(),
                    base_seed: seed,
                    index: k,
                    sample_seed: mix_seed(seed, k as u64),
                    source: ImageRef {
                        index: i,
                        name: ds.names[i].clone(),
                    },
                    partner: ImageRef {
                        index: j,
                        name: ds.names[j].clone(),
                    },
                    anomaly_centres: sample.anomaly_centres.clone(),
                    patches: sample.patches.clone(),
                    specs: sample
                        .specs
                        .iter()
                        .map(|s| SpecRecord {
                            origin: s.origin.clone(),
                            extent: s.extent.clone(),
                            footprint: s.footprint.iter().map(|&b| u8::from(b)).collect(),
                        })
                        .collect(),
                    image_file: String::new(),
                    label_file: String::new(),
                    label_png_file: None,
                    label_png_scale: None,
                };
                write_sample(out_dir, &mut record, &sample)
            })
            .collect()
    });

    let mut report = GenerateReport::default();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(()) => report.written.push(k),
            Err(e) => report.failures.push((k, e.to_string())),
        }
    }
    Ok(report)
}

fn load_prediction(path: &Path) -> Result<AnomalyMap> {
    let (img, full) = if io::is_png(path) {
        io::read_png(path)?
    } else {
        (io::read_nifti(path, None)?, 1.0)
    };
    if img.channels() != 1 {
        return Err(Error::Format(format!(
            "{}: prediction must have one channel",
            path.display()
        )));
    }
    let values = img.channel(0).mapv(|v| v / full);
    AnomalyMap::new(values).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn load_ground_truth(gt_dir: &Path, stem: &str, shape: &[usize]) -> Result<ArrayD<bool>> {
    let json = gt_dir.join(format!("{stem}.json"));
    if json.is_file() {
        let boxes: Vec<BoundingBox> = io::read_json(&json)?;
        return crate::eval::rasterise_boxes(shape, &boxes);
    }
    for ext in ["png", "nii", "nii.gz"] {
        let p = gt_dir.join(format!("{stem}.{ext}"));
        if p.is_file() {
            let img = io::read_image(&p, Some(shape.len()))?;
            if img.channels() != 1 {
                return Err(Error::Format(format!(
                    "{}: mask must have one channel",
                    p.display()
                )));
            }
            return Ok(img.channel(0).mapv(|v| v > 0.0));
        }
    }
    Err(Error::Format(format!(
        "no ground truth for {stem} in {}",
        gt_dir.display()
    )))
}

/// Pools every prediction in `pred_dir` against its namesake in `gt_dir`
/// (mask image or bounding-box JSON) and writes the metric report to `out`.
pub fn cmd_evaluate(pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<MetricReport> {
    let mut files: Vec<PathBuf> = fs::read_dir(pred_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && (io::is_png(p) || io::is_nifti(p)))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut preds = Vec::with_capacity(files.len());
    let mut gts = Vec::with_capacity(files.len());
    for f in &files {
        let stem = io::image_stem(f)
            .ok_or_else(|| Error::Format(format!("bad file name {}", f.display())))?;
        let pred = load_prediction(f)?;
        gts.push(load_ground_truth(gt_dir, &stem, pred.shape())?);
        preds.push(pred);
    }
    let report = evaluate_dataset(&preds, &gts)?;
    io::write_json(out, &report)?;
    Ok(report)
}

/// 2D display plane of a spatial array: the middle slice along leading axes
/// for 3D data, a single row for 1D data.
fn display_plane(values: &ArrayD<f32>) -> Array2<f32> {
    let mut v = values.view();
    while v.ndim() > 2 {
        let mid = v.shape()[0] / 2;
        v = v.index_axis_move(Axis(0), mid);
    }
    if v.ndim() == 1 {
        v = v.insert_axis(Axis(0));
    }
    v.into_dimensionality().expect("rank 2").to_owned()
}

fn channel_mean(data: &ArrayD<f32>) -> ArrayD<f32> {
    data.mean_axis(Axis(0)).expect("at least one channel")
}

/// Side-by-side panel: original | augmented | label heat map (red channel).
/// Image panels share one min-max display scaling.
pub fn render_panel(
    original: &ArrayD<f32>,
    augmented: &ArrayD<f32>,
    label: &AnomalyMap,
) -> Result<ArrayD<u8>> {
    let a = display_plane(&channel_mean(original));
    let b = display_plane(&channel_mean(augmented));
    let l = display_plane(label.values());
    if a.dim() != b.dim() || a.dim() != l.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    let (h, w) = a.dim();
    let lo = a
        .iter()
        .chain(b.iter())
        .copied()
        .fold(f32::INFINITY, f32::min);
    let hi = a
        .iter()
        .chain(b.iter())
        .copied()
        .fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let gray = |v: f32| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
    let mut panel = ArrayD::<u8>::zeros(IxDyn(&[3, h, 3 * w]));
    for y in 0..h {
        for x in 0..w {
            let (ga, gb) = (gray(a[[y, x]]), gray(b[[y, x]]));
            for c in 0..3 {
                panel[[c, y, x]] = ga;
                panel[[c, y, w + x]] = gb;
            }
            panel[[0, y, 2 * w + x]] = (l[[y, x]] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(panel)
}

/// Writes `n` inspection panels; sample `k` matches `generate` sample `k`
/// for the same seed.
pub fn cmd_inspect(
    dataset_dir: &Path,
    params_path: &Path,
    n: usize,
    seed: u64,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<PathBuf>> {
    if n < 1 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let ds = Dataset::load_training(dataset_dir)?;
    let task = load_task(params_path)?;
    check_task(&task, &ds)?;
    let masks = ds.foreground_masks()?;
    fs::create_dir_all(out_dir)?;
    thread_pool(jobs)?.install(|| {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let (i, _, sample) = generate_sample(&ds.images, masks.as_deref(), &task, seed, k)?;
                let panel = render_panel(ds.images[i].data(), sample.image.data(), &sample.label)?;
                let path = out_dir.join(format!("inspect_{k:05}.png"));
                io::write_atomic(&path, &io::encode_rgb8_png(&panel)?)?;
                Ok(path)
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_overlay_follows_label_support() {
        let orig = ArrayD::from_shape_fn(IxDyn(&[1, 4, 5]), |i| (i[1] * 5 + i[2]) as f32);
        let mut lab = ArrayD::zeros(IxDyn(&[4, 5]));
        lab[[1, 2]] = 0.5;
        lab[[3, 4]] = 1.0;
        let label = AnomalyMap::new(lab.clone()).unwrap();
        let p = render_panel(&orig, &orig, &label).unwrap();
        assert_eq!(p.shape(), &[3, 4, 15]);
        assert_eq!(p[[0, 0, 0]], 0);
        assert_eq!(p[[0, 3, 4]], 255);
        for y in 0..4 {
            for x in 0..5 {
                let on = (0..3).any(|c| p[[c, y, 10 + x]] != 0);
                assert_eq!(on, lab[[y, x]] > 0.0);
            }
        }
    }

    #[test]
    fn display_plane_of_volume_is_middle_slice() {
        let v = ArrayD::from_shape_fn(IxDyn(&[3, 2, 2]), |i| i[0] as f32);
        assert!(display_plane(&v).iter().all(|&x| x == 1.0));
        let r = ArrayD::from_shape_fn(IxDyn(&[4]), |i| i[0] as f32);
        assert_eq!(display_plane(&r).dim(), (1, 4));
    }
}
