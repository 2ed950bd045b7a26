//! Python bindings: calibrate a task and apply it to numpy arrays.
//!
//! Images are exchanged as float32 arrays in channel-first layout
//! `[channel, spatial...]`; masks and labels are spatial only.

use numpy::{PyArrayDyn, PyReadonlyArrayDyn, PyUntypedArrayMethods};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nnoodkit::foreground::foreground_mask;
use nnoodkit::image::zscore_normalize;
use nnoodkit::plan::ExperimentPlan;
use nnoodkit::tasks::{apply_task, calibrate, AugmentedSample, Task, TaskKind, TaskParams};
use nnoodkit::{Error, ForegroundMask, NdImage};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (Error::Placement { .. } | Error::SolverDiverged { .. } | Error::Calibration(_)) => {
            PyRuntimeError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

fn image_from(arr: &PyReadonlyArrayDyn<'_, f32>, what: &str) -> PyResult<NdImage> {
    let shape = arr.shape().to_vec();
    NdImage::new(arr.as_array().to_owned()).map_err(|e| {
        PyValueError::new_err(format!(
            "{what}: array of shape {shape:?} is not [channel, spatial...] float32: {e}"
        ))
    })
}

/// Borrows a float32 array, reporting dtype and shape when the object does not fit.
fn f32_array<'py>(obj: &Bound<'py, PyAny>, what: &str) -> PyResult<PyReadonlyArrayDyn<'py, f32>> {
    obj.extract::<PyReadonlyArrayDyn<'py, f32>>().map_err(|_| {
        let attr = |name: &str| {
            obj.getattr(name)
                .and_then(|v| v.str().map(|s| s.to_string()))
                .unwrap_or_else(|_| "?".into())
        };
        PyTypeError::new_err(format!(
            "{what}: expected a float32 numpy array in [channel, spatial...] layout, got {} with dtype {} and shape {}",
            obj.get_type().name().map(|n| n.to_string()).unwrap_or_default(),
            attr("dtype"),
            attr("shape"),
        ))
    })
}

fn mask_from(arr: &PyReadonlyArrayDyn<'_, bool>) -> ForegroundMask {
    ForegroundMask::new(arr.as_array().to_owned())
}

fn plan_from(plan: &Bound<'_, PyAny>) -> PyResult<ExperimentPlan> {
    let text: String = if plan.is_instance_of::<PyString>() {
        plan.extract()?
    } else if plan.is_instance_of::<PyDict>() {
        plan.py()
            .import("json")?
            .call_method1("dumps", (plan,))?
            .extract()?
    } else {
        return Err(PyValueError::new_err(
            "plan must be a dict or a JSON string",
        ));
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("plan: {e}")))
}

/// A calibrated task. Immutable; safe to share between threads.
#[pyclass(frozen, module = "nnoodkit")]
struct BoundTask {
    task: Task,
}

#[pymethods]
impl BoundTask {
    /// Rebuilds a task from a `task_params.json` string.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let params: TaskParams =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(BoundTask {
            task: Task::new(params).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.task.kind().name()
    }

    /// Parameters in the same JSON form as `task_params.json`.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(self.task.params())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let p = self.task.params();
        format!(
            "BoundTask(name={:?}, extent_bounds={:?}, max_anomalies={})",
            self.name(),
            p.extent_bounds,
            p.max_anomalies
        )
    }
}

fn prepare(
    dataset: &[Bound<'_, PyAny>],
    normalise: bool,
    uniform_background: bool,
) -> PyResult<(Vec<NdImage>, Option<Vec<ForegroundMask>>)> {
    let images = dataset
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let what = format!("dataset[{k}]");
            let img = image_from(&f32_array(a, &what)?, &what)?;
            Ok(if normalise {
                zscore_normalize(&img)
            } else {
                img
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let masks = if uniform_background {
        Some(
            images
                .iter()
                .map(foreground_mask)
                .collect::<Result<Vec<_>, _>>()
                .map_err(to_py)?,
        )
    } else {
        None
    };
    Ok((images, masks))
}

/// Calibrates `task_name` on raw images. With the defaults this matches
/// `nnoodkit calibrate` on a dataset holding the same images.
#[pyfunction]
#[pyo3(signature = (task_name, dataset, plan, seed, uniform_background = false, normalise = true))]
fn bind_calibrate(
    py: Python<'_>,
    task_name: &str,
    dataset: Vec<Bound<'_, PyAny>>,
    plan: &Bound<'_, PyAny>,
    seed: u64,
    uniform_background: bool,
    normalise: bool,
) -> PyResult<BoundTask> {
    let kind: TaskKind = task_name.parse().map_err(to_py)?;
    let plan = plan_from(plan)?;
    let (images, masks) = prepare(&dataset, normalise, uniform_background)?;
    let params = py
        .detach(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            calibrate(kind, &images, masks.as_deref(), &plan, &mut rng)
        })
        .map_err(to_py)?;
    Ok(BoundTask {
        task: Task::new(params).map_err(to_py)?,
    })
}

type SampleOut<'py> = (
    Bound<'py, PyArrayDyn<f32>>,
    Bound<'py, PyArrayDyn<f32>>,
    Vec<Vec<usize>>,
);

fn sample_out(py: Python<'_>, s: AugmentedSample) -> SampleOut<'_> {
    let centres = s.anomaly_centres;
    (
        PyArrayDyn::from_owned_array(py, s.image.into_data()),
        PyArrayDyn::from_owned_array(py, s.label.into_values()),
        centres,
    )
}

/// Applies a task to one image pair with a generator seeded by `seed`.
/// Returns `(image, label, anomaly_centres)`.
#[pyfunction]
#[pyo3(signature = (task, x_i, x_j, seed, m_i = None, m_j = None))]
fn bind_apply<'py>(
    py: Python<'py>,
    task: &BoundTask,
    x_i: &Bound<'py, PyAny>,
    x_j: &Bound<'py, PyAny>,
    seed: u64,
    m_i: Option<PyReadonlyArrayDyn<'py, bool>>,
    m_j: Option<PyReadonlyArrayDyn<'py, bool>>,
) -> PyResult<SampleOut<'py>> {
    let xi = image_from(&f32_array(x_i, "x_i")?, "x_i")?;
    let xj = image_from(&f32_array(x_j, "x_j")?, "x_j")?;
    let mi = m_i.as_ref().map(mask_from);
    let mj = m_j.as_ref().map(mask_from);
    let sample = py
        .detach(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            apply_task(&task.task, &xi, &xj, mi.as_ref(), mj.as_ref(), &mut rng)
        })
        .map_err(to_py)?;
    Ok(sample_out(py, sample))
}

/// Sample `index` exactly as `nnoodkit generate --seed base_seed` makes it.
/// Returns `(i, j, (image, label, anomaly_centres))`.
#[pyfunction]
#[pyo3(signature = (task, dataset, base_seed, index, uniform_background = false, normalise = true))]
fn bind_generate_sample<'py>(
    py: Python<'py>,
    task: &BoundTask,
    dataset: Vec<Bound<'py, PyAny>>,
    base_seed: u64,
    index: usize,
    uniform_background: bool,
    normalise: bool,
) -> PyResult<(usize, usize, SampleOut<'py>)> {
    let (images, masks) = prepare(&dataset, normalise, uniform_background)?;
    let (i, j, sample) = py
        .detach(|| {
            nnoodkit::cli::generate_sample(&images, masks.as_deref(), &task.task, base_seed, index)
        })
        .map_err(to_py)?;
    Ok((i, j, sample_out(py, sample)))
}

/// Per-sample seed used by `generate` for sample `index`.
#[pyfunction]
fn mix_seed(base_seed: u64, index: u64) -> u64 {
    nnoodkit::mix_seed(base_seed, index)
}

#[pymodule]
#[pyo3(name = "nnoodkit")]
pub fn nnoodkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<BoundTask>()?;
    m.add_function(wrap_pyfunction!(bind_calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(bind_apply, m)?)?;
    m.add_function(wrap_pyfunction!(bind_generate_sample, m)?)?;
    m.add_function(wrap_pyfunction!(mix_seed, m)?)?;
    Ok(())
}
