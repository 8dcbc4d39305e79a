//! Python bindings: geometry, STFT, the four estimators, the evaluation
//! harness and the scene simulator.

use dpdloc::analysis::parse_smoothing;
use dpdloc::eval::{circular_error as circ_err, percentile_threshold as pct_threshold};
use dpdloc::{
    AnalysisConfig, Algorithm, Analyzer, ArrayGeometry, DoaGrid, Error, EvalConfig, GroundTruth, MultichannelAudio,
    SceneSpec, SimilarityKind, StftConfig, TfGrid,
};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_kind(kind: &str) -> PyResult<SimilarityKind> {
    kind.parse().map_err(py_err)
}

#[pyclass(name = "ArrayGeometry", module = "pydpdloc", from_py_object)]
#[derive(Clone)]
struct PyGeometry {
    inner: ArrayGeometry,
}

#[pymethods]
impl PyGeometry {
    #[new]
    #[pyo3(signature = (mic_positions, speed_of_sound = 343.0))]
    fn new(mic_positions: Vec<[f64; 3]>, speed_of_sound: f64) -> PyResult<Self> {
        Ok(Self {
            inner: ArrayGeometry::new(mic_positions, speed_of_sound).map_err(py_err)?,
        })
    }

    /// Built-in six-microphone glasses layout.
    #[staticmethod]
    fn glasses() -> Self {
        Self {
            inner: ArrayGeometry::glasses_fixture(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ArrayGeometry::from_toml_str(text).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_mics(&self) -> usize {
        self.inner.num_mics()
    }

    #[getter]
    fn mic_positions(&self) -> Vec<[f64; 3]> {
        self.inner.mic_positions().to_vec()
    }

    #[getter]
    fn speed_of_sound(&self) -> f64 {
        self.inner.speed_of_sound()
    }

    fn delays(&self, azimuth_deg: f64) -> Vec<f64> {
        self.inner.delays(azimuth_deg)
    }

    fn rotated(&self, degrees: f64) -> Self {
        Self {
            inner: self.inner.rotated(degrees),
        }
    }

    fn steering_vector(&self, frequency: f64, azimuth_deg: f64) -> Vec<Complex64> {
        dpdloc::steering_vector(&self.inner, frequency, azimuth_deg)
    }

    fn __repr__(&self) -> String {
        format!("ArrayGeometry(num_mics={})", self.inner.num_mics())
    }
}

/// Multichannel STFT with frame-major snapshots.
#[pyclass(name = "Spectrogram", module = "pydpdloc")]
struct PySpectrogram {
    inner: TfGrid,
}

#[pymethods]
impl PySpectrogram {
    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.num_frames()
    }

    #[getter]
    fn num_bins(&self) -> usize {
        self.inner.num_bins()
    }

    #[getter]
    fn num_channels(&self) -> usize {
        self.inner.num_channels()
    }

    fn frame_times(&self) -> Vec<f64> {
        self.inner.frame_times()
    }

    fn bin_frequencies(&self) -> Vec<f64> {
        self.inner.bin_frequencies()
    }

    /// The M-channel vector at (frame, bin).
    fn snapshot(&self, frame: usize, bin: usize) -> PyResult<Vec<Complex64>> {
        if frame >= self.inner.num_frames() || bin >= self.inner.num_bins() {
            return Err(PyValueError::new_err("frame or bin out of range"));
        }
        Ok(self.inner.snapshot(frame, bin).to_vec())
    }
}

/// Per-algorithm lists of (frame, bin, theta_deg, chi).
#[pyclass(name = "Estimates", module = "pydpdloc")]
struct PyEstimates {
    inner: dpdloc::Estimates,
}

#[pymethods]
impl PyEstimates {
    fn algorithms(&self) -> Vec<String> {
        self.inner.by_algorithm.keys().map(|a| a.name().to_string()).collect()
    }

    fn get(&self, algorithm: &str) -> PyResult<Vec<(usize, usize, f64, f64)>> {
        let a: Algorithm = algorithm.parse().map_err(py_err)?;
        Ok(self
            .inner
            .get(a)
            .iter()
            .map(|e| (e.frame, e.bin, e.theta_deg, e.chi))
            .collect())
    }
}

/// A rendered scene: audio channels plus ground truth as JSON.
#[pyclass(name = "Scene", module = "pydpdloc")]
struct PyScene {
    audio: MultichannelAudio,
    truth: GroundTruth,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn sample_rate(&self) -> f64 {
        self.audio.sample_rate
    }

    #[getter]
    fn channels(&self) -> Vec<Vec<f64>> {
        self.audio.channels.clone()
    }

    fn truth_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.truth).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[pyo3(signature = (window_size = 1024, hop = 512))]
    fn stft(&self, window_size: usize, hop: usize) -> PyResult<PySpectrogram> {
        run_stft(&self.audio, window_size, hop)
    }
}

fn run_stft(audio: &MultichannelAudio, window_size: usize, hop: usize) -> PyResult<PySpectrogram> {
    let cfg = StftConfig {
        window_size,
        hop,
        ..StftConfig::default()
    };
    Ok(PySpectrogram {
        inner: dpdloc::stft(audio, &cfg).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (a, b, kind = "cosine"))]
fn similarity(a: Vec<Complex64>, b: Vec<Complex64>, kind: &str) -> PyResult<f64> {
    dpdloc::doa::similarity(&a, &b, parse_kind(kind)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (channels, sample_rate, window_size = 1024, hop = 512))]
fn stft(channels: Vec<Vec<f64>>, sample_rate: f64, window_size: usize, hop: usize) -> PyResult<PySpectrogram> {
    let audio = MultichannelAudio::new(sample_rate, channels).map_err(py_err)?;
    run_stft(&audio, window_size, hop)
}

#[pyfunction]
#[pyo3(signature = (spectrogram, geometry, algorithms = None, similarity = "cosine", smoothing = "none", f_low = 1100.0, f_high = 2000.0))]
fn analyze(
    spectrogram: &PySpectrogram,
    geometry: &PyGeometry,
    algorithms: Option<Vec<String>>,
    similarity: &str,
    smoothing: &str,
    f_low: f64,
    f_high: f64,
) -> PyResult<PyEstimates> {
    let algorithms = match algorithms {
        Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<Algorithm>, _>>().map_err(py_err)?,
        None => Algorithm::ALL.to_vec(),
    };
    let cfg = AnalysisConfig {
        similarity: parse_kind(similarity)?,
        smoothing_radius: parse_smoothing(smoothing).map_err(py_err)?,
        f_low,
        f_high,
        algorithms,
    };
    let analyzer =
        Analyzer::free_field(&geometry.inner, DoaGrid::default(), spectrogram.inner.axes(), cfg).map_err(py_err)?;
    Ok(PyEstimates {
        inner: analyzer.analyze(&spectrogram.inner).map_err(py_err)?,
    })
}

/// Block metrics for one algorithm. `truth_json` is the ground-truth file
/// content as written by `simulate` or `Scene.truth_json`.
#[pyfunction]
#[pyo3(signature = (spectrogram, estimates, algorithm, truth_json, delta_t = 0.2, p = 100.0, hit_threshold_deg = 10.0))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    spectrogram: &PySpectrogram,
    estimates: &PyEstimates,
    algorithm: &str,
    truth_json: &str,
    delta_t: f64,
    p: f64,
    hit_threshold_deg: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let a: Algorithm = algorithm.parse().map_err(py_err)?;
    let truth: GroundTruth =
        serde_json::from_str(truth_json).map_err(|e| PyValueError::new_err(format!("truth: {e}")))?;
    let axes = spectrogram.inner.axes();
    let truth = truth.align_to(axes).map_err(py_err)?;
    let cfg = EvalConfig {
        delta_t,
        p,
        hit_threshold_deg,
        ..EvalConfig::default()
    };
    let report = dpdloc::evaluate_run(axes, estimates.inner.get(a), &truth, &cfg).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("e_bar_deg", report.e_bar_deg)?;
    out.set_item("h_bar", report.h_bar)?;
    out.set_item("total_valid_bins", report.total_valid_bins)?;
    out.set_item("blocks_total", report.blocks_total)?;
    out.set_item("blocks_scored", report.blocks.len())?;
    Ok(out)
}

/// Renders a scene spec given as TOML text.
#[pyfunction]
#[pyo3(signature = (scene_toml, geometry = None))]
fn simulate(scene_toml: &str, geometry: Option<&PyGeometry>) -> PyResult<PyScene> {
    let spec = SceneSpec::from_toml_str(scene_toml).map_err(py_err)?;
    let g = geometry.map_or_else(ArrayGeometry::glasses_fixture, |g| g.inner.clone());
    let scene = dpdloc::synthesize(&spec, &g).map_err(py_err)?;
    Ok(PyScene {
        audio: scene.audio,
        truth: scene.truth,
    })
}

#[pyfunction]
fn circular_error(psi_deg: f64, theta_deg: f64) -> f64 {
    circ_err(psi_deg, theta_deg)
}

#[pyfunction]
fn percentile_threshold(chis: Vec<f64>, p: f64) -> Option<f64> {
    pct_threshold(&chis, p)
}

#[pyfunction]
fn grid_azimuths() -> Vec<f64> {
    DoaGrid::default().azimuths().to_vec()
}

#[pymodule]
fn pydpdloc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeometry>()?;
    m.add_class::<PySpectrogram>()?;
    m.add_class::<PyEstimates>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(stft, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(circular_error, m)?)?;
    m.add_function(wrap_pyfunction!(percentile_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(grid_azimuths, m)?)?;
    Ok(())
}
