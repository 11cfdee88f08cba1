//! Python bindings: configuration, phase-matching predictions, frame
//! simulation and both analysis pipelines. Widths are in meters.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use twinbeam_core::analysis::{
    self, CountingOptions, IntensityOptions, SweepOptions, WidthEstimate,
};
use twinbeam_core::config::{validate, ExperimentConfig, Regime};
use twinbeam_core::error::Error;
use twinbeam_core::pipeline::{CountingSimulator, IntensitySimulator};
use twinbeam_core::pm;
use twinbeam_core::synth::{self, make_speckle_model};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn regime(name: &str) -> PyResult<Regime> {
    name.parse().map_err(|_| PyValueError::new_err(format!("unknown regime '{name}'")))
}

#[pyclass(name = "Config", module = "twinbeam", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Default experiment.
    #[new]
    fn new() -> Self {
        Self {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ExperimentConfig::load(path.as_ref()).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_string(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_config_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_string(&self) -> String {
        self.inner.to_config_string()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).map_err(to_py)
    }

    /// Copy with a square sensor of `size` pixels split into two halves.
    fn with_sensor(&self, size: usize) -> Self {
        Self {
            inner: self.inner.with_sensor(size),
        }
    }

    fn with_regime(&self, name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_regime(regime(name)?),
        })
    }

    /// Violated invariants as `field: message` strings; empty when valid.
    fn validate(&self) -> Vec<String> {
        validate(&self.inner).violations.iter().map(|v| v.to_string()).collect()
    }

    #[getter]
    fn regime(&self) -> String {
        self.inner.regime.to_string()
    }

    #[setter]
    fn set_regime(&mut self, name: &str) -> PyResult<()> {
        self.inner.regime = regime(name)?;
        Ok(())
    }

    #[getter]
    fn rng_seed(&self) -> u64 {
        self.inner.rng_seed
    }

    #[setter]
    fn set_rng_seed(&mut self, v: u64) {
        self.inner.rng_seed = v;
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.inner.n_frames
    }

    #[setter]
    fn set_n_frames(&mut self, v: usize) {
        self.inner.n_frames = v;
    }

    #[getter]
    fn n_reference_points(&self) -> usize {
        self.inner.n_reference_points
    }

    #[setter]
    fn set_n_reference_points(&mut self, v: usize) {
        self.inner.n_reference_points = v;
    }

    #[getter]
    fn pump_power(&self) -> f64 {
        self.inner.pump.power
    }

    #[setter]
    fn set_pump_power(&mut self, v: f64) {
        self.inner.pump.power = v;
    }

    #[getter]
    fn waist_horizontal(&self) -> f64 {
        self.inner.pump.waist_horizontal
    }

    #[setter]
    fn set_waist_horizontal(&mut self, v: f64) {
        self.inner.pump.waist_horizontal = v;
    }

    #[getter]
    fn waist_vertical(&self) -> f64 {
        self.inner.pump.waist_vertical
    }

    #[setter]
    fn set_waist_vertical(&mut self, v: f64) {
        self.inner.pump.waist_vertical = v;
    }

    #[getter]
    fn quantum_efficiency(&self) -> (f64, f64) {
        let d = &self.inner.detector;
        (d.quantum_efficiency_signal, d.quantum_efficiency_idler)
    }

    #[setter]
    fn set_quantum_efficiency(&mut self, v: (f64, f64)) {
        self.inner.detector.quantum_efficiency_signal = v.0;
        self.inner.detector.quantum_efficiency_idler = v.1;
    }

    #[getter]
    fn mean_pairs_per_frame(&self) -> f64 {
        self.inner.source.mean_pairs_per_frame
    }

    #[setter]
    fn set_mean_pairs_per_frame(&mut self, v: f64) {
        self.inner.source.mean_pairs_per_frame = v;
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Config(regime='{}', sensor={}x{}, pump_power={}, seed={})",
            c.regime, c.detector.sensor_width, c.detector.sensor_height, c.pump.power, c.rng_seed
        )
    }
}

/// Gaussian speckle model with target AC and XC widths (radial, azimuthal).
#[pyclass(name = "SpeckleModel", module = "twinbeam", from_py_object)]
#[derive(Clone)]
struct PySpeckleModel {
    inner: synth::SpeckleModel,
}

#[pymethods]
impl PySpeckleModel {
    #[new]
    #[pyo3(signature = (ac_fwhm, xc_fwhm, cross_strength=1.0, mean_intensity=20000.0))]
    fn new(ac_fwhm: (f64, f64), xc_fwhm: (f64, f64), cross_strength: f64, mean_intensity: f64) -> PyResult<Self> {
        make_speckle_model([ac_fwhm.0, ac_fwhm.1], [xc_fwhm.0, xc_fwhm.1], cross_strength, mean_intensity)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn ac_fwhm(&self) -> (f64, f64) {
        let w = self.inner.ac_fwhm();
        (w[0], w[1])
    }

    #[getter]
    fn xc_fwhm(&self) -> (f64, f64) {
        let w = self.inner.xc_fwhm();
        (w[0], w[1])
    }

    #[getter]
    fn cross_strength(&self) -> f64 {
        self.inner.cross_strength_mu
    }

    #[getter]
    fn mean_intensity(&self) -> f64 {
        self.inner.mean_intensity
    }

    fn __repr__(&self) -> String {
        let (a, x) = (self.inner.ac_fwhm(), self.inner.xc_fwhm());
        format!(
            "SpeckleModel(ac_fwhm=({}, {}), xc_fwhm=({}, {}), cross_strength={})",
            a[0], a[1], x[0], x[1], self.inner.cross_strength_mu
        )
    }
}

fn width_dict<'py>(py: Python<'py>, w: &WidthEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("radial_fwhm", w.radial.fwhm)?;
    d.set_item("radial_sigma", w.radial.uncertainty)?;
    d.set_item("radial_at_floor", w.radial.at_floor)?;
    d.set_item("azimuthal_fwhm", w.azimuthal.fwhm)?;
    d.set_item("azimuthal_sigma", w.azimuthal.uncertainty)?;
    d.set_item("azimuthal_at_floor", w.azimuthal.at_floor)?;
    d.set_item("method", w.method.to_string())?;
    Ok(d)
}

/// Phase-matching XC widths (radial, azimuthal).
#[pyfunction]
#[pyo3(signature = (config, widen_factor=None))]
fn predict_widths(py: Python<'_>, config: &PyConfig, widen_factor: Option<f64>) -> PyResult<(f64, f64)> {
    let c = &config.inner;
    let widen = widen_factor.unwrap_or(c.pump.spectrum_widen_factor);
    let p = py.detach(|| pm::predict_widths(c, widen)).map_err(to_py)?;
    Ok((p.radial_fwhm, p.azimuthal_fwhm))
}

/// Detected superpixels `(signal, idler)` of one counting frame.
#[pyfunction]
fn counting_events(config: &PyConfig, frame_index: u64) -> PyResult<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let sim = CountingSimulator::new(&config.inner).map_err(to_py)?;
    let e = sim.events(frame_index);
    Ok((e.signal, e.idler))
}

/// Simulates a counting stack and returns the XC widths and efficiencies.
#[pyfunction]
#[pyo3(signature = (config, n_frames, window=33))]
fn measure_counting<'py>(py: Python<'py>, config: &PyConfig, n_frames: usize, window: usize) -> PyResult<Bound<'py, PyDict>> {
    let opts = CountingOptions {
        window,
        ..CountingOptions::default()
    };
    let c = &config.inner;
    let m = py
        .detach(|| analysis::simulate_and_measure_counting(c, n_frames, &opts))
        .map_err(to_py)?;
    let d = width_dict(py, &m.width)?;
    d.set_item("n_frames", n_frames)?;
    d.set_item("eta_signal", m.moments.estimated_efficiency_signal)?;
    d.set_item("eta_idler", m.moments.estimated_efficiency_idler)?;
    d.set_item("eta_signal_sigma", m.moments.efficiency_sigma_signal)?;
    d.set_item("eta_idler_sigma", m.moments.efficiency_sigma_idler)?;
    Ok(d)
}

/// One intensity frame as rows of superpixels; `detected` adds detector
/// response and readout noise.
#[pyfunction]
#[pyo3(signature = (model, config, frame_index, detected=true))]
fn render_frame(py: Python<'_>, model: &PySpeckleModel, config: &PyConfig, frame_index: u64, detected: bool) -> PyResult<Vec<Vec<f64>>> {
    let c = config.inner.with_regime(Regime::Intensity);
    let frame = py
        .detach(|| {
            let sim = IntensitySimulator::new(&c, &model.inner)?;
            Ok::<_, Error>(if detected { sim.frame(frame_index) } else { sim.ideal_frame(frame_index) })
        })
        .map_err(to_py)?;
    Ok((0..frame.height())
        .map(|y| (0..frame.width()).map(|x| frame.value(x, y)).collect())
        .collect())
}

/// Simulates an intensity stack and returns AC and XC widths.
#[pyfunction]
#[pyo3(signature = (config, model, n_frames, points=None, window=None))]
fn measure_intensity<'py>(
    py: Python<'py>,
    config: &PyConfig,
    model: &PySpeckleModel,
    n_frames: usize,
    points: Option<usize>,
    window: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut c = config.inner.with_regime(Regime::Intensity);
    if let Some(p) = points {
        c.n_reference_points = p;
    }
    let opts = IntensityOptions {
        window: window.unwrap_or(c.window),
        ..IntensityOptions::default()
    };
    let m = py
        .detach(|| {
            let sim = IntensitySimulator::new(&c, &model.inner)?;
            let stack = sim.stack(n_frames);
            analysis::measure_intensity(&stack, sim.layout(), &c, &opts)
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("ac", width_dict(py, &m.ac)?)?;
    d.set_item("xc", width_dict(py, &m.xc)?)?;
    d.set_item("n_points", m.reference_points.len())?;
    Ok(d)
}

/// AC and XC widths at each pump power (watts).
#[pyfunction]
#[pyo3(signature = (config, powers, n_frames=None))]
fn power_sweep<'py>(py: Python<'py>, config: &PyConfig, powers: Vec<f64>, n_frames: Option<usize>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let c = &config.inner;
    let mut o = SweepOptions::from_config(c);
    if let Some(n) = n_frames {
        o.n_frames = n;
    }
    let rows = py.detach(|| analysis::width_vs_power_sweep(c, &powers, &o)).map_err(to_py)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("power", r.power)?;
            d.set_item("ac", width_dict(py, &r.ac)?)?;
            d.set_item("xc", width_dict(py, &r.xc)?)?;
            Ok(d)
        })
        .collect()
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("twinbeam".to_string()).chain(args).collect();
    py.detach(|| twinbeam_cli::run_pipeline(argv))
}

#[pymodule]
fn twinbeam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySpeckleModel>()?;
    m.add_function(wrap_pyfunction!(predict_widths, m)?)?;
    m.add_function(wrap_pyfunction!(counting_events, m)?)?;
    m.add_function(wrap_pyfunction!(measure_counting, m)?)?;
    m.add_function(wrap_pyfunction!(render_frame, m)?)?;
    m.add_function(wrap_pyfunction!(measure_intensity, m)?)?;
    m.add_function(wrap_pyfunction!(power_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
