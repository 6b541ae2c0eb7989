//! Python bindings for the `keyassist` simulator.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use keyassist::config::SystemConfig;
use keyassist::keyqueue::{self, KeyQueueState, MarkovParams};
use keyassist::sim::{self, Scheme, SweepParameter, SweepSettings, ThroughputReport};
use keyassist::throughput::{self, MonteCarloProvider, ThroughputInputs};
use keyassist::{outage, rate};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// System parameters. Keyword arguments use the config-file key names.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SystemConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = SystemConfig::default();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let value: String = v.str()?.extract()?;
                inner.set(&key, &value).map_err(value_error)?;
            }
        }
        Ok(Self { inner })
    }

    /// Parses the `key = value` file format.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        SystemConfig::parse(text)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let value: String = value.str()?.extract()?;
        self.inner.set(key, &value).map_err(value_error)
    }

    /// Raises `ValueError` if the parameters are inconsistent.
    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map(|_| ()).map_err(value_error)
    }

    fn to_file_string(&self) -> String {
        self.inner.to_file_string()
    }

    #[getter]
    fn n_key(&self) -> PyResult<usize> {
        Ok(self.inner.validate().map_err(value_error)?.n_key())
    }

    #[getter]
    fn rate_key(&self) -> PyResult<f64> {
        Ok(self.inner.validate().map_err(value_error)?.rate_key())
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.inner.to_file_string().trim().replace('\n', ", "))
    }
}

/// Secret-key queue.
#[pyclass(name = "KeyQueue")]
struct PyKeyQueue {
    inner: KeyQueueState,
}

#[pymethods]
impl PyKeyQueue {
    #[new]
    #[pyo3(signature = (k, q_max, occupancy = 0))]
    fn new(k: usize, q_max: usize, occupancy: usize) -> PyResult<Self> {
        if k == 0 || k > q_max || occupancy > q_max {
            return Err(PyValueError::new_err("need 1 <= k <= q_max and occupancy <= q_max"));
        }
        Ok(Self {
            inner: KeyQueueState::with_occupancy(k, q_max, occupancy),
        })
    }

    #[getter]
    fn occupancy(&self) -> usize {
        self.inner.occupancy()
    }

    fn otp_ready(&self) -> bool {
        self.inner.otp_ready()
    }

    fn enqueue_key(&mut self) {
        self.inner = self.inner.enqueue_key();
    }

    fn dequeue_data(&mut self) -> PyResult<()> {
        self.inner = self.inner.dequeue_data().map_err(value_error)?;
        Ok(())
    }
}

fn validated(cfg: &PyConfig) -> PyResult<keyassist::Config> {
    cfg.inner.validate().map_err(value_error)
}

fn report_dict<'py>(py: Python<'py>, r: &ThroughputReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", r.scheme.name())?;
    d.set_item("secure_throughput", r.secure_throughput)?;
    d.set_item("std_error", r.std_error)?;
    d.set_item("ci95", r.ci95)?;
    d.set_item("slots", r.slots)?;
    d.set_item("secured_slots", r.secured_slots)?;
    d.set_item("otp_fraction", r.otp_fraction)?;
    d.set_item("sop_events", r.sop_events)?;
    d.set_item("outage_events", r.outage_events)?;
    d.set_item("key_arrivals", r.key_arrivals)?;
    Ok(d)
}

#[pyfunction]
fn q_inv(p: f64) -> f64 {
    rate::q_inv(p)
}

#[pyfunction]
#[pyo3(signature = (p_e, gamma_c = 1.0, gamma_m = 1.0))]
fn snr_gap(p_e: f64, gamma_c: f64, gamma_m: f64) -> PyResult<f64> {
    rate::snr_gap(p_e, gamma_c, gamma_m).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (gain, snr, gap, n = 64, n_cp = 8))]
fn subchannel_rate(gain: f64, snr: f64, gap: f64, n: usize, n_cp: usize) -> f64 {
    rate::subchannel_rate(gain, snr, gap, n, n_cp)
}

#[pyfunction]
#[pyo3(signature = (snr, gap, r_key, n = 64, n_cp = 8))]
fn sop_ba_closed_form(snr: f64, gap: f64, r_key: f64, n: usize, n_cp: usize) -> f64 {
    outage::sop_ba_closed_form(snr, gap, r_key, n, n_cp)
}

#[pyfunction]
#[pyo3(signature = (config, n_data, n_points = 4096))]
fn sop_ab_product_numeric(config: &PyConfig, n_data: usize, n_points: usize) -> PyResult<f64> {
    outage::sop_ab_product_numeric(&validated(config)?, n_data, n_points).map_err(value_error)
}

#[pyfunction]
fn r_threshold(config: &PyConfig, n_data: usize) -> PyResult<f64> {
    Ok(outage::r_threshold(&validated(config)?, n_data))
}

/// Stationary occupancy law by power iteration on the exact chain.
#[pyfunction]
#[pyo3(signature = (lam, k, q_max, f = 1.0))]
fn stationary_exact(lam: f64, k: usize, q_max: usize, f: f64) -> PyResult<Vec<f64>> {
    let params = MarkovParams {
        lambda: lam,
        f,
        k,
        q_max,
    };
    let p = keyqueue::transition_matrix(&params).map_err(value_error)?;
    Ok(keyqueue::stationary_exact(&p).map_err(value_error)?.pi)
}

#[pyfunction]
fn stationary_closed_form(lam: f64, k: usize, q_max: usize) -> PyResult<Vec<f64>> {
    Ok(keyqueue::stationary_closed_form(lam, k, q_max)
        .map_err(value_error)?
        .pi)
}

#[pyfunction]
fn arrival_rate(p_sop_ba_nkey: f64, p_sop_ba_n: f64, p_op_ab_ndata: f64) -> f64 {
    throughput::arrival_rate(p_sop_ba_nkey, p_sop_ba_n, p_op_ab_ndata)
}

#[pyfunction]
#[pyo3(signature = (p_op_ndata, p_op_n, p_sop_ab_ndata, p_sop_ab_n, p_sop_ba_nkey, lam, k, rate_data))]
#[allow(clippy::too_many_arguments)]
fn secure_throughput(
    p_op_ndata: f64,
    p_op_n: f64,
    p_sop_ab_ndata: f64,
    p_sop_ab_n: f64,
    p_sop_ba_nkey: f64,
    lam: f64,
    k: usize,
    rate_data: f64,
) -> PyResult<f64> {
    let probs = [p_op_ndata, p_op_n, p_sop_ab_ndata, p_sop_ab_n, p_sop_ba_nkey, lam];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || k == 0 || lam / k as f64 > 1.0 {
        return Err(PyValueError::new_err("probabilities must lie in [0, 1] and k >= 1"));
    }
    Ok(throughput::secure_throughput(&ThroughputInputs {
        p_op_ndata,
        p_op_n,
        p_sop_ab_ndata,
        p_sop_ab_n,
        p_sop_ba_nkey,
        lambda: lam,
        k,
        rate_data,
    }))
}

/// Runs one scheme (`fixed`, `dynamic` or `benchmark`) and returns its report.
#[pyfunction]
#[pyo3(signature = (config, scheme = "fixed", slots = 10_000, seed = 1))]
fn simulate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    scheme: &str,
    slots: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = validated(config)?;
    let scheme: Scheme = scheme.parse().map_err(value_error)?;
    let report = py.detach(|| sim::run_seeded(&cfg, scheme, slots, seed));
    report_dict(py, &report)
}

/// Runs all schemes over `grid` values of `parameter`; one dict per row.
#[pyfunction]
#[pyo3(signature = (config, parameter, grid, slots = 5_000, seed = 1, reoptimize_samples = None))]
fn sweep<'py>(
    py: Python<'py>,
    config: &PyConfig,
    parameter: &str,
    grid: Vec<f64>,
    slots: u64,
    seed: u64,
    reoptimize_samples: Option<usize>,
) -> PyResult<Bound<'py, PyList>> {
    let parameter: SweepParameter = parameter.parse().map_err(value_error)?;
    let settings = SweepSettings {
        slots,
        seed,
        schemes: Scheme::ALL.to_vec(),
        reoptimize_samples,
        common_random_numbers: false,
    };
    let base = config.inner.clone();
    let rows = py
        .detach(|| sim::sweep(&base, parameter, &grid, &settings))
        .map_err(value_error)?;
    let out = PyList::empty(py);
    for row in &rows {
        let d = report_dict(py, &row.report)?;
        d.set_item("parameter", row.parameter.name())?;
        d.set_item("value", row.value)?;
        d.set_item("n_data", row.n_data)?;
        d.set_item("seed", row.seed)?;
        out.append(d)?;
    }
    Ok(out)
}

/// Grid search over `(n_data, k)`; returns `(n_data, k, throughput, surface)`.
#[pyfunction]
#[pyo3(signature = (config, samples = 5_000, seed = 1))]
fn optimize(
    py: Python<'_>,
    config: &PyConfig,
    samples: usize,
    seed: u64,
) -> PyResult<(usize, usize, f64, Vec<(usize, usize, f64)>)> {
    let cfg = validated(config)?;
    let r = py
        .detach(|| {
            let provider = MonteCarloProvider::new(&cfg, samples, seed);
            throughput::optimize_grid(&cfg, &provider)
        })
        .map_err(value_error)?;
    Ok((r.best_n_data, r.best_k, r.best_throughput, r.surface))
}

#[pymodule]
fn keyassist_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyKeyQueue>()?;
    m.add_function(wrap_pyfunction!(q_inv, m)?)?;
    m.add_function(wrap_pyfunction!(snr_gap, m)?)?;
    m.add_function(wrap_pyfunction!(subchannel_rate, m)?)?;
    m.add_function(wrap_pyfunction!(sop_ba_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(sop_ab_product_numeric, m)?)?;
    m.add_function(wrap_pyfunction!(r_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_exact, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(arrival_rate, m)?)?;
    m.add_function(wrap_pyfunction!(secure_throughput, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    Ok(())
}
