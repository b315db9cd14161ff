//! Python bindings for the hybrid DRAM/NVM cache models.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hybrid_cache::explorer::{run_experiment as run_experiment_rs, ExperimentSpec, Mode};
use hybrid_cache::latency as lat;
use hybrid_cache::meanfield::{self, FixedPointOptions, MeanFieldState, TransientOptions};
use hybrid_cache::model::{self, Architecture, Budget};
use hybrid_cache::oracle::{self, PowerOptions};
use hybrid_cache::simulator::{self, SimConfig};
use hybrid_cache::{ContentDistribution, Error};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        3 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn arch(kind: &str, alpha: f64) -> PyResult<Architecture> {
    match kind {
        "flat" => Architecture::flat(alpha).map_err(to_py),
        "layered" => Ok(Architecture::Layered),
        other => Err(PyValueError::new_err(format!(
            "architecture must be 'flat' or 'layered', got {other:?}"
        ))),
    }
}

/// Page popularity, sorted from most to least popular.
#[pyclass(frozen)]
struct Workload(hybrid_cache::PopularityDist);

#[pymethods]
impl Workload {
    #[staticmethod]
    fn zipf(n: usize, gamma: f64) -> PyResult<Self> {
        hybrid_cache::PopularityDist::zipf(n, gamma).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn custom(probs: Vec<f64>) -> PyResult<Self> {
        hybrid_cache::PopularityDist::custom(&probs).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        hybrid_cache::PopularityDist::from_probs_file(path)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn probs(&self) -> Vec<f64> {
        self.0.probs().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.n()
    }
}

/// Lists of both devices; list capacities are given NVM lists first.
#[pyclass(frozen)]
struct Geometry(hybrid_cache::CacheGeometry);

#[pymethods]
impl Geometry {
    #[new]
    fn new(h_nvm: usize, h_dram: usize, capacities: Vec<usize>) -> PyResult<Self> {
        hybrid_cache::CacheGeometry::new(h_nvm, h_dram, capacities)
            .map(Self)
            .map_err(to_py)
    }

    /// Splits each device's pages evenly over its lists.
    #[staticmethod]
    fn even(h_nvm: usize, h_dram: usize, m_nvm: usize, m_dram: usize) -> PyResult<Self> {
        hybrid_cache::CacheGeometry::even(h_nvm, h_dram, m_nvm, m_dram)
            .map(Self)
            .map_err(to_py)
    }

    /// Buys pages for a budget, spending `nvm_fraction` of it on NVM.
    #[staticmethod]
    #[pyo3(signature = (budget, nvm_fraction, h_nvm, h_dram, cost_dram=1.0, cost_nvm=0.25))]
    fn from_budget(
        budget: f64,
        nvm_fraction: f64,
        h_nvm: usize,
        h_dram: usize,
        cost_dram: f64,
        cost_nvm: f64,
    ) -> PyResult<Self> {
        let b = Budget::new(budget, cost_dram, cost_nvm).map_err(to_py)?;
        let (m_dram, m_nvm) = model::allocate_budget(&b, nvm_fraction, h_nvm, h_dram).map_err(to_py)?;
        Self::even(h_nvm, h_dram, m_nvm, m_dram)
    }

    #[getter]
    fn h_nvm(&self) -> usize {
        self.0.h_nvm()
    }

    #[getter]
    fn h_dram(&self) -> usize {
        self.0.h_dram()
    }

    #[getter]
    fn capacities(&self) -> Vec<usize> {
        self.0.capacities().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(h_nvm={}, h_dram={}, capacities={:?})",
            self.0.h_nvm(),
            self.0.h_dram(),
            self.0.capacities()
        )
    }
}

/// Device service times in microseconds.
#[pyclass(frozen, get_all)]
struct Timings {
    dram_read: f64,
    dram_write: f64,
    nvm_read: f64,
    nvm_write: f64,
    storage_read: f64,
}

impl Timings {
    fn inner(&self) -> lat::DeviceTimings {
        lat::DeviceTimings {
            dram_read: self.dram_read,
            dram_write: self.dram_write,
            nvm_read: self.nvm_read,
            nvm_write: self.nvm_write,
            storage_read: self.storage_read,
        }
    }
}

#[pymethods]
impl Timings {
    #[new]
    fn new(dram_read: f64, dram_write: f64, nvm_read: f64, nvm_write: f64, storage_read: f64) -> PyResult<Self> {
        lat::DeviceTimings::new(dram_read, dram_write, nvm_read, nvm_write, storage_read).map_err(to_py)?;
        Ok(Self {
            dram_read,
            dram_write,
            nvm_read,
            nvm_write,
            storage_read,
        })
    }

    #[staticmethod]
    fn common() -> Self {
        let t = lat::DeviceTimings::common();
        Self {
            dram_read: t.dram_read,
            dram_write: t.dram_write,
            nvm_read: t.nvm_read,
            nvm_write: t.nvm_write,
            storage_read: t.storage_read,
        }
    }
}

#[pyclass(frozen, get_all)]
struct FixedPoint {
    /// Per-list hit probabilities, `H[0]` being the miss ratio.
    h: Vec<f64>,
    s: Vec<f64>,
    residual: f64,
    iterations: usize,
    /// `(nvm, dram)` residence probability of every page.
    device_occupancy: Vec<(f64, f64)>,
}

#[pyclass(frozen, get_all)]
struct Simulation {
    h: Vec<f64>,
    windowed_miss: Vec<(u64, f64)>,
    /// `(nvm, dram, miss)` fractions of each page's requests.
    per_page: Vec<(f64, f64, f64)>,
    requests: u64,
}

#[pyfunction]
#[pyo3(signature = (workload, geometry, architecture, alpha=0.8, tol=1e-10))]
fn fixed_point(
    workload: &Workload,
    geometry: &Geometry,
    architecture: &str,
    alpha: f64,
    tol: f64,
) -> PyResult<FixedPoint> {
    let a = arch(architecture, alpha)?;
    let fp =
        meanfield::solve_fixed_point(&a, &workload.0, &geometry.0, FixedPointOptions::with_tol(tol)).map_err(to_py)?;
    Ok(FixedPoint {
        h: meanfield::content_distribution(&fp, &workload.0).h_values().to_vec(),
        s: fp.s(),
        residual: fp.residual,
        iterations: fp.iterations,
        device_occupancy: fp.device_occupancy(),
    })
}

/// Euler miss-ratio trajectory from an empty cache, `horizon + 1` values.
#[pyfunction]
#[pyo3(signature = (workload, geometry, architecture, horizon, alpha=0.8, substeps=1))]
fn transient(
    workload: &Workload,
    geometry: &Geometry,
    architecture: &str,
    horizon: usize,
    alpha: f64,
    substeps: usize,
) -> PyResult<Vec<f64>> {
    let a = arch(architecture, alpha)?;
    let x0 = MeanFieldState::empty(workload.0.n(), geometry.0.h());
    let tr = meanfield::integrate_transient(
        &x0,
        &a,
        &workload.0,
        &geometry.0,
        horizon,
        TransientOptions { substeps },
    )
    .map_err(to_py)?;
    Ok(tr.miss_ratios())
}

#[pyfunction]
#[pyo3(signature = (workload, geometry, architecture, steps, seeds, alpha=0.8, window=1000, burn_in=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    workload: &Workload,
    geometry: &Geometry,
    architecture: &str,
    steps: u64,
    seeds: Vec<u64>,
    alpha: f64,
    window: u64,
    burn_in: u64,
) -> PyResult<Simulation> {
    let a = arch(architecture, alpha)?;
    let config = SimConfig::new(steps, window).with_burn_in(burn_in);
    let m = simulator::run_seeds(&workload.0, &a, &geometry.0, &config, &seeds).map_err(to_py)?;
    let h = simulator::steady_hit_distribution(&m, burn_in).map_err(to_py)?;
    Ok(Simulation {
        h: h.h_values().to_vec(),
        windowed_miss: m.windowed_miss(),
        per_page: m.per_page_device_probs().iter().map(|p| (p[0], p[1], p[2])).collect(),
        requests: m.total_requests(),
    })
}

/// Exact per-list hit probabilities of a tiny instance.
#[pyfunction]
#[pyo3(signature = (workload, geometry, architecture, alpha=0.8, via_chain=false))]
fn exact(
    workload: &Workload,
    geometry: &Geometry,
    architecture: &str,
    alpha: f64,
    via_chain: bool,
) -> PyResult<Vec<f64>> {
    let a = arch(architecture, alpha)?;
    let st = if via_chain {
        oracle::stationary_via_transition_matrix(&a, &workload.0, &geometry.0, PowerOptions::default())
    } else {
        oracle::steady_state_closed_form(&a, &workload.0, &geometry.0, oracle::DEFAULT_STATE_CAP)
    }
    .map_err(to_py)?;
    let h = oracle::content_distribution_exact(&st, &workload.0, geometry.0.h()).map_err(to_py)?;
    Ok(h.h_values().to_vec())
}

/// Average request latency (us) for per-list hit probabilities `h`.
#[pyfunction]
#[pyo3(signature = (h, timings, geometry, architecture, alpha=0.8))]
fn latency(h: Vec<f64>, timings: &Timings, geometry: &Geometry, architecture: &str, alpha: f64) -> PyResult<f64> {
    let a = arch(architecture, alpha)?;
    let h = ContentDistribution::new(h).map_err(to_py)?;
    lat::latency(&a, &h, &timings.inner(), &geometry.0).map_err(to_py)
}

/// Runs an experiment file in the given mode and returns the results rows.
#[pyfunction]
fn run_experiment(config: &str, mode: &str, out_dir: &str) -> PyResult<Vec<Vec<String>>> {
    let mut spec = ExperimentSpec::from_file(config).map_err(to_py)?;
    let m: Mode = serde_json::from_value(serde_json::Value::String(mode.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown mode {mode:?}")))?;
    spec.mode = Some(m);
    let summary = run_experiment_rs(&spec, out_dir, false).map_err(to_py)?;
    let mut rows = vec![summary.columns];
    rows.extend(summary.rows);
    Ok(rows)
}

#[pymodule]
fn hybrid_cache_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Workload>()?;
    m.add_class::<Geometry>()?;
    m.add_class::<Timings>()?;
    m.add_class::<FixedPoint>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(transient, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(exact, m)?)?;
    m.add_function(wrap_pyfunction!(latency, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
