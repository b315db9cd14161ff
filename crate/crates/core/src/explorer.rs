//! Experiment driver behind the `hcache` tool.
//!
//! An [`ExperimentSpec`] is read from a TOML file with `workload`, `cache`,
//! `timings` and `run` tables plus any number of `[[sweep]]` axes. Every point
//! of the sweep cross-product is evaluated in a worker pool and the outputs
//! are written to one directory together with `results.csv` (one row per
//! point) and `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{latency, DeviceTimings};
use crate::meanfield::{
    content_distribution, integrate_transient, solve_fixed_point, ContentDistribution, FixedPoint, FixedPointOptions,
    MeanFieldState, TransientOptions,
};
use crate::model::{allocate_budget, Architecture, Budget, CacheGeometry};
use crate::oracle::{
    content_distribution_exact, state_count, stationary_via_transition_matrix, steady_state_closed_form, PowerOptions,
};
use crate::simulator::{self, steady_hit_distribution, SimConfig, SimMetrics};
use crate::workload::PopularityDist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Meanfield,
    FixedPoint,
    Oracle,
    Latency,
    Validate,
    Sweep,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Meanfield => "meanfield",
            Mode::FixedPoint => "fixed-point",
            Mode::Oracle => "oracle",
            Mode::Latency => "latency",
            Mode::Validate => "validate",
            Mode::Sweep => "sweep",
        }
    }

    fn is_stochastic(&self) -> bool {
        matches!(self, Mode::Simulate | Mode::Validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Flat,
    Layered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub n: usize,
    pub gamma: f64,
    /// One probability per line; overrides `n` and `gamma`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probs_file: Option<PathBuf>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            gamma: 0.8,
            probs_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSpec {
    pub architecture: ArchKind,
    /// Probability that a Flat miss fills DRAM.
    pub alpha: f64,
    pub h_nvm: usize,
    pub h_dram: usize,
    pub m_nvm: usize,
    pub m_dram: usize,
    /// Explicit per-list capacities (NVM lists first); overrides `m_nvm`,
    /// `m_dram` and the budget form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacities: Option<Vec<usize>>,
    /// Budget form: when set, `m_nvm` and `m_dram` are derived from the
    /// budget, the per-page prices and `nvm_fraction`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    pub cost_dram: f64,
    pub cost_nvm: f64,
    pub nvm_fraction: f64,
}

impl Default for CacheSpec {
    fn default() -> Self {
        Self {
            architecture: ArchKind::Flat,
            alpha: 0.8,
            h_nvm: 2,
            h_dram: 2,
            m_nvm: 200,
            m_dram: 100,
            capacities: None,
            budget: None,
            cost_dram: 1.0,
            cost_nvm: 0.25,
            nvm_fraction: 0.5,
        }
    }
}

/// Device timings: start from `preset` (only `common` exists) and override
/// individual fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dram_read: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dram_write: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nvm_read: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nvm_write: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub storage_read: Option<f64>,
}

impl TimingSpec {
    pub fn resolve(&self) -> Result<DeviceTimings> {
        let mut t = match self.preset.as_deref() {
            None | Some("common") => DeviceTimings::common(),
            Some(other) => return Err(Error::Config(format!("timings.preset: unknown preset {other:?}"))),
        };
        let fields = [
            (self.dram_read, &mut t.dram_read),
            (self.dram_write, &mut t.dram_write),
            (self.nvm_read, &mut t.nvm_read),
            (self.nvm_write, &mut t.nvm_write),
            (self.storage_read, &mut t.storage_read),
        ];
        for (value, slot) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
        t.validate().map_err(|e| Error::Config(format!("timings: {e}")))?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub window: u64,
    pub burn_in: u64,
    /// Relative capacity tolerance of the fixed-point solver.
    pub tol: f64,
    /// Slots integrated by the `meanfield` mode.
    pub horizon: usize,
    pub substeps: usize,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    /// Also write the full occupancy matrix of the fixed point.
    pub pi_csv: bool,
    /// What the `sweep` mode evaluates at every point.
    pub point_mode: Mode,
    /// Largest state space the oracle will enumerate.
    pub oracle_cap: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            steps: 1_000_000,
            window: 1000,
            burn_in: 100_000,
            tol: 1e-10,
            horizon: 5000,
            substeps: 1,
            jobs: 0,
            pi_csv: false,
            point_mode: Mode::Latency,
            oracle_cap: 200_000,
        }
    }
}

/// A number or a word (the latter only for `architecture`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

/// The swept parameter values of one point, in axis order.
pub type Assignment = Vec<(String, ParamValue)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<ParamValue>,
}

/// Parameters a sweep axis may vary.
pub const SWEEP_PARAMS: &[&str] = &[
    "architecture",
    "alpha",
    "gamma",
    "n",
    "h_nvm",
    "h_dram",
    "m_nvm",
    "m_dram",
    "budget",
    "nvm_fraction",
    "cost_dram",
    "cost_nvm",
    "dram_read",
    "dram_write",
    "nvm_read",
    "nvm_write",
    "storage_read",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub workload: WorkloadSpec,
    pub cache: CacheSpec,
    pub timings: TimingSpec,
    pub run: RunSpec,
    pub sweep: Vec<SweepAxis>,
}

/// Command-line values that replace config fields one for one.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub steps: Option<u64>,
    pub window: Option<u64>,
    pub burn_in: Option<u64>,
    pub tol: Option<f64>,
    pub jobs: Option<usize>,
    pub pi_csv: bool,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut spec = Self::from_toml_str(&text)?;
        // Relative probability files are looked up next to the config.
        if let Some(file) = &spec.workload.probs_file {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    spec.workload.probs_file = Some(dir.join(file));
                }
            }
        }
        Ok(spec)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = &o.seeds {
            self.run.seeds = s.clone();
        }
        if let Some(v) = o.steps {
            self.run.steps = v;
        }
        if let Some(v) = o.window {
            self.run.window = v;
        }
        if let Some(v) = o.burn_in {
            self.run.burn_in = v;
        }
        if let Some(v) = o.tol {
            self.run.tol = v;
        }
        if let Some(v) = o.jobs {
            self.run.jobs = v;
        }
        if o.pi_csv {
            self.run.pi_csv = true;
        }
    }

    /// The mode evaluated at each point.
    pub fn point_mode(&self) -> Result<Mode> {
        match self.mode {
            None => Err(Error::Config("mode: no run mode given".into())),
            Some(Mode::Sweep) if self.run.point_mode == Mode::Sweep => {
                Err(Error::Config("run.point_mode: must name a concrete mode".into()))
            }
            Some(Mode::Sweep) => Ok(self.run.point_mode),
            Some(m) => Ok(m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mode = self.point_mode()?;
        if mode.is_stochastic() && self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds: at least one seed is required".into()));
        }
        if mode.is_stochastic() {
            SimConfig::new(self.run.steps, self.run.window)
                .with_burn_in(self.run.burn_in)
                .validate()
                .map_err(|e| Error::Config(format!("run: {e}")))?;
        }
        if !(self.run.tol > 0.0 && self.run.tol.is_finite()) {
            return Err(Error::Config(format!(
                "run.tol: must be positive, got {}",
                self.run.tol
            )));
        }
        if self.run.substeps == 0 {
            return Err(Error::Config("run.substeps: must be positive".into()));
        }
        let mut seen = Vec::new();
        for axis in &self.sweep {
            if !SWEEP_PARAMS.contains(&axis.param.as_str()) {
                return Err(Error::Config(format!(
                    "sweep.param: unknown parameter {:?} (expected one of {})",
                    axis.param,
                    SWEEP_PARAMS.join(", ")
                )));
            }
            if seen.contains(&axis.param) {
                return Err(Error::Config(format!("sweep.param: {:?} swept twice", axis.param)));
            }
            if axis.values.is_empty() {
                return Err(Error::Config(format!("sweep.values: axis {:?} is empty", axis.param)));
            }
            seen.push(axis.param.clone());
        }
        self.timings.resolve()?;
        Ok(())
    }

    /// Every point of the sweep cross-product, last axis varying fastest.
    pub fn points(&self) -> Result<Vec<(Assignment, ExperimentSpec)>> {
        let mut out = vec![(Vec::new(), self.clone())];
        for axis in &self.sweep {
            let mut next = Vec::with_capacity(out.len() * axis.values.len());
            for (assignment, spec) in &out {
                for value in &axis.values {
                    let mut s = spec.clone();
                    s.set_param(&axis.param, value)?;
                    let mut a = assignment.clone();
                    a.push((axis.param.clone(), value.clone()));
                    next.push((a, s));
                }
            }
            out = next;
        }
        for (_, s) in &mut out {
            s.sweep.clear();
        }
        Ok(out)
    }

    pub fn set_param(&mut self, param: &str, value: &ParamValue) -> Result<()> {
        let number = || match value {
            ParamValue::Number(v) => Ok(*v),
            ParamValue::Text(s) => Err(Error::Config(format!("sweep {param}: expected a number, got {s:?}"))),
        };
        let count = || {
            let v = number()?;
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(Error::Config(format!(
                    "sweep {param}: expected a whole number, got {v}"
                )));
            }
            Ok(v as usize)
        };
        match param {
            "architecture" => {
                self.cache.architecture = match value {
                    ParamValue::Text(s) if s == "flat" => ArchKind::Flat,
                    ParamValue::Text(s) if s == "layered" => ArchKind::Layered,
                    _ => return Err(Error::Config(format!("sweep architecture: unknown value {value}"))),
                }
            }
            "alpha" => self.cache.alpha = number()?,
            "gamma" => self.workload.gamma = number()?,
            "n" => self.workload.n = count()?,
            "h_nvm" => self.cache.h_nvm = count()?,
            "h_dram" => self.cache.h_dram = count()?,
            "m_nvm" => self.cache.m_nvm = count()?,
            "m_dram" => self.cache.m_dram = count()?,
            "budget" => self.cache.budget = Some(number()?),
            "nvm_fraction" => self.cache.nvm_fraction = number()?,
            "cost_dram" => self.cache.cost_dram = number()?,
            "cost_nvm" => self.cache.cost_nvm = number()?,
            "dram_read" => self.timings.dram_read = Some(number()?),
            "dram_write" => self.timings.dram_write = Some(number()?),
            "nvm_read" => self.timings.nvm_read = Some(number()?),
            "nvm_write" => self.timings.nvm_write = Some(number()?),
            "storage_read" => self.timings.storage_read = Some(number()?),
            other => return Err(Error::Config(format!("sweep.param: unknown parameter {other:?}"))),
        }
        Ok(())
    }

    /// Builds the concrete model objects of a single point.
    pub fn resolve(&self) -> Result<Point> {
        let workload = match &self.workload.probs_file {
            Some(path) => PopularityDist::from_probs_file(path)?,
            None => PopularityDist::zipf(self.workload.n, self.workload.gamma)?,
        };
        let c = &self.cache;
        let arch = match c.architecture {
            ArchKind::Flat => Architecture::flat(c.alpha)?,
            ArchKind::Layered => Architecture::Layered,
        };
        let geometry = if let Some(caps) = &c.capacities {
            if caps.len() != c.h_nvm + c.h_dram {
                return Err(Error::Config(format!(
                    "cache.capacities: {} entries for h_nvm + h_dram = {} lists",
                    caps.len(),
                    c.h_nvm + c.h_dram
                )));
            }
            CacheGeometry::new(c.h_nvm, c.h_dram, caps.clone())?
        } else if let Some(total) = c.budget {
            let budget = Budget::new(total, c.cost_dram, c.cost_nvm)?;
            let (m_dram, m_nvm) = allocate_budget(&budget, c.nvm_fraction, c.h_nvm, c.h_dram)?;
            CacheGeometry::even(c.h_nvm, c.h_dram, m_nvm, m_dram)?
        } else {
            CacheGeometry::even(c.h_nvm, c.h_dram, c.m_nvm, c.m_dram)?
        };
        geometry.check_workload(workload.n())?;
        geometry.check_architecture(&arch)?;
        Ok(Point {
            workload,
            arch,
            geometry,
            timings: self.timings.resolve()?,
            run: self.run.clone(),
        })
    }
}

/// Model objects of one experiment point.
#[derive(Debug, Clone)]
pub struct Point {
    pub workload: PopularityDist,
    pub arch: Architecture,
    pub geometry: CacheGeometry,
    pub timings: DeviceTimings,
    pub run: RunSpec,
}

impl Point {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig::new(self.run.steps, self.run.window).with_burn_in(self.run.burn_in)
    }

    pub fn fixed_point(&self) -> Result<FixedPoint> {
        solve_fixed_point(
            &self.arch,
            &self.workload,
            &self.geometry,
            FixedPointOptions::with_tol(self.run.tol),
        )
    }

    pub fn latency(&self, h: &ContentDistribution) -> Result<f64> {
        latency(&self.arch, h, &self.timings, &self.geometry)
    }
}

/// Simulator against fixed point at one point.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub h_sim: Vec<f64>,
    pub h_model: Vec<f64>,
    /// Standard error of each simulated `H_i` across seeds (NaN with a single
    /// seed).
    pub h_sim_stderr: Vec<f64>,
    pub max_list_deviation: f64,
    /// Largest `|P_sim - P_model|` over pages and both devices.
    pub max_page_deviation: f64,
    pub latency_sim: f64,
    pub latency_model: f64,
    pub latency_relative_error: f64,
    /// Exact per-list probabilities when the state space is small enough.
    pub h_oracle: Option<Vec<f64>>,
    /// Largest `|H_sim - H_oracle| / stderr` over lists.
    pub oracle_z_max: Option<f64>,
}

/// Runs the simulator once per seed and the fixed-point solver on the same
/// point, and compares per-list and per-page statistics and latency.
pub fn validate_point(point: &Point) -> Result<ValidationReport> {
    let config = point.sim_config();
    let runs = point
        .run
        .seeds
        .par_iter()
        .map(|&seed| simulator::run(&point.workload, &point.arch, &point.geometry, &config, seed))
        .collect::<Result<Vec<_>>>()?;
    let merged = SimMetrics::merge(&runs)?;
    let fp = point.fixed_point()?;
    let model = content_distribution(&fp, &point.workload);
    validation_report(point, &runs, &merged, &fp, &model)
}

fn validation_report(
    point: &Point,
    runs: &[SimMetrics],
    merged: &SimMetrics,
    fp: &FixedPoint,
    model: &ContentDistribution,
) -> Result<ValidationReport> {
    let sim = steady_hit_distribution(merged, point.run.burn_in)?;
    let per_seed = runs
        .iter()
        .map(|r| steady_hit_distribution(r, point.run.burn_in))
        .collect::<Result<Vec<_>>>()?;
    let lists = sim.lists() + 1;
    let stderr: Vec<f64> = (0..lists)
        .map(|i| {
            let r = per_seed.len() as f64;
            if per_seed.len() < 2 {
                return f64::NAN;
            }
            let mean = per_seed.iter().map(|d| d.h_values()[i]).sum::<f64>() / r;
            let var = per_seed.iter().map(|d| (d.h_values()[i] - mean).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        })
        .collect();
    let max_list_deviation = sim
        .h_values()
        .iter()
        .zip(model.h_values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let occupancy = fp.device_occupancy();
    let mut max_page_deviation: f64 = 0.0;
    for (probs, (nvm, dram)) in merged.per_page_device_probs().iter().zip(&occupancy) {
        if probs[0].is_nan() {
            continue;
        }
        max_page_deviation = max_page_deviation
            .max((probs[0] - nvm).abs())
            .max((probs[1] - dram).abs());
    }
    let latency_sim = point.latency(&sim)?;
    let latency_model = point.latency(model)?;

    let mut h_oracle = None;
    let mut oracle_z_max = None;
    let small =
        state_count(point.workload.n(), point.geometry.capacities()).is_some_and(|c| c <= point.run.oracle_cap as u128);
    if small {
        let st = steady_state_closed_form(
            &point.arch,
            &point.workload,
            &point.geometry,
            point.run.oracle_cap as u128,
        )?;
        let exact = content_distribution_exact(&st, &point.workload, point.geometry.h())?;
        let z = sim
            .h_values()
            .iter()
            .zip(exact.h_values())
            .zip(&stderr)
            .map(|((a, b), se)| {
                let d = (a - b).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / se
                }
            })
            .fold(0.0, f64::max);
        oracle_z_max = Some(z);
        h_oracle = Some(exact.h_values().to_vec());
    }

    Ok(ValidationReport {
        h_sim: sim.h_values().to_vec(),
        h_model: model.h_values().to_vec(),
        h_sim_stderr: stderr,
        max_list_deviation,
        max_page_deviation,
        latency_sim,
        latency_model,
        latency_relative_error: (latency_sim - latency_model).abs() / latency_sim,
        h_oracle,
        oracle_z_max,
    })
}

/// First slot from which `series` stays within `rel * |limit|` of `limit`.
pub fn settling_time(series: &[f64], limit: f64, rel: f64) -> Option<usize> {
    let band = rel * limit.abs();
    let last_out = series.iter().rposition(|v| (v - limit).abs() > band);
    match last_out {
        None => Some(0),
        Some(t) if t + 1 < series.len() => Some(t + 1),
        Some(_) => None,
    }
}

/// Files and the results row produced by one point.
#[derive(Debug, Clone)]
struct PointOutput {
    metrics: Vec<(&'static str, String)>,
    files: Vec<(String, Vec<u8>)>,
}

/// Paths and per-point summaries from [`run_experiment`].
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub points: usize,
    pub outputs: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    mode: &'static str,
    point_mode: &'static str,
    seeds: &'a [u64],
    spec: &'a ExperimentSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    workload_probs: Option<Vec<f64>>,
    points: Vec<ManifestPoint>,
    outputs: &'a [String],
}

#[derive(Serialize)]
struct ManifestPoint {
    index: usize,
    dir: String,
    params: BTreeMap<String, ParamValue>,
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn per_list_csv(h: &ContentDistribution) -> Result<Vec<u8>> {
    csv_bytes(
        &["list", "H"],
        h.h_values()
            .iter()
            .enumerate()
            .map(|(i, v)| [i.to_string(), v.to_string()]),
    )
}

fn device_metrics(h: &ContentDistribution, point: &Point) -> Vec<(&'static str, String)> {
    let (nvm, dram) = h.device_split(point.geometry.h_nvm());
    vec![
        ("miss_ratio", h.miss_ratio().to_string()),
        ("hit_nvm", nvm.to_string()),
        ("hit_dram", dram.to_string()),
    ]
}

fn eval_point(mode: Mode, point: &Point) -> Result<PointOutput> {
    let mut files = Vec::new();
    let mut metrics = Vec::new();
    match mode {
        Mode::Simulate => {
            let m = simulator::run_seeds(
                &point.workload,
                &point.arch,
                &point.geometry,
                &point.sim_config(),
                &point.run.seeds,
            )?;
            let h = steady_hit_distribution(&m, point.run.burn_in)?;
            let probs = m.per_page_device_probs();
            files.push((
                "per_page.csv".into(),
                csv_bytes(
                    &["page", "p_k", "hit_nvm", "hit_dram", "miss"],
                    probs.iter().enumerate().map(|(k, p)| {
                        [
                            k.to_string(),
                            point.workload.prob(k).to_string(),
                            p[0].to_string(),
                            p[1].to_string(),
                            p[2].to_string(),
                        ]
                    }),
                )?,
            ));
            files.push((
                "transient.csv".into(),
                csv_bytes(
                    &["window_start", "miss_ratio"],
                    m.windowed_miss().iter().map(|(t, v)| [t.to_string(), v.to_string()]),
                )?,
            ));
            files.push(("per_list.csv".into(), per_list_csv(&h)?));
            metrics.push(("requests", m.total_requests().to_string()));
            metrics.extend(device_metrics(&h, point));
            metrics.push(("latency_us", point.latency(&h)?.to_string()));
        }
        Mode::Meanfield => {
            let x0 = MeanFieldState::empty(point.workload.n(), point.geometry.h());
            let options = TransientOptions {
                substeps: point.run.substeps,
            };
            let tr = integrate_transient(
                &x0,
                &point.arch,
                &point.workload,
                &point.geometry,
                point.run.horizon,
                options,
            )?;
            let miss = tr.miss_ratios();
            files.push((
                "transient.csv".into(),
                csv_bytes(
                    &["window_start", "miss_ratio"],
                    miss.iter().enumerate().map(|(t, v)| [t.to_string(), v.to_string()]),
                )?,
            ));
            let last = tr.deltas.last().expect("horizon + 1 slots");
            files.push(("per_list.csv".into(), per_list_csv(last)?));
            metrics.extend(device_metrics(last, point));
            metrics.push(("latency_us", point.latency(last)?.to_string()));
        }
        Mode::FixedPoint | Mode::Latency => {
            let fp = point.fixed_point()?;
            let h = content_distribution(&fp, &point.workload);
            if mode == Mode::FixedPoint {
                files.push((
                    "fixed_point.json".into(),
                    serde_json::to_vec_pretty(&fp.report(&point.workload))?,
                ));
                files.push(("per_list.csv".into(), per_list_csv(&h)?));
                if point.run.pi_csv {
                    let mut header = vec!["page".to_string()];
                    header.extend((0..=fp.h()).map(|i| format!("list_{i}")));
                    let header: Vec<&str> = header.iter().map(String::as_str).collect();
                    files.push((
                        "pi.csv".into(),
                        csv_bytes(
                            &header,
                            (0..fp.n()).map(|k| {
                                std::iter::once(k.to_string())
                                    .chain(fp.row(k).iter().map(|v| v.to_string()))
                                    .collect::<Vec<_>>()
                            }),
                        )?,
                    ));
                }
                metrics.push(("residual", fp.residual.to_string()));
                metrics.push(("iterations", fp.iterations.to_string()));
            }
            metrics.extend(device_metrics(&h, point));
            metrics.push(("latency_us", point.latency(&h)?.to_string()));
        }
        Mode::Oracle => {
            let cap = point.run.oracle_cap as u128;
            let closed = steady_state_closed_form(&point.arch, &point.workload, &point.geometry, cap)?;
            let reducible = matches!(point.arch, Architecture::Flat { alpha } if alpha == 0.0 || alpha == 1.0)
                && point.geometry.h_nvm() > 0
                && point.geometry.h_dram() > 0;
            let tv = if reducible {
                None
            } else {
                let options = PowerOptions {
                    state_cap: cap,
                    ..PowerOptions::default()
                };
                let chain = stationary_via_transition_matrix(&point.arch, &point.workload, &point.geometry, options)?;
                Some(closed.total_variation(&chain)?)
            };
            let h = content_distribution_exact(&closed, &point.workload, point.geometry.h())?;
            let json = serde_json::json!({
                "states": closed.states.iter().map(|s| &s.lists).collect::<Vec<_>>(),
                "probs": closed.probs,
                "H": h.h_values(),
                "total_variation_vs_chain": tv,
            });
            files.push(("oracle.json".into(), serde_json::to_vec_pretty(&json)?));
            files.push(("per_list.csv".into(), per_list_csv(&h)?));
            metrics.push(("states", closed.states.len().to_string()));
            metrics.extend(device_metrics(&h, point));
            metrics.push(("tv_closed_vs_chain", tv.map_or("NaN".into(), |v| v.to_string())));
        }
        Mode::Validate => {
            let r = validate_point(point)?;
            files.push(("validation.json".into(), serde_json::to_vec_pretty(&r)?));
            metrics.push(("max_list_deviation", r.max_list_deviation.to_string()));
            metrics.push(("max_page_deviation", r.max_page_deviation.to_string()));
            metrics.push(("latency_sim_us", r.latency_sim.to_string()));
            metrics.push(("latency_model_us", r.latency_model.to_string()));
            metrics.push(("latency_relative_error", r.latency_relative_error.to_string()));
            metrics.push(("oracle_z_max", r.oracle_z_max.map_or("NaN".into(), |v| v.to_string())));
        }
        Mode::Sweep => unreachable!("sweep resolves to a point mode"),
    }
    Ok(PointOutput { metrics, files })
}

fn describe(assignment: &[(String, ParamValue)]) -> String {
    if assignment.is_empty() {
        return "base".into();
    }
    assignment
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Evaluates every point of `spec` and writes the outputs under `out_dir`.
///
/// A single point writes its files straight into `out_dir`; a sweep writes
/// each point into `point_NNNN/`. `results.csv` and `manifest.json` always
/// go to `out_dir`. With `gnuplot` set a `plot.gp` script is added.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: impl AsRef<Path>, gnuplot: bool) -> Result<ExperimentSummary> {
    spec.validate()?;
    let mode = spec.point_mode()?;
    let points = spec.points()?;
    let resolved = points
        .iter()
        .map(|(a, s)| {
            s.resolve().map_err(|e| Error::AtPoint {
                point: describe(a),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.run.jobs)
        .build()
        .map_err(|e| Error::Config(format!("run.jobs: {e}")))?;
    let results = pool.install(|| {
        points
            .par_iter()
            .zip(&resolved)
            .map(|((a, _), p)| {
                eval_point(mode, p).map_err(|e| Error::AtPoint {
                    point: describe(a),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let single = points.len() == 1;
    let mut outputs = Vec::new();
    let mut manifest_points = Vec::new();
    for (index, (result, (assignment, _))) in results.iter().zip(&points).enumerate() {
        let dir = if single {
            String::new()
        } else {
            format!("point_{index:04}")
        };
        if !dir.is_empty() {
            std::fs::create_dir_all(out_dir.join(&dir))?;
        }
        for (name, bytes) in &result.files {
            let rel = if dir.is_empty() {
                name.clone()
            } else {
                format!("{dir}/{name}")
            };
            std::fs::write(out_dir.join(&rel), bytes)?;
            outputs.push(rel);
        }
        manifest_points.push(ManifestPoint {
            index,
            dir,
            params: assignment.iter().cloned().collect(),
        });
    }

    let mut columns = vec!["point".to_string()];
    columns.extend(spec.sweep.iter().map(|a| a.param.clone()));
    columns.extend(results[0].metrics.iter().map(|(k, _)| k.to_string()));
    let rows: Vec<Vec<String>> = results
        .iter()
        .zip(&points)
        .enumerate()
        .map(|(i, (r, (a, _)))| {
            let mut row = vec![i.to_string()];
            row.extend(a.iter().map(|(_, v)| v.to_string()));
            row.extend(r.metrics.iter().map(|(_, v)| v.clone()));
            row
        })
        .collect();
    let header: Vec<&str> = columns.iter().map(String::as_str).collect();
    std::fs::write(out_dir.join("results.csv"), csv_bytes(&header, &rows)?)?;
    outputs.push("results.csv".into());

    if gnuplot {
        std::fs::write(out_dir.join("plot.gp"), gnuplot_script(spec, mode, &columns))?;
        outputs.push("plot.gp".into());
    }

    let workload_probs = spec
        .workload
        .probs_file
        .as_ref()
        .map(|_| resolved[0].workload.probs().to_vec());
    let manifest = Manifest {
        tool: "hcache",
        version: env!("CARGO_PKG_VERSION"),
        mode: spec.mode.map_or("", |m| m.name()),
        point_mode: mode.name(),
        seeds: &spec.run.seeds,
        spec,
        workload_probs,
        points: manifest_points,
        outputs: &outputs,
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    outputs.push("manifest.json".into());

    Ok(ExperimentSummary {
        out_dir: out_dir.to_path_buf(),
        points: points.len(),
        outputs,
        columns,
        rows,
    })
}

fn gnuplot_script(spec: &ExperimentSpec, mode: Mode, columns: &[String]) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    s.push_str("# results.csv columns:\n");
    for (i, c) in columns.iter().enumerate() {
        s.push_str(&format!("#   {} {}\n", i + 1, c));
    }
    let first_metric = 2 + spec.sweep.len();
    if let Some(axis) = spec.sweep.first() {
        s.push_str(&format!("set xlabel '{}'\n", axis.param));
        for (i, c) in columns.iter().enumerate().skip(first_metric - 1) {
            s.push_str(&format!(
                "# plot 'results.csv' using 2:{} with linespoints title '{}'\n",
                i + 1,
                c
            ));
        }
        if let Some(lat) = columns.iter().position(|c| c.starts_with("latency")) {
            s.push_str(&format!("plot 'results.csv' using 2:{} with linespoints\n", lat + 1));
        }
    } else if matches!(mode, Mode::Simulate | Mode::Meanfield) {
        s.push_str("set xlabel 'time slot'\nset ylabel 'miss ratio'\n");
        s.push_str("plot 'transient.csv' using 1:2 with lines\n");
    } else {
        s.push_str("set xlabel 'list'\nset ylabel 'H'\n");
        s.push_str("plot 'per_list.csv' using 1:2 with linespoints\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(mode: Mode) -> ExperimentSpec {
        ExperimentSpec::from_toml_str(&format!(
            r#"
            mode = "{}"
            [workload]
            n = 50
            gamma = 0.8
            [cache]
            architecture = "layered"
            h_nvm = 2
            h_dram = 1
            m_nvm = 10
            m_dram = 5
            [run]
            seeds = [1, 2]
            steps = 20000
            window = 1000
            burn_in = 5000
            horizon = 100
            "#,
            mode.name()
        ))
        .unwrap()
    }

    #[test]
    fn parses_defaults_and_tables() {
        let spec = small_spec(Mode::Validate);
        assert_eq!(spec.workload.n, 50);
        assert_eq!(spec.cache.architecture, ArchKind::Layered);
        assert_eq!(spec.run.tol, 1e-10);
        assert_eq!(spec.timings.resolve().unwrap(), DeviceTimings::common());
        let p = spec.resolve().unwrap();
        assert_eq!(p.geometry.capacities(), &[5, 5, 5]);
    }

    #[test]
    fn rejects_unknown_fields_and_params() {
        assert!(matches!(
            ExperimentSpec::from_toml_str("[cache]\nwidth = 3\n"),
            Err(Error::Config(_))
        ));
        let mut spec = small_spec(Mode::Latency);
        spec.sweep.push(SweepAxis {
            param: "colour".into(),
            values: vec![ParamValue::Number(1.0)],
        });
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = small_spec(Mode::Simulate);
        spec.run.seeds.clear();
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = small_spec(Mode::Latency);
        spec.timings.preset = Some("fast".into());
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        assert!(ExperimentSpec::default().validate().is_err());
    }

    #[test]
    fn sweep_cross_product() {
        let spec = ExperimentSpec::from_toml_str(
            r#"
            mode = "sweep"
            [[sweep]]
            param = "alpha"
            values = [0.2, 0.5, 0.8]
            [[sweep]]
            param = "architecture"
            values = ["flat", "layered"]
            [[sweep]]
            param = "h_nvm"
            values = [1, 2]
            "#,
        )
        .unwrap();
        spec.validate().unwrap();
        let points = spec.points().unwrap();
        assert_eq!(points.len(), 12);
        assert_eq!(points[1].1.cache.architecture, ArchKind::Flat);
        assert_eq!(points[1].1.cache.h_nvm, 2);
        assert_eq!(points[2].1.cache.architecture, ArchKind::Layered);
        assert_eq!(points[11].1.cache.alpha, 0.8);
    }

    #[test]
    fn sweep_rejects_fractional_counts() {
        let mut spec = ExperimentSpec::default();
        assert!(spec.set_param("h_nvm", &ParamValue::Number(1.5)).is_err());
        assert!(spec.set_param("alpha", &ParamValue::Text("x".into())).is_err());
    }

    #[test]
    fn infeasible_point_reports_exit_code_4() {
        let mut spec = small_spec(Mode::Latency);
        spec.workload.n = 10;
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&spec, dir.path(), false).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn budget_form_allocates_pages() {
        let mut spec = small_spec(Mode::Latency);
        spec.workload.n = 1000;
        spec.cache.budget = Some(100.0);
        spec.cache.nvm_fraction = 0.5;
        let p = spec.resolve().unwrap();
        assert_eq!(p.geometry.m_dram(), 50);
        assert_eq!(p.geometry.m_nvm(), 200);
    }

    #[test]
    fn settling_time_examples() {
        assert_eq!(settling_time(&[1.0, 0.5, 0.2, 0.21, 0.2], 0.2, 0.1), Some(2));
        assert_eq!(settling_time(&[0.2, 0.2], 0.2, 0.05), Some(0));
        assert_eq!(settling_time(&[1.0, 0.9], 0.2, 0.05), None);
    }

    #[test]
    fn every_mode_writes_outputs() {
        for mode in [
            Mode::Simulate,
            Mode::Meanfield,
            Mode::FixedPoint,
            Mode::Latency,
            Mode::Validate,
        ] {
            let spec = small_spec(mode);
            let dir = tempfile::tempdir().unwrap();
            let summary = run_experiment(&spec, dir.path(), true).unwrap();
            assert_eq!(summary.rows.len(), 1);
            for f in &summary.outputs {
                assert!(dir.path().join(f).exists(), "{mode:?} missing {f}");
            }
        }
    }

    #[test]
    fn oracle_mode_on_tiny_instance() {
        let mut spec = small_spec(Mode::Oracle);
        spec.workload.n = 5;
        spec.cache.architecture = ArchKind::Flat;
        spec.cache.alpha = 0.5;
        spec.cache.h_nvm = 1;
        spec.cache.h_dram = 1;
        spec.cache.m_nvm = 2;
        spec.cache.m_dram = 1;
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&spec, dir.path(), false).unwrap();
        let tv: f64 = summary.rows[0].last().unwrap().parse().unwrap();
        assert!(tv < 1e-9);
        let json: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("oracle.json")).unwrap()).unwrap();
        assert_eq!(json["states"].as_array().unwrap().len(), 30);
    }
}
