//! Mean-field approximation of the list-based cache.
//!
//! Each page `k` is described by the probabilities `x[k][i]` of sitting in
//! list `i`. Every promotion edge `a -> b` of the architecture moves page `k`
//! up at rate `w p_k x[k][a]` and pushes it back down (as the random swap
//! partner of a page climbing out of `a`) at rate `w delta_a x[k][b] / m_b`,
//! where `delta_a = sum_j p_j x[j][a]` and `w` is the routing weight of the
//! edge (`alpha` / `1 - alpha` for the Flat miss edges, 1 otherwise).
//!
//! The fixed point has the product form
//! `pi[k][i] = p_k^ht(i) s_i / (1 + sum_j p_k^ht(j) s_j)` where the scalars
//! `s_1..s_h` are pinned by the capacity constraints `sum_k pi[k][i] = m_i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{heights, Architecture, CacheGeometry};
use crate::workload::{compensated_sum, PopularityDist};

/// Per-list hit probabilities `H_0..H_h`; `H_0` is the miss ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentDistribution {
    #[serde(rename = "H")]
    h: Vec<f64>,
}

impl ContentDistribution {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.len() < 2 {
            return Err(Error::InvalidArgument(
                "content distribution needs storage plus at least one list".into(),
            ));
        }
        if let Some(v) = h.iter().find(|v| !(-1e-12..=1.0 + 1e-12).contains(*v)) {
            return Err(Error::InvalidArgument(format!("hit probability {v} outside [0,1]")));
        }
        let total = compensated_sum(h.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "hit probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { h })
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h
    }

    /// Number of cache lists `h` (the vector holds `h + 1` entries).
    pub fn lists(&self) -> usize {
        self.h.len() - 1
    }

    pub fn miss_ratio(&self) -> f64 {
        self.h[0]
    }

    /// `(H_nvm, H_dram)`: hit probability summed over each device's lists.
    pub fn device_split(&self, h_nvm: usize) -> (f64, f64) {
        let nvm = self.h[1..=h_nvm].iter().sum();
        let dram = self.h[h_nvm + 1..].iter().sum();
        (nvm, dram)
    }
}

/// Occupancy probabilities `x[k][i]` for pages `0..n` and lists `0..=h`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    n: usize,
    lists: usize,
    x: Vec<f64>,
    /// Time slot of this state.
    pub t: usize,
}

impl MeanFieldState {
    /// Every page in storage.
    pub fn empty(n: usize, h: usize) -> Self {
        let lists = h + 1;
        let mut x = vec![0.0; n * lists];
        for k in 0..n {
            x[k * lists] = 1.0;
        }
        Self { n, lists, x, t: 0 }
    }

    /// Row-major `n x (h + 1)` matrix. Rows must be probability vectors.
    pub fn from_rows(n: usize, h: usize, x: Vec<f64>) -> Result<Self> {
        let lists = h + 1;
        if x.len() != n * lists {
            return Err(Error::DimensionMismatch {
                expected: n * lists,
                actual: x.len(),
            });
        }
        for (k, row) in x.chunks(lists).enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("row {k} has entries outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("row {k} sums to {s}")));
            }
        }
        Ok(Self { n, lists, x, t: 0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.lists - 1
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.x[k * self.lists + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.x[k * self.lists..(k + 1) * self.lists]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    /// `delta_i = sum_k p_k x[k][i]`.
    pub fn deltas(&self, workload: &PopularityDist) -> Vec<f64> {
        let mut d = vec![0.0; self.lists];
        for (row, &p) in self.x.chunks(self.lists).zip(workload.probs()) {
            for (di, xi) in d.iter_mut().zip(row) {
                *di += p * xi;
            }
        }
        d
    }

    /// Expected number of pages in each list.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.lists];
        for row in self.x.chunks(self.lists) {
            for (ci, xi) in c.iter_mut().zip(row) {
                *ci += xi;
            }
        }
        c
    }
}

/// Promotion edges of an architecture: `(from, to, weight)`.
fn edges(arch: &Architecture, geometry: &CacheGeometry) -> Vec<(usize, usize, f64)> {
    let h = geometry.h();
    let h_nvm = geometry.h_nvm();
    match *arch {
        Architecture::Layered => (0..h).map(|a| (a, a + 1, 1.0)).collect(),
        Architecture::Flat { alpha } => {
            let mut e = Vec::with_capacity(h);
            if h_nvm > 0 {
                e.push((0, 1, 1.0 - alpha));
                e.extend((1..h_nvm).map(|a| (a, a + 1, 1.0)));
            }
            if h > h_nvm {
                e.push((0, h_nvm + 1, alpha));
                e.extend((h_nvm + 1..h).map(|a| (a, a + 1, 1.0)));
            }
            e
        }
    }
}

fn check_shape(state: &MeanFieldState, workload: &PopularityDist, geometry: &CacheGeometry) -> Result<()> {
    if state.n != workload.n() {
        return Err(Error::DimensionMismatch {
            expected: workload.n(),
            actual: state.n,
        });
    }
    if state.h() != geometry.h() {
        return Err(Error::DimensionMismatch {
            expected: geometry.h() + 1,
            actual: state.lists,
        });
    }
    Ok(())
}

/// Time derivative of the occupancy matrix for either architecture.
/// Costs `O(n h)`: the list hit rates `delta` are computed once up front.
pub fn ode_rhs(
    state: &MeanFieldState,
    arch: &Architecture,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
) -> Result<Vec<f64>> {
    check_shape(state, workload, geometry)?;
    let mut out = vec![0.0; state.x.len()];
    rhs_into(
        state,
        &edges(arch, geometry),
        workload,
        geometry,
        &state.deltas(workload),
        &mut out,
    );
    Ok(out)
}

/// Flat-architecture derivative.
pub fn ode_rhs_flat(
    state: &MeanFieldState,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
    alpha: f64,
) -> Result<Vec<f64>> {
    ode_rhs(state, &Architecture::flat(alpha)?, workload, geometry)
}

/// Layered-architecture derivative.
pub fn ode_rhs_layered(
    state: &MeanFieldState,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
) -> Result<Vec<f64>> {
    ode_rhs(state, &Architecture::Layered, workload, geometry)
}

fn rhs_into(
    state: &MeanFieldState,
    edges: &[(usize, usize, f64)],
    workload: &PopularityDist,
    geometry: &CacheGeometry,
    delta: &[f64],
    out: &mut [f64],
) {
    let lists = state.lists;
    // Per edge: push-down rate per unit of occupancy in the target list.
    let down: Vec<f64> = edges
        .iter()
        .map(|&(a, b, w)| w * delta[a] / geometry.capacity(b) as f64)
        .collect();
    for ((row, d), &p) in state.x.chunks(lists).zip(out.chunks_mut(lists)).zip(workload.probs()) {
        d.fill(0.0);
        for (&(a, b, w), &dn) in edges.iter().zip(&down) {
            let flow = w * p * row[a] - dn * row[b];
            d[a] -= flow;
            d[b] += flow;
        }
    }
}

/// Integrator settings for [`integrate_transient`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientOptions {
    /// Euler sub-steps per time slot; 1 reproduces the unit-step update
    /// `x(t+1) = x(t) + x'(t)`.
    pub substeps: usize,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `deltas[t]` holds `delta_0(t)..delta_h(t)` for `t = 0..=horizon`.
    pub deltas: Vec<ContentDistribution>,
    pub final_state: MeanFieldState,
}

impl Trajectory {
    /// `delta_0(t)`, the predicted miss ratio of the request at slot `t`.
    pub fn miss_ratios(&self) -> Vec<f64> {
        self.deltas.iter().map(|d| d.miss_ratio()).collect()
    }
}

/// Forward-Euler integration of the occupancy ODEs from `x0` for `horizon`
/// slots.
pub fn integrate_transient(
    x0: &MeanFieldState,
    arch: &Architecture,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
    horizon: usize,
    options: TransientOptions,
) -> Result<Trajectory> {
    check_shape(x0, workload, geometry)?;
    geometry.check_architecture(arch)?;
    if options.substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be positive".into()));
    }
    let dt = 1.0 / options.substeps as f64;
    let edges = edges(arch, geometry);
    let mut state = x0.clone();
    let mut rate = vec![0.0; state.x.len()];
    let mut deltas = Vec::with_capacity(horizon + 1);
    let lists = state.lists;
    for slot in 0..horizon {
        for sub in 0..options.substeps {
            let delta = state.deltas(workload);
            if sub == 0 {
                deltas.push(ContentDistribution::new(delta.clone())?);
            }
            rhs_into(&state, &edges, workload, geometry, &delta, &mut rate);
            for (x, r) in state.x.iter_mut().zip(&rate) {
                *x += dt * r;
            }
            for (k, row) in state.x.chunks_mut(lists).enumerate() {
                let mut clamped = false;
                for (i, v) in row.iter_mut().enumerate() {
                    if !(-1e-6..=1.0 + 1e-6).contains(v) {
                        return Err(Error::Diverged {
                            slot,
                            page: k,
                            list: i,
                            value: *v,
                        });
                    }
                    if *v < 0.0 {
                        *v = 0.0;
                        clamped = true;
                    } else if *v > 1.0 {
                        *v = 1.0;
                        clamped = true;
                    }
                }
                if clamped {
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= s);
                }
            }
        }
        state.t += 1;
    }
    deltas.push(ContentDistribution::new(state.deltas(workload))?);
    Ok(Trajectory {
        deltas,
        final_state: state,
    })
}

/// Settings for [`solve_fixed_point`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    /// Relative capacity residual: stop once `|D_i - m_i| <= tol * m_i` for
    /// every list.
    pub tol: f64,
    /// Cap on outer iterations (Gauss-Seidel sweeps plus Newton steps).
    pub max_iterations: usize,
    /// Switch from Gauss-Seidel sweeps to damped Newton steps once the first
    /// sweep has produced a finite iterate.
    pub newton: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 100_000,
            newton: true,
        }
    }
}

impl FixedPointOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Solution of the capacity constraints together with the occupancy matrix.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    n: usize,
    lists: usize,
    h_nvm: usize,
    pi: Vec<f64>,
    log_s: Vec<f64>,
    /// Largest relative capacity deviation `|D_i - m_i| / m_i`.
    pub residual: f64,
    pub iterations: usize,
}

impl FixedPoint {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.lists - 1
    }

    pub fn h_nvm(&self) -> usize {
        self.h_nvm
    }

    pub fn pi(&self, k: usize, i: usize) -> f64 {
        self.pi[k * self.lists + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.pi[k * self.lists..(k + 1) * self.lists]
    }

    /// `ln s_1..ln s_h`.
    pub fn log_s(&self) -> &[f64] {
        &self.log_s
    }

    /// `s_1..s_h`; entries overflow to infinity for extreme workloads, see
    /// [`Self::log_s`].
    pub fn s(&self) -> Vec<f64> {
        self.log_s.iter().map(|l| l.exp()).collect()
    }

    /// The occupancy matrix as a mean-field state.
    pub fn state(&self) -> MeanFieldState {
        MeanFieldState {
            n: self.n,
            lists: self.lists,
            x: self.pi.clone(),
            t: 0,
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.lists];
        for row in self.pi.chunks(self.lists) {
            for (ci, v) in c.iter_mut().zip(row) {
                *ci += v;
            }
        }
        c
    }

    /// Per page, the probability of being cached in NVM and in DRAM.
    pub fn device_occupancy(&self) -> Vec<(f64, f64)> {
        self.pi
            .chunks(self.lists)
            .map(|row| {
                let nvm: f64 = row[1..=self.h_nvm].iter().sum();
                let dram: f64 = row[self.h_nvm + 1..].iter().sum();
                (nvm, dram)
            })
            .collect()
    }

    /// JSON-ready summary: `s`, `H`, `residual` and per-device aggregates.
    pub fn report(&self, workload: &PopularityDist) -> FixedPointReport {
        let content = content_distribution(self, workload);
        let (hit_nvm, hit_dram) = content.device_split(self.h_nvm);
        let cols = self.column_sums();
        FixedPointReport {
            s: self.s(),
            log_s: self.log_s.clone(),
            h: content.h_values().to_vec(),
            residual: self.residual,
            iterations: self.iterations,
            pi_summary: PiSummary {
                miss_ratio: content.miss_ratio(),
                hit_nvm,
                hit_dram,
                pages_nvm: cols[1..=self.h_nvm].iter().sum(),
                pages_dram: cols[self.h_nvm + 1..].iter().sum(),
                pages_per_list: cols[1..].to_vec(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub s: Vec<f64>,
    pub log_s: Vec<f64>,
    #[serde(rename = "H")]
    pub h: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub pi_summary: PiSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiSummary {
    pub miss_ratio: f64,
    pub hit_nvm: f64,
    pub hit_dram: f64,
    pub pages_nvm: f64,
    pub pages_dram: f64,
    pub pages_per_list: Vec<f64>,
}

/// `H_i = sum_k p_k pi[k][i]`.
pub fn content_distribution(fp: &FixedPoint, workload: &PopularityDist) -> ContentDistribution {
    let mut h = vec![0.0; fp.lists];
    for (row, &p) in fp.pi.chunks(fp.lists).zip(workload.probs()) {
        for (hi, v) in h.iter_mut().zip(row) {
            *hi += p * v;
        }
    }
    ContentDistribution { h }
}

/// Work arrays for the fixed-point iteration. Everything is kept in log
/// space: `t[k][i] = ht(i) ln p_k + ln s_i` and `lse[k] = ln(1 + sum_i e^t)`,
/// so `pi[k][i] = exp(t[k][i] - lse[k])`.
struct Solver<'a> {
    log_p: Vec<f64>,
    heights: Vec<f64>,
    capacities: Vec<f64>,
    log_s: Vec<f64>,
    lse: Vec<f64>,
    tol: f64,
    _workload: &'a PopularityDist,
}

impl<'a> Solver<'a> {
    fn new(arch: &Architecture, workload: &'a PopularityDist, geometry: &CacheGeometry, tol: f64) -> Self {
        let h = geometry.h();
        Self {
            log_p: workload.probs().iter().map(|p| p.ln()).collect(),
            heights: heights(arch, geometry)[1..].iter().map(|&x| x as f64).collect(),
            capacities: geometry.capacities().iter().map(|&m| m as f64).collect(),
            log_s: vec![f64::NEG_INFINITY; h],
            lse: vec![0.0; workload.n()],
            tol,
            _workload: workload,
        }
    }

    fn h(&self) -> usize {
        self.log_s.len()
    }

    fn term(&self, k: usize, i: usize) -> f64 {
        if self.log_s[i] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.heights[i] * self.log_p[k] + self.log_s[i]
        }
    }

    /// `ln(1 + sum_{i not in skip} e^{t[k][i]})`.
    fn log_denominator(&self, k: usize, skip: Option<usize>) -> f64 {
        let mut max = 0.0_f64;
        for i in 0..self.h() {
            if Some(i) != skip {
                max = max.max(self.term(k, i));
            }
        }
        let mut sum = (-max).exp();
        for i in 0..self.h() {
            if Some(i) != skip {
                sum += (self.term(k, i) - max).exp();
            }
        }
        max + sum.ln()
    }

    fn refresh_lse(&mut self) {
        self.lse = (0..self.log_p.len()).map(|k| self.log_denominator(k, None)).collect();
    }

    /// `D_i` for every list, from the cached `lse`.
    fn column_sums(&self) -> Vec<f64> {
        (0..self.h())
            .map(|i| compensated_sum((0..self.log_p.len()).map(|k| (self.term(k, i) - self.lse[k]).exp())))
            .collect()
    }

    fn residual(&self, cols: &[f64]) -> f64 {
        cols.iter()
            .zip(&self.capacities)
            .map(|(d, m)| (d - m).abs() / m)
            .fold(0.0, f64::max)
    }

    /// One Gauss-Seidel sweep: each `s_i` in turn is replaced by the unique
    /// root of `D_i(s with s_i = y) = m_i`.
    fn sweep(&mut self) -> Result<()> {
        self.refresh_lse();
        let n = self.log_p.len();
        let mut log_rest = vec![0.0; n];
        for i in 0..self.h() {
            for (k, rest) in log_rest.iter_mut().enumerate() {
                let t = self.term(k, i);
                let share = (t - self.lse[k]).exp();
                *rest = if share < 0.5 {
                    self.lse[k] + (-share).ln_1p()
                } else {
                    self.log_denominator(k, Some(i))
                };
            }
            let y = self.solve_one(i, &log_rest)?;
            self.log_s[i] = y;
            for (k, rest) in log_rest.iter().enumerate() {
                let t = self.term(k, i);
                self.lse[k] = log_add_exp(*rest, t);
            }
        }
        Ok(())
    }

    /// Solves `sum_k sigmoid(ht_i ln p_k + y - rest_k) = m_i` for `y` by
    /// bracketed Newton with bisection fallback.
    fn solve_one(&self, i: usize, log_rest: &[f64]) -> Result<f64> {
        let target = self.capacities[i];
        let base: Vec<f64> = self
            .log_p
            .iter()
            .zip(log_rest)
            .map(|(lp, r)| self.heights[i] * lp - r)
            .collect();
        let eval = |y: f64| -> (f64, f64) {
            let mut d = 0.0;
            let mut c = 0.0;
            let mut slope = 0.0;
            for b in &base {
                let sig = sigmoid(b + y);
                // Neumaier step, inlined for speed.
                let t = d + sig;
                if d >= sig {
                    c += (d - t) + sig;
                } else {
                    c += (sig - t) + d;
                }
                d = t;
                slope += sig * (1.0 - sig);
            }
            (d + c - target, slope)
        };
        let goal = self.tol * target / 10.0;
        let mut y = if self.log_s[i].is_finite() {
            self.log_s[i]
        } else {
            // Centre the logistic sum on the median page.
            let mut sorted = base.clone();
            let mid = sorted.len() / 2;
            sorted.select_nth_unstable_by(mid, f64::total_cmp);
            -sorted[mid]
        };
        let (mut f, mut slope) = eval(y);
        if f.abs() <= goal {
            return Ok(y);
        }
        // Expand a bracket [lo, hi] with f(lo) < 0 < f(hi).
        let (mut lo, mut hi);
        let mut step = 1.0;
        if f < 0.0 {
            lo = y;
            hi = y + step;
            while eval(hi).0 < 0.0 {
                lo = hi;
                step *= 2.0;
                hi += step;
                if !hi.is_finite() {
                    return Err(Error::NoConvergence {
                        iterations: 0,
                        residual: f.abs() / target,
                    });
                }
            }
        } else {
            hi = y;
            lo = y - step;
            while eval(lo).0 > 0.0 {
                hi = lo;
                step *= 2.0;
                lo -= step;
                if !lo.is_finite() {
                    return Err(Error::NoConvergence {
                        iterations: 0,
                        residual: f.abs() / target,
                    });
                }
            }
        }
        for _ in 0..500 {
            let newton = y - f / slope;
            y = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            (f, slope) = eval(y);
            if f.abs() <= goal {
                return Ok(y);
            }
            if f < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
                // The root is pinned to the last few ulps of y.
                return Ok(y);
            }
        }
        Ok(y)
    }

    /// One damped Newton step on the convex potential
    /// `sum_k lse_k(y) - sum_i m_i y_i`, whose gradient is `D - m`.
    /// Returns `false` if no step along the Newton direction made progress.
    fn newton_step(&mut self, cols: &[f64]) -> bool {
        let h = self.h();
        let n = self.log_p.len();
        let mut hess = DMatrix::<f64>::zeros(h, h);
        let mut pi = vec![0.0; h];
        for k in 0..n {
            for (i, v) in pi.iter_mut().enumerate() {
                *v = (self.term(k, i) - self.lse[k]).exp();
            }
            for a in 0..h {
                if pi[a] == 0.0 {
                    continue;
                }
                hess[(a, a)] += pi[a];
                for b in 0..h {
                    hess[(a, b)] -= pi[a] * pi[b];
                }
            }
        }
        let grad = DVector::from_iterator(h, cols.iter().zip(&self.capacities).map(|(d, m)| d - m));
        let Some(dir) = hess.lu().solve(&(-&grad)) else {
            return false;
        };
        let potential = |s: &Self| -> f64 {
            compensated_sum(s.lse.iter().copied()) - s.log_s.iter().zip(&s.capacities).map(|(y, m)| y * m).sum::<f64>()
        };
        let before_res = self.residual(cols);
        let before_pot = potential(self);
        let saved_s = self.log_s.clone();
        let saved_lse = self.lse.clone();
        let mut scale = 1.0;
        for _ in 0..40 {
            for (i, y) in self.log_s.iter_mut().enumerate() {
                *y = saved_s[i] + scale * dir[i];
            }
            self.refresh_lse();
            let res = self.residual(&self.column_sums());
            if res < before_res || (res <= before_res && potential(self) < before_pot) {
                return true;
            }
            scale *= 0.5;
        }
        self.log_s = saved_s;
        self.lse = saved_lse;
        false
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Solves the capacity constraints starting from `s = 0`.
///
/// Each outer Gauss-Seidel sweep replaces `s_i` by the root of
/// `D_i(s) = m_i`. Because `D_i` is increasing in `s_i` and decreasing in the
/// other entries the sweeps increase monotonically to the unique solution.
/// With [`FixedPointOptions::newton`] set, damped Newton steps take over after
/// the first sweep and sweeps resume whenever Newton stalls.
pub fn solve_fixed_point(
    arch: &Architecture,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
    options: FixedPointOptions,
) -> Result<FixedPoint> {
    geometry.check_workload(workload.n())?;
    geometry.check_architecture(arch)?;
    if options.tol.is_nan() || options.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            options.tol
        )));
    }
    let mut solver = Solver::new(arch, workload, geometry, options.tol);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut use_newton = false;
    while iterations < options.max_iterations {
        iterations += 1;
        if use_newton {
            let cols = solver.column_sums();
            if !solver.newton_step(&cols) {
                use_newton = false;
                solver.sweep()?;
            }
        } else {
            solver.sweep()?;
            use_newton = options.newton;
        }
        solver.refresh_lse();
        let cols = solver.column_sums();
        residual = solver.residual(&cols);
        if residual <= options.tol {
            break;
        }
        if residual >= best && use_newton {
            // Newton is no longer making progress; fall back to sweeps.
            use_newton = false;
        }
        best = best.min(residual);
    }
    if residual > options.tol {
        return Err(Error::NoConvergence {
            iterations,
            residual: best.min(residual),
        });
    }
    let lists = geometry.h() + 1;
    let n = workload.n();
    let mut pi = vec![0.0; n * lists];
    for (k, row) in pi.chunks_mut(lists).enumerate() {
        row[0] = (-solver.lse[k]).exp();
        for i in 0..geometry.h() {
            row[i + 1] = (solver.term(k, i) - solver.lse[k]).exp();
        }
    }
    Ok(FixedPoint {
        n,
        lists,
        h_nvm: geometry.h_nvm(),
        pi,
        log_s: solver.log_s,
        residual,
        iterations,
    })
}
