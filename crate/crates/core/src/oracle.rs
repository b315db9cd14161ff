//! Exact Markov chain of the list replacement algorithm on tiny instances.
//!
//! Slot positions inside a list are exchangeable, so the chain is tracked on
//! set-valued states: which pages sit in which list. The stationary law is
//! computed twice, once from the product form and once by iterating the
//! one-step transition matrix built directly from the replacement rules.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::meanfield::ContentDistribution;
use crate::model::{heights, Architecture, CacheGeometry};
use crate::workload::PopularityDist;

/// Default bound on the number of enumerated states.
pub const DEFAULT_STATE_CAP: u128 = 2_000_000;

/// A full cache: `lists[i - 1]` holds the sorted page ids in list `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ExactState {
    pub lists: Vec<Vec<u32>>,
}

impl ExactState {
    /// List of every page (0 for storage).
    fn assignment(&self, n: usize) -> Vec<u8> {
        let mut a = vec![0u8; n];
        for (i, list) in self.lists.iter().enumerate() {
            for &k in list {
                a[k as usize] = (i + 1) as u8;
            }
        }
        a
    }
}

/// `n! / ((n - m)! prod m_i!)`, or `None` on overflow.
pub fn state_count(n: usize, capacities: &[usize]) -> Option<u128> {
    let mut remaining = n as u128;
    let mut total: u128 = 1;
    for &m in capacities {
        total = total.checked_mul(binomial(remaining, m as u128)?)?;
        remaining = remaining.checked_sub(m as u128)?;
    }
    Some(total)
}

fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.checked_mul(n - i)? / (i + 1);
    }
    Some(r)
}

/// All states with list `i` holding exactly `capacities[i - 1]` distinct
/// pages, in lexicographic order of `(c_1, c_2, ..., c_h)`.
pub fn enumerate_states(n: usize, capacities: &[usize], cap: u128) -> Result<Vec<ExactState>> {
    if capacities.iter().sum::<usize>() > n {
        return Err(Error::Infeasible(format!(
            "{} slots for {n} pages",
            capacities.iter().sum::<usize>()
        )));
    }
    if capacities.len() > u8::MAX as usize {
        return Err(Error::InvalidGeometry("too many lists for the exact oracle".into()));
    }
    let count = state_count(n, capacities).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::StateSpaceTooLarge {
            cardinality: count,
            cap,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut used = vec![false; n];
    let mut current = Vec::with_capacity(capacities.len());
    fill_lists(n, capacities, &mut used, &mut current, &mut out);
    Ok(out)
}

fn fill_lists(
    n: usize,
    capacities: &[usize],
    used: &mut Vec<bool>,
    current: &mut Vec<Vec<u32>>,
    out: &mut Vec<ExactState>,
) {
    let Some(&size) = capacities.get(current.len()) else {
        out.push(ExactState { lists: current.clone() });
        return;
    };
    let free: Vec<u32> = (0..n as u32).filter(|&k| !used[k as usize]).collect();
    let mut combo = Vec::with_capacity(size);
    choose(&free, size, 0, &mut combo, &mut |set| {
        for &k in set {
            used[k as usize] = true;
        }
        current.push(set.to_vec());
        fill_lists(n, capacities, used, current, out);
        current.pop();
        for &k in set {
            used[k as usize] = false;
        }
    });
}

fn choose(pool: &[u32], size: usize, start: usize, combo: &mut Vec<u32>, f: &mut dyn FnMut(&[u32])) {
    if combo.len() == size {
        f(combo);
        return;
    }
    let need = size - combo.len();
    for idx in start..=pool.len().saturating_sub(need) {
        if pool.len() < need {
            break;
        }
        combo.push(pool[idx]);
        choose(pool, size, idx + 1, combo, f);
        combo.pop();
    }
}

/// A probability for every enumerated state.
#[derive(Debug, Clone, Serialize)]
pub struct Stationary {
    pub states: Vec<ExactState>,
    pub probs: Vec<f64>,
}

impl Stationary {
    pub fn total_variation(&self, other: &Stationary) -> Result<f64> {
        if self.states != other.states {
            return Err(Error::InvalidArgument(
                "stationary vectors over different state spaces".into(),
            ));
        }
        Ok(0.5
            * self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }
}

fn prepare(
    arch: &Architecture,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
    cap: u128,
) -> Result<Vec<ExactState>> {
    geometry.check_workload(workload.n())?;
    geometry.check_architecture(arch)?;
    enumerate_states(workload.n(), geometry.capacities(), cap)
}

/// Product-form stationary law: the weight of a state is
/// `prod_i (prod_{j in c_i} p_j)^ht(i)`, normalized over the state space.
pub fn steady_state_closed_form(
    arch: &Architecture,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
    cap: u128,
) -> Result<Stationary> {
    let states = prepare(arch, workload, geometry, cap)?;
    let ht = heights(arch, geometry);
    let log_p: Vec<f64> = workload.probs().iter().map(|p| p.ln()).collect();
    let log_w: Vec<f64> = states
        .iter()
        .map(|s| {
            s.lists
                .iter()
                .enumerate()
                .map(|(i, list)| ht[i + 1] as f64 * list.iter().map(|&k| log_p[k as usize]).sum::<f64>())
                .sum()
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(Stationary {
        states,
        probs: w.into_iter().map(|v| v / z).collect(),
    })
}

/// Settings for the power iteration in [`stationary_via_transition_matrix`].
#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    /// Stop once `||x P - x||_1` falls below this.
    pub tol: f64,
    pub max_iterations: usize,
    pub state_cap: u128,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iterations: 2_000_000,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

/// Sparse one-step transition matrix, one row per state.
pub fn transition_matrix(
    arch: &Architecture,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
    states: &[ExactState],
) -> Vec<Vec<(usize, f64)>> {
    let n = workload.n();
    let index: HashMap<Vec<u8>, usize> = states.iter().enumerate().map(|(i, s)| (s.assignment(n), i)).collect();
    let entry_lists: Vec<(usize, f64)> = match *arch {
        Architecture::Layered => vec![(1, 1.0)],
        Architecture::Flat { alpha } => [(1, 1.0 - alpha), (geometry.h_nvm() + 1, alpha)]
            .into_iter()
            .filter(|&(i, w)| w > 0.0 && i >= 1 && i <= geometry.h())
            .collect(),
    };
    states
        .par_iter()
        .enumerate()
        .map(|(from, state)| {
            let a = state.assignment(n);
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut stay = 0.0;
            let mut next = a.clone();
            for k in 0..n {
                let p = workload.prob(k);
                let list = a[k] as usize;
                if list == 0 {
                    for &(target, w) in &entry_lists {
                        let m = geometry.capacity(target) as f64;
                        for &u in &state.lists[target - 1] {
                            next[k] = target as u8;
                            next[u as usize] = 0;
                            row.push((index[&next], p * w / m));
                            next[k] = 0;
                            next[u as usize] = target as u8;
                        }
                    }
                } else if geometry.is_top(arch, list) {
                    stay += p;
                } else {
                    let up = list + 1;
                    let m = geometry.capacity(up) as f64;
                    for &v in &state.lists[up - 1] {
                        next[k] = up as u8;
                        next[v as usize] = list as u8;
                        row.push((index[&next], p / m));
                        next[k] = list as u8;
                        next[v as usize] = up as u8;
                    }
                }
            }
            if stay > 0.0 {
                row.push((from, stay));
            }
            row
        })
        .collect()
}

/// Stationary law from power iteration on the transition matrix.
///
/// Iterates the lazy chain `(I + P) / 2`, which has the same stationary law
/// and is aperiodic by construction. A Flat cache with `alpha` at 0 or 1 and
/// both devices present is reducible (one device never receives pages) and is
/// rejected.
pub fn stationary_via_transition_matrix(
    arch: &Architecture,
    workload: &PopularityDist,
    geometry: &CacheGeometry,
    options: PowerOptions,
) -> Result<Stationary> {
    if let Architecture::Flat { alpha } = *arch {
        if geometry.h_nvm() > 0 && geometry.h_dram() > 0 && (alpha == 0.0 || alpha == 1.0) {
            return Err(Error::InvalidArgument(
                "flat chain with alpha in {0, 1} is reducible; pick 0 < alpha < 1".into(),
            ));
        }
    }
    let states = prepare(arch, workload, geometry, options.state_cap)?;
    let rows = transition_matrix(arch, workload, geometry, &states);
    let size = states.len();
    let mut x = vec![1.0 / size as f64; size];
    let mut y = vec![0.0; size];
    let mut residual = f64::INFINITY;
    for _ in 0..options.max_iterations {
        y.fill(0.0);
        for (from, row) in rows.iter().enumerate() {
            let mass = x[from];
            for &(to, p) in row {
                y[to] += mass * p;
            }
        }
        residual = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        if residual <= options.tol {
            let z: f64 = y.iter().sum();
            return Ok(Stationary {
                states,
                probs: y.into_iter().map(|v| v / z).collect(),
            });
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = 0.5 * (*a + b);
        }
    }
    Err(Error::NoConvergence {
        iterations: options.max_iterations,
        residual,
    })
}

/// Exact per-list hit probabilities of a stationary law.
pub fn content_distribution_exact(
    stationary: &Stationary,
    workload: &PopularityDist,
    h: usize,
) -> Result<ContentDistribution> {
    let mut out = vec![0.0; h + 1];
    for (state, &pi) in stationary.states.iter().zip(&stationary.probs) {
        if state.lists.len() != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                actual: state.lists.len(),
            });
        }
        let mut cached = 0.0;
        for (i, list) in state.lists.iter().enumerate() {
            let mass: f64 = list.iter().map(|&k| workload.prob(k as usize)).sum();
            out[i + 1] += pi * mass;
            cached += mass;
        }
        out[0] += pi * (1.0 - cached);
    }
    ContentDistribution::new(out)
}
