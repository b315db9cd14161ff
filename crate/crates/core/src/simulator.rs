//! Discrete-time simulation of the randomized list replacement algorithm.
//!
//! One request arrives per time slot. Each request draws from the random
//! source in a fixed order: the page, then (Flat misses only) the device coin,
//! then the uniform slot of the list the page is written or promoted into.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::ContentDistribution;
use crate::model::{Architecture, CacheGeometry, Device};
use crate::workload::{seeded_rng, PopularityDist, SimRng};

const EMPTY: u32 = u32::MAX;

/// What a single request did to the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// The page was not cached and was written into list `0`.
    MissToList(usize),
    /// Hit in a top list; nothing moved.
    HitStay(usize),
    /// Hit in list `from`; the page swapped with a slot of list `from + 1`.
    HitPromote { from: usize },
}

impl Event {
    /// List the request was served from (0 for a miss).
    pub fn served_from(&self) -> usize {
        match *self {
            Event::MissToList(_) => 0,
            Event::HitStay(i) => i,
            Event::HitPromote { from } => from,
        }
    }
}

/// Slot-level occupancy of every list plus a reverse index by page.
#[derive(Debug, Clone)]
pub struct CacheState {
    /// `slots[i - 1]` holds the `m_i` slots of list `i`.
    slots: Vec<Vec<u32>>,
    /// `(list, slot)` for every page; list 0 means not cached.
    residency: Vec<(u32, u32)>,
    time: u64,
}

impl CacheState {
    /// All-empty cache for `n` pages.
    pub fn empty(geometry: &CacheGeometry, n: usize) -> Self {
        Self {
            slots: geometry.capacities().iter().map(|&m| vec![EMPTY; m]).collect(),
            residency: vec![(0, 0); n],
            time: 0,
        }
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// List holding `page`, 0 if it is in storage only.
    pub fn list_of(&self, page: usize) -> usize {
        self.residency[page].0 as usize
    }

    /// Contents of list `i` (1-based); `None` marks an empty slot.
    pub fn list(&self, i: usize) -> impl Iterator<Item = Option<usize>> + '_ {
        self.slots[i - 1].iter().map(|&s| (s != EMPTY).then_some(s as usize))
    }

    /// Processes one request for `page`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        page: usize,
        arch: &Architecture,
        geometry: &CacheGeometry,
        rng: &mut R,
    ) -> Event {
        self.time += 1;
        let (list, slot) = self.residency[page];
        let list = list as usize;
        if list == 0 {
            let target = match *arch {
                Architecture::Flat { alpha } => {
                    if rng.gen::<f64>() < alpha {
                        geometry.h_nvm() + 1
                    } else {
                        1
                    }
                }
                Architecture::Layered => 1,
            };
            let v = rng.gen_range(0..geometry.capacity(target));
            let victim = std::mem::replace(&mut self.slots[target - 1][v], page as u32);
            if victim != EMPTY {
                self.residency[victim as usize] = (0, 0);
            }
            self.residency[page] = (target as u32, v as u32);
            return Event::MissToList(target);
        }
        if geometry.is_top(arch, list) {
            return Event::HitStay(list);
        }
        let up = list + 1;
        let v = rng.gen_range(0..geometry.capacity(up));
        let partner = std::mem::replace(&mut self.slots[up - 1][v], page as u32);
        self.slots[list - 1][slot as usize] = partner;
        if partner != EMPTY {
            self.residency[partner as usize] = (list as u32, slot);
        }
        self.residency[page] = (up as u32, v as u32);
        Event::HitPromote { from: list }
    }

    /// Verifies that slots and the residency index agree.
    pub fn check_invariants(&self, geometry: &CacheGeometry) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("corrupt cache state: {msg}")));
        let mut seen = vec![false; self.residency.len()];
        for (idx, list) in self.slots.iter().enumerate() {
            let i = idx + 1;
            if list.len() != geometry.capacity(i) {
                return bad(format!("list {i} has {} slots", list.len()));
            }
            for (v, &s) in list.iter().enumerate() {
                if s == EMPTY {
                    continue;
                }
                let k = s as usize;
                if std::mem::replace(&mut seen[k], true) {
                    return bad(format!("page {k} cached twice"));
                }
                if self.residency[k] != (i as u32, v as u32) {
                    return bad(format!("page {k} in ({i},{v}) indexed at {:?}", self.residency[k]));
                }
            }
        }
        for (k, &(list, _)) in self.residency.iter().enumerate() {
            if list != 0 && !seen[k] {
                return bad(format!("page {k} indexed in list {list} but not stored"));
            }
        }
        Ok(())
    }
}

/// Run length and measurement windows of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: u64,
    /// Requests per transient window.
    pub window: u64,
    /// Requests excluded from the per-page counters.
    #[serde(default)]
    pub burn_in: u64,
}

impl SimConfig {
    pub fn new(steps: u64, window: u64) -> Self {
        Self {
            steps,
            window,
            burn_in: 0,
        }
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.window == 0 {
            return Err(Error::InvalidArgument("steps and window must be positive".into()));
        }
        if self.window > self.steps {
            return Err(Error::InvalidArgument(format!(
                "window {} exceeds run length {}",
                self.window, self.steps
            )));
        }
        if self.burn_in >= self.steps {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be shorter than the run ({})",
                self.burn_in, self.steps
            )));
        }
        Ok(())
    }
}

/// Counters collected by [`run`]. Counts from several seeds can be pooled
/// with [`SimMetrics::merge`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub config: SimConfig,
    pub h_nvm: usize,
    /// `[nvm, dram, miss]` outcomes of requests for each page after burn-in.
    pub per_page: Vec<[u64; 3]>,
    /// `window_hits[w][i]`: requests in window `w` served from list `i`.
    pub window_hits: Vec<Vec<u64>>,
    /// Number of runs pooled into these counters.
    pub runs: u64,
}

impl SimMetrics {
    pub fn h(&self) -> usize {
        self.window_hits.first().map_or(0, |w| w.len() - 1)
    }

    /// Requests simulated, summed over pooled runs.
    pub fn total_requests(&self) -> u64 {
        self.config.steps * self.runs
    }

    fn window_len(&self, w: usize) -> u64 {
        let start = w as u64 * self.config.window;
        self.config.window.min(self.config.steps - start)
    }

    /// `(window start, mean miss indicator)` for every window.
    pub fn windowed_miss(&self) -> Vec<(u64, f64)> {
        self.window_hits
            .iter()
            .enumerate()
            .map(|(w, hits)| {
                let len = self.window_len(w) * self.runs;
                (w as u64 * self.config.window, hits[0] as f64 / len as f64)
            })
            .collect()
    }

    /// Requests served from each list over the whole run.
    pub fn per_list_hits(&self) -> Vec<u64> {
        let mut total = vec![0; self.h() + 1];
        for w in &self.window_hits {
            for (t, c) in total.iter_mut().zip(w) {
                *t += c;
            }
        }
        total
    }

    /// Per page, the fraction of its requests served by NVM, DRAM and
    /// storage. Pages never requested after burn-in get NaN.
    pub fn per_page_device_probs(&self) -> Vec<[f64; 3]> {
        self.per_page
            .iter()
            .map(|c| {
                let total = (c[0] + c[1] + c[2]) as f64;
                if total == 0.0 {
                    [f64::NAN; 3]
                } else {
                    [c[0] as f64 / total, c[1] as f64 / total, c[2] as f64 / total]
                }
            })
            .collect()
    }

    /// Pools counters from runs with identical configuration.
    pub fn merge(runs: &[SimMetrics]) -> Result<SimMetrics> {
        let (first, rest) = runs
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("no runs to merge".into()))?;
        let mut out = first.clone();
        for r in rest {
            if r.config != out.config
                || r.per_page.len() != out.per_page.len()
                || r.h() != out.h()
                || r.h_nvm != out.h_nvm
            {
                return Err(Error::InvalidArgument("cannot merge runs of different shapes".into()));
            }
            for (a, b) in out.per_page.iter_mut().zip(&r.per_page) {
                for j in 0..3 {
                    a[j] += b[j];
                }
            }
            for (a, b) in out.window_hits.iter_mut().zip(&r.window_hits) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            out.runs += r.runs;
        }
        Ok(out)
    }
}

/// Simulates `config.steps` requests from the empty cache.
pub fn run(
    workload: &PopularityDist,
    arch: &Architecture,
    geometry: &CacheGeometry,
    config: &SimConfig,
    seed: u64,
) -> Result<SimMetrics> {
    config.validate()?;
    geometry.check_workload(workload.n())?;
    geometry.check_architecture(arch)?;
    let mut rng: SimRng = seeded_rng(seed);
    let mut state = CacheState::empty(geometry, workload.n());
    let h = geometry.h();
    let windows = config.steps.div_ceil(config.window) as usize;
    let mut window_hits = vec![vec![0u64; h + 1]; windows];
    let mut per_page = vec![[0u64; 3]; workload.n()];
    for t in 0..config.steps {
        let page = workload.sample(&mut rng);
        let list = state.step(page, arch, geometry, &mut rng).served_from();
        window_hits[(t / config.window) as usize][list] += 1;
        if t >= config.burn_in {
            let slot = match geometry.device_of(list).expect("list in range") {
                Device::Nvm => 0,
                Device::Dram => 1,
                Device::Storage => 2,
            };
            per_page[page][slot] += 1;
        }
    }
    Ok(SimMetrics {
        config: *config,
        h_nvm: geometry.h_nvm(),
        per_page,
        window_hits,
        runs: 1,
    })
}

/// Runs one simulation per seed in parallel and pools the counters.
pub fn run_seeds(
    workload: &PopularityDist,
    arch: &Architecture,
    geometry: &CacheGeometry,
    config: &SimConfig,
    seeds: &[u64],
) -> Result<SimMetrics> {
    let runs = seeds
        .par_iter()
        .map(|&seed| run(workload, arch, geometry, config, seed))
        .collect::<Result<Vec<_>>>()?;
    SimMetrics::merge(&runs)
}

/// Empirical per-list hit probabilities from the windows starting at or
/// before `burn_in` onward.
///
/// Counters are kept per window, so `burn_in` is rounded down to the start of
/// the window containing it.
pub fn steady_hit_distribution(metrics: &SimMetrics, burn_in: u64) -> Result<ContentDistribution> {
    if burn_in >= metrics.config.steps {
        return Err(Error::InvalidArgument(format!(
            "burn-in {burn_in} must be shorter than the run ({})",
            metrics.config.steps
        )));
    }
    let first = (burn_in / metrics.config.window) as usize;
    let mut counts = vec![0u64; metrics.h() + 1];
    for w in &metrics.window_hits[first..] {
        for (c, x) in counts.iter_mut().zip(w) {
            *c += x;
        }
    }
    let total: u64 = counts.iter().sum();
    ContentDistribution::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
