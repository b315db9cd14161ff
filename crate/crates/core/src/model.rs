//! Cache geometry, architectures and the mapping from lists to devices.
//!
//! Lists are indexed `0..=h`. List 0 is the storage layer, lists `1..=h_N`
//! make up the NVM cache and lists `h_N+1..=h` the DRAM cache.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// DRAM and NVM side by side. A missed page goes to DRAM with
    /// probability `alpha` and to NVM otherwise; pages never cross devices.
    Flat { alpha: f64 },
    /// DRAM caches NVM. Misses fill NVM and a hit in NVM's top list migrates
    /// the page into DRAM.
    Layered,
}

impl Architecture {
    pub fn flat(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Architecture::Flat { alpha })
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Architecture::Flat { .. })
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Architecture::Flat { alpha } => Some(alpha),
            Architecture::Layered => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Flat { .. } => "flat",
            Architecture::Layered => "layered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Storage,
    Nvm,
    Dram,
}

/// List counts and per-list capacities of the hybrid cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    h_nvm: usize,
    h_dram: usize,
    /// `capacities[i - 1]` is the capacity of list `i`.
    capacities: Vec<usize>,
}

impl CacheGeometry {
    pub fn new(h_nvm: usize, h_dram: usize, capacities: Vec<usize>) -> Result<Self> {
        let h = h_nvm + h_dram;
        if h == 0 {
            return Err(Error::InvalidGeometry("cache needs at least one list".into()));
        }
        if capacities.len() != h {
            return Err(Error::InvalidGeometry(format!(
                "{} capacities given for h_N + h_D = {h} lists",
                capacities.len()
            )));
        }
        if let Some(i) = capacities.iter().position(|&c| c == 0) {
            return Err(Error::InvalidGeometry(format!("list {} has zero capacity", i + 1)));
        }
        Ok(Self {
            h_nvm,
            h_dram,
            capacities,
        })
    }

    /// Splits `m_nvm` pages over `h_nvm` lists and `m_dram` over `h_dram` lists
    /// with [`split_capacity`].
    pub fn even(h_nvm: usize, h_dram: usize, m_nvm: usize, m_dram: usize) -> Result<Self> {
        let mut capacities = Vec::with_capacity(h_nvm + h_dram);
        if h_nvm > 0 {
            capacities.extend(split_capacity(m_nvm, h_nvm)?);
        } else if m_nvm > 0 {
            return Err(Error::InvalidGeometry("NVM pages given but h_N = 0".into()));
        }
        if h_dram > 0 {
            capacities.extend(split_capacity(m_dram, h_dram)?);
        } else if m_dram > 0 {
            return Err(Error::InvalidGeometry("DRAM pages given but h_D = 0".into()));
        }
        Self::new(h_nvm, h_dram, capacities)
    }

    pub fn h_nvm(&self) -> usize {
        self.h_nvm
    }

    pub fn h_dram(&self) -> usize {
        self.h_dram
    }

    pub fn h(&self) -> usize {
        self.h_nvm + self.h_dram
    }

    pub fn capacities(&self) -> &[usize] {
        &self.capacities
    }

    /// Capacity of list `i` for `i` in `1..=h`.
    pub fn capacity(&self, i: usize) -> usize {
        self.capacities[i - 1]
    }

    pub fn m(&self) -> usize {
        self.capacities.iter().sum()
    }

    pub fn m_nvm(&self) -> usize {
        self.capacities[..self.h_nvm].iter().sum()
    }

    pub fn m_dram(&self) -> usize {
        self.capacities[self.h_nvm..].iter().sum()
    }

    /// Requires `m < n`.
    pub fn check_workload(&self, n: usize) -> Result<()> {
        if self.m() >= n {
            return Err(Error::Infeasible(format!(
                "cache holds {} pages but the workload only has {n}; need m < n",
                self.m()
            )));
        }
        Ok(())
    }

    /// Checks that the architecture can drive this geometry: a flat cache
    /// without DRAM lists needs `alpha = 0` (and without NVM lists
    /// `alpha = 1`); a layered cache needs at least one NVM list.
    pub fn check_architecture(&self, arch: &Architecture) -> Result<()> {
        match *arch {
            Architecture::Flat { alpha } => {
                if self.h_dram == 0 && alpha != 0.0 {
                    return Err(Error::InvalidGeometry(
                        "flat cache without DRAM lists requires alpha = 0".into(),
                    ));
                }
                if self.h_nvm == 0 && alpha != 1.0 {
                    return Err(Error::InvalidGeometry(
                        "flat cache without NVM lists requires alpha = 1".into(),
                    ));
                }
            }
            Architecture::Layered => {
                if self.h_nvm == 0 {
                    return Err(Error::InvalidGeometry(
                        "layered cache needs at least one NVM list".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i > self.h() {
            return Err(Error::ListIndex {
                index: i,
                max: self.h(),
            });
        }
        Ok(())
    }

    pub fn device_of(&self, i: usize) -> Result<Device> {
        self.check_index(i)?;
        Ok(if i == 0 {
            Device::Storage
        } else if i <= self.h_nvm {
            Device::Nvm
        } else {
            Device::Dram
        })
    }

    /// `true` if list `i` is the top of its device stack (`h_N` under Flat,
    /// `h` under both architectures).
    pub fn is_top(&self, arch: &Architecture, i: usize) -> bool {
        i == self.h() || (arch.is_flat() && i == self.h_nvm)
    }
}

/// Number of promotions needed to bring a page from storage to list `i`.
///
/// Under Flat the two device stacks each start at height 1; under Layered the
/// height is the list index. Storage has height 0.
pub fn list_height(arch: &Architecture, i: usize, geometry: &CacheGeometry) -> Result<usize> {
    geometry.check_index(i)?;
    Ok(match arch {
        Architecture::Flat { .. } if i > geometry.h_nvm => i - geometry.h_nvm,
        _ => i,
    })
}

/// Heights of lists `0..=h`.
pub fn heights(arch: &Architecture, geometry: &CacheGeometry) -> Vec<usize> {
    (0..=geometry.h())
        .map(|i| list_height(arch, i, geometry).expect("index in range"))
        .collect()
}

/// Total budget and per-page prices of both devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub total: f64,
    pub cost_dram: f64,
    pub cost_nvm: f64,
}

impl Budget {
    pub fn new(total: f64, cost_dram: f64, cost_nvm: f64) -> Result<Self> {
        for (name, v) in [("budget", total), ("cost_dram", cost_dram), ("cost_nvm", cost_nvm)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            total,
            cost_dram,
            cost_nvm,
        })
    }
}

/// Spends `nvm_fraction` of the budget on NVM and the rest on DRAM, returning
/// `(m_D, m_N)`. Page counts are floored so the budget is never exceeded.
pub fn allocate_budget(budget: &Budget, nvm_fraction: f64, h_nvm: usize, h_dram: usize) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&nvm_fraction) {
        return Err(Error::InvalidArgument(format!(
            "nvm_fraction must lie in [0, 1], got {nvm_fraction}"
        )));
    }
    let m_nvm = pages_for(nvm_fraction * budget.total, budget.cost_nvm);
    let m_dram = pages_for((1.0 - nvm_fraction) * budget.total, budget.cost_dram);
    if h_nvm > 0 && m_nvm < h_nvm {
        return Err(Error::Infeasible(format!(
            "NVM share buys {m_nvm} pages for {h_nvm} lists"
        )));
    }
    if h_dram > 0 && m_dram < h_dram {
        return Err(Error::Infeasible(format!(
            "DRAM share buys {m_dram} pages for {h_dram} lists"
        )));
    }
    Ok((m_dram, m_nvm))
}

fn pages_for(spend: f64, cost: f64) -> usize {
    let exact = spend / cost;
    // Absorb round-off such as 0.3 * 100 / 0.25 = 119.99999999999999.
    let nudged = (exact * (1.0 + 1e-12)).floor();
    let pages = if nudged * cost <= spend * (1.0 + 1e-12) {
        nudged
    } else {
        exact.floor()
    };
    pages.max(0.0) as usize
}

/// Splits `total` pages over `lists` lists as evenly as possible; the
/// remainder goes one page each to the highest-indexed lists.
pub fn split_capacity(total: usize, lists: usize) -> Result<Vec<usize>> {
    if lists == 0 {
        return Err(Error::InvalidArgument("cannot split over zero lists".into()));
    }
    if total < lists {
        return Err(Error::Infeasible(format!("{total} pages cannot fill {lists} lists")));
    }
    let base = total / lists;
    let extra = total % lists;
    Ok((0..lists).map(|i| base + usize::from(i >= lists - extra)).collect())
}
