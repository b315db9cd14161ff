//! Average request latency from a cache content distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::ContentDistribution;
use crate::model::{Architecture, CacheGeometry, Device};

/// Per-page device service times in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceTimings {
    pub dram_read: f64,
    pub dram_write: f64,
    pub nvm_read: f64,
    pub nvm_write: f64,
    pub storage_read: f64,
}

impl DeviceTimings {
    pub fn new(dram_read: f64, dram_write: f64, nvm_read: f64, nvm_write: f64, storage_read: f64) -> Result<Self> {
        let t = Self {
            dram_read,
            dram_write,
            nvm_read,
            nvm_write,
            storage_read,
        };
        t.validate()?;
        Ok(t)
    }

    /// DRAM 0.2/0.2, PCM 6.7/128.3, networked flash storage read 151 (us).
    pub fn common() -> Self {
        Self {
            dram_read: 0.2,
            dram_write: 0.2,
            nvm_read: 6.7,
            nvm_write: 128.3,
            storage_read: 151.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dram_read", self.dram_read),
            ("dram_write", self.dram_write),
            ("nvm_read", self.nvm_read),
            ("nvm_write", self.nvm_write),
            ("storage_read", self.storage_read),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dram_read: self.dram_read * factor,
            dram_write: self.dram_write * factor,
            nvm_read: self.nvm_read * factor,
            nvm_write: self.nvm_write * factor,
            storage_read: self.storage_read * factor,
        }
    }

    fn read(&self, device: Device) -> f64 {
        match device {
            Device::Dram => self.dram_read,
            Device::Nvm => self.nvm_read,
            Device::Storage => self.storage_read,
        }
    }
}

fn check_dims(h: &ContentDistribution, geometry: &CacheGeometry) -> Result<()> {
    if h.lists() != geometry.h() {
        return Err(Error::DimensionMismatch {
            expected: geometry.h() + 1,
            actual: h.lists() + 1,
        });
    }
    Ok(())
}

/// Flat: a miss reads storage, then writes and reads DRAM with probability
/// `alpha` or NVM otherwise; a hit reads the device holding the list.
pub fn latency_flat(
    h: &ContentDistribution,
    timings: &DeviceTimings,
    geometry: &CacheGeometry,
    alpha: f64,
) -> Result<f64> {
    check_dims(h, geometry)?;
    let hv = h.h_values();
    let miss = timings.storage_read
        + alpha * (timings.dram_write + timings.dram_read)
        + (1.0 - alpha) * (timings.nvm_write + timings.nvm_read);
    let mut total = hv[0] * miss;
    for (i, &hi) in hv.iter().enumerate().skip(1) {
        total += hi * timings.read(geometry.device_of(i)?);
    }
    Ok(total)
}

/// Layered: a miss fills NVM, and a hit in NVM's top list pays for the
/// exchange with DRAM (NVM read + write, DRAM read + write).
pub fn latency_layered(h: &ContentDistribution, timings: &DeviceTimings, geometry: &CacheGeometry) -> Result<f64> {
    check_dims(h, geometry)?;
    let hv = h.h_values();
    let boundary = geometry.h_nvm();
    let mut total = hv[0] * (timings.storage_read + timings.nvm_write + timings.nvm_read);
    for (i, &hi) in hv.iter().enumerate().skip(1) {
        // Without DRAM lists the NVM top list has nowhere to migrate to.
        total += if i == boundary && geometry.h_dram() > 0 {
            hi * (timings.nvm_read + timings.nvm_write + timings.dram_read + timings.dram_write)
        } else {
            hi * timings.read(geometry.device_of(i)?)
        };
    }
    Ok(total)
}

pub fn latency(
    arch: &Architecture,
    h: &ContentDistribution,
    timings: &DeviceTimings,
    geometry: &CacheGeometry,
) -> Result<f64> {
    match *arch {
        Architecture::Flat { alpha } => latency_flat(h, timings, geometry, alpha),
        Architecture::Layered => latency_layered(h, timings, geometry),
    }
}
