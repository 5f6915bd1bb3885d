use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::OpCounts;

/// Per-operation energy in picojoules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub mac_pj: f64,
    pub ac_pj: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self {
            mac_pj: 4.6,
            ac_pj: 0.9,
        }
    }
}

impl std::str::FromStr for EnergyConstants {
    type Err = Error;

    /// Parses `MAC_PJ,AC_PJ`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("energy constants `{s}`: expected MAC_PJ,AC_PJ"));
        let (mac, ac) = s.split_once(',').ok_or_else(bad)?;
        let mac_pj: f64 = mac.trim().parse().map_err(|_| bad())?;
        let ac_pj: f64 = ac.trim().parse().map_err(|_| bad())?;
        if !(mac_pj >= 0.0 && ac_pj >= 0.0 && mac_pj.is_finite() && ac_pj.is_finite()) {
            return Err(bad());
        }
        Ok(Self { mac_pj, ac_pj })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Emitted spikes (before fan-out).
    pub spikes: u64,
    /// Spike-driven accumulates.
    pub ac_count: u64,
    pub mac_count: u64,
    pub e_ac_pj: f64,
    pub e_mac_pj: f64,
    pub total_mj: f64,
}

const PJ_PER_MJ: f64 = 1e9;

pub fn estimate_energy(counts: &OpCounts, constants: &EnergyConstants) -> EnergyReport {
    let pj = counts.acs as f64 * constants.ac_pj + counts.macs as f64 * constants.mac_pj;
    EnergyReport {
        spikes: counts.spikes,
        ac_count: counts.acs,
        mac_count: counts.macs,
        e_ac_pj: constants.ac_pj,
        e_mac_pj: constants.mac_pj,
        total_mj: pj / PJ_PER_MJ,
    }
}
