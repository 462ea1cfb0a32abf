//! Link budget for the 28 GHz infrastructure uplink and the 60 GHz WiGig D2D
//! link: pathloss, SNR, Shannon rate with optional cap, range and NLoS policy.

use serde::{Deserialize, Serialize};

use crate::scene::{segment_blocked, PlacedBox, Point3};
use crate::{Error, Result};

/// Thermal noise power spectral density, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

/// How a blocked (NLoS) link is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlosMode {
    /// Use the NLoS pathloss formula.
    Soft,
    /// NLoS means no connectivity.
    Hard,
}

/// Close-in pathloss constants for LoS and NLoS:
/// `PL = intercept + distance_coeff * log10(d) + freq_coeff * log10(f_GHz)`.
/// The NLoS value is floored at the LoS value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossModel {
    pub los_intercept_db: f64,
    pub los_distance_coeff: f64,
    pub los_freq_coeff: f64,
    pub nlos_intercept_db: f64,
    pub nlos_distance_coeff: f64,
    pub nlos_freq_coeff: f64,
    pub min_distance_m: f64,
}

impl Default for PathlossModel {
    /// Indoor factory, sparse clutter, low base station.
    fn default() -> Self {
        Self {
            los_intercept_db: 31.84,
            los_distance_coeff: 21.5,
            los_freq_coeff: 19.0,
            nlos_intercept_db: 33.0,
            nlos_distance_coeff: 25.5,
            nlos_freq_coeff: 20.0,
            min_distance_m: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioParams {
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub noise_figure_db: f64,
    #[serde(default)]
    pub rate_cap_bps: Option<f64>,
    #[serde(default)]
    pub max_range_m: Option<f64>,
    #[serde(default)]
    pub setup_time_s: f64,
    pub nlos_mode: NlosMode,
    /// Below this SNR the link carries nothing.
    pub min_snr_db: f64,
    #[serde(default)]
    pub pathloss: PathlossModel,
}

impl RadioParams {
    /// 28 GHz, 800 MHz uplink from a device (23 dBm, 5 dBi) to the base
    /// station (15 dBi).
    pub fn infra_default() -> Self {
        Self {
            carrier_ghz: 28.0,
            bandwidth_hz: 800e6,
            tx_power_dbm: 23.0,
            tx_gain_dbi: 5.0,
            rx_gain_dbi: 15.0,
            noise_figure_db: 7.0,
            rate_cap_bps: None,
            max_range_m: None,
            setup_time_s: 0.0,
            nlos_mode: NlosMode::Hard,
            min_snr_db: -10.0,
            pathloss: PathlossModel::default(),
        }
    }

    /// 60 GHz WiGig between devices: 2.16 GHz channel, 10 Gbps target rate,
    /// 100 m radius, 0.1 ms link setup.
    pub fn d2d_default() -> Self {
        Self {
            carrier_ghz: 60.0,
            bandwidth_hz: 2.16e9,
            tx_power_dbm: 23.0,
            tx_gain_dbi: 10.0,
            rx_gain_dbi: 10.0,
            noise_figure_db: 7.0,
            rate_cap_bps: Some(10e9),
            max_range_m: Some(100.0),
            setup_time_s: 0.1e-3,
            nlos_mode: NlosMode::Hard,
            min_snr_db: -10.0,
            pathloss: PathlossModel::default(),
        }
    }

    /// Receiver noise floor in dBm.
    pub fn noise_dbm(&self) -> f64 {
        THERMAL_NOISE_DBM_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let positive = [
            ("carrier_ghz", self.carrier_ghz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("pathloss.min_distance_m", self.pathloss.min_distance_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{field}.{name}"), "must be positive"));
            }
        }
        if !(self.setup_time_s >= 0.0 && self.setup_time_s.is_finite()) {
            return Err(Error::invalid(
                format!("{field}.setup_time_s"),
                "must be non-negative",
            ));
        }
        if let Some(cap) = self.rate_cap_bps {
            if !(cap > 0.0) {
                return Err(Error::invalid(format!("{field}.rate_cap_bps"), "must be positive"));
            }
        }
        if let Some(r) = self.max_range_m {
            if !(r > 0.0) {
                return Err(Error::invalid(format!("{field}.max_range_m"), "must be positive"));
            }
        }
        for (name, v) in [
            ("tx_power_dbm", self.tx_power_dbm),
            ("tx_gain_dbi", self.tx_gain_dbi),
            ("rx_gain_dbi", self.rx_gain_dbi),
            ("noise_figure_db", self.noise_figure_db),
            ("min_snr_db", self.min_snr_db),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{field}.{name}"), "must be finite"));
            }
        }
        Ok(())
    }
}

/// Pathloss in dB. Distances below the model's minimum are clamped up to it.
pub fn pathloss_db(params: &RadioParams, distance_m: f64, los: bool) -> Result<f64> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(Error::invalid(
            "distance_m",
            format!("pathloss needs a positive distance, got {distance_m}"),
        ));
    }
    let m = &params.pathloss;
    let d = distance_m.max(m.min_distance_m).log10();
    let f = params.carrier_ghz.log10();
    let pl_los = m.los_intercept_db + m.los_distance_coeff * d + m.los_freq_coeff * f;
    if los {
        return Ok(pl_los);
    }
    let pl_nlos = m.nlos_intercept_db + m.nlos_distance_coeff * d + m.nlos_freq_coeff * f;
    Ok(pl_los.max(pl_nlos))
}

pub fn snr_db(params: &RadioParams, pathloss_db: f64) -> f64 {
    params.tx_power_dbm + params.tx_gain_dbi + params.rx_gain_dbi - pathloss_db - params.noise_dbm()
}

/// Shannon rate over the configured bandwidth, clamped to the rate cap; zero
/// below the minimum SNR.
pub fn achievable_rate(params: &RadioParams, snr_db: f64) -> f64 {
    if snr_db < params.min_snr_db {
        return 0.0;
    }
    let rate = params.bandwidth_hz * (1.0 + 10f64.powf(snr_db / 10.0)).log2();
    match params.rate_cap_bps {
        Some(cap) => rate.min(cap),
        None => rate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub los: bool,
    pub distance_m: f64,
    pub pathloss_db: f64,
    pub snr_db: f64,
    pub rate_bps: f64,
    pub usable: bool,
}

impl LinkState {
    /// Link state for a known LoS flag and distance.
    pub fn evaluate(params: &RadioParams, los: bool, distance_m: f64) -> Self {
        let distance = distance_m.max(f64::MIN_POSITIVE);
        let in_range = params.max_range_m.is_none_or(|r| distance <= r);
        let pl = pathloss_db(params, distance, los).expect("distance is positive");
        let snr = snr_db(params, pl);
        let cut = !in_range || (!los && params.nlos_mode == NlosMode::Hard);
        let rate = if cut { 0.0 } else { achievable_rate(params, snr) };
        LinkState {
            los,
            distance_m,
            pathloss_db: pl,
            snr_db: snr,
            rate_bps: rate,
            usable: rate > 0.0,
        }
    }
}

/// State of the link from `tx` to `rx` through `boxes`. The caller leaves out
/// the endpoints' own bodies.
pub fn link_state<'a>(
    boxes: impl IntoIterator<Item = &'a PlacedBox>,
    tx: Point3,
    rx: Point3,
    params: &RadioParams,
) -> LinkState {
    let los = !segment_blocked(boxes, tx, rx);
    LinkState::evaluate(params, los, tx.distance(&rx))
}
