//! System parameters and configuration validation.
//!
//! Units follow the conventions used throughout the crate: powers are in mW,
//! rates in bit/s, bandwidth in Hz and distances in meters. The only exception
//! is [`SystemParams::power_threshold`], which is given in W in configuration
//! files and converted on use.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Path loss in dB at 500 m for the `128.1 + 37.6 log10(d_km)` macro-cell model.
pub const MACRO_PATHLOSS_AT_500M_DB: f64 = 116.781_272_163_034_3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("num_users must be at least 1")]
    NoUsers,
    #[error("num_subcarriers ({subcarriers}) must be at least num_users ({users})")]
    TooFewSubcarriers { users: usize, subcarriers: usize },
    #[error("num_rrh must be at least 1")]
    NoRrh,
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("noise_psd must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("rate_req must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("ftpa_alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("power_threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),
    #[error("safety_margin must be nonnegative, got {0}")]
    NegativeMargin(f64),
    #[error("cell_radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("rrh_ring_fraction must lie in [0, 1], got {0}")]
    RingOutOfRange(f64),
    #[error("pathloss_exponent must be positive, got {0}")]
    NonPositiveExponent(f64),
    #[error("shadowing_sigma must be nonnegative, got {0}")]
    NegativeShadowing(f64),
    #[error("rms_delay_spread must be nonnegative, got {0}")]
    NegativeDelaySpread(f64),
    #[error("min_distance_clamp must be positive, got {0}")]
    NonPositiveClamp(f64),
    #[error("{0} must be finite")]
    NotFinite(&'static str),
}

/// Scalar knobs of one simulated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub num_rrh: usize,
    /// Hz
    pub bandwidth: f64,
    /// mW/Hz
    pub noise_psd: f64,
    /// bit/s, identical for every user
    pub rate_req: f64,
    pub ftpa_alpha: f64,
    /// W
    pub power_threshold: f64,
    pub safety_margin: f64,
    /// m
    pub cell_radius: f64,
    pub rrh_ring_fraction: f64,
    pub pathloss_exponent: f64,
    /// Path loss at distance `cell_radius`, in dB. Zero gives unit gain at the
    /// cell edge.
    pub pathloss_edge_db: f64,
    /// dB, standard deviation of the lognormal shadowing
    pub shadowing_sigma: f64,
    /// s
    pub rms_delay_spread: f64,
    /// m
    pub min_distance_clamp: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SystemParams {
    /// The reference scenario: 15 users, 64 subcarriers and 4 RRHs in a
    /// 500 m hexagonal cell.
    fn default() -> Self {
        Self {
            num_users: 15,
            num_subcarriers: 64,
            num_rrh: 4,
            bandwidth: 10e6,
            noise_psd: 4e-18,
            rate_req: 12e6,
            ftpa_alpha: 0.5,
            power_threshold: 0.01,
            safety_margin: 0.01,
            cell_radius: 500.0,
            rrh_ring_fraction: 2.0 / 3.0,
            pathloss_exponent: 3.76,
            pathloss_edge_db: MACRO_PATHLOSS_AT_500M_DB,
            shadowing_sigma: 8.0,
            rms_delay_spread: 500e-9,
            min_distance_clamp: 10.0,
            trials: 500,
            seed: 1,
        }
    }
}

impl SystemParams {
    /// Noise power on one subcarrier, `N0 * B / S` in mW.
    pub fn noise_power(&self) -> f64 {
        self.noise_psd * self.bandwidth / self.num_subcarriers as f64
    }

    /// Subcarrier bandwidth `B / S` in Hz.
    pub fn subcarrier_bandwidth(&self) -> f64 {
        self.bandwidth / self.num_subcarriers as f64
    }

    /// Required rate in bits per channel use summed over subcarriers,
    /// i.e. `R_req * S / B`.
    pub fn rate_norm(&self) -> f64 {
        self.rate_req / self.subcarrier_bandwidth()
    }

    /// Acceptance threshold on power decreases, in mW.
    pub fn threshold_mw(&self) -> f64 {
        self.power_threshold * 1e3
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let finite = [
            ("bandwidth", self.bandwidth),
            ("noise_psd", self.noise_psd),
            ("rate_req", self.rate_req),
            ("ftpa_alpha", self.ftpa_alpha),
            ("safety_margin", self.safety_margin),
            ("cell_radius", self.cell_radius),
            ("rrh_ring_fraction", self.rrh_ring_fraction),
            ("pathloss_exponent", self.pathloss_exponent),
            ("pathloss_edge_db", self.pathloss_edge_db),
            ("shadowing_sigma", self.shadowing_sigma),
            ("rms_delay_spread", self.rms_delay_spread),
            ("min_distance_clamp", self.min_distance_clamp),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(ParamError::NotFinite(name));
            }
        }
        if self.num_users == 0 {
            return Err(ParamError::NoUsers);
        }
        if self.num_subcarriers < self.num_users {
            return Err(ParamError::TooFewSubcarriers {
                users: self.num_users,
                subcarriers: self.num_subcarriers,
            });
        }
        if self.num_rrh == 0 {
            return Err(ParamError::NoRrh);
        }
        if self.bandwidth <= 0.0 {
            return Err(ParamError::NonPositiveBandwidth(self.bandwidth));
        }
        if self.noise_psd <= 0.0 {
            return Err(ParamError::NonPositiveNoise(self.noise_psd));
        }
        if self.rate_req <= 0.0 {
            return Err(ParamError::NonPositiveRate(self.rate_req));
        }
        if !(0.0..=1.0).contains(&self.ftpa_alpha) {
            return Err(ParamError::AlphaOutOfRange(self.ftpa_alpha));
        }
        // infinity is allowed here: it disables every optional assignment
        if self.power_threshold.is_nan() || self.power_threshold < 0.0 {
            return Err(ParamError::NegativeThreshold(self.power_threshold));
        }
        if self.safety_margin < 0.0 {
            return Err(ParamError::NegativeMargin(self.safety_margin));
        }
        if self.cell_radius <= 0.0 {
            return Err(ParamError::NonPositiveRadius(self.cell_radius));
        }
        if !(0.0..=1.0).contains(&self.rrh_ring_fraction) {
            return Err(ParamError::RingOutOfRange(self.rrh_ring_fraction));
        }
        if self.pathloss_exponent <= 0.0 {
            return Err(ParamError::NonPositiveExponent(self.pathloss_exponent));
        }
        if self.shadowing_sigma < 0.0 {
            return Err(ParamError::NegativeShadowing(self.shadowing_sigma));
        }
        if self.rms_delay_spread < 0.0 {
            return Err(ParamError::NegativeDelaySpread(self.rms_delay_spread));
        }
        if self.min_distance_clamp <= 0.0 {
            return Err(ParamError::NonPositiveClamp(self.min_distance_clamp));
        }
        Ok(())
    }
}

/// Checks a raw parameter record and hands it back unchanged when valid.
pub fn validate_config(params: SystemParams) -> Result<SystemParams, ParamError> {
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scenario_is_valid() {
        let p = validate_config(SystemParams::default()).unwrap();
        assert_eq!((p.num_users, p.num_subcarriers, p.num_rrh), (15, 64, 4));
        let sigma2 = p.noise_power();
        assert!((sigma2 - 6.25e-13).abs() < 1e-25, "{sigma2}");
    }

    #[test]
    fn too_few_subcarriers() {
        let p = SystemParams {
            num_users: 5,
            num_subcarriers: 4,
            ..Default::default()
        };
        assert_eq!(
            validate_config(p),
            Err(ParamError::TooFewSubcarriers {
                users: 5,
                subcarriers: 4
            })
        );
    }

    #[test]
    fn negative_margin() {
        let p = SystemParams {
            safety_margin: -0.1,
            ..Default::default()
        };
        assert_eq!(validate_config(p), Err(ParamError::NegativeMargin(-0.1)));
    }

    #[test]
    fn non_positive_bandwidth() {
        let p = SystemParams {
            bandwidth: 0.0,
            ..Default::default()
        };
        assert!(matches!(validate_config(p), Err(ParamError::NonPositiveBandwidth(_))));
    }

    #[test]
    fn macro_pathloss_constant() {
        let expected = 128.1 + 37.6 * 0.5f64.log10();
        assert!((MACRO_PATHLOSS_AT_500M_DB - expected).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "num_users = 4\nnum_subcarriers = 8\nbogus = 1\n";
        assert!(toml::from_str::<SystemParams>(text).is_err());
        let ok: SystemParams = toml::from_str("num_users = 4\nnum_subcarriers = 8\n").unwrap();
        assert_eq!(ok.num_users, 4);
        assert_eq!(ok.num_rrh, 4);
    }

    #[test]
    fn derived_quantities() {
        let p = SystemParams::default();
        assert!((p.subcarrier_bandwidth() - 156_250.0).abs() < 1e-9);
        assert!((p.rate_norm() - 76.8).abs() < 1e-12);
        assert!((p.threshold_mw() - 10.0).abs() < 1e-12);
    }
}
