//! Decibel power ledger for one addressing channel, max-min power
//! balancing across the channel set, and the Rabi-rate consequences.
//!
//! Delivered power is input power times the splitter leaf fraction times
//! `10^(-total_loss_dB/10)`, with one programmable AOM attenuation on top.
//! Per-element loss uncertainties combine in quadrature in dB space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitter::LeafPowers;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossElement {
    pub name: String,
    #[serde(rename = "insertion_loss_db")]
    pub insertion_loss_db: f64,
    #[serde(rename = "uncertainty_db", default)]
    pub uncertainty_db: f64,
}

impl LossElement {
    pub fn new(name: &str, insertion_loss_db: f64, uncertainty_db: f64) -> Self {
        LossElement { name: name.into(), insertion_loss_db, uncertainty_db }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBudget {
    pub input_power_w: f64,
    /// Splitter leaf fraction feeding this channel.
    pub split_fraction: f64,
    pub loss_chain: Vec<LossElement>,
    /// Programmable attenuation used for balancing; exact, no uncertainty.
    pub aom_attenuation_db: f64,
}

impl ChannelBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.input_power_w > 0.0) || !self.input_power_w.is_finite() {
            return Err(Error::Config(format!(
                "input power must be positive, got {}",
                self.input_power_w
            )));
        }
        if !(self.split_fraction > 0.0) || self.split_fraction > 1.0 {
            return Err(Error::Config(format!(
                "split fraction must be in (0, 1], got {}",
                self.split_fraction
            )));
        }
        for e in &self.loss_chain {
            if !e.insertion_loss_db.is_finite() || e.insertion_loss_db < 0.0 {
                return Err(Error::Config(format!(
                    "loss element {:?}: insertion loss must be nonnegative dB, got {}",
                    e.name, e.insertion_loss_db
                )));
            }
            if !e.uncertainty_db.is_finite() || e.uncertainty_db < 0.0 {
                return Err(Error::Config(format!(
                    "loss element {:?}: uncertainty must be nonnegative dB",
                    e.name
                )));
            }
        }
        if !self.aom_attenuation_db.is_finite() || self.aom_attenuation_db < 0.0 {
            return Err(Error::Config(format!(
                "AOM attenuation must be nonnegative dB, got {}",
                self.aom_attenuation_db
            )));
        }
        Ok(())
    }

    pub fn total_loss_db(&self) -> f64 {
        self.loss_chain.iter().map(|e| e.insertion_loss_db).sum()
    }
}

/// Delivered power with its dB-quadrature uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerEstimate {
    pub power_w: f64,
    /// One-sigma uncertainty in dB, quadrature over the loss chain.
    pub sigma_db: f64,
}

impl PowerEstimate {
    pub fn lower_w(&self) -> f64 {
        self.power_w * db_factor(self.sigma_db)
    }

    pub fn upper_w(&self) -> f64 {
        self.power_w / db_factor(self.sigma_db)
    }
}

/// Linear transmission factor of `loss_db` of attenuation.
pub fn db_factor(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Power at the ion from one channel's ledger.
pub fn delivered_power(budget: &ChannelBudget) -> Result<PowerEstimate> {
    budget.validate()?;
    let loss = budget.total_loss_db() + budget.aom_attenuation_db;
    let power_w = budget.input_power_w * budget.split_fraction * db_factor(loss);
    let sigma_db = budget
        .loss_chain
        .iter()
        .map(|e| e.uncertainty_db * e.uncertainty_db)
        .sum::<f64>()
        .sqrt();
    Ok(PowerEstimate { power_w, sigma_db })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalancedPoint {
    /// Number of channels kept live.
    pub included_count: usize,
    /// Power every included channel can be equalized to (the weakest
    /// included channel's delivered power).
    pub balanced_power_w: f64,
    /// 1-based channel ids kept at this count, ascending.
    pub included_channels: Vec<usize>,
}

/// Max-min balanced power for every included-channel count k = 1..=n.
///
/// Equalization can only attenuate, so the best k-subset is the k largest
/// delivered powers and the balanced level is the k-th largest. The curve
/// is non-increasing in k.
pub fn balanced_power_curve(
    leaf_powers: &LeafPowers,
    template: &ChannelBudget,
) -> Result<Vec<BalancedPoint>> {
    let delivered = per_channel_delivered(leaf_powers, template)?;
    let mut order: Vec<usize> = (0..delivered.len()).collect();
    // strongest first; ties broken by channel id for determinism
    order.sort_by(|&a, &b| {
        delivered[b]
            .partial_cmp(&delivered[a])
            .expect("delivered powers are finite")
            .then(a.cmp(&b))
    });
    let mut curve = Vec::with_capacity(delivered.len());
    for k in 1..=delivered.len() {
        let mut included: Vec<usize> = order[..k].iter().map(|i| i + 1).collect();
        included.sort_unstable();
        curve.push(BalancedPoint {
            included_count: k,
            balanced_power_w: delivered[order[k - 1]],
            included_channels: included,
        });
    }
    Ok(curve)
}

/// Delivered power per channel with the template's loss chain and the
/// channel's own leaf fraction.
pub fn per_channel_delivered(
    leaf_powers: &LeafPowers,
    template: &ChannelBudget,
) -> Result<Vec<f64>> {
    if leaf_powers.is_empty() {
        return Err(Error::Config("leaf power vector is empty".into()));
    }
    let mut out = Vec::with_capacity(leaf_powers.len());
    for (i, &f) in leaf_powers.powers.iter().enumerate() {
        if !(f > 0.0) {
            return Err(Error::Config(format!(
                "channel {}: leaf fraction must be positive, got {f}",
                i + 1
            )));
        }
        let budget = ChannelBudget { split_fraction: f, ..template.clone() };
        out.push(delivered_power(&budget)?.power_w);
    }
    Ok(out)
}

/// Largest included-channel count whose balanced power still meets
/// `power_target_w`; 0 if even the best single channel misses it.
pub fn max_channels_at_power(curve: &[BalancedPoint], power_target_w: f64) -> usize {
    curve
        .iter()
        .filter(|p| p.balanced_power_w >= power_target_w)
        .map(|p| p.included_count)
        .max()
        .unwrap_or(0)
}

/// Two-photon Rabi rate model: Omega = kappa * sqrt(P_ind * P_glob).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RabiModel {
    /// rad/s per watt of balanced individual+global power.
    pub kappa: f64,
}

impl RabiModel {
    /// Calibrates kappa from one known operating point.
    pub fn calibrated(p_ind_w: f64, p_glob_w: f64, omega_rad_s: f64) -> Result<Self> {
        if !(p_ind_w > 0.0) || !(p_glob_w > 0.0) || !(omega_rad_s > 0.0) {
            return Err(Error::Config(
                "Rabi calibration needs positive powers and rate".into(),
            ));
        }
        Ok(RabiModel { kappa: omega_rad_s / (p_ind_w * p_glob_w).sqrt() })
    }

    /// Reference calibration: 2 mW individual + 2 mW global drive a
    /// 2*pi*1 MHz carrier rate.
    pub fn reference() -> Self {
        RabiModel::calibrated(2e-3, 2e-3, 2.0 * std::f64::consts::PI * 1e6)
            .expect("reference point is valid")
    }

    pub fn rabi_rate(&self, p_ind_w: f64, p_glob_w: f64) -> Result<f64> {
        if p_ind_w < 0.0 || p_glob_w < 0.0 {
            return Err(Error::Physics("negative beam power".into()));
        }
        Ok(self.kappa * (p_ind_w * p_glob_w).sqrt())
    }

    /// Balanced power (individual = global) needed for `omega_rad_s`.
    pub fn power_for_rate(&self, omega_rad_s: f64) -> f64 {
        omega_rad_s / self.kappa
    }
}

/// Which beams carry the addressing error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDrive {
    /// One individual beam against a global beam: the neighbor error
    /// amplitude scales as sqrt of the intensity crosstalk.
    GlobalBeam,
    /// Two individual beams: both carry the crosstalk, so the error
    /// scales linearly with the intensity crosstalk.
    DualIndividual,
}

/// Fractional Rabi-rate error seen by a neighbor ion for a given relative
/// intensity crosstalk.
pub fn crosstalk_rabi_error(intensity_crosstalk: f64, drive: GateDrive) -> Result<f64> {
    if !(0.0..=1.0).contains(&intensity_crosstalk) {
        return Err(Error::Physics(format!(
            "intensity crosstalk must be in [0, 1], got {intensity_crosstalk}"
        )));
    }
    Ok(match drive {
        GateDrive::GlobalBeam => intensity_crosstalk.sqrt(),
        GateDrive::DualIndividual => intensity_crosstalk,
    })
}

/// Rotation picked up by a neighbor during a pi (or pi/2) pulse on the
/// target ion.
pub fn neighbor_rotation(pi_pulse: bool, rabi_error: f64) -> f64 {
    let target_angle = if pi_pulse {
        std::f64::consts::PI
    } else {
        std::f64::consts::FRAC_PI_2
    };
    target_angle * rabi_error
}
