//! Single-junction model.
//!
//! Dwell times follow the modified Néel–Brown law
//!
//! ```text
//! tau_AP(I) = tau0 * exp[-(dE/kT) * (1 - (I - I0)/Ic)]
//! tau_P(I)  = tau0 * exp[-(dE/kT) * (1 + (I - I0)/Ic)]
//! ```
//!
//! so `ln tau` is affine in the current with slopes `+B` (AP) and `-B` (P),
//! `B = (dE/kT)/Ic`. Dwells are exponentially distributed with these means.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Magnetic configuration of a junction. AP encodes logical 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MagState {
    P,
    AP,
}

impl MagState {
    pub fn bit(self) -> u8 {
        match self {
            MagState::P => 0,
            MagState::AP => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            MagState::P
        } else {
            MagState::AP
        }
    }

    /// Ising spin: P -> -1, AP -> +1.
    pub fn spin(self) -> f64 {
        match self {
            MagState::P => -1.0,
            MagState::AP => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            MagState::P => MagState::AP,
            MagState::AP => MagState::P,
        }
    }
}

/// Physical parameters of one junction, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmtjParams {
    #[serde(rename = "tau0_s")]
    pub tau0: f64,
    pub barrier_kt: f64,
    #[serde(rename = "i_crit_a")]
    pub i_crit: f64,
    #[serde(rename = "i_balance_a")]
    pub i_balance: f64,
    #[serde(rename = "r_p_ohm")]
    pub r_p: f64,
    #[serde(rename = "r_ap_ohm")]
    pub r_ap: f64,
    #[serde(rename = "i_breakdown_a")]
    pub i_breakdown: f64,
}

/// Device description by the quantities a dwell-time plot constrains:
/// the dwell time at the balance current and the log-slope `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub tau_balance_s: f64,
    pub slope_b_per_a: f64,
    pub barrier_kt: f64,
    pub i_balance_a: f64,
    pub r_p_ohm: f64,
    pub r_ap_ohm: f64,
    pub i_breakdown_a: f64,
}

/// Exponential sensitivity `B` of the dwell times to current, in 1/A.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SlopeB(pub f64);

impl SlopeB {
    /// `g = exp(B * delta_i)`.
    pub fn dwell_factor(self, delta_i: f64) -> f64 {
        (self.0 * delta_i).exp()
    }
}

impl SmtjParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau0_s", self.tau0),
            ("barrier_kt", self.barrier_kt),
            ("i_crit_a", self.i_crit),
            ("i_balance_a", self.i_balance),
            ("r_p_ohm", self.r_p),
            ("r_ap_ohm", self.r_ap),
            ("i_breakdown_a", self.i_breakdown),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite, got {v}")));
            }
        }
        if self.tau0 <= 0.0 || self.barrier_kt <= 0.0 || self.i_crit <= 0.0 {
            return Err(Error::InvalidConfig(
                "tau0_s, barrier_kt and i_crit_a must be positive".into(),
            ));
        }
        if !(self.r_p > 0.0 && self.r_ap > self.r_p) {
            return Err(Error::InvalidConfig(format!(
                "resistances must satisfy r_ap > r_p > 0 (r_p = {}, r_ap = {})",
                self.r_p, self.r_ap
            )));
        }
        if self.i_breakdown <= self.i_balance {
            return Err(Error::InvalidConfig(format!(
                "i_breakdown_a ({}) must exceed i_balance_a ({})",
                self.i_breakdown, self.i_balance
            )));
        }
        Ok(())
    }

    pub fn from_reduced(r: &ReducedParams) -> Result<Self> {
        if !(r.tau_balance_s > 0.0 && r.slope_b_per_a > 0.0 && r.barrier_kt > 0.0) {
            return Err(Error::InvalidConfig(
                "tau_balance_s, slope_b_per_a and barrier_kt must be positive".into(),
            ));
        }
        let params = SmtjParams {
            tau0: r.tau_balance_s * r.barrier_kt.exp(),
            barrier_kt: r.barrier_kt,
            i_crit: r.barrier_kt / r.slope_b_per_a,
            i_balance: r.i_balance_a,
            r_p: r.r_p_ohm,
            r_ap: r.r_ap_ohm,
            i_breakdown: r.i_breakdown_a,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn slope_b(&self) -> SlopeB {
        SlopeB(self.barrier_kt / self.i_crit)
    }

    /// Mean dwell time (either state) at the balance current.
    pub fn tau_at_balance(&self) -> f64 {
        self.tau0 * (-self.barrier_kt).exp()
    }

    pub fn tmr(&self) -> f64 {
        (self.r_ap - self.r_p) / self.r_p
    }

    /// Sensed voltages `I0 * R` in the P and AP states.
    pub fn balance_voltages(&self) -> (f64, f64) {
        (self.i_balance * self.r_p, self.i_balance * self.r_ap)
    }
}

/// Mean dwell time in `state` at drive current `i`.
pub fn mean_dwell_time(params: &SmtjParams, state: MagState, i: f64) -> Result<f64> {
    ensure_finite("current", i)?;
    let x = (i - params.i_balance) / params.i_crit;
    let exponent = match state {
        MagState::AP => -params.barrier_kt * (1.0 - x),
        MagState::P => -params.barrier_kt * (1.0 + x),
    };
    Ok(params.tau0 * exponent.exp())
}

/// Switching rate out of `state`, the reciprocal of [`mean_dwell_time`].
pub fn switching_rate(params: &SmtjParams, state: MagState, i: f64) -> Result<f64> {
    mean_dwell_time(params, state, i).map(|tau| 1.0 / tau)
}

/// Fraction of time spent in `state` at current `i`.
pub fn state_probability(params: &SmtjParams, state: MagState, i: f64) -> Result<f64> {
    ensure_finite("current", i)?;
    let x = (i - params.i_balance) / params.i_crit;
    let sign = match state {
        MagState::AP => 1.0,
        MagState::P => -1.0,
    };
    Ok(1.0 / (1.0 + (-sign * 2.0 * params.barrier_kt * x).exp()))
}

pub fn resistance(params: &SmtjParams, state: MagState) -> f64 {
    match state {
        MagState::P => params.r_p,
        MagState::AP => params.r_ap,
    }
}

/// Draw one exponentially distributed dwell in `state` at current `i`.
///
/// Currents at or above `i_breakdown` are rejected.
pub fn sample_dwell<R: Rng + ?Sized>(
    params: &SmtjParams,
    state: MagState,
    i: f64,
    rng: &mut R,
) -> Result<f64> {
    check_breakdown(params, None, i)?;
    let mean = mean_dwell_time(params, state, i)?;
    let unit: f64 = Exp1.sample(rng);
    Ok(mean * unit)
}

pub(crate) fn check_breakdown(params: &SmtjParams, device: Option<usize>, i: f64) -> Result<()> {
    if i >= params.i_breakdown {
        return Err(Error::Breakdown {
            device,
            current_a: i,
            limit_a: params.i_breakdown,
        });
    }
    Ok(())
}
