//! Ideal transfer functions of the coupling circuit.
//!
//! One unidirectional pipeline senses a source junction and drives a target:
//!
//! ```text
//! threshold -> gain -> level shift -> transconductance
//! ```
//!
//! The stages are memoryless maps. The aggregate propagation delay of the
//! physical board is applied once, by [`crate::simnet`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::device::{check_breakdown, MagState, SmtjParams};
use crate::error::{Error, Result};

/// Threshold-stage polarity. `Negative` swaps the comparator inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

fn zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub i_fixed_a: f64,
    pub r_var_ohm: f64,
    pub v_high_v: f64,
    pub polarity: Polarity,
    /// Standard deviation of additive Gaussian noise on the sensed voltage.
    #[serde(default = "zero")]
    pub noise_sigma_v: f64,
}

impl ThresholdConfig {
    pub fn reference_v(&self) -> f64 {
        self.i_fixed_a * self.r_var_ohm
    }

    /// Output level for a noiseless source in `state` (AP is the high sensed
    /// voltage whenever the reference sits between the two levels).
    pub fn ideal_level(&self, state: MagState) -> f64 {
        let high = match self.polarity {
            Polarity::Positive => state == MagState::AP,
            Polarity::Negative => state == MagState::P,
        };
        if high {
            self.v_high_v
        } else {
            0.0
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.i_fixed_a > 0.0 && self.r_var_ohm >= 0.0 && self.v_high_v > 0.0) {
            return Err(Error::InvalidConfig(
                "threshold stage needs i_fixed_a > 0, r_var_ohm >= 0, v_high_v > 0".into(),
            ));
        }
        if !(self.noise_sigma_v >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma_v must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainConfig {
    pub r_gain_ohm: f64,
    pub r_gs_ohm: f64,
    pub v_c_v: f64,
}

impl GainConfig {
    /// `G = r_gain / r_gs`.
    pub fn gain(&self) -> Result<f64> {
        if self.r_gs_ohm == 0.0 {
            return Err(Error::InvalidConfig("gain stage r_gs_ohm must be nonzero".into()));
        }
        Ok(self.r_gain_ohm / self.r_gs_ohm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelShiftConfig {
    pub r_1_ohm: f64,
    pub r_f_ohm: f64,
    pub r_2_ohm: f64,
    pub r_g_ohm: f64,
    pub v_bias_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransconductanceConfig {
    pub v_dd_v: f64,
    pub r_1_ohm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub threshold: ThresholdConfig,
    pub gain: GainConfig,
    pub shift: LevelShiftConfig,
    pub transcond: TransconductanceConfig,
}

/// Board defaults used when a coupling is given only as `{gain, polarity}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoardDefaults {
    pub i_fixed_a: f64,
    pub v_high_v: f64,
    pub r_gs_ohm: f64,
    pub v_c_v: f64,
    pub r_shift_ohm: f64,
    pub v_dd_v: f64,
    pub r_1_ohm: f64,
}

impl Default for BoardDefaults {
    fn default() -> Self {
        BoardDefaults {
            i_fixed_a: 1e-3,
            v_high_v: 2.5,
            r_gs_ohm: 100e3,
            v_c_v: 1.25,
            r_shift_ohm: 10e3,
            v_dd_v: 15.0,
            r_1_ohm: 10e3,
        }
    }
}

/// `0` when `v_in <= I_fixed * R_var`, else `v_high` (positive polarity);
/// the two outputs are swapped for negative polarity.
pub fn threshold_stage(cfg: &ThresholdConfig, v_in: f64) -> f64 {
    let above = v_in > cfg.reference_v();
    let high = match cfg.polarity {
        Polarity::Positive => above,
        Polarity::Negative => !above,
    };
    if high {
        cfg.v_high_v
    } else {
        0.0
    }
}

/// [`threshold_stage`] with Gaussian noise of `cfg.noise_sigma_v` added to
/// the input.
pub fn threshold_stage_noisy<R: Rng + ?Sized>(cfg: &ThresholdConfig, v_in: f64, rng: &mut R) -> f64 {
    if cfg.noise_sigma_v > 0.0 {
        let n: f64 = StandardNormal.sample(rng);
        threshold_stage(cfg, v_in + cfg.noise_sigma_v * n)
    } else {
        threshold_stage(cfg, v_in)
    }
}

/// Inverting amplifier about `v_c`: `G (v_c - v_in) + v_c`.
pub fn gain_stage(cfg: &GainConfig, v_in: f64) -> Result<f64> {
    let g = cfg.gain()?;
    Ok(g * (cfg.v_c_v - v_in) + cfg.v_c_v)
}

/// Summing variant for a node with several inputs: each `(G_k, v_k)` pair
/// contributes `G_k (v_c - v_k)` around the shared centre `v_c`.
pub fn summing_gain_stage(v_c: f64, inputs: &[(f64, f64)]) -> f64 {
    v_c + inputs.iter().map(|&(g, v)| g * (v_c - v)).sum::<f64>()
}

pub fn level_shift_stage(cfg: &LevelShiftConfig, v_in: f64) -> Result<f64> {
    let den = (cfg.r_2_ohm + cfg.r_g_ohm) * cfg.r_1_ohm;
    if den == 0.0 {
        return Err(Error::InvalidConfig("level-shift resistor network has a zero denominator".into()));
    }
    let common = cfg.r_1_ohm + cfg.r_f_ohm;
    Ok(common * cfg.r_g_ohm / den * v_in + common * cfg.r_2_ohm / den * cfg.v_bias_v)
}

/// Inverting voltage-to-current conversion `(v_dd - v_in) / r_1`.
pub fn transconductance_stage(cfg: &TransconductanceConfig, v_in: f64) -> Result<f64> {
    if cfg.r_1_ohm == 0.0 {
        return Err(Error::InvalidConfig("transconductance r_1_ohm must be nonzero".into()));
    }
    Ok((cfg.v_dd_v - v_in) / cfg.r_1_ohm)
}

impl PipelineConfig {
    /// Pipeline built from board defaults: the threshold reference is set to
    /// `threshold_ref_v` and `v_bias` is chosen so that the quiescent output
    /// equals `target_i_balance`.
    pub fn standard(
        board: &BoardDefaults,
        gain: f64,
        polarity: Polarity,
        threshold_ref_v: f64,
        target_i_balance: f64,
    ) -> Self {
        PipelineConfig {
            threshold: ThresholdConfig {
                i_fixed_a: board.i_fixed_a,
                r_var_ohm: threshold_ref_v / board.i_fixed_a,
                v_high_v: board.v_high_v,
                polarity,
                noise_sigma_v: 0.0,
            },
            gain: GainConfig {
                r_gain_ohm: gain * board.r_gs_ohm,
                r_gs_ohm: board.r_gs_ohm,
                v_c_v: board.v_c_v,
            },
            shift: LevelShiftConfig {
                r_1_ohm: board.r_shift_ohm,
                r_f_ohm: board.r_shift_ohm,
                r_2_ohm: board.r_shift_ohm,
                r_g_ohm: board.r_shift_ohm,
                v_bias_v: board.v_dd_v - target_i_balance * board.r_1_ohm - board.v_c_v,
            },
            transcond: TransconductanceConfig {
                v_dd_v: board.v_dd_v,
                r_1_ohm: board.r_1_ohm,
            },
        }
    }

    /// [`PipelineConfig::standard`] between two devices: the reference sits
    /// halfway between the source's sensed P and AP voltages at balance.
    pub fn between(
        board: &BoardDefaults,
        source: &SmtjParams,
        target: &SmtjParams,
        gain: f64,
        polarity: Polarity,
    ) -> Self {
        let (lo, hi) = source.balance_voltages();
        Self::standard(board, gain, polarity, 0.5 * (lo + hi), target.i_balance)
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain.r_gain_ohm = gain * self.gain.r_gs_ohm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.threshold.validate()?;
        let g = self.gain.gain()?;
        if !(g >= 0.0) {
            return Err(Error::InvalidConfig(format!("gain must be >= 0, got {g}")));
        }
        let s = &self.shift;
        if !(s.r_1_ohm > 0.0 && s.r_f_ohm > 0.0 && s.r_2_ohm > 0.0 && s.r_g_ohm > 0.0) {
            return Err(Error::InvalidConfig("level-shift resistances must be positive".into()));
        }
        if !(self.transcond.r_1_ohm > 0.0) {
            return Err(Error::InvalidConfig("transconductance r_1_ohm must be positive".into()));
        }
        Ok(())
    }

    pub fn polarity(&self) -> Polarity {
        self.threshold.polarity
    }
}

/// Output current for a digitized threshold-stage level `v_digital`.
pub fn pipeline_from_level(cfg: &PipelineConfig, v_digital: f64) -> Result<f64> {
    let v = gain_stage(&cfg.gain, v_digital)?;
    let v = level_shift_stage(&cfg.shift, v)?;
    transconductance_stage(&cfg.transcond, v)
}

/// Full chain from a sensed source voltage, including optional threshold
/// noise.
pub fn pipeline_from_voltage<R: Rng + ?Sized>(cfg: &PipelineConfig, v_in: f64, rng: &mut R) -> Result<f64> {
    pipeline_from_level(cfg, threshold_stage_noisy(&cfg.threshold, v_in, rng))
}

/// Drive current delivered to the target while the source is in
/// `source_state`, using the ideal digitization of that state.
pub fn pipeline_output(cfg: &PipelineConfig, source_state: MagState) -> Result<f64> {
    cfg.validate()?;
    pipeline_from_level(cfg, cfg.threshold.ideal_level(source_state))
}

/// [`pipeline_output`] with a breakdown check against the target device.
pub fn pipeline_output_for(cfg: &PipelineConfig, source_state: MagState, target: &SmtjParams) -> Result<f64> {
    let i = pipeline_output(cfg, source_state)?;
    check_breakdown(target, None, i)?;
    Ok(i)
}

/// Half the separation of the two output levels, from two pipeline
/// evaluations.
pub fn delta_current(cfg: &PipelineConfig) -> Result<f64> {
    let hi = pipeline_output(cfg, MagState::AP)?;
    let lo = pipeline_output(cfg, MagState::P)?;
    Ok(0.5 * (hi - lo).abs())
}

/// Closed form of [`delta_current`]: `G * (v_high / 2) / r_1`, valid for the
/// equal-resistor level shifter.
pub fn delta_current_closed_form(cfg: &PipelineConfig) -> Result<f64> {
    let g = cfg.gain.gain()?;
    let shift_gain = {
        let s = &cfg.shift;
        (s.r_1_ohm + s.r_f_ohm) * s.r_g_ohm / ((s.r_2_ohm + s.r_g_ohm) * s.r_1_ohm)
    };
    Ok(g * shift_gain * 0.5 * cfg.threshold.v_high_v / cfg.transcond.r_1_ohm)
}

/// Output current with the gain set to zero.
pub fn dc_current(cfg: &PipelineConfig) -> Result<f64> {
    pipeline_output(&cfg.with_gain(0.0), MagState::P)
}

/// Midpoint of the two output levels at the configured gain.
pub fn midpoint_current(cfg: &PipelineConfig) -> Result<f64> {
    Ok(0.5 * (pipeline_output(cfg, MagState::AP)? + pipeline_output(cfg, MagState::P)?))
}

/// Signed differential contribution `output(state) - midpoint`, i.e.
/// `+delta_i` or `-delta_i`.
pub fn differential_current(cfg: &PipelineConfig, source_state: MagState) -> Result<f64> {
    Ok(pipeline_output(cfg, source_state)? - midpoint_current(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn default_pipeline(gain: f64) -> PipelineConfig {
        PipelineConfig::standard(&BoardDefaults::default(), gain, Polarity::Positive, 0.615, 0.95e-3)
    }

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            ((a - b) / b).abs()
        }
    }

    #[test]
    fn threshold_branches_and_polarity() {
        let mut cfg = ThresholdConfig {
            i_fixed_a: 1e-3,
            r_var_ohm: 615.0,
            v_high_v: 2.5,
            polarity: Polarity::Positive,
            noise_sigma_v: 0.0,
        };
        assert_eq!(threshold_stage(&cfg, 0.3), 0.0);
        assert_eq!(threshold_stage(&cfg, 0.7), 2.5);
        // tie resolves low
        assert_eq!(threshold_stage(&cfg, cfg.reference_v()), 0.0);
        cfg.polarity = Polarity::Negative;
        assert_eq!(threshold_stage(&cfg, 0.3), 2.5);
        assert_eq!(threshold_stage(&cfg, 0.7), 0.0);
    }

    #[test]
    fn noisy_threshold_without_noise_is_exact() {
        let cfg = default_pipeline(0.05).threshold;
        let mut r = rng::master(3);
        assert_eq!(threshold_stage_noisy(&cfg, 0.6, &mut r), 0.0);
        assert_eq!(threshold_stage_noisy(&cfg, 0.63, &mut r), 2.5);
    }

    #[test]
    fn noisy_threshold_misreads_near_reference() {
        let mut cfg = default_pipeline(0.05).threshold;
        cfg.noise_sigma_v = 0.01;
        let mut r = rng::master(4);
        let n = 20_000;
        let highs = (0..n)
            .filter(|_| threshold_stage_noisy(&cfg, cfg.reference_v(), &mut r) > 0.0)
            .count();
        let frac = highs as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn gain_stage_cases() {
        let cfg = GainConfig { r_gain_ohm: 5e3, r_gs_ohm: 100e3, v_c_v: 1.25 };
        assert_eq!(gain_stage(&cfg, 1.25).unwrap(), 1.25);
        assert!((gain_stage(&cfg, 0.0).unwrap() - 1.3125).abs() < 1e-15);
        let zero = GainConfig { r_gain_ohm: 0.0, ..cfg };
        assert_eq!(gain_stage(&zero, 2.5).unwrap(), 1.25);
        assert_eq!(gain_stage(&zero, -4.0).unwrap(), 1.25);
        let bad = GainConfig { r_gs_ohm: 0.0, ..cfg };
        assert!(matches!(gain_stage(&bad, 1.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn level_shift_cases() {
        let eq = LevelShiftConfig { r_1_ohm: 10e3, r_f_ohm: 10e3, r_2_ohm: 10e3, r_g_ohm: 10e3, v_bias_v: 0.4 };
        assert_eq!(level_shift_stage(&eq, 1.1).unwrap(), 1.1 + 0.4);
        let ident = LevelShiftConfig { v_bias_v: 0.0, ..eq };
        assert_eq!(level_shift_stage(&ident, 0.77).unwrap(), 0.77);
        let gen = LevelShiftConfig { r_1_ohm: 10e3, r_f_ohm: 30e3, r_2_ohm: 10e3, r_g_ohm: 10e3, v_bias_v: 0.5 };
        assert!((level_shift_stage(&gen, 1.0).unwrap() - 3.0).abs() < 1e-15);
        let bad = LevelShiftConfig { r_1_ohm: 0.0, ..eq };
        assert!(level_shift_stage(&bad, 1.0).is_err());
    }

    #[test]
    fn transconductance_cases() {
        let cfg = TransconductanceConfig { v_dd_v: 15.0, r_1_ohm: 10e3 };
        assert_eq!(transconductance_stage(&cfg, 5.5).unwrap(), 0.95e-3);
        assert_eq!(transconductance_stage(&cfg, 15.0).unwrap(), 0.0);
        assert!(transconductance_stage(&cfg, 5.6).unwrap() < transconductance_stage(&cfg, 5.5).unwrap());
        assert!(transconductance_stage(&TransconductanceConfig { r_1_ohm: 0.0, ..cfg }, 1.0).is_err());
    }

    #[test]
    fn zero_gain_gives_single_dc_level() {
        let cfg = default_pipeline(0.0);
        let expected = (cfg.transcond.v_dd_v - (cfg.gain.v_c_v + cfg.shift.v_bias_v)) / cfg.transcond.r_1_ohm;
        assert_eq!(pipeline_output(&cfg, MagState::P).unwrap(), expected);
        assert_eq!(pipeline_output(&cfg, MagState::AP).unwrap(), expected);
        assert_eq!(delta_current(&cfg).unwrap(), 0.0);
    }

    #[test]
    fn delta_current_oracle_values() {
        // two-level evaluation halved against G * (v_high/2) / r_1
        for (g, want) in [(0.05, 6.25e-6), (0.06, 7.5e-6)] {
            let cfg = default_pipeline(g);
            let hi = pipeline_output(&cfg, MagState::AP).unwrap();
            let lo = pipeline_output(&cfg, MagState::P).unwrap();
            assert!(rel(0.5 * (hi - lo), want) < 1e-9);
            assert!(rel(delta_current(&cfg).unwrap(), want) < 1e-9);
            assert!(rel(delta_current_closed_form(&cfg).unwrap(), want) < 1e-12);
        }
    }

    #[test]
    fn source_ap_drives_higher_current_under_positive_polarity() {
        let pos = default_pipeline(0.05);
        assert!(pipeline_output(&pos, MagState::AP).unwrap() > pipeline_output(&pos, MagState::P).unwrap());
        let mut neg = pos;
        neg.threshold.polarity = Polarity::Negative;
        assert!(pipeline_output(&neg, MagState::AP).unwrap() < pipeline_output(&neg, MagState::P).unwrap());
        assert!(differential_current(&pos, MagState::AP).unwrap() > 0.0);
        assert!(differential_current(&neg, MagState::AP).unwrap() < 0.0);
    }

    #[test]
    fn breakdown_guard_for_presets() {
        let board = BoardDefaults::default();
        for name in crate::presets::names() {
            let p = crate::presets::device(&name).unwrap();
            for k in 0..=20 {
                let g = 0.005 * k as f64;
                let cfg = PipelineConfig::between(&board, &p, &p, g, Polarity::Positive);
                pipeline_output_for(&cfg, MagState::AP, &p).unwrap();
                assert!(dc_current(&cfg).unwrap() + delta_current(&cfg).unwrap() < p.i_breakdown);
            }
        }
        let p = crate::presets::device("smtj1").unwrap();
        let hot = PipelineConfig::between(&board, &p, &p, 1.0, Polarity::Positive);
        assert!(pipeline_output_for(&hot, MagState::AP, &p).unwrap_err().is_breakdown());
    }

    #[test]
    fn summing_stage_reduces_to_single_input() {
        let cfg = GainConfig { r_gain_ohm: 4e3, r_gs_ohm: 100e3, v_c_v: 1.25 };
        let single = gain_stage(&cfg, 2.5).unwrap();
        assert!((summing_gain_stage(1.25, &[(0.04, 2.5)]) - single).abs() < 1e-15);
        // opposite inputs with equal gain cancel
        assert_eq!(summing_gain_stage(1.25, &[(0.04, 2.5), (0.04, 0.0)]), 1.25);
    }

    #[test]
    fn pipeline_from_voltage_matches_ideal_level() {
        let p = crate::presets::device("smtj1").unwrap();
        let cfg = PipelineConfig::between(&BoardDefaults::default(), &p, &p, 0.05, Polarity::Positive);
        let mut r = rng::master(0);
        let (lo, hi) = p.balance_voltages();
        assert_eq!(pipeline_from_voltage(&cfg, hi, &mut r).unwrap(), pipeline_output(&cfg, MagState::AP).unwrap());
        assert_eq!(pipeline_from_voltage(&cfg, lo, &mut r).unwrap(), pipeline_output(&cfg, MagState::P).unwrap());
    }

    proptest! {
        #[test]
        fn stages_match_transfer_functions(v in -5.0f64..20.0, g in 0.0f64..0.1, vb in 0.0f64..8.0,
                                           r1 in 1e3f64..1e5, rf in 1e3f64..1e5, r2 in 1e3f64..1e5, rg in 1e3f64..1e5) {
            let gcfg = GainConfig { r_gain_ohm: g * 1e5, r_gs_ohm: 1e5, v_c_v: 1.25 };
            let want = (g * 1e5 / 1e5) * (1.25 - v) + 1.25;
            prop_assert!(rel(gain_stage(&gcfg, v).unwrap(), want) < 1e-12 || (gain_stage(&gcfg, v).unwrap() - want).abs() < 1e-15);
            let s = LevelShiftConfig { r_1_ohm: r1, r_f_ohm: rf, r_2_ohm: r2, r_g_ohm: rg, v_bias_v: vb };
            let want = (r1 + rf) * rg / ((r2 + rg) * r1) * v + (r1 + rf) * r2 / ((r2 + rg) * r1) * vb;
            let got = level_shift_stage(&s, v).unwrap();
            prop_assert!(rel(got, want) < 1e-12 || (got - want).abs() < 1e-14);
            let t = TransconductanceConfig { v_dd_v: 15.0, r_1_ohm: r1 };
            let got = transconductance_stage(&t, v).unwrap();
            let want = (15.0 - v) / r1;
            prop_assert!(rel(got, want) < 1e-12 || (got - want).abs() < 1e-18);
        }

        #[test]
        fn two_levels_centred_on_dc_and_linear_in_gain(g in 0.0f64..0.05) {
            let cfg = default_pipeline(g);
            let mid = midpoint_current(&cfg).unwrap();
            let dc = dc_current(&cfg).unwrap();
            prop_assert!((mid - dc).abs() < 1e-18);
            let d1 = delta_current(&cfg).unwrap();
            let d2 = delta_current(&default_pipeline(2.0 * g)).unwrap();
            prop_assert!((d2 - 2.0 * d1).abs() < 1e-17);
        }
    }
}
