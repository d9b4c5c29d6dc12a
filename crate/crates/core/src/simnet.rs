//! Event-driven simulation of coupled junctions.
//!
//! Every stochastic device carries an exponential switching clock whose rate
//! is set by its present drive current. A switch of device `k` at time `t`
//! becomes visible to the devices `k` drives at `t + delay`; at that instant
//! their currents are recomputed and, if a current changed, the remaining
//! clock is discarded and redrawn at the new rate (exact for exponential
//! dwells). Fixed-step views of a trace are produced afterwards by
//! [`sample_trace`].

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::analog::{differential_current, midpoint_current, PipelineConfig};
use crate::device::{mean_dwell_time, state_probability, MagState, SmtjParams};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// Default propagation delay of the coupling board.
pub const DEFAULT_DELAY_S: f64 = 1e-6;

/// Deterministic source replacing a junction (function-generator input).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DriveWaveform {
    /// 50 % duty square wave, toggling every `period_s / 2` starting from
    /// `initial` at t = 0.
    Square { period_s: f64, initial: MagState },
    Constant { state: MagState },
}

impl DriveWaveform {
    fn validate(&self) -> Result<()> {
        if let DriveWaveform::Square { period_s, .. } = self {
            if !(*period_s > 0.0 && period_s.is_finite()) {
                return Err(Error::InvalidConfig(format!("square drive period must be positive, got {period_s}")));
            }
        }
        Ok(())
    }

    pub fn state_at(&self, t: f64) -> MagState {
        match *self {
            DriveWaveform::Constant { state } => state,
            DriveWaveform::Square { period_s, initial } => {
                let k = (t / (0.5 * period_s)).floor() as u64;
                if k.is_multiple_of(2) {
                    initial
                } else {
                    initial.flipped()
                }
            }
        }
    }

    /// Time of toggle number `k` (k >= 1), or infinity for a constant drive.
    fn toggle_time(&self, k: u64) -> f64 {
        match *self {
            DriveWaveform::Constant { .. } => f64::INFINITY,
            DriveWaveform::Square { period_s, .. } => k as f64 * 0.5 * period_s,
        }
    }
}

/// Devices, their coupling pipelines and the propagation delay.
///
/// `coupling(j, k)` is the pipeline that senses device `k` and drives
/// device `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub devices: Vec<SmtjParams>,
    couplings: Vec<Option<PipelineConfig>>,
    pub delay_s: f64,
    pub drive_overrides: BTreeMap<usize, DriveWaveform>,
    /// Allowed mismatch between a pipeline's quiescent current and the
    /// target's balance current before a warning is emitted.
    pub balance_tolerance_a: f64,
}

impl NetworkSpec {
    pub fn new(devices: Vec<SmtjParams>, delay_s: f64) -> Self {
        let n = devices.len();
        NetworkSpec {
            devices,
            couplings: vec![None; n * n],
            delay_s,
            drive_overrides: BTreeMap::new(),
            balance_tolerance_a: 1e-9,
        }
    }

    pub fn n(&self) -> usize {
        self.devices.len()
    }

    pub fn coupling(&self, target: usize, source: usize) -> Option<&PipelineConfig> {
        self.couplings.get(target * self.n() + source).and_then(Option::as_ref)
    }

    pub fn set_coupling(&mut self, target: usize, source: usize, pipeline: Option<PipelineConfig>) -> Result<()> {
        let n = self.n();
        if target >= n || source >= n {
            return Err(Error::InvalidConfig(format!(
                "coupling ({target}, {source}) out of range for {n} devices"
            )));
        }
        if target == source && pipeline.is_some() {
            return Err(Error::InvalidConfig(format!("device {target} cannot couple to itself")));
        }
        self.couplings[target * n + source] = pipeline;
        Ok(())
    }

    pub fn set_drive(&mut self, device: usize, waveform: DriveWaveform) -> Result<()> {
        if device >= self.n() {
            return Err(Error::InvalidConfig(format!("drive override for unknown device {device}")));
        }
        waveform.validate()?;
        self.drive_overrides.insert(device, waveform);
        Ok(())
    }

    /// Incoming `(source, pipeline)` pairs of `target`, ordered by source.
    pub fn incoming(&self, target: usize) -> impl Iterator<Item = (usize, &PipelineConfig)> {
        (0..self.n()).filter_map(move |k| self.coupling(target, k).map(|c| (k, c)))
    }

    /// Checks hard invariants and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidConfig("network has no devices".into()));
        }
        if self.couplings.len() != n * n {
            return Err(Error::InvalidConfig("coupling matrix does not match device count".into()));
        }
        if !(self.delay_s >= 0.0 && self.delay_s.is_finite()) {
            return Err(Error::InvalidConfig(format!("delay_s must be >= 0, got {}", self.delay_s)));
        }
        for (i, d) in self.devices.iter().enumerate() {
            d.validate().map_err(|e| Error::InvalidConfig(format!("device {i}: {e}")))?;
        }
        for (&d, w) in &self.drive_overrides {
            if d >= n {
                return Err(Error::InvalidConfig(format!("drive override for unknown device {d}")));
            }
            w.validate()?;
        }
        let mut warnings = Vec::new();
        for j in 0..n {
            if self.coupling(j, j).is_some() {
                return Err(Error::InvalidConfig(format!("device {j} cannot couple to itself")));
            }
            for (k, cfg) in self.incoming(j) {
                cfg.validate()
                    .map_err(|e| Error::InvalidConfig(format!("coupling {k}->{j}: {e}")))?;
                let mid = midpoint_current(cfg)?;
                let target = &self.devices[j];
                if (mid - target.i_balance).abs() > self.balance_tolerance_a {
                    warnings.push(format!(
                        "coupling {k}->{j}: quiescent current {mid:.6e} A differs from device {j} balance current {:.6e} A",
                        target.i_balance
                    ));
                }
                if !self.drive_overrides.contains_key(&k) {
                    let (lo, hi) = self.devices[k].balance_voltages();
                    let r = cfg.threshold.reference_v();
                    if !(r >= lo && r < hi) {
                        warnings.push(format!(
                            "coupling {k}->{j}: threshold {r:.4} V is outside the source's sensed range [{lo:.4}, {hi:.4}) V"
                        ));
                    }
                }
            }
        }
        Ok(warnings)
    }
}

struct Input {
    source: usize,
    /// Differential current for source state P (index 0) and AP (index 1).
    contribution: [f64; 2],
}

/// Couplings flattened to per-target contribution tables.
struct Compiled {
    inputs: Vec<Vec<Input>>,
    fanout: Vec<Vec<usize>>,
}

impl Compiled {
    fn new(spec: &NetworkSpec) -> Result<Self> {
        let n = spec.n();
        let mut inputs: Vec<Vec<Input>> = (0..n).map(|_| Vec::new()).collect();
        let mut fanout: Vec<Vec<usize>> = (0..n).map(|_| Vec::new()).collect();
        for (j, list) in inputs.iter_mut().enumerate() {
            for (k, cfg) in spec.incoming(j) {
                list.push(Input {
                    source: k,
                    contribution: [
                        differential_current(cfg, MagState::P)?,
                        differential_current(cfg, MagState::AP)?,
                    ],
                });
                fanout[k].push(j);
            }
        }
        Ok(Compiled { inputs, fanout })
    }

    fn current(&self, spec: &NetworkSpec, device: usize, visible: &[MagState]) -> f64 {
        spec.devices[device].i_balance
            + self.inputs[device]
                .iter()
                .map(|inp| inp.contribution[visible[inp.source].bit() as usize])
                .sum::<f64>()
    }
}

/// Drive current of `device` given the states its sources present after the
/// propagation delay: its balance current plus one `+/- delta_i` per incoming
/// pipeline.
pub fn effective_current(spec: &NetworkSpec, device: usize, delayed_states: &[MagState]) -> Result<f64> {
    if delayed_states.len() != spec.n() {
        return Err(Error::InvalidArgument(format!(
            "expected {} delayed states, got {}",
            spec.n(),
            delayed_states.len()
        )));
    }
    if device >= spec.n() {
        return Err(Error::InvalidArgument(format!("no device {device}")));
    }
    let i = Compiled::new(spec)?.current(spec, device, delayed_states);
    let limit = spec.devices[device].i_breakdown;
    if i >= limit {
        return Err(Error::Breakdown {
            device: Some(device),
            current_a: i,
            limit_a: limit,
        });
    }
    Ok(i)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub device: usize,
    pub new_state: MagState,
}

/// Switching history of one device. The first event is the initial state at
/// t = 0; states alternate afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TelegraphTrace {
    pub device: usize,
    pub events: Vec<(f64, MagState)>,
    pub t_end: f64,
    pub sample_dt: Option<f64>,
    /// False when the run that produced the trace was aborted.
    pub valid: bool,
}

impl TelegraphTrace {
    pub fn state_at(&self, t: f64) -> MagState {
        let idx = self.events.partition_point(|&(te, _)| te <= t);
        self.events[idx.saturating_sub(1)].1
    }

    /// `(state, start, end)` for every constant stretch, the last one ending
    /// at `t_end`.
    pub fn segments(&self) -> impl Iterator<Item = (MagState, f64, f64)> + '_ {
        self.events.iter().enumerate().map(move |(i, &(t, s))| {
            let end = self.events.get(i + 1).map_or(self.t_end, |e| e.0);
            (s, t, end)
        })
    }

    pub fn switch_count(&self) -> usize {
        self.events.len().saturating_sub(1)
    }

    /// Time spent in AP divided by `t_end`.
    pub fn ap_fraction(&self) -> f64 {
        self.segments()
            .filter(|s| s.0 == MagState::AP)
            .map(|(_, a, b)| b - a)
            .sum::<f64>()
            / self.t_end
    }
}

/// Run the network for `t_end` seconds from random initial states.
pub fn simulate(spec: &NetworkSpec, t_end: f64, seed: u64) -> Result<Vec<TelegraphTrace>> {
    simulate_from(spec, t_end, None, &mut rng::master(seed))
}

/// [`simulate`] with explicit initial states and random stream.
///
/// Without `initial`, each stochastic device starts in AP with its balance
/// probability.
pub fn simulate_from(
    spec: &NetworkSpec,
    t_end: f64,
    initial: Option<&[MagState]>,
    rng: &mut SimRng,
) -> Result<Vec<TelegraphTrace>> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    for w in spec.validate()? {
        log::warn!("{w}");
    }
    let n = spec.n();
    let compiled = Compiled::new(spec)?;
    let drives: Vec<Option<DriveWaveform>> = (0..n).map(|j| spec.drive_overrides.get(&j).copied()).collect();

    let mut state: Vec<MagState> = match initial {
        Some(s) if s.len() == n => s.to_vec(),
        Some(s) => {
            return Err(Error::InvalidArgument(format!("expected {n} initial states, got {}", s.len())));
        }
        None => {
            let mut out = Vec::with_capacity(n);
            for (j, d) in spec.devices.iter().enumerate() {
                out.push(match drives[j] {
                    Some(w) => w.state_at(0.0),
                    None => {
                        let p_ap = state_probability(d, MagState::AP, d.i_balance)?;
                        if rng.random::<f64>() < p_ap {
                            MagState::AP
                        } else {
                            MagState::P
                        }
                    }
                });
            }
            out
        }
    };
    for (j, w) in drives.iter().enumerate() {
        if let Some(w) = w {
            state[j] = w.state_at(0.0);
        }
    }

    let mut events: Vec<Vec<(f64, MagState)>> = state.iter().map(|&s| vec![(0.0, s)]).collect();
    let mut visible = state.clone();
    let mut current: Vec<f64> = (0..n).map(|j| compiled.current(spec, j, &visible)).collect();
    let mut toggles = vec![0_u64; n];
    let mut next = vec![f64::INFINITY; n];

    let abort = |events: Vec<Vec<(f64, MagState)>>, time_s: f64, device: usize, current_a: f64| {
        Error::SimulationAborted {
            time_s,
            device,
            current_a,
            limit_a: spec.devices[device].i_breakdown,
            partial: finish(events, t_end, false),
        }
    };

    for j in 0..n {
        next[j] = match drives[j] {
            Some(w) => {
                toggles[j] = 1;
                w.toggle_time(1)
            }
            None => {
                if current[j] >= spec.devices[j].i_breakdown {
                    return Err(abort(events, 0.0, j, current[j]));
                }
                draw(&spec.devices[j], state[j], current[j], rng)?
            }
        };
    }

    let mut pending: VecDeque<(f64, usize, MagState)> = VecDeque::new();
    loop {
        let (sw_dev, t_sw) = next
            .iter()
            .enumerate()
            .fold((usize::MAX, f64::INFINITY), |best, (j, &t)| if t < best.1 { (j, t) } else { best });
        let t_inf = pending.front().map_or(f64::INFINITY, |e| e.0);

        if t_inf <= t_sw {
            if t_inf >= t_end {
                break;
            }
            let (t, k, s) = pending.pop_front().expect("front exists");
            visible[k] = s;
            for &j in &compiled.fanout[k] {
                let i = compiled.current(spec, j, &visible);
                if i == current[j] {
                    continue;
                }
                current[j] = i;
                if drives[j].is_none() {
                    if i >= spec.devices[j].i_breakdown {
                        return Err(abort(events, t, j, i));
                    }
                    next[j] = t + draw(&spec.devices[j], state[j], i, rng)?;
                }
            }
        } else {
            if t_sw >= t_end {
                break;
            }
            let j = sw_dev;
            state[j] = state[j].flipped();
            events[j].push((t_sw, state[j]));
            next[j] = match drives[j] {
                Some(w) => {
                    toggles[j] += 1;
                    w.toggle_time(toggles[j])
                }
                None => t_sw + draw(&spec.devices[j], state[j], current[j], rng)?,
            };
            if !compiled.fanout[j].is_empty() {
                pending.push_back((t_sw + spec.delay_s, j, state[j]));
            }
        }
    }
    Ok(finish(events, t_end, true))
}

fn draw(params: &SmtjParams, state: MagState, i: f64, rng: &mut SimRng) -> Result<f64> {
    let unit: f64 = Exp1.sample(rng);
    Ok(mean_dwell_time(params, state, i)? * unit)
}

fn finish(events: Vec<Vec<(f64, MagState)>>, t_end: f64, valid: bool) -> Vec<TelegraphTrace> {
    events
        .into_iter()
        .enumerate()
        .map(|(device, events)| TelegraphTrace {
            device,
            events,
            t_end,
            sample_dt: None,
            valid,
        })
        .collect()
}

/// Joint-state index with device 0 as the most significant bit, so for a
/// pair `(P,P)=0, (P,AP)=1, (AP,P)=2, (AP,AP)=3`.
pub fn joint_index(states: &[MagState]) -> usize {
    states.iter().fold(0, |acc, s| (acc << 1) | s.bit() as usize)
}

pub fn joint_states(index: usize, n: usize) -> Vec<MagState> {
    (0..n).map(|a| MagState::from_bit(((index >> (n - 1 - a)) & 1) as u8)).collect()
}

/// Zero-delay transition-rate matrix over all `2^N` joint states (rows are
/// sources, rows sum to zero).
pub fn rate_matrix(spec: &NetworkSpec) -> Result<DMatrix<f64>> {
    let n = spec.n();
    if n > 12 {
        return Err(Error::Unsupported(format!("rate matrix for {n} devices is too large")));
    }
    if !spec.drive_overrides.is_empty() {
        return Err(Error::Unsupported("rate matrix undefined with deterministic drives".into()));
    }
    spec.validate()?;
    let compiled = Compiled::new(spec)?;
    let size = 1usize << n;
    let mut q = DMatrix::<f64>::zeros(size, size);
    for x in 0..size {
        let states = joint_states(x, n);
        let mut total = 0.0;
        for a in 0..n {
            let i = compiled.current(spec, a, &states);
            let rate = 1.0 / mean_dwell_time(&spec.devices[a], states[a], i)?;
            let y = x ^ (1 << (n - 1 - a));
            q[(x, y)] = rate;
            total += rate;
        }
        q[(x, x)] = -total;
    }
    Ok(q)
}

fn first_sample_at_or_after(t: f64, dt: f64) -> usize {
    (t / dt).ceil() as usize
}

/// Number of samples `k * dt < t_end` in a trace of length `t_end`.
pub fn sample_count(t_end: f64, dt: f64) -> usize {
    first_sample_at_or_after(t_end, dt)
}

/// Samples of each constant stretch of `trace`: `(state, n_samples)`,
/// zero-length entries included. Sample `k` at `k * dt` takes the state of
/// the last event at or before it.
pub fn segment_sample_counts(trace: &TelegraphTrace, dt: f64) -> impl Iterator<Item = (MagState, usize)> + '_ {
    trace.segments().map(move |(s, a, b)| {
        let lo = first_sample_at_or_after(a, dt);
        let hi = first_sample_at_or_after(b, dt);
        (s, hi.saturating_sub(lo))
    })
}

/// Zero-order-hold sampling at interval `dt`, as 0/1 (AP = 1). Excursions
/// shorter than `dt` can fall between samples and vanish.
pub fn sample_trace(trace: &TelegraphTrace, dt: f64) -> Result<Vec<u8>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut out = Vec::with_capacity(sample_count(trace.t_end, dt));
    for (s, count) in segment_sample_counts(trace, dt) {
        out.extend(std::iter::repeat_n(s.bit(), count));
    }
    Ok(out)
}

/// Event CSV: `device,time_s,state`, time-ordered (device index breaks ties).
pub fn write_events_csv<W: Write>(mut w: W, traces: &[TelegraphTrace]) -> io::Result<()> {
    let mut rows: Vec<(f64, usize, u8)> = traces
        .iter()
        .flat_map(|t| t.events.iter().map(move |&(time, s)| (time, t.device, s.bit())))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    writeln!(w, "device,time_s,state")?;
    for (time, d, s) in rows {
        writeln!(w, "{d},{time:e},{s}")?;
    }
    Ok(())
}

/// Sampled CSV: `time_s,d0,d1,...`.
pub fn write_sampled_csv<W: Write>(mut w: W, traces: &[TelegraphTrace], dt: f64) -> Result<()> {
    let series = traces
        .iter()
        .map(|t| sample_trace(t, dt))
        .collect::<Result<Vec<_>>>()?;
    let io = |e: io::Error| Error::InvalidArgument(format!("write failed: {e}"));
    let header: Vec<String> = std::iter::once("time_s".to_string())
        .chain(traces.iter().map(|t| format!("d{}", t.device)))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    for k in 0..len {
        write!(w, "{:e}", k as f64 * dt).map_err(io)?;
        for s in &series {
            write!(w, ",{}", s[k]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analog::{delta_current, BoardDefaults, Polarity};
    use crate::device::state_probability;
    use crate::presets;

    fn pair(gain: f64, polarity: Polarity, delay: f64) -> NetworkSpec {
        let d = presets::device("smtj1").unwrap();
        let mut spec = NetworkSpec::new(vec![d, d], delay);
        let board = BoardDefaults::default();
        let cfg = PipelineConfig::between(&board, &d, &d, gain, polarity);
        spec.set_coupling(0, 1, Some(cfg)).unwrap();
        spec.set_coupling(1, 0, Some(cfg)).unwrap();
        spec
    }

    fn trace(events: &[(f64, MagState)], t_end: f64) -> TelegraphTrace {
        TelegraphTrace {
            device: 0,
            events: events.to_vec(),
            t_end,
            sample_dt: None,
            valid: true,
        }
    }

    #[test]
    fn target_current_follows_source_state() {
        let spec = pair(0.05, Polarity::Positive, 0.0);
        let d = spec.devices[1];
        let di = delta_current(spec.coupling(1, 0).unwrap()).unwrap();
        let i = effective_current(&spec, 1, &[MagState::P, MagState::P]).unwrap();
        assert!((i - (d.i_balance - di)).abs() < 1e-18);
        let i = effective_current(&spec, 1, &[MagState::AP, MagState::P]).unwrap();
        assert!((i - (d.i_balance + di)).abs() < 1e-18);
    }

    #[test]
    fn zero_gain_leaves_balance_current() {
        let spec = pair(0.0, Polarity::Positive, 0.0);
        for s in [[MagState::P, MagState::AP], [MagState::AP, MagState::AP]] {
            for j in 0..2 {
                assert_eq!(effective_current(&spec, j, &s).unwrap(), spec.devices[j].i_balance);
            }
        }
    }

    #[test]
    fn opposite_sources_cancel_for_three_devices() {
        let d = presets::device("smtj1").unwrap();
        let mut spec = NetworkSpec::new(vec![d, d, d], 0.0);
        let cfg = PipelineConfig::between(&BoardDefaults::default(), &d, &d, 0.04, Polarity::Positive);
        spec.set_coupling(2, 0, Some(cfg)).unwrap();
        spec.set_coupling(2, 1, Some(cfg)).unwrap();
        let i = effective_current(&spec, 2, &[MagState::AP, MagState::P, MagState::P]).unwrap();
        assert!((i - d.i_balance).abs() < 1e-18);
    }

    #[test]
    fn self_coupling_and_bad_delay_rejected() {
        let mut spec = pair(0.01, Polarity::Positive, 0.0);
        let cfg = *spec.coupling(0, 1).unwrap();
        assert!(spec.set_coupling(0, 0, Some(cfg)).is_err());
        spec.delay_s = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn quiescent_mismatch_warns() {
        let mut spec = pair(0.01, Polarity::Positive, 0.0);
        assert!(spec.validate().unwrap().is_empty());
        let mut cfg = *spec.coupling(1, 0).unwrap();
        cfg.shift.v_bias_v += 0.1;
        spec.set_coupling(1, 0, Some(cfg)).unwrap();
        let w = spec.validate().unwrap();
        assert_eq!(w.len(), 1, "{w:?}");
    }

    #[test]
    fn breakdown_reported_by_effective_current_and_simulate() {
        let spec = pair(1.0, Polarity::Positive, 0.0);
        assert!(effective_current(&spec, 1, &[MagState::AP, MagState::AP])
            .unwrap_err()
            .is_breakdown());
        match simulate(&spec, 1e-3, 1) {
            Err(Error::SimulationAborted { partial, .. }) => {
                assert_eq!(partial.len(), 2);
                assert!(partial.iter().all(|t| !t.valid));
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn traces_are_deterministic_alternating_and_span_t_end() {
        let spec = pair(0.03, Polarity::Positive, 1e-6);
        let a = simulate(&spec, 0.05, 17).unwrap();
        let b = simulate(&spec, 0.05, 17).unwrap();
        assert_eq!(a, b);
        let c = simulate(&spec, 0.05, 18).unwrap();
        assert_ne!(a, c);
        for t in &a {
            assert_eq!(t.events[0].0, 0.0);
            assert_eq!(t.t_end, 0.05);
            assert!(t.events.windows(2).all(|w| w[0].1 != w[1].1 && w[0].0 <= w[1].0));
            assert!(t.events.last().unwrap().0 < t.t_end);
            let total: f64 = t.segments().map(|(_, a, b)| b - a).sum();
            assert!((total - t.t_end).abs() < 1e-12);
        }
    }

    #[test]
    fn uncoupled_devices_sit_at_half_occupancy() {
        let spec = pair(0.0, Polarity::Positive, 0.0);
        let tau = spec.devices[0].tau_at_balance();
        // ~1e6 switches across the pair
        let traces = simulate(&spec, 5e5 * tau, 5).unwrap();
        let switches: usize = traces.iter().map(|t| t.switch_count()).sum();
        assert!(switches > 900_000);
        for t in &traces {
            // indicator autocovariance is exp(-2t/tau)/4, so the time average
            // has variance tau / (4 T)
            let se = 0.5 * (tau / t.t_end).sqrt();
            assert!((t.ap_fraction() - 0.5).abs() < 3.0 * se, "{} vs se {se}", t.ap_fraction());
        }
    }

    #[test]
    fn square_drive_reproduces_single_device_sigmoid() {
        let d = presets::device("smtj1").unwrap();
        let tau = d.tau_at_balance();
        let mut spec = pair(0.03, Polarity::Positive, 1e-6);
        let period = 4000.0 * tau;
        spec.set_drive(0, DriveWaveform::Square { period_s: period, initial: MagState::P }).unwrap();
        let di = delta_current(spec.coupling(1, 0).unwrap()).unwrap();
        let traces = simulate(&spec, 40.0 * period, 8).unwrap();
        let drive = &traces[0];
        assert_eq!(drive.switch_count(), 79);
        let mut ap_time = [0.0; 2];
        let mut level_time = [0.0; 2];
        for (s, a, b) in traces[1].segments() {
            // split each target segment over drive levels
            let mut t = a;
            while t < b {
                let level = drive.state_at(t).bit() as usize;
                let mut k = (t / (0.5 * period)).floor() + 1.0;
                if k * 0.5 * period <= t {
                    k += 1.0;
                }
                let edge = (k * 0.5 * period).min(b);
                level_time[level] += edge - t;
                if s == MagState::AP {
                    ap_time[level] += edge - t;
                }
                t = edge;
            }
        }
        for (level, sign) in [(0, -1.0), (1, 1.0)] {
            let want = state_probability(&d, MagState::AP, d.i_balance + sign * di).unwrap();
            let got = ap_time[level] / level_time[level];
            assert!((got - want).abs() < 0.01, "level {level}: {got} vs {want}");
        }
    }

    #[test]
    fn rate_matrix_rows_sum_to_zero() {
        let spec = pair(0.04, Polarity::Negative, 0.0);
        let q = rate_matrix(&spec).unwrap();
        for r in 0..4 {
            let s: f64 = q.row(r).iter().sum();
            assert!(s.abs() < 1e-9 * q[(r, r)].abs());
            assert_eq!(q[(r, r ^ 3)], 0.0);
        }
    }

    #[test]
    fn joint_index_convention() {
        assert_eq!(joint_index(&[MagState::P, MagState::AP]), 1);
        assert_eq!(joint_index(&[MagState::AP, MagState::P]), 2);
        for x in 0..8 {
            assert_eq!(joint_index(&joint_states(x, 3)), x);
        }
    }

    #[test]
    fn sampling_fine_grid_is_lossless() {
        let t = trace(&[(0.0, MagState::P), (0.35, MagState::AP), (0.9, MagState::P), (1.4, MagState::AP)], 2.0);
        let s = sample_trace(&t, 0.01).unwrap();
        let mut runs: Vec<u8> = Vec::new();
        for &b in &s {
            if runs.last() != Some(&b) {
                runs.push(b);
            }
        }
        assert_eq!(runs, vec![0, 1, 0, 1]);
        assert_eq!(s.len(), sample_count(2.0, 0.01));
    }

    #[test]
    fn short_excursion_between_samples_vanishes() {
        let dt = 1.0;
        let t = trace(&[(0.0, MagState::P), (5.2, MagState::AP), (5.6, MagState::P)], 10.6);
        let s = sample_trace(&t, dt).unwrap();
        assert_eq!(s.len(), 11);
        assert!(s.iter().all(|&b| b == 0));
    }

    #[test]
    fn zero_dt_rejected() {
        let t = trace(&[(0.0, MagState::P)], 1.0);
        assert!(sample_trace(&t, 0.0).is_err());
    }

    #[test]
    fn csv_exports() {
        let a = trace(&[(0.0, MagState::P), (0.5, MagState::AP)], 1.0);
        let mut b = trace(&[(0.0, MagState::AP), (0.25, MagState::P)], 1.0);
        b.device = 1;
        let mut out = Vec::new();
        write_events_csv(&mut out, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "device,time_s,state\n0,0e0,0\n1,0e0,1\n1,2.5e-1,0\n0,5e-1,1\n");
        let mut out = Vec::new();
        write_sampled_csv(&mut out, &[a, b], 0.5).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "time_s,d0,d1\n0e0,0,1\n5e-1,1,0\n");
    }
}
