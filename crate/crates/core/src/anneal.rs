//! Ising energies, Boltzmann predictions and gain-schedule annealing over a
//! simulated network.
//!
//! Conventions: spin `P = -1`, `AP = +1`; `E = sum_{a<b} J_ab s_a s_b`;
//! `kT = 1`. `J < 0` favours equal states and is realized with
//! positive-polarity pipelines, `J > 0` with negative polarity. Pipeline gain
//! on edge `(a, b)` is `G * |J_ab| / max|J|`.

use serde::{Deserialize, Serialize};

use crate::analog::{delta_current, differential_current, BoardDefaults, PipelineConfig, Polarity};
use crate::device::{MagState, SmtjParams};
use crate::error::{Error, Result};
use crate::markov::slowest_mode;
use crate::rng;
use crate::simnet::{joint_states, rate_matrix, simulate_from, NetworkSpec, TelegraphTrace};
use crate::stats::{joint_occupancy, joint_segments};

pub const CONVENTION: &str = "spins P=-1 AP=+1; E = sum_{a<b} J_ab s_a s_b; kT = 1; \
J<0 (same-state favouring) uses positive-polarity pipelines, J>0 negative; \
edge gain = G*|J_ab|/max|J|; joint index has device 0 as the high bit";

/// Largest gain the pipelines are specified for.
pub const MAX_GAIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingProblem {
    pub n: usize,
    /// Row-major `n x n`, symmetric with zero diagonal.
    pub j: Vec<f64>,
}

impl IsingProblem {
    pub fn new(n: usize, j: Vec<f64>) -> Result<Self> {
        let p = IsingProblem { n, j };
        p.validate()?;
        Ok(p)
    }

    /// Two spins with coupling `j12`.
    pub fn pair(j12: f64) -> Self {
        IsingProblem { n: 2, j: vec![0.0, j12, j12, 0.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.j.len() != self.n * self.n {
            return Err(Error::InvalidConfig(format!(
                "coupling matrix must be {0}x{0}, got {1} entries",
                self.n,
                self.j.len()
            )));
        }
        for a in 0..self.n {
            if self.at(a, a) != 0.0 {
                return Err(Error::InvalidConfig(format!("J[{a}][{a}] must be 0")));
            }
            for b in 0..self.n {
                if !self.at(a, b).is_finite() || self.at(a, b) != self.at(b, a) {
                    return Err(Error::InvalidConfig(format!("J must be finite and symmetric at ({a},{b})")));
                }
            }
        }
        Ok(())
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.j[a * self.n + b]
    }

    pub fn max_abs(&self) -> f64 {
        self.j.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `sum_{a<b} J_ab s_a s_b`.
pub fn model_energy(problem: &IsingProblem, config: &[MagState]) -> Result<f64> {
    if config.len() != problem.n {
        return Err(Error::InvalidArgument(format!(
            "expected {} spins, got {}",
            problem.n,
            config.len()
        )));
    }
    let mut e = 0.0;
    for a in 0..problem.n {
        for b in a + 1..problem.n {
            e += problem.at(a, b) * config[a].spin() * config[b].spin();
        }
    }
    Ok(e)
}

/// Energies of all `2^N` joint states in joint-index order.
pub fn energy_table(problem: &IsingProblem) -> Result<Vec<f64>> {
    if problem.n > 24 {
        return Err(Error::Unsupported(format!("{} spins is too many to enumerate", problem.n)));
    }
    (0..1usize << problem.n)
        .map(|x| model_energy(problem, &joint_states(x, problem.n)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannPrediction {
    pub probabilities: Vec<f64>,
    /// `T / G`; `None` at `G = 0`.
    pub t_eff: Option<f64>,
}

/// Distribution `exp(-G E / T) / Z` over energies given in joint-index order.
pub fn boltzmann_from_energies(energies: &[f64], gain: f64, temperature: f64) -> Result<BoltzmannPrediction> {
    if !(gain >= 0.0 && gain.is_finite()) {
        return Err(Error::InvalidArgument(format!("gain must be >= 0, got {gain}")));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let beta = gain / temperature;
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|e| (-beta * (e - e_min)).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(BoltzmannPrediction {
        probabilities: w.into_iter().map(|v| v / z).collect(),
        t_eff: (gain > 0.0).then(|| temperature / gain),
    })
}

pub fn boltzmann_distribution(problem: &IsingProblem, gain: f64, temperature: f64) -> Result<BoltzmannPrediction> {
    boltzmann_from_energies(&energy_table(problem)?, gain, temperature)
}

/// Map from pipeline gain to dwell factor and effective temperature for one
/// target device. `g(G) = exp(B * delta_i(G))` is exponential in `G`
/// because `delta_i` is linear in it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCalibration {
    /// `B * d(delta_i)/dG`.
    pub ln_g_per_gain: f64,
    /// Model temperature for unit `|J|`: `1 / ln_g_per_gain`.
    pub temperature: f64,
}

impl GainCalibration {
    pub fn ln_g(&self, gain: f64) -> f64 {
        self.ln_g_per_gain * gain
    }

    pub fn g(&self, gain: f64) -> f64 {
        self.ln_g(gain).exp()
    }

    pub fn t_eff(&self, gain: f64) -> Option<f64> {
        (gain > 0.0).then(|| self.temperature / gain)
    }
}

/// Calibrate from the pipeline's `delta_i` at unit gain and the target's
/// slope `B`. The pipeline's own gain setting is ignored.
pub fn calibrate_gain_to_temperature(pipeline: &PipelineConfig, device: &SmtjParams) -> Result<GainCalibration> {
    device.validate()?;
    let di = delta_current(&pipeline.with_gain(1.0))?;
    let k = device.slope_b().0 * di;
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidConfig(format!("gain does not change the dwell factor (B*dI/dG = {k})")));
    }
    Ok(GainCalibration { ln_g_per_gain: k, temperature: 1.0 / k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealStep {
    pub duration_s: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub steps: Vec<AnnealStep>,
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::InvalidConfig("schedule has no steps".into()));
        }
        let mut prev = 0.0;
        for (k, s) in self.steps.iter().enumerate() {
            if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
                return Err(Error::InvalidConfig(format!("step {k}: duration must be positive")));
            }
            if !(0.0..=MAX_GAIN).contains(&s.gain) {
                return Err(Error::InvalidConfig(format!("step {k}: gain {} outside [0, {MAX_GAIN}]", s.gain)));
            }
            if s.gain < prev {
                return Err(Error::InvalidConfig(format!("step {k}: gain decreases from {prev} to {}", s.gain)));
            }
            prev = s.gain;
        }
        Ok(())
    }

    /// Steps at `gains`, each lasting `multiple / |Re lambda_1|` of the
    /// zero-delay network at that gain.
    pub fn with_relaxation_durations(
        problem: &IsingProblem,
        template: &NetworkSpec,
        gains: &[f64],
        multiple: f64,
    ) -> Result<Self> {
        let steps = gains
            .iter()
            .map(|&gain| {
                let spec = network_at_gain(problem, template, gain)?;
                Ok(AnnealStep { duration_s: multiple * relaxation_time(&spec)?, gain })
            })
            .collect::<Result<Vec<_>>>()?;
        let s = AnnealSchedule { steps };
        s.validate()?;
        Ok(s)
    }
}

/// `1 / |Re lambda_1|` of the network's zero-delay rate matrix.
pub fn relaxation_time(spec: &NetworkSpec) -> Result<f64> {
    let mut spec = spec.clone();
    spec.drive_overrides.clear();
    let ev = slowest_mode(&rate_matrix(&spec)?)?;
    if !(ev.re < 0.0) {
        return Err(Error::NumericalFailure(format!("slowest mode {ev} is not decaying")));
    }
    Ok(-1.0 / ev.re)
}

/// The template with every nonzero `J` edge wired in both directions at
/// gain `G * |J| / max|J|`. Existing template couplings are kept as circuit
/// templates (gain and polarity overwritten); missing ones use board
/// defaults.
pub fn network_at_gain(problem: &IsingProblem, template: &NetworkSpec, gain: f64) -> Result<NetworkSpec> {
    problem.validate()?;
    if template.n() != problem.n {
        return Err(Error::InvalidConfig(format!(
            "problem has {} spins but the network has {} devices",
            problem.n,
            template.n()
        )));
    }
    let jmax = problem.max_abs();
    let board = BoardDefaults::default();
    let mut spec = template.clone();
    for target in 0..problem.n {
        for source in 0..problem.n {
            let j = problem.at(target, source);
            if j == 0.0 {
                spec.set_coupling(target, source, None)?;
                continue;
            }
            let polarity = if j < 0.0 { Polarity::Positive } else { Polarity::Negative };
            let edge_gain = gain * j.abs() / jmax;
            let mut cfg = match template.coupling(target, source) {
                Some(c) => (*c).with_gain(edge_gain),
                None => PipelineConfig::between(
                    &board,
                    &template.devices[source],
                    &template.devices[target],
                    edge_gain,
                    polarity,
                ),
            };
            cfg.threshold.polarity = polarity;
            spec.set_coupling(target, source, Some(cfg))?;
        }
    }
    Ok(spec)
}

/// Largest current any device can see in `spec`, as `(device, current)`.
fn worst_current(spec: &NetworkSpec) -> Result<Vec<f64>> {
    (0..spec.n())
        .map(|j| {
            let mut i = spec.devices[j].i_balance;
            for (_, cfg) in spec.incoming(j) {
                i += differential_current(cfg, MagState::P)?.max(differential_current(cfg, MagState::AP)?);
            }
            Ok(i)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealStepReport {
    pub index: usize,
    pub gain: f64,
    pub duration_s: f64,
    pub t_eff: Option<f64>,
    /// Time-weighted joint-state occupancy over the step.
    pub empirical: Vec<f64>,
    pub predicted: Vec<f64>,
    pub tv_distance: f64,
    pub mean_energy: f64,
    pub switches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyPoint {
    pub time_s: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominantConfig {
    pub index: usize,
    /// Device states as `0`/`1` characters, device 0 first.
    pub label: String,
    pub energy: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealReport {
    pub convention: String,
    pub seed: u64,
    pub problem: IsingProblem,
    pub calibrations: Vec<GainCalibration>,
    /// Calibration used for the Boltzmann predictions (device 0).
    pub temperature: f64,
    /// False when the devices' calibrations differ, in which case the
    /// network need not sample a Boltzmann distribution.
    pub reversible: bool,
    pub steps: Vec<AnnealStepReport>,
    /// Final-step configurations holding at least half the top occupancy.
    pub dominant: Vec<DominantConfig>,
    pub energy_trace: Vec<EnergyPoint>,
    /// Per-device traces over the whole schedule.
    #[serde(skip)]
    pub traces: Vec<TelegraphTrace>,
}

fn config_label(index: usize, n: usize) -> String {
    joint_states(index, n).iter().map(|s| if s.bit() == 1 { '1' } else { '0' }).collect()
}

fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Run the schedule. Step `k` draws from random stream `k` of `seed` and
/// starts from the final states of step `k - 1`; step 0 starts from random
/// balance-probability states.
pub fn anneal(problem: &IsingProblem, template: &NetworkSpec, schedule: &AnnealSchedule, seed: u64) -> Result<AnnealReport> {
    problem.validate()?;
    schedule.validate()?;
    let n = problem.n;
    let energies = energy_table(problem)?;

    let specs = schedule
        .steps
        .iter()
        .map(|s| network_at_gain(problem, template, s.gain))
        .collect::<Result<Vec<_>>>()?;
    for (k, (step, spec)) in schedule.steps.iter().zip(&specs).enumerate() {
        for (device, &i) in worst_current(spec)?.iter().enumerate() {
            let limit = spec.devices[device].i_breakdown;
            if i >= limit {
                return Err(Error::ScheduleBreakdown { step: k, gain: step.gain, device, current_a: i, limit_a: limit });
            }
        }
    }

    let unit = network_at_gain(problem, template, 1.0)?;
    let calibrations = (0..n)
        .map(|j| match unit.incoming(j).next() {
            Some((_, cfg)) => calibrate_gain_to_temperature(cfg, &unit.devices[j]).map(Some),
            None => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    let calibrations: Vec<GainCalibration> = calibrations.into_iter().flatten().collect();
    let jmax = problem.max_abs();
    let (temperature, reversible) = match calibrations.first() {
        // the calibration is for unit |J|; energies are in units of J
        Some(c) => (
            c.temperature * jmax,
            calibrations.iter().all(|d| (d.ln_g_per_gain / c.ln_g_per_gain - 1.0).abs() < 1e-9),
        ),
        None => (1.0, true),
    };

    let mut traces: Vec<TelegraphTrace> = (0..n)
        .map(|d| TelegraphTrace { device: d, events: Vec::new(), t_end: 0.0, sample_dt: None, valid: true })
        .collect();
    let mut steps = Vec::with_capacity(specs.len());
    let mut energy_trace = Vec::new();
    let mut current: Option<Vec<MagState>> = None;
    let mut offset = 0.0;
    for (k, (step, spec)) in schedule.steps.iter().zip(&specs).enumerate() {
        let mut stream = rng::stream(seed, k as u64);
        let run = simulate_from(spec, step.duration_s, current.as_deref(), &mut stream)?;
        let refs: Vec<&TelegraphTrace> = run.iter().collect();
        let empirical = joint_occupancy(&refs)?;
        let predicted = boltzmann_from_energies(&energies, step.gain, temperature)?.probabilities;
        let mut mean_energy = 0.0;
        for (s, lo, hi) in joint_segments(&refs)? {
            energy_trace.push(EnergyPoint { time_s: offset + lo, energy: energies[s] });
            mean_energy += energies[s] * (hi - lo) / step.duration_s;
        }
        steps.push(AnnealStepReport {
            index: k,
            gain: step.gain,
            duration_s: step.duration_s,
            t_eff: (step.gain > 0.0).then(|| temperature / step.gain),
            tv_distance: tv_distance(&empirical, &predicted),
            empirical,
            predicted,
            mean_energy,
            switches: run.iter().map(TelegraphTrace::switch_count).sum(),
        });
        for (whole, part) in traces.iter_mut().zip(&run) {
            let skip = usize::from(!whole.events.is_empty() && whole.events.last().map(|e| e.1) == Some(part.events[0].1));
            whole.events.extend(part.events[skip..].iter().map(|&(t, s)| (t + offset, s)));
        }
        offset += step.duration_s;
        current = Some(run.iter().map(|t| t.state_at(t.t_end)).collect());
    }
    for t in &mut traces {
        t.t_end = offset;
    }

    let last = &steps.last().expect("schedule is nonempty").empirical;
    let top = last.iter().copied().fold(0.0, f64::max);
    let mut dominant: Vec<DominantConfig> = last
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p >= 0.5 * top && p > 0.0)
        .map(|(i, &p)| DominantConfig { index: i, label: config_label(i, n), energy: energies[i], probability: p })
        .collect();
    dominant.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.index.cmp(&b.index)));

    Ok(AnnealReport {
        convention: CONVENTION.to_string(),
        seed,
        problem: problem.clone(),
        calibrations,
        temperature,
        reversible,
        steps,
        dominant,
        energy_trace,
        traces,
    })
}

/// Energy trace CSV: `time_s,energy`.
pub fn write_energy_csv<W: std::io::Write>(mut w: W, report: &AnnealReport) -> std::io::Result<()> {
    writeln!(w, "time_s,energy")?;
    for p in &report.energy_trace {
        writeln!(w, "{:e},{}", p.time_s, p.energy)?;
    }
    Ok(())
}
