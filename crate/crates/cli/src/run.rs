//! The five subcommands as library functions. Each writes its files under
//! `RunOptions::out_dir` and returns the summary it wrote.
//!
//! Seed policy: a run draws from `stream(seed, 0)`; sweep point `k` draws
//! from `stream(seed, k)` whichever worker runs it; annealing step `k` draws
//! from `stream(seed, k)`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use smtjsim::analog::{delta_current, Polarity};
use smtjsim::anneal::{anneal, write_energy_csv, AnnealReport, AnnealSchedule, AnnealStep};
use smtjsim::markov::{
    build_generator, joint_dwell_times, pair_model_from_devices, predict_correlation, slowest_eigenvalue,
    spectrum, steady_state, swap_devices, CoupledPairModel,
};
use smtjsim::simnet::{simulate_from, write_events_csv, write_sampled_csv, NetworkSpec, TelegraphTrace};
use smtjsim::stats::{
    equilibration_check, event_joint_dwell_stats, joint_occupancy, sampled_interior_dwell_stats,
    sampled_pearson, write_dwell_csv, write_pearson_csv, CorrelationResult, JointDwellSummary,
};
use smtjsim::{rng, Error};

use crate::config::ExperimentSpec;
use crate::error::{CliError, CliResult};
use crate::output::{io_at, write_atomic, write_json, write_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub format: Format,
    /// Worker threads for sweeps; `None` uses all cores.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceStats {
    pub device: usize,
    pub switches: usize,
    pub ap_fraction: f64,
}

/// Statistics of devices 0 and 1 read together.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStats {
    /// Time-weighted joint occupancy.
    pub occupancy: Vec<f64>,
    /// Dwell times of the sampled series, censored end runs excluded.
    pub dwell: JointDwellSummary,
    /// Dwell times from the event record, censored end runs excluded.
    pub event_dwell: JointDwellSummary,
    pub pearson: Option<CorrelationResult>,
    pub pearson_error: Option<String>,
    /// Windowed occupancies agree across the record (20 windows).
    pub equilibrated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stream: u64,
    pub gain: f64,
    pub duration_s: f64,
    pub sample_dt_s: f64,
    /// False when the run was aborted at a breakdown; statistics then cover
    /// the partial record up to `duration_s` and should not be used.
    pub valid: bool,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub devices: Vec<DeviceStats>,
    pub pair: Option<PairStats>,
}

fn device_stats(traces: &[TelegraphTrace]) -> Vec<DeviceStats> {
    traces
        .iter()
        .map(|t| DeviceStats { device: t.device, switches: t.switch_count(), ap_fraction: t.ap_fraction() })
        .collect()
}

pub fn pair_stats(a: &TelegraphTrace, b: &TelegraphTrace, dt: f64) -> CliResult<PairStats> {
    let (pearson, pearson_error) = match sampled_pearson(a, b, dt) {
        Ok(c) => (Some(c), None),
        Err(e @ Error::UndefinedCorrelation(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let sa = smtjsim::simnet::sample_trace(a, dt)?;
    let sb = smtjsim::simnet::sample_trace(b, dt)?;
    Ok(PairStats {
        occupancy: joint_occupancy(&[a, b])?,
        dwell: sampled_interior_dwell_stats(a, b, dt)?,
        event_dwell: event_joint_dwell_stats(a, b, true)?,
        pearson,
        pearson_error,
        equilibrated: equilibration_check(&sa, &sb, dt, a.t_end / 20.0),
    })
}

/// Simulate `net` on random stream `stream`. Breakdowns return the partial
/// traces together with the error.
fn run_once(
    spec: &ExperimentSpec,
    net: &NetworkSpec,
    gain: f64,
    stream: u64,
) -> CliResult<(RunSummary, Vec<TelegraphTrace>, Option<Error>)> {
    let warnings = net.validate()?;
    let mut rng = rng::stream(spec.seed, stream);
    let (traces, failure) = match simulate_from(net, spec.duration_s, None, &mut rng) {
        Ok(t) => (t, None),
        Err(Error::SimulationAborted { time_s, device, current_a, limit_a, partial }) => (
            partial,
            Some(Error::SimulationAborted { time_s, device, current_a, limit_a, partial: Vec::new() }),
        ),
        Err(e) => return Err(e.into()),
    };
    let pair = if traces.len() >= 2 && failure.is_none() {
        Some(pair_stats(&traces[0], &traces[1], spec.sample_dt_s)?)
    } else {
        None
    };
    let summary = RunSummary {
        seed: spec.seed,
        stream,
        gain,
        duration_s: spec.duration_s,
        sample_dt_s: spec.sample_dt_s,
        valid: failure.is_none(),
        error: failure.as_ref().map(ToString::to_string),
        warnings,
        devices: device_stats(&traces),
        pair,
    };
    Ok((summary, traces, failure))
}

fn write_spec(spec: &ExperimentSpec, out: &Path) -> CliResult<()> {
    write_text(&out.join("spec.toml"), &spec.to_toml()?)
}

fn write_pair_tables(out: &Path, rows: &[(f64, &RunSummary)]) -> CliResult<()> {
    let dwell: Vec<_> = rows.iter().filter_map(|(g, s)| s.pair.as_ref().map(|p| (*g, p.dwell))).collect();
    let pearson: Vec<_> = rows
        .iter()
        .filter_map(|(g, s)| s.pair.as_ref().and_then(|p| p.pearson).map(|c| (*g, c)))
        .collect();
    let p = out.join("dwell.csv");
    write_atomic(&p, |w| write_dwell_csv(w, &dwell).map_err(io_at(&p)))?;
    let p = out.join("pearson.csv");
    write_atomic(&p, |w| write_pearson_csv(w, &pearson).map_err(io_at(&p)))
}

/// Single run: `events.csv`, `sampled.csv`, `summary.json`, `spec.toml`,
/// plus `dwell.csv` and `pearson.csv` in CSV format. On breakdown the files
/// are still written, with `valid: false` in the summary.
pub fn run_simulate(spec: &ExperimentSpec, opts: &RunOptions) -> CliResult<RunSummary> {
    let out = &opts.out_dir;
    write_spec(spec, out)?;
    let net = spec.network(None)?;
    let gain = spec.configured_gain()?;
    let (summary, traces, failure) = run_once(spec, &net, gain, 0)?;
    let p = out.join("events.csv");
    write_atomic(&p, |w| write_events_csv(w, &traces).map_err(io_at(&p)))?;
    if failure.is_none() {
        write_atomic(&out.join("sampled.csv"), |w| Ok(write_sampled_csv(w, &traces, spec.sample_dt_s)?))?;
    }
    write_json(&out.join("summary.json"), &summary)?;
    if opts.format == Format::Csv {
        write_pair_tables(out, &[(gain, &summary)])?;
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(summary),
    }
}

/// Gain sweep over `sweep.gains`: `points/point_NNN.json` per point, then
/// `sweep.json` or `dwell.csv` and `pearson.csv`.
pub fn run_sweep(spec: &ExperimentSpec, opts: &RunOptions) -> CliResult<Vec<RunSummary>> {
    let Some(sweep) = &spec.sweep else {
        return Err(CliError::Config("sweep requires a [sweep] section with gains".into()));
    };
    let out = &opts.out_dir;
    write_spec(spec, out)?;
    let nets = sweep
        .gains
        .iter()
        .map(|&g| spec.network(Some(g)))
        .collect::<CliResult<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<CliResult<(RunSummary, Option<Error>)>> = pool.install(|| {
        sweep
            .gains
            .par_iter()
            .zip(nets.par_iter())
            .enumerate()
            .map(|(k, (&g, net))| {
                let (summary, _, failure) = run_once(spec, net, g, k as u64)?;
                write_json(&out.join("points").join(format!("point_{k:03}.json")), &summary)?;
                Ok((summary, failure))
            })
            .collect()
    });
    let mut summaries = Vec::with_capacity(results.len());
    let mut first_failure = None;
    for r in results {
        let (s, f) = r?;
        if first_failure.is_none() {
            first_failure = f;
        }
        summaries.push(s);
    }
    match opts.format {
        Format::Json => write_json(&out.join("sweep.json"), &summaries)?,
        Format::Csv => {
            let rows: Vec<(f64, &RunSummary)> = summaries.iter().map(|s| (s.gain, s)).collect();
            write_pair_tables(out, &rows)?;
        }
    }
    match first_failure {
        Some(e) => Err(e.into()),
        None => Ok(summaries),
    }
}

/// Markov-model predictions for a coupled pair at one gain, in the
/// configuration's device order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub gain: f64,
    pub polarity: Polarity,
    /// Differential current delivered to each device.
    pub delta_i_a: [f64; 2],
    pub g: [f64; 2],
    /// Index of the slower device, which the model treats as device 1.
    pub slow_device: usize,
    pub r: f64,
    pub tau01_s: f64,
    pub generator: [[f64; 4]; 4],
    pub steady_state: [f64; 4],
    /// Closed form, present only when both `g` are equal.
    pub lambda1_closed: Option<f64>,
    pub lambda1_numeric: f64,
    pub relaxation_time_s: f64,
    /// Relaxation time in units of the faster device's balance dwell time.
    pub relaxation_fast_units: f64,
    pub joint_dwell_s: [f64; 4],
    pub rho: f64,
    /// All eigenvalues as `(re, im)`, by decreasing real part.
    pub spectrum: Vec<(f64, f64)>,
}

pub fn analyze_pair(net: &NetworkSpec, gain: f64) -> CliResult<AnalysisRow> {
    if net.n() != 2 {
        return Err(CliError::Config(format!("analyze needs exactly 2 devices, got {}", net.n())));
    }
    let into = |target: usize| -> CliResult<(f64, Option<Polarity>)> {
        match net.coupling(target, 1 - target) {
            Some(cfg) => Ok((delta_current(cfg)?, Some(cfg.polarity()))),
            None => Ok((0.0, None)),
        }
    };
    let (di0, pol0) = into(0)?;
    let (di1, pol1) = into(1)?;
    let polarity = match (pol0, pol1) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Unsupported("the two couplings have different polarities".into()).into())
        }
        (Some(p), _) | (None, Some(p)) => p,
        (None, None) => Polarity::Positive,
    };
    let fit = pair_model_from_devices([&net.devices[0], &net.devices[1]], [di0, di1], polarity)?;
    let model = fit.model;
    let gen = build_generator(&model)?;
    let ev = spectrum(&gen.to_matrix())?;
    let lambda1 = ev
        .get(1)
        .map(|c| c.re)
        .ok_or_else(|| Error::NumericalFailure("spectrum too short".into()))?;
    let lambda1_closed = if model.g1 == model.g2 {
        Some(slowest_eigenvalue(&CoupledPairModel::equal_g(model.tau01, model.r, model.g1, polarity))?)
    } else {
        None
    };
    let order = |v: [f64; 4]| if fit.swapped { swap_devices(v) } else { v };
    let mut q = gen.q;
    if fit.swapped {
        q = swap_devices(q.map(order));
    }
    let tau_fast = model.tau01 / model.r;
    let (g_caller, slow_device) = if fit.swapped { ([model.g2, model.g1], 1) } else { ([model.g1, model.g2], 0) };
    Ok(AnalysisRow {
        gain,
        polarity,
        delta_i_a: [di0, di1],
        g: g_caller,
        slow_device,
        r: model.r,
        tau01_s: model.tau01,
        generator: q,
        steady_state: order(steady_state(&gen)?),
        lambda1_closed,
        lambda1_numeric: lambda1,
        relaxation_time_s: -1.0 / lambda1,
        relaxation_fast_units: -1.0 / (lambda1 * tau_fast),
        joint_dwell_s: order(joint_dwell_times(&gen)?),
        rho: predict_correlation(&gen)?,
        spectrum: ev.iter().map(|c| (c.re, c.im)).collect(),
    })
}

/// Model predictions at every gain: `analyze.json`, or `analyze.csv` and
/// `spectra.csv`.
pub fn run_analyze(spec: &ExperimentSpec, opts: &RunOptions) -> CliResult<Vec<AnalysisRow>> {
    let out = &opts.out_dir;
    let rows = spec
        .gains()?
        .into_iter()
        .map(|g| analyze_pair(&spec.network(Some(g))?, g))
        .collect::<CliResult<Vec<_>>>()?;
    match opts.format {
        Format::Json => write_json(&out.join("analyze.json"), &rows)?,
        Format::Csv => {
            let p = out.join("analyze.csv");
            write_atomic(&p, |w| write_analysis_csv(w, &rows).map_err(io_at(&p)))?;
            let p = out.join("spectra.csv");
            write_atomic(&p, |w| write_spectra_csv(w, &rows).map_err(io_at(&p)))?;
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

pub fn write_analysis_csv<W: Write>(mut w: W, rows: &[AnalysisRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "gain,g_0,g_1,r,tau01_s,lambda1_closed,lambda1_numeric,relaxation_s,p00,p01,p10,p11,dwell00_s,dwell01_s,dwell10_s,dwell11_s,rho"
    )?;
    for r in rows {
        write!(
            w,
            "{},{},{},{},{:e},{},{:e},{:e}",
            r.gain,
            r.g[0],
            r.g[1],
            r.r,
            r.tau01_s,
            opt(r.lambda1_closed),
            r.lambda1_numeric,
            r.relaxation_time_s
        )?;
        for p in r.steady_state {
            write!(w, ",{p}")?;
        }
        for d in r.joint_dwell_s {
            write!(w, ",{d:e}")?;
        }
        writeln!(w, ",{}", r.rho)?;
    }
    Ok(())
}

pub fn write_spectra_csv<W: Write>(mut w: W, rows: &[AnalysisRow]) -> std::io::Result<()> {
    writeln!(w, "gain,k,re,im")?;
    for r in rows {
        for (k, (re, im)) in r.spectrum.iter().enumerate() {
            writeln!(w, "{},{k},{re:e},{im:e}", r.gain)?;
        }
    }
    Ok(())
}

/// Annealing run: `anneal.json` and `energy.csv`, plus `anneal_steps.csv`
/// in CSV format.
pub fn run_anneal(spec: &ExperimentSpec, opts: &RunOptions) -> CliResult<AnnealReport> {
    let Some(section) = &spec.anneal else {
        return Err(CliError::Config("anneal requires an [anneal] section".into()));
    };
    let out = &opts.out_dir;
    write_spec(spec, out)?;
    let problem = section.problem()?;
    let template = spec.network(None)?;
    let schedule = match section.step_duration_s {
        Some(d) => AnnealSchedule { steps: section.gains.iter().map(|&gain| AnnealStep { duration_s: d, gain }).collect() },
        None => AnnealSchedule::with_relaxation_durations(&problem, &template, &section.gains, section.relaxation_multiple)?,
    };
    let report = anneal(&problem, &template, &schedule, spec.seed)?;
    write_json(&out.join("anneal.json"), &report)?;
    let p = out.join("energy.csv");
    write_atomic(&p, |w| write_energy_csv(w, &report).map_err(io_at(&p)))?;
    if opts.format == Format::Csv {
        let p = out.join("anneal_steps.csv");
        write_atomic(&p, |w| write_steps_csv(w, &report).map_err(io_at(&p)))?;
    }
    Ok(report)
}

pub fn write_steps_csv<W: Write>(mut w: W, report: &AnnealReport) -> std::io::Result<()> {
    let n = 1usize << report.problem.n;
    write!(w, "step,gain,duration_s,t_eff,tv_distance,mean_energy")?;
    for k in 0..n {
        write!(w, ",emp_{k},pred_{k}")?;
    }
    writeln!(w)?;
    for s in &report.steps {
        write!(w, "{},{},{:e},{},{},{}", s.index, s.gain, s.duration_s, opt(s.t_eff), s.tv_distance, s.mean_energy)?;
        for k in 0..n {
            write!(w, ",{},{}", s.empirical[k], s.predicted[k])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Preset table as TOML (`csv` format) or resolved parameters as JSON.
pub fn presets_text(format: Format) -> CliResult<String> {
    match format {
        Format::Csv => Ok(smtjsim::presets::PRESET_TOML.to_string()),
        Format::Json => {
            let map = smtjsim::presets::names()
                .into_iter()
                .map(|n| smtjsim::presets::device(&n).map(|d| (n, d)))
                .collect::<smtjsim::Result<std::collections::BTreeMap<_, _>>>()?;
            serde_json::to_string_pretty(&map).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}
