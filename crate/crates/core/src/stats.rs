//! Trace analysis: digitization, joint dwell times, occupancies and
//! correlations, with standard errors.
//!
//! Series are 0/1 with AP = 1. Joint states of a pair use the same index as
//! the Markov model: `2 * a + b`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::JOINT_LABELS;
use crate::simnet::{sample_count, TelegraphTrace};

/// Per joint state dwell statistics. States never observed have zero count,
/// mean and standard error; states seen once have zero standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDwellSummary {
    pub mean_dwell: [f64; 4],
    pub counts: [usize; 4],
    pub std_err: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub n_samples: usize,
    /// `(1 - rho^2) / sqrt(n)`, the Fisher-transform error `1/sqrt(n)` mapped
    /// back through `tanh`. Treats samples as independent.
    pub std_err: f64,
}

/// 1 where `v > threshold`, else 0.
pub fn digitize(v: &[f64], threshold: f64) -> Vec<u8> {
    v.iter().map(|&x| u8::from(x > threshold)).collect()
}

/// Maximal runs `(joint_state, length)` of a synchronized pair of series.
pub fn joint_runs(a: &[u8], b: &[u8]) -> Result<Vec<(usize, usize)>> {
    check_pair(a, b, 1)?;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (&x, &y) in a.iter().zip(b) {
        let s = 2 * usize::from(x != 0) + usize::from(y != 0);
        match runs.last_mut() {
            Some((last, len)) if *last == s => *len += 1,
            _ => runs.push((s, 1)),
        }
    }
    Ok(runs)
}

fn check_pair(a: &[u8], b: &[u8], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "series lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_len {
        return Err(Error::InvalidArgument(format!("need at least {min_len} samples, got {}", a.len())));
    }
    Ok(())
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")))
    }
}

/// Summarize `(joint_state, duration)` observations.
pub fn summarize_dwells(runs: impl IntoIterator<Item = (usize, f64)>) -> JointDwellSummary {
    let mut n = [0usize; 4];
    let mut sum = [0.0; 4];
    let mut sum_sq = [0.0; 4];
    for (s, d) in runs {
        n[s] += 1;
        sum[s] += d;
        sum_sq[s] += d * d;
    }
    let mut mean = [0.0; 4];
    let mut se = [0.0; 4];
    for s in 0..4 {
        if n[s] == 0 {
            continue;
        }
        let k = n[s] as f64;
        mean[s] = sum[s] / k;
        if n[s] > 1 {
            let var = ((sum_sq[s] - k * mean[s] * mean[s]) / (k - 1.0)).max(0.0);
            se[s] = (var / k).sqrt();
        }
    }
    JointDwellSummary { mean_dwell: mean, counts: n, std_err: se }
}

/// Dwell statistics over every run of the sampled pair, including the two
/// runs cut off by the ends of the record, so that `sum(count * mean)` is
/// the record length. See [`interior_joint_dwell_stats`] for unbiased means.
pub fn joint_dwell_stats(a: &[u8], b: &[u8], dt: f64) -> Result<JointDwellSummary> {
    check_dt(dt)?;
    let runs = joint_runs(a, b)?;
    Ok(summarize_dwells(runs.into_iter().map(|(s, len)| (s, len as f64 * dt))))
}

/// Like [`joint_dwell_stats`] but drops the first and last runs, whose true
/// lengths are censored by the record boundaries.
pub fn interior_joint_dwell_stats(a: &[u8], b: &[u8], dt: f64) -> Result<JointDwellSummary> {
    check_dt(dt)?;
    let runs = joint_runs(a, b)?;
    let k = runs.len();
    Ok(summarize_dwells(
        runs.into_iter()
            .enumerate()
            .filter(|&(i, _)| i > 0 && i + 1 < k)
            .map(|(_, (s, len))| (s, len as f64 * dt)),
    ))
}

/// Constant stretches `(joint_index, start, end)` of several traces read
/// together, device order as given (first trace is the high bit). Stretches
/// have positive length and adjacent ones differ.
pub fn joint_segments(traces: &[&TelegraphTrace]) -> Result<Vec<(usize, f64, f64)>> {
    let n = traces.len();
    if n == 0 || n > 32 {
        return Err(Error::InvalidArgument(format!("need 1..=32 traces, got {n}")));
    }
    let t_end = traces[0].t_end;
    if traces.iter().any(|t| t.t_end != t_end || t.events.is_empty()) {
        return Err(Error::InvalidArgument("traces must be nonempty and share t_end".into()));
    }
    let mut events: Vec<(f64, usize, u8)> = Vec::new();
    let mut state = 0usize;
    for (k, t) in traces.iter().enumerate() {
        let bit = n - 1 - k;
        state |= (t.events[0].1.bit() as usize) << bit;
        events.extend(t.events[1..].iter().map(|&(time, s)| (time, bit, s.bit())));
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)));
    let mut out: Vec<(usize, f64, f64)> = Vec::new();
    let mut start = 0.0;
    let push = |s: usize, a: f64, b: f64, out: &mut Vec<(usize, f64, f64)>| {
        if b <= a {
            return;
        }
        match out.last_mut() {
            Some(last) if last.0 == s => last.2 = b,
            _ => out.push((s, a, b)),
        }
    };
    for (time, bit, value) in events {
        let time = time.min(t_end);
        push(state, start, time, &mut out);
        state = (state & !(1 << bit)) | ((value as usize) << bit);
        start = time;
    }
    push(state, start, t_end, &mut out);
    Ok(out)
}

/// Event-exact joint dwell statistics of a pair of traces. With
/// `interior_only` the stretches touching `t = 0` or `t_end` are dropped.
pub fn event_joint_dwell_stats(a: &TelegraphTrace, b: &TelegraphTrace, interior_only: bool) -> Result<JointDwellSummary> {
    let segs = joint_segments(&[a, b])?;
    let k = segs.len();
    Ok(summarize_dwells(
        segs.into_iter()
            .enumerate()
            .filter(|&(i, _)| !interior_only || (i > 0 && i + 1 < k))
            .map(|(_, (s, lo, hi))| (s, hi - lo)),
    ))
}

/// Fraction of time spent in each of the `2^N` joint states.
pub fn joint_occupancy(traces: &[&TelegraphTrace]) -> Result<Vec<f64>> {
    let segs = joint_segments(traces)?;
    let t_end = traces[0].t_end;
    let mut occ = vec![0.0; 1 << traces.len()];
    for (s, lo, hi) in segs {
        occ[s] += hi - lo;
    }
    occ.iter_mut().for_each(|v| *v /= t_end);
    Ok(occ)
}

/// Joint occupancy in each of `n_batches` equal time windows.
pub fn batch_occupancies(traces: &[&TelegraphTrace], n_batches: usize) -> Result<Vec<Vec<f64>>> {
    if n_batches == 0 {
        return Err(Error::InvalidArgument("need at least one batch".into()));
    }
    let segs = joint_segments(traces)?;
    let t_end = traces[0].t_end;
    let width = t_end / n_batches as f64;
    let mut out = vec![vec![0.0; 1 << traces.len()]; n_batches];
    for (s, mut lo, hi) in segs {
        while lo < hi {
            let k = ((lo / width) as usize).min(n_batches - 1);
            let edge = if k + 1 == n_batches { t_end } else { (k + 1) as f64 * width };
            let stop = hi.min(edge);
            out[k][s] += stop - lo;
            // guard against an edge that rounds to lo
            lo = if stop > lo { stop } else { hi };
        }
    }
    for row in &mut out {
        row.iter_mut().for_each(|v| *v /= width);
    }
    Ok(out)
}

/// Mean and standard error of the mean of per-batch estimates, one column
/// per component. Batches should be much longer than the correlation time.
pub fn batch_mean_se(batches: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = batches.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least two batches, got {k}")));
    }
    let m = batches[0].len();
    let mut mean = vec![0.0; m];
    for row in batches {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v / k as f64;
        }
    }
    let mut se = vec![0.0; m];
    for row in batches {
        for j in 0..m {
            se[j] += (row[j] - mean[j]).powi(2);
        }
    }
    se.iter_mut().for_each(|v| *v = (*v / ((k - 1) as f64 * k as f64)).sqrt());
    Ok((mean, se))
}

/// Pearson correlation from joint counts of a pair of binary series.
pub fn pearson_from_counts(counts: [u64; 4]) -> Result<CorrelationResult> {
    let n: u64 = counts.iter().sum();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let a1 = (counts[2] + counts[3]) as f64;
    let b1 = (counts[1] + counts[3]) as f64;
    let (a0, b0) = (nf - a1, nf - b1);
    let denom = a1 * a0 * b1 * b0;
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("a series is constant".into()));
    }
    let cov = counts[3] as f64 * counts[0] as f64 - counts[1] as f64 * counts[2] as f64;
    let rho = (cov / denom.sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationResult { rho, n_samples: n as usize, std_err: (1.0 - rho * rho) / nf.sqrt() })
}

pub fn pair_counts(a: &[u8], b: &[u8]) -> Result<[u64; 4]> {
    check_pair(a, b, 0)?;
    let mut c = [0u64; 4];
    for (&x, &y) in a.iter().zip(b) {
        c[2 * usize::from(x != 0) + usize::from(y != 0)] += 1;
    }
    Ok(c)
}

/// Sample Pearson coefficient of two 0/1 series.
pub fn pearson(a: &[u8], b: &[u8]) -> Result<CorrelationResult> {
    check_pair(a, b, 2)?;
    pearson_from_counts(pair_counts(a, b)?)
}

/// Runs `(joint_state, n_samples)` of the pair sampled at `k * dt`, equal to
/// `joint_runs` of the two `sample_trace` outputs without materializing them.
pub fn sampled_joint_runs(a: &TelegraphTrace, b: &TelegraphTrace, dt: f64) -> Result<Vec<(usize, usize)>> {
    check_dt(dt)?;
    let first = |t: f64| (t / dt).ceil() as usize;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (s, lo, hi) in joint_segments(&[a, b])? {
        let count = first(hi).saturating_sub(first(lo));
        if count == 0 {
            continue;
        }
        match runs.last_mut() {
            Some((last, len)) if *last == s => *len += count,
            _ => runs.push((s, count)),
        }
    }
    debug_assert_eq!(runs.iter().map(|r| r.1).sum::<usize>(), sample_count(a.t_end, dt));
    Ok(runs)
}

pub fn sampled_joint_counts(a: &TelegraphTrace, b: &TelegraphTrace, dt: f64) -> Result<[u64; 4]> {
    let mut c = [0u64; 4];
    for (s, len) in sampled_joint_runs(a, b, dt)? {
        c[s] += len as u64;
    }
    Ok(c)
}

/// Pearson coefficient of the pair sampled at interval `dt`.
pub fn sampled_pearson(a: &TelegraphTrace, b: &TelegraphTrace, dt: f64) -> Result<CorrelationResult> {
    pearson_from_counts(sampled_joint_counts(a, b, dt)?)
}

/// Dwell statistics of the pair sampled at interval `dt`, censored end runs
/// excluded.
pub fn sampled_interior_dwell_stats(a: &TelegraphTrace, b: &TelegraphTrace, dt: f64) -> Result<JointDwellSummary> {
    let runs = sampled_joint_runs(a, b, dt)?;
    let k = runs.len();
    Ok(summarize_dwells(
        runs.into_iter()
            .enumerate()
            .filter(|&(i, _)| i > 0 && i + 1 < k)
            .map(|(_, (s, len))| (s, len as f64 * dt)),
    ))
}

/// True when joint occupancies estimated in consecutive windows of length
/// `window` agree between the first and second halves of the record within
/// 3 combined standard errors, for every joint state. Records with fewer than
/// four windows, or invalid arguments, are reported as not equilibrated.
pub fn equilibration_check(a: &[u8], b: &[u8], dt: f64, window: f64) -> bool {
    if check_pair(a, b, 1).is_err() || check_dt(dt).is_err() || !(window > 0.0) {
        return false;
    }
    let w = (window / dt).round() as usize;
    if w == 0 {
        return false;
    }
    let n_windows = a.len() / w;
    if n_windows < 4 {
        return false;
    }
    let occ: Vec<Vec<f64>> = (0..n_windows)
        .map(|k| {
            let c = pair_counts(&a[k * w..(k + 1) * w], &b[k * w..(k + 1) * w]).expect("equal slices");
            c.iter().map(|&v| v as f64 / w as f64).collect()
        })
        .collect();
    let half = n_windows / 2;
    let (Ok((m1, s1)), Ok((m2, s2))) = (batch_mean_se(&occ[..half]), batch_mean_se(&occ[half..2 * half])) else {
        return false;
    };
    (0..4).all(|s| (m1[s] - m2[s]).abs() <= 3.0 * (s1[s].powi(2) + s2[s].powi(2)).sqrt())
}

/// Kendall rank correlation (tau-b) of paired observations.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("need two equal-length series of length >= 2".into()));
    }
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = (x[i] - x[j]).signum() * f64::from(u8::from(x[i] != x[j]));
            let dy = (y[i] - y[j]).signum() * f64::from(u8::from(y[i] != y[j]));
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                (false, false) if dx == dy => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n1 = (conc + disc + tx) as f64;
    let n2 = (conc + disc + ty) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::UndefinedCorrelation("a series is constant".into()));
    }
    Ok((conc - disc) as f64 / (n1 * n2).sqrt())
}

/// Dwell summary CSV: `gain,state,mean_dwell_s,stderr_s,count`.
pub fn write_dwell_csv<W: Write>(mut w: W, rows: &[(f64, JointDwellSummary)]) -> io::Result<()> {
    writeln!(w, "gain,state,mean_dwell_s,stderr_s,count")?;
    for (gain, s) in rows {
        for k in 0..4 {
            writeln!(w, "{gain},{},{:e},{:e},{}", JOINT_LABELS[k], s.mean_dwell[k], s.std_err[k], s.counts[k])?;
        }
    }
    Ok(())
}

/// Correlation CSV: `gain,pearson,stderr,n`.
pub fn write_pearson_csv<W: Write>(mut w: W, rows: &[(f64, CorrelationResult)]) -> io::Result<()> {
    writeln!(w, "gain,pearson,stderr,n")?;
    for (gain, c) in rows {
        writeln!(w, "{gain},{},{:e},{}", c.rho, c.std_err, c.n_samples)?;
    }
    Ok(())
}
