//! Four-state continuous-time Markov model of a coupled pair.
//!
//! Joint states are indexed `00=(P,P), 01=(P,AP), 10=(AP,P), 11=(AP,AP)`
//! with device 1 as the high bit. Generators are stored row-major with rows
//! as source states, so every row sums to zero and the steady state is the
//! left null vector.
//!
//! Only single-device flips have nonzero rates. Device `i` flips at its
//! balance rate divided by `g_i` when the partner's current stabilizes its
//! present state, and multiplied by `g_i` otherwise. Under positive polarity
//! the stabilized states are the aligned ones; negative polarity swaps that.

use nalgebra::{linalg::Schur, Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analog::Polarity;
use crate::device::SmtjParams;
use crate::error::{Error, Result};

pub const JOINT_LABELS: [&str; 4] = ["00", "01", "10", "11"];

/// Parameters of the pair model. Device 1 is the slower one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledPairModel {
    /// Balanced dwell time of device 1, seconds.
    pub tau01: f64,
    /// `tau01 / tau02`.
    pub r: f64,
    pub g1: f64,
    pub g2: f64,
    pub polarity: Polarity,
}

impl CoupledPairModel {
    pub fn equal_g(tau01: f64, r: f64, g: f64, polarity: Polarity) -> Self {
        CoupledPairModel { tau01, r, g1: g, g2: g, polarity }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau01 > 0.0 && self.tau01.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau01 must be positive, got {}", self.tau01)));
        }
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "r must be >= 1 (device 1 is the slower one), got {}",
                self.r
            )));
        }
        if !(self.g1 >= 1.0 && self.g2 >= 1.0 && self.g1.is_finite() && self.g2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "g1, g2 must be >= 1, got {} and {}",
                self.g1, self.g2
            )));
        }
        Ok(())
    }
}

/// A pair model extracted from device parameters, with the mapping back to
/// the caller's device order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairModelFit {
    pub model: CoupledPairModel,
    /// True when the caller's device 0 is the faster one, i.e. model device
    /// 1 is the caller's device 1.
    pub swapped: bool,
}

/// Build the pair model for two devices driven with `delta_i[k]` by their
/// partner. `g_k = exp(B_k * delta_i[k])`.
pub fn pair_model_from_devices(
    devices: [&SmtjParams; 2],
    delta_i: [f64; 2],
    polarity: Polarity,
) -> Result<PairModelFit> {
    let tau = [devices[0].tau_at_balance(), devices[1].tau_at_balance()];
    let g = [
        devices[0].slope_b().dwell_factor(delta_i[0]),
        devices[1].slope_b().dwell_factor(delta_i[1]),
    ];
    let swapped = tau[1] > tau[0];
    let (slow, fast) = if swapped { (1, 0) } else { (0, 1) };
    let model = CoupledPairModel {
        tau01: tau[slow],
        r: tau[slow] / tau[fast],
        g1: g[slow],
        g2: g[fast],
        polarity,
    };
    model.validate()?;
    Ok(PairModelFit { model, swapped })
}

/// Reorder a joint-state vector between model order and caller order
/// (swapping devices exchanges states 01 and 10).
pub fn swap_devices<T: Copy>(v: [T; 4]) -> [T; 4] {
    [v[0], v[2], v[1], v[3]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generator4 {
    pub q: [[f64; 4]; 4],
}

impl Generator4 {
    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            let mut sum = 0.0;
            let mut scale: f64 = 0.0;
            for j in 0..4 {
                let v = self.q[i][j];
                if !v.is_finite() {
                    return Err(Error::InvalidGenerator(format!("entry ({i},{j}) is not finite")));
                }
                if i != j && v < 0.0 {
                    return Err(Error::InvalidGenerator(format!("negative rate at ({i},{j})")));
                }
                if i ^ j == 3 && v != 0.0 {
                    return Err(Error::InvalidGenerator(format!(
                        "simultaneous double flip {i}->{j} must have zero rate"
                    )));
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidGenerator(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(4, 4, |i, j| self.q[i][j])
    }
}

/// Assemble the rate matrix of a coupled pair.
pub fn build_generator(model: &CoupledPairModel) -> Result<Generator4> {
    model.validate()?;
    let base = [1.0 / model.tau01, model.r / model.tau01];
    let g = [model.g1, model.g2];
    let mut q = [[0.0; 4]; 4];
    for (x, row) in q.iter_mut().enumerate() {
        let bits = [(x >> 1) & 1, x & 1];
        let aligned = bits[0] == bits[1];
        let stabilized = match model.polarity {
            Polarity::Positive => aligned,
            Polarity::Negative => !aligned,
        };
        for dev in 0..2 {
            let rate = if stabilized { base[dev] / g[dev] } else { base[dev] * g[dev] };
            let flip = if dev == 0 { 2 } else { 1 };
            row[x ^ flip] = rate;
        }
        row[x] = -(row[x ^ 2] + row[x ^ 1]);
    }
    Ok(Generator4 { q })
}

/// Normalized left null vector of a generator of any size, from the linear
/// system `Q^T p = 0` with one equation replaced by `sum(p) = 1`.
pub fn stationary_distribution(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = q.nrows();
    if n == 0 || q.ncols() != n {
        return Err(Error::InvalidGenerator("generator must be square and nonempty".into()));
    }
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let p = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NumericalFailure("generator is reducible or degenerate".into()))?;
    if p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "stationary vector is not strictly positive: {:?}",
            p.as_slice()
        )));
    }
    let total = p.sum();
    Ok(p / total)
}

pub fn steady_state(gen: &Generator4) -> Result<[f64; 4]> {
    gen.validate()?;
    let p = stationary_distribution(&gen.to_matrix())?;
    Ok([p[0], p[1], p[2], p[3]])
}

/// Closed-form slowest decay rate for a common `g`:
/// `(1/tau01) * (-b + sqrt(b^2 - 16 g^2 r)) / (2 g)`, `b = (g^2+1)(r+1)`.
///
/// The discriminant is never negative for `g, r >= 1` since
/// `b >= 4 g sqrt(r)`.
pub fn slowest_eigenvalue(model: &CoupledPairModel) -> Result<f64> {
    model.validate()?;
    if model.g1 != model.g2 {
        return Err(Error::Unsupported(
            "closed-form slowest eigenvalue needs g1 == g2; use numerical_spectrum".into(),
        ));
    }
    let (g, r) = (model.g1, model.r);
    let b = (g * g + 1.0) * (r + 1.0);
    let disc = (b * b - 16.0 * g * g * r).max(0.0);
    Ok((-b + disc.sqrt()) / (2.0 * g) / model.tau01)
}

/// Eigenvalues of a square rate matrix, sorted by decreasing real part.
pub fn spectrum(q: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let schur = Schur::try_new(q.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("Schur decomposition did not converge".into()))?;
    let mut ev: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re));
    Ok(ev)
}

pub fn numerical_spectrum(gen: &Generator4) -> Result<Vec<Complex<f64>>> {
    gen.validate()?;
    spectrum(&gen.to_matrix())
}

/// Slowest nonzero mode of a rate matrix: the eigenvalue with the second
/// largest real part. Its imaginary part is nonzero only for non-reversible
/// chains.
pub fn slowest_mode(q: &DMatrix<f64>) -> Result<Complex<f64>> {
    let ev = spectrum(q)?;
    ev.get(1)
        .copied()
        .ok_or_else(|| Error::NumericalFailure("need at least two states".into()))
}

/// Mean dwell time in each joint state, `-1/q_ii`.
pub fn joint_dwell_times(gen: &Generator4) -> Result<[f64; 4]> {
    gen.validate()?;
    let mut out = [0.0; 4];
    for (i, o) in out.iter_mut().enumerate() {
        let d = gen.q[i][i];
        if d == 0.0 {
            return Err(Error::InvalidGenerator(format!("state {} is absorbing", JOINT_LABELS[i])));
        }
        *o = -1.0 / d;
    }
    Ok(out)
}

/// Pearson correlation of the two spins under a joint distribution.
pub fn correlation_of(p: &[f64; 4]) -> Result<f64> {
    let m1 = p[2] + p[3] - p[0] - p[1];
    let m2 = p[1] + p[3] - p[0] - p[2];
    let m12 = p[0] + p[3] - p[1] - p[2];
    let var = (1.0 - m1 * m1) * (1.0 - m2 * m2);
    if !(var > 0.0) {
        return Err(Error::UndefinedCorrelation("a marginal has zero variance".into()));
    }
    Ok(((m12 - m1 * m2) / var.sqrt()).clamp(-1.0, 1.0))
}

/// Stationary Pearson correlation of the pair.
pub fn predict_correlation(gen: &Generator4) -> Result<f64> {
    correlation_of(&steady_state(gen)?)
}
