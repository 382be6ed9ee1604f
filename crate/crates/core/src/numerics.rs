//! Log-domain primitives and the finite-difference gradient oracle.
//!
//! Every probability in the crate is accumulated as a natural-log value.
//! Linear-domain numbers only appear inside a single softmax or
//! renormalization step.

use crate::error::{Error, Result};

/// Tolerance under which a slightly positive log value is treated as rounding noise.
const LOG_ONE_SLACK: f64 = 1e-9;

/// A natural-log probability. Negative infinity is an exact zero.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value > LOG_ONE_SLACK {
            return Err(Error::Contract(format!("{value} is not a log-probability")));
        }
        Ok(LogProb(value.min(0.0)))
    }

    pub fn from_prob(p: f64) -> Result<Self> {
        if !(0.0..=1.0 + LOG_ONE_SLACK).contains(&p) {
            return Err(Error::Contract(format!("{p} is not a probability")));
        }
        Ok(LogProb(p.ln().min(0.0)))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

/// `log(exp(a) + exp(b))`, exact when either side is negative infinity.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Max-shifted `log Σ exp(v)`. Returns negative infinity when all inputs are.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("log_sum_exp of an empty list".into()));
    }
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn stable_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Contract("softmax of an empty vector".into()));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("softmax logit {i} is not finite ({})", logits[i])));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

/// Log-softmax written into `out`; returns the log partition.
pub(crate) fn log_softmax_into(logits: &[f64], out: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let lz = max + sum.ln();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - lz;
    }
    lz
}

/// Central-difference gradient `(f(θ+εe_i) − f(θ−εe_i)) / 2ε` for every coordinate.
pub fn finite_diff_gradient<F>(mut loss_fn: F, params: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(epsilon > 0.0) {
        return Err(Error::Contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let plus = loss_fn(&probe);
        if !plus.is_finite() {
            return Err(Error::GradientOracle { coordinate: i, value: plus });
        }
        probe[i] = orig - epsilon;
        let minus = loss_fn(&probe);
        if !minus.is_finite() {
            return Err(Error::GradientOracle { coordinate: i, value: minus });
        }
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst_coordinate: usize,
}

impl GradCheckReport {
    pub fn new(analytic: Vec<f64>, numeric: Vec<f64>) -> Result<Self> {
        if analytic.len() != numeric.len() {
            return Err(Error::Contract(format!(
                "gradient lengths differ: analytic {} vs numeric {}",
                analytic.len(),
                numeric.len()
            )));
        }
        let mut max_relative_error = 0.0;
        let mut worst_coordinate = 0;
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let e = relative_error(*a, *n);
            if e > max_relative_error {
                max_relative_error = e;
                worst_coordinate = i;
            }
        }
        Ok(Self { analytic, numeric, max_relative_error, worst_coordinate })
    }
}

/// Runs `finite_diff_gradient` against an analytic gradient.
pub fn check_gradient<F>(loss_fn: F, params: &[f64], analytic: Vec<f64>, epsilon: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = finite_diff_gradient(loss_fn, params, epsilon)?;
    GradCheckReport::new(analytic, numeric)
}
