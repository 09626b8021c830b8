//! The Richards growth law `Y = α / (1 + e^(β − γx))^(1/δ)` and a
//! Levenberg–Marquardt fitter for it.
//!
//! The fitter works on log-parameters so every iterate stays positive, and
//! serves as the reference against which the learned physics head is
//! checked.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::linalg::{sigmoid, softplus};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsParams {
    /// Upper asymptote.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl RichardsParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            gamma,
            delta,
        };
        if p.to_array().iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(p)
        } else {
            Err(Error::Argument(format!(
                "Richards parameters must be finite and positive: {p:?}"
            )))
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            alpha: a[0],
            beta: a[1],
            gamma: a[2],
            delta: a[3],
        }
    }

    /// Curve value at `x`, computed as `α·exp(−softplus(β − γx)/δ)` so that
    /// large exponents never overflow.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.alpha * (-softplus(self.beta - self.gamma * x) / self.delta).exp()
    }

    /// Value and partial derivatives with respect to `(α, β, γ, δ)`.
    pub fn eval_with_gradient(&self, x: f64) -> (f64, [f64; 4]) {
        let u = self.beta - self.gamma * x;
        let sp = softplus(u);
        let s = sigmoid(u);
        let base = (-sp / self.delta).exp();
        let y = self.alpha * base;
        let grad = [
            base,
            -y * s / self.delta,
            y * s * x / self.delta,
            y * sp / (self.delta * self.delta),
        ];
        (y, grad)
    }

    /// Time at which the curve reaches `y`, for `0 < y < α`. Levels at or
    /// below the curve's value at `−∞` map to `−∞`.
    pub fn inverse(&self, y: f64) -> f64 {
        if y >= self.alpha {
            return f64::INFINITY;
        }
        if y <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let lead = (self.delta * (self.alpha / y).ln()).exp_m1();
        (self.beta - lead.ln()) / self.gamma
    }
}

/// `richards_eval` as a free function.
pub fn richards_eval(p: &RichardsParams, x: f64) -> f64 {
    p.eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Infinity norm of the gradient of the scaled cost.
    pub gradient_tolerance: f64,
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            relative_tolerance: 1e-10,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: RichardsParams,
    pub r_squared: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
}

/// `1 − SS_res / SS_tot`.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() || observed.len() < 2 {
        return Err(Error::Argument(format!(
            "r_squared needs two equal series of length >= 2, got {} and {}",
            observed.len(),
            predicted.len()
        )));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Argument(
            "r_squared is undefined for a constant observed series".into(),
        ));
    }
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Heuristic starting point: asymptote slightly above the data, rate from
/// the steepest secant, and the midpoint of the rise placed where the data
/// crosses half its maximum.
pub fn initial_guess(points: &[(f64, f64)]) -> RichardsParams {
    let y_max = points.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let alpha = 1.05 * y_max;
    let mut slope = 0.0f64;
    for w in points.windows(2) {
        slope = slope.max((w[1].1 - w[0].1) / (w[1].0 - w[0].0));
    }
    let gamma = if slope > 0.0 {
        (4.0 * slope / alpha).max(1e-6)
    } else {
        1.0
    };
    let half = 0.5 * y_max;
    let mut t_mid = points[points.len() / 2].0;
    for w in points.windows(2) {
        let ((t0, y0), (t1, y1)) = (w[0], w[1]);
        if y0 < half && y1 >= half {
            t_mid = t0 + (half - y0) / (y1 - y0) * (t1 - t0);
            break;
        }
        if y0 >= half {
            t_mid = t0;
            break;
        }
    }
    RichardsParams {
        alpha,
        beta: (gamma * t_mid).max(1e-3),
        gamma,
        delta: 1.0,
    }
}

/// Fits the Richards law to `(time, value)` points by Levenberg–Marquardt.
///
/// Without an explicit `init`, the fit starts from [`initial_guess`] and
/// also tries the same guess with `δ₀ ∈ {0.3, 3}`, keeping the start with
/// the lowest final residual.
pub fn fit_richards(
    points: &[(f64, f64)],
    init: Option<RichardsParams>,
    config: &FitConfig,
) -> Result<FitReport> {
    if points.len() < 4 {
        return Err(Error::Argument(format!(
            "fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite() || p.1 < 0.0) {
        return Err(Error::Argument(
            "fit values must be finite and non-negative".into(),
        ));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Argument("fit times must be strictly increasing".into()));
    }
    let first = points[0].1;
    if points.iter().all(|p| p.1 == first) {
        return Err(Error::Fit("no curvature".into()));
    }

    let starts: Vec<RichardsParams> = match init {
        Some(p) => vec![RichardsParams::new(p.alpha, p.beta, p.gamma, p.delta)?],
        None => {
            let g = initial_guess(points);
            vec![g, RichardsParams { delta: 0.3, ..g }, RichardsParams { delta: 3.0, ..g }]
        }
    };

    let mut best: Option<Fit> = None;
    for start in starts {
        let fit = levenberg_marquardt(points, start, config);
        let better = best.as_ref().map_or(true, |b| fit.cost < b.cost);
        if better {
            best = Some(fit);
        }
    }
    let best = best.expect("at least one start");

    let observed: Vec<f64> = points.iter().map(|p| p.1).collect();
    let predicted: Vec<f64> = points.iter().map(|p| best.params.eval(p.0)).collect();
    Ok(FitReport {
        params: best.params,
        r_squared: r_squared(&observed, &predicted)?,
        iterations: best.iterations,
        converged: best.converged,
        residual_norm: (2.0 * best.cost).sqrt() * best.scale,
    })
}

struct Fit {
    params: RichardsParams,
    /// `½ Σ (r_i / scale)²`.
    cost: f64,
    scale: f64,
    iterations: usize,
    converged: bool,
}

fn from_log(theta: &Vector4<f64>) -> RichardsParams {
    RichardsParams::from_array([theta[0].exp(), theta[1].exp(), theta[2].exp(), theta[3].exp()])
}

/// Residuals are divided by the largest observed value so the tolerances
/// mean the same thing for any popularity scale.
fn cost_and_normal(
    points: &[(f64, f64)],
    theta: &Vector4<f64>,
    scale: f64,
) -> (f64, Matrix4<f64>, Vector4<f64>) {
    let p = from_log(theta);
    let pv = p.to_array();
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    let mut cost = 0.0;
    for &(t, y) in points {
        let (f, g) = p.eval_with_gradient(t);
        let r = (f - y) / scale;
        // chain rule through p = exp(theta)
        let j = Vector4::new(g[0] * pv[0], g[1] * pv[1], g[2] * pv[2], g[3] * pv[3]) / scale;
        jtj += j * j.transpose();
        jtr += j * r;
        cost += 0.5 * r * r;
    }
    (cost, jtj, jtr)
}

fn levenberg_marquardt(points: &[(f64, f64)], start: RichardsParams, config: &FitConfig) -> Fit {
    let scale = points.iter().map(|p| p.1).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut theta = Vector4::from(start.to_array().map(f64::ln));
    let (mut cost, mut jtj, mut jtr) = cost_and_normal(points, &theta, scale);
    let mut lambda = config.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if jtr.amax() < config.gradient_tolerance || cost < 1e-30 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut damped = jtj;
        for i in 0..4 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let step = chol.solve(&(-jtr));
        let candidate = theta + step;
        let (c_cost, c_jtj, c_jtr) = cost_and_normal(points, &candidate, scale);
        if c_cost.is_finite() && c_cost < cost {
            let relative = (cost - c_cost) / cost.max(f64::MIN_POSITIVE);
            theta = candidate;
            cost = c_cost;
            jtj = c_jtj;
            jtr = c_jtr;
            lambda = (lambda / 3.0).max(1e-12);
            if relative < config.relative_tolerance && lambda < 1.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
    }

    Fit {
        params: from_log(&theta),
        cost,
        scale,
        iterations,
        converged,
    }
}
