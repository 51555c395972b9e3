//! Representations of demand as integrals of `q^{-t}` against a measure in `t`,
//! the discrete approximation of such integrals with its remainder, and the
//! complete monotonicity and pass-through classification of demand forms.

use crate::error::{Error, Result};
use crate::jet::{factorial, Jet};
use crate::numeric::{integrate, integrate_from_neg_infinity, integrate_to_infinity};
use crate::power_forms::PowerSum;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::fmt;
use std::sync::Arc;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `weight · δ^(order)(t − t0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaDerivative {
    pub t: f64,
    pub order: u32,
    pub weight: f64,
}

/// Smooth part of a measure on `[lo, hi]`; either end may be infinite.
#[derive(Clone)]
pub struct Density {
    pub lo: f64,
    pub hi: f64,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density").field("lo", &self.lo).field("hi", &self.hi).finish_non_exhaustive()
    }
}

/// Mass points, derivatives of mass points, a density, and a `pole/t` kernel on
/// `(−∞, 0)` regularized by subtracting `1_{t > −1}/t`.
#[derive(Debug, Clone, Default)]
pub struct LaplaceMeasure {
    pub masses: Vec<(f64, f64)>,
    pub delta_derivs: Vec<DeltaDerivative>,
    pub density: Option<Density>,
    pub pole: f64,
}

impl LaplaceMeasure {
    pub fn from_masses(masses: Vec<(f64, f64)>) -> Self {
        LaplaceMeasure { masses, ..Default::default() }
    }

    pub fn is_discrete(&self) -> bool {
        self.delta_derivs.is_empty() && self.density.is_none() && self.pole == 0.0
    }

    /// Value of `∫ q^{-t} dμ(t)`.
    pub fn synthesize(&self, q: f64) -> Result<f64> {
        if q.is_nan() || q <= 0.0 {
            return Err(Error::NonPositiveArgument(q));
        }
        let mut total: f64 = self.masses.iter().map(|&(t, w)| w * q.powf(-t)).sum();
        let lq = q.ln();
        for d in &self.delta_derivs {
            total += d.weight * lq.powi(d.order as i32) * q.powf(-d.t);
        }
        if let Some(dens) = &self.density {
            let f = &dens.f;
            let g = |t: f64| f(t) * q.powf(-t);
            let part = match (dens.lo.is_finite(), dens.hi.is_finite()) {
                (true, true) => integrate(g, dens.lo, dens.hi, 1e-13, 1e-12)?,
                (false, true) => integrate_from_neg_infinity(g, dens.hi, 1e-13, 1e-12)?,
                (true, false) => integrate_to_infinity(g, dens.lo, 1e-13, 1e-12)?,
                (false, false) => {
                    let a = integrate_from_neg_infinity(&g, 0.0, 1e-13, 1e-12)?;
                    let b = integrate_to_infinity(&g, 0.0, 1e-13, 1e-12)?;
                    crate::numeric::Quadrature { value: a.value + b.value, error: a.error + b.error }
                }
            };
            total += part.value;
        }
        if self.pole != 0.0 {
            total += self.pole * regularized_pole(q)?;
        }
        if !total.is_finite() {
            return Err(Error::DivergentDensity);
        }
        Ok(total)
    }
}

/// `∫_{−∞}^0 (q^{-t} − 1_{t>−1})/t dt`, finite for `q < 1`.
pub fn regularized_pole(q: f64) -> Result<f64> {
    if q >= 1.0 {
        return Err(Error::DivergentDensity);
    }
    let lq = q.ln();
    let near = integrate(|t| if t == 0.0 { -lq } else { (q.powf(-t) - 1.0) / t }, -1.0, 0.0, 1e-14, 1e-13)?;
    let far = integrate_from_neg_infinity(|t| q.powf(-t) / t, -1.0, 1e-14, 1e-13)?;
    Ok(near.value + far.value)
}

/// Each term `c·q^e` becomes a mass `c` at `t = −e`.
pub fn power_sum_to_measure(p: &PowerSum) -> LaplaceMeasure {
    LaplaceMeasure::from_masses(p.terms().iter().map(|t| (-t.exponent, t.coeff)).collect())
}

pub fn measure_to_power_sum(m: &LaplaceMeasure) -> Result<PowerSum> {
    if !m.is_discrete() {
        return Err(Error::ParameterDomain("only mass points map to a power sum".into()));
    }
    PowerSum::new(m.masses.iter().map(|&(t, w)| (w, -t)))
}

/// Price measure of a utility measure: `p(t) = (1 − t)·u(t − 1)`.
pub fn utility_to_price(u: &LaplaceMeasure) -> Result<LaplaceMeasure> {
    if !u.is_discrete() {
        return Err(Error::ParameterDomain("utility conversion needs mass points".into()));
    }
    Ok(LaplaceMeasure::from_masses(u.masses.iter().map(|&(t, w)| (t + 1.0, -t * w)).collect()))
}

/// Consumer-surplus measure of a price measure: a mass `p` at `t` moves to
/// `t − 1` with weight `p·t/(1 − t)`.
pub fn price_to_surplus(p: &LaplaceMeasure) -> Result<LaplaceMeasure> {
    if !p.is_discrete() {
        return Err(Error::ParameterDomain("surplus conversion needs mass points".into()));
    }
    if let Some(&(t, _)) = p.masses.iter().find(|m| m.0 >= 1.0) {
        return Err(Error::NonIntegrable(-t));
    }
    Ok(LaplaceMeasure::from_masses(p.masses.iter().map(|&(t, w)| (t - 1.0, w * t / (1.0 - t))).collect()))
}

const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// `B_{2k}` for `k = 1..=10`.
pub fn bernoulli_even(k: usize) -> f64 {
    BERNOULLI_EVEN[k - 1]
}

/// Riemann zeta for real `s > 1`, by a partial sum with an Euler-Maclaurin tail.
pub fn zeta(s: f64) -> f64 {
    let n = 30.0f64;
    let head: f64 = (1..30).map(|k| (k as f64).powf(-s)).sum();
    head + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0
        + s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * n.powf(-s - 5.0) / 30240.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteApprox {
    /// Trapezoid sum plus the endpoint correction: the estimate of `∫_{t_min}^{t_max}`.
    pub approx: f64,
    pub trapezoid: f64,
    pub r2_correction: f64,
    pub r3_bound: f64,
    /// `∫_{−∞}^{t_min} |f(t) q^{-t}| dt`, the mass left out below the grid.
    pub tail_estimate: f64,
}

/// Euler-Maclaurin approximation of `∫ f(t) q^{-t} dt` on an even grid of
/// `steps + 1` points. `f` maps a jet in `t` to a jet, so endpoint derivatives are exact.
pub fn discrete_approx<F>(f: F, t_min: f64, t_max: f64, steps: usize, q: f64, m: usize, tol: Option<f64>) -> Result<DiscreteApprox>
where
    F: Fn(&Jet) -> Jet,
{
    if steps == 0 || t_max <= t_min || !(1..=10).contains(&m) {
        return Err(Error::ParameterDomain("need at least two grid points and 1 ≤ m ≤ 10".into()));
    }
    if q.is_nan() || q <= 0.0 {
        return Err(Error::NonPositiveArgument(q));
    }
    let dt = (t_max - t_min) / steps as f64;
    let lq = q.ln();
    let order = 2 * m + 1;
    let h = |t: f64, order: usize| {
        let x = Jet::variable(t, order);
        let decay = x.scale(-lq).exp();
        &f(&x) * &decay
    };
    let h0 = |t: f64| h(t, 0).value();
    let mut trapezoid = 0.0;
    for i in 0..=steps {
        let t = t_min + i as f64 * dt;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        trapezoid += w * h0(t);
    }
    trapezoid *= dt;
    let (lo, hi) = (h(t_min, order), h(t_max, order));
    let r2_correction: f64 = (1..=m)
        .map(|k| {
            let j = 2 * k - 1;
            bernoulli_even(k) / factorial(2 * k) * dt.powi(2 * k as i32) * (lo.derivative_at(j) - hi.derivative_at(j))
        })
        .sum();
    let top = integrate(|t| h(t, order).derivative_at(order).abs(), t_min, t_max, 1e-300, 1e-8)?;
    let r3_bound = 2.0 * zeta(order as f64) * dt.powi(order as i32) / (2.0 * std::f64::consts::PI).powi(order as i32) * top.value;
    let tail_estimate = integrate_from_neg_infinity(|t| h0(t).abs(), t_min, 1e-300, 1e-10)?.value;
    if let Some(tol) = tol {
        if r3_bound > tol {
            return Err(Error::GridTooCoarse { bound: r3_bound, tol });
        }
    }
    Ok(DiscreteApprox { approx: trapezoid + r2_correction, trapezoid, r2_correction, r3_bound, tail_estimate })
}

/// Named inverse demand forms, each written as a price function of quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum DemandForm {
    /// `P = q^{−1/ε}`.
    ConstantElasticity { epsilon: f64 },
    /// `P = p0 + pt·q^{−t}`.
    Bp { p0: f64, pt: f64, t: f64 },
    /// `P = a − b·q`.
    Linear { a: f64, b: f64 },
    /// Exponential valuations: `P = a − b·log q`.
    Exponential { a: f64, b: f64 },
    /// Minimum-extreme-value valuations: `P = α + β·log(−log q)`.
    Gumbel { alpha: f64, beta: f64 },
    /// `P = μ − β·log(q/(1 − q))`.
    Logistic { mu: f64, beta: f64 },
    /// `P = ((1 − q)/q)^{1/γ}`.
    LogLogistic { gamma: f64 },
    /// `P = β·(−log q)^{1/α}`.
    Weibull { alpha: f64, beta: f64 },
    /// `P = μ + σ·Φ⁻¹(1 − q)`.
    Normal { mu: f64, sigma: f64 },
    /// `P = exp(μ + σ·Φ⁻¹(1 − q))`.
    Lognormal { mu: f64, sigma: f64 },
    /// Quantity `(α + β·log P)/P`, inverted with the Lambert W function.
    Aids { alpha: f64, beta: f64 },
}

/// Principal branch of the Lambert W function for `x ≥ −1/e`.
pub fn lambert_w0(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mut w = if x < 1.0 { x.ln_1p() } else { x.ln() - x.ln().ln().max(0.0) };
    for _ in 0..100 {
        let e = w.exp();
        let f = w * e - x;
        let step = f / (e * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0));
        w -= step;
        if step.abs() <= 1e-15 * w.abs().max(1e-300) {
            break;
        }
    }
    w
}

impl DemandForm {
    pub fn name(&self) -> &'static str {
        match self {
            DemandForm::ConstantElasticity { .. } => "constant-elasticity",
            DemandForm::Bp { .. } => "bp",
            DemandForm::Linear { .. } => "linear",
            DemandForm::Exponential { .. } => "exponential",
            DemandForm::Gumbel { .. } => "gumbel",
            DemandForm::Logistic { .. } => "logistic",
            DemandForm::LogLogistic { .. } => "log-logistic",
            DemandForm::Weibull { .. } => "weibull",
            DemandForm::Normal { .. } => "normal",
            DemandForm::Lognormal { .. } => "lognormal",
            DemandForm::Aids { .. } => "aids",
        }
    }

    /// Quantity range on which the form is classified.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            DemandForm::ConstantElasticity { .. } | DemandForm::Bp { .. } | DemandForm::Aids { .. } => (1e-2, 1e2),
            DemandForm::Linear { a, b } => (1e-2 * a / b, 0.99 * a / b),
            _ => (1e-4, 1.0 - 1e-4),
        }
    }

    /// Inverse demand as a series in `s = log q` around `s0`.
    pub fn price_jet(&self, s0: f64, order: usize) -> Jet {
        let s = Jet::variable(s0, order);
        let q = s.exp();
        match *self {
            DemandForm::ConstantElasticity { epsilon } => s.scale(-1.0 / epsilon).exp(),
            DemandForm::Bp { p0, pt, t } => s.scale(-t).exp().scale(pt).offset(p0),
            DemandForm::Linear { a, b } => q.scale(-b).offset(a),
            DemandForm::Exponential { a, b } => s.scale(-b).offset(a),
            DemandForm::Gumbel { alpha, beta } => s.scale(-1.0).ln().scale(beta).offset(alpha),
            DemandForm::Logistic { mu, beta } => {
                let rest = q.scale(-1.0).offset(1.0).ln();
                (&s - &rest).scale(-beta).offset(mu)
            }
            DemandForm::LogLogistic { gamma } => {
                let rest = q.scale(-1.0).offset(1.0).ln();
                (&rest - &s).scale(1.0 / gamma).exp()
            }
            DemandForm::Weibull { alpha, beta } => s.scale(-1.0).powf(1.0 / alpha).scale(beta),
            DemandForm::Normal { mu, sigma } => normal_upper_quantile(&s).scale(sigma).offset(mu),
            DemandForm::Lognormal { mu, sigma } => normal_upper_quantile(&s).scale(sigma).offset(mu).exp(),
            DemandForm::Aids { alpha, beta } => {
                // P = −β·W(x)/q with x = −q·e^{−α/β}/β, and dW/ds = W/(1 + W)
                let w0 = lambert_w0(-s0.exp() * (-alpha / beta).exp() / beta);
                let w = Jet::solve_ode(&s, w0, |_, w| w.div(&w.offset(1.0)));
                (&w * &s.scale(-1.0).exp()).scale(-beta)
            }
        }
    }

    pub fn price(&self, q: f64) -> f64 {
        self.price_jet(q.ln(), 0).value()
    }
}

/// `Φ⁻¹(1 − e^s)` as a series in `s`, from `dy/ds = −e^s·√(2π)·e^{y²/2}`.
fn normal_upper_quantile(s: &Jet) -> Jet {
    let std = Normal::new(0.0, 1.0).unwrap();
    let q0 = s.value().exp();
    let y0 = -std.inverse_cdf(q0);
    let root = (2.0 * std::f64::consts::PI).sqrt();
    Jet::solve_ode(s, y0, |s, y| {
        let g = (y * y).scale(0.5).exp();
        (&s.exp() * &g).scale(-root)
    })
}

/// Forms covered by the classification table, at representative parameters.
pub fn catalog() -> Vec<(&'static str, DemandForm)> {
    vec![
        ("constant-elasticity", DemandForm::ConstantElasticity { epsilon: 2.0 }),
        ("bp", DemandForm::Bp { p0: 1.0, pt: 1.0, t: 0.5 }),
        ("linear", DemandForm::Linear { a: 1.0, b: 1.0 }),
        ("exponential", DemandForm::Exponential { a: 1.0, b: 1.0 }),
        ("gumbel", DemandForm::Gumbel { alpha: 2.0, beta: 1.0 }),
        ("logistic", DemandForm::Logistic { mu: 1.0, beta: 1.0 }),
        ("log-logistic", DemandForm::LogLogistic { gamma: 2.0 }),
        ("log-logistic-low-shape", DemandForm::LogLogistic { gamma: 0.5 }),
        ("weibull", DemandForm::Weibull { alpha: 2.0, beta: 1.0 }),
        ("weibull-low-shape", DemandForm::Weibull { alpha: 0.5, beta: 1.0 }),
        ("normal", DemandForm::Normal { mu: 0.0, sigma: 1.0 }),
        ("lognormal", DemandForm::Lognormal { mu: 0.0, sigma: 1.0 }),
        ("aids", DemandForm::Aids { alpha: 1.0, beta: -0.5 }),
    ]
}

pub fn catalog_form(name: &str) -> Result<DemandForm> {
    catalog().into_iter().find(|(n, _)| *n == name).map(|(_, f)| f).ok_or_else(|| Error::CatalogMiss(name.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum DemandInput {
    PowerSum(PowerSum),
    Named(DemandForm),
}

impl DemandInput {
    fn domain(&self) -> (f64, f64) {
        match self {
            DemandInput::PowerSum(_) => (1e-2, 1e2),
            DemandInput::Named(f) => f.domain(),
        }
    }

    /// `CS′(s) = −q·dP/ds` as a series in `s`.
    fn surplus_slope_jet(&self, s0: f64, order: usize) -> Jet {
        let p = match self {
            DemandInput::PowerSum(ps) => {
                let s = Jet::variable(s0, order + 1);
                ps.terms().iter().fold(Jet::constant(0.0, order + 1), |acc, t| &acc + &s.scale(t.exponent).exp().scale(t.coeff))
            }
            DemandInput::Named(f) => f.price_jet(s0, order + 1),
        };
        let q = Jet::variable(s0, order).exp();
        (&q * &p.differentiate()).scale(-1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmVerdict {
    Yes,
    No,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmReport {
    pub verdict: CmVerdict,
    pub first_violation_order: Option<usize>,
    /// Quantity at which that order first turns negative.
    pub violation_q: Option<f64>,
}

pub const CM_GRID: usize = 41;

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Whether consumer surplus has nonnegative derivatives of every order `1..=order`
/// in `s = log q`. Power sums are decided exactly from their terms; named forms
/// by exact series derivatives on a log grid over the form's domain.
pub fn complete_monotonicity_test(input: &DemandInput, order: usize) -> Result<CmReport> {
    if let DemandInput::PowerSum(p) = input {
        let cs = p.consumer_surplus()?;
        let ok = cs.terms().iter().all(|t| t.exponent >= 0.0 && t.coeff >= 0.0);
        let verdict = if ok { CmVerdict::Yes } else { CmVerdict::No };
        return Ok(CmReport { verdict, first_violation_order: None, violation_q: None });
    }
    let (lo, hi) = input.domain();
    let mut first: Option<(usize, f64)> = None;
    let mut unresolved = false;
    for q in log_grid(lo, hi, CM_GRID) {
        let g = input.surplus_slope_jet(q.ln(), order.saturating_sub(1));
        for n in 1..=order {
            let d = g.derivative_at(n - 1);
            // rounding floor of an order-(n−1) series coefficient, scaled to a derivative
            let floor = f64::EPSILON * factorial(n - 1) * g.0[..n].iter().map(|c| c.abs()).sum::<f64>() * (n * n) as f64;
            if !d.is_finite() {
                return Err(Error::DivergentDensity);
            }
            if d < -1e3 * floor {
                if first.is_none_or(|(m, _)| n < m) {
                    first = Some((n, q));
                }
                break;
            } else if d.abs() < 1e3 * floor {
                unresolved = true;
            }
        }
    }
    let verdict = match (first, unresolved) {
        (Some(_), _) => CmVerdict::No,
        (None, true) => CmVerdict::Inconclusive,
        (None, false) => CmVerdict::Yes,
    };
    Ok(CmReport { verdict, first_violation_order: first.map(|f| f.0), violation_q: first.map(|f| f.1) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotonicity {
    Constant,
    Decreasing,
    Increasing,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassThroughProfile {
    pub q: Vec<f64>,
    pub rho: Vec<f64>,
    pub verdict: Monotonicity,
}

/// Constant-marginal-cost pass-through `ρ = CS′(s)/CS″(s)` along a quantity grid.
pub fn passthrough_profile(input: &DemandInput, q_grid: &[f64]) -> Result<PassThroughProfile> {
    let mut rho = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        if q.is_nan() || q <= 0.0 {
            return Err(Error::NonPositiveArgument(q));
        }
        let g = input.surplus_slope_jet(q.ln(), 1);
        if g.0[1] == 0.0 {
            return Err(Error::ZeroSecondDerivative);
        }
        let r = g.0[0] / g.0[1];
        if !r.is_finite() {
            return Err(Error::DivergentDensity);
        }
        rho.push(r);
    }
    let verdict = classify_profile(&rho, 1e-8);
    Ok(PassThroughProfile { q: q_grid.to_vec(), rho, verdict })
}

/// Default grid: 101 log-spaced points across the input's domain.
pub fn default_profile_grid(input: &DemandInput) -> Vec<f64> {
    let (lo, hi) = input.domain();
    log_grid(lo, hi, 101)
}

fn classify_profile(rho: &[f64], tol: f64) -> Monotonicity {
    let scale = rho.iter().fold(0.0f64, |m, r| m.max(r.abs())).max(f64::MIN_POSITIVE);
    let (min, max) = rho.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    if max - min <= tol * scale {
        return Monotonicity::Constant;
    }
    let steps: Vec<f64> = rho.windows(2).map(|w| w[1] - w[0]).collect();
    if steps.iter().all(|d| *d <= tol * scale) {
        Monotonicity::Decreasing
    } else if steps.iter().all(|d| *d >= -tol * scale) {
        Monotonicity::Increasing
    } else {
        Monotonicity::Mixed
    }
}
