//! Finite sums of real powers of a positive scalar and the algebra that keeps them closed.

use crate::error::{Error, Result};
use crate::numeric::least_squares;
use crate::poly_roots::Polynomial;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Exponents closer than this are merged into one term.
pub const MERGE_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_LEVEL: usize = 100;

/// `coeff · q^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coeff: f64,
    pub exponent: f64,
}

/// Wire form of a term. A nonzero `log_power` would denote `q^e (log q)^k`, which is rejected.
#[derive(Debug, Clone, Deserialize)]
struct RawTerm {
    coeff: f64,
    exponent: f64,
    #[serde(default)]
    log_power: u32,
}

#[derive(Debug, Clone, Deserialize)]
struct RawPowerSum {
    terms: Vec<RawTerm>,
}

impl TryFrom<RawPowerSum> for PowerSum {
    type Error = Error;
    fn try_from(raw: RawPowerSum) -> Result<Self> {
        if raw.terms.iter().any(|t| t.log_power != 0) {
            return Err(Error::LogTermUnsupported);
        }
        PowerSum::new(raw.terms.into_iter().map(|t| (t.coeff, t.exponent)))
    }
}

/// Terms sorted by strictly increasing exponent, no zero coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "RawPowerSum")]
pub struct PowerSum {
    terms: Vec<PowerTerm>,
}

impl PowerSum {
    /// Build from `(coeff, exponent)` pairs, merging near-equal exponents.
    pub fn new<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Result<Self> {
        let mut terms: Vec<PowerTerm> = Vec::new();
        for (c, e) in pairs {
            if !c.is_finite() || !e.is_finite() {
                return Err(Error::NonFiniteTerm);
            }
            terms.push(PowerTerm { coeff: c, exponent: e });
        }
        Ok(Self::normalize(terms))
    }

    fn normalize(mut terms: Vec<PowerTerm>) -> Self {
        terms.sort_by(|a, b| a.exponent.partial_cmp(&b.exponent).unwrap());
        let mut out: Vec<PowerTerm> = Vec::with_capacity(terms.len());
        for t in terms {
            match out.last_mut() {
                Some(last) if (t.exponent - last.exponent).abs() <= MERGE_TOL => last.coeff += t.coeff,
                _ => out.push(t),
            }
        }
        out.retain(|t| t.coeff != 0.0);
        PowerSum { terms: out }
    }

    pub fn zero() -> Self {
        PowerSum { terms: vec![] }
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial(c, 0.0)
    }

    pub fn monomial(coeff: f64, exponent: f64) -> Self {
        Self::normalize(vec![PowerTerm { coeff, exponent }])
    }

    /// `m − m·a_lo·(q/q0)^{−b} − m·a_hi·(q/q0)^{b}`.
    pub fn income_form(m: f64, a_lo: f64, a_hi: f64, b: f64, q0: f64) -> Self {
        Self::normalize(vec![
            PowerTerm { coeff: m, exponent: 0.0 },
            PowerTerm { coeff: -m * a_lo * q0.powf(b), exponent: -b },
            PowerTerm { coeff: -m * a_hi * q0.powf(-b), exponent: b },
        ])
    }

    pub fn terms(&self) -> &[PowerTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn exponents(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.exponent).collect()
    }

    /// Coefficient of the term with this exponent, or 0.
    pub fn coeff_of(&self, exponent: f64) -> f64 {
        self.terms
            .iter()
            .find(|t| (t.exponent - exponent).abs() <= MERGE_TOL)
            .map_or(0.0, |t| t.coeff)
    }

    pub fn evaluate(&self, q: f64) -> Result<f64> {
        if q.is_nan() || q <= 0.0 {
            return Err(Error::NonPositiveArgument(q));
        }
        Ok(self.eval(q))
    }

    /// Unchecked evaluation; callers guarantee q > 0.
    pub fn eval(&self, q: f64) -> f64 {
        self.terms.iter().map(|t| t.coeff * q.powf(t.exponent)).sum()
    }

    /// First derivative in q.
    pub fn derivative(&self) -> PowerSum {
        Self::normalize(
            self.terms
                .iter()
                .map(|t| PowerTerm { coeff: t.coeff * t.exponent, exponent: t.exponent - 1.0 })
                .collect(),
        )
    }

    pub fn scale(&self, k: f64) -> PowerSum {
        Self::normalize(self.terms.iter().map(|t| PowerTerm { coeff: t.coeff * k, exponent: t.exponent }).collect())
    }

    /// Multiply by `q^shift`.
    pub fn shift(&self, shift: f64) -> PowerSum {
        Self::normalize(
            self.terms
                .iter()
                .map(|t| PowerTerm { coeff: t.coeff, exponent: t.exponent + shift })
                .collect(),
        )
    }

    pub fn add(&self, other: &PowerSum) -> PowerSum {
        Self::normalize(self.terms.iter().chain(other.terms.iter()).copied().collect())
    }

    pub fn sub(&self, other: &PowerSum) -> PowerSum {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &PowerSum) -> PowerSum {
        let mut t = Vec::with_capacity(self.len() * other.len());
        for a in &self.terms {
            for b in &other.terms {
                t.push(PowerTerm { coeff: a.coeff * b.coeff, exponent: a.exponent + b.exponent });
            }
        }
        Self::normalize(t)
    }

    /// `a·F + b·q·F′`: each term is multiplied by `a + b·e`.
    pub fn am_transform(&self, a: f64, b: f64) -> PowerSum {
        self.map_coeffs(|e| a + b * e)
    }

    /// Marginal revenue of an inverse demand.
    pub fn marginal(&self) -> PowerSum {
        self.am_transform(1.0, 1.0)
    }

    /// Per-term coefficient map keyed by the exponent.
    pub fn map_coeffs<F: Fn(f64) -> f64>(&self, f: F) -> PowerSum {
        Self::normalize(
            self.terms
                .iter()
                .map(|t| PowerTerm { coeff: t.coeff * f(t.exponent), exponent: t.exponent })
                .collect(),
        )
    }

    fn check_integrable(&self) -> Result<()> {
        match self.terms.iter().find(|t| t.exponent <= -1.0) {
            Some(t) => Err(Error::NonIntegrable(t.exponent)),
            None => Ok(()),
        }
    }

    /// `∫₀^q F`.
    pub fn integral_from_zero(&self) -> Result<PowerSum> {
        self.check_integrable()?;
        Ok(Self::normalize(
            self.terms
                .iter()
                .map(|t| PowerTerm { coeff: t.coeff / (t.exponent + 1.0), exponent: t.exponent + 1.0 })
                .collect(),
        ))
    }

    /// `(1/q)∫₀^q F`.
    pub fn average_from_zero(&self) -> Result<PowerSum> {
        Ok(self.integral_from_zero()?.shift(-1.0))
    }

    /// `CS(q) = ∫₀^q P − q·P(q)`.
    pub fn consumer_surplus(&self) -> Result<PowerSum> {
        self.check_integrable()?;
        Ok(Self::normalize(
            self.terms
                .iter()
                .map(|t| PowerTerm { coeff: -t.exponent / (t.exponent + 1.0) * t.coeff, exponent: t.exponent + 1.0 })
                .collect(),
        ))
    }

    /// Consumer surplus per unit, `CS(q)/q`.
    pub fn consumer_surplus_per_unit(&self) -> Result<PowerSum> {
        Ok(self.consumer_surplus()?.shift(-1.0))
    }

    pub fn tractability_level(&self, tol: f64) -> Result<TractabilityReport> {
        self.tractability_level_max(tol, DEFAULT_MAX_LEVEL)
    }

    /// Smallest k such that all exponents lie on `base + gap·{0..k}`, with base the smallest exponent.
    pub fn tractability_level_max(&self, tol: f64, max_level: usize) -> Result<TractabilityReport> {
        let es = self.exponents();
        if es.is_empty() {
            return Err(Error::NotEvenlySpaced(max_level));
        }
        let base = es[0];
        if es.len() == 1 {
            return Ok(TractabilityReport { level: 0, base, gap: 1.0, index_set: vec![0] });
        }
        let span = es[es.len() - 1] - base;
        for k in (es.len() - 1)..=max_level {
            let gap = span / k as f64;
            let idx: Vec<i64> = es.iter().map(|e| ((e - base) / gap).round() as i64).collect();
            let fits = es.iter().zip(&idx).all(|(e, &i)| (e - (base + gap * i as f64)).abs() <= tol);
            if fits {
                return Ok(TractabilityReport { level: k, base, gap, index_set: idx });
            }
        }
        Err(Error::NotEvenlySpaced(max_level))
    }

    /// Polynomial in `x = q^gap` such that `F(q) = q^base · poly(x)`.
    pub fn to_polynomial(&self, report: &TractabilityReport) -> Result<Polynomial> {
        let mut coeffs = vec![0.0; report.level + 1];
        let tol = 1e-9 * (1.0 + report.gap.abs());
        for t in &self.terms {
            let pos = (t.exponent - report.base) / report.gap;
            let i = pos.round();
            if (pos - i).abs() * report.gap.abs() > tol || i < 0.0 || i as usize > report.level {
                return Err(Error::InconsistentReport);
            }
            coeffs[i as usize] += t.coeff;
        }
        Ok(Polynomial::new(coeffs))
    }
}

/// Result of the even-grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractabilityReport {
    pub level: usize,
    pub base: f64,
    pub gap: f64,
    pub index_set: Vec<i64>,
}

/// Exponent set for a least-squares fit: fixed, or scanned over a common scale.
#[derive(Debug, Clone)]
pub enum ExponentSpec {
    Fixed(Vec<f64>),
    /// Exponents `multipliers[i]·g` for each candidate scale g.
    Grid { multipliers: Vec<f64>, scales: Vec<f64> },
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerFit {
    pub sum: PowerSum,
    pub scale: Option<f64>,
    pub rmse: f64,
    pub max_abs_dev: f64,
}

fn fit_fixed(samples: &[(f64, f64)], exponents: &[f64]) -> Result<PowerFit> {
    if samples.len() < exponents.len() || samples.iter().any(|s| s.0 <= 0.0 || !s.0.is_finite()) {
        return Err(Error::SingularDesign);
    }
    let x = DMatrix::from_fn(samples.len(), exponents.len(), |i, j| samples[i].0.powf(exponents[j]));
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let beta = least_squares(&x, &y)?;
    let resid = &y - &x * &beta;
    let rmse = (resid.norm_squared() / samples.len() as f64).sqrt();
    let max_abs_dev = resid.amax();
    let sum = PowerSum::new(beta.iter().copied().zip(exponents.iter().copied()))?;
    Ok(PowerFit { sum, scale: None, rmse, max_abs_dev })
}

/// Least-squares fit of coefficients, optionally scanning the exponent scale.
pub fn fit_power_sum(samples: &[(f64, f64)], spec: &ExponentSpec) -> Result<PowerFit> {
    match spec {
        ExponentSpec::Fixed(es) => fit_fixed(samples, es),
        ExponentSpec::Grid { multipliers, scales } => {
            let mut best: Option<PowerFit> = None;
            for &g in scales {
                let es: Vec<f64> = multipliers.iter().map(|m| m * g).collect();
                if let Ok(mut fit) = fit_fixed(samples, &es) {
                    fit.scale = Some(g);
                    if best.as_ref().is_none_or(|b| fit.rmse < b.rmse) {
                        best = Some(fit);
                    }
                }
            }
            best.ok_or(Error::SingularDesign)
        }
    }
}
