//! Closed forms for wage bargaining, sequential sourcing and imperfectly competitive
//! supply chains, built on power sums and Laplace measures.

use crate::error::{Error, Result};
use crate::laplace_log::LaplaceMeasure;
use crate::numeric::{brent, integrate};
use crate::poly_roots::{real_positive_roots, DEFAULT_REAL_TOL};
use crate::power_forms::PowerSum;
use serde::{Deserialize, Serialize};

/// Worker bargaining weight relative to the firm and the worker's outside wage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BargainingParams {
    pub lambda: f64,
    pub outside_wage: f64,
}

/// Relative over-employment under bargaining for demand `p₀ + p_t q^{−t}`.
pub fn sz_hoarding_bp(lambda: f64, t: f64) -> Result<f64> {
    let d = 1.0 + lambda - t * lambda;
    if !(lambda > 0.0) || !(t != 0.0) || !(d > 0.0) {
        return Err(Error::DomainViolation(format!("need λ > 0, t ≠ 0 and 1 + λ − tλ > 0 (λ = {lambda}, t = {t})")));
    }
    let hi = (1.0 + lambda).powf(1.0 / t);
    let lo = d.powf(1.0 / t);
    Ok((hi - lo) / lo)
}

/// Scale each term `c q^e` by `(1+λ)/(1+λ+eλ)`, the bargained wage's integral term.
pub fn sz_wage_transform(mr: &PowerSum, lambda: f64) -> Result<PowerSum> {
    if !(lambda >= 0.0) {
        return Err(Error::DomainViolation(format!("bargaining weight {lambda} must be nonnegative")));
    }
    if let Some(t) = mr.terms().iter().find(|t| (1.0 + lambda + t.exponent * lambda).abs() < 1e-12) {
        return Err(Error::SingularTerm(t.exponent));
    }
    Ok(mr.map_coeffs(|e| (1.0 + lambda) / (1.0 + lambda + e * lambda)))
}

/// Positive root of `g` with `g′ < 0`, the smallest if several.
fn downward_root(g: &PowerSum) -> Result<f64> {
    let report = g.tractability_level(1e-9)?;
    let poly = g.to_polynomial(&report)?;
    let dg = g.derivative();
    real_positive_roots(&poly, DEFAULT_REAL_TOL)
        .into_iter()
        .map(|x| x.powf(1.0 / report.gap))
        .find(|&q| q.is_finite() && dg.eval(q) < 0.0)
        .ok_or(Error::NoPositiveRoot)
}

/// Hoarding `h = q*/q** − 1` where bargained employment solves the transformed condition
/// and neoclassical employment solves `MR = W₀`.
pub fn sz_hoarding(mr: &PowerSum, params: &BargainingParams) -> Result<f64> {
    let w0 = PowerSum::constant(params.outside_wage);
    let bargained = downward_root(&sz_wage_transform(mr, params.lambda)?.sub(&w0))?;
    let neoclassical = downward_root(&mr.sub(&w0))?;
    Ok(bargained / neoclassical - 1.0)
}

/// Inverse demand read off the income distribution, in dollars.
pub fn income_demand() -> PowerSum {
    PowerSum::new([(25_000.0, -0.4), (100_000.0, 0.0), (-125_000.0, 0.4)]).expect("finite terms")
}

fn check_outside_wage(w0: f64) -> Result<()> {
    if w0 > 0.0 && w0 < 100_000.0 {
        Ok(())
    } else {
        Err(Error::DomainViolation(format!("outside wage {w0} must lie in (0, 100000)")))
    }
}

/// Two-radical hoarding formula with the published rounded constants, equal bargaining weights.
pub fn sz_hoarding_income_form(w0: f64) -> Result<f64> {
    check_outside_wage(w0)?;
    let gap2 = (100_000.0 - w0).powi(2);
    let num = 1.0 + (1.0 + 1.2e9 / gap2).sqrt();
    let den = 1.0 + (1.0 + 1.1e8 / gap2).sqrt();
    Ok(1.6 * (num / den).powf(2.5) - 1.0)
}

/// The same quantity solved exactly from [`income_demand`] with equal bargaining weights.
pub fn sz_hoarding_income_form_exact(w0: f64) -> Result<f64> {
    check_outside_wage(w0)?;
    sz_hoarding(&income_demand().marginal(), &BargainingParams { lambda: 1.0, outside_wage: w0 })
}

/// Sequential sourcing: demand and cost exponents `t < u`, `ratio = p_{−u}/mc_{−u}`,
/// and the supplier shares retained under outsourcing and insourcing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcingParams {
    pub t: f64,
    pub u: f64,
    pub ratio: f64,
    pub beta_o: f64,
    pub beta_i: f64,
}

impl SourcingParams {
    fn check(&self) -> Result<()> {
        if !(self.t > 0.0 && self.u > self.t) {
            return Err(Error::DomainViolation(format!("need 0 < t < u, got t = {}, u = {}", self.t, self.u)));
        }
        Ok(())
    }
}

/// `MR(j q*)/MC(q*)` at stage `j`, using the firm's optimality condition at `q*`.
pub fn ac_revenue_cost_ratio(j: f64, p: &SourcingParams) -> Result<f64> {
    p.check()?;
    if !(j > 0.0 && j <= 1.0) {
        return Err(Error::DomainViolation(format!("stage {j} must lie in (0, 1]")));
    }
    Ok((1.0 + p.u) * ((1.0 - p.ratio) * j.powf(p.t) + p.ratio * j.powf(p.u)))
}

/// Optimal bargaining share of the stage-`j` supplier in the relaxed problem.
pub fn ac_beta_star(j: f64, p: &SourcingParams) -> Result<f64> {
    let d = ac_revenue_cost_ratio(j, p)?;
    if !(d > 0.0) {
        return Err(Error::NegativeDenominator);
    }
    Ok(1.0 - 1.0 / d)
}

/// Demand `p₀ + p_{−t} q^t + p_{−2t} q^{2t}` with cost `mc_{−t} q^t` and two sourcing shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictedSourcing {
    pub p0: f64,
    pub p_t: f64,
    pub p_2t: f64,
    pub mc_t: f64,
    pub t: f64,
    pub beta_o: f64,
    pub beta_i: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub k: f64,
    pub lambda: f64,
    /// Insourcing runs over `[q_low, q_high]`.
    pub q_low: f64,
    pub q_high: f64,
    pub lower_clamped: bool,
}

impl RestrictedSourcing {
    fn check(&self) -> Result<()> {
        if !(self.t > 0.0 && self.mc_t > 0.0 && self.p_2t < 0.0) {
            return Err(Error::DomainViolation("need t > 0, mc_{−t} > 0 and p_{−2t} < 0".into()));
        }
        if !(self.beta_o > 0.0 && self.beta_o < 1.0 && self.beta_i > 0.0 && self.beta_i < 1.0) {
            return Err(Error::DomainViolation("sourcing shares must lie in (0, 1)".into()));
        }
        if self.beta_o == self.beta_i {
            return Err(Error::DomainViolation("equal sourcing shares leave the threshold undefined".into()));
        }
        Ok(())
    }

    pub fn marginal_revenue(&self) -> PowerSum {
        PowerSum::new([(self.p0, 0.0), (self.p_t, self.t), (self.p_2t, 2.0 * self.t)]).expect("finite terms").marginal()
    }

    /// Threshold constant: insourcing wins where `MR > λk`.
    pub fn k(&self) -> Result<f64> {
        self.check()?;
        let (o, i, t) = (1.0 - self.beta_o, 1.0 - self.beta_i, self.t);
        Ok((o.powf(1.0 / t) - i.powf(1.0 / t)) / (o.powf((1.0 + t) / t) - i.powf((1.0 + t) / t)))
    }

    /// Supplier output `(v / mc_{−t})^{1/t}` at unit value `v`.
    fn supply(&self, v: f64) -> f64 {
        (v / self.mc_t).powf(1.0 / self.t)
    }
}

/// Quantities bounding the insourcing band for a given shadow price.
pub fn ac_restricted_thresholds(p: &RestrictedSourcing, lambda: f64) -> Result<Thresholds> {
    let k = p.k()?;
    let t = p.t;
    let (a, b, c) = ((1.0 + 2.0 * t) * p.p_2t, (1.0 + t) * p.p_t, p.p0 - lambda * k);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::EmptyInsourcingRegion);
    }
    // stable quadratic roots in y = q^t
    let s = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = if s == 0.0 { (0.0, 0.0) } else { (s / a, c / s) };
    let (y_low, y_high) = (r1.min(r2), r1.max(r2));
    if y_high <= 0.0 {
        return Err(Error::EmptyInsourcingRegion);
    }
    let lower_clamped = y_low < 0.0;
    Ok(Thresholds {
        k,
        lambda,
        q_low: if lower_clamped { 0.0 } else { y_low.powf(1.0 / t) },
        q_high: y_high.powf(1.0 / t),
        lower_clamped,
    })
}

/// Total output reached when the stages `j ∈ (0,1)` are produced in order, with
/// `dj/dq = 1 / S((1 − β(q)) MR(q))`.
fn stage_output(p: &RestrictedSourcing, th: &Thresholds) -> Result<f64> {
    let mr = p.marginal_revenue();
    let rate = |q: f64| {
        let m = mr.eval(q);
        let beta = if q >= th.q_low && q <= th.q_high { p.beta_i } else { p.beta_o };
        1.0 / p.supply((1.0 - beta) * m)
    };
    // output stops short of the first zero of MR, where dj/dq blows up
    let q_zero = brent(|q| mr.eval(q), 1e-12, upper_mr_zero(&mr)?, 1e-15).ok_or(Error::NoPositiveRoot)?;
    let cover = |q: f64| -> f64 {
        let mut pts = vec![0.0];
        for b in [th.q_low, th.q_high] {
            if b > 0.0 && b < q {
                pts.push(b);
            }
        }
        pts.push(q);
        pts.windows(2)
            .map(|w| integrate(rate, w[0], w[1], 1e-14, 1e-12).map(|r| r.value.min(f64::MAX)).unwrap_or(f64::MAX))
            .fold(0.0, |acc, v| (acc + v).min(f64::MAX))
            - 1.0
    };
    brent(cover, 0.0, q_zero * (1.0 - 1e-12), 1e-14).ok_or(Error::NoConvergence(200))
}

fn upper_mr_zero(mr: &PowerSum) -> Result<f64> {
    let mut hi = 1.0;
    for _ in 0..200 {
        if mr.eval(hi) < 0.0 {
            return Ok(hi);
        }
        hi *= 2.0;
    }
    Err(Error::NoPositiveRoot)
}

/// Shadow price closing `MR(q_λ) = λ`, with the resulting band and total output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictedSolution {
    pub thresholds: Thresholds,
    pub output: f64,
}

pub fn ac_solve_restricted(p: &RestrictedSourcing) -> Result<RestrictedSolution> {
    p.check()?;
    let mr = p.marginal_revenue();
    let mr_max = crate::numeric::golden_max(|q| mr.eval(q), 0.0, upper_mr_zero(&mr)?, 1e-14);
    let mr_peak = mr.eval(mr_max);
    let excess = |lambda: f64| -> f64 {
        let th = match ac_restricted_thresholds(p, lambda) {
            Ok(th) => th,
            Err(_) => Thresholds { k: 0.0, lambda, q_low: 0.0, q_high: 0.0, lower_clamped: false },
        };
        match stage_output(p, &th) {
            Ok(q) => mr.eval(q) - lambda,
            Err(_) => f64::NAN,
        }
    };
    let lambda = brent(excess, 1e-9 * mr_peak, mr_peak, 1e-13).ok_or(Error::NoConvergence(200))?;
    let thresholds = ac_restricted_thresholds(p, lambda)?;
    let output = stage_output(p, &thresholds)?;
    Ok(RestrictedSolution { thresholds, output })
}

fn check_stages(ac_len: usize, n: &[f64]) -> Result<()> {
    if ac_len != n.len() {
        return Err(Error::DomainViolation(format!("{ac_len} cost schedules for {} stages", n.len())));
    }
    if let Some(x) = n.iter().find(|&&x| !(x >= 1.0)) {
        return Err(Error::DomainViolation(format!("firm count {x} must be at least 1")));
    }
    Ok(())
}

/// First-stage condition of an `m`-stage Cournot supply chain, acting on each mass point
/// `t`: `p_m Π(1 − t/n_i) − Σ_i ac_i Π_{j≤i}(1 − t/n_j)`.
pub fn salinger_chain(p_m: &LaplaceMeasure, ac: &[LaplaceMeasure], n: &[f64]) -> Result<LaplaceMeasure> {
    check_stages(ac.len(), n)?;
    if !p_m.is_discrete() || ac.iter().any(|a| !a.is_discrete()) {
        return Err(Error::ParameterDomain("supply-chain transform acts on mass points".into()));
    }
    let keep = |t: f64, upto: usize| n[..upto].iter().fold(1.0, |acc, &ni| acc * (1.0 - t / ni));
    let mut masses: Vec<(f64, f64)> = p_m.masses.iter().map(|&(t, w)| (t, w * keep(t, n.len()))).collect();
    for (i, a) in ac.iter().enumerate() {
        masses.extend(a.masses.iter().map(|&(t, w)| (t, -(w * keep(t, i + 1)))));
    }
    Ok(LaplaceMeasure::from_masses(masses))
}

/// [`salinger_chain`] on power sums: a term at exponent `e` sits at `t = −e`.
pub fn salinger_chain_power(p_m: &PowerSum, ac: &[PowerSum], n: &[f64]) -> Result<PowerSum> {
    check_stages(ac.len(), n)?;
    let keep = |e: f64, upto: usize| n[..upto].iter().fold(1.0, |acc, &ni| acc * (1.0 - (-e) / ni));
    let mut out = p_m.map_coeffs(|e| keep(e, n.len()));
    for (i, a) in ac.iter().enumerate() {
        out = out.sub(&a.map_coeffs(|e| keep(e, i + 1)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace_log::{measure_to_power_sum, power_sum_to_measure};
    use crate::monopoly::MonopolyProblem;
    use proptest::prelude::*;

    #[test]
    fn bp_hoarding() {
        assert_eq!(sz_hoarding_bp(1.0, 0.5).unwrap(), 7.0 / 9.0);
        assert!(sz_hoarding_bp(1e-9, 0.5).unwrap() < 1e-8);
        let mut prev = 0.0;
        for k in 1..100 {
            let h = sz_hoarding_bp(1.0, k as f64 / 100.0).unwrap();
            assert!(h > prev);
            prev = h;
        }
        assert!(matches!(sz_hoarding_bp(1.0, 2.5), Err(Error::DomainViolation(_))));
    }

    #[test]
    fn bp_hoarding_matches_root_solution() {
        // demand 3 + 2q^{−1/2}: MR has terms at exponents 0 and −1/2
        let mr = PowerSum::new([(3.0, 0.0), (2.0, -0.5)]).unwrap().marginal();
        for &(lambda, w) in &[(1.0, 3.4), (0.5, 3.9), (2.0, 3.2)] {
            let mr_shift = mr.sub(&PowerSum::constant(3.0));
            let h = sz_hoarding(&mr_shift, &BargainingParams { lambda, outside_wage: w - 3.0 }).unwrap();
            assert!((h - sz_hoarding_bp(lambda, 0.5).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn wage_transform_multipliers() {
        let mr = PowerSum::new([(2.0, -0.4), (5.0, 0.0), (-1.0, 0.7)]).unwrap();
        let w = sz_wage_transform(&mr, 1.0).unwrap();
        assert!((w.coeff_of(-0.4) - 2.0 * 2.0 / 1.6).abs() < 1e-14);
        assert_eq!(w.coeff_of(0.0), 5.0);
        assert!((w.coeff_of(0.7) + 2.0 / 2.7).abs() < 1e-14);
        assert_eq!(sz_wage_transform(&PowerSum::monomial(1.0, -2.0), 1.0), Err(Error::SingularTerm(-2.0)));
        // the transform equals (1+λ)/(λ q^{1+1/λ}) ∫₀^q x^{1/λ} MR(x) dx
        let lambda = 0.7;
        let q = 1.3;
        let direct = integrate(|x| x.powf(1.0 / lambda) * mr.eval(x), 0.0, q, 0.0, 1e-13).unwrap().value * (1.0 + lambda)
            / (lambda * q.powf(1.0 + 1.0 / lambda));
        let t = sz_wage_transform(&mr, lambda).unwrap().eval(q);
        assert!((t - direct).abs() < 1e-12 * direct.abs());
    }

    #[test]
    fn income_form_hoarding() {
        let printed: Vec<f64> = (0..100).map(|i| sz_hoarding_income_form(10_000.0 + 400.0 * i as f64).unwrap()).collect();
        let exact: Vec<f64> = (0..100).map(|i| sz_hoarding_income_form_exact(10_000.0 + 400.0 * i as f64).unwrap()).collect();
        assert!(printed.windows(2).all(|w| w[1] > w[0]));
        assert!(exact.windows(2).all(|w| w[1] > w[0]));
        let mid = sz_hoarding_income_form_exact(30_000.0).unwrap();
        assert!((mid - 0.59).abs() <= 0.05);
        // both conditions are quadratics in q^{2/5}
        let oracle = |w0: f64| {
            let g = (100_000.0 - w0) / 50_000.0;
            let bargained = (g + (g * g + 4.375).sqrt()) / (35.0 / 6.0);
            let neoclassical = (g + (g * g + 4.2).sqrt()) / 7.0;
            (bargained / neoclassical).powf(2.5) - 1.0
        };
        assert!((mid - oracle(30_000.0)).abs() < 1e-12, "{mid}");
        assert!((mid - 0.613_245_856_543_136_7).abs() < 1e-12);
        let rise = sz_hoarding_income_form_exact(50_000.0).unwrap() - mid;
        assert!(rise > 0.0 && rise < 0.0125, "{rise}");
        assert!(matches!(sz_hoarding_income_form(100_000.0), Err(Error::DomainViolation(_))));
    }

    #[test]
    fn beta_star_shapes() {
        let base = SourcingParams { t: 0.35, u: 0.7, ratio: 0.0, beta_o: 0.3, beta_i: 0.8 };
        assert!((ac_beta_star(1.0, &base).unwrap() - (1.0 - 1.0 / 1.7)).abs() < 1e-15);
        let grid: Vec<f64> = (1..=200).map(|i| i as f64 / 200.0).collect();
        let rising: Vec<f64> = grid.iter().filter_map(|&j| ac_beta_star(j, &base).ok()).collect();
        assert!(rising.windows(2).all(|w| w[1] > w[0]));
        let hump = SourcingParams { ratio: -4.0, ..base };
        let vals: Vec<(f64, f64)> = grid.iter().filter_map(|&j| ac_beta_star(j, &hump).ok().map(|b| (j, b))).collect();
        let (jmax, _) = vals.iter().copied().fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert!(jmax > vals[0].0 && jmax < 1.0);
        assert_eq!(ac_beta_star(0.1, &SourcingParams { ratio: 2.0, ..base }), Err(Error::NegativeDenominator));
    }

    proptest! {
        #[test]
        fn beta_star_comoves_with_marginal_revenue(t in 0.05f64..1.0, du in 0.05f64..1.5, ratio in -5.0f64..0.9, j in 0.05f64..0.95) {
            let p = SourcingParams { t, u: t + du, ratio, beta_o: 0.3, beta_i: 0.8 };
            let h = 1e-6;
            if let (Ok(b0), Ok(b1)) = (ac_beta_star(j - h, &p), ac_beta_star(j + h, &p)) {
                let m0 = ac_revenue_cost_ratio(j - h, &p).unwrap();
                let m1 = ac_revenue_cost_ratio(j + h, &p).unwrap();
                if (m1 - m0).abs() > 1e-9 {
                    prop_assert_eq!((b1 - b0).signum(), (m1 - m0).signum());
                }
            }
        }

        #[test]
        fn wage_transform_vanishing_weight_is_identity(cs in prop::collection::vec((-3.0f64..3.0, -0.9f64..2.0), 1..6)) {
            let mr = PowerSum::new(cs).unwrap();
            let w = sz_wage_transform(&mr, 0.0).unwrap();
            prop_assert_eq!(w, mr);
        }
    }

    fn figure_params() -> RestrictedSourcing {
        RestrictedSourcing { p0: 0.2, p_t: 2.0, p_2t: -4.0, mc_t: 0.5, t: 0.5, beta_o: 0.3, beta_i: 0.8 }
    }

    #[test]
    fn restricted_thresholds() {
        let p = figure_params();
        assert!((p.k().unwrap() - 0.45 / 0.335).abs() < 1e-13);
        let mr = p.marginal_revenue();
        let th = ac_restricted_thresholds(&p, 0.3).unwrap();
        assert!(!th.lower_clamped && th.q_low < th.q_high);
        for q in [th.q_low, th.q_high] {
            assert!((mr.eval(q) - 0.3 * th.k).abs() < 1e-12);
        }
        // λk below p₀ puts the lower root at zero
        let low = ac_restricted_thresholds(&p, 0.1).unwrap();
        assert!(low.lower_clamped && low.q_low == 0.0);
        assert_eq!(ac_restricted_thresholds(&p, 0.4), Err(Error::EmptyInsourcingRegion));
        let same = RestrictedSourcing { beta_i: 0.3, ..p };
        assert!(matches!(ac_restricted_thresholds(&same, 0.3), Err(Error::DomainViolation(_))));
    }

    #[test]
    fn restricted_solution_has_interior_band() {
        let p = figure_params();
        let s = ac_solve_restricted(&p).unwrap();
        let th = s.thresholds;
        let mr = p.marginal_revenue();
        assert!((mr.eval(s.output) - th.lambda).abs() < 1e-9);
        assert!(th.q_high > th.q_low && th.q_high < s.output, "{s:?}");
        // output integral reaches one exactly at the solved output
        let rate = |q: f64| {
            let beta = if q >= th.q_low && q <= th.q_high { p.beta_i } else { p.beta_o };
            (p.mc_t / ((1.0 - beta) * mr.eval(q))).powf(1.0 / p.t)
        };
        let j: f64 = [(0.0, th.q_low), (th.q_low, th.q_high), (th.q_high, s.output)]
            .iter()
            .map(|&(a, b)| integrate(rate, a, b, 1e-14, 1e-12).unwrap().value)
            .sum();
        assert!((j - 1.0).abs() < 1e-8);
        assert!((th.lambda - 0.349_696_632_9).abs() < 1e-8);
        assert!((th.q_low - 0.022_371_788_7).abs() < 1e-8);
        assert!((th.q_high - 0.050_817_774_9).abs() < 1e-8);
        assert!((s.output - 0.099_688_481_1).abs() < 1e-8);
    }

    #[test]
    fn single_stage_chain_is_the_monopoly_condition() {
        let p = PowerSum::new([(1.5, 0.0), (2.0, -0.4), (-0.3, 0.4)]).unwrap();
        let ac = PowerSum::new([(0.2, 0.0), (0.1, 0.4)]).unwrap();
        let chain = salinger_chain_power(&p, std::slice::from_ref(&ac), &[1.0]).unwrap();
        let foc = MonopolyProblem::new(p.clone(), ac.marginal()).foc();
        assert_eq!(chain, foc);
        let via_measure =
            measure_to_power_sum(&salinger_chain(&power_sum_to_measure(&p), &[power_sum_to_measure(&ac)], &[1.0]).unwrap())
                .unwrap();
        assert_eq!(via_measure, foc);
        let comp = salinger_chain_power(&p, &[ac.clone(), ac.clone()], &[f64::INFINITY, f64::INFINITY]).unwrap();
        assert_eq!(comp, p.sub(&ac).sub(&ac));
    }

    #[test]
    fn two_stage_chain_matches_backward_induction() {
        let p = PowerSum::new([(2.0, 0.0), (-1.0, 0.5)]).unwrap();
        let ac = [PowerSum::constant(0.3), PowerSum::constant(0.4)];
        let n = [2.0, 3.0];
        let f1 = salinger_chain_power(&p, &ac, &n).unwrap();
        // stage 2 sells to consumers; stage 1 faces stage 2's competition-adjusted marginal profit
        let p1 = p.am_transform(1.0, 1.0 / n[1]).sub(&ac[1].am_transform(1.0, 1.0 / n[1]));
        let g1 = p1.am_transform(1.0, 1.0 / n[0]).sub(&ac[0].am_transform(1.0, 1.0 / n[0]));
        let q_chain = downward_root(&f1).unwrap();
        let q_back = downward_root(&g1).unwrap();
        assert!((q_chain - q_back).abs() < 1e-12 * q_back);
    }
}
