//! Monopoly and conduct-adjusted first-order conditions over power sums.

use crate::error::{Error, Result};
use crate::numeric::{bisect, CubicSpline, SplineEnds};
use crate::poly_roots::{real_positive_roots, DEFAULT_REAL_TOL};
use crate::power_forms::PowerSum;
use serde::{Deserialize, Serialize};

/// Inverse demand, marginal cost and conduct (1 = monopoly, 1/n = symmetric Cournot).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonopolyProblem {
    pub demand: PowerSum,
    pub marginal_cost: PowerSum,
    #[serde(default = "one")]
    pub conduct: f64,
    #[serde(default)]
    pub q_max: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub q: f64,
    pub profit: f64,
    pub soc_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub q_star: f64,
    pub profit: f64,
    pub soc_ok: bool,
    pub all_candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurplusReport {
    pub producer_per_unit: f64,
    pub consumer_per_unit: f64,
    pub appropriability: f64,
}

impl MonopolyProblem {
    pub fn new(demand: PowerSum, marginal_cost: PowerSum) -> Self {
        MonopolyProblem { demand, marginal_cost, conduct: 1.0, q_max: None }
    }

    pub fn with_conduct(mut self, conduct: f64) -> Self {
        self.conduct = conduct;
        self
    }

    pub fn with_q_max(mut self, q_max: f64) -> Self {
        self.q_max = Some(q_max);
        self
    }

    /// `P + θ·q·P′ − MC`.
    pub fn foc(&self) -> PowerSum {
        self.demand.am_transform(1.0, self.conduct).sub(&self.marginal_cost)
    }

    /// `q·P(q) − ∫₀^q MC`.
    pub fn profit(&self, q: f64) -> Result<f64> {
        let cost = self.marginal_cost.integral_from_zero()?;
        Ok(q * self.demand.evaluate(q)? - cost.eval(q))
    }

    pub fn solve_foc(&self) -> Result<Solution> {
        if !(self.conduct > 0.0) {
            return Err(Error::DomainViolation("conduct must be positive".into()));
        }
        let g = self.foc();
        let dg = g.derivative();
        let mut qs: Vec<f64> = Vec::new();
        if g.len() >= 2 {
            let report = g.tractability_level(1e-9)?;
            let poly = g.to_polynomial(&report)?;
            for x in real_positive_roots(&poly, DEFAULT_REAL_TOL) {
                let q = x.powf(1.0 / report.gap);
                if q.is_finite() && q > 0.0 && self.q_max.is_none_or(|m| q <= m) {
                    qs.push(q);
                }
            }
        }
        qs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut all = Vec::with_capacity(qs.len() + 1);
        for q in qs {
            all.push(Candidate { q, profit: self.profit(q)?, soc_ok: dg.eval(q) < 0.0 });
        }
        if let Some(m) = self.q_max {
            all.push(Candidate { q: m, profit: self.profit(m)?, soc_ok: g.eval(m) >= 0.0 });
        }
        let mut best: Option<&Candidate> = None;
        for c in all.iter().filter(|c| c.soc_ok) {
            if best.is_none_or(|b| c.profit > b.profit) {
                best = Some(c);
            }
        }
        match best {
            None => Err(Error::NoInteriorOptimum),
            Some(b) if b.profit <= 0.0 => Ok(Solution { q_star: 0.0, profit: 0.0, soc_ok: true, all_candidates: all.clone() }),
            Some(b) => Ok(Solution { q_star: b.q, profit: b.profit, soc_ok: b.soc_ok, all_candidates: all.clone() }),
        }
    }

    /// Per-unit producer and consumer surplus at q and their ratio.
    pub fn surplus_report(&self, q: f64) -> Result<SurplusReport> {
        let avg_cost = self.marginal_cost.average_from_zero()?;
        let ps = self.demand.evaluate(q)? - avg_cost.eval(q);
        let cs = self.demand.consumer_surplus_per_unit()?.eval(q);
        Ok(SurplusReport { producer_per_unit: ps, consumer_per_unit: cs, appropriability: ps / (ps + cs) })
    }
}

/// Appropriability at q when a constant marginal cost makes q the monopoly optimum.
pub fn appropriability_at(demand: &PowerSum, q: f64) -> Result<f64> {
    let c = demand.marginal().evaluate(q)?;
    let problem = MonopolyProblem::new(demand.clone(), PowerSum::constant(c));
    Ok(problem.surplus_report(q)?.appropriability)
}

/// Limit of [`appropriability_at`] as q → 0⁺, from the most negative exponent.
/// With no negative exponent the markup vanishes and the limit comes from the smallest positive one.
pub fn appropriability_limit_at_zero(demand: &PowerSum) -> Result<f64> {
    let lead = demand
        .terms()
        .iter()
        .find(|t| t.exponent != 0.0)
        .ok_or_else(|| Error::DomainViolation("demand is constant".into()))?;
    let e = lead.exponent;
    if e <= -1.0 {
        return Err(Error::NonIntegrable(e));
    }
    // markup −e·c·q^e against per-unit surplus −e/(e+1)·c·q^e
    Ok((e + 1.0) / (e + 2.0))
}

/// Pass-through `CS′(s)/CS″(s)` with `s = log q`, for constant marginal cost.
pub fn pass_through(demand: &PowerSum, q: f64) -> Result<f64> {
    if q <= 0.0 {
        return Err(Error::NonPositiveArgument(q));
    }
    let cs = demand.consumer_surplus()?;
    let (mut d1, mut d2) = (0.0, 0.0);
    for t in cs.terms() {
        let v = t.coeff * q.powf(t.exponent);
        d1 += t.exponent * v;
        d2 += t.exponent * t.exponent * v;
    }
    if d2 == 0.0 {
        return Err(Error::ZeroSecondDerivative);
    }
    Ok(d1 / d2)
}

/// Exponent ratios at which `MC0 + MC1·x^b = MR0·x` is solvable by radicals with a unique optimum.
pub const TRACTABLE_KNOTS: [f64; 9] = [-3.0, -2.0, -1.0, -0.5, -1.0 / 3.0, 0.0, 0.25, 1.0 / 3.0, 0.5];

/// Closed-form q (= 1/x) at a tractable exponent ratio, through the power-sum route.
pub fn closed_form_knot(mc0: f64, mc1: f64, mr0: f64, b: f64) -> Result<f64> {
    let g = PowerSum::new([(mc0, 0.0), (mc1, b), (-mr0, 1.0)])?;
    let report = g.tractability_level(1e-9)?;
    let poly = g.to_polynomial(&report)?;
    let roots = real_positive_roots(&poly, DEFAULT_REAL_TOL);
    let y = *roots.last().ok_or(Error::NoInteriorOptimum)?;
    let x = y.powf(1.0 / report.gap);
    Ok(1.0 / x)
}

/// Dense reference solution by bisection in x.
pub fn bisection_solution(mc0: f64, mc1: f64, mr0: f64, b: f64) -> Result<f64> {
    let f = |x: f64| mr0 * x - mc0 - mc1 * x.powf(b);
    let mut hi = 1.0;
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoInteriorOptimum);
        }
    }
    let mut lo = hi;
    while f(lo) > 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::NoInteriorOptimum);
        }
    }
    let x = bisect(f, lo, hi, 1e-15).ok_or(Error::NoInteriorOptimum)?;
    Ok(1.0 / x)
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpolationRow {
    pub b: f64,
    pub q_interp: f64,
    pub q_true: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpolationReport {
    pub knots: Vec<InterpolationRow>,
    pub comparison: Vec<InterpolationRow>,
    pub mean_abs_rel_err: f64,
    pub max_abs_rel_err: f64,
}

/// Spline through closed-form knot solutions compared with bisection on `grid` evenly spaced ratios.
pub fn interpolate_tractable(mc0: f64, mc1: f64, mr0: f64, ends: SplineEnds, grid: usize) -> Result<InterpolationReport> {
    if !(mc1 > 0.0 && mr0 > 0.0) {
        return Err(Error::DomainViolation("MC1 and MR0 must be positive".into()));
    }
    let bs = TRACTABLE_KNOTS;
    let qs: Vec<f64> = bs.iter().map(|&b| closed_form_knot(mc0, mc1, mr0, b)).collect::<Result<_>>()?;
    let spline = CubicSpline::new(&bs, &qs, ends);
    let row = |b: f64, q_true: f64| {
        let q_interp = spline.eval(b);
        InterpolationRow { b, q_interp, q_true, rel_err: q_interp / q_true - 1.0 }
    };
    let knots: Vec<InterpolationRow> = bs.iter().zip(&qs).map(|(&b, &q)| row(b, q)).collect();
    let (lo, hi) = (bs[0], bs[bs.len() - 1]);
    let mut comparison = Vec::with_capacity(grid);
    for i in 0..grid {
        let b = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
        comparison.push(row(b, bisection_solution(mc0, mc1, mr0, b)?));
    }
    let mean = comparison.iter().map(|r| r.rel_err.abs()).sum::<f64>() / grid as f64;
    let max = comparison.iter().map(|r| r.rel_err.abs()).fold(0.0, f64::max);
    Ok(InterpolationReport { knots, comparison, mean_abs_rel_err: mean, max_abs_rel_err: max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn income() -> PowerSum {
        PowerSum::income_form(1.0, -0.5, 2.5, 0.4, 1.0)
    }

    #[test]
    fn constant_elasticity_optimum() {
        let (a, b, c) = (1.0, 0.5, 0.25);
        let sol = MonopolyProblem::new(PowerSum::monomial(a, -b), PowerSum::constant(c)).solve_foc().unwrap();
        assert!((sol.q_star - (a * (1.0 - b) / c).powf(1.0 / b)).abs() < 1e-12);
        assert!((sol.q_star - 4.0).abs() < 1e-12);
    }

    #[test]
    fn income_form_optimum_matches_bracketed_root() {
        let p = income();
        let sol = MonopolyProblem::new(p.clone(), PowerSum::zero()).solve_foc().unwrap();
        let mr = p.marginal();
        let oracle = bisect(|q| mr.eval(q), 1e-6, 1.0, 1e-15).unwrap();
        assert!((sol.q_star - oracle).abs() < 1e-12 * oracle);
        assert!((sol.q_star.powf(0.4) - 0.468_621).abs() < 1e-6);
        assert!((sol.q_star - 0.150_31).abs() < 5e-5);
    }

    #[test]
    fn linear_demand() {
        let p = PowerSum::new([(1.0, 0.0), (-1.0, 1.0)]).unwrap();
        let sol = MonopolyProblem::new(p, PowerSum::zero()).solve_foc().unwrap();
        assert!((sol.q_star - 0.5).abs() < 1e-14);
        assert!((sol.profit - 0.25).abs() < 1e-14);
    }

    #[test]
    fn cournot_conduct() {
        let p = PowerSum::new([(1.0, 0.0), (-1.0, 1.0)]).unwrap();
        let sol = MonopolyProblem::new(p, PowerSum::zero()).with_conduct(0.5).solve_foc().unwrap();
        // P + q P'/2 = 0 → q = 2/3
        assert!((sol.q_star - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn unprofitable_market_reports_zero() {
        let p = PowerSum::new([(1.0, 0.0), (-1.0, 1.0)]).unwrap();
        let mc = PowerSum::new([(0.9, 0.0)]).unwrap();
        let fixed_loss = MonopolyProblem::new(p.clone(), mc).with_q_max(1.0);
        let sol = fixed_loss.solve_foc().unwrap();
        assert!(sol.q_star > 0.0);
        let none = MonopolyProblem::new(PowerSum::monomial(1.0, -0.5), PowerSum::monomial(1.0, -0.5));
        assert!(none.solve_foc().is_err());
    }

    #[test]
    fn appropriability_constant_elasticity() {
        let b = 0.3;
        for c in [0.01, 0.3, 2.0, 10.0] {
            let prob = MonopolyProblem::new(PowerSum::monomial(1.0, -b), PowerSum::constant(c));
            let q = prob.solve_foc().unwrap().q_star;
            let r = prob.surplus_report(q).unwrap();
            assert!((r.appropriability - (1.0 - b) / (2.0 - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn appropriability_income_form() {
        let p = income();
        assert!((appropriability_limit_at_zero(&p).unwrap() - 21.0 / 56.0).abs() < 1e-15);
        assert!((appropriability_at(&p, 1e-20).unwrap() - 21.0 / 56.0).abs() < 1e-12);
        assert!((appropriability_at(&p, 1.0).unwrap() - 63.0 / 118.0).abs() < 1e-12);
        // rational closed form in y = (q/q0)^{4/5}
        for q in [0.01, 0.2, 3.0] {
            let y = f64::powf(q, 0.8);
            let oracle = (21.0 + 105.0 * y) / (56.0 + 180.0 * y);
            assert!((appropriability_at(&p, q).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn pass_through_closed_forms() {
        let t = 0.3;
        let bp = PowerSum::new([(0.5, 0.0), (2.0, -t)]).unwrap();
        for q in [0.01, 1.0, 50.0] {
            assert!((pass_through(&bp, q).unwrap() - 1.0 / (1.0 - t)).abs() < 1e-12);
        }
        let eps = 2.5;
        let ce = PowerSum::monomial(1.0, -1.0 / eps);
        assert!((pass_through(&ce, 0.7).unwrap() - eps / (eps - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn pass_through_matches_numeric_price_response() {
        // dP*/dc by central differences on the solved monopoly
        let p = PowerSum::new([(0.5, 0.0), (2.0, -0.3)]).unwrap();
        let c = 0.8;
        let price = |c: f64| {
            let s = MonopolyProblem::new(p.clone(), PowerSum::constant(c)).solve_foc().unwrap();
            p.eval(s.q_star)
        };
        let h = 1e-5;
        let numeric = (price(c + h) - price(c - h)) / (2.0 * h);
        let q = MonopolyProblem::new(p.clone(), PowerSum::constant(c)).solve_foc().unwrap().q_star;
        assert!((numeric - pass_through(&p, q).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn income_form_pass_through_decreasing() {
        let p = income();
        let mut prev = f64::INFINITY;
        for i in 0..=60 {
            let q = 10f64.powf(-3.0 + 3.0 * i as f64 / 60.0);
            let r = pass_through(&p, q).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn knot_solutions() {
        assert!((closed_form_knot(1.0, 1.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        for &b in &TRACTABLE_KNOTS {
            let cf = closed_form_knot(1.0, 1.0, 1.0, b).unwrap();
            let bi = bisection_solution(1.0, 1.0, 1.0, b).unwrap();
            assert!((cf / bi - 1.0).abs() < 1e-12, "b = {b}: {cf} vs {bi}");
        }
    }

    #[test]
    fn spline_hits_knots() {
        let r = interpolate_tractable(1.0, 1.0, 1.0, SplineEnds::NotAKnot, 200).unwrap();
        assert_eq!(r.comparison.len(), 200);
        for k in &r.knots {
            assert!(k.rel_err.abs() < 1e-14);
        }
    }
}
