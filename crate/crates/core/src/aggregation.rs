//! Hypergeometric-family special functions and closed-form aggregation of
//! power-form firm outcomes over a productivity density.

use crate::error::{Error, Result};
use crate::numeric::integrate;
use crate::poly_roots::{solve_any, Polynomial};
use crate::power_forms::{PowerSum, TractabilityReport};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

const SERIES_CAP: usize = 100_000;
const SERIES_REL: f64 = 1e-16;
const QUAD_REL: f64 = 1e-13;
/// Largest polynomial degree accepted after exponent gridding.
pub const MAX_DEGREE: usize = 64;

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x.fract() == 0.0
}

fn is_nonnegative_integer(x: f64) -> bool {
    x >= 0.0 && x.fract() == 0.0
}

fn rgamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

/// Sum terms produced by `next(n, previous)` until three in a row are negligible.
fn sum_series<F: FnMut(usize, f64) -> f64>(first: f64, mut next: F) -> Result<f64> {
    let mut sum = first;
    let mut term = first;
    let mut small = 0;
    for n in 1..SERIES_CAP {
        term = next(n, term);
        sum += term;
        if !sum.is_finite() {
            return Err(Error::Divergent);
        }
        if term.abs() <= SERIES_REL * sum.abs() {
            small += 1;
            if small == 3 {
                return Ok(sum);
            }
        } else {
            small = 0;
        }
    }
    Err(Error::Divergent)
}

fn hyp_series(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    sum_series(1.0, |n, t| {
        let k = (n - 1) as f64;
        t * (a + k) * (b + k) / ((c + k) * n as f64) * z
    })
}

/// `∫₀¹ t^{p−1}(1−t)^{q−1} g(t) dt`, split at ½ with power substitutions for
/// exponents below one so the endpoint singularities become smooth.
fn beta_kernel<F: FnMut(f64) -> f64>(p: f64, q: f64, mut g: F, abs_tol: f64) -> Result<f64> {
    let left = if p < 1.0 {
        integrate(|u| (1.0 - u.powf(1.0 / p)).powf(q - 1.0) * g(u.powf(1.0 / p)) / p, 0.0, 0.5f64.powf(p), abs_tol, QUAD_REL)?
    } else {
        integrate(|t| t.powf(p - 1.0) * (1.0 - t).powf(q - 1.0) * g(t), 0.0, 0.5, abs_tol, QUAD_REL)?
    };
    let right = if q < 1.0 {
        integrate(
            |v| {
                let t = 1.0 - v.powf(1.0 / q);
                t.powf(p - 1.0) * g(t) / q
            },
            0.0,
            0.5f64.powf(q),
            abs_tol,
            QUAD_REL,
        )?
    } else {
        integrate(|t| t.powf(p - 1.0) * (1.0 - t).powf(q - 1.0) * g(t), 0.5, 1.0, abs_tol, QUAD_REL)?
    };
    Ok(left.value + right.value)
}

fn hyp_euler(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    let pre = (ln_gamma(c) - ln_gamma(b) - ln_gamma(c - b)).exp();
    Ok(pre * beta_kernel(b, c - b, |t| (1.0 - z * t).powf(-a), 0.0)?)
}

/// Gauss hypergeometric function ₂F₁(a, b; c; z) for real arguments, z ≤ 1.
pub fn hyp2f1(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    if ![a, b, c, z].iter().all(|v| v.is_finite()) {
        return Err(Error::ParameterDomain("non-finite argument".into()));
    }
    if is_nonpositive_integer(c) {
        return Err(Error::ParameterDomain(format!("c = {c} is a nonpositive integer")));
    }
    if z == 0.0 || a == 0.0 || b == 0.0 {
        return Ok(1.0);
    }
    // terminating series are polynomials in z
    if is_nonpositive_integer(a) || is_nonpositive_integer(b) {
        return hyp_series(a, b, c, z);
    }
    if z > 1.0 {
        return Err(Error::Divergent);
    }
    let s = c - a - b;
    if z == 1.0 {
        if s <= 0.0 {
            return Err(Error::Divergent);
        }
        return Ok(gamma(c) * gamma(s) * rgamma(c - a) * rgamma(c - b));
    }
    if z < -0.5 {
        let w = z / (z - 1.0);
        return Ok((1.0 - z).powf(-a) * hyp2f1(a, c - b, c, w)?);
    }
    if z <= 0.9 {
        return hyp_series(a, b, c, z);
    }
    if (s - s.round()).abs() > 1e-3 {
        let w = 1.0 - z;
        let first = gamma(c) * gamma(s) * rgamma(c - a) * rgamma(c - b) * hyp_series(a, b, 1.0 - s, w)?;
        let second = w.powf(s) * gamma(c) * gamma(-s) * rgamma(a) * rgamma(b) * hyp_series(c - a, c - b, 1.0 + s, w)?;
        return Ok(first + second);
    }
    if c > b && b > 0.0 {
        return hyp_euler(a, b, c, z);
    }
    if c > a && a > 0.0 {
        return hyp_euler(b, a, c, z);
    }
    hyp_series(a, b, c, z)
}

/// Appell F₁(a; b1, b2; c; x, y).
pub fn appell_f1(a: f64, b1: f64, b2: f64, c: f64, x: f64, y: f64) -> Result<f64> {
    if ![a, b1, b2, c, x, y].iter().all(|v| v.is_finite()) {
        return Err(Error::ParameterDomain("non-finite argument".into()));
    }
    if is_nonpositive_integer(c) {
        return Err(Error::ParameterDomain(format!("c = {c} is a nonpositive integer")));
    }
    if y == 0.0 || b2 == 0.0 {
        return hyp2f1(a, b1, c, x);
    }
    if x == 0.0 || b1 == 0.0 {
        return hyp2f1(a, b2, c, y);
    }
    if x.abs() <= 0.8 && y.abs() <= 0.8 {
        // Σ_m (a)_m (b1)_m / ((c)_m m!) x^m ₂F₁(a+m, b2; c+m; y)
        let mut coef = 1.0;
        let mut sum = hyp2f1(a, b2, c, y)?;
        let mut small = 0;
        for m in 1..SERIES_CAP {
            let k = (m - 1) as f64;
            coef *= (a + k) * (b1 + k) / ((c + k) * m as f64) * x;
            let term = coef * hyp2f1(a + m as f64, b2, c + m as f64, y)?;
            sum += term;
            if !sum.is_finite() {
                return Err(Error::Divergent);
            }
            if term.abs() <= SERIES_REL * sum.abs() {
                small += 1;
                if small == 3 {
                    return Ok(sum);
                }
            } else {
                small = 0;
            }
        }
        return Err(Error::Divergent);
    }
    if c > a && a > 0.0 && x < 1.0 && y < 1.0 {
        let pre = (ln_gamma(c) - ln_gamma(a) - ln_gamma(c - a)).exp();
        let v = beta_kernel(a, c - a, |t| (1.0 - x * t).powf(-b1) * (1.0 - y * t).powf(-b2), 0.0)?;
        return Ok(pre * v);
    }
    Err(Error::ParameterDomain(format!(
        "F1 needs |x|, |y| ≤ 0.8 or c > a > 0 with x, y < 1; got a = {a}, c = {c}, x = {x}, y = {y}"
    )))
}

/// Lauricella F_D(b; b₁..b_n; b+1; x₁..x_n) for real arguments below one.
pub fn lauricella_fd(b: f64, bs: &[f64], xs: &[f64]) -> Result<f64> {
    let zs: Vec<Complex64> = xs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Ok(lauricella_fd_complex(b, bs, &zs)?.re)
}

/// Complex-argument form, principal branch. The arguments must avoid the real ray [1, ∞).
/// For b > 0 this is the Euler integral; for negative non-integer b it is the analytic
/// continuation in b.
pub fn lauricella_fd_complex(b: f64, bs: &[f64], zs: &[Complex64]) -> Result<Complex64> {
    if bs.len() != zs.len() {
        return Err(Error::ParameterDomain("parameter and argument counts differ".into()));
    }
    if !b.is_finite() || bs.iter().any(|v| !v.is_finite()) || zs.iter().any(|z| !z.is_finite()) {
        return Err(Error::ParameterDomain("non-finite argument".into()));
    }
    if is_nonpositive_integer(b) {
        return Err(Error::ParameterDomain(format!("b = {b} is a nonpositive integer")));
    }
    // factors with x = 1 move into the (1−y) kernel exponent
    let mut kernel_q = 1.0;
    let mut rest_b = Vec::new();
    let mut rest_z = Vec::new();
    for (&bi, &z) in bs.iter().zip(zs) {
        if z.im == 0.0 && z.re >= 1.0 {
            if z.re > 1.0 {
                return Err(Error::ParameterDomain(format!("argument {} lies beyond the branch point", z.re)));
            }
            kernel_q -= bi;
        } else if bi != 0.0 && z != Complex64::new(0.0, 0.0) {
            rest_b.push(bi);
            rest_z.push(z);
        }
    }
    if kernel_q <= 0.0 {
        return Err(Error::SingularIntegrand);
    }
    if rest_z.is_empty() && kernel_q == 1.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    if b < 0.0 {
        if kernel_q != 1.0 {
            return Err(Error::ParameterDomain("unit argument requires b > 0".into()));
        }
        return Ok(power_factor_antiderivative(b, &rest_b, &rest_z, 1.0)? * b);
    }
    let g = |t: f64| {
        rest_b
            .iter()
            .zip(&rest_z)
            .fold(Complex64::new(1.0, 0.0), |acc, (&bi, &z)| acc * (Complex64::new(1.0, 0.0) - z * t).powf(-bi))
    };
    if rest_z.iter().all(|z| z.im == 0.0) {
        let v = beta_kernel(b, kernel_q, |t| g(t).re, 0.0)?;
        return Ok(Complex64::new(b * v, 0.0));
    }
    let scale = beta_kernel(b, kernel_q, |t| g(t).norm(), 0.0)?;
    let tol = 1e-14 * scale;
    let re = beta_kernel(b, kernel_q, |t| g(t).re, tol)?;
    let im = beta_kernel(b, kernel_q, |t| g(t).im, tol)?;
    Ok(Complex64::new(b * re, b * im))
}

/// Taylor coefficients of `Π(1 − u_k t)^{−b_k}` at zero, up to `n` terms.
fn product_series(bs: &[f64], us: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    acc[0] = Complex64::new(1.0, 0.0);
    for (&bk, &u) in bs.iter().zip(us) {
        let mut binom = vec![Complex64::new(0.0, 0.0); n];
        binom[0] = Complex64::new(1.0, 0.0);
        for m in 1..n {
            binom[m] = binom[m - 1] * u * ((bk + (m - 1) as f64) / m as f64);
        }
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            if acc[i] == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n - i {
                next[i + j] += acc[i] * binom[j];
            }
        }
        acc = next;
    }
    acc
}

/// An antiderivative of `t^{b−1} Π(1 − u_k t)^{−b_k}` evaluated at `x > 0`: termwise
/// integration of the product series up to a point where it converges at ratio ½,
/// adaptive quadrature beyond. Terms with `b + n = 0` integrate to logarithms.
fn power_factor_antiderivative(b: f64, bs: &[f64], us: &[Complex64], x: f64) -> Result<Complex64> {
    let umax = us.iter().map(|u| u.norm()).fold(0.0, f64::max);
    let t0 = if umax == 0.0 { x } else { x.min(0.5 / umax) };
    let mut n_terms = 64;
    let coeffs = loop {
        let c = product_series(bs, us, n_terms);
        let tail = c[n_terms - 3..].iter().map(|v| v.norm() * t0.powi(n_terms as i32 - 3)).fold(0.0, f64::max);
        let head = c.iter().enumerate().map(|(n, v)| v.norm() * t0.powi(n as i32)).fold(0.0, f64::max);
        if tail <= SERIES_REL * head || n_terms >= 1024 {
            break c;
        }
        n_terms *= 2;
    };
    let mut series = Complex64::new(0.0, 0.0);
    for (n, c) in coeffs.iter().enumerate() {
        let e = b + n as f64;
        if e == 0.0 {
            series += c * t0.ln();
        } else {
            series += c * (t0.powf(e) / e);
        }
    }
    if t0 >= x {
        return Ok(series);
    }
    let g = |t: f64| {
        bs.iter()
            .zip(us)
            .fold(Complex64::new(t.powf(b - 1.0), 0.0), |acc, (&bk, &u)| acc * (Complex64::new(1.0, 0.0) - u * t).powf(-bk))
    };
    let scale = integrate(|t| g(t).norm(), t0, x, 0.0, 1e-8)?.value;
    let tol = 1e-14 * scale.max(series.norm());
    let re = integrate(|t| g(t).re, t0, x, tol, QUAD_REL)?.value;
    let im = if us.iter().all(|u| u.im == 0.0) { 0.0 } else { integrate(|t| g(t).im, t0, x, tol, QUAD_REL)?.value };
    Ok(series + Complex64::new(re, im))
}

/// Which special function a closed form needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationCase {
    PurePower,
    Hypergeometric,
    Appell,
    Lauricella,
}

/// Linear factors of a polynomial raised to a common power, `N(0)^p Π(1 − u_k x)^p`.
struct Factored {
    scale: f64,
    us: Vec<Complex64>,
    bs: Vec<f64>,
    numeric_roots: bool,
}

fn polish(p: &Polynomial, z: Complex64) -> Complex64 {
    let dp = p.derivative();
    let mut z = z;
    for _ in 0..3 {
        let d = dp.eval_complex(z);
        if d.norm() == 0.0 {
            break;
        }
        let step = p.eval_complex(z) / d;
        if !step.is_finite() {
            break;
        }
        z -= step;
    }
    z
}

fn poly_pow(p: &Polynomial, k: usize) -> Polynomial {
    (0..k).fold(Polynomial::new(vec![1.0]), |acc, _| acc.mul(p))
}

/// `∫_{lo}^{hi} x^{exponent} Π N_i(x)^{p_i} dx` for `0 < lo, hi` with every `N_i` free of
/// real roots on `[0, max(lo, hi)]` and positive at zero. Nonnegative integer powers are
/// expanded; the rest are factored into linear terms and integrated through ₂F₁, F₁ or F_D.
pub fn power_factor_integral(exponent: f64, factors: &[(Polynomial, f64)], lo: f64, hi: f64) -> Result<(f64, AggregationCase)> {
    factor_integral(exponent, factors, lo, hi).map(|(v, c, _)| (v, c))
}

fn factor_integral(exponent: f64, factors: &[(Polynomial, f64)], lo: f64, hi: f64) -> Result<(f64, AggregationCase, bool)> {
    if !(lo > 0.0 && hi > 0.0) {
        return Err(Error::PreconditionViolated(format!("integration limits {lo}, {hi} must be positive")));
    }
    let x_max = lo.max(hi);
    let mut expanded = Polynomial::new(vec![1.0]);
    let mut fac = Factored { scale: 1.0, us: vec![], bs: vec![], numeric_roots: false };
    for (i, (n, p)) in factors.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let n0 = n.coeffs()[0];
        if n.degree() == 0 {
            if n0 <= 0.0 && p.fract() != 0.0 {
                return Err(Error::PreconditionViolated(format!("factor {i} is the non-positive constant {n0}")));
            }
            fac.scale *= n0.powf(*p);
            continue;
        }
        if is_nonnegative_integer(*p) && *p as usize * n.degree() <= 4 * MAX_DEGREE {
            expanded = expanded.mul(&poly_pow(n, *p as usize));
            continue;
        }
        if n0 <= 0.0 {
            return Err(Error::PreconditionViolated(format!("factor {i} is not positive at zero (value {n0})")));
        }
        let roots = solve_any(n)?;
        fac.numeric_roots |= n.degree() > 4;
        for r in roots {
            let mut r = polish(n, r);
            if r.im.abs() <= 1e-12 * r.norm() {
                r.im = 0.0;
            }
            if r.im == 0.0 && r.re >= 0.0 && r.re <= x_max * (1.0 + 1e-12) {
                return Err(Error::PreconditionViolated(format!(
                    "factor {i} has a real root at {} inside [0, {x_max}]",
                    r.re
                )));
            }
            fac.us.push(Complex64::new(1.0, 0.0) / r);
            fac.bs.push(-p);
        }
        fac.scale *= n0.powf(*p);
    }
    let real_args = fac.us.iter().all(|u| u.im == 0.0);
    let case = match fac.us.len() {
        0 => AggregationCase::PurePower,
        1 => AggregationCase::Hypergeometric,
        2 => AggregationCase::Appell,
        _ => AggregationCase::Lauricella,
    };
    let mut total = 0.0;
    for (j, &w) in expanded.coeffs().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let b = exponent + j as f64 + 1.0;
        let anti = |x: f64| -> Result<f64> {
            if fac.us.is_empty() {
                return Ok(if b == 0.0 { x.ln() } else { x.powf(b) / b });
            }
            if b > 0.0 {
                let named = match (fac.us.len(), real_args) {
                    (1, true) => hyp2f1(b, fac.bs[0], b + 1.0, fac.us[0].re * x).ok(),
                    (2, true) => appell_f1(b, fac.bs[0], fac.bs[1], b + 1.0, fac.us[0].re * x, fac.us[1].re * x).ok(),
                    _ => {
                        let zs: Vec<Complex64> = fac.us.iter().map(|u| u * x).collect();
                        lauricella_fd_complex(b, &fac.bs, &zs).ok().map(|v| v.re)
                    }
                };
                if let Some(v) = named {
                    return Ok(x.powf(b) / b * v);
                }
            }
            Ok(power_factor_antiderivative(b, &fac.bs, &fac.us, x)?.re)
        };
        total += w * (anti(hi)? - anti(lo)?);
    }
    Ok((fac.scale * total, case, fac.numeric_roots))
}

/// Firm primitives for aggregation. Marginal cost is `MC₀(q) + a·MC₁(q)`, `a` is
/// distributed with density `G′(a)` written as a power sum in `a`, and the firms
/// aggregated are those whose optimal output lies in `quantity_range`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub price: PowerSum,
    pub mc0: PowerSum,
    pub mc1: PowerSum,
    pub density: PowerSum,
    pub target_power: f64,
    pub quantity_range: [f64; 2],
}

/// Aggregates over the firm population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
    pub power_moment: f64,
    pub firm_mass: f64,
}

impl Aggregates {
    fn map2(&self, o: &Aggregates, f: impl Fn(f64, f64) -> f64) -> Aggregates {
        Aggregates {
            revenue: f(self.revenue, o.revenue),
            cost: f(self.cost, o.cost),
            profit: f(self.profit, o.profit),
            power_moment: f(self.power_moment, o.power_moment),
            firm_mass: f(self.firm_mass, o.firm_mass),
        }
    }

    fn values(&self) -> [f64; 5] {
        [self.revenue, self.cost, self.profit, self.power_moment, self.firm_mass]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub closed_form: Aggregates,
    pub quadrature: Aggregates,
    pub deltas: Aggregates,
    pub max_relative_delta: f64,
    /// Common exponent spacing of `MR − MC₀` and `MC₁`.
    pub spacing: f64,
    pub case: AggregationCase,
    pub numeric_roots: bool,
}

/// `q^base · N(q^spacing)`.
#[derive(Debug, Clone)]
struct GridForm {
    base: f64,
    poly: Polynomial,
}

fn float_gcd(mut a: f64, mut b: f64, tol: f64) -> f64 {
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    while b > tol {
        let mut r = a % b;
        if r > b - tol {
            r = 0.0;
        }
        a = b;
        b = r;
    }
    a
}

fn common_spacing(forms: &[&PowerSum]) -> Result<f64> {
    let mut diffs = Vec::new();
    for f in forms {
        let es = f.exponents();
        if es.is_empty() {
            return Err(Error::PreconditionViolated("a factored form is identically zero".into()));
        }
        diffs.extend(es.iter().skip(1).map(|e| e - es[0]));
    }
    if diffs.is_empty() {
        return Ok(1.0);
    }
    let span = diffs.iter().fold(0.0f64, |m, d| m.max(*d));
    let tol = 1e-9 * span.max(1.0);
    let g = diffs.iter().fold(0.0, |g, &d| if g == 0.0 { d } else { float_gcd(g, d, tol) });
    let fits = diffs.iter().all(|d| {
        let k = d / g;
        (k - k.round()).abs() * g <= 1e-8 * span.max(1.0)
    });
    if !fits || span / g > MAX_DEGREE as f64 + 0.5 {
        return Err(Error::PreconditionViolated(format!(
            "exponents of MR − MC₀ and MC₁ share no spacing with degree ≤ {MAX_DEGREE}"
        )));
    }
    Ok(g)
}

fn grid_form(f: &PowerSum, spacing: f64) -> Result<GridForm> {
    let es = f.exponents();
    let base = es[0];
    let level = ((es[es.len() - 1] - base) / spacing).round() as usize;
    let report = TractabilityReport { level, base, gap: spacing, index_set: vec![] };
    let poly = f.to_polynomial(&report).map_err(|_| Error::PreconditionViolated("exponent grid mismatch".into()))?;
    Ok(GridForm { base, poly })
}

/// `β N(x) + α x N′(x)`, so that `d/dq [q^β N(q^α)] = q^{β−1}·this(q^α)`.
fn log_derivative_poly(g: &GridForm, alpha: f64) -> Polynomial {
    let c = g.poly.coeffs();
    Polynomial::new(c.iter().enumerate().map(|(j, v)| v * (g.base + alpha * j as f64)).collect())
}

struct Prepared {
    alpha: f64,
    gap: GridForm,
    cost: GridForm,
    /// `Ñ_gap·N_cost − N_gap·Ñ_cost`
    w: Polynomial,
    lo: f64,
    hi: f64,
}

fn prepare(spec: &AggregationSpec) -> Result<Prepared> {
    let [lo, hi] = spec.quantity_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::PreconditionViolated(format!("quantity range [{lo}, {hi}] must satisfy 0 < lo < hi < ∞")));
    }
    let gap_form = spec.price.marginal().sub(&spec.mc0);
    let alpha = common_spacing(&[&gap_form, &spec.mc1])?;
    let gap = grid_form(&gap_form, alpha)?;
    let cost = grid_form(&spec.mc1, alpha)?;
    let w = {
        let a = log_derivative_poly(&gap, alpha).mul(&cost.poly);
        let b = gap.poly.mul(&log_derivative_poly(&cost, alpha));
        let n = a.coeffs().len().max(b.coeffs().len());
        Polynomial::new(
            (0..n)
                .map(|i| a.coeffs().get(i).copied().unwrap_or(0.0) - b.coeffs().get(i).copied().unwrap_or(0.0))
                .collect(),
        )
    };
    Ok(Prepared { alpha, gap, cost, w, lo, hi })
}

/// Productivity parameter whose optimal output is `q`.
pub fn productivity_at(spec: &AggregationSpec, q: f64) -> f64 {
    spec.price.marginal().sub(&spec.mc0).eval(q) / spec.mc1.eval(q)
}

fn check_regular(spec: &AggregationSpec) -> Result<()> {
    let gap = spec.price.marginal().sub(&spec.mc0);
    let dgap = gap.derivative();
    let dm = spec.mc1.derivative();
    let [lo, hi] = spec.quantity_range;
    for k in 0..=64 {
        let q = lo * (hi / lo).powf(k as f64 / 64.0);
        let (d, m) = (gap.eval(q), spec.mc1.eval(q));
        if !(d > 0.0 && m > 0.0) {
            return Err(Error::PreconditionViolated(format!("MR − MC₀ = {d} and MC₁ = {m} must be positive at q = {q}")));
        }
        if dgap.eval(q) * m - d * dm.eval(q) >= 0.0 {
            return Err(Error::PreconditionViolated(format!("second-order condition fails at q = {q}")));
        }
    }
    Ok(())
}

/// `∫ h(q(a)) G′(a) da` over the firms in range, by the factored closed form.
fn closed_aggregate(p: &Prepared, h: &PowerSum, density: &PowerSum) -> Result<(f64, AggregationCase, bool)> {
    let mut total = 0.0;
    let mut case = AggregationCase::PurePower;
    let mut numeric = false;
    let (b1, b2) = (p.cost.base, p.gap.base);
    let (xlo, xhi) = (p.lo.powf(p.alpha), p.hi.powf(p.alpha));
    for g in density.terms() {
        let kappa = g.exponent;
        let s = (b2 - b1) * (kappa + 1.0) - 1.0;
        let factors = [(p.w.clone(), 1.0), (p.gap.poly.clone(), kappa), (p.cost.poly.clone(), -kappa - 2.0)];
        for t in h.terms() {
            // q^e dq = x^{(e+1)/α − 1} dx / α
            let e = t.exponent + s;
            let (v, c, n) = factor_integral((e + 1.0) / p.alpha - 1.0, &factors, xlo, xhi)?;
            case = case.max(c);
            numeric |= n;
            total -= g.coeff * t.coeff * v / p.alpha;
        }
    }
    Ok((total, case, numeric))
}

fn quadrature_aggregate(spec: &AggregationSpec, h: &PowerSum, density: &PowerSum) -> Result<f64> {
    let gap = spec.price.marginal().sub(&spec.mc0);
    let dgap = gap.derivative();
    let dm = spec.mc1.derivative();
    let [lo, hi] = spec.quantity_range;
    // integrate in log q
    let f = |z: f64| {
        let q = z.exp();
        let (d, m) = (gap.eval(q), spec.mc1.eval(q));
        let da = (dgap.eval(q) * m - d * dm.eval(q)) / (m * m);
        -h.eval(q) * density.eval(d / m) * da * q
    };
    let scale = integrate(|z| f(z).abs(), lo.ln(), hi.ln(), 0.0, 1e-8)?.value;
    Ok(integrate(f, lo.ln(), hi.ln(), 1e-15 * scale, 1e-13)?.value)
}

fn integrands(spec: &AggregationSpec) -> Result<[(PowerSum, PowerSum); 5]> {
    let revenue = spec.price.shift(1.0);
    let c0 = spec.mc0.integral_from_zero()?;
    let c1 = spec.mc1.integral_from_zero()?;
    let shifted = spec.density.shift(1.0);
    Ok([
        (revenue, spec.density.clone()),
        (c0, spec.density.clone()),
        (c1, shifted),
        (PowerSum::monomial(1.0, spec.target_power), spec.density.clone()),
        (PowerSum::constant(1.0), spec.density.clone()),
    ])
}

fn assemble(parts: [f64; 5]) -> Aggregates {
    let cost = parts[1] + parts[2];
    Aggregates {
        revenue: parts[0],
        cost,
        profit: parts[0] - cost,
        power_moment: parts[3],
        firm_mass: parts[4],
    }
}

/// Aggregate revenue, cost, profit, the target power moment and firm mass, by closed
/// form, with a change-of-variable quadrature alongside.
pub fn aggregate_firm_integrals(spec: &AggregationSpec) -> Result<AggregateReport> {
    check_regular(spec)?;
    let prepared = prepare(spec)?;
    let parts = integrands(spec)?;
    let mut closed = [0.0; 5];
    let mut quad = [0.0; 5];
    let mut case = AggregationCase::PurePower;
    let mut numeric_roots = false;
    for (i, (h, d)) in parts.iter().enumerate() {
        let (v, c, n) = closed_aggregate(&prepared, h, d)?;
        closed[i] = v;
        case = case.max(c);
        numeric_roots |= n;
        quad[i] = quadrature_aggregate(spec, h, d)?;
    }
    let closed_form = assemble(closed);
    let quadrature = assemble(quad);
    let deltas = closed_form.map2(&quadrature, |a, b| a - b);
    let max_relative_delta = closed_form
        .values()
        .iter()
        .zip(quadrature.values())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
        .fold(0.0, f64::max);
    Ok(AggregateReport { closed_form, quadrature, deltas, max_relative_delta, spacing: prepared.alpha, case, numeric_roots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Double-exponential quadrature on (0, 1); `f` receives `t` and `1 − t`.
    fn de01<F: Fn(f64, f64) -> f64>(f: F) -> f64 {
        let mut h = 0.5;
        let mut prev = f64::NAN;
        for _ in 0..12 {
            let n = (6.5 / h) as i64;
            let mut s = 0.0;
            for k in -n..=n {
                let tau = k as f64 * h;
                let e = std::f64::consts::PI * tau.sinh();
                let t = 1.0 / (1.0 + (-e).exp());
                let u = 1.0 / (1.0 + e.exp());
                let w = std::f64::consts::PI * tau.cosh() * t * u;
                if t > 0.0 && u > 0.0 && w > 0.0 {
                    let v = f(t, u) * w;
                    if v.is_finite() {
                        s += v;
                    }
                }
            }
            s *= h;
            if (s - prev).abs() <= 1e-14 * s.abs() {
                return s;
            }
            prev = s;
            h /= 2.0;
        }
        prev
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn euler_2f1(a: f64, b: f64, c: f64, z: f64) -> f64 {
        let pre = (ln_gamma(c) - ln_gamma(b) - ln_gamma(c - b)).exp();
        pre * de01(|t, u| t.powf(b - 1.0) * u.powf(c - b - 1.0) * (1.0 - z * t).powf(-a))
    }

    #[test]
    fn hyp2f1_identities() {
        for &z in &[-7.0, -0.7, -0.2, 0.3, 0.85, 0.93, 0.999] {
            let v = hyp2f1(1.3, 0.7, 0.7, z).unwrap();
            assert!(rel(v, (1.0 - z).powf(-1.3)) < 1e-12, "z = {z}");
            let l = hyp2f1(1.0, 1.0, 2.0, z).unwrap();
            assert!(rel(l, -(1.0 - z).ln() / z) < 1e-11, "z = {z}: {l}");
        }
        assert_eq!(hyp2f1(1.0, 1.0, 2.0, 1.5), Err(Error::Divergent));
        assert!(matches!(hyp2f1(1.0, 1.0, -2.0, 0.5), Err(Error::ParameterDomain(_))));
        // Gauss sum at the unit argument
        let g = hyp2f1(0.5, 0.25, 2.0, 1.0).unwrap();
        assert!(rel(g, gamma(2.0) * gamma(1.25) / (gamma(1.5) * gamma(1.75))) < 1e-13);
    }

    #[test]
    fn contiguous_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = rng.random_range(-2.0..3.0);
            let b = rng.random_range(-2.0..3.0);
            let c = rng.random_range(0.2..4.0);
            let z = rng.random_range(-4.0..0.97);
            let r = c * hyp2f1(a, b, c, z).unwrap() - c * hyp2f1(a - 1.0, b, c, z).unwrap()
                - b * z * hyp2f1(a, b + 1.0, c + 1.0, z).unwrap();
            let scale = c * hyp2f1(a, b, c, z).unwrap().abs() + 1.0;
            assert!(r.abs() / scale < 1e-10, "{a} {b} {c} {z}: {r}");
        }
    }

    #[test]
    fn incomplete_beta_form_matches_quadrature() {
        // ∫₀^x t^γ (1+κt)^δ dt = x^{1+γ}/(1+γ) ₂F₁(1+γ, −δ; 2+γ; −κx)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let g = rng.random_range(-0.8..2.0);
            let k = rng.random_range(-0.9..3.0);
            let d = rng.random_range(-2.5..2.5);
            let x: f64 = rng.random_range(0.1..1.0);
            let closed = x.powf(1.0 + g) / (1.0 + g) * hyp2f1(1.0 + g, -d, 2.0 + g, -k * x).unwrap();
            let oracle = x * de01(|s, _| (x * s).powf(g) * (1.0 + k * x * s).powf(d));
            assert!(rel(closed, oracle) < 1e-10, "{g} {k} {d} {x}");
        }
    }

    #[test]
    fn appell_reductions() {
        for &(x, y) in &[(0.3, 0.0), (-0.5, 0.0), (0.95, 0.0)] {
            let f = appell_f1(1.2, 0.7, -0.4, 2.5, x, y).unwrap();
            assert!(rel(f, hyp2f1(1.2, 0.7, 2.5, x).unwrap()) < 1e-13);
        }
        for &x in &[-1.5, -0.3, 0.4, 0.7, 0.9] {
            let f = appell_f1(1.2, 0.7, -0.4, 2.5, x, x).unwrap();
            assert!(rel(f, hyp2f1(1.2, 0.3, 2.5, x).unwrap()) < 1e-11, "x = {x}");
        }
        assert!(matches!(appell_f1(1.2, 0.7, 0.4, 0.5, 0.9, 0.95), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn lauricella_reductions() {
        for &x in &[-3.0, -0.4, 0.5, 0.99] {
            let fd = lauricella_fd(0.6, &[1.7], &[x]).unwrap();
            assert!(rel(fd, hyp2f1(0.6, 1.7, 1.6, x).unwrap()) < 1e-11, "x = {x}");
        }
        assert_eq!(lauricella_fd(0.6, &[1.7, -0.3, 2.0], &[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(lauricella_fd(0.6, &[1.0], &[1.0]), Err(Error::SingularIntegrand));
        // unit argument with b₁ < 1 folds into the kernel: b·B(b, 1−b₁)
        let v = lauricella_fd(0.6, &[0.5], &[1.0]).unwrap();
        let exact = 0.6 * (ln_gamma(0.6) + ln_gamma(0.5) - ln_gamma(1.1)).exp();
        assert!(rel(v, exact) < 1e-11);
        // continuation to negative b agrees with the ₂F₁ series
        let c = lauricella_fd(-1.4, &[0.8], &[0.6]).unwrap();
        assert!(rel(c, hyp2f1(-1.4, 0.8, -0.4, 0.6).unwrap()) < 1e-12);
    }

    #[test]
    fn special_functions_match_defining_integrals() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for i in 0..500 {
            match i % 3 {
                0 => {
                    let a = rng.random_range(-3.0..3.0);
                    let b = rng.random_range(0.1..3.0);
                    let c = b + rng.random_range(0.1..3.0);
                    let z = rng.random_range(-5.0..0.95);
                    let v = hyp2f1(a, b, c, z).unwrap();
                    assert!(rel(v, euler_2f1(a, b, c, z)) < 1e-8, "2F1({a},{b},{c},{z})");
                }
                1 => {
                    let a = rng.random_range(0.1..3.0);
                    let c = a + rng.random_range(0.1..3.0);
                    let b1 = rng.random_range(-2.0..2.0);
                    let b2 = rng.random_range(-2.0..2.0);
                    let x = rng.random_range(-2.0..0.95);
                    let y = rng.random_range(-2.0..0.95);
                    let v = appell_f1(a, b1, b2, c, x, y).unwrap();
                    let pre = (ln_gamma(c) - ln_gamma(a) - ln_gamma(c - a)).exp();
                    let o = pre
                        * de01(|t, u| {
                            t.powf(a - 1.0) * u.powf(c - a - 1.0) * (1.0 - x * t).powf(-b1) * (1.0 - y * t).powf(-b2)
                        });
                    assert!(rel(v, o) < 1e-8, "F1({a};{b1},{b2};{c};{x},{y})");
                }
                _ => {
                    let b = rng.random_range(0.1..3.0);
                    let bs: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let xs: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..0.95)).collect();
                    let v = lauricella_fd(b, &bs, &xs).unwrap();
                    let o = b * de01(|t, _| {
                        t.powf(b - 1.0) * bs.iter().zip(&xs).map(|(bi, xi)| (1.0 - xi * t).powf(-bi)).product::<f64>()
                    });
                    assert!(rel(v, o) < 1e-8, "FD({b};{bs:?};{xs:?})");
                }
            }
        }
    }

    fn oracle_integral(exponent: f64, factors: &[(Polynomial, f64)], lo: f64, hi: f64) -> f64 {
        (hi - lo) * de01(|t, _| {
            let x = lo + (hi - lo) * t;
            x.powf(exponent) * factors.iter().map(|(n, p)| n.eval(x).powf(*p)).product::<f64>()
        })
    }

    #[test]
    fn factor_cases_match_quadrature() {
        let lin = Polynomial::new(vec![1.0, 0.8]);
        let lin2 = Polynomial::new(vec![2.0, -0.3]);
        let quad_real = Polynomial::new(vec![1.0, 1.5, 0.5]);
        let quad_complex = Polynomial::new(vec![1.0, -0.4, 0.9]);
        let quintic = Polynomial::new(vec![3.0, 0.5, 0.2, 0.1, 0.3, 0.05]);
        let cases: Vec<(f64, Vec<(Polynomial, f64)>, AggregationCase)> = vec![
            (1.5, vec![(lin.clone(), 3.0)], AggregationCase::PurePower),
            (0.3, vec![(lin.clone(), -1.7)], AggregationCase::Hypergeometric),
            (-2.6, vec![(lin.clone(), 0.6)], AggregationCase::Hypergeometric),
            (0.4, vec![(lin.clone(), -0.7), (lin2.clone(), 1.3)], AggregationCase::Appell),
            (0.2, vec![(quad_real.clone(), -1.4)], AggregationCase::Appell),
            (0.2, vec![(quad_complex.clone(), -1.4)], AggregationCase::Appell),
            (-3.3, vec![(quad_complex, 0.5), (lin.clone(), -2.0)], AggregationCase::Lauricella),
            (-2.0, vec![(quad_real, -0.5), (lin2.clone(), 0.5)], AggregationCase::Lauricella),
            (0.7, vec![(quintic, -0.35)], AggregationCase::Lauricella),
        ];
        for (e, f, want) in cases {
            let (v, case) = power_factor_integral(e, &f, 0.3, 2.5).unwrap();
            let o = oracle_integral(e, &f, 0.3, 2.5);
            assert_eq!(case, want, "exponent {e}");
            assert!(rel(v, o) < 1e-10, "exponent {e}: {v} vs {o}");
        }
        let bad = power_factor_integral(0.5, &[(Polynomial::new(vec![1.0, -1.0]), -0.5)], 0.2, 1.5);
        assert!(matches!(bad, Err(Error::PreconditionViolated(_))));
    }

    fn melitz_spec(sigma: f64, shape: f64) -> AggregationSpec {
        // constant elasticity demand, marginal cost a per unit, density ∝ a^{shape−1}
        AggregationSpec {
            price: PowerSum::monomial(1.0, -1.0 / sigma),
            mc0: PowerSum::zero(),
            mc1: PowerSum::constant(1.0),
            density: PowerSum::monomial(shape, shape - 1.0),
            target_power: 0.5,
            quantity_range: [0.2, 40.0],
        }
    }

    /// Integral over the productivity parameter with the optimal output solved per firm.
    fn productivity_oracle(spec: &AggregationSpec, h: impl Fn(f64, f64) -> f64) -> f64 {
        let [lo, hi] = spec.quantity_range;
        let (a_hi, a_lo) = (productivity_at(spec, lo), productivity_at(spec, hi));
        let q_of = |a: f64| {
            crate::numeric::brent(|lq: f64| productivity_at(spec, lq.exp()) - a, lo.ln() - 1e-9, hi.ln() + 1e-9, 1e-15)
                .unwrap()
                .exp()
        };
        (a_hi - a_lo)
            * de01(|t, _| {
                let a = a_lo + (a_hi - a_lo) * t;
                h(q_of(a), a) * spec.density.eval(a)
            })
    }

    #[test]
    fn melitz_constant_elasticity_pareto() {
        let spec = melitz_spec(3.0, 2.5);
        let r = aggregate_firm_integrals(&spec).unwrap();
        assert_eq!(r.case, AggregationCase::PurePower);
        let rev = productivity_oracle(&spec, |q, _| q * spec.price.eval(q));
        let cost = productivity_oracle(&spec, |q, a| a * q);
        assert!(rel(r.closed_form.revenue, rev) < 1e-8);
        assert!(rel(r.closed_form.cost, cost) < 1e-8);
        assert!(rel(r.closed_form.profit, rev - cost) < 1e-8);
        assert!(r.max_relative_delta < 1e-10);
    }

    #[test]
    fn hybrid_costs_use_special_functions() {
        // marginal cost a(1 + 0.4 q^{1/2}) and a linear-plus-CE demand
        let spec = AggregationSpec {
            price: PowerSum::new([(2.0, -0.5), (0.3, 0.0)]).unwrap(),
            mc0: PowerSum::constant(0.05),
            mc1: PowerSum::new([(1.0, 0.0), (0.4, 0.5)]).unwrap(),
            density: PowerSum::new([(1.5, 0.5), (0.2, 1.3)]).unwrap(),
            target_power: 1.5,
            quantity_range: [0.5, 12.0],
        };
        let r = aggregate_firm_integrals(&spec).unwrap();
        assert!(r.case >= AggregationCase::Hypergeometric);
        assert!((r.spacing - 0.5).abs() < 1e-12);
        let rev = productivity_oracle(&spec, |q, _| q * spec.price.eval(q));
        let moment = productivity_oracle(&spec, |q, _| q.powf(1.5));
        assert!(rel(r.closed_form.revenue, rev) < 1e-8);
        assert!(rel(r.closed_form.power_moment, moment) < 1e-8);
        assert!(r.max_relative_delta < 1e-9, "{r:?}");
    }

    #[test]
    fn integer_shape_is_elementary() {
        // density a² with a cost form linear in a keeps every factor polynomial
        let spec = AggregationSpec {
            price: PowerSum::new([(2.0, -0.5), (-0.1, 0.5)]).unwrap(),
            mc0: PowerSum::zero(),
            mc1: PowerSum::constant(0.5),
            density: PowerSum::monomial(3.0, 2.0),
            target_power: 2.0,
            quantity_range: [0.3, 4.0],
        };
        let r = aggregate_firm_integrals(&spec).unwrap();
        assert_eq!(r.case, AggregationCase::PurePower);
        assert!(r.max_relative_delta < 1e-11);
    }

    #[test]
    fn rejects_roots_and_broken_second_order_condition() {
        let mut spec = melitz_spec(3.0, 2.5);
        spec.mc1 = PowerSum::new([(1.0, 0.0), (-0.5, 1.0)]).unwrap();
        assert!(matches!(aggregate_firm_integrals(&spec), Err(Error::PreconditionViolated(_))));
        let mut spec = melitz_spec(3.0, 2.5);
        spec.price = PowerSum::monomial(1.0, 0.5);
        assert!(matches!(aggregate_firm_integrals(&spec), Err(Error::PreconditionViolated(_))));
        let mut spec = melitz_spec(3.0, 2.5);
        spec.mc1 = PowerSum::new([(1.0, 0.0), (0.5, std::f64::consts::SQRT_2 / 100.0)]).unwrap();
        spec.price = PowerSum::new([(1.0, -0.5), (0.5, 0.01)]).unwrap();
        assert!(matches!(aggregate_firm_integrals(&spec), Err(Error::PreconditionViolated(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn linear_in_density(c1 in 0.1f64..3.0, c2 in 0.1f64..3.0, k1 in 0.0f64..2.0, k2 in 0.0f64..2.0) {
            let base = AggregationSpec {
                price: PowerSum::new([(2.0, -0.5), (0.3, 0.0)]).unwrap(),
                mc0: PowerSum::zero(),
                mc1: PowerSum::new([(1.0, 0.0), (0.4, 0.5)]).unwrap(),
                density: PowerSum::zero(),
                target_power: 1.0,
                quantity_range: [0.5, 6.0],
            };
            let with = |d: PowerSum| {
                let mut s = base.clone();
                s.density = d;
                aggregate_firm_integrals(&s).unwrap().closed_form
            };
            let d1 = PowerSum::monomial(c1, k1);
            let d2 = PowerSum::monomial(c2, k2 + 0.37);
            let (a, b, ab) = (with(d1.clone()), with(d2.clone()), with(d1.add(&d2)));
            for (x, y) in [(a.revenue + b.revenue, ab.revenue), (a.cost + b.cost, ab.cost), (a.power_moment + b.power_moment, ab.power_moment)] {
                prop_assert!((x - y).abs() <= 1e-10 * y.abs());
            }
        }
    }
}
