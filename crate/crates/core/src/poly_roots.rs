//! Real-coefficient polynomials and their roots: radicals up to degree four,
//! Aberth iteration beyond.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_REAL_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Coefficients in ascending degree; the leading coefficient is nonzero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Trailing (highest-degree) zeros are stripped. An all-zero input gives the zero constant.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Polynomial { coeffs }
    }

    pub fn from_roots(roots: &[f64]) -> Self {
        let mut c = vec![1.0];
        for &r in roots {
            let mut next = vec![0.0; c.len() + 1];
            for (i, &v) in c.iter().enumerate() {
                next[i + 1] += v;
                next[i] -= r * v;
            }
            c = next;
        }
        Polynomial::new(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() == 1 {
            return Polynomial::new(vec![0.0]);
        }
        Polynomial::new(self.coeffs.iter().enumerate().skip(1).map(|(i, &c)| c * i as f64).collect())
    }

    /// x^n p(1/x): the same equation in the reciprocal variable.
    pub fn reversed(&self) -> Polynomial {
        let mut c = self.coeffs.clone();
        c.reverse();
        // leading zeros of the reversed list are genuine (zero roots of the original)
        Polynomial { coeffs: c }.normalized_lead()
    }

    fn normalized_lead(self) -> Polynomial {
        Polynomial::new(self.coeffs)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut c = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Polynomial::new(c)
    }

    fn norm1(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    /// Residual scale used for convergence: Σ|c_i||z|^i.
    fn magnitude_at(&self, r: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c.abs())
    }
}

/// Split off zero roots (vanishing low-order coefficients).
fn strip_zero_roots(p: &Polynomial) -> (usize, Polynomial) {
    let k = p.coeffs.iter().take_while(|&&c| c == 0.0).count();
    if k >= p.coeffs.len() {
        return (0, p.clone());
    }
    (k, Polynomial::new(p.coeffs[k..].to_vec()))
}

fn csqrt(z: Complex64) -> Complex64 {
    z.sqrt()
}

/// Roots of a z^2 + b z + c with complex coefficients, avoiding cancellation.
fn quadratic_c(a: Complex64, b: Complex64, c: Complex64) -> [Complex64; 2] {
    let d = csqrt(b * b - a * c * 4.0);
    // pick the sign that makes |b + s d| largest
    let s = if (b.conj() * d).re >= 0.0 { d } else { -d };
    let qq = -(b + s) * 0.5;
    if qq.norm() == 0.0 {
        return [Complex64::new(0.0, 0.0); 2];
    }
    [qq / a, c / qq]
}

/// Monic cubic z^3 + a2 z^2 + a1 z + a0 by the substitution x = w - a/w on x^3 + 3ax + 2 = 0.
fn cubic_monic(a2: Complex64, a1: Complex64, a0: Complex64) -> [Complex64; 3] {
    let shift = a2 / 3.0;
    let p = a1 - a2 * a2 / 3.0;
    let r = a0 - a2 * a1 / 3.0 + a2 * a2 * a2 * (2.0 / 27.0);
    let scale = 1.0 + p.norm().sqrt() + r.norm().cbrt();
    let zs: [Complex64; 3] = if r.norm() <= 1e-15 * scale * scale * scale {
        // z (z^2 + p) = 0
        let s = csqrt(-p);
        [Complex64::new(0.0, 0.0), s, -s]
    } else {
        let lam = (r * 0.5).powf(1.0 / 3.0);
        let a = p / (lam * lam) / 3.0;
        let disc = csqrt(a * a * a + 1.0);
        let y1 = -disc - 1.0;
        let y2 = disc - 1.0;
        let y = if y1.norm() >= y2.norm() { y1 } else { y2 };
        let w0 = y.powf(1.0 / 3.0);
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (k, o) in out.iter_mut().enumerate() {
            let w = w0 * Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 3.0);
            *o = (w - a / w) * lam;
        }
        out
    };
    [zs[0] - shift, zs[1] - shift, zs[2] - shift]
}

/// Monic quartic via the normalized form x^4 + a x^2 + b x + 1 and its two quadratic factors.
fn quartic_monic(a3: f64, a2: f64, a1: f64, a0: f64) -> [Complex64; 4] {
    let c = Complex64::new;
    let shift = a3 / 4.0;
    let p = a2 - 3.0 * a3 * a3 / 8.0;
    let r = a1 - a3 * a2 / 2.0 + a3 * a3 * a3 / 8.0;
    let s = a0 - a3 * a1 / 4.0 + a3 * a3 * a2 / 16.0 - 3.0 * a3.powi(4) / 256.0;
    let scale = 1.0 + p.abs().sqrt() + r.abs().cbrt() + s.abs().sqrt().sqrt();
    let tiny = 1e-14;
    let zs: [Complex64; 4] = if s.abs() <= tiny * scale.powi(4) {
        let cub = cubic_monic(c(0.0, 0.0), c(p, 0.0), c(r, 0.0));
        [c(0.0, 0.0), cub[0], cub[1], cub[2]]
    } else if r.abs() <= tiny * scale.powi(3) {
        let w = quadratic_c(c(1.0, 0.0), c(p, 0.0), c(s, 0.0));
        let (u, v) = (csqrt(w[0]), csqrt(w[1]));
        [u, -u, v, -v]
    } else {
        let lam = c(s, 0.0).powf(0.25);
        let a = c(p, 0.0) / (lam * lam);
        let b = c(r, 0.0) / (lam * lam * lam);
        // resolvent cubic in alpha
        let res = cubic_monic(a * 2.0, a * a - 4.0, -b * b);
        let alpha = res
            .iter()
            .copied()
            .fold(c(0.0, 0.0), |best, z| if z.norm() > best.norm() { z } else { best });
        let sa = csqrt(alpha);
        let sum = a + alpha;
        let diff = b / sa;
        let beta = if (sum - diff).norm() >= (sum + diff).norm() {
            (sum - diff) * 0.5
        } else {
            c(2.0, 0.0) / (sum + diff)
        };
        let f1 = quadratic_c(c(1.0, 0.0), sa, beta);
        let f2 = quadratic_c(c(1.0, 0.0), -sa, c(1.0, 0.0) / beta);
        [f1[0] * lam, f1[1] * lam, f2[0] * lam, f2[1] * lam]
    };
    [zs[0] - shift, zs[1] - shift, zs[2] - shift, zs[3] - shift]
}

fn newton_polish(p: &Polynomial, z: Complex64) -> Complex64 {
    let dp = p.derivative();
    let mut best = z;
    let mut best_res = p.eval_complex(z).norm();
    let mut cur = z;
    for _ in 0..4 {
        let d = dp.eval_complex(cur);
        if d.norm() == 0.0 {
            break;
        }
        cur -= p.eval_complex(cur) / d;
        let res = p.eval_complex(cur).norm();
        if res < best_res {
            best = cur;
            best_res = res;
        } else {
            break;
        }
    }
    best
}

/// All complex roots, with multiplicity, for degree 1 to 4 by radicals.
pub fn solve_radicals(p: &Polynomial) -> Result<Vec<Complex64>> {
    let n = p.degree();
    if n == 0 || n > 4 {
        return Err(Error::DegreeUnsupported(n));
    }
    let (zeros, core) = strip_zero_roots(p);
    let mut roots = vec![Complex64::new(0.0, 0.0); zeros];
    let c = core.coeffs();
    let lead = core.leading();
    let m: Vec<f64> = c.iter().map(|v| v / lead).collect();
    let found: Vec<Complex64> = match core.degree() {
        0 => vec![],
        1 => vec![Complex64::new(-m[0], 0.0)],
        2 => quadratic_c(Complex64::new(1.0, 0.0), Complex64::new(m[1], 0.0), Complex64::new(m[0], 0.0)).to_vec(),
        3 => cubic_monic(Complex64::new(m[2], 0.0), Complex64::new(m[1], 0.0), Complex64::new(m[0], 0.0)).to_vec(),
        4 => quartic_monic(m[3], m[2], m[1], m[0]).to_vec(),
        _ => unreachable!(),
    };
    roots.extend(found.into_iter().map(|z| if core.degree() > 2 { newton_polish(&core, z) } else { z }));
    Ok(roots)
}

/// Simultaneous Aberth-Ehrlich iteration from a scaled circle of starting points.
pub fn solve_iterative(p: &Polynomial, tol: f64) -> Result<Vec<Complex64>> {
    solve_iterative_with(p, tol, DEFAULT_MAX_ITER)
}

pub fn solve_iterative_with(p: &Polynomial, tol: f64, max_iter: usize) -> Result<Vec<Complex64>> {
    let n = p.degree();
    if n == 0 {
        return Err(Error::DegreeUnsupported(0));
    }
    let (zeros, core) = strip_zero_roots(p);
    let mut roots = vec![Complex64::new(0.0, 0.0); zeros];
    let d = core.degree();
    if d == 0 {
        return Ok(roots);
    }
    if d == 1 {
        roots.push(Complex64::new(-core.coeffs[0] / core.coeffs[1], 0.0));
        return Ok(roots);
    }
    let lead = core.leading();
    let bound = 1.0 + core.coeffs[..d].iter().map(|c| (c / lead).abs()).fold(0.0, f64::max);
    // geometric-mean radius keeps starts inside the bound when roots are small
    let radius = (core.coeffs[0] / lead).abs().powf(1.0 / d as f64).clamp(1e-3, bound);
    let mut z: Vec<Complex64> = (0..d)
        .map(|k| Complex64::from_polar(radius, 2.0 * PI * k as f64 / d as f64 + 0.4))
        .collect();
    let dp = core.derivative();
    let norm = core.norm1();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut max_step: f64 = 0.0;
        for k in 0..d {
            let pk = core.eval_complex(z[k]);
            let dk = dp.eval_complex(z[k]);
            if pk.norm() == 0.0 {
                continue;
            }
            let ratio = pk / dk;
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..d {
                if j != k {
                    s += Complex64::new(1.0, 0.0) / (z[k] - z[j]);
                }
            }
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * s);
            if step.is_finite() {
                z[k] -= step;
                max_step = max_step.max(step.norm() / z[k].norm().max(1e-300));
            }
        }
        let ok = z.iter().all(|&r| core.eval_complex(r).norm() <= tol * core.magnitude_at(r.norm()).max(norm));
        if ok && max_step < 1e-6 || max_step < 1e-15 {
            converged = true;
            break;
        }
    }
    let ok = z.iter().all(|&r| core.eval_complex(r).norm() <= tol * core.magnitude_at(r.norm()).max(norm));
    if !converged && !ok {
        return Err(Error::NoConvergence(max_iter));
    }
    roots.extend(z.into_iter().map(|r| newton_polish(&core, r)));
    Ok(roots)
}

/// Radicals for degree ≤ 4, iteration above.
pub fn solve_any(p: &Polynomial) -> Result<Vec<Complex64>> {
    if p.degree() <= 4 {
        solve_radicals(p)
    } else {
        solve_iterative(p, DEFAULT_REAL_TOL)
    }
}

/// Real positive roots, deduplicated and ascending. `tol` is relative to the root size.
pub fn real_positive_roots(p: &Polynomial, tol: f64) -> Vec<f64> {
    if p.degree() == 0 {
        return vec![];
    }
    let roots = match solve_any(p) {
        Ok(r) => r,
        Err(_) => return vec![],
    };
    let mut out: Vec<f64> = roots
        .iter()
        .filter(|z| z.im.abs() <= tol * z.norm().max(1.0) && z.re > tol)
        .map(|z| z.re)
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() <= tol * a.abs().max(1.0));
    out
}

/// Sort by (real, imag) for comparisons.
pub fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + b.norm())
    }

    #[test]
    fn square_minus_one() {
        let p = Polynomial::new(vec![-1.0, 0.0, 1.0]);
        let mut r = solve_radicals(&p).unwrap();
        sort_roots(&mut r);
        assert!(close(r[0], Complex64::new(-1.0, 0.0), 1e-15));
        assert!(close(r[1], Complex64::new(1.0, 0.0), 1e-15));
        assert_eq!(real_positive_roots(&p, DEFAULT_REAL_TOL), vec![1.0]);
        assert!(real_positive_roots(&Polynomial::new(vec![1.0, 0.0, 1.0]), DEFAULT_REAL_TOL).is_empty());
    }

    #[test]
    fn cubic_single_real_root() {
        let p = Polynomial::new(vec![1.0, 0.0, 1.0, 1.0]);
        let r = solve_radicals(&p).unwrap();
        let real: Vec<f64> = r.iter().filter(|z| z.im.abs() < 1e-10).map(|z| z.re).collect();
        assert_eq!(real.len(), 1);
        // companion-matrix eigenvalue computed independently
        let comp = nalgebra::Matrix3::<f64>::new(0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0);
        let ev = comp.complex_eigenvalues();
        let oracle = ev.iter().find(|z| z.im.abs() < 1e-10).unwrap().re;
        assert!((real[0] - oracle).abs() < 1e-12);
        assert!((real[0] + 1.465_571_231_876_768).abs() < 1e-12);
    }

    #[test]
    fn cubic_normal_form_auxiliary_quadratic() {
        // x^3 + 3x + 2: a = 1, y = -1 ± √2, x = w - 1/w with w^3 = y
        let p = Polynomial::new(vec![2.0, 3.0, 0.0, 1.0]);
        let y = -1.0 + 2f64.sqrt();
        let w = y.cbrt();
        let expected = w - 1.0 / w;
        let r = real_positive_or_negative(&p);
        assert!((r - expected).abs() < 1e-13);
        let y2 = -1.0 - 2f64.sqrt();
        let w2 = y2.cbrt();
        assert!((w2 - 1.0 / w2 - expected).abs() < 1e-13);
    }

    fn real_positive_or_negative(p: &Polynomial) -> f64 {
        solve_radicals(p).unwrap().into_iter().find(|z| z.im.abs() < 1e-10).unwrap().re
    }

    #[test]
    fn quartic_four_real_roots() {
        let p = Polynomial::from_roots(&[-2.0, 0.5, 1.0, 3.0]);
        let mut r = solve_radicals(&p).unwrap();
        sort_roots(&mut r);
        for (z, e) in r.iter().zip([-2.0, 0.5, 1.0, 3.0]) {
            assert!(close(*z, Complex64::new(e, 0.0), 1e-12), "{z} vs {e}");
        }
    }

    #[test]
    fn quartic_negative_constant_term() {
        // x^4 - x - 1 with s < 0 makes the scale factor complex
        let p = Polynomial::new(vec![-1.0, -1.0, 0.0, 0.0, 1.0]);
        for z in solve_radicals(&p).unwrap() {
            assert!(p.eval_complex(z).norm() < 1e-12);
        }
    }

    #[test]
    fn quartic_degenerate_branches() {
        let bi = Polynomial::new(vec![4.0, 0.0, -5.0, 0.0, 1.0]);
        let mut r = solve_radicals(&bi).unwrap();
        sort_roots(&mut r);
        for (z, e) in r.iter().zip([-2.0, -1.0, 1.0, 2.0]) {
            assert!(close(*z, Complex64::new(e, 0.0), 1e-12));
        }
        let zero_const = Polynomial::from_roots(&[0.0, 1.0, 2.0, 4.0]);
        for z in solve_radicals(&zero_const).unwrap() {
            assert!(zero_const.eval_complex(z).norm() < 1e-12);
        }
    }

    #[test]
    fn double_roots() {
        let p = Polynomial::from_roots(&[1.0, 1.0, 2.0]);
        for z in solve_radicals(&p).unwrap() {
            assert!(p.eval_complex(z).norm() < 1e-12);
        }
    }

    #[test]
    fn degree_checks() {
        assert_eq!(solve_radicals(&Polynomial::new(vec![3.0])), Err(Error::DegreeUnsupported(0)));
        assert_eq!(
            solve_radicals(&Polynomial::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0])),
            Err(Error::DegreeUnsupported(5))
        );
    }

    #[test]
    fn iterative_quintic() {
        let p = Polynomial::from_roots(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut r = solve_iterative(&p, 1e-12).unwrap();
        sort_roots(&mut r);
        for (z, e) in r.iter().zip(1..=5) {
            assert!(close(*z, Complex64::new(e as f64, 0.0), 1e-10));
        }
    }

    #[test]
    fn roots_of_unity() {
        let p = Polynomial::new(vec![-1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let r = solve_iterative(&p, 1e-12).unwrap();
        for k in 0..5 {
            let w = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 5.0);
            assert!(r.iter().any(|z| close(*z, w, 1e-10)));
        }
    }

    #[test]
    fn foc_quadratic_root() {
        let p = Polynomial::new(vec![-0.3, -1.0, 3.5]);
        let r = real_positive_roots(&p, DEFAULT_REAL_TOL);
        let oracle = (1.0 + (1.0f64 + 4.0 * 0.3 * 3.5).sqrt()) / 7.0;
        assert_eq!(r.len(), 1);
        assert!((r[0] - oracle).abs() < 1e-15);
        assert!((r[0] - 0.468_621).abs() < 1e-6);
    }

    #[test]
    fn reversed_polynomial() {
        let p = Polynomial::new(vec![1.0, 1.0, 0.0, 1.0]);
        assert_eq!(p.reversed().coeffs(), &[1.0, 0.0, 1.0, 1.0]);
    }
}
