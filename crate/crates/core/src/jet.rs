//! Truncated Taylor series arithmetic for exact high-order derivatives.

use std::ops::{Add, Mul, Neg, Sub};

/// Normalized Taylor coefficients `f^(k)(x₀)/k!` for `k = 0..=order`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet(pub Vec<f64>);

impl Jet {
    pub fn constant(c: f64, order: usize) -> Self {
        let mut v = vec![0.0; order + 1];
        v[0] = c;
        Jet(v)
    }

    /// The independent variable expanded at `x0`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut v = vec![0.0; order + 1];
        v[0] = x0;
        if order > 0 {
            v[1] = 1.0;
        }
        Jet(v)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    /// `k`-th derivative at the expansion point.
    pub fn derivative_at(&self, k: usize) -> f64 {
        self.0[k] * factorial(k)
    }

    /// Series of the derivative, one order shorter.
    pub fn differentiate(&self) -> Jet {
        if self.0.len() == 1 {
            return Jet(vec![0.0]);
        }
        Jet(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    pub fn truncate(&self, order: usize) -> Jet {
        Jet(self.0[..=order.min(self.order())].to_vec())
    }

    pub fn scale(&self, k: f64) -> Jet {
        Jet(self.0.iter().map(|c| c * k).collect())
    }

    pub fn offset(&self, c: f64) -> Jet {
        let mut v = self.0.clone();
        v[0] += c;
        Jet(v)
    }

    pub fn div(&self, b: &Jet) -> Jet {
        let n = self.0.len().min(b.0.len());
        let mut c = vec![0.0; n];
        for k in 0..n {
            let s: f64 = (1..=k).map(|j| b.0[j] * c[k - j]).sum();
            c[k] = (self.0[k] - s) / b.0[0];
        }
        Jet(c)
    }

    pub fn recip(&self) -> Jet {
        Jet::constant(1.0, self.order()).div(self)
    }

    pub fn exp(&self) -> Jet {
        let a = &self.0;
        let mut e = vec![0.0; a.len()];
        e[0] = a[0].exp();
        for k in 1..a.len() {
            let s: f64 = (1..=k).map(|j| j as f64 * a[j] * e[k - j]).sum();
            e[k] = s / k as f64;
        }
        Jet(e)
    }

    pub fn ln(&self) -> Jet {
        let a = &self.0;
        let mut l = vec![0.0; a.len()];
        l[0] = a[0].ln();
        for k in 1..a.len() {
            let s: f64 = (1..k).map(|j| j as f64 * l[j] * a[k - j]).sum();
            l[k] = (a[k] - s / k as f64) / a[0];
        }
        Jet(l)
    }

    pub fn powf(&self, r: f64) -> Jet {
        let a = &self.0;
        let mut p = vec![0.0; a.len()];
        p[0] = a[0].powf(r);
        for k in 1..a.len() {
            let s: f64 = (1..=k).map(|j| ((r + 1.0) * j as f64 - k as f64) * a[j] * p[k - j]).sum();
            p[k] = s / (k as f64 * a[0]);
        }
        Jet(p)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    /// Series solution of `y' = rhs(x, y)` through `y(x0) = y0`, where `x` is the
    /// jet of the independent variable. Coefficient `k` of `rhs` may only depend
    /// on coefficients `0..=k` of its arguments.
    pub fn solve_ode<F: Fn(&Jet, &Jet) -> Jet>(x: &Jet, y0: f64, rhs: F) -> Jet {
        let n = x.order();
        let mut y = Jet::constant(y0, n);
        for k in 0..n {
            let r = rhs(&x.truncate(k), &y.truncate(k));
            y.0[k + 1] = r.0[k] / (k + 1) as f64;
        }
        y
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |p, i| p * i as f64)
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        let n = self.0.len().min(o.0.len());
        Jet((0..n).map(|k| (0..=k).map(|j| self.0[j] * o.0[k - j]).sum()).collect())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}
