//! Forward-mode automatic differentiation with sparse gradient vectors.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic shared by plain floats and dual numbers.
pub trait Real:
    Clone
    + Debug
    + From<f64>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    fn powf(&self, e: f64) -> Self;
    fn sqrt(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn powf(&self, e: f64) -> Self {
        f64::powf(*self, e)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
}

/// Value with a sparse gradient; entries sorted by variable index.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: Vec<(u32, f64)>,
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, g: Vec::new() }
    }

    /// Independent variable `index` with derivative `seed`.
    pub fn variable(v: f64, index: usize, seed: f64) -> Self {
        Dual { v, g: vec![(index as u32, seed)] }
    }

    pub fn dense_gradient(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(i, d) in &self.g {
            out[i as usize] += d;
        }
        out
    }

    /// `a·x + b·y` on gradients.
    fn combine(a: f64, x: &[(u32, f64)], b: f64, y: &[(u32, f64)]) -> Vec<(u32, f64)> {
        let mut out = Vec::with_capacity(x.len() + y.len());
        let (mut i, mut j) = (0, 0);
        while i < x.len() && j < y.len() {
            if x[i].0 == y[j].0 {
                out.push((x[i].0, a * x[i].1 + b * y[j].1));
                i += 1;
                j += 1;
            } else if x[i].0 < y[j].0 {
                out.push((x[i].0, a * x[i].1));
                i += 1;
            } else {
                out.push((y[j].0, b * y[j].1));
                j += 1;
            }
        }
        out.extend(x[i..].iter().map(|&(k, d)| (k, a * d)));
        out.extend(y[j..].iter().map(|&(k, d)| (k, b * d)));
        out
    }

    fn chain(&self, v: f64, dv: f64) -> Dual {
        Dual { v, g: self.g.iter().map(|&(k, d)| (k, d * dv)).collect() }
    }
}

impl From<f64> for Dual {
    fn from(v: f64) -> Self {
        Dual::constant(v)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, g: Dual::combine(1.0, &self.g, 1.0, &o.g) }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, g: Dual::combine(1.0, &self.g, -1.0, &o.g) }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, g: Dual::combine(o.v, &self.g, self.v, &o.g) }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        Dual { v, g: Dual::combine(inv, &self.g, -v * inv, &o.g) }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.chain(-self.v, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, o: f64) -> Dual {
        self.v += o;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(mut self, o: f64) -> Dual {
        self.v -= o;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, o: f64) -> Dual {
        self.chain(self.v * o, o)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, o: f64) -> Dual {
        self.chain(self.v / o, 1.0 / o)
    }
}

impl Real for Dual {
    fn value(&self) -> f64 {
        self.v
    }
    fn powf(&self, e: f64) -> Self {
        let v = self.v.powf(e);
        let dv = if e == 0.0 { 0.0 } else { e * self.v.powf(e - 1.0) };
        self.chain(v, dv)
    }
    fn sqrt(&self) -> Self {
        let v = self.v.sqrt();
        self.chain(v, 0.5 / v)
    }
    fn exp(&self) -> Self {
        let v = self.v.exp();
        self.chain(v, v)
    }
    fn ln(&self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
}

/// Sum in a fixed pairwise order, independent of how the items were produced.
pub fn pairwise_sum<T: Real>(items: Vec<T>) -> T {
    let mut layer = items;
    if layer.is_empty() {
        return T::from(0.0);
    }
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        let mut it = layer.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        layer = next;
    }
    layer.pop().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Real>(x: T, y: T) -> T {
        (x.clone() * y.clone() + x.powf(1.5)).sqrt() / (y.clone().exp() + 1.0) - y.ln() * 0.5
    }

    #[test]
    fn matches_central_differences() {
        let (x0, y0) = (1.3, 0.7);
        let d = f(Dual::variable(x0, 0, 1.0), Dual::variable(y0, 1, 1.0));
        let h = 1e-6;
        let fx = (f(x0 + h, y0) - f(x0 - h, y0)) / (2.0 * h);
        let fy = (f(x0, y0 + h) - f(x0, y0 - h)) / (2.0 * h);
        let g = d.dense_gradient(2);
        assert!((g[0] - fx).abs() < 1e-8);
        assert!((g[1] - fy).abs() < 1e-8);
        assert!((d.v - f(x0, y0)).abs() < 1e-15);
    }

    #[test]
    fn pairwise_order_is_fixed() {
        let v: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        assert!((pairwise_sum(v) - 2.1).abs() < 1e-15);
        assert_eq!(pairwise_sum::<f64>(vec![]), 0.0);
    }
}
