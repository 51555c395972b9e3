//! Single-firm export problem: per-destination quantities, the total-output
//! fixed point under rising marginal cost, profits and destination choice.

use crate::dual::Real;
use crate::error::{Error, Result};
use crate::numeric::brent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SIGMA: f64 = 5.0;
pub const NU_R: f64 = 0.8;
pub const NU_LT: f64 = 0.6;
/// Fraction of κ_R²/(wτκ_LT) below which an export destination is profitable.
pub const CUTOFF_FACTOR: f64 = 15.0 / 64.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DestinationParams {
    pub kappa_r: f64,
    pub kappa_lt: f64,
    pub tau: f64,
    pub w_origin: f64,
    pub f_x: f64,
}

impl DestinationParams {
    pub fn domestic(kappa_r: f64, w: f64) -> Self {
        DestinationParams { kappa_r, kappa_lt: 0.0, tau: 1.0, w_origin: w, f_x: 0.0 }
    }

    /// Marginal cost at which serving this destination stops being profitable.
    pub fn cutoff_mc(&self) -> f64 {
        if self.kappa_lt == 0.0 {
            f64::INFINITY
        } else {
            CUTOFF_FACTOR * self.kappa_r * self.kappa_r / (self.w_origin * self.tau * self.kappa_lt)
        }
    }

    pub fn revenue(&self, q: f64) -> f64 {
        self.kappa_r / NU_R * q.powf(NU_R)
    }

    /// Wage bill of the shipping labor for `q` delivered units.
    pub fn shipping_cost(&self, q: f64) -> f64 {
        self.w_origin * self.kappa_lt / NU_LT * q.powf(NU_LT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmParams {
    pub kappa_c: f64,
    pub alpha: f64,
    /// Index of the home market within the destination list.
    pub origin: usize,
    /// Operating fixed cost in labor units.
    pub f_o: f64,
}

impl FirmParams {
    pub fn marginal_cost(&self, w: f64, q: f64) -> f64 {
        marginal_cost(self.kappa_c, self.alpha, &w, &q)
    }

    pub fn variable_cost(&self, w: f64, q: f64) -> f64 {
        self.kappa_c * w * q.powf(1.0 + self.alpha) / (1.0 + self.alpha)
    }
}

pub fn marginal_cost<T: Real>(kappa_c: f64, alpha: f64, w: &T, q: &T) -> T {
    w.clone() * q.powf(alpha) * kappa_c
}

/// Larger-quantity root of the destination first-order condition, if real.
pub fn foc_quantity<T: Real>(kappa_r: &T, kappa_lt: &T, tau: f64, w: &T, mc: &T) -> Option<T> {
    let tmc = mc.clone() * tau;
    if kappa_lt.value() == 0.0 {
        return Some((kappa_r.clone() / tmc).powf(SIGMA));
    }
    let disc = kappa_r.clone() * kappa_r.clone() - w.clone() * kappa_lt.clone() * tmc.clone() * 4.0;
    if disc.value() < 0.0 {
        return None;
    }
    Some(((kappa_r.clone() + disc.sqrt()) / (tmc * 2.0)).powf(SIGMA))
}

/// Delivered quantity when the destination is worth serving at this marginal cost.
pub fn export_quantity<T: Real>(kappa_r: &T, kappa_lt: &T, tau: f64, w: &T, mc: &T) -> Option<T> {
    if kappa_lt.value() > 0.0 {
        let cutoff = CUTOFF_FACTOR * kappa_r.value().powi(2) / (w.value() * tau * kappa_lt.value());
        if mc.value() >= cutoff {
            return None;
        }
    }
    foc_quantity(kappa_r, kappa_lt, tau, w, mc)
}

/// Delivery to a destination whose fixed cost is sunk: the first-order root, or the
/// tangency point where the root stops being real.
pub fn committed_quantity<T: Real>(kappa_r: &T, kappa_lt: &T, tau: f64, w: &T, mc: &T) -> T {
    let tmc = mc.clone() * tau;
    if kappa_lt.value() == 0.0 {
        return (kappa_r.clone() / tmc).powf(SIGMA);
    }
    let disc = kappa_r.clone() * kappa_r.clone() - w.clone() * kappa_lt.clone() * tmc.clone() * 4.0;
    let root = if disc.value() > 0.0 { disc.sqrt() } else { T::from(0.0) };
    ((kappa_r.clone() + root) / (tmc * 2.0)).powf(SIGMA)
}

pub fn single_export_quantity(dest: &DestinationParams, mc: f64) -> f64 {
    export_quantity(&dest.kappa_r, &dest.kappa_lt, dest.tau, &dest.w_origin, &mc).unwrap_or(0.0)
}

/// Firm output and deliveries for a committed destination set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub total: f64,
    pub mc: f64,
    /// Delivered quantity per destination index; zero where not served.
    pub quantities: Vec<f64>,
    pub served: Vec<usize>,
    pub profit: f64,
}

/// Members of `set` ordered by cutoff marginal cost, highest first.
pub fn rank_by_cutoff(dests: &[DestinationParams], set: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = set.to_vec();
    order.sort_by(|&a, &b| dests[b].cutoff_mc().total_cmp(&dests[a].cutoff_mc()).then(a.cmp(&b)));
    order.dedup();
    order
}

fn wage(firm: &FirmParams, dests: &[DestinationParams]) -> f64 {
    dests[firm.origin].w_origin
}

/// Output such that production equals the deliveries chosen at its own marginal cost.
fn solve_prefix(firm: &FirmParams, dests: &[DestinationParams], prefix: &[usize]) -> Option<(f64, f64, Vec<f64>)> {
    solve_output(firm, dests, prefix, false)
}

/// Output fixed point with every listed destination served; with `clamp`, deliveries
/// past the tangency point stay at it instead of making the set infeasible.
fn solve_output(firm: &FirmParams, dests: &[DestinationParams], prefix: &[usize], clamp: bool) -> Option<(f64, f64, Vec<f64>)> {
    let w = wage(firm, dests);
    let deliveries = |mc: f64| -> Option<Vec<f64>> {
        prefix
            .iter()
            .map(|&d| {
                let p = &dests[d];
                if clamp {
                    Some(committed_quantity(&p.kappa_r, &p.kappa_lt, p.tau, &w, &mc))
                } else {
                    foc_quantity(&p.kappa_r, &p.kappa_lt, p.tau, &w, &mc)
                }
            })
            .collect()
    };
    let shipped = |qs: &[f64]| prefix.iter().zip(qs).map(|(&d, q)| dests[d].tau * q).sum::<f64>();
    if firm.alpha == 0.0 {
        let mc = firm.kappa_c * w;
        let qs = deliveries(mc)?;
        return Some((shipped(&qs), mc, qs));
    }
    let gap = |s: f64| -> f64 {
        let mc = firm.marginal_cost(w, s.exp());
        match deliveries(mc) {
            Some(qs) => shipped(&qs).ln() - s,
            None => f64::NAN,
        }
    };
    // Highest output at which every destination in the prefix still has a real root.
    let s_lim = prefix
        .iter()
        .filter(|&&d| dests[d].kappa_lt > 0.0 && !clamp)
        .map(|&d| {
            let p = &dests[d];
            let mc_max = p.kappa_r * p.kappa_r / (4.0 * w * p.tau * p.kappa_lt);
            (mc_max / (firm.kappa_c * w)).ln() / firm.alpha
        })
        .fold(f64::INFINITY, f64::min);
    let home = &dests[firm.origin];
    let s0 = (home.kappa_r / (firm.kappa_c * w)).ln() * SIGMA / (1.0 + SIGMA * firm.alpha);
    let (lo, hi) = if s_lim.is_finite() {
        let hi = s_lim - 1e-12 * s_lim.abs().max(1.0);
        if !(gap(hi) <= 0.0) {
            return None;
        }
        (s0.min(hi) - 1.0, hi)
    } else {
        let mut step = 1.0;
        while gap(s0 + step) > 0.0 {
            step *= 2.0;
            if step > 1e4 {
                return None;
            }
        }
        (s0 - 1.0, s0 + step)
    };
    let s = brent(gap, lo, hi, 1e-15)?;
    let q = s.exp();
    let mc = firm.marginal_cost(w, q);
    let qs = deliveries(mc)?;
    Some((q, mc, qs))
}

fn prefix_profit(firm: &FirmParams, dests: &[DestinationParams], set: &[usize], prefix: &[usize], q: f64, qs: &[f64]) -> f64 {
    let w = wage(firm, dests);
    let operating: f64 = prefix.iter().zip(qs).map(|(&d, &qd)| dests[d].revenue(qd) - dests[d].shipping_cost(qd)).sum();
    let fixed = firm.f_o + set.iter().filter(|&&d| d != firm.origin).map(|&d| dests[d].f_x).sum::<f64>();
    operating - firm.variable_cost(w, q) - w * fixed
}

/// Best allocation over prefixes of the cutoff ranking of `set`; ties keep the shorter
/// prefix. A destination that would push marginal cost past the point where its own
/// first-order condition has a root cannot be served jointly and is skipped.
pub fn total_quantity_solve(firm: &FirmParams, dests: &[DestinationParams], set: &[usize]) -> Result<Allocation> {
    if !set.contains(&firm.origin) {
        return Err(Error::PreconditionViolated("destination set must include the home market".into()));
    }
    if dests[firm.origin].kappa_r <= 0.0 || firm.kappa_c <= 0.0 {
        return Err(Error::NoPositiveRoot);
    }
    let rank = rank_by_cutoff(dests, set);
    let mut prefix: Vec<usize> = Vec::with_capacity(rank.len());
    let mut best: Option<Allocation> = None;
    for &d in &rank {
        prefix.push(d);
        let Some((q, mc, qs)) = solve_prefix(firm, dests, &prefix) else {
            prefix.pop();
            continue;
        };
        let profit = prefix_profit(firm, dests, set, &prefix, q, &qs);
        if best.as_ref().is_none_or(|b| profit > b.profit) {
            let mut quantities = vec![0.0; dests.len()];
            for (&d, &qd) in prefix.iter().zip(&qs) {
                quantities[d] = qd;
            }
            best = Some(Allocation { total: q, mc, quantities, served: prefix.clone(), profit });
        }
    }
    best.ok_or(Error::NoPositiveRoot)
}

/// Output and per-destination deliveries when every destination in `set` is served.
pub fn committed_output(firm: &FirmParams, dests: &[DestinationParams], set: &[usize]) -> Result<Allocation> {
    if !set.contains(&firm.origin) {
        return Err(Error::PreconditionViolated("destination set must include the home market".into()));
    }
    let (q, mc, qs) = solve_output(firm, dests, set, true).ok_or(Error::NoPositiveRoot)?;
    let mut quantities = vec![0.0; dests.len()];
    for (&d, &qd) in set.iter().zip(&qs) {
        quantities[d] = qd;
    }
    let profit = prefix_profit(firm, dests, set, set, q, &qs);
    Ok(Allocation { total: q, mc, quantities, served: set.to_vec(), profit })
}

/// Per-period profit; the empty set (exit) earns zero.
pub fn profit(firm: &FirmParams, dests: &[DestinationParams], set: &[usize]) -> Result<f64> {
    if set.is_empty() {
        return Ok(-0.0);
    }
    Ok(total_quantity_solve(firm, dests, set)?.profit)
}

/// Outcome of the destination choice; `set` always contains the home market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub set: Vec<usize>,
    pub profit: f64,
    pub from_incumbent: bool,
}

fn with_home(firm: &FirmParams, exports: &[usize]) -> Vec<usize> {
    let mut s = vec![firm.origin];
    s.extend(exports.iter().copied().filter(|&d| d != firm.origin));
    s.sort_unstable();
    s
}

/// Export candidates in ranking order.
fn export_universe(firm: &FirmParams, dests: &[DestinationParams]) -> Vec<usize> {
    let all: Vec<usize> = (0..dests.len()).filter(|&d| d != firm.origin).collect();
    rank_by_cutoff(dests, &all)
}

/// One run of randomized double greedy on f(X) = profit(home ∪ X) − profit(home).
pub fn double_greedy<R: Rng>(firm: &FirmParams, dests: &[DestinationParams], rng: &mut R) -> Result<Choice> {
    let universe = export_universe(firm, dests);
    let value = |x: &[usize]| profit(firm, dests, &with_home(firm, x));
    let mut x: Vec<usize> = Vec::new();
    let mut y: Vec<usize> = universe.clone();
    let mut fx = value(&x)?;
    let mut fy = value(&y)?;
    for &e in &universe {
        let mut x_plus = x.clone();
        x_plus.push(e);
        let y_minus: Vec<usize> = y.iter().copied().filter(|&d| d != e).collect();
        let fxe = value(&x_plus)?;
        let fye = value(&y_minus)?;
        let a = (fxe - fx).max(0.0);
        let b = (fye - fy).max(0.0);
        let p = if a + b == 0.0 { 1.0 } else { a / (a + b) };
        if rng.random::<f64>() < p {
            x = x_plus;
            fx = fxe;
        } else {
            y = y_minus;
            fy = fye;
        }
    }
    Ok(Choice { set: with_home(firm, &x), profit: fx, from_incumbent: false })
}

/// Random stream for one (firm, run) pair, independent of evaluation order.
pub fn firm_rng(master_seed: u64, firm_id: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(firm_id.wrapping_mul(1 << 16).wrapping_add(run));
    rng
}

/// Drops committed destinations that the allocation leaves unserved.
fn prune(firm: &FirmParams, dests: &[DestinationParams], set: &[usize]) -> Result<Choice> {
    let a = total_quantity_solve(firm, dests, set)?;
    let mut served = a.served;
    served.sort_unstable();
    let p = profit(firm, dests, &served)?;
    Ok(Choice { set: served, profit: p, from_incumbent: false })
}

/// Best of `runs` double-greedy runs; the incumbent is kept unless strictly beaten.
pub fn choose_destinations(
    firm: &FirmParams,
    dests: &[DestinationParams],
    incumbent: Option<&[usize]>,
    master_seed: u64,
    firm_id: u64,
    runs: usize,
) -> Result<Choice> {
    let mut best: Option<Choice> = None;
    for run in 0..runs.max(1) {
        let mut rng = firm_rng(master_seed, firm_id, run as u64);
        let c = double_greedy(firm, dests, &mut rng)?;
        if best.as_ref().is_none_or(|b| c.profit > b.profit) {
            best = Some(c);
        }
    }
    let best = prune(firm, dests, &best.expect("at least one run").set)?;
    if let Some(inc) = incumbent.filter(|s| !s.is_empty()) {
        let set = with_home(firm, inc);
        let p = profit(firm, dests, &set)?;
        if best.profit <= p {
            return Ok(Choice { set, profit: p, from_incumbent: true });
        }
    }
    Ok(best)
}

/// Profit-maximizing set by enumerating every export subset.
pub fn exhaustive_best(firm: &FirmParams, dests: &[DestinationParams]) -> Result<Choice> {
    let universe = export_universe(firm, dests);
    if universe.len() > 20 {
        return Err(Error::PreconditionViolated("exhaustive search limited to 20 destinations".into()));
    }
    let mut best: Option<Choice> = None;
    for mask in 0u32..(1 << universe.len()) {
        let x: Vec<usize> = universe.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &d)| d).collect();
        let set = with_home(firm, &x);
        let p = profit(firm, dests, &set)?;
        if best.as_ref().is_none_or(|b| p > b.profit) {
            best = Some(Choice { set, profit: p, from_incumbent: false });
        }
    }
    prune(firm, dests, &best.expect("nonempty enumeration").set)
}

/// Random nested pairs S₁ ⊆ S₂ and a destination a outside S₂; counts cases where
/// adding a to the larger set gains more than adding it to the smaller one.
pub fn submodularity_check(firm: &FirmParams, dests: &[DestinationParams], trials: usize, seed: u64) -> Result<usize> {
    let universe = export_universe(firm, dests);
    if universe.is_empty() {
        return Ok(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..trials {
        let a = universe[rng.random_range(0..universe.len())];
        let mut s1 = Vec::new();
        let mut s2 = Vec::new();
        for &d in universe.iter().filter(|&&d| d != a) {
            let u: f64 = rng.random();
            if u < 1.0 / 3.0 {
                s1.push(d);
                s2.push(d);
            } else if u < 2.0 / 3.0 {
                s2.push(d);
            }
        }
        let gain = |s: &[usize]| -> Result<f64> {
            let mut sa = s.to_vec();
            sa.push(a);
            Ok(profit(firm, dests, &with_home(firm, &sa))? - profit(firm, dests, &with_home(firm, s))?)
        };
        let g1 = gain(&s1)?;
        let g2 = gain(&s2)?;
        let scale = profit(firm, dests, &with_home(firm, &s2))?.abs().max(1.0);
        if g2 - g1 > 1e-9 * scale {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Seeded export instance with a unit-productivity firm and `n` foreign markets.
pub fn random_instance(n: usize, alpha: f64, seed: u64) -> (FirmParams, Vec<DestinationParams>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dests = vec![DestinationParams::domestic(1.0, 1.0)];
    for _ in 0..n {
        dests.push(DestinationParams {
            kappa_r: rng.random_range(0.6..1.4),
            kappa_lt: rng.random_range(0.08..0.3),
            tau: 1.05,
            w_origin: 1.0,
            f_x: rng.random_range(0.0..0.02),
        });
    }
    (FirmParams { kappa_c: 1.0, alpha, origin: 0, f_o: 0.1 }, dests)
}
