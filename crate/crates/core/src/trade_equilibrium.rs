//! World general equilibrium with heterogeneous exporters: residual system,
//! Adam on log unknowns with dual-number gradients, cohort updates of fixed-cost
//! commitments, and gravity / revenue-rank diagnostics.

use crate::dual::{pairwise_sum, Dual, Real};
use crate::error::{Error, Result};
use crate::numeric::{golden_max, least_squares};
use crate::trade_firm::{
    choose_destinations, committed_output, committed_quantity, marginal_cost, DestinationParams, FirmParams, NU_LT, NU_R,
    SIGMA,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop once the loss is at or below this value.
    pub tol: f64,
    pub max_steps: usize,
    /// Steps without a new best loss before the step size is cut; 0 disables.
    pub patience: usize,
    pub decay: f64,
    pub min_step: f64,
    /// Loss ratio to the best so far that counts as a blow-up; 0 disables.
    pub spike: f64,
    /// Normalize by the running maximum of the second moment.
    pub amsgrad: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            tol: 1e-12,
            max_steps: 200_000,
            patience: 200,
            decay: 0.5,
            min_step: 1e-9,
            spike: 1.1,
            amsgrad: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    #[serde(rename = "N_c")]
    pub n_c: usize,
    #[serde(rename = "N_p")]
    pub n_p: usize,
    #[serde(rename = "N_v")]
    pub n_v: usize,
    pub alpha: f64,
    pub sigma: f64,
    #[serde(rename = "nu_R")]
    pub nu_r: f64,
    #[serde(rename = "nu_LT")]
    pub nu_lt: f64,
    #[serde(rename = "mu_R")]
    pub mu_r: f64,
    pub delta_e_f_e: f64,
    pub f_o: f64,
    pub f_x: f64,
    pub tau: f64,
    /// Labor endowment per country; empty means one unit each.
    pub labor: Vec<f64>,
    /// Shipping labor prefactors by (origin, destination); empty means the circle generator.
    pub kappa_lt: Vec<Vec<f64>>,
    /// Iceberg factors by (origin, destination); empty means `tau` off the diagonal.
    pub tau_matrix: Vec<Vec<f64>>,
    /// Distances in km by (origin, destination); empty means evenly spaced on a circle.
    pub distances: Vec<Vec<f64>>,
    /// Prefactor of the generator κ_LT = base·(d / 1000 km)^0.05.
    pub kappa_lt_base: f64,
    pub circle_km: f64,
    pub adam: AdamConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_c: 100,
            n_p: 20,
            n_v: 10,
            alpha: 0.225,
            sigma: SIGMA,
            nu_r: NU_R,
            nu_lt: NU_LT,
            mu_r: 1.05,
            delta_e_f_e: 0.05,
            f_o: 0.1,
            f_x: 1e-5,
            tau: 1.05,
            labor: Vec::new(),
            kappa_lt: Vec::new(),
            tau_matrix: Vec::new(),
            distances: Vec::new(),
            kappa_lt_base: 0.02,
            circle_km: 20_000.0,
            adam: AdamConfig::default(),
        }
    }
}

impl WorldConfig {
    /// Desk-scale world with the default calibration and the given dimensions.
    pub fn desk(n_c: usize, n_p: usize, n_v: usize, alpha: f64) -> Self {
        WorldConfig { n_c, n_p, n_v, alpha, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ParameterDomain(m.to_string()));
        if self.sigma != SIGMA || self.nu_r != NU_R || self.nu_lt != NU_LT {
            return bad("sigma, nu_R and nu_LT are fixed at 5, 0.8 and 0.6");
        }
        if self.n_c == 0 || self.n_p == 0 || self.n_v == 0 {
            return bad("N_c, N_p and N_v must be positive");
        }
        if !(self.alpha >= 0.0) || !(self.mu_r > 0.0) || !(self.tau >= 1.0) {
            return bad("alpha >= 0, mu_R > 0 and tau >= 1 required");
        }
        if !(self.delta_e_f_e > 0.0) || !(self.f_o >= 0.0) || !(self.f_x >= 0.0) {
            return bad("delta_e_f_e > 0, f_o >= 0 and f_x >= 0 required");
        }
        let square = |m: &Vec<Vec<f64>>| m.is_empty() || (m.len() == self.n_c && m.iter().all(|r| r.len() == self.n_c));
        if !square(&self.kappa_lt) || !square(&self.tau_matrix) || !square(&self.distances) {
            return bad("pair matrices must be N_c x N_c");
        }
        if !self.labor.is_empty() && (self.labor.len() != self.n_c || self.labor.iter().any(|&l| !(l > 0.0))) {
            return bad("labor must list N_c positive endowments");
        }
        Ok(())
    }
}

/// Equal-mass discretization of the productivity distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductivityGrid {
    pub pareto_index: f64,
    /// Variable-cost prefactor per class, most productive first.
    pub kappa_c: Vec<f64>,
}

impl ProductivityGrid {
    /// Midpoint quantiles of a Pareto(1, μ_R(σ−1)/(1+σα)) productivity; κ_C = 1/φ.
    pub fn pareto(n_p: usize, mu_r: f64, alpha: f64) -> Self {
        let k = mu_r * (SIGMA - 1.0) / (1.0 + SIGMA * alpha);
        let kappa_c = (0..n_p).map(|j| (1.0 - (n_p - 1 - j) as f64 / n_p as f64 - 0.5 / n_p as f64).powf(1.0 / k)).collect();
        ProductivityGrid { pareto_index: k, kappa_c }
    }
}

/// Evenly spaced points on a circle; arc distances in km.
pub fn circle_distances(n: usize, circumference_km: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let steps = (i as f64 - j as f64).abs();
                    let steps = steps.min(n as f64 - steps);
                    circumference_km * steps / n as f64
                })
                .collect()
        })
        .collect()
}

/// Fixed structure derived from a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub grid: ProductivityGrid,
    pub labor: Vec<f64>,
    pub distances: Vec<Vec<f64>>,
    pub kappa_lt: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    /// (origin, class, version) per firm cell.
    pub cells: Vec<(usize, usize, usize)>,
}

impl World {
    pub fn new(config: &WorldConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_c;
        let distances = if config.distances.is_empty() { circle_distances(n, config.circle_km) } else { config.distances.clone() };
        let kappa_lt = if config.kappa_lt.is_empty() {
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { config.kappa_lt_base * (distances[i][j] / 1000.0).powf(0.05) }).collect())
                .collect()
        } else {
            config.kappa_lt.clone()
        };
        let tau = if config.tau_matrix.is_empty() {
            (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { config.tau }).collect()).collect()
        } else {
            config.tau_matrix.clone()
        };
        for i in 0..n {
            if kappa_lt[i][i] != 0.0 || tau[i][i] != 1.0 {
                return Err(Error::ParameterDomain("home market needs kappa_LT = 0 and tau = 1".into()));
            }
        }
        let labor = if config.labor.is_empty() { vec![1.0; n] } else { config.labor.clone() };
        let mut cells = Vec::with_capacity(n * config.n_p * config.n_v);
        for o in 0..n {
            for j in 0..config.n_p {
                for v in 0..config.n_v {
                    cells.push((o, j, v));
                }
            }
        }
        Ok(World {
            grid: ProductivityGrid::pareto(config.n_p, config.mu_r, config.alpha),
            config: config.clone(),
            labor,
            distances,
            kappa_lt,
            tau,
            cells,
        })
    }

    pub fn n_c(&self) -> usize {
        self.config.n_c
    }

    fn cell_share(&self) -> f64 {
        1.0 / (self.config.n_p * self.config.n_v) as f64
    }

    pub fn firm(&self, cell: usize) -> FirmParams {
        let (o, j, _) = self.cells[cell];
        FirmParams { kappa_c: self.grid.kappa_c[j], alpha: self.config.alpha, origin: o, f_o: self.config.f_o }
    }

    /// Market environment faced by firms from `origin` under the given aggregates.
    pub fn destinations(&self, origin: usize, countries: &[CountryState]) -> Vec<DestinationParams> {
        (0..self.n_c())
            .map(|d| DestinationParams {
                kappa_r: countries[d].kappa_r,
                kappa_lt: self.kappa_lt[origin][d],
                tau: self.tau[origin][d],
                w_origin: countries[origin].w,
                f_x: if d == origin { 0.0 } else { self.config.f_x },
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryState {
    pub w: f64,
    /// Expenditure.
    pub e: f64,
    /// Stationary mass of firms (entrants per period over the exit rate).
    pub mass: f64,
    pub kappa_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub q: f64,
    /// Destinations whose fixed costs are paid, home included; empty means exit.
    pub committed: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub seed: u64,
    pub countries: Vec<CountryState>,
    pub cells: Vec<CellState>,
}

impl EquilibriumState {
    fn to_log_vector(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(4 * self.countries.len() + self.cells.len());
        for c in &self.countries {
            x.extend([c.w.ln(), c.e.ln(), c.mass.ln(), c.kappa_r.ln()]);
        }
        x.extend(self.cells.iter().map(|c| c.q.ln()));
        x
    }

    fn with_log_vector(&self, theta: &[f64]) -> Self {
        let mut s = self.clone();
        let n = s.countries.len();
        for (k, c) in s.countries.iter_mut().enumerate() {
            c.w = theta[4 * k].exp();
            c.e = theta[4 * k + 1].exp();
            c.mass = theta[4 * k + 2].exp();
            c.kappa_r = theta[4 * k + 3].exp();
        }
        for (i, c) in s.cells.iter_mut().enumerate() {
            c.q = theta[4 * n + i].exp();
        }
        s
    }

    fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if self.countries.iter().all(|c| ok(c.w) && ok(c.e) && ok(c.mass) && ok(c.kappa_r)) && self.cells.iter().all(|c| ok(c.q)) {
            Ok(())
        } else {
            Err(Error::NonFiniteState)
        }
    }
}

/// Single-country benchmark at w = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedEconomy {
    pub kappa_r: f64,
    pub mass: f64,
    pub expenditure: f64,
    /// Output per productivity class; exiting classes keep their hypothetical output.
    pub q: Vec<f64>,
    pub operating: Vec<bool>,
    pub profit: Vec<f64>,
}

/// Closed-form closed economy: free entry fixes κ_R, the budget fixes the firm mass.
pub fn closed_economy(grid: &ProductivityGrid, alpha: f64, f_o: f64, delta_e_f_e: f64, labor: f64) -> ClosedEconomy {
    let n_p = grid.kappa_c.len();
    let g = SIGMA / (1.0 + SIGMA * alpha);
    let margin = 1.0 - NU_R / (1.0 + alpha);
    // classes are ordered by productivity, so operating classes form a prefix
    for n_op in (1..=n_p).rev() {
        let c_mean: f64 = grid.kappa_c[..n_op].iter().map(|k| k.powf(-NU_R * g)).sum::<f64>() / n_p as f64;
        let kappa_r = (NU_R * (delta_e_f_e + f_o * n_op as f64 / n_p as f64) / (margin * c_mean)).powf(1.0 / (1.0 + NU_R * g));
        let q: Vec<f64> = grid.kappa_c.iter().map(|k| (kappa_r / k).powf(g)).collect();
        let revenue: Vec<f64> = q.iter().map(|q| kappa_r / NU_R * q.powf(NU_R)).collect();
        let profit: Vec<f64> = revenue.iter().map(|r| r * margin - f_o).collect();
        if profit[n_op - 1] > 0.0 || n_op == 1 {
            let operating: Vec<bool> = (0..n_p).map(|j| j < n_op).collect();
            let mean_rev = revenue[..n_op].iter().sum::<f64>() / n_p as f64;
            return ClosedEconomy { kappa_r, mass: labor / mean_rev, expenditure: labor, q, operating, profit };
        }
    }
    unreachable!("n_p >= 1")
}

/// Autarky values for every country at w = 1, with home-only commitments.
pub fn initial_state(world: &World, seed: u64) -> EquilibriumState {
    let cfg = &world.config;
    let closed: Vec<ClosedEconomy> = world.labor.iter().map(|&l| closed_economy(&world.grid, cfg.alpha, cfg.f_o, cfg.delta_e_f_e, l)).collect();
    let countries = closed.iter().map(|c| CountryState { w: 1.0, e: c.expenditure, mass: c.mass, kappa_r: c.kappa_r }).collect();
    let cells = world
        .cells
        .iter()
        .map(|&(o, j, _)| CellState { q: closed[o].q[j], committed: if closed[o].operating[j] { vec![o] } else { Vec::new() } })
        .collect();
    EquilibriumState { seed, countries, cells }
}

/// Per-cell quantities entering the aggregate conditions.
struct CellTerms<T> {
    gap: T,
    revenue: Vec<(usize, T)>,
    labor: T,
    profit: T,
}

fn cell_terms<T: Real>(world: &World, cell: usize, committed: &[usize], x: &[T]) -> Option<CellTerms<T>> {
    if committed.is_empty() {
        return None;
    }
    let n = world.n_c();
    let (o, j, _) = world.cells[cell];
    let cfg = &world.config;
    let kappa_c = world.grid.kappa_c[j];
    let w = &x[4 * o];
    let q = &x[4 * n + cell];
    let mc = marginal_cost(kappa_c, cfg.alpha, w, q);
    let mut shipped = Vec::new();
    let mut revenue = Vec::new();
    let mut labor = vec![T::from(cfg.f_o), q.powf(1.0 + cfg.alpha) * (kappa_c / (1.0 + cfg.alpha))];
    for &d in committed {
        if d != o {
            labor.push(T::from(cfg.f_x));
        }
        let kr = &x[4 * d + 3];
        let klt = T::from(world.kappa_lt[o][d]);
        let tau = world.tau[o][d];
        let qd = committed_quantity(kr, &klt, tau, w, &mc);
        shipped.push(qd.clone() * tau);
        if world.kappa_lt[o][d] > 0.0 {
            labor.push(qd.powf(NU_LT) * (world.kappa_lt[o][d] / NU_LT));
        }
        revenue.push((d, kr.clone() * qd.powf(NU_R) / NU_R));
    }
    let gap = T::from(1.0) - pairwise_sum(shipped) / q.clone();
    let labor = pairwise_sum(labor);
    let profit = pairwise_sum(revenue.iter().map(|(_, r)| r.clone()).collect()) - w.clone() * labor.clone();
    Some(CellTerms { gap, revenue, labor, profit })
}

/// Stacked residuals with every committed destination served: cell gaps, then per country (expenditure identity, labor
/// clearing, free entry, budget), then the numeraire condition.
fn residual_system<T: Real + Send + Sync>(world: &World, committed: &[Vec<usize>], x: &[T]) -> Vec<T> {
    let n = world.n_c();
    let cfg = &world.config;
    let share = world.cell_share();
    let terms: Vec<Option<CellTerms<T>>> = (0..world.cells.len()).into_par_iter().map(|c| cell_terms(world, c, &committed[c], x)).collect();
    let mut out: Vec<T> = terms.iter().map(|t| t.as_ref().map_or(T::from(0.0), |t| t.gap.clone())).collect();
    let mut sold: Vec<Vec<T>> = vec![Vec::new(); n];
    let mut labor: Vec<Vec<T>> = vec![Vec::new(); n];
    let mut profit: Vec<Vec<T>> = vec![Vec::new(); n];
    for (c, t) in terms.into_iter().enumerate() {
        let Some(t) = t else { continue };
        let o = world.cells[c].0;
        let mass = x[4 * o + 2].clone() * share;
        for (d, r) in t.revenue {
            sold[d].push(mass.clone() * r);
        }
        labor[o].push(mass * t.labor);
        profit[o].push(t.profit);
    }
    let mut gdp = Vec::with_capacity(n);
    for k in 0..n {
        let w = &x[4 * k];
        let e = &x[4 * k + 1];
        let mass = &x[4 * k + 2];
        let l = world.labor[k];
        let income = w.clone() * l;
        let sales = pairwise_sum(std::mem::take(&mut sold[k]));
        let used = pairwise_sum(std::mem::take(&mut labor[k])) + mass.clone() * cfg.delta_e_f_e;
        let mean_profit = pairwise_sum(std::mem::take(&mut profit[k])) * share;
        out.push((e.clone() - sales) / income.clone());
        out.push((T::from(l) - used) / l);
        out.push((w.clone() * cfg.delta_e_f_e - mean_profit) / (w.clone() * cfg.delta_e_f_e));
        out.push((e.clone() - income.clone()) / income.clone());
        gdp.push(income);
    }
    let total_labor: f64 = world.labor.iter().sum();
    out.push((pairwise_sum(gdp) - total_labor) / total_labor);
    out
}

fn commitments(state: &EquilibriumState) -> Vec<Vec<usize>> {
    state.cells.iter().map(|c| c.committed.clone()).collect()
}

pub fn residuals(state: &EquilibriumState, world: &World) -> Result<Vec<f64>> {
    state.check()?;
    let x: Vec<f64> = state.to_log_vector().iter().map(|t| t.exp()).collect();
    Ok(residual_system(world, &commitments(state), &x))
}

pub fn loss(state: &EquilibriumState, world: &World) -> Result<f64> {
    Ok(residuals(state, world)?.iter().map(|r| r * r).sum())
}

/// Loss and its gradient with respect to the log unknowns.
pub fn loss_gradient(state: &EquilibriumState, world: &World) -> Result<(f64, Vec<f64>)> {
    state.check()?;
    let theta = state.to_log_vector();
    let x: Vec<Dual> = theta.iter().enumerate().map(|(i, t)| Dual::variable(t.exp(), i, t.exp())).collect();
    let r = residual_system(world, &commitments(state), &x);
    let mut grad = vec![0.0; theta.len()];
    let mut value = 0.0;
    for ri in &r {
        value += ri.v * ri.v;
        for &(i, d) in &ri.g {
            grad[i as usize] += 2.0 * ri.v * d;
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok((value, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerReport {
    pub state: EquilibriumState,
    pub loss: f64,
    pub steps: usize,
    /// Loss before each step and after the last one.
    pub history: Vec<f64>,
}

/// Inner loop that hit its step limit; carries the best state seen.
#[derive(Clone, Debug, PartialEq)]
pub struct NotConverged {
    pub best: InnerReport,
}

impl From<NotConverged> for Error {
    fn from(e: NotConverged) -> Self {
        Error::NoConvergence(e.best.steps)
    }
}

/// Adam on the log unknowns with commitments frozen.
pub fn inner_solve(state: &EquilibriumState, world: &World) -> std::result::Result<InnerReport, NotConverged> {
    let cfg = world.config.adam;
    let mut theta = state.to_log_vector();
    let n = theta.len();
    let (mut m, mut v, mut vmax) = (vec![0.0; n], vec![0.0; n], vec![0.0f64; n]);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, theta.clone());
    let mut steps = 0;
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let mut lr = cfg.step;
    let mut since_best = 0;
    loop {
        let current = state.with_log_vector(&theta);
        let Ok((l, g)) = loss_gradient(&current, world) else { break };
        history.push(l);
        if l < best.0 {
            best = (l, theta.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if l <= cfg.tol || steps >= cfg.max_steps {
            break;
        }
        let spiked = cfg.spike > 0.0 && l > cfg.spike * best.0;
        if spiked || (cfg.patience > 0 && since_best >= cfg.patience) {
            // plateau or blow-up: shrink the step and restart from the best point
            lr *= cfg.decay;
            if lr < cfg.min_step {
                break;
            }
            theta.clone_from(&best.1);
            since_best = 0;
            continue;
        }
        steps += 1;
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            vmax[i] = vmax[i].max(v[i]);
            let vh = if cfg.amsgrad { vmax[i] } else { v[i] } / (1.0 - b2t);
            theta[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
    let report = InnerReport { state: state.with_log_vector(&best.1), loss: best.0, steps, history };
    if report.loss <= cfg.tol {
        Ok(report)
    } else {
        Err(NotConverged { best: report })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterReport {
    pub state: EquilibriumState,
    pub changed: usize,
    pub loss: f64,
}

/// Lets every firm of version `cohort` revisit its commitments against frozen
/// aggregates, then re-solves the continuous equilibrium.
pub fn outer_iterate(state: &EquilibriumState, world: &World, cohort: usize) -> Result<OuterReport> {
    let envs: Vec<Vec<DestinationParams>> = (0..world.n_c()).map(|o| world.destinations(o, &state.countries)).collect();
    let updates: Vec<Result<Option<Vec<usize>>>> = (0..world.cells.len())
        .into_par_iter()
        .map(|c| {
            let (o, _, v) = world.cells[c];
            if v != cohort {
                return Ok(None);
            }
            let firm = world.firm(c);
            let current = &state.cells[c].committed;
            let incumbent_profit = if current.is_empty() { 0.0 } else { committed_output(&firm, &envs[o], current)?.profit };
            let choice = choose_destinations(&firm, &envs[o], None, state.seed, c as u64, 9)?;
            let (set, p) = if choice.profit > 0.0 { (choice.set, choice.profit) } else { (Vec::new(), 0.0) };
            Ok((p > incumbent_profit && set != *current).then_some(set))
        })
        .collect();
    let mut next = state.clone();
    let mut changed = 0;
    for (c, u) in updates.into_iter().enumerate() {
        if let Some(set) = u? {
            let firm = world.firm(c);
            let o = world.cells[c].0;
            if !set.is_empty() {
                next.cells[c].q = committed_output(&firm, &envs[o], &set)?.total;
            }
            next.cells[c].committed = set;
            changed += 1;
        }
    }
    if changed == 0 {
        let l = loss(state, world)?;
        return Ok(OuterReport { state: state.clone(), changed, loss: l });
    }
    let solved = inner_solve(&next, world)?;
    Ok(OuterReport { state: solved.state, changed, loss: solved.loss })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSolution {
    pub state: EquilibriumState,
    pub loss: f64,
    pub sweeps: usize,
    pub updates: usize,
    /// A full sweep changed nothing.
    pub converged: bool,
    /// Commitments returned to a configuration already visited at a sweep boundary.
    pub cycled: bool,
}

/// Alternates inner solves and cohort updates until a full sweep changes nothing,
/// or the commitments revisit an earlier configuration.
pub fn solve_world(world: &World, seed: u64, max_sweeps: usize) -> Result<WorldSolution> {
    solve_world_observed(world, seed, max_sweeps, |_, _| Ok(()))
}

/// As [`solve_world`], calling `on_sweep(sweep, state)` after every completed sweep.
pub fn solve_world_observed<F>(world: &World, seed: u64, max_sweeps: usize, mut on_sweep: F) -> Result<WorldSolution>
where
    F: FnMut(usize, &EquilibriumState) -> Result<()>,
{
    let mut state = inner_solve(&initial_state(world, seed), world)?.state;
    let mut seen = std::collections::HashSet::new();
    seen.insert(commitments(&state));
    let mut updates = 0;
    for sweep in 1..=max_sweeps {
        let mut changed = 0;
        for v in 0..world.config.n_v {
            let r = outer_iterate(&state, world, v)?;
            changed += r.changed;
            state = r.state;
        }
        updates += changed;
        on_sweep(sweep, &state)?;
        let cycled = changed > 0 && !seen.insert(commitments(&state));
        if changed == 0 || cycled {
            let l = loss(&state, world)?;
            return Ok(WorldSolution { state, loss: l, sweeps: sweep, updates, converged: changed == 0, cycled });
        }
    }
    Err(Error::NoConvergence(max_sweeps))
}

/// Replaces every cell's output with the firm's own optimum given the aggregates.
pub fn firm_quantities(state: &EquilibriumState, world: &World) -> Result<EquilibriumState> {
    let envs: Vec<Vec<DestinationParams>> = (0..world.n_c()).map(|o| world.destinations(o, &state.countries)).collect();
    let mut next = state.clone();
    for (c, cell) in next.cells.iter_mut().enumerate() {
        if !cell.committed.is_empty() {
            cell.q = committed_output(&world.firm(c), &envs[world.cells[c].0], &cell.committed)?.total;
        }
    }
    Ok(next)
}

/// Per-cell deliveries implied by a state, indexed by destination.
pub fn cell_deliveries(state: &EquilibriumState, world: &World) -> Vec<Vec<f64>> {
    let n = world.n_c();
    (0..world.cells.len())
        .map(|c| {
            let mut out = vec![0.0; n];
            let committed = &state.cells[c].committed;
            if committed.is_empty() {
                return out;
            }
            let o = world.cells[c].0;
            let w = state.countries[o].w;
            let mc = world.firm(c).marginal_cost(w, state.cells[c].q);
            for &d in committed {
                let kr = state.countries[d].kappa_r;
                out[d] = committed_quantity(&kr, &world.kappa_lt[o][d], world.tau[o][d], &w, &mc);
            }
            out
        })
        .collect()
}

/// Sales by (origin, destination), home sales on the diagonal.
pub fn trade_flows(state: &EquilibriumState, world: &World) -> Vec<Vec<f64>> {
    let n = world.n_c();
    let mut flows = vec![vec![0.0; n]; n];
    let share = world.cell_share();
    for (c, qs) in cell_deliveries(state, world).iter().enumerate() {
        let o = world.cells[c].0;
        for d in 0..n {
            if qs[d] > 0.0 {
                flows[o][d] += state.countries[o].mass * share * state.countries[d].kappa_r / NU_R * qs[d].powf(NU_R);
            }
        }
    }
    flows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GravityFit {
    pub intercept: f64,
    pub distance: f64,
    pub exporter_gdp: f64,
    pub importer_gdp: f64,
    pub r_squared: f64,
    pub observations: usize,
}

/// OLS of log flows on log distance and log exporter / importer GDP; zero flows dropped.
pub fn gravity_fit(flows: &[Vec<f64>], distances: &[Vec<f64>], gdp: &[f64]) -> Result<GravityFit> {
    let mut rows = Vec::new();
    for (i, row) in flows.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if i != j && x > 0.0 {
                rows.push((x.ln(), distances[i][j].ln(), gdp[i].ln(), gdp[j].ln()));
            }
        }
    }
    if rows.len() < 4 {
        return Err(Error::RankDeficient);
    }
    let design = DMatrix::from_fn(rows.len(), 4, |r, c| match c {
        0 => 1.0,
        1 => rows[r].1,
        2 => rows[r].2,
        _ => rows[r].3,
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.0));
    let beta = least_squares(&design, &y).map_err(|_| Error::RankDeficient)?;
    let fitted = &design * &beta;
    let mean = y.mean();
    let ss_res: f64 = (&y - &fitted).iter().map(|e| e * e).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(GravityFit {
        intercept: beta[0],
        distance: beta[1],
        exporter_gdp: beta[2],
        importer_gdp: beta[3],
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        observations: rows.len(),
    })
}

/// Slope of log κ_LT on log distance over foreign pairs.
pub fn kappa_lt_distance_elasticity(world: &World) -> Result<f64> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..world.n_c() {
        for j in 0..world.n_c() {
            if i != j && world.kappa_lt[i][j] > 0.0 {
                x.push(world.distances[i][j].ln());
                y.push(world.kappa_lt[i][j].ln());
            }
        }
    }
    let (slope, _) = crate::eoq::slope_regression(&x, &y).ok_or(Error::RankDeficient)?;
    Ok(slope)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub destination: usize,
    pub exporter_share: f64,
    /// Median log revenue of exporters, relative to rank 1.
    pub median_log_revenue: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankPowerFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub rmse: f64,
    /// Set when the profile is flat and the exponent is not identified.
    pub degenerate: bool,
}

impl RankPowerFit {
    pub fn eval(&self, rank: f64) -> f64 {
        self.c0 * rank.powf(-self.c1) + self.c2
    }

    /// Decline per unit rank at rank 1.
    pub fn steepness(&self) -> f64 {
        self.c0 * self.c1
    }
}

/// Least squares for c₀·rank^{−c₁} + c₂: linear in (c₀, c₂) for each c₁, golden search over c₁.
pub fn fit_rank_power(points: &[(f64, f64)]) -> RankPowerFit {
    let spread = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) - points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if points.len() < 3 || spread.abs() < 1e-12 {
        let c2 = points.iter().map(|p| p.1).sum::<f64>() / points.len().max(1) as f64;
        return RankPowerFit { c0: 0.0, c1: 0.0, c2, rmse: 0.0, degenerate: true };
    }
    let solve = |c1: f64| -> (f64, f64, f64) {
        let n = points.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(r, y) in points {
            let x = r.powf(-c1);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let det = n * sxx - sx * sx;
        let c0 = (n * sxy - sx * sy) / det;
        let c2 = (sy - c0 * sx) / n;
        let sse = points.iter().map(|&(r, y)| (c0 * r.powf(-c1) + c2 - y).powi(2)).sum::<f64>();
        (c0, c2, sse)
    };
    // coarse scan then golden refinement on log c1
    let grid: Vec<f64> = (0..=120).map(|i| -6.0 + 0.075 * i as f64).collect();
    let best = grid.iter().copied().min_by(|a, b| solve(a.exp()).2.total_cmp(&solve(b.exp()).2)).unwrap();
    let s = golden_max(|s| -solve(s.exp()).2, best - 0.075, best + 0.075, 1e-15);
    let c1 = s.exp();
    let (c0, c2, sse) = solve(c1);
    RankPowerFit { c0, c1, c2, rmse: (sse / points.len() as f64).sqrt(), degenerate: false }
}

/// Destinations ranked by the share of origin firms exporting there, with the
/// median log revenue of those exporters normalized to zero at rank 1.
pub fn median_revenue_by_rank(state: &EquilibriumState, world: &World, origin: usize) -> (Vec<RankRow>, RankPowerFit) {
    let deliveries = cell_deliveries(state, world);
    let origin_cells: Vec<usize> = (0..world.cells.len()).filter(|&c| world.cells[c].0 == origin).collect();
    let mut rows = Vec::new();
    for d in (0..world.n_c()).filter(|&d| d != origin) {
        let mut revs: Vec<f64> = origin_cells
            .iter()
            .filter(|&&c| deliveries[c][d] > 0.0)
            .map(|&c| (state.countries[d].kappa_r / NU_R * deliveries[c][d].powf(NU_R)).ln())
            .collect();
        if revs.is_empty() {
            continue;
        }
        revs.sort_by(f64::total_cmp);
        let m = revs.len();
        let median = if m % 2 == 1 { revs[m / 2] } else { 0.5 * (revs[m / 2 - 1] + revs[m / 2]) };
        rows.push(RankRow { rank: 0, destination: d, exporter_share: m as f64 / origin_cells.len() as f64, median_log_revenue: median });
    }
    rows.sort_by(|a, b| b.exporter_share.total_cmp(&a.exporter_share).then(b.median_log_revenue.total_cmp(&a.median_log_revenue)));
    let top = rows.first().map_or(0.0, |r| r.median_log_revenue);
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
        r.median_log_revenue -= top;
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.rank as f64, r.median_log_revenue)).collect();
    let fit = fit_rank_power(&points);
    (rows, fit)
}

/// Desk-scale world: lognormal labor endowments, countries at random points of a circle.
pub fn synthetic_world(n_c: usize, n_p: usize, n_v: usize, alpha: f64, seed: u64) -> WorldConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labor = (0..n_c)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (0.6 * z).exp()
        })
        .collect();
    let circle_km = 20_000.0;
    let mut angles: Vec<f64> = (0..n_c).map(|_| rng.random::<f64>()).collect();
    angles.sort_by(f64::total_cmp);
    let distances = (0..n_c)
        .map(|i| {
            (0..n_c)
                .map(|j| {
                    let a = (angles[i] - angles[j]).abs();
                    circle_km * a.min(1.0 - a)
                })
                .collect()
        })
        .collect();
    WorldConfig { labor, circle_km, distances, ..WorldConfig::desk(n_c, n_p, n_v, alpha) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_calibration_table() {
        let c = WorldConfig::default();
        assert_eq!((c.n_c, c.n_p, c.n_v), (100, 20, 10));
        assert_eq!((c.sigma, c.nu_r, c.nu_lt, c.mu_r), (5.0, 0.8, 0.6, 1.05));
        assert_eq!((c.delta_e_f_e, c.f_o, c.f_x, c.tau), (0.05, 0.1, 1e-5, 1.05));
        let json = serde_json::to_value(&c).unwrap();
        for key in ["N_c", "N_p", "N_v", "alpha", "sigma", "nu_R", "nu_LT", "mu_R", "delta_e_f_e", "f_o", "f_x", "tau"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn revenue_tail_index_matches_target() {
        // revenue ∝ κ_C^{-4/(1+5α)}, so its Pareto index is k(1+5α)/4
        let g = ProductivityGrid::pareto(20, 1.05, 0.225);
        assert!((g.pareto_index * (1.0 + 5.0 * 0.225) / 4.0 - 1.05).abs() < 1e-14);
        assert!(g.kappa_c.windows(2).all(|w| w[0] < w[1]));
        // midpoint quantile of the least productive class
        assert!((g.kappa_c[19] - (1.0 - 0.025f64).powf(1.0 / g.pareto_index)).abs() < 1e-15);
    }

    #[test]
    fn closed_economy_zeroes_residuals() {
        let world = World::new(&WorldConfig::desk(1, 6, 2, 0.225)).unwrap();
        let s = initial_state(&world, 0);
        let r = residuals(&s, &world).unwrap();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-12, "{norm}");
    }

    #[test]
    fn isolated_economies_zero_residuals() {
        let mut cfg = WorldConfig::desk(2, 4, 1, 0.225);
        cfg.tau = 1e6;
        cfg.f_x = 0.0;
        let world = World::new(&cfg).unwrap();
        let mut s = initial_state(&world, 0);
        for cell in s.cells.iter_mut().filter(|c| !c.committed.is_empty()) {
            cell.committed = vec![0, 1];
        }
        let r = residuals(&s, &world).unwrap();
        assert!(r.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10);
    }

    #[test]
    fn exits_when_least_productive_class_loses() {
        let grid = ProductivityGrid::pareto(20, 1.05, 0.225);
        let ce = closed_economy(&grid, 0.225, 2.0, 0.05, 1.0);
        assert!(ce.operating.iter().any(|&o| !o));
        for (p, &o) in ce.profit.iter().zip(&ce.operating) {
            assert_eq!(o, *p > 0.0);
        }
    }

    #[test]
    fn wage_increase_raises_labor_residual() {
        let world = World::new(&WorldConfig::desk(2, 4, 1, 0.225)).unwrap();
        let s = initial_state(&world, 0);
        let idx = world.cells.len() + 1;
        let base = residuals(&s, &world).unwrap()[idx];
        for bump in [1.01, 1.02, 1.05] {
            let mut up = s.clone();
            up.countries[0].w *= bump;
            let up = firm_quantities(&up, &world).unwrap();
            assert!(residuals(&up, &world).unwrap()[idx] > base);
        }
    }

    #[test]
    fn scaling_identity() {
        for (alpha, factor) in [(0.225, 1.679), (0.25, 1.778)] {
            let f = FirmParams { kappa_c: 0.8, alpha, origin: 0, f_o: 0.1 };
            let ratio = f.marginal_cost(1.3, 20.0) / f.marginal_cost(1.3, 2.0);
            assert!((ratio - 10f64.powf(alpha)).abs() < 1e-12);
            assert!((ratio - factor).abs() < 1e-3);
        }
    }

    #[test]
    fn gravity_recovers_exact_model() {
        let n = 6;
        let d = circle_distances(n, 20_000.0);
        let gdp: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.7).collect();
        let mut flows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    flows[i][j] = 0.3 * d[i][j].powf(-0.77) * gdp[i].powf(1.12) * gdp[j].powf(1.10);
                }
            }
        }
        let g = gravity_fit(&flows, &d, &gdp).unwrap();
        assert!((g.distance + 0.77).abs() < 1e-9);
        assert!((g.exporter_gdp - 1.12).abs() < 1e-9);
        assert!((g.importer_gdp - 1.10).abs() < 1e-9);
        assert!((g.r_squared - 1.0).abs() < 1e-12);
        let same = vec![1.0; n];
        assert_eq!(gravity_fit(&flows, &d, &same), Err(Error::RankDeficient));
    }

    #[test]
    fn rank_power_fit_recovers_parameters() {
        let pts: Vec<(f64, f64)> = (1..=12).map(|r| (r as f64, 1.7 * (r as f64).powf(-0.6) - 1.7)).collect();
        let f = fit_rank_power(&pts);
        assert!((f.c0 - 1.7).abs() < 1e-6 && (f.c1 - 0.6).abs() < 1e-6 && (f.c2 + 1.7).abs() < 1e-6, "{f:?}");
        let flat = fit_rank_power(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        assert!(flat.degenerate);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut cfg = WorldConfig::desk(2, 3, 1, 0.225);
        cfg.kappa_lt_base = 0.01;
        let world = World::new(&cfg).unwrap();
        let mut s = initial_state(&world, 0);
        for cell in s.cells.iter_mut() {
            cell.committed = vec![0, 1];
        }
        let (_, g) = loss_gradient(&s, &world).unwrap();
        let theta = s.to_log_vector();
        let h = 1e-6;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fd = (loss(&s.with_log_vector(&tp), &world).unwrap() - loss(&s.with_log_vector(&tm), &world).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * gmax, "{i}: {fd} vs {}", g[i]);
        }
    }

    fn two_country_world() -> (World, EquilibriumState) {
        let world = World::new(&WorldConfig::desk(2, 4, 1, 0.225)).unwrap();
        let mut s = initial_state(&world, 0);
        for cell in s.cells.iter_mut().filter(|c| !c.committed.is_empty()) {
            cell.committed = vec![0, 1];
        }
        (world, s)
    }

    #[test]
    fn symmetric_pair_converges_to_equal_wages() {
        let (world, s) = two_country_world();
        let r = inner_solve(&s, &world).unwrap();
        assert!(r.steps > 0 && r.loss <= world.config.adam.tol);
        let (a, b) = (&r.state.countries[0], &r.state.countries[1]);
        assert!((a.w / b.w - 1.0).abs() < 1e-6, "{} {}", a.w, b.w);
        // numeraire: world wage bill equals world labor
        let (la, lb) = (world.labor[0], world.labor[1]);
        assert!((a.w * la + b.w * lb - la - lb).abs() < 1e-6 * (la + lb));
        let minima: Vec<f64> = r.history.chunks(100).map(|w| w.iter().cloned().fold(f64::INFINITY, f64::min)).collect();
        assert!(minima.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn solved_trade_is_balanced() {
        let (world, s) = two_country_world();
        let r = inner_solve(&s, &world).unwrap();
        let flows = trade_flows(&r.state, &world);
        for o in 0..2 {
            let sales: f64 = flows[o].iter().sum();
            let spending: f64 = flows.iter().map(|row| row[o]).sum();
            let income = r.state.countries[o].w * world.labor[o];
            assert!((sales - spending).abs() < 1e-5 * income, "{sales} {spending}");
        }
    }

    #[test]
    fn relabelled_countries_give_relabelled_solution() {
        let mut cfg = WorldConfig::desk(3, 3, 1, 0.225);
        cfg.labor = vec![1.0, 1.4, 0.8];
        let world = World::new(&cfg).unwrap();
        let solve = |world: &World| {
            let mut s = initial_state(world, 0);
            for cell in s.cells.iter_mut().filter(|c| !c.committed.is_empty()) {
                cell.committed = vec![0, 1, 2];
            }
            inner_solve(&s, world).unwrap().state
        };
        let base = solve(&world);
        let perm = [2, 0, 1];
        let mut pcfg = cfg.clone();
        pcfg.labor = perm.iter().map(|&i| cfg.labor[i]).collect();
        let pworld = World::new(&pcfg).unwrap();
        let moved = solve(&pworld);
        for (k, &i) in perm.iter().enumerate() {
            assert!((moved.countries[k].w / base.countries[i].w - 1.0).abs() < 1e-5);
            assert!((moved.countries[k].kappa_r / base.countries[i].kappa_r - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn converged_world_is_a_fixed_point_of_the_outer_loop() {
        let mut cfg = synthetic_world(4, 4, 1, 0.225, 3);
        cfg.kappa_lt_base = 0.05;
        let world = World::new(&cfg).unwrap();
        let sol = solve_world(&world, 1, 20).unwrap();
        assert!(sol.converged || sol.cycled);
        assert!(sol.loss <= world.config.adam.tol);
        if sol.converged {
            let r = outer_iterate(&sol.state, &world, 0).unwrap();
            assert_eq!(r.changed, 0);
            assert_eq!(r.state, sol.state);
        }
    }
}
