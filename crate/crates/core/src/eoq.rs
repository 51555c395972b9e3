//! Generalized economic order quantity: shipment sizing and the panel estimator
//! of the frequency-quantity slope.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::{BTreeMap, BTreeSet};

/// Inventory cost per unit of shipment size, coordination prefactor and exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EoqParams {
    pub kappa_i: f64,
    pub kappa_t: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Shipment {
    pub size: f64,
    pub frequency: f64,
    pub min_cost: f64,
}

impl EoqParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        if !(self.kappa_i > 0.0 && self.kappa_t > 0.0) {
            return Err(Error::DomainViolation("cost prefactors must be positive".into()));
        }
        Ok(())
    }

    /// Log-log slope of frequency on annual quantity.
    pub fn beta(&self) -> f64 {
        (1.0 - self.gamma) / (2.0 - self.gamma)
    }

    /// Annual cost of shipping `q` in shipments of size `size`.
    pub fn cost(&self, q: f64, size: f64) -> f64 {
        self.kappa_i * size + self.kappa_t * q * size.powf(self.gamma - 1.0)
    }
}

/// `γ` implied by a slope `β`.
pub fn gamma_for_beta(beta: f64) -> f64 {
    (1.0 - 2.0 * beta) / (1.0 - beta)
}

pub fn optimal_shipment(p: &EoqParams, q: f64) -> Result<Shipment> {
    p.validate()?;
    if !(q > 0.0) {
        return Err(Error::NonPositiveArgument(q));
    }
    let g = p.gamma;
    let size = ((1.0 - g) * p.kappa_t * q / p.kappa_i).powf(1.0 / (2.0 - g));
    let min_cost = (2.0 - g)
        * (1.0 - g).powf(-(1.0 - g) / (2.0 - g))
        * p.kappa_i.powf((1.0 - g) / (2.0 - g))
        * p.kappa_t.powf(1.0 / (2.0 - g))
        * q.powf(1.0 / (2.0 - g));
    Ok(Shipment { size, frequency: q / size, min_cost })
}

/// One row of `shipments.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShipmentRecord {
    pub firm_id: String,
    pub hs8: String,
    pub year: i32,
    pub month: u8,
    pub quantity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRules {
    pub min_years_active: usize,
    pub min_firms_per_industry: usize,
}

impl Default for SelectionRules {
    fn default() -> Self {
        SelectionRules { min_years_active: 2, min_firms_per_industry: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndustryEstimate {
    pub hs8: String,
    pub firms: usize,
    pub beta: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledEstimate {
    pub beta: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    /// Between-industry standard deviation of β.
    pub sigma_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaReport {
    pub per_industry: Vec<IndustryEstimate>,
    pub pooled: PooledEstimate,
}

/// Validated, keyed panel.
#[derive(Debug, Clone, Default)]
pub struct ShipmentPanel {
    // hs8 -> firm -> year -> month quantities
    data: BTreeMap<String, BTreeMap<String, BTreeMap<i32, [f64; 12]>>>,
    complete_years: BTreeSet<i32>,
}

impl ShipmentPanel {
    pub fn from_records(records: &[ShipmentRecord]) -> Result<Self> {
        let mut data: BTreeMap<String, BTreeMap<String, BTreeMap<i32, [f64; 12]>>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        let mut months_by_year: BTreeMap<i32, BTreeSet<u8>> = BTreeMap::new();
        for r in records {
            if !(1..=12).contains(&r.month) {
                return Err(Error::InvalidData(format!("month {} out of range", r.month)));
            }
            if !r.quantity.is_finite() || r.quantity < 0.0 {
                return Err(Error::InvalidData(format!("bad quantity {}", r.quantity)));
            }
            if !seen.insert((r.firm_id.clone(), r.hs8.clone(), r.year, r.month)) {
                return Err(Error::InvalidData(format!(
                    "duplicate record {} {} {}-{}",
                    r.firm_id, r.hs8, r.year, r.month
                )));
            }
            months_by_year.entry(r.year).or_default().insert(r.month);
            data.entry(r.hs8.clone())
                .or_default()
                .entry(r.firm_id.clone())
                .or_default()
                .entry(r.year)
                .or_insert([0.0; 12])[r.month as usize - 1] = r.quantity;
        }
        // a calendar year is partial when some month never appears anywhere in the panel
        let complete_years = months_by_year.into_iter().filter(|(_, m)| m.len() == 12).map(|(y, _)| y).collect();
        Ok(ShipmentPanel { data, complete_years })
    }

    pub fn industries(&self) -> impl Iterator<Item = &String> {
        self.data.keys()
    }

    /// Per-firm (mean annual quantity, mean active months per year) for firms meeting the activity rule.
    fn firm_points(&self, hs8: &str, min_years: usize) -> Vec<(f64, f64)> {
        let Some(firms) = self.data.get(hs8) else { return vec![] };
        let mut out = Vec::new();
        for years in firms.values() {
            let mut qs = Vec::new();
            let mut fs = Vec::new();
            for (y, months) in years {
                if !self.complete_years.contains(y) {
                    continue;
                }
                let q: f64 = months.iter().sum();
                if q > 0.0 {
                    qs.push(q);
                    fs.push(months.iter().filter(|&&m| m > 0.0).count() as f64);
                }
            }
            if qs.len() >= min_years.max(1) {
                let n = qs.len() as f64;
                out.push((qs.iter().sum::<f64>() / n, fs.iter().sum::<f64>() / n));
            }
        }
        out
    }
}

/// OLS slope of y on x with intercept: (slope, standard error).
pub fn slope_regression(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    // shifted means, so constant data centres to exact zeros
    let mx = x[0] + x.iter().map(|v| v - x[0]).sum::<f64>() / n as f64;
    let my = y[0] + y.iter().map(|v| v - y[0]).sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let se = (ssr / (n as f64 - 2.0) / sxx).sqrt();
    Some((slope, se))
}

/// Two-sided p-value of a regression slope against zero.
pub fn slope_p_value(slope: f64, se: f64, n: usize) -> f64 {
    if se == 0.0 {
        return if slope == 0.0 { 1.0 } else { 0.0 };
    }
    let t = StudentsT::new(0.0, 1.0, (n - 2) as f64).expect("positive degrees of freedom");
    2.0 * (1.0 - t.cdf((slope / se).abs()))
}

const SE_FLOOR: f64 = 1e-10;

/// Random-effects pooling by the method-of-moments between-study variance.
pub fn pool_random_effects(estimates: &[(f64, f64)]) -> PooledEstimate {
    let k = estimates.len() as f64;
    let w: Vec<f64> = estimates.iter().map(|&(_, s)| 1.0 / s.max(SE_FLOOR).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let fixed: f64 = estimates.iter().zip(&w).map(|(e, w)| e.0 * w).sum::<f64>() / sw;
    let q: f64 = estimates.iter().zip(&w).map(|(e, w)| w * (e.0 - fixed).powi(2)).sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let denom = sw - sw2 / sw;
    let tau2 = if denom > 0.0 { ((q - (k - 1.0)) / denom).max(0.0) } else { 0.0 };
    let ws: Vec<f64> = estimates.iter().map(|&(_, s)| 1.0 / (s.max(SE_FLOOR).powi(2) + tau2)).collect();
    let sws: f64 = ws.iter().sum();
    let beta = estimates.iter().zip(&ws).map(|(e, w)| e.0 * w).sum::<f64>() / sws;
    let se = 1.0 / sws.sqrt();
    PooledEstimate { beta, se, ci95: (beta - 1.959_963_984_540_054 * se, beta + 1.959_963_984_540_054 * se), sigma_beta: tau2.sqrt() }
}

pub fn estimate_beta(panel: &ShipmentPanel, rules: &SelectionRules) -> Result<BetaReport> {
    let keys: Vec<&String> = panel.industries().collect();
    let per_industry: Vec<IndustryEstimate> = keys
        .par_iter()
        .filter_map(|hs8| {
            let pts = panel.firm_points(hs8, rules.min_years_active);
            if pts.len() < rules.min_firms_per_industry.max(3) {
                return None;
            }
            let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
            let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
            let (beta, se) = slope_regression(&lx, &ly)?;
            Some(IndustryEstimate { hs8: (*hs8).clone(), firms: pts.len(), beta, se })
        })
        .collect();
    if per_industry.is_empty() {
        return Err(Error::NoQualifyingIndustries);
    }
    let pooled = pool_random_effects(&per_industry.iter().map(|e| (e.beta, e.se)).collect::<Vec<_>>());
    Ok(BetaReport { per_industry, pooled })
}

/// Average monthly share profile per industry and its squared-share concentration.
pub fn seasonality_index(panel: &ShipmentPanel) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (hs8, firms) in &panel.data {
        let mut by_year: BTreeMap<i32, [f64; 12]> = BTreeMap::new();
        for years in firms.values() {
            for (y, months) in years {
                let acc = by_year.entry(*y).or_insert([0.0; 12]);
                for i in 0..12 {
                    acc[i] += months[i];
                }
            }
        }
        let mut shares = [0.0; 12];
        let mut n = 0.0;
        for months in by_year.values() {
            let total: f64 = months.iter().sum();
            if total > 0.0 {
                for i in 0..12 {
                    shares[i] += months[i] / total;
                }
                n += 1.0;
            }
        }
        if n > 0.0 {
            out.insert(hs8.clone(), shares.iter().map(|s| (s / n).powi(2)).sum());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub min_firms: usize,
    pub industries: usize,
    pub beta: Option<f64>,
    pub sigma_beta: Option<f64>,
}

pub fn sensitivity_table(panel: &ShipmentPanel, cutoffs: &[usize], min_years_active: usize) -> Vec<SensitivityRow> {
    cutoffs
        .iter()
        .map(|&c| {
            let rules = SelectionRules { min_years_active, min_firms_per_industry: c };
            match estimate_beta(panel, &rules) {
                Ok(r) => SensitivityRow {
                    min_firms: c,
                    industries: r.per_industry.len(),
                    beta: Some(r.pooled.beta),
                    sigma_beta: Some(r.pooled.sigma_beta),
                },
                Err(_) => SensitivityRow { min_firms: c, industries: 0, beta: None, sigma_beta: None },
            }
        })
        .collect()
}

/// Generator for panels whose shipping behaviour follows the model.
///
/// All industries share `gamma`. Between-industry dispersion of the measured slope
/// comes from coordination costs that co-move with firm size inside an industry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticPanelSpec {
    pub industries: usize,
    pub min_firms: usize,
    pub max_firms: usize,
    pub years: usize,
    pub gamma: f64,
    /// Standard deviation across industries of the measured slope.
    pub slope_sd: f64,
    /// Standard deviation of log annual quantity across firms.
    pub log_q_sd: f64,
    /// Firm-level noise in log frequency from idiosyncratic coordination costs.
    pub firm_noise_sd: f64,
    /// Year-to-year noise in log annual quantity.
    pub year_noise_sd: f64,
    /// Median shipments per year.
    pub median_frequency: f64,
    pub seed: u64,
}

impl Default for SyntheticPanelSpec {
    fn default() -> Self {
        SyntheticPanelSpec {
            industries: 70,
            min_firms: 10,
            max_firms: 30,
            years: 3,
            gamma: gamma_for_beta(0.39),
            slope_sd: 0.12,
            log_q_sd: 0.8,
            firm_noise_sd: 0.15,
            year_noise_sd: 0.1,
            median_frequency: 4.0,
            seed: 0,
        }
    }
}

pub fn synthetic_panel(spec: &SyntheticPanelSpec) -> Vec<ShipmentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    let q_med: f64 = 1000.0;
    for ind in 0..spec.industries {
        let hs8 = format!("{:08}", 10_000_000 + ind);
        let gamma = spec.gamma;
        let beta = (1.0 - gamma) / (2.0 - gamma);
        let z: f64 = rng.sample(StandardNormal);
        let tilt = spec.slope_sd * z;
        // coordination/inventory ratio placing the median firm at the target frequency
        let ratio = (q_med.powf(beta) / spec.median_frequency).powf(2.0 - gamma) / (1.0 - gamma);
        let n_firms = rng.random_range(spec.min_firms..=spec.max_firms);
        for f in 0..n_firms {
            let firm_id = format!("F{ind:03}_{f:03}");
            let zq: f64 = rng.sample(StandardNormal);
            let zn: f64 = rng.sample(StandardNormal);
            let q_base = q_med * (spec.log_q_sd * zq).exp();
            let co_move = (q_base / q_med).powf(-tilt * (2.0 - gamma));
            let params = EoqParams {
                kappa_i: 1.0,
                kappa_t: ratio * co_move * (spec.firm_noise_sd * (2.0 - gamma) * zn).exp(),
                gamma,
            };
            for y in 0..spec.years {
                let zy: f64 = rng.sample(StandardNormal);
                let q = q_base * (spec.year_noise_sd * zy).exp();
                let ship = optimal_shipment(&params, q).expect("valid generator parameters");
                let phase: f64 = rng.random();
                let n = (ship.frequency + phase).floor().max(1.0) as usize;
                let offset: f64 = rng.random();
                let mut months = [0.0; 12];
                for k in 0..n {
                    let t = (k as f64 + offset) / n as f64;
                    months[((12.0 * t) as usize).min(11)] += q / n as f64;
                }
                for (m, &v) in months.iter().enumerate() {
                    if v > 0.0 {
                        out.push(ShipmentRecord {
                            firm_id: firm_id.clone(),
                            hs8: hs8.clone(),
                            year: 2000 + y as i32,
                            month: m as u8 + 1,
                            quantity: v,
                        });
                    }
                }
            }
        }
    }
    // an idle placeholder keeps every calendar month present in every year
    for y in 0..spec.years {
        for m in 1..=12 {
            out.push(ShipmentRecord {
                firm_id: "CAL".into(),
                hs8: "99999999".into(),
                year: 2000 + y as i32,
                month: m,
                quantity: 0.0,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::golden_max;

    #[test]
    fn classic_symmetric_point() {
        let s = optimal_shipment(&EoqParams { kappa_i: 1.0, kappa_t: 1.0, gamma: 0.0 }, 1.0).unwrap();
        assert!((s.size - 1.0).abs() < 1e-15 && (s.frequency - 1.0).abs() < 1e-15 && (s.min_cost - 2.0).abs() < 1e-15);
        let p = EoqParams { kappa_i: 3.0, kappa_t: 2.0, gamma: 0.0 };
        let s = optimal_shipment(&p, 5.0).unwrap();
        assert!((s.size - (2.0f64 * 5.0 / 3.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn matches_golden_section_minimum() {
        let p = EoqParams { kappa_i: 2.0, kappa_t: 1.0, gamma: 0.5 };
        let s = optimal_shipment(&p, 8.0).unwrap();
        let oracle = golden_max(|x| -p.cost(8.0, x), 1e-3, 100.0, 1e-13);
        assert!((s.size - oracle).abs() < 1e-7);
        assert!((s.size - 2f64.powf(2.0 / 3.0)).abs() < 1e-14);
        assert!((s.min_cost - p.cost(8.0, s.size)).abs() < 1e-12);
    }

    #[test]
    fn first_order_condition() {
        for &g in &[0.0, 0.2, 0.36066, 0.9] {
            let p = EoqParams { kappa_i: 1.3, kappa_t: 0.7, gamma: g };
            let q = 12.0;
            let s = optimal_shipment(&p, q).unwrap();
            let h = 1e-6 * s.size;
            let d = (p.cost(q, s.size + h) - p.cost(q, s.size - h)) / (2.0 * h);
            assert!(d.abs() < 1e-8, "gamma {g}: {d}");
        }
        assert_eq!(
            optimal_shipment(&EoqParams { kappa_i: 1.0, kappa_t: 1.0, gamma: 1.0 }, 1.0),
            Err(Error::InvalidGamma(1.0))
        );
    }

    fn panel_from(points: &[(&str, &str, f64, usize)], years: i32) -> ShipmentPanel {
        let mut recs = Vec::new();
        for &(firm, hs8, q, months) in points {
            for y in 0..years {
                for m in 0..months {
                    recs.push(ShipmentRecord {
                        firm_id: firm.into(),
                        hs8: hs8.into(),
                        year: 2010 + y,
                        month: m as u8 + 1,
                        quantity: q / months as f64,
                    });
                }
                for m in months..12 {
                    recs.push(ShipmentRecord {
                        firm_id: firm.into(),
                        hs8: hs8.into(),
                        year: 2010 + y,
                        month: m as u8 + 1,
                        quantity: 0.0,
                    });
                }
            }
        }
        ShipmentPanel::from_records(&recs).unwrap()
    }

    #[test]
    fn noiseless_model_data_recovers_slope() {
        // exact power law f = q^β on integer frequencies
        let beta: f64 = 0.5;
        let names: Vec<String> = (0..12).map(|i| format!("f{i}")).collect();
        let pts: Vec<(&str, &str, f64, usize)> =
            (1..=12).map(|f| (names[f - 1].as_str(), "11111111", (f as f64).powf(1.0 / beta), f)).collect();
        let r = estimate_beta(&panel_from(&pts, 2), &SelectionRules::default()).unwrap();
        assert!((r.per_industry[0].beta - beta).abs() < 1e-12);
    }

    #[test]
    fn always_shipping_means_zero_slope() {
        let names: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let pts: Vec<(&str, &str, f64, usize)> = (0..10).map(|i| (names[i].as_str(), "2", 10.0 + i as f64 * 7.0, 12)).collect();
        let r = estimate_beta(&panel_from(&pts, 2), &SelectionRules::default()).unwrap();
        assert_eq!(r.per_industry[0].beta, 0.0);
    }

    #[test]
    fn small_industries_are_excluded() {
        let names: Vec<String> = (0..12).map(|i| format!("f{i}")).collect();
        let mut pts: Vec<(&str, &str, f64, usize)> =
            (0..10).map(|i| (names[i].as_str(), "big", 10.0 * (i + 1) as f64, i + 1)).collect();
        pts.push((names[10].as_str(), "small", 5.0, 2));
        pts.push((names[11].as_str(), "small", 50.0, 6));
        let r = estimate_beta(&panel_from(&pts, 2), &SelectionRules::default()).unwrap();
        assert_eq!(r.per_industry.len(), 1);
        assert_eq!(r.per_industry[0].hs8, "big");
        let none = estimate_beta(&panel_from(&pts, 2), &SelectionRules { min_years_active: 2, min_firms_per_industry: 50 });
        assert_eq!(none, Err(Error::NoQualifyingIndustries));
    }

    #[test]
    fn seasonality_examples() {
        let uniform = panel_from(&[("a", "u", 12.0, 12)], 1);
        assert!((seasonality_index(&uniform)["u"] - 1.0 / 12.0).abs() < 1e-15);
        let single = panel_from(&[("a", "s", 12.0, 1)], 1);
        assert!((seasonality_index(&single)["s"] - 1.0).abs() < 1e-15);
        let two = panel_from(&[("a", "t", 12.0, 2)], 1);
        assert!((seasonality_index(&two)["t"] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let r = ShipmentRecord { firm_id: "a".into(), hs8: "1".into(), year: 2000, month: 1, quantity: 1.0 };
        assert!(ShipmentPanel::from_records(&[r.clone(), r]).is_err());
    }

    #[test]
    fn synthetic_panel_is_deterministic_and_in_range() {
        let spec = SyntheticPanelSpec { industries: 8, ..Default::default() };
        let a = synthetic_panel(&spec);
        assert_eq!(a, synthetic_panel(&spec));
        let r = estimate_beta(&ShipmentPanel::from_records(&a).unwrap(), &SelectionRules::default()).unwrap();
        for e in &r.per_industry {
            assert!(e.beta > 0.0 && e.beta <= 0.6);
        }
    }

    #[test]
    fn sensitivity_selection_is_monotone() {
        let spec = SyntheticPanelSpec { industries: 20, min_firms: 3, max_firms: 25, ..Default::default() };
        let panel = ShipmentPanel::from_records(&synthetic_panel(&spec)).unwrap();
        let rows = sensitivity_table(&panel, &[5, 10, 1000], 2);
        assert!(rows[0].industries >= rows[1].industries);
        assert_eq!(rows[2].industries, 0);
        assert!(rows[2].beta.is_none());
    }

    #[test]
    fn pooling_of_identical_estimates() {
        let p = pool_random_effects(&[(0.4, 0.05), (0.4, 0.05), (0.4, 0.05)]);
        assert!((p.beta - 0.4).abs() < 1e-15);
        assert_eq!(p.sigma_beta, 0.0);
    }
}
