//! File formats, run configuration, checkpoints and the income target generator.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trade_equilibrium::{EquilibriumState, WorldConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "TRACTABLE_OUT_DIR";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// Everything that determines a run's numeric outputs, plus where they go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Subcommand path, e.g. `["trade", "run"]`.
    pub command: Vec<String>,
    /// Subcommand parameters, including digests of input files.
    pub params: serde_json::Value,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl RunConfig {
    /// Canonical bytes hashed into the manifest; the output directory is excluded.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        // serde_json maps are sorted, so equal configs give equal bytes
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_vec(&v).expect("value serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub outputs: Vec<OutputRecord>,
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn claim(path: &Path) -> Result<Self> {
        fs::create_dir_all(path)?;
        let lock = path.join(".tractable.lock");
        fs::OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Io(format!("{} is in use by another run (remove {} if stale)", path.display(), lock.display()))
            } else {
                e.into()
            }
        })?;
        Ok(OutputDir { path: path.to_path_buf(), lock })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn parse_csv<T: DeserializeOwned, R: std::io::Read>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        out.push(row.map_err(|e| Error::InvalidData(format!("row {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_csv(file).map_err(|e| match e {
        Error::InvalidData(m) => Error::InvalidData(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// One row of `countries.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryRow {
    pub code: String,
    pub gdp: f64,
    pub tradable_share: f64,
}

/// One row of `distances.csv`; pairs are symmetric and may be listed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub code_i: String,
    pub code_j: String,
    pub km: f64,
}

/// One row of `trade_flows.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeFlowRow {
    pub importer: String,
    pub exporter: String,
    pub value: f64,
}

fn code_index(codes: &[String]) -> Result<HashMap<&str, usize>> {
    let mut idx = HashMap::new();
    for (i, c) in codes.iter().enumerate() {
        if idx.insert(c.as_str(), i).is_some() {
            return Err(Error::InvalidData(format!("duplicate country code {c}")));
        }
    }
    Ok(idx)
}

fn lookup(idx: &HashMap<&str, usize>, code: &str) -> Result<usize> {
    idx.get(code).copied().ok_or_else(|| Error::InvalidData(format!("unknown country code {code}")))
}

/// Tradable GDP per country: `gdp · tradable_share`.
pub fn tradable_gdp(countries: &[CountryRow]) -> Result<Vec<f64>> {
    countries
        .iter()
        .map(|c| {
            if !(c.gdp > 0.0) || !(c.tradable_share > 0.0 && c.tradable_share <= 1.0) {
                Err(Error::InvalidData(format!("{}: gdp must be positive and tradable_share in (0, 1]", c.code)))
            } else {
                Ok(c.gdp * c.tradable_share)
            }
        })
        .collect()
}

/// Symmetric distance matrix ordered like `codes`; every foreign pair must be listed.
pub fn distance_matrix(codes: &[String], rows: &[DistanceRow]) -> Result<Vec<Vec<f64>>> {
    let idx = code_index(codes)?;
    let n = codes.len();
    let mut d = vec![vec![f64::NAN; n]; n];
    for r in rows {
        let (i, j) = (lookup(&idx, &r.code_i)?, lookup(&idx, &r.code_j)?);
        if i == j || !(r.km > 0.0) || !r.km.is_finite() {
            return Err(Error::InvalidData(format!("bad distance {} -> {}: {}", r.code_i, r.code_j, r.km)));
        }
        for (a, b) in [(i, j), (j, i)] {
            if !d[a][b].is_nan() && d[a][b] != r.km {
                return Err(Error::InvalidData(format!("conflicting distances for {} and {}", r.code_i, r.code_j)));
            }
            d[a][b] = r.km;
        }
    }
    for i in 0..n {
        d[i][i] = 0.0;
        if let Some(j) = d[i].iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidData(format!("missing distance {} -> {}", codes[i], codes[j])));
        }
    }
    Ok(d)
}

pub fn distance_rows(codes: &[String], d: &[Vec<f64>]) -> Vec<DistanceRow> {
    let mut out = Vec::new();
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            out.push(DistanceRow { code_i: codes[i].clone(), code_j: codes[j].clone(), km: d[i][j] });
        }
    }
    out
}

/// Flow matrix indexed by (exporter, importer); unlisted pairs are zero.
pub fn flow_matrix(codes: &[String], rows: &[TradeFlowRow]) -> Result<Vec<Vec<f64>>> {
    let idx = code_index(codes)?;
    let n = codes.len();
    let mut f = vec![vec![0.0; n]; n];
    for r in rows {
        let (o, d) = (lookup(&idx, &r.exporter)?, lookup(&idx, &r.importer)?);
        if !(r.value >= 0.0) || !r.value.is_finite() {
            return Err(Error::InvalidData(format!("bad flow {} -> {}: {}", r.exporter, r.importer, r.value)));
        }
        f[o][d] += r.value;
    }
    Ok(f)
}

/// Foreign flows as rows; the diagonal (home sales) is left out.
pub fn flow_rows(codes: &[String], flows: &[Vec<f64>]) -> Vec<TradeFlowRow> {
    let mut out = Vec::new();
    for (o, row) in flows.iter().enumerate() {
        for (d, &v) in row.iter().enumerate() {
            if o != d {
                out.push(TradeFlowRow { importer: codes[d].clone(), exporter: codes[o].clone(), value: v });
            }
        }
    }
    out
}

pub fn country_codes(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("C{i:03}")).collect()
}

/// Trade configuration file; unknown fields are rejected.
pub fn load_world_config(path: &Path) -> Result<WorldConfig> {
    let value: serde_json::Value = read_json(path)?;
    let known = serde_json::to_value(WorldConfig::default())?;
    if let (Some(obj), Some(known)) = (value.as_object(), known.as_object()) {
        if let Some(k) = obj.keys().find(|k| !known.contains_key(*k) && k.as_str() != "checkpoint_every") {
            return Err(Error::InvalidData(format!("{}: unknown config field `{k}`", path.display())));
        }
    }
    let config: WorldConfig = serde_json::from_value(value)?;
    config.validate()?;
    Ok(config)
}

/// Outer sweeps between checkpoints, read from the same configuration file.
pub fn checkpoint_every(path: &Path) -> Result<usize> {
    let value: serde_json::Value = read_json(path)?;
    match value.get("checkpoint_every") {
        None => Ok(1),
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 => Ok(n as usize),
            _ => Err(Error::InvalidData("checkpoint_every must be a positive integer".into())),
        },
    }
}

/// Contents of `equilibrium.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeCheckpoint {
    pub seed: u64,
    pub sweep: usize,
    pub converged: bool,
    pub loss: Option<f64>,
    pub config: WorldConfig,
    pub state: EquilibriumState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncomeFamily {
    Lognormal,
    #[serde(rename = "dPln")]
    Dpln,
}

/// Income distribution used as a fitting target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomeTargetSpec {
    pub family: IncomeFamily,
    pub mu: f64,
    pub sigma: f64,
    /// Upper Pareto tail index (dPln only).
    pub alpha: Option<f64>,
    /// Lower Pareto tail index (dPln only).
    pub beta: Option<f64>,
    pub samples: usize,
    /// Number of evenly spaced population shares returned.
    pub points: usize,
    pub seed: u64,
}

impl IncomeTargetSpec {
    pub fn lognormal(mu: f64, sigma: f64, samples: usize, seed: u64) -> Self {
        IncomeTargetSpec { family: IncomeFamily::Lognormal, mu, sigma, alpha: None, beta: None, samples, points: 99, seed }
    }

    pub fn dpln(alpha: f64, beta: f64, mu: f64, sigma: f64, samples: usize, seed: u64) -> Self {
        IncomeTargetSpec {
            family: IncomeFamily::Dpln,
            mu,
            sigma,
            alpha: Some(alpha),
            beta: Some(beta),
            samples,
            points: 99,
            seed,
        }
    }

    /// Calibrated income distribution: α = 3, β = 1.43, μ = 10.9, σ = 0.5.
    pub fn calibrated(samples: usize, seed: u64) -> Self {
        Self::dpln(3.0, 1.43, 10.9, 0.5, samples, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ParameterDomain(m.into()));
        if !(self.sigma > 0.0) || !self.mu.is_finite() {
            return bad("sigma must be positive and mu finite");
        }
        if self.samples < 10_000 {
            return bad("at least 10^4 samples required");
        }
        if self.points == 0 || self.points >= self.samples {
            return bad("points must be positive and below the sample count");
        }
        if self.family == IncomeFamily::Dpln {
            match (self.alpha, self.beta) {
                (Some(a), Some(b)) if a > 0.0 && b > 0.0 => {}
                _ => return bad("dPln needs positive alpha and beta"),
            }
        }
        Ok(())
    }

    fn draw_log(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let y = self.mu + self.sigma * z;
        match self.family {
            IncomeFamily::Lognormal => y,
            IncomeFamily::Dpln => {
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                y + e1 / self.alpha.unwrap() - e2 / self.beta.unwrap()
            }
        }
    }
}

/// `(share, income)` pairs: `income` is the level exceeded by a `share` of the
/// population, read off the sorted sample at shares `k/(points+1)`.
pub fn generate_income_quantiles(spec: &IncomeTargetSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut logs: Vec<f64> = (0..spec.samples).map(|_| spec.draw_log(&mut rng)).collect();
    logs.sort_by(f64::total_cmp);
    let n = logs.len();
    Ok((1..=spec.points)
        .map(|k| {
            let share = k as f64 / (spec.points + 1) as f64;
            // linear interpolation between order statistics at position (1-share)(n-1)
            let pos = (1.0 - share) * (n - 1) as f64;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            let y = if i + 1 < n { logs[i] + frac * (logs[i + 1] - logs[i]) } else { logs[n - 1] };
            (share, y.exp())
        })
        .collect())
}
