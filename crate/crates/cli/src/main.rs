mod session;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use tractable::aggregation::{aggregate_firm_integrals, AggregationSpec};
use tractable::applications::{
    ac_solve_restricted, salinger_chain_power, sz_hoarding, sz_hoarding_bp, sz_hoarding_income_form, sz_hoarding_income_form_exact,
    BargainingParams, RestrictedSourcing,
};
use tractable::eoq::{estimate_beta, seasonality_index, sensitivity_table, synthetic_panel, SelectionRules, ShipmentPanel, ShipmentRecord, SyntheticPanelSpec};
use tractable::io::{self, CountryRow, DistanceRow, IncomeTargetSpec, RunConfig, TradeCheckpoint, TradeFlowRow};
use tractable::laplace_log::{catalog, catalog_form, complete_monotonicity_test, default_profile_grid, passthrough_profile, DemandInput};
use tractable::monopoly::{appropriability_at, interpolate_tractable, pass_through, MonopolyProblem};
use tractable::numeric::SplineEnds;
use tractable::power_forms::{fit_power_sum, ExponentSpec};
use tractable::trade_equilibrium::{gravity_fit, solve_world_observed, synthetic_world, trade_flows, World};
use tractable::{Error, ErrorClass, PowerSum};

use session::{input_ref, Session};

#[derive(Parser)]
#[command(name = "tractable", version, about = "Batch runs over tractable demand, cost and trade models")]
struct Cli {
    /// Master seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory [default: $TRACTABLE_OUT_DIR or .]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a monopoly first-order condition.
    Monopoly(MonopolyArgs),
    /// Spline through closed-form solutions against bisection.
    Interp(InterpArgs),
    /// Shipment panels and the EOQ elasticity estimate.
    #[command(subcommand)]
    Eoq(EoqCommand),
    /// World trade equilibrium runs and diagnostics.
    #[command(subcommand)]
    Trade(TradeCommand),
    /// Gravity regression on tabulated flows.
    Gravity(GravityArgs),
    /// Complete monotonicity and pass-through of demand forms.
    #[command(subcommand)]
    Laplace(LaplaceCommand),
    /// Closed-form firm aggregates with a quadrature cross-check.
    Aggregate(AggregateArgs),
    /// Bargaining, sourcing and supply-chain closed forms.
    #[command(subcommand)]
    Apps(AppsCommand),
    /// Fit a power-sum inverse demand to an income distribution.
    FitDemand(FitDemandArgs),
}

#[derive(Args, Serialize)]
struct MonopolyArgs {
    /// Inverse demand as power-sum JSON.
    #[arg(long)]
    demand: PathBuf,
    /// Marginal cost as power-sum JSON.
    #[arg(long)]
    mc: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    conduct: f64,
    #[arg(long)]
    q_max: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Ends {
    Natural,
    NotAKnot,
}

#[derive(Args, Serialize)]
struct InterpArgs {
    #[arg(long, allow_hyphen_values = true)]
    mc0: f64,
    #[arg(long)]
    mc1: f64,
    #[arg(long)]
    mr0: f64,
    #[arg(long, value_enum, default_value_t = Ends::NotAKnot)]
    ends: Ends,
    /// Comparison points.
    #[arg(long, default_value_t = 200)]
    grid: usize,
}

#[derive(Subcommand)]
enum EoqCommand {
    /// Estimate the shipping-frequency slope from a shipments panel.
    Estimate(EoqEstimateArgs),
    /// Write a synthetic shipments panel.
    Synth(EoqSynthArgs),
}

#[derive(Args, Serialize)]
struct EoqEstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    min_firms: usize,
    #[arg(long, default_value_t = 2)]
    min_years: usize,
    /// Firm-count cutoffs for the sensitivity table.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30")]
    cutoffs: Vec<usize>,
}

#[derive(Args, Serialize)]
struct EoqSynthArgs {
    #[arg(long, default_value_t = 70)]
    industries: usize,
    #[arg(long, default_value_t = 3)]
    years: usize,
}

#[derive(Subcommand)]
enum TradeCommand {
    /// Solve the equilibrium, checkpointing to equilibrium.json.
    Run(TradeRunArgs),
    /// Gravity regression on a solved equilibrium.
    Gravity(TradeGravityArgs),
    /// Write a desk-scale configuration with random geography.
    Synth(TradeSynthArgs),
}

#[derive(Args, Serialize)]
struct TradeRunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_sweeps: usize,
}

#[derive(Args, Serialize)]
struct TradeGravityArgs {
    #[arg(long)]
    state: PathBuf,
}

#[derive(Args, Serialize)]
struct TradeSynthArgs {
    #[arg(long, default_value_t = 8)]
    n_c: usize,
    #[arg(long, default_value_t = 4)]
    n_p: usize,
    #[arg(long, default_value_t = 1)]
    n_v: usize,
    #[arg(long, default_value_t = 0.225)]
    alpha: f64,
}

#[derive(Args, Serialize)]
struct GravityArgs {
    #[arg(long)]
    countries: PathBuf,
    #[arg(long)]
    distances: PathBuf,
    #[arg(long)]
    flows: PathBuf,
}

#[derive(Subcommand)]
enum LaplaceCommand {
    /// Complete-monotonicity verdict and pass-through profile of one demand.
    Classify(ClassifyArgs),
    /// Verdicts for every catalog form.
    Table(TableArgs),
}

#[derive(Args, Serialize)]
struct ClassifyArgs {
    /// Catalog form name.
    #[arg(long, conflicts_with = "demand", required_unless_present = "demand")]
    form: Option<String>,
    /// Inverse demand as power-sum JSON.
    #[arg(long)]
    demand: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    order: usize,
}

#[derive(Args, Serialize)]
struct TableArgs {
    #[arg(long, default_value_t = 10)]
    order: usize,
}

#[derive(Args, Serialize)]
struct AggregateArgs {
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Subcommand)]
enum AppsCommand {
    /// Bargaining-driven labor hoarding.
    Sz(SzArgs),
    /// Sequential sourcing with a restricted ownership choice.
    Ac(AcArgs),
    /// First-stage condition of a Cournot supply chain.
    Chain(ChainArgs),
}

#[derive(Args, Serialize)]
struct SzArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Curvature of the constant pass-through demand.
    #[arg(long, default_value_t = 0.5)]
    t: f64,
    /// Marginal revenue as power-sum JSON.
    #[arg(long)]
    mr: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    outside_wage: f64,
    /// Points on the income-form grid over (0, 100000).
    #[arg(long, default_value_t = 100)]
    grid: usize,
}

#[derive(Args, Serialize)]
struct AcArgs {
    /// Parameters as JSON; defaults to an interior-band example.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ChainArgs {
    /// Final-stage inverse demand as power-sum JSON.
    #[arg(long)]
    price: PathBuf,
    /// Per-stage average costs as power-sum JSON, downstream first.
    #[arg(long, value_delimiter = ',', required = true)]
    costs: Vec<PathBuf>,
    /// Firms per stage; `inf` for a competitive stage.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Family {
    Lognormal,
    #[value(name = "dPln")]
    Dpln,
}

#[derive(Args, Serialize)]
struct FitDemandArgs {
    #[arg(long, value_enum, default_value_t = Family::Dpln)]
    family: Family,
    #[arg(long, default_value_t = 10.9)]
    mu: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.43)]
    beta: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 99)]
    points: usize,
    /// Fixed exponents; without them the scale of `-1,0,1` is scanned.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    exponents: Vec<f64>,
}

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult = std::result::Result<(), CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(CliError::Usage(e.render().to_string())),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    let (class, code, message) = match e {
        CliError::Usage(m) => ("usage", 2, m),
        CliError::Core(e) => match e.class() {
            ErrorClass::Data => ("data", 3, e.to_string()),
            ErrorClass::Numerical => ("numerical", 4, e.to_string()),
        },
    };
    eprintln!("{}", json!({ "error": { "class": class, "exit_code": code, "message": message.trim_end() } }));
    ExitCode::from(code)
}

fn params<T: Serialize>(args: &T, inputs: &[(&str, &Path)]) -> Result<Value, Error> {
    let mut v = serde_json::to_value(args)?;
    for (key, path) in inputs {
        v[*key] = input_ref(path)?;
    }
    Ok(v)
}

fn power_sum(path: &Path) -> Result<PowerSum, Error> {
    io::read_json(path)
}

fn dispatch(cli: Cli) -> CliResult {
    let out_dir = cli.out.unwrap_or_else(io::default_out_dir);
    let start = |command: &[&str], params: Value| -> Result<Session, Error> {
        Session::start(RunConfig {
            command: command.iter().map(|s| s.to_string()).collect(),
            params,
            seed: cli.seed,
            out_dir: out_dir.clone(),
            tolerances: Default::default(),
        })
    };
    match cli.command {
        Command::Monopoly(a) => {
            let s = start(&["monopoly"], params(&a, &[("demand", &a.demand), ("mc", &a.mc)])?)?;
            monopoly(s, &a)
        }
        Command::Interp(a) => interp(start(&["interp"], params(&a, &[])?)?, &a),
        Command::Eoq(EoqCommand::Estimate(a)) => {
            if a.cutoffs.is_empty() {
                return Err(CliError::Usage("--cutoffs needs at least one value".into()));
            }
            eoq_estimate(start(&["eoq", "estimate"], params(&a, &[("input", &a.input)])?)?, &a)
        }
        Command::Eoq(EoqCommand::Synth(a)) => eoq_synth(start(&["eoq", "synth"], params(&a, &[])?)?, &a),
        Command::Trade(TradeCommand::Run(a)) => trade_run(start(&["trade", "run"], params(&a, &[("config", &a.config)])?)?, &a),
        Command::Trade(TradeCommand::Gravity(a)) => {
            trade_gravity(start(&["trade", "gravity"], params(&a, &[("state", &a.state)])?)?, &a)
        }
        Command::Trade(TradeCommand::Synth(a)) => {
            let mut s = start(&["trade", "synth"], params(&a, &[])?)?;
            let config = synthetic_world(a.n_c, a.n_p, a.n_v, a.alpha, s.seed());
            config.validate()?;
            s.emit_json("config.json", &config)?;
            Ok(s.finish()?)
        }
        Command::Gravity(a) => {
            let inputs = [("countries", a.countries.as_path()), ("distances", &a.distances), ("flows", &a.flows)];
            gravity(start(&["gravity"], params(&a, &inputs)?)?, &a)
        }
        Command::Laplace(LaplaceCommand::Classify(a)) => {
            let inputs: Vec<(&str, &Path)> = a.demand.iter().map(|p| ("demand", p.as_path())).collect();
            classify(start(&["laplace", "classify"], params(&a, &inputs)?)?, &a)
        }
        Command::Laplace(LaplaceCommand::Table(a)) => table(start(&["laplace", "table"], params(&a, &[])?)?, &a),
        Command::Aggregate(a) => {
            let mut s = start(&["aggregate"], params(&a, &[("spec", &a.spec)])?)?;
            let spec: AggregationSpec = io::read_json(&a.spec)?;
            let report = aggregate_firm_integrals(&spec)?;
            s.emit_json("aggregate.json", &report)?;
            println!("{}", serde_json::to_string(&report.closed_form).unwrap());
            Ok(s.finish()?)
        }
        Command::Apps(AppsCommand::Sz(a)) => {
            let inputs: Vec<(&str, &Path)> = a.mr.iter().map(|p| ("mr", p.as_path())).collect();
            sz(start(&["apps", "sz"], params(&a, &inputs)?)?, &a)
        }
        Command::Apps(AppsCommand::Ac(a)) => {
            let inputs: Vec<(&str, &Path)> = a.params.iter().map(|p| ("params", p.as_path())).collect();
            ac(start(&["apps", "ac"], params(&a, &inputs)?)?, &a)
        }
        Command::Apps(AppsCommand::Chain(a)) => {
            if a.costs.len() != a.n.len() {
                return Err(CliError::Usage("--costs and --n need the same number of stages".into()));
            }
            let mut v = params(&a, &[("price", &a.price)])?;
            v["costs"] = Value::Array(a.costs.iter().map(|p| input_ref(p)).collect::<Result<_, _>>()?);
            // infinite stage counts are not representable in JSON
            v["n"] = json!(a.n.iter().map(|x| x.to_string()).collect::<Vec<_>>());
            chain(start(&["apps", "chain"], v)?, &a)
        }
        Command::FitDemand(a) => fit_demand(start(&["fit-demand"], params(&a, &[])?)?, &a),
    }
}

fn monopoly(mut s: Session, a: &MonopolyArgs) -> CliResult {
    let mut problem = MonopolyProblem::new(power_sum(&a.demand)?, power_sum(&a.mc)?).with_conduct(a.conduct);
    if let Some(m) = a.q_max {
        problem = problem.with_q_max(m);
    }
    let solution = problem.solve_foc()?;
    let at_optimum = if solution.q_star > 0.0 {
        json!({
            "surplus": problem.surplus_report(solution.q_star)?,
            "appropriability": appropriability_at(&problem.demand, solution.q_star).ok(),
            "pass_through": pass_through(&problem.demand, solution.q_star).ok(),
        })
    } else {
        Value::Null
    };
    let out = json!({ "problem": problem, "foc": problem.foc(), "solution": solution, "at_optimum": at_optimum });
    s.emit_json("monopoly.json", &out)?;
    println!("{}", json!({ "q_star": solution.q_star, "profit": solution.profit }));
    Ok(s.finish()?)
}

fn interp(mut s: Session, a: &InterpArgs) -> CliResult {
    let ends = match a.ends {
        Ends::Natural => SplineEnds::Natural,
        Ends::NotAKnot => SplineEnds::NotAKnot,
    };
    let r = interpolate_tractable(a.mc0, a.mc1, a.mr0, ends, a.grid)?;
    let rows: Vec<_> = r.knots.iter().chain(&r.comparison).cloned().collect();
    s.emit_csv("interp.csv", &rows)?;
    let summary = json!({
        "knots": r.knots.len(),
        "comparison_points": r.comparison.len(),
        "mean_abs_rel_err": r.mean_abs_rel_err,
        "max_abs_rel_err": r.max_abs_rel_err,
    });
    s.emit_json("interp_summary.json", &summary)?;
    println!("{summary}");
    Ok(s.finish()?)
}

fn eoq_estimate(mut s: Session, a: &EoqEstimateArgs) -> CliResult {
    let records: Vec<ShipmentRecord> = io::read_csv(&a.input)?;
    let panel = ShipmentPanel::from_records(&records)?;
    let rules = SelectionRules { min_years_active: a.min_years, min_firms_per_industry: a.min_firms };
    let report = estimate_beta(&panel, &rules)?;
    let out = json!({ "rules": rules, "estimate": report, "seasonality": seasonality_index(&panel) });
    s.emit_json("eoq_report.json", &out)?;
    s.emit_csv("eoq_sensitivity.csv", &sensitivity_table(&panel, &a.cutoffs, a.min_years))?;
    println!("{}", serde_json::to_string(&report.pooled).unwrap());
    Ok(s.finish()?)
}

fn eoq_synth(mut s: Session, a: &EoqSynthArgs) -> CliResult {
    let spec = SyntheticPanelSpec { industries: a.industries, years: a.years, seed: s.seed(), ..Default::default() };
    s.emit_csv("shipments.csv", &synthetic_panel(&spec))?;
    Ok(s.finish()?)
}

fn trade_run(mut s: Session, a: &TradeRunArgs) -> CliResult {
    let config = io::load_world_config(&a.config)?;
    let every = io::checkpoint_every(&a.config)?;
    let world = World::new(&config)?;
    let seed = s.seed();
    let solution = solve_world_observed(&world, seed, a.max_sweeps, |sweep, state| {
        if sweep % every == 0 {
            let ck = TradeCheckpoint { seed, sweep, converged: false, loss: None, config: config.clone(), state: state.clone() };
            s.emit_json("equilibrium.json", &ck)?;
        }
        Ok(())
    })?;
    let ck = TradeCheckpoint {
        seed,
        sweep: solution.sweeps,
        converged: solution.converged,
        loss: Some(solution.loss),
        config: config.clone(),
        state: solution.state.clone(),
    };
    s.emit_json("equilibrium.json", &ck)?;
    let codes = io::country_codes(world.n_c());
    let countries: Vec<CountryRow> = codes
        .iter()
        .zip(&solution.state.countries)
        .zip(&world.labor)
        .map(|((code, c), l)| CountryRow { code: code.clone(), gdp: c.w * l, tradable_share: 1.0 })
        .collect();
    s.emit_csv("countries.csv", &countries)?;
    s.emit_csv("distances.csv", &io::distance_rows(&codes, &world.distances))?;
    s.emit_csv("trade_flows.csv", &io::flow_rows(&codes, &trade_flows(&solution.state, &world)))?;
    println!(
        "{}",
        json!({ "converged": solution.converged, "cycled": solution.cycled, "sweeps": solution.sweeps, "loss": solution.loss })
    );
    Ok(s.finish()?)
}

fn trade_gravity(mut s: Session, a: &TradeGravityArgs) -> CliResult {
    let ck: TradeCheckpoint = io::read_json(&a.state)?;
    let world = World::new(&ck.config)?;
    if ck.state.countries.len() != world.n_c() || ck.state.cells.len() != world.cells.len() {
        return Err(Error::InvalidData("state does not match its configuration".into()).into());
    }
    let gdp: Vec<f64> = ck.state.countries.iter().zip(&world.labor).map(|(c, l)| c.w * l).collect();
    let fit = gravity_fit(&trade_flows(&ck.state, &world), &world.distances, &gdp)?;
    s.emit_json("gravity.json", &fit)?;
    println!("{}", serde_json::to_string(&fit).unwrap());
    Ok(s.finish()?)
}

fn gravity(mut s: Session, a: &GravityArgs) -> CliResult {
    let countries: Vec<CountryRow> = io::read_csv(&a.countries)?;
    let codes: Vec<String> = countries.iter().map(|c| c.code.clone()).collect();
    let gdp = io::tradable_gdp(&countries)?;
    let distances = io::distance_matrix(&codes, &io::read_csv::<DistanceRow>(&a.distances)?)?;
    let flows = io::flow_matrix(&codes, &io::read_csv::<TradeFlowRow>(&a.flows)?)?;
    let fit = gravity_fit(&flows, &distances, &gdp)?;
    s.emit_json("gravity.json", &fit)?;
    println!("{}", serde_json::to_string(&fit).unwrap());
    Ok(s.finish()?)
}

fn classify(mut s: Session, a: &ClassifyArgs) -> CliResult {
    let input = match (&a.form, &a.demand) {
        (Some(name), _) => DemandInput::Named(catalog_form(name)?),
        (None, Some(path)) => DemandInput::PowerSum(power_sum(path)?),
        (None, None) => unreachable!("clap requires one of --form and --demand"),
    };
    let cm = complete_monotonicity_test(&input, a.order)?;
    let profile = passthrough_profile(&input, &default_profile_grid(&input))?;
    let out = json!({ "form": a.form, "complete_monotonicity": cm, "pass_through": profile });
    s.emit_json("classification.json", &out)?;
    println!("{}", json!({ "verdict": cm.verdict, "pass_through": profile.verdict }));
    Ok(s.finish()?)
}

#[derive(Serialize)]
struct TableRow {
    form: &'static str,
    cm: tractable::laplace_log::CmVerdict,
    first_violation_order: Option<usize>,
    pass_through: tractable::laplace_log::Monotonicity,
}

fn table(mut s: Session, a: &TableArgs) -> CliResult {
    let mut rows = Vec::new();
    for (name, form) in catalog() {
        let input = DemandInput::Named(form);
        let cm = complete_monotonicity_test(&input, a.order)?;
        let profile = passthrough_profile(&input, &default_profile_grid(&input))?;
        rows.push(TableRow { form: name, cm: cm.verdict, first_violation_order: cm.first_violation_order, pass_through: profile.verdict });
    }
    s.emit_csv("laplace_table.csv", &rows)?;
    Ok(s.finish()?)
}

#[derive(Serialize)]
struct SzRow {
    outside_wage: f64,
    hoarding: f64,
    hoarding_printed_constants: f64,
}

fn sz(mut s: Session, a: &SzArgs) -> CliResult {
    if a.grid < 2 {
        return Err(CliError::Usage("--grid needs at least two points".into()));
    }
    let bp = sz_hoarding_bp(a.lambda, a.t)?;
    let general = match &a.mr {
        Some(path) => Some(sz_hoarding(&power_sum(path)?, &BargainingParams { lambda: a.lambda, outside_wage: a.outside_wage })?),
        None => None,
    };
    let mut rows = Vec::with_capacity(a.grid);
    for i in 1..=a.grid {
        let w0 = 100_000.0 * i as f64 / (a.grid + 1) as f64;
        rows.push(SzRow {
            outside_wage: w0,
            hoarding: sz_hoarding_income_form_exact(w0)?,
            hoarding_printed_constants: sz_hoarding_income_form(w0)?,
        });
    }
    s.emit_csv("sz_income.csv", &rows)?;
    let out = json!({ "lambda": a.lambda, "t": a.t, "bp_hoarding": bp, "hoarding": general });
    s.emit_json("sz.json", &out)?;
    println!("{out}");
    Ok(s.finish()?)
}

fn ac(mut s: Session, a: &AcArgs) -> CliResult {
    let p: RestrictedSourcing = match &a.params {
        Some(path) => io::read_json(path)?,
        None => RestrictedSourcing { p0: 0.2, p_t: 2.0, p_2t: -4.0, mc_t: 0.5, t: 0.5, beta_o: 0.3, beta_i: 0.8 },
    };
    let solution = ac_solve_restricted(&p)?;
    let out = json!({ "params": p, "solution": solution });
    s.emit_json("ac.json", &out)?;
    println!("{}", serde_json::to_string(&solution).unwrap());
    Ok(s.finish()?)
}

fn chain(mut s: Session, a: &ChainArgs) -> CliResult {
    let price = power_sum(&a.price)?;
    let costs = a.costs.iter().map(|p| power_sum(p)).collect::<Result<Vec<_>, _>>()?;
    let condition = salinger_chain_power(&price, &costs, &a.n)?;
    s.emit_json("chain.json", &json!({ "first_stage_condition": condition }))?;
    println!("{}", serde_json::to_string(&condition).unwrap());
    Ok(s.finish()?)
}

#[derive(Serialize)]
struct QuantileRow {
    share: f64,
    income: f64,
}

fn fit_demand(mut s: Session, a: &FitDemandArgs) -> CliResult {
    let spec = match a.family {
        Family::Lognormal => IncomeTargetSpec { points: a.points, ..IncomeTargetSpec::lognormal(a.mu, a.sigma, a.samples, s.seed()) },
        Family::Dpln => IncomeTargetSpec { points: a.points, ..IncomeTargetSpec::dpln(a.alpha, a.beta, a.mu, a.sigma, a.samples, s.seed()) },
    };
    let pairs = io::generate_income_quantiles(&spec)?;
    let exponents = if a.exponents.is_empty() {
        ExponentSpec::Grid { multipliers: vec![-1.0, 0.0, 1.0], scales: (1..=40).map(|k| 0.025 * k as f64).collect() }
    } else {
        ExponentSpec::Fixed(a.exponents.clone())
    };
    let fit = fit_power_sum(&pairs, &exponents)?;
    let rows: Vec<QuantileRow> = pairs.iter().map(|&(share, income)| QuantileRow { share, income }).collect();
    s.emit_csv("income_quantiles.csv", &rows)?;
    s.emit_json("demand_fit.json", &json!({ "target": spec, "fit": fit }))?;
    println!("{}", serde_json::to_string(&fit.sum).unwrap());
    Ok(s.finish()?)
}
