//! Command line front end.
//!
//! Settings come from an optional `key = value` file (`--config`) and from
//! flags named like the keys; flags win. Every command writes one CSV file
//! whose `#` header block echoes the resolved settings.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::estimators::{CouplingFamily, EstimatorKind};
use crate::experiments::{
    calibrate_for_run, complexity_slope, oracle_check, run_calibrated, strong_order, variance_decay, CalibrationReport,
    Context, RunReport, RunSettings,
};
use crate::models::{ClarkCameron, Heston, ModelSpec, NegativeVariancePolicy, Payoff};
use crate::paths::NoiseSource;
use crate::sampling::{Problem, Workers};
use crate::schemes::Coupling;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SAMPLING: i32 = 3;
pub const EXIT_GATE: i32 = 4;

/// Every key accepted in a config file, each also available as `--key`.
pub const KEYS: &[&str] = &[
    "model",
    "payoff",
    "coupling",
    "estimator",
    "eps",
    "seed",
    "pilot-m",
    "levels",
    "out",
    "workers",
    "negative-variance",
    "beta-theory",
    "zero-noise",
    "m",
    "runs",
    "horizon",
    "mu",
    "r",
    "kappa",
    "theta",
    "sigma",
    "v0",
    "alpha",
    "c1",
    "beta",
    "c2",
];

#[derive(Debug, Parser)]
#[command(
    name = "nvmlmc",
    version,
    about = "Multilevel Monte Carlo experiments with Ninomiya-Victoir and Giles-Szpruch couplings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Strong error of NV between levels and of averaged NV against GS.
    StrongOrder,
    /// Second moment of the level samples per level.
    VarianceDecay,
    /// Z_NV second moment for f = u² against the closed form.
    OracleCheck,
    /// Pilot run and fitted (α, c₁, β, c₂, l̄).
    Calibrate,
    /// Calibrate, plan and run the estimator for each epsilon.
    Run,
    /// Plan cost against epsilon.
    Sweep,
}

impl Command {
    pub fn label(&self) -> &'static str {
        match self {
            Command::StrongOrder => "strong-order",
            Command::VarianceDecay => "variance-decay",
            Command::OracleCheck => "oracle-check",
            Command::Calibrate => "calibrate",
            Command::Run => "run",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// clark-cameron | heston
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// cos-u | u-squared | u-plus | heston-call
    #[arg(long, global = true)]
    pub payoff: Option<String>,
    /// gs | nv | nv-single | gs-nv
    #[arg(long, global = true)]
    pub coupling: Option<String>,
    /// mlmc | ml2r
    #[arg(long, global = true)]
    pub estimator: Option<String>,
    /// Target RMSE, repeatable.
    #[arg(long, global = true)]
    pub eps: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Pilot samples per level.
    #[arg(long = "pilot-m", global = true)]
    pub pilot_m: Option<String>,
    /// Level range `a..b`, both ends included.
    #[arg(long, global = true)]
    pub levels: Option<String>,
    /// Output directory; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    pub workers: Option<String>,
    /// error | reflect
    #[arg(long = "negative-variance", global = true)]
    pub negative_variance: Option<String>,
    /// Variance order used past an inflection.
    #[arg(long = "beta-theory", global = true)]
    pub beta_theory: Option<String>,
    /// Replace every random draw by zero.
    #[arg(long = "zero-noise", global = true)]
    pub zero_noise: bool,
    /// Samples per level for strong-order, variance-decay and oracle-check.
    #[arg(long, global = true)]
    pub m: Option<String>,
    /// Repetitions per epsilon for run.
    #[arg(long, global = true)]
    pub runs: Option<String>,
    #[arg(long, global = true)]
    pub horizon: Option<String>,
    /// Clark-Cameron drift.
    #[arg(long, global = true)]
    pub mu: Option<String>,
    /// Heston rate, also the discount rate of heston-call.
    #[arg(long, global = true)]
    pub r: Option<String>,
    #[arg(long, global = true)]
    pub kappa: Option<String>,
    #[arg(long, global = true)]
    pub theta: Option<String>,
    #[arg(long, global = true)]
    pub sigma: Option<String>,
    #[arg(long, global = true)]
    pub v0: Option<String>,
    /// Fixed weak order, overriding the fit.
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    #[arg(long, global = true)]
    pub c1: Option<String>,
    /// Fixed variance order, overriding the fit.
    #[arg(long, global = true)]
    pub beta: Option<String>,
    #[arg(long, global = true)]
    pub c2: Option<String>,
}

impl Flags {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        put("model", &self.model);
        put("payoff", &self.payoff);
        put("coupling", &self.coupling);
        put("estimator", &self.estimator);
        put("seed", &self.seed);
        put("pilot-m", &self.pilot_m);
        put("levels", &self.levels);
        put("out", &self.out);
        put("workers", &self.workers);
        put("negative-variance", &self.negative_variance);
        put("beta-theory", &self.beta_theory);
        put("m", &self.m);
        put("runs", &self.runs);
        put("horizon", &self.horizon);
        put("mu", &self.mu);
        put("r", &self.r);
        put("kappa", &self.kappa);
        put("theta", &self.theta);
        put("sigma", &self.sigma);
        put("v0", &self.v0);
        put("alpha", &self.alpha);
        put("c1", &self.c1);
        put("beta", &self.beta);
        put("c2", &self.c2);
        if !self.eps.is_empty() {
            out.push(("eps", self.eps.join(",")));
        }
        if self.zero_noise {
            out.push(("zero-noise", "true".into()));
        }
        out
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Sampling(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Sampling(e) => write!(f, "sampling failed: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Sampling(_) => EXIT_SAMPLING,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Sampling(e)
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(config_err(format!("line {}: unknown key '{k}'", n + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Fixed rates replacing the fitted ones in `run` and `sweep`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FixedRates {
    pub alpha: Option<f64>,
    pub c1: Option<f64>,
    pub beta: Option<f64>,
    pub c2: Option<f64>,
}

/// Validated settings of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub payoff: Payoff,
    pub coupling: Option<CouplingFamily>,
    pub estimator: EstimatorKind,
    pub epsilons: Option<Vec<f64>>,
    pub seed: u64,
    pub zero_noise: bool,
    pub pilot_m: u64,
    pub m: Option<u64>,
    pub levels: Option<(u32, u32)>,
    pub horizon: f64,
    pub runs: u64,
    pub beta_theory: Option<f64>,
    pub fixed: FixedRates,
    pub out: Option<PathBuf>,
    pub workers: usize,
    /// Resolved `key = value` pairs, echoed into the CSV header.
    pub echo: BTreeMap<String, String>,
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| config_err(format!("{key}: cannot parse '{v}'"))),
    }
}

fn parse_levels(v: &str) -> Result<(u32, u32), CliError> {
    let bad = || config_err(format!("levels: expected a..b, got '{v}'"));
    let (a, b) = v.split_once("..").ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if a > b || b > 30 {
        return Err(config_err(format!("levels: need a ≤ b ≤ 30, got {a}..{b}")));
    }
    Ok((a, b))
}

impl ExperimentConfig {
    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self, CliError> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(config_err(format!("unknown key '{k}'")));
        }
        let horizon: f64 = parse_num(&map, "horizon")?.unwrap_or(1.0);
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(config_err(format!("horizon must be positive, got {horizon}")));
        }
        let r: f64 = parse_num(&map, "r")?.unwrap_or(0.05);
        let policy = match map.get("negative-variance").map(String::as_str) {
            None | Some("error") => NegativeVariancePolicy::Error,
            Some("reflect") => NegativeVariancePolicy::Reflect,
            Some(o) => return Err(config_err(format!("negative-variance: unknown policy '{o}'"))),
        };
        let model = match map.get("model").map(String::as_str).unwrap_or("clark-cameron") {
            "clark-cameron" => {
                let mu: f64 = parse_num(&map, "mu")?.unwrap_or(1.0);
                if !mu.is_finite() {
                    return Err(config_err("mu must be finite"));
                }
                ModelSpec::ClarkCameron(ClarkCameron::new(mu, 0.0, 0.0))
            }
            "heston" => {
                let kappa = parse_num(&map, "kappa")?.unwrap_or(0.5);
                let theta = parse_num(&map, "theta")?.unwrap_or(0.9);
                let sigma = parse_num(&map, "sigma")?.unwrap_or(0.05);
                let v0 = parse_num(&map, "v0")?.unwrap_or(1.0);
                let h = Heston::new(r, kappa, theta, sigma, 0.0, v0).map_err(|e| config_err(e.to_string()))?;
                ModelSpec::Heston(h.with_policy(policy))
            }
            o => return Err(config_err(format!("model: unknown model '{o}'"))),
        };
        let payoff = match map.get("payoff").map(String::as_str) {
            None => Payoff::CosU,
            Some("heston-call") => Payoff::HestonCall { rate: r, maturity: horizon },
            Some(p) => p.parse().map_err(|e: Error| config_err(e.to_string()))?,
        };
        let coupling = match map.get("coupling") {
            None => None,
            Some(c) => Some(c.parse::<CouplingFamily>().map_err(|e| config_err(e.to_string()))?),
        };
        let estimator = match map.get("estimator") {
            None => EstimatorKind::Mlmc,
            Some(e) => e.parse().map_err(|e: Error| config_err(e.to_string()))?,
        };
        let epsilons = match map.get("eps") {
            None => None,
            Some(list) => {
                let eps = list
                    .split(',')
                    .map(|e| e.trim().parse::<f64>().map_err(|_| config_err(format!("eps: cannot parse '{e}'"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                    return Err(config_err("eps values must be positive"));
                }
                Some(eps)
            }
        };
        let zero_noise = match map.get("zero-noise").map(String::as_str) {
            None | Some("false") => false,
            Some("true") => true,
            Some(o) => return Err(config_err(format!("zero-noise: expected true or false, got '{o}'"))),
        };
        let pilot_m: u64 = parse_num(&map, "pilot-m")?.unwrap_or(10_000);
        if pilot_m < 2 {
            return Err(config_err("pilot-m must be at least 2"));
        }
        let m: Option<u64> = parse_num(&map, "m")?;
        if m.is_some_and(|m| m < 2) {
            return Err(config_err("m must be at least 2"));
        }
        let runs: u64 = parse_num(&map, "runs")?.unwrap_or(1);
        if runs == 0 {
            return Err(config_err("runs must be at least 1"));
        }
        let beta_theory: Option<f64> = parse_num(&map, "beta-theory")?;
        let fixed = FixedRates {
            alpha: parse_num(&map, "alpha")?,
            c1: parse_num(&map, "c1")?,
            beta: parse_num(&map, "beta")?,
            c2: parse_num(&map, "c2")?,
        };
        if [fixed.alpha, fixed.beta, beta_theory].iter().flatten().any(|o| !(*o > 0.0)) {
            return Err(config_err("orders must be positive"));
        }
        if fixed.c2.is_some_and(|c| !(c > 0.0)) || fixed.c1 == Some(0.0) {
            return Err(config_err("c1 must be nonzero and c2 positive"));
        }
        let levels = map.get("levels").map(|v| parse_levels(v)).transpose()?;
        Ok(ExperimentConfig {
            model,
            payoff,
            coupling,
            estimator,
            epsilons,
            seed: parse_num(&map, "seed")?.unwrap_or(1),
            zero_noise,
            pilot_m,
            m,
            levels,
            horizon,
            runs,
            beta_theory,
            fixed,
            out: map.get("out").map(PathBuf::from),
            workers: parse_num(&map, "workers")?.unwrap_or(0),
            echo: map,
        })
    }

    /// Reads `--config` if given and applies the flags on top.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let mut map = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in flags.entries() {
            map.insert(k.to_string(), v);
        }
        Self::from_map(map)
    }

    fn noise(&self) -> NoiseSource {
        if self.zero_noise {
            NoiseSource::degenerate()
        } else {
            NoiseSource::new(self.seed)
        }
    }

    fn level_range(&self, default: (u32, u32)) -> Vec<u32> {
        let (a, b) = self.levels.unwrap_or(default);
        (a..=b).collect()
    }
}

/// Result of a command: CSV body, extra header lines and the gate verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub body: String,
    pub notes: Vec<String>,
    /// `Some(false)` turns into exit code 4.
    pub gate: Option<bool>,
}

impl Report {
    fn new(body: String) -> Self {
        Report { body, notes: Vec::new(), gate: None }
    }
}

fn provenance() -> String {
    let rev = option_env!("NVMLMC_GIT_DESCRIBE").unwrap_or("unknown");
    format!("nvmlmc {} ({rev})", env!("CARGO_PKG_VERSION"))
}

/// Header block followed by the body.
pub fn render(command: Command, config: &ExperimentConfig, report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", provenance());
    let _ = writeln!(s, "# command = {}", command.label());
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let _ = writeln!(s, "# generated-unix = {secs}");
    for (k, v) in &config.echo {
        let _ = writeln!(s, "# {k} = {v}");
    }
    for n in &report.notes {
        let _ = writeln!(s, "# {n}");
    }
    s.push_str(&report.body);
    s
}

/// Runs `command` and returns its report.
pub fn execute(command: Command, config: &ExperimentConfig) -> Result<Report, CliError> {
    let workers = Workers::new(config.workers).map_err(|e| config_err(e.to_string()))?;
    let ctx = Context { workers: &workers, noise: config.noise() };
    match command {
        Command::StrongOrder => cmd_strong_order(&ctx, config),
        Command::VarianceDecay => cmd_variance_decay(&ctx, config),
        Command::OracleCheck => cmd_oracle_check(&ctx, config),
        Command::Calibrate => cmd_calibrate(&ctx, config),
        Command::Run => cmd_run(&ctx, config, false),
        Command::Sweep => cmd_run(&ctx, config, true),
    }
}

fn cmd_strong_order(ctx: &Context<'_>, c: &ExperimentConfig) -> Result<Report, CliError> {
    let levels = c.level_range((2, 7));
    if levels[0] == 0 {
        return Err(config_err("strong-order needs levels ≥ 1"));
    }
    let r = strong_order(ctx, c.model.as_model(), c.horizon, &levels, c.m.unwrap_or(100_000))?;
    let mut body = String::from("l,log2_strong_error_nv,log2_coupling_error\n");
    for row in &r.rows {
        let _ = writeln!(body, "{},{},{}", row.level, row.nv.log2(), row.coupling.log2());
    }
    if r.nv_slope.is_nan() || r.coupling_slope.is_nan() {
        body.push_str("# warning: errors are zero or degenerate, slopes undefined\n");
    }
    let _ = writeln!(body, "slope,{},{}", r.nv_slope, r.coupling_slope);
    Ok(Report::new(body))
}

fn decay_couplings(c: &ExperimentConfig) -> Vec<Coupling> {
    match c.coupling {
        None => vec![Coupling::Gs, Coupling::Nv, Coupling::GsNv],
        Some(CouplingFamily::Gs) => vec![Coupling::Gs],
        Some(CouplingFamily::NvSingle | CouplingFamily::NvAveraged) => vec![Coupling::Nv],
        Some(CouplingFamily::GsNv) => vec![Coupling::GsNv],
    }
}

fn cmd_variance_decay(ctx: &Context<'_>, c: &ExperimentConfig) -> Result<Report, CliError> {
    let levels = c.level_range((2, 6));
    if levels[0] == 0 {
        return Err(config_err("variance-decay needs levels ≥ 1"));
    }
    let problem = Problem::new(c.model.as_model(), c.payoff, c.horizon);
    let mut body = String::from("coupling,l,log2_second_moment,second_moment,sem\n");
    let mut slopes = Vec::new();
    for coupling in decay_couplings(c) {
        let r = variance_decay(ctx, problem, coupling, &levels, c.m.unwrap_or(100_000))?;
        for row in &r.rows {
            let _ = writeln!(
                body,
                "{},{},{},{},{}",
                coupling,
                row.level,
                row.second_moment.log2(),
                row.second_moment,
                row.sem
            );
        }
        slopes.push((coupling, r.slope));
    }
    for (coupling, slope) in slopes {
        let _ = writeln!(body, "{coupling},slope,{slope},,");
    }
    Ok(Report::new(body))
}

fn cmd_oracle_check(ctx: &Context<'_>, c: &ExperimentConfig) -> Result<Report, CliError> {
    let mu = match &c.model {
        ModelSpec::ClarkCameron(m) => m.mu,
        ModelSpec::Heston(_) => return Err(config_err("oracle-check needs model = clark-cameron")),
    };
    let levels = c.level_range((1, 6));
    if levels[0] == 0 {
        return Err(config_err("oracle-check needs levels ≥ 1"));
    }
    let r = oracle_check(ctx, mu, c.horizon, &levels, c.m.unwrap_or(1_000_000))?;
    let mut body = String::from("l,mc_estimate,sem,oracle,z_score\n");
    for row in &r.rows {
        let _ = writeln!(body, "{},{},{},{},{}", row.level, row.estimate, row.sem, row.oracle, row.z_score);
    }
    let _ = writeln!(body, "result,{},,,", if r.pass { "PASS" } else { "FAIL" });
    Ok(Report { gate: Some(r.pass), ..Report::new(body) })
}

fn run_settings(c: &ExperimentConfig, default_family: CouplingFamily, default_eps: &[f64]) -> RunSettings {
    let family = c.coupling.unwrap_or(default_family);
    let eps = c.epsilons.clone().unwrap_or_else(|| default_eps.to_vec());
    let mut s = RunSettings::new(c.estimator, family, eps);
    s.pilot_levels = c.level_range((1, 4));
    s.pilot_m = c.pilot_m;
    s.varf_m = c.pilot_m;
    s.beta_theory = c.beta_theory;
    s.runs = c.runs;
    s
}

fn stats_rows(body: &mut String, cal: &CalibrationReport) {
    let label = match cal.coupling.coupling(1) {
        Coupling::Gs => "gs",
        _ => "nv",
    };
    for s in std::iter::once(&cal.level0).chain(&cal.stats) {
        let _ = writeln!(body, "{label},{},{},{},{},{}", s.level, s.mean, s.sem, s.variance, s.aborted);
    }
}

fn cmd_calibrate(ctx: &Context<'_>, c: &ExperimentConfig) -> Result<Report, CliError> {
    let s = run_settings(c, CouplingFamily::NvAveraged, &[]);
    if s.pilot_levels[0] == 0 || s.pilot_levels.len() < 2 {
        return Err(config_err("calibrate needs at least two levels, all ≥ 1"));
    }
    let problem = Problem::new(c.model.as_model(), c.payoff, c.horizon);
    let cal = calibrate_for_run(ctx, problem, &RunSettings { kind: EstimatorKind::Mlmc, ..s })?;
    let mut body = String::from("scheme,l,mean,sem,variance,aborted\n");
    stats_rows(&mut body, &cal.weak);
    if cal.weak != cal.variance {
        stats_rows(&mut body, &cal.variance);
    }
    let (w, v) = (&cal.weak.weak, &cal.variance.variance);
    let inflection = cal.variance.inflection.map(|l| l.to_string()).unwrap_or_else(|| "none".into());
    let _ = writeln!(body, "alpha,{},raw,{},,", w.order, w.raw_slope);
    let _ = writeln!(body, "c1,{},,,,", w.constant);
    let _ = writeln!(body, "beta,{},raw,{},,", v.order, v.raw_slope);
    let _ = writeln!(body, "c2,{},,,,", v.constant);
    let _ = writeln!(body, "inflection,{inflection},,,,");
    Ok(Report::new(body))
}

fn apply_fixed(fixed: &FixedRates, cal: &mut crate::experiments::RunCalibration) {
    if let Some(a) = fixed.alpha {
        cal.weak.weak.order = a;
    }
    if let Some(c1) = fixed.c1 {
        cal.weak.weak.constant = c1;
    }
    if let Some(b) = fixed.beta {
        cal.variance.variance.order = b;
    }
    if let Some(c2) = fixed.c2 {
        cal.variance.variance.constant = c2;
    }
}

fn cmd_run(ctx: &Context<'_>, c: &ExperimentConfig, sweep: bool) -> Result<Report, CliError> {
    let default_eps: Vec<f64> = if sweep { (4..=8).map(|k| 2f64.powi(-k)).collect() } else { vec![2f64.powi(-6)] };
    let mut s = run_settings(c, CouplingFamily::GsNv, &default_eps);
    if sweep {
        s.runs = 1;
    }
    if s.pilot_levels[0] == 0 || s.pilot_levels.len() < 2 {
        return Err(config_err("pilot levels must be ≥ 1 and at least two"));
    }
    if c.estimator == EstimatorKind::Ml2r && !matches!(s.family, CouplingFamily::Gs | CouplingFamily::NvSingle) {
        return Err(config_err("ml2r supports coupling gs or nv-single"));
    }
    let problem = Problem::new(c.model.as_model(), c.payoff, c.horizon);
    let mut cal = calibrate_for_run(ctx, problem, &s)?;
    apply_fixed(&c.fixed, &mut cal);
    let report = run_calibrated(ctx, problem, &s, cal)?;
    Ok(if sweep { sweep_report(&report) } else { run_report(&report) })
}

fn wall_notes(report: &RunReport) -> Vec<String> {
    report
        .rows
        .iter()
        .map(|r| format!("seconds eps={} repetition={} = {:.6}", r.epsilon, r.repetition, r.result.seconds))
        .collect()
}

fn run_report(report: &RunReport) -> Report {
    let mut body = String::from("epsilon,repetition,estimator,coupling,L,total_m,cost_units,aborted,estimate\n");
    for r in &report.rows {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{},{}",
            r.epsilon,
            r.repetition,
            r.plan.kind,
            r.plan.family,
            r.plan.last_level,
            r.plan.total_samples(),
            r.plan.cost_units(),
            r.result.aborted,
            r.result.estimate
        );
    }
    Report { notes: wall_notes(report), ..Report::new(body) }
}

fn sweep_report(report: &RunReport) -> Report {
    let mut body = String::from("estimator,coupling,log2_eps,log2_cost_units,L\n");
    for r in &report.rows {
        let _ = writeln!(
            body,
            "{},{},{},{},{}",
            r.plan.kind,
            r.plan.family,
            r.epsilon.log2(),
            r.plan.cost_units().log2(),
            r.plan.last_level
        );
    }
    let _ = writeln!(body, "slope,,,{},", complexity_slope(report));
    Report { notes: wall_notes(report), ..Report::new(body) }
}

fn write_output(command: Command, config: &ExperimentConfig, report: &Report) -> Result<(), CliError> {
    let text = render(command, config, report);
    match &config.out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| config_err(format!("cannot create {}: {e}", dir.display())))?;
            let path = dir.join(format!("{}.csv", command.label()));
            std::fs::write(&path, text).map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let outcome = ExperimentConfig::resolve(&cli.flags).and_then(|config| {
        let report = execute(cli.command, &config)?;
        write_output(cli.command, &config, &report)?;
        Ok(report.gate)
    });
    match outcome {
        Ok(Some(false)) => {
            eprintln!("{}: gate FAILED", cli.command.label());
            EXIT_GATE
        }
        Ok(_) => EXIT_PASS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
