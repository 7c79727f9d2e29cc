//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 build error, 3 failed
//! verification.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::Error;
use crate::fmt::sig17;
use crate::lattice::{build_lattice_with, BuildOptions, ExportFormat, Lattice};
use crate::price::{
    price_american, price_callable_bond, price_european, BondSchedule, DiscountSpec, PayoffSpec,
};
use crate::process::{make_moment_model, terminal_moments, MomentModel, OuSpec};
use crate::simulate::{
    empirical_moments, forest_csv, paths_csv, sample_forests, sample_paths, Forest, PathSample,
};
use crate::verify::{check_lattice, sweep, Check, MOMENT_TOL};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_BUILD: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn build(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_BUILD,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------------------
// config

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Scalar(f64),
    PerLevel(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: Sigma,
    pub x0: f64,
    pub dt: f64,
    pub levels: usize,
    #[serde(default)]
    pub log_space: bool,
}

impl ProcessConfig {
    pub fn to_spec(&self) -> OuSpec {
        OuSpec {
            kappa: self.kappa,
            theta: self.theta,
            sigma: match &self.sigma {
                Sigma::Scalar(s) => vec![*s],
                Sigma::PerLevel(v) => v.clone(),
            },
            x0: self.x0,
            dt: self.dt,
            levels: self.levels,
            log_space: self.log_space,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub specs: Vec<ProcessConfig>,
    pub corr: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub knots: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffConfig {
    Zero,
    Constant { value: f64 },
    Call { strike: f64 },
    Put { strike: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscountConfig {
    None,
    Flat { rate: f64 },
    ShortRate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouponConfig {
    pub level: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallConfig {
    pub level: usize,
    pub price: f64,
}

fn default_principal() -> f64 {
    100.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub coupons: Vec<CouponConfig>,
    #[serde(default)]
    pub calls: Vec<CallConfig>,
    #[serde(default = "default_principal")]
    pub principal: f64,
    /// Early-exercise levels for `price american`; every level when absent.
    #[serde(default)]
    pub exercise: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub process: Option<ProcessConfig>,
    pub forest: Option<ForestConfig>,
    pub basis: Option<BasisConfig>,
    pub payoff: Option<PayoffConfig>,
    pub discount: Option<DiscountConfig>,
    pub schedules: Option<ScheduleConfig>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn process(&self) -> CliResult<&ProcessConfig> {
        self.process
            .as_ref()
            .ok_or_else(|| CliError::config("invalid config: missing `process` section"))
    }

    pub fn model(&self) -> CliResult<(OuSpec, MomentModel)> {
        let spec = self.process()?.to_spec();
        let model = make_moment_model(&spec).map_err(|e| config_error("process", e))?;
        Ok((spec, model))
    }

    pub fn discount(&self, dt: f64) -> DiscountSpec {
        match self.discount {
            None | Some(DiscountConfig::None) => DiscountSpec::none(),
            Some(DiscountConfig::Flat { rate }) => DiscountSpec::flat(rate, dt),
            Some(DiscountConfig::ShortRate) => DiscountSpec::short_rate(dt),
        }
    }
}

fn config_error(section: &str, e: Error) -> CliError {
    match e {
        Error::InvalidSpec { field, reason } => {
            CliError::config(format!("invalid config: {section}.{field} {reason}"))
        }
        other => CliError::config(format!("invalid config: {section}: {other}")),
    }
}

// ---------------------------------------------------------------------------
// arguments

#[derive(Debug, Parser)]
#[command(
    name = "ou-lattice",
    version,
    about = "Recombining OU trees: build, simulate, price, verify"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output file (overrides the config's `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Dot,
    Csv,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ExportFormat::Json,
            FormatArg::Dot => ExportFormat::Dot,
            FormatArg::Csv => ExportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PriceKind {
    Bullet,
    European,
    American,
    Callable,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a lattice and write it as JSON, DOT or CSV.
    Build {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        /// Fail (exit 2) if node values are not increasing in the offset.
        #[arg(long)]
        strict: bool,
    },
    /// Sample paths through the lattice (or the correlated forest).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        /// Print terminal sample moments against the exact ones.
        #[arg(long)]
        report: bool,
    },
    /// Price by backward induction.
    Price {
        #[arg(value_enum)]
        kind: PriceKind,
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant checks on the configured lattice.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Check this lattice JSON instead of building one.
        #[arg(long)]
        lattice: Option<PathBuf>,
        /// Also run a randomized sweep over this many specs.
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Paths for the sampling check (0 disables it).
        #[arg(long)]
        paths: Option<usize>,
    },
}

// ---------------------------------------------------------------------------
// commands

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                return emit(stdout, &e.to_string());
            }
            _ => return Err(CliError::config(e.to_string())),
        },
    };
    execute(cli.command, stdout)
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> CliResult<()> {
    let mut out = String::new();
    match command {
        Command::Build {
            common,
            format,
            strict,
        } => {
            let cfg = RunConfig::load(&common.config)?;
            let format = ExportFormat::from(format);
            let path = output_path(&common, &cfg, default_lattice_name(format));
            cmd_build(&cfg, format, strict, &path, &mut out)?;
        }
        Command::Simulate {
            common,
            seed,
            paths,
            report,
        } => {
            let cfg = RunConfig::load(&common.config)?;
            let path = output_path(&common, &cfg, "paths.csv");
            cmd_simulate(&cfg, seed, paths, report, &path, &mut out)?;
        }
        Command::Price { kind, common } => {
            let cfg = RunConfig::load(&common.config)?;
            let doc = cmd_price(&cfg, kind)?;
            match common.out.or_else(|| cfg.out.clone()) {
                Some(path) => write_atomic(&path, &doc)?,
                None => out.push_str(&doc),
            }
        }
        Command::Verify {
            common,
            lattice,
            sweep,
            seed,
            paths,
        } => {
            let cfg = RunConfig::load(&common.config)?;
            let result = cmd_verify(&cfg, lattice.as_deref(), sweep, seed, paths, &mut out);
            if let Some(path) = common.out.or_else(|| cfg.out.clone()) {
                write_atomic(&path, &out)?;
            }
            emit(stdout, &out)?;
            return result;
        }
    }
    emit(stdout, &out)
}

fn emit(stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::config(format!("cannot write output: {e}")))
}

fn default_lattice_name(f: ExportFormat) -> &'static str {
    match f {
        ExportFormat::Json => "lattice.json",
        ExportFormat::Dot => "lattice.dot",
        ExportFormat::Csv => "lattice.csv",
    }
}

fn output_path(common: &Common, cfg: &RunConfig, default: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: &dyn std::fmt::Display| {
        CliError::config(format!("cannot write {}: {e}", path.display()))
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

pub fn build_from_config(
    cfg: &RunConfig,
    strict: bool,
) -> CliResult<(OuSpec, MomentModel, Lattice)> {
    let (spec, model) = cfg.model()?;
    let lat = build_lattice_with(
        &model,
        BuildOptions {
            require_ordered: strict,
        },
    )
    .map_err(|e| CliError::build(format!("build failed: {e}")))?;
    Ok((spec, model, lat))
}

pub fn cmd_build(
    cfg: &RunConfig,
    format: ExportFormat,
    strict: bool,
    path: &Path,
    out: &mut String,
) -> CliResult<()> {
    let (_, _, lat) = build_from_config(cfg, strict)?;
    write_atomic(path, &lat.export(format))?;
    let _ = writeln!(out, "nodes: {}", lat.node_count());
    let _ = writeln!(
        out,
        "max |probability sum - 1|: {}",
        sig17(max_sum_deviation(&lat))
    );
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(())
}

fn max_sum_deviation(lat: &Lattice) -> f64 {
    (0..lat.levels())
        .filter_map(|j| lat.center_branches(j))
        .map(|c| (c.p_u + c.p_n + c.p_d - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    seed: Option<u64>,
    paths: Option<usize>,
    report: bool,
    path: &Path,
    out: &mut String,
) -> CliResult<()> {
    let seed = seed.or(cfg.seed).ok_or_else(|| {
        CliError::config("invalid config: a seed is required (config `seed` or --seed)")
    })?;
    let count = paths.or(cfg.paths).unwrap_or(1);
    if count == 0 {
        return Err(CliError::config("invalid config: paths must be >= 1"));
    }

    let (csv, per_tree): (String, Vec<(OuSpec, Vec<PathSample>)>) = match &cfg.forest {
        Some(fc) => {
            let mut specs = Vec::new();
            let mut lattices = Vec::new();
            for (i, pc) in fc.specs.iter().enumerate() {
                let spec = pc.to_spec();
                let model = make_moment_model(&spec)
                    .map_err(|e| config_error(&format!("forest.specs[{i}]"), e))?;
                let lat = build_lattice_with(&model, BuildOptions::default())
                    .map_err(|e| CliError::build(format!("build failed: {e}")))?;
                specs.push(spec);
                lattices.push(lat);
            }
            let forest = Forest::new(lattices, fc.corr.clone())
                .map_err(|e| CliError::config(format!("invalid config: forest: {e}")))?;
            let draws = sample_forests(&forest, seed, count);
            let csv = forest_csv(&forest, &draws);
            let per_tree = specs
                .into_iter()
                .enumerate()
                .map(|(t, s)| (s, draws.iter().map(|d| d[t].clone()).collect()))
                .collect();
            (csv, per_tree)
        }
        None => {
            let (spec, _, lat) = build_from_config(cfg, false)?;
            let samples = sample_paths(&lat, seed, count);
            (paths_csv(&lat, &samples), vec![(spec, samples)])
        }
    };
    write_atomic(path, &csv)?;
    let _ = writeln!(out, "wrote {} paths to {}", count, path.display());

    if report {
        for (t, (spec, samples)) in per_tree.iter().enumerate() {
            let n = spec.levels;
            let (m, v) = empirical_moments(samples, n)
                .map_err(|e| CliError::config(format!("invalid config: report: {e}")))?;
            let (em, ev) = terminal_moments(spec, n).expect("terminal level");
            let count = samples.len() as f64;
            let se_m = (ev / count).sqrt();
            let se_v = ev * (2.0 / (count - 1.0)).sqrt();
            let _ = writeln!(
                out,
                "tree {t}: terminal mean {} (exact {}, {:.2} SE); variance {} (exact {}, {:.2} SE)",
                sig17(m),
                sig17(em),
                (m - em).abs() / se_m,
                sig17(v),
                sig17(ev),
                (v - ev).abs() / se_v
            );
        }
    }
    Ok(())
}

fn payoff_from(cfg: &RunConfig) -> CliResult<PayoffSpec> {
    Ok(match cfg.payoff {
        Some(PayoffConfig::Zero) => PayoffSpec::constant(0.0),
        Some(PayoffConfig::Constant { value }) => PayoffSpec::constant(value),
        Some(PayoffConfig::Call { strike }) => PayoffSpec::call(strike),
        Some(PayoffConfig::Put { strike }) => PayoffSpec::put(strike),
        None => return Err(CliError::config("invalid config: missing `payoff` section")),
    })
}

fn exercise_payoff(cfg: &RunConfig, levels: usize) -> CliResult<PayoffSpec> {
    let schedule = cfg
        .schedules
        .as_ref()
        .and_then(|s| s.exercise.clone())
        .unwrap_or_else(|| (0..=levels).collect());
    let payoff = payoff_from(cfg)?;
    let ex: Box<dyn Fn(f64) -> f64 + Send + Sync> = match cfg.payoff {
        Some(PayoffConfig::Zero) => Box::new(|_| 0.0),
        Some(PayoffConfig::Constant { value }) => Box::new(move |_| value),
        Some(PayoffConfig::Call { strike }) => Box::new(move |x| (x - strike).max(0.0)),
        Some(PayoffConfig::Put { strike }) => Box::new(move |x| (strike - x).max(0.0)),
        None => unreachable!("checked by payoff_from"),
    };
    Ok(payoff.with_exercise(move |_, x| ex(x), schedule))
}

pub fn bond_schedule(cfg: &RunConfig) -> CliResult<BondSchedule> {
    let s = cfg
        .schedules
        .as_ref()
        .ok_or_else(|| CliError::config("invalid config: missing `schedules` section"))?;
    Ok(BondSchedule {
        coupons: s.coupons.iter().map(|c| (c.level, c.amount)).collect(),
        principal: s.principal,
        calls: s.calls.iter().map(|c| (c.level, c.price)).collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceReport {
    pub bullet: Option<f64>,
    pub option: Option<f64>,
    pub callable: Option<f64>,
    pub levels: usize,
    pub exercise_region: Vec<(usize, i64)>,
}

impl PriceReport {
    pub fn to_json(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "null".to_string(), sig17);
        let region: Vec<String> = self
            .exercise_region
            .iter()
            .map(|(j, k)| format!("{{\"j\": {j}, \"k\": {k}}}"))
            .collect();
        format!(
            "{{\"bullet\": {}, \"option\": {}, \"callable\": {}, \"levels\": {}, \"exercise_region\": [{}]}}\n",
            f(self.bullet),
            f(self.option),
            f(self.callable),
            self.levels,
            region.join(", ")
        )
    }
}

pub fn price_report(cfg: &RunConfig, kind: PriceKind) -> CliResult<PriceReport> {
    let (spec, _, lat) = build_from_config(cfg, false)?;
    let disc = cfg.discount(spec.dt);
    let levels = lat.levels();
    let price_err = |e: Error| match e {
        Error::Schedule(_) | Error::InvalidDiscount { .. } | Error::NonFinitePayoff { .. } => {
            CliError::config(format!("invalid config: {e}"))
        }
        other => CliError::build(other.to_string()),
    };
    Ok(match kind {
        PriceKind::European => PriceReport {
            option: Some(price_european(&lat, &payoff_from(cfg)?, &disc).map_err(price_err)?),
            levels,
            ..Default::default()
        },
        PriceKind::American => {
            let r =
                price_american(&lat, &exercise_payoff(cfg, levels)?, &disc).map_err(price_err)?;
            PriceReport {
                option: Some(r.price),
                levels,
                exercise_region: r.exercise_region,
                ..Default::default()
            }
        }
        PriceKind::Bullet => {
            let mut s = bond_schedule(cfg)?;
            s.calls.clear();
            let r = price_callable_bond(&lat, &s, &disc).map_err(price_err)?;
            PriceReport {
                bullet: Some(r.bullet),
                levels,
                ..Default::default()
            }
        }
        PriceKind::Callable => {
            let r = price_callable_bond(&lat, &bond_schedule(cfg)?, &disc).map_err(price_err)?;
            PriceReport {
                bullet: Some(r.bullet),
                option: Some(r.option),
                callable: Some(r.callable),
                levels,
                exercise_region: r.exercise_region,
            }
        }
    })
}

pub fn cmd_price(cfg: &RunConfig, kind: PriceKind) -> CliResult<String> {
    Ok(price_report(cfg, kind)?.to_json())
}

fn report_line(out: &mut String, c: &Check) {
    let status = match (c.required, c.passed()) {
        (false, _) => "INFO",
        (true, true) => "PASS",
        (true, false) => "FAIL",
    };
    let _ = writeln!(
        out,
        "{status} {:<28} measured {:<24} tolerance {}",
        c.name,
        sig17(c.measured),
        sig17(c.tolerance)
    );
}

pub fn cmd_verify(
    cfg: &RunConfig,
    lattice: Option<&Path>,
    sweep_count: Option<usize>,
    seed: Option<u64>,
    paths: Option<usize>,
    out: &mut String,
) -> CliResult<()> {
    let (spec, model) = cfg.model()?;
    let lat = match lattice {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            Lattice::from_json(&text).map_err(|e| CliError::config(e.to_string()))?
        }
        None => build_lattice_with(&model, BuildOptions::default())
            .map_err(|e| CliError::build(format!("build failed: {e}")))?,
    };

    let mut checks = check_lattice(&lat, &model);
    let seed = seed.or(cfg.seed).unwrap_or(1);
    let count = paths.or(cfg.paths).unwrap_or(20_000);
    if count >= 2 && checks.iter().all(Check::passed) {
        let samples = sample_paths(&lat, seed, count);
        let n = lat.levels();
        let (m, v) = empirical_moments(&samples, n).expect("at least two paths");
        let (em, ev) = terminal_moments(&spec, n).expect("terminal level");
        let c = count as f64;
        checks.push(Check {
            name: "terminal mean (SE units)",
            measured: (m - em).abs() / (ev / c).sqrt(),
            tolerance: 4.0,
            required: true,
        });
        checks.push(Check {
            name: "terminal variance (SE units)",
            measured: (v - ev).abs() / (ev * (2.0 / (c - 1.0)).sqrt()),
            tolerance: 4.0,
            required: true,
        });
    }
    if let Some(k) = sweep_count {
        let s = sweep(k, seed).map_err(|e| CliError::build(e.to_string()))?;
        let _ = writeln!(
            out,
            "sweep over {} specs: {} had ordering violations",
            s.specs, s.unordered_specs
        );
        checks.push(Check {
            name: "sweep closure",
            measured: s.worst_closure,
            tolerance: crate::verify::CLOSURE_TOL,
            required: true,
        });
        checks.push(Check {
            name: "sweep moment matching",
            measured: s.worst_mean.max(s.worst_variance),
            tolerance: MOMENT_TOL,
            required: true,
        });
    }

    for c in &checks {
        report_line(out, c);
    }
    match checks.iter().find(|c| !c.passed()) {
        Some(c) => Err(CliError {
            code: EXIT_VERIFY,
            message: format!("verification failed: {}", c.name),
        }),
        None => {
            let _ = writeln!(out, "all {} checks passed", checks.len());
            Ok(())
        }
    }
}
