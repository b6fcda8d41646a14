//! Command-line front end. Exit codes: 0 success, 1 validation error,
//! 2 numerical failure, 3 I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::design::{enumerate_assignments, partition, sample_assignment, DesignSpec, GroupLabel};
use crate::diagnostics::{
    clt_bound_terms, clt_condition_check, variance_regime, CltBoundReport, CltConditionReport, RegimeReport,
};
use crate::error::{Error, Result};
use crate::estimators::{
    ancova_population_beta, estimate, population_interacted_system, population_system, solve_beta, solve_interacted,
    AdjustedEstimate, Beta, EffectSpec, Method,
};
use crate::io::{assignment_csv_string, load_long_csv, to_json, write_text, StudyConfig};
use crate::moments::{CovariateTensor, Potentials};
use crate::simulate::{brute_force_distribution, monte_carlo, McOptions, McReport, Population};
use crate::variance::{exact_estimator_variance, exact_group_variance, sigma_hat_gamma};
use crate::SPEC_VERSION;

#[derive(Debug, Parser)]
#[command(
    name = "mrd-adjust",
    version,
    about = "Regression-adjusted inference for simple multiple randomization designs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a buyer/seller assignment and write it as CSV.
    Assign {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate effects from observed long-format data.
    Analyze {
        /// Long CSV with treatment columns.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON report path. Without it the JSON goes to standard output and the table to standard error.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomization Monte Carlo for a DGP.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Flat summary CSV, one row per (effect, method).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Per-replication CSV dump.
        #[arg(long)]
        replications_csv: Option<PathBuf>,
    },
    /// Verify estimators against full enumeration on a small design.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CLT and variance-regime diagnostics for data or a DGP.
    Diagnose {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Assign { config, out } => assign(&config, out.as_deref()),
        Command::Analyze { data, config, out } => analyze(data, config.as_deref(), out),
        Command::Simulate { config, out, csv, replications_csv } => {
            simulate(&config, out, csv.as_deref(), replications_csv.as_deref())
        }
        Command::Oracle { config, out } => oracle(&config, out),
        Command::Diagnose { data, config, out } => diagnose(data.as_deref(), config.as_deref(), out),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<StudyConfig> {
    match path {
        Some(p) => StudyConfig::load(p),
        None => Ok(StudyConfig::default()),
    }
}

fn assign(config: &Path, out: Option<&Path>) -> Result<i32> {
    let cfg = StudyConfig::load(config)?;
    let spec = cfg.resolve_design(None)?;
    let a = sample_assignment(&spec, cfg.seed);
    emit(out.or(cfg.output.as_deref().map(Path::new)), &assignment_csv_string(&a))?;
    Ok(0)
}

#[derive(Serialize)]
struct DataSummary {
    path: String,
    buyers: usize,
    sellers: usize,
    covariates: usize,
}

#[derive(Serialize)]
struct AnalysisReport {
    spec_version: &'static str,
    command: &'static str,
    seed: u64,
    config: StudyConfig,
    design: DesignSpec,
    data: DataSummary,
    /// Every quantity here comes from observed outcomes only.
    oracle_only: bool,
    estimates: Vec<AdjustedEstimate>,
}

fn check_config_design(cfg: &StudyConfig, spec: &DesignSpec) -> Result<()> {
    let d = &cfg.design;
    let pairs = [
        ("buyers", d.buyers, spec.buyers()),
        ("sellers", d.sellers, spec.sellers()),
        ("treated_buyers", d.treated_buyers, spec.treated_buyers()),
        ("treated_sellers", d.treated_sellers, spec.treated_sellers()),
    ];
    for (name, given, actual) in pairs {
        if let Some(g) = given {
            if g != actual {
                return Err(Error::Config(format!("config says {name} = {g}, data has {actual}")));
            }
        }
    }
    Ok(())
}

fn estimate_table(estimates: &[AdjustedEstimate]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:<18} {:>14} {:>12} {:>14} {:>14}",
        "effect", "method", "estimate", "se_bound", "ci_low", "ci_high"
    );
    for e in estimates {
        let _ = writeln!(
            s,
            "{:<18} {:<18} {:>14.6} {:>12.6} {:>14.6} {:>14.6}",
            e.effect.label(),
            e.method.as_str(),
            e.point,
            e.variance_bound.sqrt(),
            e.ci_low,
            e.ci_high
        );
        for w in &e.diagnostics.warnings {
            let _ = writeln!(s, "  warning: {w}");
        }
    }
    s
}

fn analyze(data: Option<PathBuf>, config: Option<&Path>, out: Option<PathBuf>) -> Result<i32> {
    let cfg = load_config(config)?;
    let data_path = data
        .or_else(|| cfg.input.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("no input data: pass --data or set \"input\"".into()))?;
    let d = load_long_csv(&data_path)?;
    let a = d
        .assignment
        .clone()
        .ok_or_else(|| Error::Invalid("analysis needs treated_buyer and treated_seller columns".into()))?;
    let (i, j) = d.outcome.shape();
    let spec =
        DesignSpec::new(i, j, a.w_buyer.iter().filter(|w| **w).count(), a.w_seller.iter().filter(|w| **w).count())?;
    check_config_design(&cfg, &spec)?;
    let p = partition(&spec, &a)?;
    let mut estimates = Vec::new();
    for e in cfg.resolved_effects()? {
        for &m in &cfg.methods {
            estimates.push(estimate(&e, &d.outcome, &d.covariates, &p, &spec, m, cfg.level)?);
        }
    }
    let table = estimate_table(&estimates);
    let report = AnalysisReport {
        spec_version: SPEC_VERSION,
        command: "analyze",
        seed: cfg.seed,
        design: spec,
        data: DataSummary {
            path: data_path.display().to_string(),
            buyers: i,
            sellers: j,
            covariates: d.covariates.dim(),
        },
        oracle_only: false,
        estimates,
        config: cfg.clone(),
    };
    let json = to_json(&report)?;
    match out.or_else(|| cfg.output.as_ref().map(PathBuf::from)) {
        Some(p) => {
            write_text(&p, &json)?;
            print!("{table}");
        }
        None => {
            print!("{json}");
            eprint!("{table}");
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    spec_version: &'static str,
    command: &'static str,
    seed: u64,
    dgp_seed: u64,
    config: &'a StudyConfig,
    report: &'a McReport,
}

fn simulate(config: &Path, out: Option<PathBuf>, csv: Option<&Path>, reps: Option<&Path>) -> Result<i32> {
    let cfg = StudyConfig::load(config)?;
    let dgp = cfg.dgp.as_ref().ok_or_else(|| Error::Config("simulate needs a \"dgp\" block".into()))?;
    let spec = cfg.resolve_design(None)?;
    let effects = cfg.resolved_effects()?;
    let opts = McOptions {
        replications: cfg.replications,
        seed: cfg.seed,
        level: cfg.level,
        threads: None,
        keep_replications: reps.is_some(),
    };
    let run = monte_carlo(
        Population::Generated { dgp, seed: cfg.dgp_seed(), redraw: cfg.redraw_potentials },
        &spec,
        &effects,
        &cfg.methods,
        &opts,
    )?;
    let report = SimulationReport {
        spec_version: SPEC_VERSION,
        command: "simulate",
        seed: cfg.seed,
        dgp_seed: cfg.dgp_seed(),
        config: &cfg,
        report: &run.report,
    };
    emit(out.as_deref().or(cfg.output.as_deref().map(Path::new)), &to_json(&report)?)?;
    if let Some(p) = csv {
        write_text(p, &run.report.to_csv()?)?;
    }
    if let Some(p) = reps {
        write_text(p, &crate::simulate::replications_csv(&run.replications)?)?;
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct OracleCheck {
    property: String,
    effect: Option<String>,
    pass: bool,
    value: f64,
    tolerance: f64,
}

#[derive(Serialize)]
struct OracleReport {
    spec_version: &'static str,
    command: &'static str,
    seed: u64,
    dgp_seed: u64,
    config: StudyConfig,
    design: DesignSpec,
    assignments: usize,
    /// These checks use the full potential outcomes and are not available from observed data.
    oracle_only: bool,
    all_pass: bool,
    checks: Vec<OracleCheck>,
    exact_variances: Vec<MethodVariance>,
}

#[derive(Debug, Serialize)]
struct MethodVariance {
    effect: String,
    method: Method,
    /// Exact variance at the large-sample coefficient of the method.
    variance: Option<f64>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Exact variance of each method at its population coefficient.
fn population_variance(
    pot: &Potentials,
    x: &CovariateTensor,
    spec: &DesignSpec,
    e: &EffectSpec,
    m: Method,
) -> Result<Option<f64>> {
    let beta = match m {
        Method::Unadjusted => Beta::None,
        _ if x.dim() == 0 || !e.is_balanced() => return Ok(None),
        Method::Ancova => Beta::Shared(ancova_population_beta(x, pot, spec)?),
        Method::OptNoninteracted => Beta::Shared(solve_beta(&population_system(e, x, pot, spec)?)?),
        Method::OptInteracted => {
            Beta::ByGroup(solve_interacted(&population_interacted_system(e, x, pot, spec)?)?.betas)
        }
    };
    Ok(Some(exact_estimator_variance(pot, spec, e, &beta, Some(x))?.total))
}

fn oracle(config: &Path, out: Option<PathBuf>) -> Result<i32> {
    let cfg = StudyConfig::load(config)?;
    let dgp = cfg.dgp.as_ref().ok_or_else(|| Error::Config("oracle needs a \"dgp\" block".into()))?;
    let spec = cfg.resolve_design(None)?;
    let all = enumerate_assignments(&spec, cfg.enumeration_cap)?;
    let (pot, x) = dgp.realize(&spec, cfg.dgp_seed())?;
    let scale = pot.tables().iter().flat_map(|t| t.iter()).fold(1.0_f64, |a, v| a.max(v.abs()));
    let mut checks = Vec::new();

    for g in GroupLabel::ALL {
        let y = pot.get(g);
        let mut sum = 0.0;
        for a in &all {
            sum += sigma_hat_gamma(y, &partition(&spec, a)?, g, &spec)?.sigma_hat;
        }
        let mean = sum / all.len() as f64;
        let exact = exact_group_variance(y, &spec, g)?;
        let err = if exact.abs() < 1e-300 { mean.abs() } else { rel_err(mean, exact) };
        checks.push(OracleCheck {
            property: format!("sigma_hat_{g}_unbiased"),
            effect: None,
            pass: err <= 1e-10,
            value: err,
            tolerance: 1e-10,
        });
    }

    let mut exact_variances = Vec::new();
    for e in cfg.resolved_effects()? {
        let dist = brute_force_distribution(&pot, &spec, &e.c, &Beta::None, None, cfg.enumeration_cap)?;
        let tau = pot.estimand(&e.c);
        let bias = (dist.mean - tau).abs() / scale;
        checks.push(OracleCheck {
            property: "unadjusted_unbiased".into(),
            effect: Some(e.label().into()),
            pass: bias <= 1e-12,
            value: bias,
            tolerance: 1e-12,
        });
        let exact = exact_estimator_variance(&pot, &spec, &e, &Beta::None, None)?.total;
        let err = rel_err(exact, dist.variance);
        checks.push(OracleCheck {
            property: "exact_variance_matches_enumeration".into(),
            effect: Some(e.label().into()),
            pass: err <= 1e-10,
            value: err,
            tolerance: 1e-10,
        });

        let mut vars = Vec::new();
        for &m in &cfg.methods {
            let v = population_variance(&pot, &x, &spec, &e, m)?;
            vars.push((m, v));
            exact_variances.push(MethodVariance { effect: e.label().into(), method: m, variance: v });
        }
        let get = |m: Method| vars.iter().find(|(k, _)| *k == m).and_then(|(_, v)| *v);
        let order = [
            (Method::OptNoninteracted, Method::Unadjusted),
            (Method::OptNoninteracted, Method::Ancova),
            (Method::OptInteracted, Method::OptNoninteracted),
        ];
        for (lo, hi) in order {
            if let (Some(a), Some(b)) = (get(lo), get(hi)) {
                let excess = (a - b) / b.abs().max(f64::MIN_POSITIVE);
                checks.push(OracleCheck {
                    property: format!("var_{}_le_{}", lo.as_str(), hi.as_str()),
                    effect: Some(e.label().into()),
                    pass: excess <= 1e-10,
                    value: excess,
                    tolerance: 1e-10,
                });
            }
        }
    }
    let all_pass = checks.iter().all(|c| c.pass);
    let report = OracleReport {
        spec_version: SPEC_VERSION,
        command: "oracle",
        seed: cfg.seed,
        dgp_seed: cfg.dgp_seed(),
        design: spec,
        assignments: all.len(),
        oracle_only: true,
        all_pass,
        checks,
        exact_variances,
        config: cfg.clone(),
    };
    emit(out.as_deref().or(cfg.output.as_deref().map(Path::new)), &to_json(&report)?)?;
    if all_pass {
        Ok(0)
    } else {
        eprintln!("error: one or more oracle checks failed");
        Ok(2)
    }
}

#[derive(Serialize)]
struct EffectDiagnostics {
    effect: String,
    condition: CltConditionReport,
    regime: RegimeReport,
}

#[derive(Serialize)]
struct GroupBound {
    group: GroupLabel,
    bound: CltBoundReport,
}

#[derive(Serialize)]
struct DiagnoseReport {
    spec_version: &'static str,
    command: &'static str,
    seed: u64,
    config: StudyConfig,
    design: DesignSpec,
    source: &'static str,
    /// True when the diagnostics use full potential outcomes from a DGP.
    oracle_only: bool,
    /// Bound terms for the observed outcome matrix, treated as one table.
    outcome_bound: Option<CltBoundReport>,
    /// Variance regime of the mean of a random treated block of that table.
    outcome_regime: Option<RegimeReport>,
    group_bounds: Vec<GroupBound>,
    effects: Vec<EffectDiagnostics>,
}

fn diagnose(data: Option<&Path>, config: Option<&Path>, out: Option<PathBuf>) -> Result<i32> {
    let cfg = load_config(config)?;
    let data = data.map(Path::to_path_buf).or_else(|| cfg.input.as_ref().map(PathBuf::from));
    let report = if let Some(path) = data {
        let d = load_long_csv(&path)?;
        let (i, j) = d.outcome.shape();
        let spec = match &d.assignment {
            Some(a) => DesignSpec::new(
                i,
                j,
                a.w_buyer.iter().filter(|w| **w).count(),
                a.w_seller.iter().filter(|w| **w).count(),
            )?,
            None => cfg.resolve_design(Some((i, j)))?,
        };
        let single = Potentials::new(std::array::from_fn(|_| d.outcome.clone()))?;
        let mean_of_block = EffectSpec::custom([1.0, 0.0, 0.0, 0.0]);
        DiagnoseReport {
            spec_version: SPEC_VERSION,
            command: "diagnose",
            seed: cfg.seed,
            design: spec,
            source: "data",
            oracle_only: false,
            outcome_bound: Some(clt_bound_terms(&d.outcome, &spec)?),
            outcome_regime: Some(variance_regime(&single, &spec, &mean_of_block)?),
            group_bounds: Vec::new(),
            effects: Vec::new(),
            config: cfg.clone(),
        }
    } else {
        let dgp = cfg
            .dgp
            .as_ref()
            .ok_or_else(|| Error::Config("diagnose needs --data or a config with a \"dgp\" block".into()))?;
        let spec = cfg.resolve_design(None)?;
        let (pot, _) = dgp.realize(&spec, cfg.dgp_seed())?;
        let mut group_bounds = Vec::new();
        for g in GroupLabel::ALL {
            group_bounds.push(GroupBound { group: g, bound: clt_bound_terms(pot.get(g), &spec)? });
        }
        let mut effects = Vec::new();
        for e in cfg.resolved_effects()? {
            effects.push(EffectDiagnostics {
                effect: e.label().into(),
                condition: clt_condition_check(&pot, &spec, &e)?,
                regime: variance_regime(&pot, &spec, &e)?,
            });
        }
        DiagnoseReport {
            spec_version: SPEC_VERSION,
            command: "diagnose",
            seed: cfg.seed,
            design: spec,
            source: "dgp",
            oracle_only: true,
            outcome_bound: None,
            outcome_regime: None,
            group_bounds,
            effects,
            config: cfg.clone(),
        }
    };
    emit(out.as_deref().or(cfg.output.as_deref().map(Path::new)), &to_json(&report)?)?;
    Ok(0)
}
