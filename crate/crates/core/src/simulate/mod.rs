//! Randomization Monte Carlo over a fixed set of potentials, plus the exact
//! design distribution by enumeration for small markets.

mod dgp;

pub use dgp::{
    centered_normal_vector, gen_marketplace, gen_normal, gen_rank_one, gen_sparse, DgpSpec, Marketplace, SparseVariant,
};

use rayon::prelude::*;
use serde::Serialize;

use crate::design::{enumerate_assignments, partition, sample_assignment, DesignSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    ancova_population_beta, estimate, population_system, solve_beta, tau_unadjusted, Beta, EffectSpec, Method,
};
use crate::moments::{CovariateTensor, Potentials};
use crate::numeric::{mean, sample_sd};
use crate::variance::exact_estimator_variance;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MRD_ADJUST_THREADS";

/// Seed of replication `rep`.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    seed ^ rep
}

/// Worker count from `MRD_ADJUST_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Where the potentials of a study come from.
pub enum Population<'a> {
    Fixed {
        potentials: &'a Potentials,
        covariates: &'a CovariateTensor,
    },
    /// Draw from a DGP; with `redraw` every replication gets its own draw.
    Generated {
        dgp: &'a DgpSpec,
        seed: u64,
        redraw: bool,
    },
}

#[derive(Debug, Clone)]
pub struct McOptions {
    pub replications: usize,
    pub seed: u64,
    pub level: f64,
    /// Worker cap; `None` falls back to `MRD_ADJUST_THREADS`, then to rayon's default.
    pub threads: Option<usize>,
    pub keep_replications: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectTruth {
    pub effect: String,
    pub c: [f64; 4],
    /// τ_c; with redrawn potentials, its average over replications.
    pub true_tau: f64,
    pub exact_var_unadjusted: Option<f64>,
    /// Exact variance at the large-sample ANCOVA slope.
    pub exact_var_ancova_population: Option<f64>,
    /// Exact variance at the population-optimal shared β.
    pub exact_var_optimal_population: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub replication: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub effect: String,
    pub method: Method,
    pub replications: usize,
    pub successes: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub bias: Option<f64>,
    pub mean_ci_length: Option<f64>,
    pub coverage: Option<f64>,
    pub mean_v_hat: Option<f64>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub schema_version: u32,
    pub design: DesignSpec,
    pub replications: usize,
    pub seed: u64,
    pub level: f64,
    pub redraw_potentials: bool,
    pub effects: Vec<EffectTruth>,
    pub results: Vec<MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub effect: String,
    pub method: Method,
    pub tau: f64,
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub v_hat: Option<f64>,
    pub error: Option<String>,
}

pub struct McRun {
    pub report: McReport,
    pub replications: Vec<ReplicationRecord>,
}

fn truth_for(potentials: &Potentials, x: &CovariateTensor, spec: &DesignSpec, effect: &EffectSpec) -> EffectTruth {
    let var_at = |beta: &Beta| exact_estimator_variance(potentials, spec, effect, beta, Some(x)).ok().map(|r| r.total);
    let (anc, opt) = if x.dim() > 0 && effect.is_balanced() {
        let anc = ancova_population_beta(x, potentials, spec).ok().and_then(|b| var_at(&Beta::Shared(b)));
        let opt = population_system(effect, x, potentials, spec)
            .and_then(|s| solve_beta(&s))
            .ok()
            .and_then(|b| var_at(&Beta::Shared(b)));
        (anc, opt)
    } else {
        (None, None)
    };
    EffectTruth {
        effect: effect.label().to_string(),
        c: effect.c,
        true_tau: potentials.estimand(&effect.c),
        exact_var_unadjusted: var_at(&Beta::None),
        exact_var_ancova_population: anc,
        exact_var_optimal_population: opt,
    }
}

fn one_replication(
    rep: usize,
    population: &Population<'_>,
    fixed: Option<&(Potentials, CovariateTensor)>,
    spec: &DesignSpec,
    effects: &[EffectSpec],
    methods: &[Method],
    opts: &McOptions,
) -> Vec<ReplicationRecord> {
    let rseed = replication_seed(opts.seed, rep as u64);
    let drawn;
    let (pot, x) = match (population, fixed) {
        (Population::Fixed { potentials, covariates }, _) => (*potentials, *covariates),
        (Population::Generated { .. }, Some(f)) => (&f.0, &f.1),
        (Population::Generated { dgp, seed, .. }, None) => {
            match dgp.realize(spec, replication_seed(*seed, rep as u64)) {
                Ok(v) => {
                    drawn = v;
                    (&drawn.0, &drawn.1)
                }
                Err(e) => {
                    let msg = e.to_string();
                    let msg = &msg;
                    return effects
                        .iter()
                        .flat_map(|eff| {
                            methods.iter().map(move |m| ReplicationRecord {
                                replication: rep,
                                effect: eff.label().to_string(),
                                method: *m,
                                tau: f64::NAN,
                                point: None,
                                ci_low: None,
                                ci_high: None,
                                v_hat: None,
                                error: Some(msg.clone()),
                            })
                        })
                        .collect();
                }
            }
        }
    };
    let a = sample_assignment(spec, rseed);
    let p = partition(spec, &a).expect("sampled assignment matches its design");
    let y = pot.observe(&a);
    let mut out = Vec::with_capacity(effects.len() * methods.len());
    for eff in effects {
        let tau = pot.estimand(&eff.c);
        for &m in methods {
            let rec = match estimate(eff, &y, x, &p, spec, m, opts.level) {
                Ok(est) => ReplicationRecord {
                    replication: rep,
                    effect: eff.label().to_string(),
                    method: m,
                    tau,
                    point: Some(est.point),
                    ci_low: Some(est.ci_low),
                    ci_high: Some(est.ci_high),
                    v_hat: Some(est.variance_bound),
                    error: None,
                },
                Err(e) => ReplicationRecord {
                    replication: rep,
                    effect: eff.label().to_string(),
                    method: m,
                    tau,
                    point: None,
                    ci_low: None,
                    ci_high: None,
                    v_hat: None,
                    error: Some(e.to_string()),
                },
            };
            out.push(rec);
        }
    }
    out
}

fn summarize(effect: &str, method: Method, recs: &[&ReplicationRecord]) -> MethodSummary {
    let ok: Vec<&&ReplicationRecord> = recs.iter().filter(|r| r.error.is_none()).collect();
    let failures = recs
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| Failure { replication: r.replication, error: e.clone() }))
        .collect();
    let points: Vec<f64> = ok.iter().map(|r| r.point.unwrap()).collect();
    let errs: Vec<f64> = ok.iter().map(|r| r.point.unwrap() - r.tau).collect();
    let lens: Vec<f64> = ok.iter().map(|r| r.ci_high.unwrap() - r.ci_low.unwrap()).collect();
    let vh: Vec<f64> = ok.iter().map(|r| r.v_hat.unwrap()).collect();
    let covered = ok.iter().filter(|r| r.ci_low.unwrap() <= r.tau && r.tau <= r.ci_high.unwrap()).count();
    let n = ok.len();
    let some = |v: f64| if n > 0 { Some(v) } else { None };
    MethodSummary {
        effect: effect.to_string(),
        method,
        replications: recs.len(),
        successes: n,
        mean: some(mean(&points)),
        sd: sample_sd(&points),
        bias: some(mean(&errs)),
        mean_ci_length: some(mean(&lens)),
        coverage: some(covered as f64 / n.max(1) as f64),
        mean_v_hat: some(mean(&vh)),
        failures,
    }
}

/// Redraw assignments `replications` times and aggregate every
/// (effect, method) pair. Results do not depend on the worker count.
pub fn monte_carlo(
    population: Population<'_>,
    spec: &DesignSpec,
    effects: &[EffectSpec],
    methods: &[Method],
    opts: &McOptions,
) -> Result<McRun> {
    if opts.replications == 0 {
        return Err(Error::Invalid("at least one replication is required".into()));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Invalid(format!("level must lie in (0, 1), got {}", opts.level)));
    }
    if effects.is_empty() || methods.is_empty() {
        return Err(Error::Invalid("no effects or methods requested".into()));
    }
    for (k, e) in effects.iter().enumerate() {
        if effects[..k].iter().any(|f| f.label() == e.label()) {
            return Err(Error::Invalid(format!("effect {} requested twice", e.label())));
        }
    }
    let redraw = matches!(population, Population::Generated { redraw: true, .. });
    let fixed = match &population {
        Population::Generated { dgp, seed, redraw: false } => Some(dgp.realize(spec, *seed)?),
        Population::Generated { dgp, .. } => {
            dgp.validate()?;
            None
        }
        Population::Fixed { potentials, covariates } => {
            if potentials.shape() != (spec.buyers(), spec.sellers()) {
                return Err(Error::DimensionMismatch("potentials do not match design".into()));
            }
            covariates.check_shape(potentials.get(crate::design::GroupLabel::Tr))?;
            None
        }
    };

    let threads = match opts.threads {
        Some(t) => Some(t),
        None => threads_from_env()?,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    let per_rep: Vec<Vec<ReplicationRecord>> = pool.install(|| {
        (0..opts.replications)
            .into_par_iter()
            .map(|rep| one_replication(rep, &population, fixed.as_ref(), spec, effects, methods, opts))
            .collect()
    });
    let records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();

    let truths = match (&population, &fixed) {
        (Population::Fixed { potentials, covariates }, _) => {
            effects.iter().map(|e| truth_for(potentials, covariates, spec, e)).collect()
        }
        (_, Some((p, x))) => effects.iter().map(|e| truth_for(p, x, spec, e)).collect(),
        _ => effects
            .iter()
            .map(|e| {
                let taus: Vec<f64> = records
                    .iter()
                    .filter(|r| r.effect == e.label() && r.method == methods[0] && r.tau.is_finite())
                    .map(|r| r.tau)
                    .collect();
                EffectTruth {
                    effect: e.label().to_string(),
                    c: e.c,
                    true_tau: mean(&taus),
                    exact_var_unadjusted: None,
                    exact_var_ancova_population: None,
                    exact_var_optimal_population: None,
                }
            })
            .collect(),
    };

    let mut results = Vec::with_capacity(effects.len() * methods.len());
    for e in effects {
        for &m in methods {
            let recs: Vec<&ReplicationRecord> =
                records.iter().filter(|r| r.effect == e.label() && r.method == m).collect();
            results.push(summarize(e.label(), m, &recs));
        }
    }
    let report = McReport {
        schema_version: 1,
        design: *spec,
        replications: opts.replications,
        seed: opts.seed,
        level: opts.level,
        redraw_potentials: redraw,
        effects: truths,
        results,
    };
    Ok(McRun { report, replications: if opts.keep_replications { records } else { Vec::new() } })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl McReport {
    /// One row per (effect, method).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
        w.write_record([
            "effect",
            "method",
            "replications",
            "successes",
            "true_tau",
            "mean",
            "sd",
            "bias",
            "mean_ci_length",
            "coverage",
            "mean_v_hat",
            "failures",
        ])
        .map_err(io)?;
        for r in &self.results {
            let tau = self.effects.iter().find(|e| e.effect == r.effect).map(|e| e.true_tau);
            w.write_record([
                r.effect.clone(),
                r.method.as_str().to_string(),
                r.replications.to_string(),
                r.successes.to_string(),
                fmt_opt(tau),
                fmt_opt(r.mean),
                fmt_opt(r.sd),
                fmt_opt(r.bias),
                fmt_opt(r.mean_ci_length),
                fmt_opt(r.coverage),
                fmt_opt(r.mean_v_hat),
                r.failures.len().to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary(&self, effect: &str, method: Method) -> Option<&MethodSummary> {
        self.results.iter().find(|r| r.effect == effect && r.method == method)
    }
}

pub fn replications_csv(records: &[ReplicationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record(["replication", "effect", "method", "tau", "point", "ci_low", "ci_high", "v_hat", "error"])
        .map_err(io)?;
    for r in records {
        w.write_record([
            r.replication.to_string(),
            r.effect.clone(),
            r.method.as_str().to_string(),
            r.tau.to_string(),
            fmt_opt(r.point),
            fmt_opt(r.ci_low),
            fmt_opt(r.ci_high),
            fmt_opt(r.v_hat),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Exact distribution of an imputation estimator over every assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactDistribution {
    pub mean: f64,
    /// Population variance over the assignments (divisor = their count).
    pub variance: f64,
    pub values: Vec<f64>,
}

pub fn brute_force_distribution(
    potentials: &Potentials,
    spec: &DesignSpec,
    c: &[f64; 4],
    beta: &Beta,
    x: Option<&CovariateTensor>,
    cap: u128,
) -> Result<ExactDistribution> {
    let resid = match (beta, x) {
        (Beta::None, _) => potentials.clone(),
        (b, Some(x)) => potentials.residualize(x, &b.per_group(x.dim()))?,
        (_, None) => return Err(Error::Invalid("β supplied without covariates".into())),
    };
    let assignments = enumerate_assignments(spec, cap)?;
    let mut values = Vec::with_capacity(assignments.len());
    for a in &assignments {
        let p = partition(spec, a)?;
        values.push(tau_unadjusted(&resid.observe(a), &p, c)?);
    }
    let m = mean(&values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    Ok(ExactDistribution { mean: m, variance: mean(&dev), values })
}
