use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::dgp::{generate_replication, synthetic_manifest, true_effects, DgpConfig, ReplicationSeed};
use crate::design::WeightScheme;
use crate::error::{Error, Result};
use crate::pipeline::{analyze, Estimator};
use crate::shrinkage::wald_ci;

/// Replication failures tolerated per grid point before the sweep aborts.
pub const MAX_FAILURE_RATE: f64 = 0.01;

pub const RESULTS_HEADER: [&str; 5] = ["e", "estimator", "metric", "subgroup", "value"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub e_grid: Vec<f64>,
    pub replications: usize,
    pub base_seed: u64,
    pub weight_scheme: WeightScheme,
    pub alpha: f64,
    pub external_variance: f64,
    /// Worker threads; results do not depend on this.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            e_grid: (0..=50).map(|i| i as f64 * 0.002).collect(),
            replications: 5000,
            base_seed: 20250701,
            weight_scheme: WeightScheme::Prevalence,
            alpha: 0.05,
            external_variance: 1e-4,
            workers: 1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.e_grid.is_empty() || self.e_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("e grid must be nonempty, finite and >= 0".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.external_variance.is_finite() && self.external_variance > 0.0) {
            return Err(Error::Config("external variance must be finite and > 0".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.e_grid.len() > u32::MAX as usize || self.replications > u32::MAX as usize {
            return Err(Error::Config("grid or replication count too large".into()));
        }
        Ok(())
    }
}

/// Monte Carlo summary of one estimator at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    /// Mean weighted squared error over replications.
    pub risk: f64,
    /// `risk / risk(unconstrained)`.
    pub relative_risk: f64,
    /// Delta-method Monte Carlo standard error of `relative_risk`.
    pub relative_risk_se: f64,
    pub coverage: Vec<f64>,
    pub mean_variance: Vec<f64>,
    pub mc_variance: Vec<f64>,
    pub mean_ci_length: Vec<f64>,
    pub bias: Vec<f64>,
    /// Monte Carlo standard error of the mean estimate, per subgroup.
    pub mean_se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub e: f64,
    pub estimators: BTreeMap<Estimator, EstimatorSummary>,
    pub mean_omega: f64,
    pub taylor_share: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub tau: Vec<f64>,
    pub subgroup_labels: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// Per-replication raw outputs, aggregated in replication order.
struct ReplicationOutcome {
    estimates: Vec<EstimatorDraw>,
    omega: f64,
    taylor: bool,
}

struct EstimatorDraw {
    loss: f64,
    tau: Vec<f64>,
    variance: Vec<f64>,
    covered: Vec<bool>,
    ci_length: Vec<f64>,
}

fn run_replication(
    dgp: &DgpConfig,
    sweep: &SweepConfig,
    tau_true: &[f64],
    manifest: &crate::data::ExternalManifest,
    seed: ReplicationSeed,
) -> Result<ReplicationOutcome> {
    let data = generate_replication(dgp, seed)?;
    let analysis = analyze(&data, manifest, &sweep.weight_scheme, &Estimator::ALL)?;
    let w = &analysis.weights;
    let mut estimates = Vec::with_capacity(Estimator::ALL.len());
    for est in Estimator::ALL {
        let fit = analysis
            .estimator(est)
            .expect("all estimators were requested");
        let tau = fit.tau();
        let var = fit.var_tau();
        let ci = wald_ci(tau, var, sweep.alpha)?;
        let loss = tau
            .iter()
            .zip(tau_true)
            .zip(w.diagonal.iter())
            .map(|((t, truth), wg)| wg * (t - truth).powi(2))
            .sum();
        estimates.push(EstimatorDraw {
            loss,
            tau: tau.iter().copied().collect(),
            variance: (0..tau.len()).map(|g| var[(g, g)]).collect(),
            covered: ci
                .iter()
                .zip(tau_true)
                .map(|(&(lo, hi), &truth)| lo <= truth && truth <= hi)
                .collect(),
            ci_length: ci.iter().map(|(lo, hi)| hi - lo).collect(),
        });
    }
    Ok(ReplicationOutcome {
        estimates,
        omega: analysis.james_stein.omega,
        taylor: analysis.james_stein.variance_branch == crate::shrinkage::VarianceBranch::Taylor,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (if c == 0 { f64::NAN } else { s / c as f64 }, c)
}

fn sample_variance(xs: &[f64]) -> f64 {
    let (m, c) = mean(xs.iter().copied());
    if c < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c - 1) as f64
}

fn summarize(
    outcomes: &[ReplicationOutcome],
    est_index: usize,
    tau_true: &[f64],
) -> EstimatorSummary {
    let g = tau_true.len();
    let draws: Vec<&EstimatorDraw> = outcomes.iter().map(|o| &o.estimates[est_index]).collect();
    let reference: Vec<f64> = outcomes.iter().map(|o| o.estimates[0].loss).collect();
    let losses: Vec<f64> = draws.iter().map(|d| d.loss).collect();
    let r = draws.len() as f64;
    let (risk, _) = mean(losses.iter().copied());
    let (ref_risk, _) = mean(reference.iter().copied());
    let relative_risk = risk / ref_risk;
    let linearized: Vec<f64> = losses
        .iter()
        .zip(&reference)
        .map(|(a, b)| a - relative_risk * b)
        .collect();
    let relative_risk_se = (sample_variance(&linearized) / r).sqrt() / ref_risk;

    let per_group = |f: &dyn Fn(&EstimatorDraw, usize) -> f64| -> Vec<f64> {
        (0..g)
            .map(|k| mean(draws.iter().map(|d| f(d, k))).0)
            .collect()
    };
    let coverage = per_group(&|d, k| d.covered[k] as u8 as f64);
    let mean_variance = per_group(&|d, k| d.variance[k]);
    let mean_ci_length = per_group(&|d, k| d.ci_length[k]);
    let mean_tau = per_group(&|d, k| d.tau[k]);
    let mc_variance: Vec<f64> = (0..g)
        .map(|k| sample_variance(&draws.iter().map(|d| d.tau[k]).collect::<Vec<_>>()))
        .collect();
    let bias = mean_tau.iter().zip(tau_true).map(|(m, t)| m - t).collect();
    let mean_se = mc_variance.iter().map(|v| (v / r).sqrt()).collect();
    EstimatorSummary {
        risk,
        relative_risk,
        relative_risk_se,
        coverage,
        mean_variance,
        mc_variance,
        mean_ci_length,
        bias,
        mean_se,
    }
}

/// Runs the incompatibility sweep. Replications at each grid point are
/// independent work units; aggregation happens in replication order, so the
/// result is identical for every worker count.
pub fn run_sweep(dgp: &DgpConfig, sweep: &SweepConfig) -> Result<SweepResult> {
    dgp.validate()?;
    sweep.validate()?;
    if !(dgp.sigma0 > 0.0 && dgp.sigma1 > 0.0) {
        return Err(Error::Config("sweeps need positive error standard deviations".into()));
    }
    let targets = true_effects(dgp)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let mut rows = Vec::with_capacity(sweep.e_grid.len());
    for (e_index, &e) in sweep.e_grid.iter().enumerate() {
        let manifest = synthetic_manifest(&targets, e, sweep.external_variance)?;
        let results: Vec<Result<ReplicationOutcome>> = pool.install(|| {
            (0..sweep.replications)
                .into_par_iter()
                .map(|rep| {
                    let seed = ReplicationSeed {
                        base_seed: sweep.base_seed,
                        e_index: e_index as u32,
                        replication: rep as u32,
                    };
                    run_replication(dgp, sweep, &targets.tau, &manifest, seed)
                })
                .collect()
        });
        let mut outcomes = Vec::with_capacity(results.len());
        let mut failures = 0usize;
        for r in results {
            match r {
                Ok(o) => outcomes.push(o),
                Err(err) => {
                    failures += 1;
                    log::debug!("replication failed at e = {e}: {err}");
                }
            }
        }
        if failures as f64 > MAX_FAILURE_RATE * sweep.replications as f64 || outcomes.is_empty() {
            return Err(Error::TooManyFailures {
                e,
                failed: failures,
                total: sweep.replications,
            });
        }
        if failures > 0 {
            log::warn!("{failures} of {} replications failed at e = {e}", sweep.replications);
        }
        let estimators = Estimator::ALL
            .iter()
            .enumerate()
            .map(|(i, &est)| (est, summarize(&outcomes, i, &targets.tau)))
            .collect();
        rows.push(SweepRow {
            e,
            estimators,
            mean_omega: mean(outcomes.iter().map(|o| o.omega)).0,
            taylor_share: mean(outcomes.iter().map(|o| o.taylor as u8 as f64)).0,
            successes: outcomes.len(),
            failures,
        });
    }
    Ok(SweepResult {
        tau: targets.tau,
        subgroup_labels: dgp_labels(),
        rows,
    })
}

fn dgp_labels() -> Vec<String> {
    let schema = super::dgp::dgp_schema();
    crate::data::enumerate_lattice(&schema)
        .expect("static schema")
        .profiles()
        .iter()
        .map(|p| schema.profile_label(p))
        .collect()
}

/// Writes the long-format results table `e,estimator,metric,subgroup,value`.
pub fn write_results<W: std::io::Write>(result: &SweepResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    for row in &result.rows {
        let e = format!("{:?}", row.e);
        let mut put = |est: &str, metric: &str, subgroup: &str, value: f64| {
            w.write_record([e.as_str(), est, metric, subgroup, &format!("{value:?}")])
        };
        for (est, s) in &row.estimators {
            let name = est.name();
            put(name, "risk", "all", s.risk)?;
            put(name, "relative_risk", "all", s.relative_risk)?;
            put(name, "relative_risk_se", "all", s.relative_risk_se)?;
            put(name, "replications", "all", row.successes as f64)?;
            if *est == Estimator::JamesStein {
                put(name, "mean_omega", "all", row.mean_omega)?;
                put(name, "taylor_share", "all", row.taylor_share)?;
            }
            for (k, label) in result.subgroup_labels.iter().enumerate() {
                put(name, "coverage", label, s.coverage[k])?;
                put(name, "mean_variance", label, s.mean_variance[k])?;
                put(name, "mc_variance", label, s.mc_variance[k])?;
                put(name, "mean_ci_length", label, s.mean_ci_length[k])?;
                put(name, "bias", label, s.bias[k])?;
            }
        }
        put("all", "failures", "all", row.failures as f64)?;
    }
    w.flush().map_err(|e| Error::io("<results>", e))?;
    Ok(())
}

pub const RUN_MANIFEST_VERSION: u32 = 1;

/// Plain-text record of everything that determines a sweep's output.
pub fn run_manifest_text(dgp: &DgpConfig, sweep: &SweepConfig) -> String {
    let mut s = String::new();
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
    let _ = writeln!(s, "format_version: {RUN_MANIFEST_VERSION}");
    let _ = writeln!(s, "tool_version: {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "command: simulate");
    let _ = writeln!(s, "seed: {}", sweep.base_seed);
    let _ = writeln!(s, "replications: {}", sweep.replications);
    let _ = writeln!(s, "e_grid: {}", list(&sweep.e_grid));
    let _ = writeln!(s, "weights: {}", sweep.weight_scheme.name());
    if let WeightScheme::Custom(v) = &sweep.weight_scheme {
        let _ = writeln!(s, "custom_weights: {}", list(v));
    }
    let _ = writeln!(s, "alpha: {:?}", sweep.alpha);
    let _ = writeln!(s, "external_variance: {:?}", sweep.external_variance);
    let _ = writeln!(s, "dgp.n: {}", dgp.n);
    let _ = writeln!(s, "dgp.p1: {:?}", dgp.p1);
    let _ = writeln!(s, "dgp.p2: {:?}", dgp.p2);
    let _ = writeln!(s, "dgp.eta: {}", list(&dgp.eta));
    let _ = writeln!(s, "dgp.zeta: {}", list(&dgp.zeta));
    let _ = writeln!(s, "dgp.sigma0: {:?}", dgp.sigma0);
    let _ = writeln!(s, "dgp.sigma1: {:?}", dgp.sigma1);
    let _ = writeln!(s, "dgp.treat_prob: {:?}", dgp.treat_prob);
    s
}
