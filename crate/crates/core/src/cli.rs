//! Command-line front end: `estimate`, `simulate` and `report`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    infer_schema, load_manifest, load_trial, Covariate, CovariateSchema, TrialDataset,
};
use crate::design::WeightScheme;
use crate::error::{Error, Result};
use crate::estimators::contrast;
use crate::pipeline::{analyze, Analysis, Estimator};
use crate::shrinkage::wald_ci;
use crate::simulation::{run_manifest_text, run_sweep, write_results, DgpConfig, SweepConfig};

#[derive(Debug, Parser)]
#[command(
    name = "subgroup-shrink",
    version,
    about = "Subgroup treatment effects shrunk toward coarse external estimates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit every estimator to a trial file and an external manifest.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo incompatibility sweep.
    Simulate(SimulateArgs),
    /// Print aligned tables from an estimate or sweep results file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub trial: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Covariate schema (`name: level,level,...` per line); inferred from the trial file if absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// `prevalence`, `uniform` or `custom:<path>`.
    #[arg(long, default_value = "prevalence")]
    pub weights: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Comma-separated subset of unconstrained,constrained,james_stein,empirical_bayes,generalized_ridge.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub out: PathBuf,
    /// Recorded in the run manifest; estimation itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Comma-separated values or `start:stop:step`.
    #[arg(long, default_value = "0:0.1:0.002")]
    pub e_grid: String,
    #[arg(long, default_value_t = 5000)]
    pub reps: usize,
    #[arg(long, default_value_t = 20250701)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value = "prevalence")]
    pub weights: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub external_variance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// An `estimates.csv` or `results.csv` file.
    #[arg(long)]
    pub input: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Report(a) => cmd_report(&a).map(|text| print!("{text}")),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            let cat = err.category();
            eprintln!("error[{}]: {err}", cat.label());
            cat.exit_code()
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("no such file: {}", path.display())))
    }
}

pub fn parse_weights(spec: &str) -> Result<WeightScheme> {
    match spec {
        "prevalence" => Ok(WeightScheme::Prevalence),
        "uniform" => Ok(WeightScheme::Uniform),
        other => {
            let path = other.strip_prefix("custom:").ok_or_else(|| {
                Error::Config(format!(
                    "--weights must be prevalence, uniform or custom:<path>, got `{other}`"
                ))
            })?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let values = text
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Weights(format!("`{s}` is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WeightScheme::Custom(values))
        }
    }
}

/// Reads `name: level,level,...` lines.
pub fn load_schema(path: &Path) -> Result<CovariateSchema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut covs = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (name, levels) = line
            .split_once(':')
            .ok_or_else(|| Error::Schema(format!("expected `name: levels`, got `{line}`")))?;
        covs.push(Covariate {
            name: name.trim().to_string(),
            levels: levels.split(',').map(|l| l.trim().to_string()).collect(),
        });
    }
    CovariateSchema::new(covs)
}

pub fn parse_e_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse e grid `{spec}`"));
    if let [start, stop, step] = spec.split(':').collect::<Vec<_>>()[..] {
        let (start, stop, step): (f64, f64, f64) = (
            start.trim().parse().map_err(|_| bad())?,
            stop.trim().parse().map_err(|_| bad())?,
            step.trim().parse().map_err(|_| bad())?,
        );
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // integer multiples keep grid points free of accumulated rounding
        return Ok((0..=count).map(|i| start + i as f64 * step).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn parse_estimators(list: &Option<Vec<String>>) -> Result<Vec<Estimator>> {
    match list {
        None => Ok(Estimator::ALL.to_vec()),
        Some(names) => {
            let mut out: Vec<Estimator> =
                names.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            out.sort();
            out.dedup();
            if out.is_empty() {
                return Err(Error::Config("--estimators is empty".into()));
            }
            Ok(out)
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub const ESTIMATES_HEADER: [&str; 7] =
    ["subgroup", "estimator", "estimate", "variance", "ci_low", "ci_high", "n_g"];

pub fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    check_alpha(args.alpha)?;
    require_file(&args.trial)?;
    require_file(&args.manifest)?;
    let schema = match &args.schema {
        Some(p) => {
            require_file(p)?;
            load_schema(p)?
        }
        None => infer_schema(&args.trial)?,
    };
    let scheme = parse_weights(&args.weights)?;
    let selected = parse_estimators(&args.estimators)?;
    let data = load_trial(&args.trial, &schema)?;
    let manifest = load_manifest(&args.manifest, &schema)?;
    let analysis = analyze(&data, &manifest, &scheme, &selected)?;

    for w in &analysis.james_stein.warnings {
        eprintln!("warning[{}]: {w}", w.code());
    }
    create_dir(&args.out)?;
    write_file(
        &args.out.join("estimates.csv"),
        &estimates_csv(&analysis, &selected, args.alpha)?,
    )?;
    write_file(&args.out.join("contrasts.csv"), &contrasts_csv(&analysis, &selected)?)?;
    write_file(
        &args.out.join("summary.txt"),
        summary_text(&analysis, &data, &manifest.source_label, args).as_bytes(),
    )?;
    Ok(())
}

fn estimates_csv(analysis: &Analysis, selected: &[Estimator], alpha: f64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ESTIMATES_HEADER)?;
    let d = &analysis.design;
    for &est in selected {
        let fit = analysis
            .estimator(est)
            .ok_or_else(|| Error::Config(format!("{est} was not fitted")))?;
        let ci = wald_ci(fit.tau(), fit.var_tau(), alpha)?;
        for (g, label) in d.subgroup_labels.iter().enumerate() {
            w.write_record([
                label.clone(),
                est.name().to_string(),
                format!("{:?}", fit.tau()[g]),
                format!("{:?}", fit.var_tau()[(g, g)]),
                format!("{:?}", ci[g].0),
                format!("{:?}", ci[g].1),
                d.subgroup_counts[g].to_string(),
            ])?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::io("<estimates>", e.into_error()))
}

fn contrasts_csv(analysis: &Analysis, selected: &[Estimator]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "subgroup_a", "subgroup_b", "difference", "variance", "p_value"])?;
    let labels = &analysis.design.subgroup_labels;
    let g = labels.len();
    for &est in selected {
        let fit = analysis.estimator(est).expect("selected estimators are fitted");
        for a in 0..g {
            for b in a + 1..g {
                let mut weights = vec![0.0; g];
                weights[a] = 1.0;
                weights[b] = -1.0;
                let c = contrast(fit, &weights)?;
                w.write_record([
                    est.name().to_string(),
                    labels[a].clone(),
                    labels[b].clone(),
                    format!("{:?}", c.estimate),
                    format!("{:?}", c.variance),
                    format!("{:?}", c.p_value),
                ])?;
            }
        }
    }
    w.into_inner()
        .map_err(|e| Error::io("<contrasts>", e.into_error()))
}

fn summary_text(analysis: &Analysis, data: &TrialDataset, source: &str, args: &EstimateArgs) -> String {
    let js = &analysis.james_stein;
    let mut s = String::new();
    let _ = writeln!(s, "format_version: 1");
    let _ = writeln!(s, "tool_version: {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "command: estimate");
    let _ = writeln!(s, "trial: {}", args.trial.display());
    let _ = writeln!(s, "manifest: {}", args.manifest.display());
    let _ = writeln!(s, "manifest_source: {source}");
    let _ = writeln!(s, "seed: {}", args.seed);
    let _ = writeln!(s, "weights: {}", analysis.weights.scheme.name());
    let _ = writeln!(s, "alpha: {:?}", args.alpha);
    let _ = writeln!(s, "n: {}", data.n());
    let _ = writeln!(s, "p: {}", analysis.design.p());
    let _ = writeln!(s, "q: {}", analysis.constraints.q());
    let _ = writeln!(s, "nu: {:?}", js.nu);
    let _ = writeln!(s, "feasible: {}", js.feasible);
    let _ = writeln!(s, "quad_form: {:?}", js.quad_form);
    let _ = writeln!(s, "omega_raw: {:?}", js.omega_raw);
    let _ = writeln!(s, "omega: {:?}", js.omega);
    let _ = writeln!(s, "variance_branch: {}", js.variance_branch.name());
    let codes: Vec<&str> = js.warnings.iter().map(|w| w.code()).collect();
    let _ = writeln!(s, "warnings: {}", codes.join(","));
    let _ = writeln!(
        s,
        "reconstructions: {}",
        Estimator::ALL
            .iter()
            .filter(|e| e.is_reconstruction())
            .map(|e| e.name())
            .collect::<Vec<_>>()
            .join(",")
    );
    s
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    check_alpha(args.alpha)?;
    let sweep = SweepConfig {
        e_grid: parse_e_grid(&args.e_grid)?,
        replications: args.reps,
        base_seed: args.seed,
        weight_scheme: parse_weights(&args.weights)?,
        alpha: args.alpha,
        external_variance: args.external_variance,
        workers: args.workers,
    };
    let dgp = DgpConfig {
        n: args.n,
        ..DgpConfig::default()
    };
    dgp.validate()?;
    sweep.validate()?;
    create_dir(&args.out)?;
    let result = run_sweep(&dgp, &sweep)?;
    let mut buf = Vec::new();
    write_results(&result, &mut buf)?;
    write_file(&args.out.join("results.csv"), &buf)?;
    write_file(
        &args.out.join("run_manifest.txt"),
        run_manifest_text(&dgp, &sweep).as_bytes(),
    )?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    require_file(path)?;
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Results(format!("{} has no rows", path.display())));
    }
    Ok((header, rows))
}

fn number(field: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Results(format!("`{field}` is not a number")))
}

pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let (header, rows) = read_table(&args.input)?;
    let cols: Vec<&str> = header.iter().collect();
    if cols == ESTIMATES_HEADER {
        estimate_report(&rows)
    } else if cols == crate::simulation::RESULTS_HEADER {
        sweep_report(&rows)
    } else {
        Err(Error::Results(format!(
            "unrecognized header `{}`",
            cols.join(",")
        )))
    }
}

fn estimate_report(rows: &[csv::StringRecord]) -> Result<String> {
    struct Row {
        subgroup: String,
        estimator: String,
        estimate: f64,
        lo: f64,
        hi: f64,
        n_g: String,
    }
    let mut parsed = Vec::with_capacity(rows.len());
    for r in rows {
        if r.len() != ESTIMATES_HEADER.len() {
            return Err(Error::Results(format!("row with {} fields", r.len())));
        }
        parsed.push(Row {
            subgroup: r[0].to_string(),
            estimator: r[1].to_string(),
            estimate: number(&r[2])?,
            lo: number(&r[4])?,
            hi: number(&r[5])?,
            n_g: r[6].to_string(),
        });
    }
    let reference: BTreeMap<&str, f64> = parsed
        .iter()
        .filter(|r| r.estimator == Estimator::Unconstrained.name())
        .map(|r| (r.subgroup.as_str(), r.hi - r.lo))
        .collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<18} {:>6} {:>11} {:>24} {:>10}",
        "subgroup", "estimator", "n_g", "estimate", "95% interval", "len/uc"
    );
    for r in &parsed {
        let ratio = reference
            .get(r.subgroup.as_str())
            .filter(|l| **l > 0.0)
            .map(|l| format!("{:.4}", (r.hi - r.lo) / l))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<24} {:<18} {:>6} {:>11.4} {:>24} {:>10}",
            r.subgroup,
            r.estimator,
            r.n_g,
            r.estimate,
            format!("[{:.4}, {:.4}]", r.lo, r.hi),
            ratio
        );
    }
    Ok(out)
}

fn sweep_report(rows: &[csv::StringRecord]) -> Result<String> {
    // (e, estimator) -> metric -> values
    let mut table: BTreeMap<(u64, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut grid: BTreeMap<u64, f64> = BTreeMap::new();
    for r in rows {
        if r.len() != 5 {
            return Err(Error::Results(format!("row with {} fields", r.len())));
        }
        let e = number(&r[0])?;
        let key = e.to_bits();
        grid.insert(key, e);
        table
            .entry((key, r[1].to_string()))
            .or_default()
            .entry(r[2].to_string())
            .or_default()
            .push(number(&r[4])?);
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let names: Vec<&str> = Estimator::ALL.iter().map(|e| e.name()).collect();

    let mut out = String::new();
    let _ = writeln!(out, "relative target risk (vs unconstrained)");
    let _ = write!(out, "{:>8}", "e");
    for n in &names {
        let _ = write!(out, " {:>18}", n);
    }
    let _ = writeln!(out, " {:>10}", "js_omega");
    for (key, e) in &grid {
        let _ = write!(out, "{:>8.4}", e);
        for n in &names {
            let v = table
                .get(&(*key, n.to_string()))
                .and_then(|m| m.get("relative_risk"))
                .map(|v| format!("{:.4}", avg(v)))
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {:>18}", v);
        }
        let omega = table
            .get(&(*key, Estimator::JamesStein.name().to_string()))
            .and_then(|m| m.get("mean_omega"))
            .map(|v| format!("{:.4}", avg(v)))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(out, " {:>10}", omega);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "mean Wald coverage across subgroups (min..max)");
    let _ = write!(out, "{:>8}", "e");
    for n in &names {
        let _ = write!(out, " {:>24}", n);
    }
    let _ = writeln!(out);
    for (key, e) in &grid {
        let _ = write!(out, "{:>8.4}", e);
        for n in &names {
            let v = table
                .get(&(*key, n.to_string()))
                .and_then(|m| m.get("coverage"))
                .map(|v| {
                    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    format!("{:.4} ({:.3}..{:.3})", avg(v), lo, hi)
                })
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {:>24}", v);
        }
        let _ = writeln!(out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e_grid_forms() {
        assert_eq!(parse_e_grid("0,0.1").unwrap(), vec![0.0, 0.1]);
        let g = parse_e_grid("0:0.1:0.002").unwrap();
        assert_eq!(g.len(), 51);
        assert_eq!(g[50], 50.0 * 0.002);
        assert!(parse_e_grid("0:x:1").is_err());
        assert!(parse_e_grid("0:1:0").is_err());
    }

    #[test]
    fn weight_flags() {
        assert_eq!(parse_weights("prevalence").unwrap(), WeightScheme::Prevalence);
        assert_eq!(parse_weights("uniform").unwrap(), WeightScheme::Uniform);
        assert!(parse_weights("bogus").is_err());
    }

    #[test]
    fn estimator_selection() {
        let sel = parse_estimators(&Some(vec!["js".into(), "uc".into(), "js".into()])).unwrap();
        assert_eq!(sel, vec![Estimator::Unconstrained, Estimator::JamesStein]);
        assert!(parse_estimators(&Some(vec!["nope".into()])).is_err());
    }
}
