//! Command implementations behind the `bctm` binary: dataset ingestion,
//! fitting (with B-sweep and profile-likelihood modes), Monte-Carlo
//! simulation, descriptive summaries, NPMLE tables and survival-curve
//! export.
//!
//! Every command returns its report struct so the surfaces are directly
//! testable; the binary is a thin argument-parsing wrapper. Timing is
//! printed, never written into report files, so identical inputs and seed
//! reproduce reports byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::Dataset;
use crate::em::{fit_em, profile_fit, FitResult};
use crate::error::{Error, Result};
use crate::io::config::{InitMode, KnotMode, ProfilesFile, RunConfig, ScenarioFile};
use crate::io::dataset::{read_dataset, ColumnMapping, ParsedDataset, RawTable};
use crate::io::report::{
    read_json, write_curve_files, write_curves_svg, write_json, write_summary_csv, FitReport,
    GroupSummary, NpmleReport, SimulateReport, SummaryReport, SweepRow,
};
use crate::model::{population_survival, BctmParameters, CovariateProfile, KnotGrid};
use crate::npmle::{
    default_beta0_targets, empirical_baseline_hazard, init_pipeline, initial_psi_from_curve,
    loglog_regression_gamma0, solve_beta0_system, turnbull_npmle, CutpointMode,
};
use crate::numeric::{mean, median, sample_sd};
use crate::simulation::{initial_coeffs_perturbed, initial_psi, monte_carlo_study, select_cutpoints_quantile};

/// Arguments of the `fit` command.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub data: PathBuf,
    pub config: PathBuf,
    /// Overrides the configured number of baseline segments.
    pub b_override: Option<usize>,
    /// Fits every B in the inclusive range and reports the AIC table.
    pub sweep_b: Option<(usize, usize)>,
    /// Runs a profile-likelihood scan over these alpha values.
    pub profile_alpha_grid: Option<Vec<f64>>,
    pub seed_override: Option<u64>,
    pub out: Option<PathBuf>,
}

fn build_knots(
    data: &Dataset,
    config: &RunConfig,
    num_segments: usize,
    group_index: Option<usize>,
) -> Result<KnotGrid> {
    match config.knots.mode {
        KnotMode::Quantile => select_cutpoints_quantile(data, num_segments),
        KnotMode::Explicit => {
            KnotGrid::new(config.knots.cutpoints.clone().expect("validated"))
        }
        KnotMode::Inflection => {
            let group = group_index.ok_or_else(|| {
                Error::Config(
                    "inflection knot mode needs the npmle-pipeline init mode (the cut-points \
                     come from its empirical hazard curve)"
                        .into(),
                )
            })?;
            let alpha0 = config.init.alpha0.unwrap_or(0.5);
            let bundle =
                init_pipeline(data, num_segments, CutpointMode::Inflection, alpha0, group)?;
            Ok(bundle.knots)
        }
    }
}

fn group_covariate_index(config: &RunConfig, mapping: &ColumnMapping) -> Result<Option<usize>> {
    match (&config.init.mode, &config.init.group_covariate) {
        (InitMode::NpmlePipeline, Some(name)) => {
            let idx = mapping
                .incidence
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "group covariate '{name}' is not among the incidence columns"
                    ))
                })?;
            Ok(Some(idx))
        }
        _ => Ok(None),
    }
}

fn build_init(
    data: &Dataset,
    config: &RunConfig,
    knots: &KnotGrid,
    seed: u64,
    group_index: Option<usize>,
) -> Result<BctmParameters> {
    let num_segments = knots.num_segments();
    let init = match config.init.mode {
        InitMode::Explicit => BctmParameters::new(
            config.init.alpha.expect("validated"),
            config.init.psi.clone().expect("validated"),
            config.init.beta.clone().expect("validated"),
            config.init.gamma.clone().expect("validated"),
        )?,
        InitMode::SimulationRule => {
            let beta_ref = config
                .init
                .beta_ref
                .clone()
                .unwrap_or_else(|| vec![0.0; data.q1() + 1]);
            let gamma_ref = config
                .init
                .gamma_ref
                .clone()
                .unwrap_or_else(|| vec![0.0; data.q2()]);
            if beta_ref.len() != data.q1() + 1 || gamma_ref.len() != data.q2() {
                return Err(Error::Config(format!(
                    "beta_ref needs length {} and gamma_ref length {}",
                    data.q1() + 1,
                    data.q2()
                )));
            }
            let mut coeffs = initial_coeffs_perturbed(
                &[beta_ref.clone(), gamma_ref].concat(),
                seed,
            );
            let gamma = coeffs.split_off(beta_ref.len());
            BctmParameters::new(0.5, initial_psi(num_segments), coeffs, gamma)?
        }
        InitMode::NpmlePipeline => {
            let group = group_index.expect("validated npmle-pipeline config");
            let alpha0 = config.init.alpha0.unwrap_or(0.5);
            let npmle = turnbull_npmle(data, 1e-8)?;
            let regression = loglog_regression_gamma0(&npmle, data)?;
            let targets = default_beta0_targets(data, group)?;
            let beta0 = solve_beta0_system(&targets, alpha0)?;
            let curve = empirical_baseline_hazard(&npmle, &regression.gamma0, data)?;
            let psi0 = initial_psi_from_curve(&curve, knots);
            BctmParameters::new(alpha0, psi0, beta0, regression.gamma0)?
        }
    };
    init.validate_against(knots)?;
    Ok(init)
}

fn report_rejections(parsed: &ParsedDataset) {
    for issue in &parsed.issues {
        eprintln!("rejected line {}: {}", issue.line, issue.message);
    }
    if !parsed.issues.is_empty() {
        eprintln!(
            "kept {} rows, rejected {}",
            parsed.dataset.len(),
            parsed.issues.len()
        );
    }
}

fn print_fit(fit: &FitResult, names: &[String]) {
    println!(
        "log-likelihood {:.4}, AIC {:.4}, {} EM iterations, converged: {}",
        fit.loglik, fit.aic, fit.n_em_iters, fit.converged
    );
    println!("{:<10} {:>12} {:>12}", "parameter", "estimate", "std.error");
    let values = fit.theta_hat.to_vec();
    for (j, name) in names.iter().enumerate() {
        let se = fit.se[j]
            .map(|s| format!("{s:>12.4}"))
            .unwrap_or_else(|| format!("{:>12}", "NA"));
        let flag = if fit.boundary[j] { " (boundary)" } else { "" };
        println!("{name:<10} {:>12.4} {se}{flag}", values[j]);
    }
}

/// Fits the model to a dataset file; supports a `B` sweep and a
/// profile-likelihood scan. Writes a JSON report when `out` is given.
pub fn cmd_fit(options: &FitOptions) -> Result<FitReport> {
    let started = Instant::now();
    let mut config = RunConfig::load(&options.config)?;
    if let Some(seed) = options.seed_override {
        config.seed = Some(seed);
    }
    let (parsed, mapping) = read_dataset(&options.data, config.columns.as_ref())?;
    report_rejections(&parsed);
    let data = &parsed.dataset;
    let seed = config.seed.unwrap_or(0);
    let group_index = group_covariate_index(&config, &mapping)?;

    let b_values: Vec<usize> = match (options.sweep_b, options.b_override) {
        (Some((lo, hi)), _) => {
            if config.knots.mode == KnotMode::Explicit {
                return Err(Error::Config(
                    "a B sweep needs a knot rule, not explicit cut-points".into(),
                ));
            }
            if config.init.mode == InitMode::Explicit {
                return Err(Error::Config(
                    "a B sweep needs an init rule that adapts to B; an explicit                      initial psi pins the number of segments"
                        .into(),
                ));
            }
            if lo < 1 || hi < lo {
                return Err(Error::Config(format!("invalid sweep range {lo}..{hi}")));
            }
            (lo..=hi).collect()
        }
        (None, Some(b)) => vec![b],
        (None, None) => match config.knots.mode {
            KnotMode::Explicit => {
                vec![config.knots.cutpoints.as_ref().expect("validated").len() - 1]
            }
            _ => vec![config.knots.b.ok_or_else(|| {
                Error::Config("knot specification needs `b`".into())
            })?],
        },
    };

    let mut sweep_rows = Vec::with_capacity(b_values.len());
    let mut best: Option<(KnotGrid, BctmParameters, FitResult)> = None;
    for &b in &b_values {
        let knots = build_knots(data, &config, b, group_index)?;
        let init = build_init(data, &config, &knots, seed, group_index)?;
        let fit = fit_em(data, &knots, &init, &config.em)?;
        println!(
            "B = {b}: log-likelihood {:.4}, p = {}, AIC {:.4}",
            fit.loglik, fit.n_params, fit.aic
        );
        sweep_rows.push(SweepRow { b, loglik: fit.loglik, n_params: fit.n_params, aic: fit.aic });
        if best.as_ref().is_none_or(|(_, _, f)| fit.aic < f.aic) {
            best = Some((knots, init, fit));
        }
    }
    let (knots, init, mut fit) = best.expect("at least one B value");

    let mut profile_table = None;
    if let Some(grid) = &options.profile_alpha_grid {
        let profile = profile_fit(data, &knots, &init, &config.em, grid)?;
        println!("profile scan over {} alpha values:", grid.len());
        for point in &profile.table {
            match point.loglik {
                Some(ll) => println!("  alpha {:.3}: log-likelihood {ll:.4}", point.alpha),
                None => println!(
                    "  alpha {:.3}: failed ({})",
                    point.alpha,
                    point.error.as_deref().unwrap_or("unknown")
                ),
            }
        }
        profile_table = Some(profile.table);
        fit = profile.best;
    }

    let names = fit.theta_hat.names();
    print_fit(&fit, &names);
    println!("fit finished in {:.2} s", started.elapsed().as_secs_f64());

    let report = FitReport {
        command: "fit".into(),
        dataset: options.data.display().to_string(),
        n_observations: data.len(),
        rejected_rows: parsed.issues.clone(),
        parameter_names: names,
        knots,
        init,
        fit,
        b_sweep: (sweep_rows.len() > 1).then_some(sweep_rows),
        profile: profile_table,
    };
    if let Some(out) = &options.out {
        write_json(&report, out)?;
        println!("report written to {}", out.display());
    }
    Ok(report)
}

/// Runs the Monte-Carlo study described by a scenario file.
pub fn cmd_simulate(scenario_path: &Path, out: Option<&Path>) -> Result<SimulateReport> {
    let started = Instant::now();
    let file = ScenarioFile::load(scenario_path)?;
    let mc = monte_carlo_study(&file.scenario, &file.em)?;
    println!(
        "{} of {} replications aggregated ({} failed, {} screened out)",
        mc.n_converged, mc.n_requested, mc.n_failed, mc.n_excluded_wald
    );
    println!(
        "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "parameter", "EST", "SE", "BIAS", "RMSE", "CP"
    );
    let cell = |v: Option<f64>| v.map(|x| format!("{x:>10.4}")).unwrap_or_else(|| format!("{:>10}", "-"));
    for row in &mc.rows {
        println!(
            "{:<10} {:>10.4} {} {} {} {}",
            row.name,
            row.est,
            cell(row.se),
            cell(row.bias),
            cell(row.rmse),
            cell(row.cp),
        );
    }
    println!(
        "mean log-likelihood {:.4}, mean AIC {:.4}",
        mc.mean_loglik, mc.mean_aic
    );
    println!(
        "mean fractions: cured {:.4}, susceptible-censored {:.4}, right-censored {:.4}",
        mc.mean_cured_fraction,
        mc.mean_susceptible_censored_fraction,
        mc.mean_right_censored_fraction
    );
    println!("study finished in {:.2} s", started.elapsed().as_secs_f64());

    let report = SimulateReport { command: "simulate".into(), scenario: file.scenario, report: mc };
    if let Some(out) = out {
        write_json(&report, out)?;
        println!("report written to {}", out.display());
    }
    Ok(report)
}

/// Descriptive per-group summary of a dataset.
pub fn cmd_summary(
    data_path: &Path,
    group_column: &str,
    config_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<SummaryReport> {
    let config = config_path.map(RunConfig::load).transpose()?;
    let table = RawTable::read(data_path)?;
    let mapping = match config.as_ref().and_then(|c| c.columns.clone()) {
        Some(m) => m,
        None => ColumnMapping::infer(&table.headers)?,
    };
    let parsed = crate::io::dataset::parse_dataset(&table, &mapping)?;
    report_rejections(&parsed);

    let group_idx = table.column_index(group_column)?;
    let group_values: Vec<String> = parsed
        .kept_rows
        .iter()
        .map(|&r| table.rows[r][group_idx].clone())
        .collect();
    let mut labels: Vec<String> = group_values.clone();
    labels.sort();
    labels.dedup();

    // covariate columns: incidence then latency, first occurrence wins
    let mut covariate_names: Vec<String> = Vec::new();
    for name in mapping.incidence.iter().chain(mapping.latency.iter()) {
        if !covariate_names.contains(name) {
            covariate_names.push(name.clone());
        }
    }
    let covariate_values: Vec<Vec<f64>> = covariate_names
        .iter()
        .map(|name| table.numeric_column(name, &parsed.kept_rows))
        .collect::<Result<_>>()?;

    let summarize = |keep: &dyn Fn(usize) -> bool, label: &str| -> GroupSummary {
        let rows: Vec<usize> = (0..parsed.dataset.len()).filter(|&i| keep(i)).collect();
        let observations = parsed.dataset.observations();
        let n = rows.len();
        let events: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| observations[i].event)
            .collect();
        let midpoints: Vec<f64> = events
            .iter()
            .map(|&i| 0.5 * (observations[i].left + observations[i].right))
            .collect();
        let covariates = covariate_names
            .iter()
            .zip(&covariate_values)
            .map(|(name, values)| {
                let group_vals: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
                (name.clone(), mean(&group_vals), sample_sd(&group_vals))
            })
            .collect();
        GroupSummary {
            group: label.to_string(),
            n,
            n_events: events.len(),
            event_percent: if n == 0 { 0.0 } else { 100.0 * events.len() as f64 / n as f64 },
            median_event_midpoint: (!midpoints.is_empty()).then(|| median(&midpoints)),
            covariates,
        }
    };

    let mut groups: Vec<GroupSummary> = labels
        .iter()
        .map(|label| summarize(&|i| &group_values[i] == label, label))
        .collect();
    groups.push(summarize(&|_| true, "Total"));

    println!(
        "{:<10} {:>6} {:>8} {:>10} {:>24}",
        "group", "n", "events", "event %", "median event midpoint"
    );
    for g in &groups {
        let median = g
            .median_event_midpoint
            .map(|m| format!("{m:>24.4}"))
            .unwrap_or_else(|| format!("{:>24}", "NA"));
        println!(
            "{:<10} {:>6} {:>8} {:>10.2} {median}",
            g.group, g.n, g.n_events, g.event_percent
        );
        for (name, mean, sd) in &g.covariates {
            let sd = sd.map(|s| format!("{s:.4}")).unwrap_or_else(|| "NA".into());
            println!("    {name}: mean {mean:.4} (sd {sd})");
        }
    }

    let report = SummaryReport {
        command: "summary".into(),
        dataset: data_path.display().to_string(),
        group_column: group_column.to_string(),
        median_rule: "median of finite event-interval midpoints, event rows only".into(),
        groups,
    };
    if let Some(out) = out {
        write_summary_csv(&report, out)?;
        println!("summary written to {}", out.display());
    }
    Ok(report)
}

/// Samples fitted population survival curves on a uniform grid and writes
/// delimited curve data plus an SVG rendering.
pub fn cmd_curves(
    fit_report_path: &Path,
    profiles_path: &Path,
    out_prefix: &Path,
) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let report: FitReport = read_json(fit_report_path)?;
    let profiles = ProfilesFile::load(profiles_path)?;
    let theta = &report.fit.theta_hat;
    let knots = &report.knots;
    let q1 = theta.beta.len() - 1;
    let q2 = theta.gamma.len();

    let mut curves = Vec::with_capacity(profiles.profiles.len());
    for profile in &profiles.profiles {
        if profile.z.len() != q1 || profile.x.len() != q2 {
            return Err(Error::Config(format!(
                "profile '{}' needs {q1} incidence and {q2} latency covariates",
                profile.name
            )));
        }
        let cov = CovariateProfile::from_covariates(&profile.z, &profile.x)?;
        let upper = knots.upper();
        let n = profiles.grid_points;
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let t = upper * i as f64 / (n - 1) as f64;
            points.push((t, population_survival(t, &cov, theta, knots)?));
        }
        let pi = crate::model::cure_rate(theta, cov.z());
        println!(
            "{}: survival at {:.3} is {:.4}; estimated cure rate {:.4}",
            profile.name,
            upper,
            points.last().unwrap().1,
            pi
        );
        curves.push((profile.name.clone(), points));
    }

    let files = write_curve_files(out_prefix, &curves)?;
    for f in &files {
        println!("curve data written to {}", f.display());
    }
    let svg_path = out_prefix.with_extension("svg");
    write_curves_svg(&svg_path, &curves)?;
    println!("figure written to {}", svg_path.display());
    Ok(curves)
}

/// Turnbull NPMLE table for a dataset.
pub fn cmd_npmle(
    data_path: &Path,
    config_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<NpmleReport> {
    let config = config_path.map(RunConfig::load).transpose()?;
    let mapping = config.as_ref().and_then(|c| c.columns.clone());
    let (parsed, _) = read_dataset(data_path, mapping.as_ref())?;
    report_rejections(&parsed);
    let estimate = turnbull_npmle(&parsed.dataset, 1e-8)?;

    println!("{:>12} {:>12} {:>12}", "lower", "upper", "mass");
    for (s, m) in estimate.support.iter().zip(&estimate.mass) {
        println!("{:>12.4} {:>12.4} {:>12.6}", s.lower, s.upper, m);
    }
    let total: f64 = estimate.mass.iter().sum();
    println!("total mass {total:.6}");

    let report = NpmleReport {
        command: "npmle".into(),
        dataset: data_path.display().to_string(),
        n_observations: parsed.dataset.len(),
        rejected_rows: parsed.issues.clone(),
        survival_curve: estimate.survival_curve(),
        estimate,
    };
    if let Some(out) = out {
        write_json(&report, out)?;
        println!("report written to {}", out.display());
    }
    Ok(report)
}
