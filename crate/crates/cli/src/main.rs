//! Command-line harness: model validation, exact computation, coverage
//! reports, solution construction, trajectory simulation, estimation, the
//! verification suite, and convergence studies.
//!
//! Exit codes: 0 on success, 1 when a check or verification row fails,
//! 2 on usage or I/O errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fdvf_core::coverage::{coverage_report, invertibility_report};
use fdvf_core::estimators::{
    build_classes, is_estimate, minimax_fdvf_estimate, mis_estimate, plug_in_estimate,
    prepare_data, ClassSpec, IsMode, MomConfig,
};
use fdvf_core::exact::{brute_force_j, policy_value, Scenario};
use fdvf_core::fdvf::{
    all_constructions, construct_history_weights, verify_fdvf, verify_weights,
};
use fdvf_core::fixtures::{default_suite, generate_fixture, Fixture, FixtureKind, FixtureParams};
use fdvf_core::pomdp::{validate_model, validate_policy, MemorylessPolicy, TabularPomdp, ValidationReport};
use fdvf_core::report::{emit_study_csv, emit_study_json, emit_verify_csv, emit_verify_json, fmt_f64};
use fdvf_core::simulate::{read_dataset, sample_dataset, write_dataset};
use fdvf_core::study::{run_convergence_study, StudyConfig};
use fdvf_core::tol::{DEFAULT_BUDGET, DERIVED_TOL};
use fdvf_core::verify::run_verification_suite;

#[derive(Parser)]
#[command(name = "fdvf", about = "Exact off-policy evaluation lab for tabular POMDPs", version)]
struct Cli {
    /// Root seed for commands that sample or build perturbed classes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Per-step enumeration budget (largest history/future index space).
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Residual tolerance for pass/fail gates that are not pinned by the
    /// verification suite itself.
    #[arg(long, global = true, default_value_t = DERIVED_TOL)]
    tol: f64,
    /// Directory for emitted reports.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// POMDP model JSON file.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation policy JSON file.
    #[arg(long)]
    pie: PathBuf,
    /// Behavior policy JSON file.
    #[arg(long)]
    pib: PathBuf,
}

#[derive(Args)]
struct ClassArgs {
    /// Perturbed members added around each exact solution.
    #[arg(long, default_value_t = 4)]
    class_size: usize,
    /// Perturbation magnitude in parameter space.
    #[arg(long, default_value_t = 0.08)]
    class_eps: f64,
    /// Seed for the class perturbations (defaults to the global seed).
    #[arg(long)]
    class_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Structural validation of a model (and optionally its policies).
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pie: Option<PathBuf>,
        #[arg(long)]
        pib: Option<PathBuf>,
    },
    /// Exact values, cross-checked against the enumeration oracle; optional
    /// dump of the per-step matrices.
    Exact {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Write per-step belief/outcome matrices to algebra.json.
        #[arg(long)]
        dump_algebra: bool,
    },
    /// Coverage coefficients per step: CSV and JSON summary.
    Coverage {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Build every solution construction and report norms and residuals.
    Construct {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Sample behavior-policy trajectories to JSONL.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one estimator on a dataset.
    Estimate {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// One of: minimax, mis, is, pd-is, plugin.
        #[arg(long)]
        method: String,
        #[arg(long)]
        mom_blocks: Option<usize>,
        #[command(flatten)]
        class: ClassArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the verification suite over the built-in fixture set.
    Verify {
        /// Comma-separated fixture kinds (defaults to the full set).
        #[arg(long, value_delimiter = ',')]
        fixtures: Vec<String>,
        /// Also write each fixture's model/policy JSON files to the out dir.
        #[arg(long)]
        emit_fixtures: bool,
    },
    /// Run a convergence study from a JSON config.
    Study {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_scenario(args: &ScenarioArgs, budget: u64) -> Result<Scenario> {
    let model = TabularPomdp::from_file(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let pie = MemorylessPolicy::from_file(&args.pie)
        .with_context(|| format!("loading evaluation policy {}", args.pie.display()))?;
    let pib = MemorylessPolicy::from_file(&args.pib)
        .with_context(|| format!("loading behavior policy {}", args.pib.display()))?;
    Ok(Scenario::build(model, pie, pib, budget)?)
}

fn print_validation(report: &ValidationReport) {
    for check in &report.checks {
        if !check.passed {
            let step = check.step.map_or(String::new(), |h| format!(" step {h}"));
            println!("FAIL {}{}: {}", check.name, step, check.detail);
        }
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {} failed", report.checks.len(), failed);
}

fn write_text(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Validate { model, pie, pib } => {
            let model = TabularPomdp::from_file(&model)?;
            let mut report = validate_model(&model)?;
            if let Some(path) = &pie {
                report.merge(validate_policy(&model, &MemorylessPolicy::from_file(path)?)?);
            }
            if let Some(path) = &pib {
                report.merge(validate_policy(&model, &MemorylessPolicy::from_file(path)?)?);
            }
            if let (Some(pie), Some(pib)) = (&pie, &pib) {
                let scn = Scenario::build(
                    model.clone(),
                    MemorylessPolicy::from_file(pie)?,
                    MemorylessPolicy::from_file(pib)?,
                    cli.budget,
                )?;
                report.merge(invertibility_report(&scn)?);
            }
            print_validation(&report);
            Ok(if report.all_passed() { 0 } else { 1 })
        }
        Command::Exact { scenario, dump_algebra } => {
            let scn = load_scenario(&scenario, cli.budget)?;
            let j_e = scn.true_value();
            let j_b = policy_value(&scn.model, &scn.pi_b);
            println!("J(pi_e) = {}", fmt_f64(j_e));
            println!("J(pi_b) = {}", fmt_f64(j_b));
            let oracle = brute_force_j(&scn.model, &scn.pi_e, cli.budget)?;
            println!("enumeration oracle = {}", fmt_f64(oracle));
            let gap = (j_e - oracle).abs();
            println!("cross-check gap = {}", fmt_f64(gap));
            if dump_algebra {
                let mut steps = Vec::new();
                for alg in &scn.algebras {
                    let beliefs: Vec<Vec<f64>> = (0..alg.history_count())
                        .map(|t| alg.beliefs.column(t).iter().copied().collect())
                        .collect();
                    let outcomes: Vec<Vec<f64>> = (0..alg.future_count())
                        .map(|f| alg.outcomes.column(f).iter().copied().collect())
                        .collect();
                    steps.push(serde_json::json!({
                        "step": alg.step,
                        "beliefs": beliefs,
                        "history_marginal": alg.history_marginal,
                        "behavior_history_marginal": alg.behavior_history_marginal,
                        "outcomes": outcomes,
                        "z": alg.z,
                        "future_marginal": alg.future_marginal,
                        "mean_belief": alg.mean_belief,
                        "reward_to_go": alg.reward_to_go,
                    }));
                }
                let path = write_text(
                    &cli.out_dir,
                    "algebra.json",
                    &serde_json::to_string_pretty(&serde_json::json!({ "steps": steps }))?,
                )?;
                println!("algebra dumped to {}", path.display());
            }
            Ok(if gap <= cli.tol { 0 } else { 1 })
        }
        Command::Coverage { scenario } => {
            let scn = load_scenario(&scenario, cli.budget)?;
            let report = coverage_report(&scn)?;
            let mut csv = String::from(
                "step,c_mu,max_mu,c_f_v,c_f_u,c_f_inf,c_h_2,c_h_inf,sigma_min_outcome,sigma_max_sigma_f,sigma_min_sigma_h,max_latent_ratio,latent_ratio_second_moment\n",
            );
            for cov in &report.per_step {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    cov.step,
                    fmt_f64(report.c_mu),
                    fmt_f64(cov.max_mu),
                    fmt_f64(cov.c_f_v),
                    fmt_f64(cov.c_f_u),
                    fmt_f64(cov.c_f_inf),
                    fmt_f64(cov.c_h_2),
                    fmt_f64(cov.c_h_inf),
                    fmt_f64(cov.sigma_min_outcome),
                    fmt_f64(cov.sigma_max_sigma_f),
                    fmt_f64(cov.sigma_min_sigma_h),
                    fmt_f64(cov.max_latent_ratio),
                    fmt_f64(cov.latent_ratio_second_moment),
                ));
            }
            let csv_path = write_text(&cli.out_dir, "coverage.csv", &csv)?;
            let summary = serde_json::json!({
                "c_mu": report.c_mu,
                "cumulative_weight_bound": report.cumulative_weight_bound,
                "max_c_f_inf": report.max_c_f_inf(),
                "max_c_h_2": report.max_c_h_2(),
                "max_c_h_inf": report.max_c_h_inf(),
            });
            let json_path = write_text(&cli.out_dir, "coverage.json", &serde_json::to_string_pretty(&summary)?)?;
            println!(
                "c_mu = {}, cumulative weight bound = {}",
                fmt_f64(report.c_mu),
                fmt_f64(report.cumulative_weight_bound)
            );
            println!("wrote {} and {}", csv_path.display(), json_path.display());
            Ok(0)
        }
        Command::Construct { scenario } => {
            let scn = load_scenario(&scenario, cli.budget)?;
            let mut entries = Vec::new();
            let mut worst: f64 = 0.0;
            for sol in all_constructions(&scn)? {
                let residual = verify_fdvf(&scn, &sol);
                worst = worst.max(residual);
                println!(
                    "{:<16} sup = {:<12.6} residual = {}",
                    sol.construction.label(),
                    sol.sup_norm,
                    fmt_f64(residual)
                );
                entries.push(serde_json::json!({
                    "construction": sol.construction.label(),
                    "per_step_sup": sol.per_step_sup,
                    "per_step_z_norm": sol.per_step_z_norm,
                    "sup_norm": sol.sup_norm,
                    "residual": residual,
                }));
            }
            let weights = construct_history_weights(&scn)?;
            let matching = verify_weights(&scn, &weights);
            worst = worst.max(matching);
            println!(
                "{:<16} sup = {:<12.6} residual = {}",
                "history_weights",
                weights.sup_norm,
                fmt_f64(matching)
            );
            entries.push(serde_json::json!({
                "construction": "history_weights",
                "per_step_sup": weights.per_step_sup,
                "per_step_behavior_l2": weights.per_step_behavior_l2,
                "sup_norm": weights.sup_norm,
                "residual": matching,
            }));
            let path = write_text(
                &cli.out_dir,
                "constructions.json",
                &serde_json::to_string_pretty(&serde_json::json!({ "constructions": entries }))?,
            )?;
            println!("wrote {}", path.display());
            Ok(if worst <= cli.tol { 0 } else { 1 })
        }
        Command::Simulate { model, policy, n, out } => {
            let model = TabularPomdp::from_file(&model)?;
            let policy = MemorylessPolicy::from_file(&policy)?;
            let dataset = sample_dataset(&model, &policy, n, cli.seed);
            write_dataset(&dataset, &out)?;
            println!("wrote {} trajectories to {}", n, out.display());
            Ok(0)
        }
        Command::Estimate {
            dataset,
            scenario,
            method,
            mom_blocks,
            class,
            out,
        } => {
            let scn = load_scenario(&scenario, cli.budget)?;
            let dataset = read_dataset(&dataset, Some(&scn.model))?;
            let data = prepare_data(&scn, &dataset)?;
            let spec = ClassSpec {
                perturbations: class.class_size,
                magnitude: class.class_eps,
                seed: class.class_seed.unwrap_or(cli.seed),
            };
            let report = match method.as_str() {
                "minimax" => {
                    let (vclass, xiclass, _) = build_classes(&scn, &spec)?;
                    minimax_fdvf_estimate(&scn, &data, &vclass, &xiclass)?
                }
                "mis" => {
                    let (vclass, _, wclass) = build_classes(&scn, &spec)?;
                    let mom = mom_blocks.map(|blocks| MomConfig { blocks });
                    mis_estimate(&scn, &data, &vclass, &wclass, mom)?
                }
                "is" | "pd-is" => {
                    let mode = if method == "is" { IsMode::FullTrajectory } else { IsMode::PerDecision };
                    fdvf_core::estimators::EstimateReport {
                        estimator: method.clone(),
                        estimate: is_estimate(&data, mode),
                        n: data.n,
                        selected_value: None,
                        selected_adversary: None,
                        per_step_losses: vec![],
                        bound: None,
                    }
                }
                "plugin" => {
                    let (vclass, _, _) = build_classes(&scn, &spec)?;
                    fdvf_core::estimators::EstimateReport {
                        estimator: "plugin".into(),
                        estimate: plug_in_estimate(&data, &vclass.tables[0][0]),
                        n: data.n,
                        selected_value: Some(0),
                        selected_adversary: None,
                        per_step_losses: vec![],
                        bound: None,
                    }
                }
                other => anyhow::bail!("unknown method '{other}' (expected minimax|mis|is|pd-is|plugin)"),
            };
            println!("{} estimate = {}", report.estimator, fmt_f64(report.estimate));
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Verify { fixtures, emit_fixtures } => {
            let set: Vec<Fixture> = if fixtures.is_empty() {
                default_suite()?
            } else {
                fixtures
                    .iter()
                    .map(|name| {
                        let kind = FixtureKind::parse(name)?;
                        generate_fixture(kind, &FixtureParams::default(), 101 + cli.seed)
                    })
                    .collect::<fdvf_core::Result<_>>()?
            };
            if emit_fixtures {
                std::fs::create_dir_all(&cli.out_dir)?;
                for fx in &set {
                    write_text(&cli.out_dir, &format!("{}-model.json", fx.name), &fx.model.to_json())?;
                    write_text(&cli.out_dir, &format!("{}-pie.json", fx.name), &fx.pi_e.to_json())?;
                    write_text(&cli.out_dir, &format!("{}-pib.json", fx.name), &fx.pi_b.to_json())?;
                }
            }
            let report = run_verification_suite(&set, cli.budget)?;
            let csv_path = write_text(&cli.out_dir, "verify.csv", &emit_verify_csv(&report))?;
            write_text(&cli.out_dir, "verify.json", &emit_verify_json(&report))?;
            let failures: Vec<_> = report.failures().collect();
            for failure in &failures {
                println!(
                    "FAIL {} on {} step {:?}: residual {} > {}",
                    failure.check,
                    failure.fixture,
                    failure.step,
                    fmt_f64(failure.residual),
                    fmt_f64(failure.tolerance)
                );
            }
            println!(
                "{} rows, {} failures; wrote {}",
                report.rows.len(),
                failures.len(),
                csv_path.display()
            );
            Ok(if failures.is_empty() { 0 } else { 1 })
        }
        Command::Study { config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading study config {}", config.display()))?;
            let config = StudyConfig::from_json(&text)?;
            let result = run_convergence_study(&config)?;
            let csv_path = write_text(&cli.out_dir, "study.csv", &emit_study_csv(&result))?;
            write_text(&cli.out_dir, "study.json", &emit_study_json(&result))?;
            for curve in &result.curves {
                println!(
                    "{:<10} slope = {:+.3}  rmse: {}",
                    curve.estimator,
                    curve.slope,
                    curve
                        .points
                        .iter()
                        .map(|p| format!("n={} {:.5}", p.n, p.rmse))
                        .collect::<Vec<_>>()
                        .join("  ")
                );
            }
            println!("true value = {}", fmt_f64(result.true_value));
            println!("wrote {}", csv_path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
