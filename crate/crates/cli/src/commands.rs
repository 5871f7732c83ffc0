use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;
use switchstab_core::export::{condition_json, ensemble_json, solution_json};
use switchstab_core::linalg::is_hurwitz;
use switchstab_core::model_file::{ModelFile, ModelFileError};
use switchstab_core::simulator::{quantile, simulate_path, Calibration};
use switchstab_core::{
    check_pairwise_condition, cross_check_generator, run_ensemble, solve_coupled_riccati, ConditionReport, ControlLaw,
    ControlPolicy, EnsembleOptions, GeneratorCheck, MixingEstimate, SimConfig, SimError,
};

use crate::output::{eig_table, write_json, write_text, Console};
use crate::{Cli, DiagnoseArgs, Failure, SimulateArgs, SolveArgs, SolverArgs, EXIT_CONDITION, EXIT_FAILURE, EXIT_OK};

/// Threshold on per-path exponents reported in the simulation summary.
const EXPONENT_LEVEL: f64 = 0.05;
const CROSS_CHECK_THETAS: [f64; 2] = [1.0, 10.0];

fn load(path: &Path, console: &Console) -> Result<ModelFile, Failure> {
    ModelFile::load(path).map_err(|e| {
        if let ModelFileError::Invalid(issues) = &e {
            for issue in issues {
                console.error(&issue.to_string());
            }
        }
        Failure::Failed(anyhow!("{}: {}", path.display(), summary(&e)))
    })
}

fn summary(e: &ModelFileError) -> String {
    match e {
        ModelFileError::Invalid(issues) => format!("{} problem(s) found", issues.len()),
        other => other.to_string(),
    }
}

pub fn validate(path: &Path, console: &Console) -> Result<i32, Failure> {
    let mf = match load(path, console) {
        Ok(mf) => mf,
        Err(Failure::Failed(e)) => {
            console.error(&format!("{e:#}"));
            return Ok(EXIT_FAILURE);
        }
        Err(other) => return Err(other),
    };
    let (m, n, d) = (mf.modes.m(), mf.modes.n(), mf.modes.d());
    console.say(&format!("{}: valid ({m} modes, n = {n}, d = {d})", path.display()));
    if !mf.gen.is_irreducible() {
        console.warn(&format!(
            "generator is reducible ({} closed classes)",
            mf.gen.closed_classes()
        ));
    }
    for i in 0..m {
        let stable = if is_hurwitz(mf.modes.a(i)) {
            "Hurwitz"
        } else {
            "not Hurwitz"
        };
        console.say(&format!("  mode {i}: A {stable}"));
    }
    Ok(EXIT_OK)
}

fn check_solver(args: &SolverArgs) -> Result<(), Failure> {
    if args.tol.is_nan() || args.tol <= 0.0 {
        return Err(Failure::Usage(format!("--tol must be positive, got {}", args.tol)));
    }
    if args.max_iter == 0 {
        return Err(Failure::Usage("--max-iter must be at least 1".into()));
    }
    Ok(())
}

struct Synthesis {
    law: ControlLaw,
    report: ConditionReport,
}

fn synthesize(mf: &ModelFile, args: &SolverArgs, out: Option<&Path>, console: &Console) -> Result<Synthesis, Failure> {
    let sol = solve_coupled_riccati(&mf.modes, &mf.cost, &mf.gen, args.tol, args.max_iter)
        .context("coupled Riccati solve failed")?;
    let law = ControlLaw::new(&sol, &mf.modes, &mf.cost);
    let report = check_pairwise_condition(&sol, &mf.modes, &mf.cost);
    if let Some(dir) = out {
        write_json(dir, "solution.json", &solution_json(&sol, &law))?;
        write_json(dir, "condition.json", &condition_json(&report))?;
    }
    console.say(&format!(
        "converged in {} iterations, max residual {:.3e}, gamma = {:.6}",
        sol.iterations,
        sol.max_residual(),
        report.gamma
    ));
    Ok(Synthesis { law, report })
}

fn report_condition(report: &ConditionReport, console: &Console) {
    let table = eig_table(&report.pairwise_min_eig);
    if report.satisfied {
        console.say("pairwise condition satisfied; minimum eigenvalues:");
        console.say(&table);
    } else {
        console.error("pairwise condition fails; minimum eigenvalues:");
        eprintln!("{table}");
    }
}

pub fn solve(args: &SolveArgs, cli: &Cli, console: &Console) -> Result<i32, Failure> {
    check_solver(&args.solver)?;
    let mf = load(&args.model, console)?;
    let syn = synthesize(&mf, &args.solver, Some(&cli.out), console)?;
    report_condition(&syn.report, console);
    console.say(&format!("wrote {}", cli.out.display()));
    Ok(if syn.report.satisfied { EXIT_OK } else { EXIT_CONDITION })
}

fn sim_config(mf: &ModelFile, law: ControlLaw, seed: u64) -> SimConfig {
    let s = &mf.simulation;
    let mut cfg = SimConfig::new(
        mf.modes.clone(),
        mf.cost.clone(),
        mf.gen.clone(),
        ControlPolicy::CertaintyEquivalent(law),
        s.x0.clone(),
        s.phi0.clone(),
        s.horizon,
        seed,
    );
    cfg.dt = s.dt;
    cfg.alpha0 = s.alpha0;
    cfg.explosion_radius = s.explosion_radius;
    cfg
}

fn write_path_error(out: &Path, err: &SimError) -> anyhow::Result<()> {
    let detail = match err {
        SimError::Path { index, source } => json!({ "path": index, "error": source.to_string() }),
        other => json!({ "path": null, "error": other.to_string() }),
    };
    write_json(out, "errors.json", &detail)
}

pub fn simulate(args: &SimulateArgs, cli: &Cli, console: &Console) -> Result<i32, Failure> {
    check_solver(&args.solver)?;
    let mf = load(&args.model, console)?;
    let horizon = args.horizon.unwrap_or(mf.simulation.horizon);
    let dt = args.dt.unwrap_or(mf.simulation.dt);
    let paths = args.paths.unwrap_or(mf.simulation.paths);
    if !horizon.is_finite() || horizon <= 0.0 || !dt.is_finite() || dt <= 0.0 {
        return Err(Failure::Usage(format!(
            "T and dt must be positive (T = {horizon}, dt = {dt})"
        )));
    }
    if dt > horizon {
        return Err(Failure::Usage(format!("dt = {dt} exceeds T = {horizon}")));
    }
    if paths == 0 {
        return Err(Failure::Usage("--paths must be at least 1".into()));
    }
    if args.radius.is_nan() || args.radius <= 0.0 {
        return Err(Failure::Usage(format!(
            "--radius must be positive, got {}",
            args.radius
        )));
    }

    let syn = synthesize(&mf, &args.solver, None, console)?;
    if !syn.report.satisfied {
        report_condition(&syn.report, console);
        if !args.force {
            return Ok(EXIT_CONDITION);
        }
        console.warn("simulating an uncertified controller (--force)");
    }

    let mut cfg = sim_config(&mf, syn.law, cli.seed.unwrap_or(mf.simulation.seed));
    cfg.horizon = horizon;
    cfg.dt = dt;
    let checkpoints: Vec<f64> = [8.0, 4.0, 2.0, 1.0].iter().map(|k| horizon / k).collect();
    let mut opts = EnsembleOptions::new(paths, checkpoints);
    opts.return_radius = Some(args.radius);
    let report = match run_ensemble(&cfg, &opts) {
        Ok(report) => report,
        Err(e) => {
            write_path_error(&cli.out, &e)?;
            return Err(Failure::Failed(
                anyhow!(e).context("simulation failed (details in errors.json)"),
            ));
        }
    };
    write_json(&cli.out, "ensemble.json", &ensemble_json(&report))?;
    for i in 0..args.save_paths.min(paths) {
        let traj = simulate_path(&cfg, i as u64).with_context(|| format!("re-simulating path {i}"))?;
        write_text(&cli.out, &format!("path_{i}.csv"), &traj.to_csv())?;
        write_text(&cli.out, &format!("chain_{i}.csv"), &traj.chain.to_csv())?;
    }

    let exps = &report.lyap_terminal;
    let below = exps.iter().filter(|&&e| e <= EXPONENT_LEVEL).count() as f64 / exps.len() as f64;
    console.say(&format!("{paths} paths, T = {horizon}, dt = {dt}, seed = {}", cfg.seed));
    console.say(&format!(
        "exponent (1/T) log|X(T)|: q05 {:.4} q25 {:.4} median {:.4} q75 {:.4} q95 {:.4}",
        quantile(exps, 0.05),
        quantile(exps, 0.25),
        quantile(exps, 0.5),
        quantile(exps, 0.75),
        quantile(exps, 0.95)
    ));
    console.say(&format!("fraction with exponent <= {EXPONENT_LEVEL}: {:.3}", below));
    console.say(&format!(
        "martingale: max slack of |N| <= 1 + t {:.4}, slope of E|N|^2/t {:.3e}, median |N(T)|/T {:.4}",
        report.max_bound_slack,
        report.second_moment_slope,
        quantile(&report.n_over_t, 0.5)
    ));
    let max_z = report.calibration.iter().map(|c| c.max_z).fold(0.0, f64::max);
    console.say(&format!("filter calibration: max z-score {max_z:.3}"));
    console.say(&format!(
        "returns to |Y| <= {}: {} of {paths} censored ({:.1}%)",
        args.radius,
        report.censored_returns(),
        100.0 * report.censored_returns() as f64 / paths as f64
    ));
    console.say(&format!("wrote {}", cli.out.display()));
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct Section<T> {
    available: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

impl<T> Section<T> {
    fn from_result<E: std::fmt::Display>(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Section {
                available: true,
                value: Some(v),
                reason: None,
            },
            Err(e) => Section {
                available: false,
                value: None,
                reason: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct CrossCheck {
    max_rel_gap: f64,
    points: Vec<GeneratorCheck>,
}

#[derive(Debug, Serialize)]
struct Diagnosis {
    mixing: Section<MixingEstimate>,
    stationary: Section<Vec<f64>>,
    calibration: Section<Vec<Calibration>>,
    generator_check: Section<CrossCheck>,
}

fn cross_check_csv(rows: &[GeneratorCheck]) -> String {
    let mut out = String::from("theta,closed_form,numeric,rel_gap\n");
    for r in rows {
        out += &format!("{},{},{},{}\n", r.theta, r.closed_form, r.numeric, r.rel_gap);
    }
    out
}

pub fn diagnose(args: &DiagnoseArgs, cli: &Cli, console: &Console) -> Result<i32, Failure> {
    check_solver(&args.solver)?;
    let mf = load(&args.model, console)?;
    if args.horizon.is_nan() || mf.simulation.dt > args.horizon {
        return Err(Failure::Usage(format!(
            "dt = {} exceeds T = {}",
            mf.simulation.dt, args.horizon
        )));
    }
    if args.paths < 2 || args.points == 0 {
        return Err(Failure::Usage("need at least 2 paths and 1 point".into()));
    }
    let seed = cli.seed.unwrap_or(mf.simulation.seed);

    let mixing = Section::from_result(mf.gen.estimate_mixing());
    match &mixing.value {
        Some(est) => console.say(&format!("mixing: lambda = {:.6}, K = {:.6}", est.lambda, est.k)),
        None => console.warn(&format!(
            "mixing estimate unavailable: {}",
            mixing.reason.as_deref().unwrap_or("")
        )),
    }
    let stationary = Section::from_result(mf.gen.stationary_distribution().map(|s| s.nu.as_slice().to_vec()));

    let (calibration, generator_check) = match synthesize(&mf, &args.solver, None, console) {
        Ok(syn) => {
            let rows = cross_check_generator(&mf.modes, &mf.gen, &syn.law, &CROSS_CHECK_THETAS, args.points, seed);
            let max_rel_gap = rows.iter().map(|r| r.rel_gap).fold(0.0, f64::max);
            console.say(&format!(
                "generator cross-check: max relative gap {max_rel_gap:.3e} over {} points",
                rows.len()
            ));
            write_text(&cli.out, "generator_check.csv", &cross_check_csv(&rows))?;

            let mut cfg = sim_config(&mf, syn.law, seed);
            cfg.horizon = args.horizon;
            let checkpoints: Vec<f64> = [16.0, 8.0, 4.0, 2.0, 1.0].iter().map(|k| args.horizon / k).collect();
            let calibration = run_ensemble(&cfg, &EnsembleOptions::new(args.paths, checkpoints)).map(|r| r.calibration);
            if let Ok(cal) = &calibration {
                let max_z = cal.iter().map(|c| c.max_z).fold(0.0, f64::max);
                console.say(&format!(
                    "filter calibration: max z-score {max_z:.3} over {} paths",
                    args.paths
                ));
            }
            let calibration = Section::from_result(calibration);
            if let Some(reason) = &calibration.reason {
                console.warn(&format!("calibration unavailable: {reason}"));
            }
            (
                calibration,
                Section::from_result(Ok::<_, String>(CrossCheck {
                    max_rel_gap,
                    points: rows,
                })),
            )
        }
        Err(Failure::Failed(e)) => {
            console.warn(&format!("calibration and generator cross-check unavailable: {e:#}"));
            let reason = format!("{e:#}");
            (
                Section::from_result(Err(reason.clone())),
                Section::from_result(Err(reason)),
            )
        }
        Err(usage) => return Err(usage),
    };

    let diagnosis = Diagnosis {
        mixing,
        stationary,
        calibration,
        generator_check,
    };
    write_json(&cli.out, "diagnose.json", &diagnosis)?;
    console.say(&format!("wrote {}", cli.out.display()));
    Ok(EXIT_OK)
}
