use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use meanfield_core::dynamics::{init_ensemble, DataSource, TrajectoryLog};
use meanfield_core::experiment::{bounds_for, make_teacher_dataset, run_experiment, ExperimentConfig, Outcome};
use meanfield_core::fp::{gibbs_fixed_point, run_transient, FpSolver, GridDensity};
use meanfield_core::gradcheck::gradcheck_model;
use meanfield_core::lsi::{lyapunov_constants, verify_lyapunov, Scaling};
use meanfield_core::model::{validate_activation, validate_regularizer};
use meanfield_core::objective::{default_window, fit_decay_rate, fit_decay_rate_series, q_star_proxy};
use meanfield_core::{Error, Result};
use serde_json::{json, Value};

pub type Handler = fn(ExperimentConfig, &Path) -> Result<()>;

const GRAD_TOL: f64 = 1e-6;
const HESS_TOL: f64 = 1e-5;

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<()> {
    fs::write(dir.join(name), serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn describe_bounds(arm: &str, bounds: &[meanfield_core::experiment::NamedBound]) {
    for b in bounds {
        match &b.result {
            Outcome::Ok(r) => println!(
                "{arm} {}: log10 nu = {:.6e}, log10 rate = {:.6e}",
                b.name,
                r.nu.log10,
                r.ln_rate / std::f64::consts::LN_10
            ),
            Outcome::Skipped(why) => println!("{arm} {}: skipped ({why})", b.name),
            Outcome::Failed(why) => println!("{arm} {}: failed ({why})", b.name),
        }
    }
}

pub fn simulate(mut cfg: ExperimentConfig, dir: &Path) -> Result<()> {
    cfg.output.dir = Some(dir.to_path_buf());
    let res = run_experiment(&cfg)?;
    for arm in &res.arms {
        let log = &arm.log;
        let last = log.len().saturating_sub(1);
        print!("{}: risk {:.6e} -> {:.6e}", arm.name, log.risk[0], log.risk[last]);
        match &arm.fit {
            Outcome::Ok(f) => println!(", fitted rate {:.6e} (r^2 {:.4})", f.rate, f.r_squared),
            Outcome::Skipped(w) | Outcome::Failed(w) => println!(", no fit ({w})"),
        }
        describe_bounds(&arm.name, &arm.bounds);
    }
    println!("wrote {} files to {}", res.files.len() + 1, dir.display());
    Ok(())
}

pub fn lsi_bound(cfg: ExperimentConfig, dir: &Path) -> Result<()> {
    let d = cfg.sim.d;
    let lambda = cfg.sim.lambda;
    let init = init_ensemble(cfg.sim.n_particles, d, cfg.sim.seed)?;
    let data = cfg.stream()?.batch(0)?.clone();
    let mut arms = Vec::new();
    let mut violations = Vec::new();
    for (name, reg) in cfg.arm_names().iter().zip(&cfg.regularizers) {
        let model = cfg.model(reg);
        let bounds = bounds_for(&model, d, lambda, &cfg.bounds, Some((&init, &data)));
        describe_bounds(name, &bounds);
        let cert = lyapunov_constants(&model, d, lambda, Scaling::Statement);
        let check = match (&cert, cfg.bounds.verify_trials > 0 && lambda > 0.0) {
            (Ok(cert), true) => {
                let c = verify_lyapunov(
                    cert,
                    &init,
                    &data,
                    &model,
                    cfg.bounds.verify_trials,
                    cfg.bounds.verify_radius,
                    cfg.sim.seed,
                )?;
                println!("{name} lyapunov check: {} / {} violations", c.violation_count, c.trials);
                if c.violation_count > 0 {
                    violations.push(name.clone());
                }
                Outcome::Ok(c)
            }
            (Err(e), true) => Outcome::Skipped(e.to_string()),
            (_, false) => Outcome::Skipped("bounds.verify_trials = 0".into()),
        };
        arms.push(json!({ "name": name, "bounds": bounds, "lyapunov_check": check }));
    }
    write_json(dir, "bounds.json", &json!({ "lambda": lambda, "d": d, "arms": arms }))?;
    if !violations.is_empty() {
        return Err(Error::CertificateViolation(format!(
            "Lyapunov inequality violated in {}",
            violations.join(", ")
        )));
    }
    Ok(())
}

pub fn fp_oracle(cfg: ExperimentConfig, dir: &Path) -> Result<()> {
    if cfg.sim.d != 1 {
        return Err(Error::Config(format!(
            "the grid oracle needs sim.d = 1, got {}",
            cfg.sim.d
        )));
    }
    if cfg.sim.lambda <= 0.0 || cfg.sim.lambda.is_nan() {
        return Err(Error::Config("the grid oracle needs sim.lambda > 0".into()));
    }
    let lambda = cfg.sim.lambda;
    let g = &cfg.grid;
    let spec = g.spec();
    let data = make_teacher_dataset(&cfg.teacher, cfg.data.samples_per_epoch, cfg.data_seed())?;
    let mut arms = Vec::new();
    for (name, reg) in cfg.arm_names().iter().zip(&cfg.regularizers) {
        let wrap = |e: Error| Error::Arm {
            arm: name.clone(),
            source: Box::new(e),
        };
        let model = cfg.model(reg);
        let gibbs = gibbs_fixed_point(spec, &data, &model, lambda, g.tol, g.damping, g.max_iter).map_err(wrap)?;
        let solver = FpSolver::new(spec, &data, &model, lambda).map_err(wrap)?;
        let q_star = solver.free_energy(&gibbs.density).map_err(wrap)?;
        gibbs
            .density
            .write_csv(BufWriter::new(File::create(dir.join(format!("{name}_rho_star.csv")))?))?;
        gibbs
            .density
            .write_binary(BufWriter::new(File::create(dir.join(format!("{name}_rho_star.bin")))?))?;
        println!(
            "{name}: fixed point after {} iterations, residual {:.3e}, Q* = {q_star:.12}",
            gibbs.iterations, gibbs.residual
        );
        let mut entry = json!({
            "name": name,
            "iterations": gibbs.iterations,
            "residual": gibbs.residual,
            "Q_star": q_star,
            "boundary_ratio": gibbs.density.boundary_ratio(),
        });
        if g.steps > 0 {
            let mut rho = GridDensity::gaussian(spec, 0.0, 0.0, g.start_sd).map_err(wrap)?;
            let trace = run_transient(&solver, &mut rho, g.steps, g.dt_fraction, g.record_every).map_err(wrap)?;
            let mut out = BufWriter::new(File::create(dir.join(format!("{name}_fp_trajectory.csv")))?);
            writeln!(out, "t,Q")?;
            for (t, q) in trace.times.iter().zip(&trace.q) {
                writeln!(out, "{t},{q}")?;
            }
            out.flush()?;
            let horizon = trace.times.last().copied().unwrap_or(0.0);
            let window = [horizon / 3.0, 2.0 * horizon / 3.0];
            let fit = fit_decay_rate_series(&trace.times, &trace.q, q_star, window);
            match &fit {
                Ok(f) => println!(
                    "{name}: transient rate {:.6} (r^2 {:.6}), max dQ per step {:.3e}",
                    f.rate, f.r_squared, trace.max_increase
                ),
                Err(e) => println!("{name}: transient fit failed ({e})"),
            }
            entry["transient"] = json!({
                "steps": g.steps,
                "horizon": horizon,
                "max_increase": trace.max_increase,
                "max_mass_change": trace.max_mass_change,
                "fit": fit.map_err(|e| e.to_string()),
            });
        }
        entry["bounds"] = json!(bounds_for(&model, 1, lambda, &cfg.bounds, None));
        arms.push(entry);
    }
    write_json(
        dir,
        "fp_report.json",
        &json!({ "grid": spec, "lambda": lambda, "arms": arms }),
    )
}

fn read_trajectory(path: &Path) -> Result<TrajectoryLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Config(format!("{} has no `{name}` column", path.display())))
    };
    let (ti, qi) = (col("t")?, col("Q")?);
    let mut log = TrajectoryLog::default();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| {
            fields
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad row {}", path.display(), n + 2)))
        };
        log.times.push(parse(ti)?);
        log.q.push(parse(qi)?);
    }
    Ok(log)
}

pub fn fit_rate(cfg: ExperimentConfig, dir: &Path) -> Result<()> {
    let input = cfg
        .fit
        .input
        .clone()
        .ok_or_else(|| Error::Config("fit.input (trajectory CSV) is required".into()))?;
    let log = read_trajectory(&input)?;
    let q_star = match cfg.fit.q_star {
        Some(q) => q,
        None => q_star_proxy(&log)?,
    };
    let window = match cfg.fit.window {
        Some(w) => w,
        None => default_window(&log.times)?,
    };
    let fit = fit_decay_rate(&log, q_star, window)?;
    println!(
        "rate {:.6e}, intercept {:.6}, r^2 {:.6}, {} points",
        fit.rate, fit.intercept, fit.r_squared, fit.points
    );
    write_json(dir, "fit.json", &json!({ "input": input, "fit": fit }))
}

pub fn gradcheck(cfg: ExperimentConfig, dir: &Path) -> Result<()> {
    let mut arms = Vec::new();
    let mut failed = Vec::new();
    for (name, reg) in cfg.arm_names().iter().zip(&cfg.regularizers) {
        let model = cfg.model(reg);
        let r = gradcheck_model(
            &model,
            cfg.sim.d,
            cfg.gradcheck.trials,
            cfg.gradcheck.radius,
            cfg.sim.seed,
        )?;
        let ok = r.passed(GRAD_TOL, HESS_TOL);
        println!(
            "{name}: max gradient error {:.3e}, max Hessian error {:.3e} over {} instances{}",
            r.max_grad_rel_err,
            r.max_hess_rel_err,
            r.instances,
            if ok { "" } else { " FAILED" }
        );
        if !ok {
            failed.push(name.clone());
        }
        arms.push(json!({ "name": name, "passed": ok, "report": r }));
    }
    write_json(
        dir,
        "gradcheck.json",
        &json!({ "grad_tol": GRAD_TOL, "hess_tol": HESS_TOL, "arms": arms }),
    )?;
    if !failed.is_empty() {
        return Err(Error::NumericFault(format!(
            "derivative mismatch in {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

pub fn validate_specs(cfg: ExperimentConfig, dir: &Path) -> Result<()> {
    let v = &cfg.validate;
    let d = cfg.sim.d;
    let act = validate_activation(&cfg.activation, d, v.trials, v.radius, cfg.sim.seed)?;
    let mut problems = Vec::new();
    println!(
        "activation: value {:.4}, slope {:.4}, curvature {:.4} of certificate",
        act.value_ratio, act.slope_ratio, act.curvature_ratio
    );
    if !act.passed() {
        problems.push("activation".to_string());
    }
    if cfg.loss.assumption_violating() {
        println!("loss: unbounded derivative; the rate bounds do not apply");
    }
    let mut arms = Vec::new();
    for (name, reg) in cfg.arm_names().iter().zip(&cfg.regularizers) {
        let r = validate_regularizer(reg, d + 1, v.trials, v.radius, cfg.sim.seed)?;
        if r.passed() {
            println!("{name}: certificates hold");
        }
        for s in &r.structural {
            println!("{name}: outside the assumptions: {s}");
        }
        for c in r.checks.iter().filter(|c| c.violations > 0) {
            println!(
                "{name}: {} violated in {} of {} samples",
                c.name, c.violations, r.trials
            );
        }
        if !r.passed() {
            problems.push(name.clone());
        }
        arms.push(json!({ "name": name, "passed": r.passed(), "report": r }));
    }
    write_json(
        dir,
        "validate.json",
        &json!({
            "activation": { "passed": act.passed(), "report": act },
            "loss": { "spec": cfg.loss, "bounded_derivative": !cfg.loss.assumption_violating() },
            "arms": arms,
        }),
    )?;
    if !problems.is_empty() {
        return Err(Error::CertificateViolation(format!(
            "failed checks: {}",
            problems.join(", ")
        )));
    }
    Ok(())
}
