use std::fs;
use std::path::Path;
use std::time::Instant;

use gaitforge::compass_gait::{passive_guess, Branch, V_AVG};
use gaitforge::continuation::{GaitLibrary, StepRecord};
use gaitforge::direct::{basis_eval, DirectDecision, DirectProblem, InputBasis};
use gaitforge::indirect::{hamiltonian_drift, IndirectDecision, IndirectProblem};
use gaitforge::ocp::PeriodicOcp;
use gaitforge::reconstruct::PassiveGuess;
use gaitforge::workflows::{
    classify_library, compare, direct_from_indirect, direct_run, indirect_run, passive_seed, passive_seed_from,
    ComparisonStudy, StudyConfig,
};
use gaitforge::linalg::NewtonConfig;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::args::{CompareArgs, ContinueArgs, ExportArgs, ExportFormat, MethodArg, PassiveArgs, ToleranceArgs, VerifyArgs};
use crate::files::{
    display_value, internal_value, now, parameter_index, parameter_name, read_json, read_library, read_start, write_json,
    write_plot_data, FileKind, GaitLibraryFile, LibraryMetadata, Method, ModelSpec, PointRecord, SeedFile, StartFile,
    ToleranceConfig, SCHEMA,
};
use crate::CliError;

fn study_config(tol: &ToleranceArgs) -> Result<StudyConfig, CliError> {
    let t = tol.config();
    for (name, v) in [
        ("newton-tol", t.newton_tol),
        ("rel-tol", t.rel_tol),
        ("abs-tol", t.abs_tol),
        ("fd-step", t.fd_step),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("--{name} must be positive, got {v}")));
        }
    }
    let mut cfg = StudyConfig::default();
    apply_tolerances(&mut cfg, &t);
    Ok(cfg)
}

fn apply_tolerances(cfg: &mut StudyConfig, t: &ToleranceConfig) {
    cfg.tol.rel_tol = t.rel_tol;
    cfg.tol.abs_tol = t.abs_tol;
    cfg.fd.step = t.fd_step;
    cfg.continuation.newton_tol = t.newton_tol;
    cfg.seed_tol = cfg.seed_tol.max(t.newton_tol);
}

// ---------------------------------------------------------------- passive

pub fn passive(args: &PassiveArgs) -> Result<(), CliError> {
    let cfg = study_config(&args.tol)?;
    let model = ModelSpec::compass_gait(args.mass_matrix.into());
    let cg = model.build()?;
    let branch: Branch = args.branch.into();
    let custom = args.guess_t.is_some() || args.guess_x0.is_some() || args.guess_gamma.is_some();
    if args.guess_x0.as_ref().is_some_and(|x| x.len() != 4) {
        return Err(CliError::Usage("--guess-x0 takes four comma-separated values".into()));
    }
    let (gait, seed) = if custom {
        let (t, x0, gamma) = passive_guess(branch);
        let guess = PassiveGuess {
            t: args.guess_t.unwrap_or(t),
            x0: DVector::from_column_slice(args.guess_x0.as_deref().unwrap_or(&x0)),
            free_value: args.guess_gamma.map_or(gamma, f64::to_radians),
        };
        passive_seed_from(&cg, &guess, Some(branch.as_str()), args.v_avg, &cfg)?
    } else {
        passive_seed(&cg, branch, args.v_avg, &cfg)?
    };
    eprintln!(
        "passive gait: T = {:.6}, gamma = {:.6} deg, seed residual {:.2e}",
        gait.t_star,
        gait.sigma[0].to_degrees(),
        seed.residual_norm
    );
    let file = SeedFile {
        schema: SCHEMA.into(),
        kind: FileKind::Seed,
        model,
        created: now(),
        sigma: seed.sigma.clone(),
        decision: seed.decision,
        residual_norm: seed.residual_norm,
        diagnostics: seed.diagnostics,
        passive: gait,
    };
    write_json(&args.out, &file)
}

// ---------------------------------------------------------------- continue

/// Where a run starts: an indirect or a direct point with its parameters.
enum Start {
    Indirect(IndirectDecision),
    Direct(DirectDecision, InputBasis),
}

fn start_point(file: StartFile) -> Result<(ModelSpec, Start, DVector<f64>), CliError> {
    match file {
        StartFile::Seed(s) => Ok((s.model, Start::Indirect(s.decision), s.sigma)),
        StartFile::Library(lib) => {
            let meta = lib.metadata;
            let last = lib
                .points
                .last()
                .ok_or_else(|| CliError::Format("library has no points".into()))?;
            let mut sigma = meta.sigma.clone();
            if meta.param_index >= sigma.len() {
                return Err(CliError::Format(format!("parameter index {} out of range", meta.param_index)));
            }
            sigma[meta.param_index] = last.sigma;
            let start = match meta.method {
                Method::Indirect => Start::Indirect(last.indirect()?),
                Method::Direct => Start::Direct(
                    last.direct()?,
                    meta.basis
                        .ok_or_else(|| CliError::Format("direct library without basis".into()))?,
                ),
            };
            Ok((meta.model, start, sigma))
        }
    }
}

fn progress(verbose: bool, param: usize) -> impl FnMut(&StepRecord) {
    move |r: &StepRecord| {
        if verbose {
            eprintln!(
                "step {:5} {} = {:+.8} |r| = {:.2e} newton {} h = {:.3e} {}",
                r.step,
                parameter_name(param),
                display_value(param, r.sigma),
                r.residual,
                r.newton_iterations,
                r.h,
                if r.accepted { "accepted" } else { "rejected" }
            );
        }
    }
}

pub fn continue_run(args: &ContinueArgs) -> Result<(), CliError> {
    let mut cfg = study_config(&args.tol)?;
    cfg.continuation.h = args.h;
    cfg.continuation.h_min = args.h_min;
    cfg.continuation.h_max = args.h_max;
    cfg.continuation.max_steps = args.max_steps;
    cfg.continuation.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let param = parameter_index(&args.param)?;
    let end = internal_value(param, args.end);
    if param == V_AVG && !(end > 0.0) {
        return Err(CliError::Usage(format!("--end must be a positive speed, got {}", args.end)));
    }

    let (model, start, mut sigma) = start_point(read_start(&args.seed)?)?;
    let cg = model.build()?;
    let method: Method = args.method.into();
    let sigma_start = sigma[param];
    // An end given as the displayed start value means the start itself.
    let end = if args.end == display_value(param, sigma_start) { sigma_start } else { end };
    let started = Instant::now();

    let (points, library, basis) = match (args.method, start) {
        (MethodArg::Indirect, Start::Indirect(chi)) => {
            let lib = indirect_run(&cg, &chi, &sigma, param, end, &cfg, progress(args.verbose, param))?;
            let mut problem = IndirectProblem::new(&cg, sigma.clone(), param)?;
            problem.tol = cfg.tol;
            problem.fd = cfg.fd;
            let points = indirect_records(&problem, &lib)?;
            (points, lib, None)
        }
        (MethodArg::Indirect, Start::Direct(..)) => {
            return Err(CliError::Usage("an indirect run cannot start from a direct library".into()))
        }
        (MethodArg::Direct, start) => {
            let (chi, basis) = match start {
                Start::Direct(chi, basis) => (chi, basis),
                Start::Indirect(chi) => {
                    let basis = args.basis.basis(args.n_xi)?;
                    let newton = NewtonConfig {
                        tol: cfg.continuation.newton_tol,
                        fd: cfg.fd,
                        ..NewtonConfig::default()
                    };
                    let (d, _) = direct_from_indirect(&cg, &basis, &chi, &sigma, &newton, &cfg.tol)?;
                    (d, basis)
                }
            };
            let lib = direct_run(&cg, basis, &chi, &sigma, param, end, &cfg, progress(args.verbose, param))?;
            let mut problem = DirectProblem::new(&cg, basis, sigma.clone(), param)?;
            problem.tol = cfg.tol;
            problem.fd = cfg.fd;
            let points = direct_records(&problem, &lib, !args.no_classify)?;
            (points, lib, Some(basis))
        }
    };
    sigma[param] = sigma_start;

    eprintln!(
        "{} points in {:.1} s, {} turning point(s), termination {:?}",
        library.points.len(),
        started.elapsed().as_secs_f64(),
        library.turning_points.len(),
        library.termination
    );
    let file = GaitLibraryFile {
        schema: SCHEMA.into(),
        kind: FileKind::Library,
        metadata: LibraryMetadata {
            model,
            method,
            param: parameter_name(param).into(),
            param_index: param,
            sigma,
            basis,
            tolerances: args.tol.config(),
            version: env!("CARGO_PKG_VERSION").into(),
            created: now(),
            termination: library.termination.clone(),
            turning_points: library.turning_points.clone(),
            direction: library.direction,
        },
        points,
    };
    write_json(&args.out, &file)?;
    if library.termination.is_success() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "continuation stopped before the target: {:?} (library written)",
            library.termination
        )))
    }
}

fn indirect_records<O: PeriodicOcp + ?Sized>(problem: &IndirectProblem<'_, O>, lib: &GaitLibrary) -> Result<Vec<PointRecord>, CliError> {
    lib.points
        .iter()
        .map(|p| {
            let (chi, _) = problem.split(&p.nu)?;
            let cost = problem.evaluate(&p.nu)?.cost;
            Ok(PointRecord::from_indirect(&chi, p.sigma(), cost, p.residual_norm, &p.tangent))
        })
        .collect()
}

fn direct_records<O: PeriodicOcp + ?Sized>(
    problem: &DirectProblem<'_, O>,
    lib: &GaitLibrary,
    classify: bool,
) -> Result<Vec<PointRecord>, CliError> {
    let classes = if classify {
        classify_library(problem, lib)?.into_iter().map(|r| Some(r.classification)).collect()
    } else {
        vec![None; lib.points.len()]
    };
    lib.points
        .iter()
        .zip(classes)
        .map(|(p, class)| {
            let (chi, _) = problem.split(&p.nu)?;
            let cost = problem.evaluate(&p.nu)?.cost;
            Ok(PointRecord::from_direct(&chi, p.sigma(), cost, p.residual_norm, &p.tangent, class))
        })
        .collect()
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub schema: String,
    pub kind: FileKind,
    pub model: ModelSpec,
    pub created: String,
    pub study: ComparisonStudy,
}

pub fn compare_bases(args: &CompareArgs) -> Result<(), CliError> {
    let mut cfg = study_config(&args.tol)?;
    cfg.polish_tol = args.polish_tol;
    if args.n_min > args.n_max {
        return Err(CliError::Usage(format!("--n-min {} exceeds --n-max {}", args.n_min, args.n_max)));
    }
    let (model, start, sigma) = start_point(read_start(&args.seed)?)?;
    let chi = match start {
        Start::Indirect(chi) => chi,
        Start::Direct(..) => return Err(CliError::Usage("the reference must be an indirect seed or library".into())),
    };
    let cg = model.build()?;
    let mut bases = Vec::new();
    for kind in &args.bases {
        for n in args.n_min..=args.n_max {
            // Bases below their minimum size are skipped.
            if let Ok(b) = kind.basis(n) {
                bases.push(b);
            }
        }
    }
    if bases.is_empty() {
        return Err(CliError::Usage("no admissible basis in the requested range".into()));
    }
    let study = compare(&cg, &chi, &sigma, &bases, &cfg)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    write_comparison_csv(&args.out_dir.join("comparison.csv"), &study)?;

    let mut labels: Vec<&str> = study.rows.iter().map(|r| r.basis.as_str()).collect();
    labels.dedup();
    for label in labels {
        let rows: Vec<_> = study.rows.iter().filter(|r| r.basis == label && r.converged).collect();
        let cond: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.n_xi as f64, r.cond_number?))).collect();
        let err: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.n_xi as f64, r.rel_cost_error?))).collect();
        write_plot_data(&args.out_dir.join(format!("{label}_cond.dat")), "n_xi", "cond_number", &cond)?;
        write_plot_data(&args.out_dir.join(format!("{label}_rel_error.dat")), "n_xi", "rel_cost_error", &err)?;
    }
    eprintln!(
        "indirect: T = {:.6}, cost = {:.10e}, cond = {:.3e}",
        study.indirect_t, study.indirect_cost, study.indirect_cond
    );
    for r in &study.rows {
        match (r.cond_number, r.rel_cost_error) {
            (Some(c), Some(e)) => eprintln!("{:>18} n = {:2}: cond {:.3e}, rel. error {:.3e}", r.basis, r.n_xi, c, e),
            _ => eprintln!("{:>18} n = {:2}: not converged", r.basis, r.n_xi),
        }
    }
    write_json(
        &args.out_dir.join("comparison.json"),
        &ComparisonFile {
            schema: SCHEMA.into(),
            kind: FileKind::Comparison,
            model,
            created: now(),
            study,
        },
    )
}

fn write_comparison_csv(path: &Path, study: &ComparisonStudy) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    w.write_record([
        "basis",
        "n_xi",
        "cond_number",
        "indirect_cond_number",
        "cost",
        "rel_cost_error_vs_indirect",
        "classification",
        "wall_time_ms",
    ])
    .map_err(|e| csv_error(path, e))?;
    for r in &study.rows {
        w.write_record([
            r.basis.clone(),
            r.n_xi.to_string(),
            opt(r.cond_number),
            format!("{:e}", study.indirect_cond),
            opt(r.cost),
            opt(r.rel_cost_error),
            r.classification.map(|c| c.as_str().to_string()).unwrap_or_default(),
            format!("{:.3}", r.wall_time_ms),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    }
}

// ---------------------------------------------------------------- verify

/// Outcome of [`verify_library`]: one message per violated check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub points: usize,
    pub max_residual: f64,
    pub max_drift: f64,
    pub failures: Vec<String>,
}

pub fn verify_library(lib: &GaitLibraryFile, hamiltonian_tol: f64, cost_tol: f64) -> Result<VerifyReport, CliError> {
    let meta = &lib.metadata;
    let cg = meta.model.build()?;
    let mut cfg = StudyConfig::default();
    apply_tolerances(&mut cfg, &meta.tolerances);
    let param = meta.param_index;
    if param >= meta.sigma.len() || parameter_index(&meta.param)? != param {
        return Err(CliError::Format(format!("parameter '{}' does not match index {param}", meta.param)));
    }
    let mut report = VerifyReport {
        points: lib.points.len(),
        ..VerifyReport::default()
    };
    let mut failures = Vec::new();
    let mut nus = Vec::with_capacity(lib.points.len());

    let check = |k: usize, p: &PointRecord, nu: &DVector<f64>, residual: f64, cost: f64, failures: &mut Vec<String>| {
        if !(residual <= meta.tolerances.newton_tol) {
            failures.push(report_failure(k, format!("residual {residual:.3e} exceeds {:.1e}", meta.tolerances.newton_tol)));
        }
        let rel = (cost - p.cost).abs() / p.cost.abs().max(f64::MIN_POSITIVE);
        if !(rel <= cost_tol) {
            failures.push(report_failure(k, format!("stored cost {:e} differs from recomputed {cost:e}", p.cost)));
        }
        let norm = DVector::from_column_slice(&p.tangent).norm();
        if p.tangent.len() != nu.len() || !((norm - 1.0).abs() <= 1e-8) {
            failures.push(report_failure(k, format!("tangent is not a unit vector of length {}", nu.len())));
        }
    };

    match meta.method {
        Method::Indirect => {
            let mut problem = IndirectProblem::new(&cg, meta.sigma.clone(), param)?;
            problem.tol = cfg.tol;
            problem.fd = cfg.fd;
            for (k, p) in lib.points.iter().enumerate() {
                let nu = p.nu(Method::Indirect, &cg, None)?;
                let eval = problem.evaluate(&nu)?;
                let residual = eval.residual.amax();
                check(k, p, &nu, residual, eval.cost, &mut failures);
                let (chi, s) = problem.split(&nu)?;
                nus.push(nu);
                let drift = hamiltonian_drift(&cg, &chi, &s, &cfg.tol, 50)?;
                if !(drift <= hamiltonian_tol) {
                    failures.push(report_failure(k, format!("Hamiltonian drift {drift:.3e} exceeds {hamiltonian_tol:.1e}")));
                }
                report.max_residual = report.max_residual.max(residual);
                report.max_drift = report.max_drift.max(drift);
            }
        }
        Method::Direct => {
            let basis = meta
                .basis
                .ok_or_else(|| CliError::Format("direct library without basis".into()))?;
            let mut problem = DirectProblem::new(&cg, basis, meta.sigma.clone(), param)?;
            problem.tol = cfg.tol;
            problem.fd = cfg.fd;
            for (k, p) in lib.points.iter().enumerate() {
                let nu = p.nu(Method::Direct, &cg, Some(&basis))?;
                let eval = problem.evaluate(&nu)?;
                let residual = eval.residual.amax();
                check(k, p, &nu, residual, eval.cost, &mut failures);
                report.max_residual = report.max_residual.max(residual);
                nus.push(nu);
            }
        }
    }

    if let Some(first) = lib.points.first() {
        if first.sigma != meta.sigma[param] {
            failures.push(report_failure(0, format!("first point is not at the recorded start {}", meta.sigma[param])));
        }
    }
    // Arclength must grow strictly: each secant points along the oriented
    // tangent of the point it leaves.
    if meta.direction.abs() != 1.0 {
        failures.push(format!("direction {} is not +1 or -1", meta.direction));
    }
    for (k, (w, p)) in nus.windows(2).zip(&lib.points).enumerate() {
        let tau = DVector::from_column_slice(&p.tangent);
        if tau.len() == w[0].len() && meta.direction * tau.dot(&(&w[1] - &w[0])) <= 0.0 {
            failures.push(report_failure(k + 1, "not ahead of the previous point along the curve".into()));
        }
    }
    for tp in &meta.turning_points {
        if tp.index + 1 >= lib.points.len() {
            failures.push(format!("turning point index {} out of range", tp.index));
        }
    }
    report.failures = failures;
    Ok(report)
}

fn report_failure(k: usize, msg: String) -> String {
    format!("point {k}: {msg}")
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let lib = read_library(&args.library)?;
    let report = verify_library(&lib, args.hamiltonian_tol, args.cost_tol)?;
    for f in &report.failures {
        eprintln!("{f}");
    }
    eprintln!(
        "{} points, max residual {:.3e}, max Hamiltonian drift {:.3e}",
        report.points, report.max_residual, report.max_drift
    );
    if report.failures.is_empty() {
        println!("OK");
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} check(s) failed", report.failures.len())))
    }
}

// ---------------------------------------------------------------- export

fn indexed(name: &str) -> Option<(&str, usize)> {
    let (head, rest) = name.split_once('[')?;
    let i = rest.strip_suffix(']')?.parse().ok()?;
    Some((head, i))
}

/// Values of `field` along the library, in display units.
pub fn column(lib: &GaitLibraryFile, field: &str) -> Result<Vec<f64>, CliError> {
    let meta = &lib.metadata;
    let param = meta.param_index;
    let missing = |k: usize| CliError::Usage(format!("field '{field}' not available at point {k}"));
    match field {
        "sigma" | "gamma" | "v_avg" => Ok(lib.points.iter().map(|p| display_value(param, p.sigma)).collect()),
        "t" => Ok(lib.points.iter().map(|p| p.t).collect()),
        "cost" => Ok(lib.points.iter().map(|p| p.cost).collect()),
        "residual" => Ok(lib.points.iter().map(|p| p.residual_norm).collect()),
        "index" => Ok((0..lib.points.len()).map(|k| k as f64).collect()),
        "arclength" => {
            let cg = meta.model.build()?;
            let mut s = 0.0;
            let mut prev: Option<DVector<f64>> = None;
            let mut out = Vec::new();
            for p in &lib.points {
                let nu = p.nu(meta.method, &cg, meta.basis.as_ref())?;
                if let Some(q) = &prev {
                    s += (&nu - q).norm();
                }
                out.push(s);
                prev = Some(nu);
            }
            Ok(out)
        }
        "u0" => lib
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| match (&p.u0, &p.xi, &meta.basis) {
                (Some(u), _, _) => u.first().copied().ok_or_else(|| missing(k)),
                (None, Some(xi), Some(b)) => Ok(basis_eval(b, 0.0, p.t, &DVector::from_column_slice(xi))?),
                _ => Err(missing(k)),
            })
            .collect(),
        _ => {
            let (head, i) = indexed(field).ok_or_else(|| CliError::Usage(format!("unknown field '{field}'")))?;
            lib.points
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let v = match head {
                        "x0" => Some(&p.x0),
                        "p0" => p.p0.as_ref(),
                        "xi" => p.xi.as_ref(),
                        "lambda" => Some(&p.lambda),
                        _ => return Err(CliError::Usage(format!("unknown field '{field}'"))),
                    };
                    v.and_then(|v| v.get(i).copied()).ok_or_else(|| missing(k))
                })
                .collect()
        }
    }
}

pub fn export(args: &ExportArgs) -> Result<(), CliError> {
    let lib = read_library(&args.library)?;
    match args.format {
        ExportFormat::Plot => {
            let x = column(&lib, &args.x)?;
            let y = column(&lib, &args.y)?;
            let rows: Vec<(f64, f64)> = x.into_iter().zip(y).collect();
            write_plot_data(&args.out, &args.x, &args.y, &rows)
        }
        ExportFormat::Csv => write_library_csv(&args.out, &lib),
    }
}

fn write_library_csv(path: &Path, lib: &GaitLibraryFile) -> Result<(), CliError> {
    let meta = &lib.metadata;
    let first = lib.points.first();
    let width = |f: fn(&PointRecord) -> usize| first.map_or(0, f);
    let n_x = width(|p| p.x0.len());
    let n_p = width(|p| p.p0.as_ref().map_or(0, Vec::len));
    let n_u = width(|p| p.u0.as_ref().map_or(0, Vec::len));
    let n_xi = width(|p| p.xi.as_ref().map_or(0, Vec::len));
    let n_l = width(|p| p.lambda.len());

    let sigma_name = match meta.param_index {
        0 => "gamma_deg",
        _ => "v_avg",
    };
    let mut header = vec![sigma_name.to_string(), "t".into(), "cost".into(), "residual_norm".into()];
    let push = |header: &mut Vec<String>, name: &str, n: usize| header.extend((0..n).map(|i| format!("{name}[{i}]")));
    push(&mut header, "x0", n_x);
    push(&mut header, "p0", n_p);
    if meta.method == Method::Indirect {
        header.push("q".into());
    }
    push(&mut header, "u0", n_u);
    push(&mut header, "xi", n_xi);
    push(&mut header, "lambda", n_l);
    if meta.method == Method::Direct {
        header.push("classification".into());
    }

    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (k, p) in lib.points.iter().enumerate() {
        let mut row = vec![
            format!("{:e}", display_value(meta.param_index, p.sigma)),
            format!("{:e}", p.t),
            format!("{:e}", p.cost),
            format!("{:e}", p.residual_norm),
        ];
        let extend = |row: &mut Vec<String>, v: Option<&Vec<f64>>, n: usize| -> Result<(), CliError> {
            let v = v.map_or(&[][..], |v| v.as_slice());
            if v.len() != n {
                return Err(CliError::Format(format!("point {k} has {} entries where {n} were expected", v.len())));
            }
            row.extend(v.iter().map(|x| format!("{x:e}")));
            Ok(())
        };
        extend(&mut row, Some(&p.x0), n_x)?;
        extend(&mut row, p.p0.as_ref(), n_p)?;
        if meta.method == Method::Indirect {
            row.push(p.q.map(|q| format!("{q:e}")).unwrap_or_default());
        }
        extend(&mut row, p.u0.as_ref(), n_u)?;
        extend(&mut row, p.xi.as_ref(), n_xi)?;
        extend(&mut row, Some(&p.lambda), n_l)?;
        if meta.method == Method::Direct {
            row.push(p.classification.map(|c| c.as_str().to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a comparison written by `compare`.
pub fn read_comparison(path: &Path) -> Result<ComparisonFile, CliError> {
    let file: ComparisonFile = read_json(path)?;
    if file.schema != SCHEMA || file.kind != FileKind::Comparison {
        return Err(CliError::Format(format!("{}: not a {SCHEMA} comparison", path.display())));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_fields() {
        assert_eq!(indexed("x0[2]"), Some(("x0", 2)));
        assert_eq!(indexed("x0[a]"), None);
        assert_eq!(indexed("cost"), None);
    }

}
