use std::str::FromStr;

use modalreg::bandwidth::{plugin_bandwidths, vc_plugin_bandwidths, PluginQuantities, VcCurvatureForm};
use modalreg::baselines::{baseline_fit, cv_bandwidth, vc_baseline_fit, vc_cv_bandwidth, BaselineSpec, Method};
use modalreg::kernels::KernelSpec;
use modalreg::modal_lpr::{fit_curve, Bandwidths, Dataset, EMConfig};
use modalreg::study::{
    cv_mspe, linspace, mc_theory_check, reference_bandwidths, run_coverage_study, substream, vc_theory_check,
    CoverageConfig, CvMode, CvOptions, IntervalConvention, Scenario, TheoryCheckConfig, VcTheoryCheckConfig,
};
use modalreg::varying_coeff::{vc_fit_curves, VCDataset};
use modalreg::ModalError;
use serde_json::json;

use crate::args::*;
use crate::data::{num, parse_any, parse_dataset, Layout, Parsed, Sink, Table};
use crate::error::{CliError, CliResult};

pub fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::Fit(a) => fit(a),
        Command::VcFit(a) => vc_fit(a),
        Command::Bandwidth(a) => bandwidth(a),
        Command::Simulate(a) => simulate(a),
        Command::Coverage(a) => coverage(a),
        Command::TheoryCheck(a) => theory_check(a),
        Command::Cv(a) => cv(a),
    }
}

pub fn parse_method(name: &str) -> CliResult<Method> {
    Method::from_str(name.trim()).map_err(|_| CliError::Method(format!("unknown method {name:?}; expected ll, lm, lmd or llmr")))
}

fn parse_methods(names: &[String]) -> CliResult<Vec<Method>> {
    let methods: Vec<Method> = names.iter().map(|m| parse_method(m)).collect::<CliResult<_>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("at least one method is required".into()));
    }
    Ok(methods)
}

fn em_config(a: &EmArgs, seed: u64) -> CliResult<EMConfig> {
    let kernel = KernelSpec::from_str(&a.kernel).map_err(|_| CliError::Usage(format!("unknown kernel {:?}", a.kernel)))?;
    let cfg = EMConfig {
        max_iter: a.max_iter,
        tol_obj: a.tol_obj,
        tol_param: a.tol_param,
        n_starts: a.starts,
        seed,
        order: a.order,
        kernel,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or(CliError::MissingSeed)
}

fn required(v: Option<f64>, flag: &str) -> CliResult<f64> {
    v.ok_or_else(|| CliError::Usage(format!("{flag} is required with --bandwidth manual")))
}

/// Parses `a:b:k` into `k` evenly spaced points; `range` is the admissible interval.
pub fn parse_grid(spec: &str, range: (f64, f64)) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("grid {spec:?} is not of the form a:b:k"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, k] = parts.as_slice() else { return Err(bad()) };
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    if !(a.is_finite() && b.is_finite()) || k == 0 || a > b || (k > 1 && a == b) {
        return Err(bad());
    }
    let (lo, hi) = range;
    if a < lo || b > hi {
        return Err(CliError::Usage(format!("grid [{a}, {b}] extends beyond the data range [{lo}, {hi}]")));
    }
    Ok(linspace(a, b, k))
}

fn grid_for(spec: Option<&str>, range: (f64, f64)) -> CliResult<Vec<f64>> {
    match spec {
        Some(s) => parse_grid(s, range),
        None => Ok(linspace(range.0, range.1, 200)),
    }
}

fn u_range(data: &VCDataset) -> (f64, f64) {
    let u = data.u();
    (
        u.iter().copied().fold(f64::INFINITY, f64::min),
        u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

fn resolve_mode(mode: Option<BandwidthMode>, h1: Option<f64>, method: Method) -> BandwidthMode {
    mode.unwrap_or(if h1.is_some() {
        BandwidthMode::Manual
    } else if method.is_baseline() {
        BandwidthMode::Cv
    } else {
        BandwidthMode::Plugin
    })
}

fn scenario(name: ScenarioName, homoscedastic: Option<f64>) -> CliResult<Scenario> {
    let base = match name {
        ScenarioName::Example1 => Scenario::example1(),
        ScenarioName::Vc1 => Scenario::vc_model(1)?,
        ScenarioName::Vc2 => Scenario::vc_model(2)?,
    };
    Ok(match homoscedastic {
        Some(s) => base.homoscedastic(s)?,
        None => base,
    })
}

fn curvature(c: Curvature) -> VcCurvatureForm {
    match c {
        Curvature::Bias => VcCurvatureForm::Bias,
        Curvature::Derivative => VcCurvatureForm::DerivativeOfAlpha,
    }
}

fn warn_failures<'a>(points: impl Iterator<Item = (f64, &'a ModalError)>) -> usize {
    let mut count = 0;
    for (x, e) in points {
        eprintln!("warning[{}]: grid point {}: {e}", e.code(), num(x));
        count += 1;
    }
    count
}

fn bool_str(b: bool) -> String {
    b.to_string()
}

fn fit(a: &FitArgs) -> CliResult<()> {
    let method = parse_method(&a.method)?;
    let em = em_config(&a.em, a.seed)?;
    let Parsed::Scalar(data) = parse_dataset(&a.input, Layout::Scalar)? else { unreachable!() };
    let grid = grid_for(a.grid.as_deref(), data.x_range())?;
    let mode = resolve_mode(a.bandwidth, a.h1, method);
    let mut table = Table::new(["x", "m_hat", "converged", "iterations", "objective"]);
    let nan = num(f64::NAN);
    let (resolved, failed) = if method == Method::LLMR {
        let bw = match mode {
            BandwidthMode::Manual => Bandwidths::new(required(a.h1, "--h1")?, required(a.h2, "--h2")?)?,
            BandwidthMode::Plugin => plugin_bandwidths(&data, &em, &em.kernel.moments(1))?.1,
            BandwidthMode::Cv => return Err(CliError::Usage("--bandwidth cv applies to the baselines ll, lm and lmd".into())),
        };
        let curve = fit_curve(&data, &grid, bw, &em, a.derivative)?;
        for ((x, fit), value) in curve.grid.iter().zip(&curve.fits).zip(curve.values()) {
            table.push(match fit {
                Ok(f) => vec![num(*x), num(value.unwrap_or(f64::NAN)), bool_str(f.converged), f.iterations.to_string(), num(f.objective)],
                Err(_) => vec![num(*x), nan.clone(), bool_str(false), "0".into(), nan.clone()],
            });
        }
        (json!({ "h1": bw.h1, "h2": bw.h2 }), warn_failures(curve.failures()))
    } else {
        if a.derivative > 1 {
            return Err(CliError::Usage("baselines are local linear; --derivative must be 0 or 1".into()));
        }
        let h = match mode {
            BandwidthMode::Manual => required(a.h1, "--h1")?,
            BandwidthMode::Cv => cv_bandwidth(&data, method, a.folds)?,
            BandwidthMode::Plugin => return Err(CliError::Usage("plug-in bandwidths apply to llmr only".into())),
        };
        let spec = BaselineSpec::new(method, h)?;
        let mut failed = 0;
        for &x in &grid {
            table.push(match baseline_fit(&data, x, &spec) {
                Ok(f) => vec![num(x), num(f.coefficients[a.derivative]), bool_str(f.converged), f.iterations.to_string(), nan.clone()],
                Err(e) => {
                    eprintln!("warning[{}]: grid point {}: {e}", e.code(), num(x));
                    failed += 1;
                    vec![num(x), nan.clone(), bool_str(false), "0".into(), nan.clone()]
                }
            });
        }
        (json!({ "h": h }), failed)
    };
    if failed == grid.len() {
        return Err(CliError::Model(ModalError::DegenerateWindow { center: grid[0] }));
    }
    let sink = Sink { output: a.output.clone() };
    sink.table(&table)?;
    sink.echo("fit", &json!({ "args": a, "n": data.len(), "bandwidths": resolved, "failed_points": failed }))
}

fn vc_fit(a: &VcFitArgs) -> CliResult<()> {
    let method = parse_method(&a.method)?;
    let em = em_config(&a.em, a.seed)?;
    let Parsed::Vc(data) = parse_dataset(&a.input, Layout::Vc)? else { unreachable!() };
    let grid = grid_for(a.grid.as_deref(), u_range(&data))?;
    let mode = resolve_mode(a.bandwidth, a.h1, method);
    let p = data.p();
    let mut header = vec!["u".to_string()];
    header.extend((0..p).map(|j| format!("g{j}")));
    header.extend(["converged", "iterations", "objective"].map(String::from));
    let mut table = Table::new(header);
    let nan_row = |u: f64| {
        let mut row = vec![num(u)];
        row.extend((0..p).map(|_| num(f64::NAN)));
        row.extend([bool_str(false), "0".into(), num(f64::NAN)]);
        row
    };
    let (resolved, failed) = if method == Method::LLMR {
        let bw = match mode {
            BandwidthMode::Manual => Bandwidths::new(required(a.h1, "--h1")?, required(a.h2, "--h2")?)?,
            BandwidthMode::Plugin => vc_plugin_bandwidths(&data, &em, &em.kernel.moments(1), curvature(a.vc_curvature))?.1,
            BandwidthMode::Cv => return Err(CliError::Usage("--bandwidth cv applies to the baselines ll, lm and lmd".into())),
        };
        let curves = vc_fit_curves(&data, &grid, bw, &em)?;
        let mut failed = 0;
        for (&u, fit) in curves.grid.iter().zip(&curves.fits) {
            table.push(match fit {
                Ok(f) => {
                    let mut row = vec![num(u)];
                    row.extend(f.coefficients.b.iter().map(|&b| num(b)));
                    row.extend([bool_str(f.converged), f.iterations.to_string(), num(f.objective)]);
                    row
                }
                Err(e) => {
                    eprintln!("warning[{}]: grid point {}: {e}", e.code(), num(u));
                    failed += 1;
                    nan_row(u)
                }
            });
        }
        (json!({ "h1": bw.h1, "h2": bw.h2 }), failed)
    } else {
        let h = match mode {
            BandwidthMode::Manual => required(a.h1, "--h1")?,
            BandwidthMode::Cv => vc_cv_bandwidth(&data, method, a.folds)?,
            BandwidthMode::Plugin => return Err(CliError::Usage("plug-in bandwidths apply to llmr only".into())),
        };
        let spec = BaselineSpec::new(method, h)?;
        let mut failed = 0;
        for &u in &grid {
            table.push(match vc_baseline_fit(&data, u, &spec) {
                Ok(g) => {
                    let mut row = vec![num(u)];
                    row.extend(g.iter().map(|&b| num(b)));
                    row.extend([bool_str(true), "0".into(), num(f64::NAN)]);
                    row
                }
                Err(e) => {
                    eprintln!("warning[{}]: grid point {}: {e}", e.code(), num(u));
                    failed += 1;
                    nan_row(u)
                }
            });
        }
        (json!({ "h": h }), failed)
    };
    if failed == grid.len() {
        return Err(CliError::Model(ModalError::DegenerateWindow { center: grid[0] }));
    }
    let sink = Sink { output: a.output.clone() };
    sink.table(&table)?;
    sink.echo("vc-fit", &json!({ "args": a, "n": data.len(), "bandwidths": resolved, "failed_points": failed }))
}

fn bandwidth_json(q: &PluginQuantities, bw: Bandwidths) -> serde_json::Value {
    json!({ "K": q.K, "M": q.M, "N": q.N, "L": q.L, "delta": q.delta, "h1": bw.h1, "h2": bw.h2 })
}

fn bandwidth(a: &BandwidthArgs) -> CliResult<()> {
    let em = em_config(&a.em, a.seed)?;
    let km = em.kernel.moments(1);
    let (q, bw) = match parse_any(&a.input)? {
        Parsed::Scalar(d) => plugin_bandwidths(&d, &em, &km)?,
        Parsed::Vc(d) => vc_plugin_bandwidths(&d, &em, &km, curvature(a.vc_curvature))?,
    };
    let sink = Sink { output: a.output.clone() };
    sink.json(&bandwidth_json(&q, bw))?;
    if a.output.is_some() {
        sink.echo("bandwidth", &json!({ "args": a }))?;
    }
    Ok(())
}

/// Writes a scalar dataset as `x,y`.
pub fn scalar_table(data: &Dataset) -> Table {
    let mut t = Table::new(["x", "y"]);
    for (x, y) in data.x().iter().zip(data.y()) {
        t.push(vec![num(*x), num(*y)]);
    }
    t
}

/// Writes a varying-coefficient dataset as `u,x1,…,xp,y`, dropping the intercept column.
pub fn vc_table(data: &VCDataset) -> Table {
    let p = data.p();
    let mut header = vec!["u".to_string()];
    header.extend((1..p).map(|j| format!("x{j}")));
    header.push("y".into());
    let mut t = Table::new(header);
    for i in 0..data.len() {
        let mut row = vec![num(data.u()[i])];
        row.extend(data.row(i)[1..].iter().map(|&v| num(v)));
        row.push(num(data.y()[i]));
        t.push(row);
    }
    t
}

fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let seed = require_seed(a.seed)?;
    let sc = scenario(a.scenario, a.homoscedastic)?;
    let mut rng = substream(seed, 0);
    let table = if sc.is_vc() {
        vc_table(&sc.generate_vc(a.n, &mut rng)?)
    } else {
        scalar_table(&sc.generate_scalar(a.n, &mut rng)?)
    };
    let sink = Sink { output: a.output.clone() };
    sink.table(&table)?;
    sink.echo("simulate", &json!({ "args": a, "scenario_detail": sc }))
}

fn coverage(a: &CoverageArgs) -> CliResult<()> {
    let seed = require_seed(a.seed)?;
    let methods = parse_methods(&a.methods)?;
    let sc = scenario(a.scenario, a.homoscedastic)?;
    let reps = a.reps.unwrap_or(if sc.is_vc() { 50 } else { 100 });
    let mut cfg = CoverageConfig::new(sc, methods, a.n, reps, a.widths.clone(), seed);
    cfg.em = em_config(&a.em, seed)?;
    if let Some(g) = a.grid_size {
        if cfg.scenario.is_vc() {
            cfg.vc_grid_size = g;
        } else {
            cfg.grid_size = g;
        }
    }
    cfg.convention = match a.convention {
        Convention::Half => IntervalConvention::HalfWidth,
        Convention::Full => IntervalConvention::FullLength,
    };
    cfg.sigma = a.sigma;
    cfg.cv_folds = a.folds;
    cfg.vc_curvature = curvature(a.vc_curvature);
    let study = run_coverage_study(&cfg)?;
    for f in &study.failures {
        eprintln!("warning[{}]: replication {} ({}): {}", f.code, f.replication, f.method.name(), f.message);
    }
    if !study.plugin_fallbacks.is_empty() {
        eprintln!(
            "warning: plug-in bandwidths failed in {} replications; the median of the successful selections was used",
            study.plugin_fallbacks.len()
        );
    }
    let mut table = Table::new(["method", "n", "width", "mean", "sd", "reps"]);
    for r in &study.reports {
        table.push(vec![r.method.name().into(), r.n.to_string(), num(r.width), num(r.mean), num(r.sd), r.reps.to_string()]);
    }
    let sink = Sink { output: a.output.clone() };
    sink.table(&table)?;
    sink.echo(
        "coverage",
        &json!({
            "args": a,
            "config": cfg,
            "failures": study.failures.len(),
            "plugin_fallbacks": study.plugin_fallbacks,
        }),
    )
}

fn theory_check(a: &TheoryArgs) -> CliResult<()> {
    let seed = require_seed(a.seed)?;
    let sc = scenario(a.scenario, Some(a.homoscedastic))?;
    let em = em_config(&a.em, seed)?;
    let reference = reference_bandwidths(a.n);
    let bandwidths = Bandwidths::new(a.h1.unwrap_or(reference.h1), a.h2.unwrap_or(reference.h2))?;
    let mut table = Table::new([
        "component", "n", "h1", "h2", "reps", "failed", "truth", "empirical_bias", "theoretical_bias",
        "empirical_variance", "theoretical_variance", "variance_ratio", "ks",
    ]);
    let config = if sc.is_vc() {
        let cfg = VcTheoryCheckConfig {
            scenario: sc,
            u0: a.at,
            bandwidths,
            n: a.n,
            replications: a.reps.unwrap_or(200),
            seed,
            em,
        };
        let r = vc_theory_check(&cfg)?;
        let p = r.truth.len();
        for j in 0..p {
            table.push(vec![
                format!("g{j}"),
                r.n.to_string(),
                num(r.h1),
                num(r.h2),
                r.replications.to_string(),
                r.failed.to_string(),
                num(r.truth[j]),
                num(r.empirical_bias[j]),
                num(r.theoretical_bias[j]),
                num(r.empirical_covariance[j * p + j]),
                num(r.theoretical_covariance[j * p + j]),
                num(r.diagonal_ratios[j]),
                num(r.ks_empirical[j]),
            ]);
        }
        json!(cfg)
    } else {
        let cfg = TheoryCheckConfig {
            scenario: sc,
            x0: a.at,
            bandwidths,
            n: a.n,
            replications: a.reps.unwrap_or(400),
            seed,
            em,
        };
        let r = mc_theory_check(&cfg)?;
        table.push(vec![
            "m".into(),
            r.n.to_string(),
            num(r.h1),
            num(r.h2),
            r.replications.to_string(),
            r.failed.to_string(),
            num(r.truth),
            num(r.empirical_bias),
            num(r.theoretical_bias),
            num(r.empirical_variance),
            num(r.theoretical_variance),
            num(r.variance_ratio),
            num(r.ks_theoretical),
        ]);
        json!(cfg)
    };
    let sink = Sink { output: a.output.clone() };
    sink.table(&table)?;
    sink.echo("theory-check", &json!({ "args": a, "config": config }))
}

fn cv(a: &CvArgs) -> CliResult<()> {
    let seed = require_seed(a.seed)?;
    let methods = parse_methods(&a.methods)?;
    let opts = CvOptions { em: em_config(&a.em, seed)?, ..CvOptions::default() };
    let data = match &a.input {
        Some(path) => match parse_dataset(path, Layout::Scalar)? {
            Parsed::Scalar(d) => d,
            Parsed::Vc(_) => unreachable!(),
        },
        None => {
            let sc = scenario(a.scenario, None)?;
            if sc.is_vc() {
                return Err(CliError::Usage("cv works on scalar data; choose --scenario example1".into()));
            }
            sc.generate_scalar(a.n, &mut substream(seed, 0))?
        }
    };
    let mode = match a.reps {
        Some(reps) => CvMode::Mccv { d: a.folds, reps },
        None => CvMode::KFold(a.folds),
    };
    let mut table = Table::new(["method", "median", "sd", "splits", "failed"]);
    for m in methods {
        let r = cv_mspe(&data, m, mode, seed, &opts)?;
        table.push(vec![m.name().into(), num(r.median), num(r.sd), r.splits.to_string(), r.failed.to_string()]);
    }
    let sink = Sink { output: a.output.clone() };
    sink.table(&table)?;
    sink.echo("cv", &json!({ "args": a, "n": data.len(), "options": opts }))
}
