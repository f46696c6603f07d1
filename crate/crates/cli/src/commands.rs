//! One function per subcommand: resolve the config, solve, write reports.

use serde::Serialize;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use odp_core::annulus2d::{
    annulus_grid_for, rescale_branch_point, rescaled_epsilon, trace_branch, BranchOptions, BranchPoint,
    RescaleReport,
};
use odp_core::bifurcate::{certify, parity_certificate, sweep, BifurcationCertificate, ParityVerdict, ROOT_TOLERANCE};
use odp_core::dtn::dtn_report;
use odp_core::exterior::{default_r_max, select_window, solve_exterior_radial, Window, DEFAULT_EXTERIOR_INTERVALS};
use odp_core::geometry::{sphere_eigen, ProblemParams};
use odp_core::radial::{solve_radial_any, solve_radial_from_limit, RadialProfile};
use odp_core::spectrum::{principal_dirichlet_pair, DirichletModeOperator};
use odp_core::verify::{Reference, Suite, BRANCH_AMPLITUDES};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{config_from_preamble, csv_table, emit, json_report, num, svg_plot, Header};

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn profile_rows(r: &[f64], u: &[f64], du: &[f64]) -> Vec<Vec<String>> {
    r.iter().zip(u).zip(du).map(|((r, u), du)| vec![num(*r), num(*u), num(*du)]).collect()
}

fn sphere_profile(params: &ProblemParams, intervals: usize) -> Result<RadialProfile, CliError> {
    Ok(solve_radial_any(params, intervals)?)
}

pub fn radial(cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.params()?.with_lambda(cfg.lambda()?);
    params.validate()?;
    let u = sphere_profile(&params, cfg.nr())?;
    let header = Header::new("radial", cfg)
        .note(format!("residual_norm={:e} du_at_1={} max_value={}", u.residual_norm, u.du_at_1, u.max_value()));
    let rows = profile_rows(&u.grid.nodes, &u.values, &u.derivative());
    emit(cfg.out.as_deref(), &csv_table(&header, &strings(&["r", "u", "du"]), &rows)?)
}

pub fn exterior(cfg: &RunConfig, scan: bool, json: Option<&Path>) -> Result<(), CliError> {
    let base = cfg.params()?.with_k(0.0);
    if scan {
        let group = cfg.group()?;
        let window = select_window(&base, &group)?;
        let degrees: Vec<usize> = group.allowed_modes.iter().map(|m| m.degree).collect();
        let mut cols = vec!["lambda".to_string()];
        cols.extend(degrees.iter().map(|l| format!("h_tilde_{l}")));
        cols.extend(strings(&["tau_tilde", "margin"]));
        let rows: Vec<Vec<String>> = window
            .scan
            .iter()
            .map(|r| {
                let mut row = vec![num(r.lambda)];
                row.extend(degrees.iter().map(|&l| num(r.h_of(l))));
                row.extend([num(r.tau), num(r.margin)]);
                row
            })
            .collect();
        let header = Header::new("exterior", cfg).note(window_note(&window));
        emit(cfg.out.as_deref(), &csv_table(&header, &cols, &rows)?)?;
        if let Some(path) = json {
            emit(Some(path), &json_report(&header, &WindowSummary::from(&window))?)?;
        }
        return Ok(());
    }
    let params = base.with_lambda(cfg.lambda()?);
    params.validate()?;
    let prof = solve_exterior_radial(&params, cfg.r_max.unwrap_or_else(|| default_r_max(params.lambda)), DEFAULT_EXTERIOR_INTERVALS)?;
    let header = Header::new("exterior", cfg)
        .note(format!("r_max={} residual_norm={:e} du_at_1={}", prof.grid.r_end(), prof.residual_norm, prof.du_at_1()));
    let rows = profile_rows(&prof.grid.nodes, &prof.values, &prof.grid.derivative(&prof.values));
    emit(cfg.out.as_deref(), &csv_table(&header, &strings(&["r", "u", "du"]), &rows)?)
}

fn window_note(w: &Window) -> String {
    format!(
        "lambda0={} lambda_star={} lambda1={} crossing_degree={} margin={:e}",
        w.lambda0, w.lambda_star, w.lambda1, w.crossing_degree, w.margin
    )
}

/// A window without its scan table.
#[derive(Debug, Serialize)]
pub struct WindowSummary {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda_star: f64,
    pub lambda_degenerate: Option<f64>,
    pub crossing_degree: usize,
    pub margin: f64,
}

impl From<&Window> for WindowSummary {
    fn from(w: &Window) -> Self {
        WindowSummary {
            lambda0: w.lambda0,
            lambda1: w.lambda1,
            lambda_star: w.lambda_star,
            lambda_degenerate: w.lambda_degenerate,
            crossing_degree: w.crossing_degree,
            margin: w.margin,
        }
    }
}

pub fn spectrum(cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.params()?.with_lambda(cfg.lambda()?);
    let u = sphere_profile(&params, cfg.nr())?;
    let pair = principal_dirichlet_pair(&u)?;
    let morse = DirichletModeOperator::new(&u, 0)?.op.dirichlet_count_below(0.0);
    let rows = (0..=cfg.max_degree())
        .map(|l| {
            let eig = DirichletModeOperator::new(&u, l)?.eigenvalues(2)?;
            Ok(vec![l.to_string(), num(sphere_eigen(l, params.d).0), num(eig[0]), num(eig[1])])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let header = Header::new("spectrum", cfg).note(format!("tau={} radial_morse_index={morse}", pair.tau));
    emit(cfg.out.as_deref(), &csv_table(&header, &strings(&["l", "mu", "eig1", "eig2"]), &rows)?)
}

pub fn dtn(cfg: &RunConfig, csv: Option<&Path>) -> Result<(), CliError> {
    let params = cfg.params()?.with_lambda(cfg.lambda()?);
    let group = cfg.group()?;
    let u = sphere_profile(&params, cfg.nr())?;
    let pair = principal_dirichlet_pair(&u)?;
    let report = dtn_report(&u, &group, &pair)?;
    let header = Header::new("dtn", cfg)
        .note(format!("sigma1={} sigma1_degree={} index={}", report.sigma1, report.sigma1_degree, report.index));
    emit(cfg.out.as_deref(), &json_report(&header, &report)?)?;
    if let Some(path) = csv {
        let rows: Vec<Vec<String>> =
            report.entries.iter().map(|e| vec![e.l.to_string(), num(e.mu), e.mult.to_string(), num(e.h)]).collect();
        emit(Some(path), &csv_table(&header, &strings(&["l", "mu", "mult", "h"]), &rows)?)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct CertificateReport {
    pub limit_window: WindowSummary,
    pub window: WindowSummary,
    pub certificate: BifurcationCertificate,
    pub parity: ParityVerdict,
}

fn certificate(cfg: &RunConfig) -> Result<CertificateReport, CliError> {
    let params = cfg.params()?;
    let group = cfg.group()?;
    let limit = select_window(&params, &group)?;
    let (window, cert) = certify(&params, &group, &limit, cfg.nr())?;
    let parity = parity_certificate(&cert, ROOT_TOLERANCE);
    Ok(CertificateReport { limit_window: (&limit).into(), window: (&window).into(), certificate: cert, parity })
}

pub fn lambda_star(cfg: &RunConfig) -> Result<(), CliError> {
    let rep = certificate(cfg)?;
    let c = &rep.certificate;
    let header = Header::new("lambda-star", cfg).note(format!(
        "lambda0={} lambda_star={} lambda1={} parity={}",
        c.window.0, c.lambda_star, c.window.1, rep.parity.holds
    ));
    emit(cfg.out.as_deref(), &json_report(&header, &rep)?)
}

pub fn sweep_k(cfg: &RunConfig, json: Option<&Path>) -> Result<(), CliError> {
    let k_list = cfg.k_list.clone().ok_or_else(|| CliError::Config("--k-list is required".into()))?;
    let params = cfg.params()?;
    for &k in &k_list {
        params.with_k(k).validate()?;
    }
    let group = cfg.group()?;
    let limit = select_window(&params, &group)?;
    let rows = sweep(&params, &k_list, &group, &limit, cfg.nr());
    let header = Header::new("sweep", cfg).note(window_note(&limit));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.k),
                r.lambda_star.map_or(String::new(), num),
                num(r.limit_lambda_star),
                r.parity.map_or(String::new(), |p| p.to_string()),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let cols = strings(&["k", "lambda_star", "limit_lambda_star", "parity", "error"]);
    emit(cfg.out.as_deref(), &csv_table(&header, &cols, &table)?)?;
    if let Some(path) = json {
        emit(Some(path), &json_report(&header, &rows)?)?;
    }
    Ok(())
}

pub fn branch(cfg: &RunConfig, svg: Option<&Path>) -> Result<(), CliError> {
    let n = cfg.dihedral_order()?;
    let cfg = &RunConfig { group: Some(format!("dihedral:{n}")), ..cfg.clone() };
    let star = match cfg.lambda_star {
        Some(s) => s,
        None => certificate(cfg)?.certificate.lambda_star,
    };
    let params = cfg.params()?.with_lambda(star);
    let u = solve_radial_from_limit(&params, cfg.nr_annulus())?.0;
    let grid = annulus_grid_for(&u, n, cfg.theta_points(), cfg.solution_modes())?;
    let amplitudes = cfg.amplitudes.clone().unwrap_or_else(|| BRANCH_AMPLITUDES.to_vec());
    let opts = BranchOptions { fourier_modes: cfg.fourier_modes(), f_tolerance: cfg.f_tolerance(), ..Default::default() };
    let points = trace_branch(&grid, &u, &amplitudes, &opts)?;
    let header = Header::new("branch", cfg).note(format!("lambda_star={star}"));
    let mut cols = strings(&["amplitude", "lambda"]);
    cols.extend((1..=opts.fourier_modes).map(|j| format!("a_{j}")));
    cols.extend(strings(&["F_residual", "neumann_constant", "neumann_stddev"]));
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut row = vec![num(p.amplitude), num(p.lambda)];
            row.extend(p.field.fourier.iter().map(|a| num(*a)));
            row.extend([num(p.f_residual), num(p.neumann_constant), num(p.neumann_stddev)]);
            row
        })
        .collect();
    emit(cfg.out.as_deref(), &csv_table(&header, &cols, &rows)?)?;
    if let Some(prefix) = svg {
        write_branch_svgs(prefix, n, star, &points)?;
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Boundary curves with the deviation magnified, and `lambda` against the
/// amplitude; negative amplitudes are the rotation by `pi / n` of positive ones.
fn write_branch_svgs(prefix: &Path, n: usize, star: f64, points: &[BranchPoint]) -> Result<(), CliError> {
    let biggest = points.iter().map(|p| p.amplitude.abs()).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let gain = 0.25 / biggest;
    let circle = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, f64)> {
        (0..=720)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 720.0;
                let r = 1.0 + f(t);
                (r * t.cos(), r * t.sin())
            })
            .collect()
    };
    let mut outlines = vec![("unit circle".to_string(), circle(&|_| 0.0))];
    for p in points {
        outlines.push((format!("a = {:e}", p.amplitude), circle(&|t| gain * p.field.eval(t).0)));
    }
    let title = format!("boundary 1 + {gain:.3e} v(theta), dihedral order {n}");
    emit(Some(&with_suffix(prefix, "_outline.svg")), &svg_plot(&title, "x", "y", &outlines, true))?;
    let mut diagram: Vec<(f64, f64)> = points.iter().rev().map(|p| (-p.amplitude, p.lambda)).collect();
    diagram.push((0.0, star));
    diagram.extend(points.iter().map(|p| (p.amplitude, p.lambda)));
    let series = vec![("branch".to_string(), diagram)];
    emit(Some(&with_suffix(prefix, "_diagram.svg")), &svg_plot("bifurcation diagram", "amplitude a_1", "lambda", &series, false))
}

pub fn verify(preset: &str, out: Option<&Path>) -> Result<(), CliError> {
    if preset != "reference" {
        return Err(CliError::Config(format!("unknown preset `{preset}`; available: reference")));
    }
    let reference = Reference::default();
    let suite = Suite::prepare(reference)?;
    let mut reports = Vec::new();
    for (id, _) in Suite::criteria() {
        let r = suite.run(id);
        println!("{r}");
        reports.push(r);
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{}/{} criteria passed", reports.len() - failed, reports.len());
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&serde_json::json!({ "reference": reference, "criteria": reports }))?;
        emit(Some(path), &(text + "\n"))?;
    }
    match failed {
        0 => Ok(()),
        n => Err(CliError::Acceptance(n)),
    }
}

#[derive(Debug, Serialize)]
pub struct RescaledPoint {
    pub k: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub domain: String,
}

#[derive(Debug, Serialize)]
pub struct RescaleOutput {
    pub points: Vec<RescaledPoint>,
    /// Re-solve of the first point on the unit sphere.
    pub resolve: Option<RescaleReport>,
}

fn rescaled(d: usize, p: f64, k: f64, lambda: f64, perturbed: bool) -> RescaledPoint {
    let epsilon = rescaled_epsilon(lambda, k);
    let radius = if perturbed { format!("{k} (1 + v)") } else { k.to_string() };
    RescaledPoint {
        k,
        lambda,
        epsilon,
        domain: format!(
            "complement of the geodesic ball of radius {radius} in the unit sphere S^{d}, \
             with -{epsilon} Delta u + u - u^{p} = 0, u = 0 and constant normal derivative on its boundary"
        ),
    }
}

pub fn rescale(cfg: &RunConfig, input: Option<&Path>, resolve: bool) -> Result<(), CliError> {
    let (run, output) = match input {
        None => {
            let params = cfg.params()?.with_lambda(cfg.lambda()?);
            params.validate()?;
            (cfg.clone(), RescaleOutput { points: vec![rescaled(params.d, params.p, params.k, params.lambda, false)], resolve: None })
        }
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            if text.trim_start().starts_with('{') {
                rescale_certificate(cfg, &text)?
            } else {
                rescale_branch(cfg, &text, resolve)?
            }
        }
    };
    let header = Header::new("rescale", &run);
    emit(cfg.out.as_deref(), &json_report(&header, &output)?)
}

fn rescale_certificate(cfg: &RunConfig, text: &str) -> Result<(RunConfig, RescaleOutput), CliError> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let cert = &v["report"]["certificate"];
    let (k, star) = match (cert["k"].as_f64(), cert["lambda_star"].as_f64()) {
        (Some(k), Some(s)) => (k, s),
        _ => return Err(CliError::Config("input JSON is not a lambda-star certificate".into())),
    };
    let recorded = serde_json::from_value::<std::collections::BTreeMap<String, String>>(v["header"]["config"].clone())
        .map(|m| m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect::<String>())
        .map_err(|_| CliError::Config("certificate header has no config".into()))?;
    let run = cfg.clone().over(RunConfig::parse_text(&recorded)?);
    let p = run.params()?;
    Ok((run, RescaleOutput { points: vec![rescaled(p.d, p.p, k, star, false)], resolve: None }))
}

fn rescale_branch(cfg: &RunConfig, text: &str, resolve: bool) -> Result<(RunConfig, RescaleOutput), CliError> {
    let run = cfg.clone().over(config_from_preamble(text)?);
    let params = run.params()?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let cols: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| cols.iter().position(|c| c == name);
    let (Some(ia), Some(il)) = (col("amplitude"), col("lambda")) else {
        return Err(CliError::Config("input CSV is not a branch table".into()));
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64, CliError> {
            rec[i].parse().map_err(|_| CliError::Config(format!("bad number `{}` in branch table", &rec[i])))
        };
        rows.push((get(ia)?, get(il)?));
    }
    let points = rows.iter().map(|(_, lam)| rescaled(params.d, params.p, params.k, *lam, true)).collect();
    let report = match (resolve, rows.first()) {
        (true, Some(&(amp, _))) => {
            let star = noted(text, "lambda_star")
                .ok_or_else(|| CliError::Config("branch table has no lambda_star note".into()))?;
            Some(resolve_on_unit_sphere(&run, star, amp)?)
        }
        _ => None,
    };
    Ok((run, RescaleOutput { points, resolve: report }))
}

/// Value of `key=value` in the `# note:` lines of a CSV preamble.
fn noted(text: &str, key: &str) -> Option<f64> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# note: "))
        .flat_map(str::split_whitespace)
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

/// Re-traces the branch point at `amplitude` from `lambda_*` (a plain Dirichlet
/// solve is near singular there), then transports it.
fn resolve_on_unit_sphere(run: &RunConfig, star: f64, amplitude: f64) -> Result<RescaleReport, CliError> {
    let n = run.dihedral_order()?;
    let params = run.params()?.with_lambda(star);
    let u = solve_radial_from_limit(&params, run.nr_annulus())?.0;
    let grid = annulus_grid_for(&u, n, run.theta_points(), run.solution_modes())?;
    let opts = BranchOptions { fourier_modes: run.fourier_modes(), f_tolerance: run.f_tolerance(), ..Default::default() };
    let point = trace_branch(&grid, &u, &[amplitude], &opts)?.remove(0);
    Ok(rescale_branch_point(&grid, &point, params.p)?)
}
