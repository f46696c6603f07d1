//! Reports with a reproducibility header: CSV preambles, JSON envelopes and
//! static SVG plots. Nothing time-dependent is written, so equal configs give
//! equal bytes.

use serde::Serialize;
use serde_json::{json, Map, Value};
use std::path::Path;

use odp_core::annulus2d::ANNULUS_TOLERANCE;
use odp_core::bifurcate::ROOT_TOLERANCE;
use odp_core::modeop::NEAR_SINGULAR_COND;
use odp_core::verify::RADIAL_RESIDUAL;

use crate::config::RunConfig;
use crate::error::CliError;

/// Prefix of the config lines in a CSV preamble.
pub const CONFIG_PREFIX: &str = "# config: ";

pub struct Header {
    pub command: &'static str,
    /// Every grid size and parameter, defaults filled in.
    pub config: RunConfig,
    /// Derived quantities worth recording next to the inputs.
    pub notes: Vec<String>,
}

impl Header {
    pub fn new(command: &'static str, config: &RunConfig) -> Self {
        Header { command, config: effective(config), notes: Vec::new() }
    }

    pub fn note(mut self, text: String) -> Self {
        self.notes.push(text);
        self
    }

    fn tolerances(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("radial_residual", RADIAL_RESIDUAL),
            ("root", ROOT_TOLERANCE),
            ("annulus_residual", ANNULUS_TOLERANCE),
            ("near_singular_cond", NEAR_SINGULAR_COND),
            ("f_tolerance", self.config.f_tolerance()),
        ]
    }

    pub fn csv_preamble(&self) -> String {
        let mut s = format!("# odp {} {}\n", self.command, env!("CARGO_PKG_VERSION"));
        let tol: Vec<String> = self.tolerances().iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        s.push_str(&format!("# tolerances: {}\n", tol.join(" ")));
        for (k, v) in self.config.entries() {
            s.push_str(&format!("{CONFIG_PREFIX}{k} = {v}\n"));
        }
        for n in &self.notes {
            s.push_str(&format!("# note: {n}\n"));
        }
        s
    }

    pub fn json(&self) -> Value {
        let config: Map<String, Value> = self.config.entries().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
        let tol: Map<String, Value> = self.tolerances().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "tolerances": tol,
            "notes": self.notes,
        })
    }
}

/// The config with every default spelled out; `out` and the config paths dropped.
pub fn effective(c: &RunConfig) -> RunConfig {
    RunConfig {
        config: None,
        save_config: None,
        out: None,
        d: Some(c.d()),
        p: Some(c.p.unwrap_or(crate::config::DEFAULT_P)),
        k: Some(c.k()),
        group: Some(c.group_spec()),
        n: c.n,
        modes: Some(c.max_degree()),
        nr: Some(c.nr()),
        nr_annulus: Some(c.nr_annulus()),
        theta_points: Some(c.theta_points()),
        solution_modes: Some(c.solution_modes()),
        fourier_modes: Some(c.fourier_modes()),
        f_tolerance: Some(c.f_tolerance()),
        ..c.clone()
    }
}

/// Config recorded in a CSV preamble.
pub fn config_from_preamble(text: &str) -> Result<RunConfig, CliError> {
    let lines: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix(CONFIG_PREFIX)).collect();
    RunConfig::parse_text(&lines.join("\n"))
}

pub fn csv_table(header: &Header, columns: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.into_error()))?)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(header.csv_preamble() + &body)
}

pub fn json_report<T: Serialize>(header: &Header, report: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(&json!({ "header": header.json(), "report": report }))?;
    text.push('\n');
    Ok(text)
}

/// Writes to `path`, or to stdout when there is none.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Shortest text that parses back to the same `f64`; exponent form outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Polylines in a shared frame with axes labels; `series` are `(label, points)`.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)], equal_axes: bool) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let all = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let (mut sx, mut sy) = ((W - 2.0 * M) / (x1 - x0), (H - 2.0 * M) / (y1 - y0));
    if equal_axes {
        let s = sx.min(sy);
        sx = s;
        sy = s;
    }
    let px = |x: f64| M + (x - x0) * sx;
    let py = |y: f64| H - M - (y - y0) * sy;
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label} [{x0:.4e}, {x1:.4e}]</text>\n\
         <text x=\"14\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{y_label} [{y0:.4e}, {y1:.4e}]</text>\n",
        W / 2.0,
        H - M,
        W - M,
        H - M,
        H - M,
        W / 2.0,
        H - 20.0,
        H / 2.0,
        H / 2.0
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let c = colours[i % colours.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        s.push_str(&format!("<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>\n", path.join(" ")));
        if pts.len() < 16 {
            for &(x, y) in pts {
                s.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{c}\"/>\n", px(x), py(y)));
            }
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{c}\">{label}</text>\n",
            W - M - 150.0,
            M + 16.0 * i as f64
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preamble_records_defaults_and_reads_back() {
        let c = RunConfig { k: Some(0.02), ..Default::default() };
        let h = Header::new("radial", &c);
        let text = h.csv_preamble();
        assert!(text.contains("# config: nr = 2000"));
        assert!(text.contains("# config: theta-points = 256"));
        let back = config_from_preamble(&text).unwrap();
        assert_eq!(back, h.config);
    }

    #[test]
    fn csv_table_follows_the_preamble() {
        let h = Header::new("spectrum", &RunConfig::default());
        let text = csv_table(&h, &["l".into(), "mu".into()], &[vec!["0".into(), "0".into()]]).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, ["l,mu", "0,0"]);
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let s = svg_plot("t", "x", "y", &[("a".into(), vec![(0.0, 0.0), (1.0, 1.0)]), ("b".into(), vec![(0.0, 1.0)])], false);
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
    }
}
