//! Flat `key = value` run configuration mirroring the command-line flags.
//!
//! Keys are the long flag names. Files written by [`RunConfig::render`] read back
//! to the same value and render byte-identically; floats use the shortest
//! representation that round-trips.

use clap::Args;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use odp_core::geometry::{ProblemParams, SymmetryGroup, DEFAULT_MAX_DEGREE};
use odp_core::radial::DEFAULT_RADIAL_INTERVALS;

use crate::error::CliError;
use crate::output::num;

pub const DEFAULT_D: usize = 2;
pub const DEFAULT_P: f64 = 3.0;
/// Reference curvature; see the README for why it is not larger.
pub const DEFAULT_K: f64 = 0.01;
pub const DEFAULT_GROUP: &str = "dihedral:2";
pub const DEFAULT_THETA_POINTS: usize = odp_core::annulus2d::DEFAULT_THETA_POINTS;
pub const DEFAULT_SOLUTION_MODES: usize = odp_core::annulus2d::DEFAULT_SOLUTION_MODES;
pub const DEFAULT_FOURIER_MODES: usize = odp_core::annulus2d::DEFAULT_FOURIER_MODES;
/// Radial node gaps of the two-dimensional solves.
pub const DEFAULT_ANNULUS_INTERVALS: usize = 480;
pub const DEFAULT_F_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct RunConfig {
    /// Read defaults from a flat `key = value` file; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the resolved configuration and continue.
    #[arg(long)]
    pub save_config: Option<PathBuf>,

    /// Dimension of the sphere.
    #[arg(long)]
    pub d: Option<usize>,
    /// Exponent of the nonlinearity.
    #[arg(long)]
    pub p: Option<f64>,
    /// Curvature parameter: the sphere has radius 1/k.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `dihedral:N` or `explicit:deg/mult,...`.
    #[arg(long)]
    pub group: Option<String>,
    /// Dihedral order; shorthand for `--group dihedral:N`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Largest spherical-harmonic degree in the mode tables.
    #[arg(long)]
    pub modes: Option<usize>,
    /// Radial node gaps of the sphere grid.
    #[arg(long)]
    pub nr: Option<usize>,
    /// Radial node gaps of the two-dimensional solves.
    #[arg(long)]
    pub nr_annulus: Option<usize>,
    #[arg(long)]
    pub theta_points: Option<usize>,
    /// Cosine modes of the two-dimensional solution.
    #[arg(long)]
    pub solution_modes: Option<usize>,
    /// Cosine modes of the boundary perturbation.
    #[arg(long)]
    pub fourier_modes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub amplitudes: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub k_list: Option<Vec<f64>>,
    /// Skip certification and branch from this value.
    #[arg(long)]
    pub lambda_star: Option<f64>,
    /// Target for `sup |F|` on the branch.
    #[arg(long)]
    pub f_tolerance: Option<f64>,
    /// Truncation radius of the flat-limit problem; by default it scales with `1 / sqrt(lambda)`.
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn list(values: &[f64]) -> String {
    values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse().map_err(|_| CliError::Config(format!("config key `{key}`: cannot parse `{raw}`")))
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',').map(|s| parse(key, s.trim())).collect()
}

impl RunConfig {
    /// `(key, value)` pairs of the set fields, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                e.push((k, v));
            }
        };
        put("d", self.d.map(|v| v.to_string()));
        put("p", self.p.map(num));
        put("k", self.k.map(num));
        put("lambda", self.lambda.map(num));
        put("group", self.group.clone());
        put("n", self.n.map(|v| v.to_string()));
        put("modes", self.modes.map(|v| v.to_string()));
        put("nr", self.nr.map(|v| v.to_string()));
        put("nr-annulus", self.nr_annulus.map(|v| v.to_string()));
        put("theta-points", self.theta_points.map(|v| v.to_string()));
        put("solution-modes", self.solution_modes.map(|v| v.to_string()));
        put("fourier-modes", self.fourier_modes.map(|v| v.to_string()));
        put("amplitudes", self.amplitudes.as_deref().map(list));
        put("k-list", self.k_list.as_deref().map(list));
        put("lambda-star", self.lambda_star.map(num));
        put("f-tolerance", self.f_tolerance.map(num));
        put("r-max", self.r_max.map(num));
        put("out", self.out.as_ref().map(|v| v.display().to_string()));
        e
    }

    pub fn render(&self) -> String {
        self.entries().into_iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", lineno + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            match key {
                "d" => c.d = Some(parse(key, raw)?),
                "p" => c.p = Some(parse(key, raw)?),
                "k" => c.k = Some(parse(key, raw)?),
                "lambda" => c.lambda = Some(parse(key, raw)?),
                "group" => c.group = Some(raw.to_string()),
                "n" => c.n = Some(parse(key, raw)?),
                "modes" => c.modes = Some(parse(key, raw)?),
                "nr" => c.nr = Some(parse(key, raw)?),
                "nr-annulus" => c.nr_annulus = Some(parse(key, raw)?),
                "theta-points" => c.theta_points = Some(parse(key, raw)?),
                "solution-modes" => c.solution_modes = Some(parse(key, raw)?),
                "fourier-modes" => c.fourier_modes = Some(parse(key, raw)?),
                "amplitudes" => c.amplitudes = Some(parse_list(key, raw)?),
                "k-list" => c.k_list = Some(parse_list(key, raw)?),
                "lambda-star" => c.lambda_star = Some(parse(key, raw)?),
                "f-tolerance" => c.f_tolerance = Some(parse(key, raw)?),
                "r-max" => c.r_max = Some(parse(key, raw)?),
                "out" => c.out = Some(PathBuf::from(raw)),
                other => return Err(CliError::Config(format!("config line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// Fields set here win over `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        RunConfig {
            config: self.config.or(base.config),
            save_config: self.save_config.or(base.save_config),
            d: self.d.or(base.d),
            p: self.p.or(base.p),
            k: self.k.or(base.k),
            lambda: self.lambda.or(base.lambda),
            group: self.group.or(base.group),
            n: self.n.or(base.n),
            modes: self.modes.or(base.modes),
            nr: self.nr.or(base.nr),
            nr_annulus: self.nr_annulus.or(base.nr_annulus),
            theta_points: self.theta_points.or(base.theta_points),
            solution_modes: self.solution_modes.or(base.solution_modes),
            fourier_modes: self.fourier_modes.or(base.fourier_modes),
            amplitudes: self.amplitudes.or(base.amplitudes),
            k_list: self.k_list.or(base.k_list),
            lambda_star: self.lambda_star.or(base.lambda_star),
            f_tolerance: self.f_tolerance.or(base.f_tolerance),
            r_max: self.r_max.or(base.r_max),
            out: self.out.or(base.out),
        }
    }

    /// Flags over the `--config` file, if any.
    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let merged = match &self.config {
            Some(path) => self.clone().over(Self::load(path)?),
            None => self,
        };
        if let Some(path) = &merged.save_config {
            std::fs::write(path, merged.render()).map_err(CliError::Io)?;
        }
        Ok(merged)
    }

    pub fn d(&self) -> usize {
        self.d.unwrap_or(DEFAULT_D)
    }

    pub fn k(&self) -> f64 {
        self.k.unwrap_or(DEFAULT_K)
    }

    pub fn nr(&self) -> usize {
        self.nr.unwrap_or(DEFAULT_RADIAL_INTERVALS)
    }

    pub fn nr_annulus(&self) -> usize {
        self.nr_annulus.unwrap_or(DEFAULT_ANNULUS_INTERVALS)
    }

    pub fn theta_points(&self) -> usize {
        self.theta_points.unwrap_or(DEFAULT_THETA_POINTS)
    }

    pub fn solution_modes(&self) -> usize {
        self.solution_modes.unwrap_or(DEFAULT_SOLUTION_MODES)
    }

    pub fn fourier_modes(&self) -> usize {
        self.fourier_modes.unwrap_or(DEFAULT_FOURIER_MODES)
    }

    pub fn f_tolerance(&self) -> f64 {
        self.f_tolerance.unwrap_or(DEFAULT_F_TOLERANCE)
    }

    pub fn max_degree(&self) -> usize {
        self.modes.unwrap_or(DEFAULT_MAX_DEGREE)
    }

    /// Parameters at `lambda` (1 when unset: the limit scans ignore it).
    pub fn params(&self) -> Result<ProblemParams, CliError> {
        Ok(ProblemParams::new(self.d(), self.p.unwrap_or(DEFAULT_P), self.k(), self.lambda.unwrap_or(1.0))?)
    }

    pub fn lambda(&self) -> Result<f64, CliError> {
        self.lambda.ok_or_else(|| CliError::Config("--lambda is required".into()))
    }

    pub fn group_spec(&self) -> String {
        match (&self.group, self.n) {
            (Some(g), _) => g.clone(),
            (None, Some(n)) => format!("dihedral:{n}"),
            (None, None) => DEFAULT_GROUP.to_string(),
        }
    }

    pub fn group(&self) -> Result<SymmetryGroup, CliError> {
        Ok(SymmetryGroup::parse(&self.group_spec(), self.d(), self.max_degree())?)
    }

    /// Dihedral order of the group, required by the two-dimensional solves.
    pub fn dihedral_order(&self) -> Result<usize, CliError> {
        if let Some(n) = self.n {
            return Ok(n);
        }
        self.group_spec()
            .strip_prefix("dihedral:")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| CliError::Config("two-dimensional solves need a dihedral group (--n or --group dihedral:N)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn explicit_flags_win_over_the_file() {
        let file = RunConfig::parse_text("k = 0.02\nlambda = 3\n# note\n\nnr = 400\n").unwrap();
        let flags = RunConfig { k: Some(0.05), ..Default::default() };
        let merged = flags.over(file);
        assert_eq!(merged.k, Some(0.05));
        assert_eq!(merged.lambda, Some(3.0));
        assert_eq!(merged.nr, Some(400));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(RunConfig::parse_text("colour = red"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse_text("k = fast"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse_text("k 0.1"), Err(CliError::Config(_))));
    }

    #[test]
    fn dihedral_order_comes_from_n_or_the_group() {
        let c = RunConfig { group: Some("dihedral:3".into()), ..Default::default() };
        assert_eq!(c.dihedral_order().unwrap(), 3);
        let c = RunConfig { group: Some("explicit:2/1".into()), ..Default::default() };
        assert!(c.dihedral_order().is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6..1e6f64, 1e-12..1e-2f64]
    }

    prop_compose! {
        fn configs()(
            d in proptest::option::of(2usize..6),
            p in proptest::option::of(finite()),
            k in proptest::option::of(finite()),
            lambda in proptest::option::of(finite()),
            group in proptest::option::of("dihedral:[1-9]"),
            nr in proptest::option::of(8usize..10_000),
            amplitudes in proptest::option::of(proptest::collection::vec(finite(), 1..5)),
            k_list in proptest::option::of(proptest::collection::vec(finite(), 1..5)),
            f_tolerance in proptest::option::of(finite()),
            r_max in proptest::option::of(finite()),
            out in proptest::option::of("[a-z]{1,8}\\.csv"),
        ) -> RunConfig {
            RunConfig {
                d, p, k, lambda, group, nr, amplitudes, k_list, f_tolerance, r_max,
                out: out.map(PathBuf::from),
                ..Default::default()
            }
        }
    }

    proptest! {
        #[test]
        fn write_read_write_is_byte_identical(c in configs()) {
            let first = c.render();
            let back = RunConfig::parse_text(&first).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.render(), first);
        }
    }
}
