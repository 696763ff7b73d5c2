//! Command-line front end.
//!
//! Exit status is 0 on success, 2 for bad arguments (including unknown
//! subcommands and flags) and 1 when a run fails. Each subcommand echoes its
//! resolved settings to stderr so that a run can be repeated exactly.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::ensemble::{sample_harmonic, trial_seed};
use crate::error::{Error, Result};
use crate::experiment::{
    self, cov_check_csv, format_sig17, parse_config, parse_value, run_mc_with, to_json_line, verify_covariance,
    ExperimentConfig,
};
use crate::geometry::{FieldSpec, SpherePoint};
use crate::kac_rice::{expected_count, first_intensity, QuadratureSpec};
use crate::nodal::{find_tangent_points, DEFAULT_DENSITY};

#[derive(Debug, Parser)]
#[command(name = "nodal-tangent", version, about = "Expected number of V-tangent nodal points of random spherical harmonics")]
pub struct Cli {
    /// File of `key = value` lines that override the flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo mean of the count, compared with the Kac-Rice value
    Mc(McArgs),
    /// Count the tangent points of one sampled harmonic
    Count(CountArgs),
    /// Kac-Rice expected count by quadrature
    Expect(ExpectArgs),
    /// Kac-Rice intensity on a latitude-longitude grid, as CSV
    Intensity(IntensityArgs),
    /// Check the closed-form covariance against finite differences, as CSV
    VerifyCov(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct QuadArgs {
    /// Initial Gauss-Legendre nodes in phi
    #[arg(long, default_value_t = QuadratureSpec::default().n_phi)]
    pub n_phi: usize,
    /// Initial trapezoid nodes in theta
    #[arg(long, default_value_t = QuadratureSpec::default().n_theta)]
    pub n_theta: usize,
    /// Excision exponent, in (5/54, 1/3)
    #[arg(long, default_value_t = QuadratureSpec::default().excision_alpha)]
    pub alpha: f64,
    /// Excision policy: none, exclude or clamp
    #[arg(long, default_value = "none")]
    pub policy: String,
}

impl QuadArgs {
    fn spec(&self) -> Result<QuadratureSpec> {
        Ok(QuadratureSpec {
            n_phi: self.n_phi,
            n_theta: self.n_theta,
            excision_alpha: self.alpha,
            policy: self.policy.parse()?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n_phi" => self.n_phi = parse_value(key, value)?,
            "n_theta" => self.n_theta = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "policy" => self.policy = value.to_string(),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    /// Degree of the harmonics
    #[arg(long)]
    pub l: Option<usize>,
    /// rotation, zgrad, tilted or custom:<v1>;<v2>
    #[arg(long, default_value = "rotation")]
    pub field: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    /// Grid nodes per unit degree in each direction
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    pub density: usize,
    #[command(flatten)]
    pub quad: QuadArgs,
    /// Report file; stdout when omitted
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// json or csv
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Worker threads; the report does not depend on it
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Record the wall-clock time in the report (breaks byte-reproducibility)
    #[arg(long)]
    pub timing: bool,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Clone, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub l: Option<usize>,
    /// Sample seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "rotation")]
    pub field: String,
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    pub density: usize,
    /// Write the points as CSV (theta, phi, residual, jacobian_det)
    #[arg(long, value_name = "FILE")]
    pub emit_points: Option<PathBuf>,
    /// Summary file; stdout when omitted
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExpectArgs {
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long, default_value = "rotation")]
    pub field: String,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IntensityArgs {
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long, default_value = "rotation")]
    pub field: String,
    /// Grid rows, at cell-centred colatitudes
    #[arg(long, default_value_t = 64)]
    pub n_phi: usize,
    /// Grid columns, equally spaced in longitude
    #[arg(long, default_value_t = 128)]
    pub n_theta: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Degrees to check, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 7, 15])]
    pub l: Vec<usize>,
    /// Random (field, point) configurations per degree
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// Seed for the configurations
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_argument() {
                2
            } else {
                1
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Vec<(String, String)>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Argument(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

fn ignored(cmd: &str, key: &str) {
    eprintln!("note: config key {key:?} does not apply to {cmd}, ignored");
}

fn require_l(l: Option<usize>) -> Result<usize> {
    l.ok_or_else(|| Error::arg("--l is required (flag or config key)"))
}

fn write_text(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn shown(output: Option<&Path>) -> String {
    output.map(|p| p.display().to_string()).unwrap_or_else(|| "-".into())
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let overrides = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Mc(a) => mc(a, &overrides),
        Command::Count(a) => count(a, &overrides),
        Command::Expect(a) => expect(a, &overrides),
        Command::Intensity(a) => intensity(a, &overrides),
        Command::VerifyCov(a) => verify(a, &overrides),
    }
}

fn mc(a: McArgs, overrides: &[(String, String)]) -> Result<()> {
    let mut cfg = ExperimentConfig::new(0, a.field.parse()?, a.trials, a.base_seed);
    cfg.l = a.l.unwrap_or(0);
    cfg.grid_density = a.density;
    cfg.quadrature = a.quad.spec()?;
    cfg.output = a.output;
    cfg.format = a.format.parse()?;
    let mut l_given = a.l.is_some();
    for (k, v) in overrides {
        cfg.set(k, v)?;
        l_given |= k == "l";
    }
    if !l_given {
        require_l(None)?;
    }
    cfg.validate()?;
    eprintln!(
        "mc: l={} field={} trials={} base_seed={} density={} n_phi={} n_theta={} alpha={} policy={} format={} output={} workers={}",
        cfg.l,
        cfg.field,
        cfg.trials,
        cfg.base_seed,
        cfg.grid_density,
        cfg.quadrature.n_phi,
        cfg.quadrature.n_theta,
        cfg.quadrature.excision_alpha,
        cfg.quadrature.policy,
        cfg.format,
        shown(cfg.output.as_deref()),
        a.workers,
    );
    eprintln!(
        "mc: trial i uses seed splitmix64(base_seed ^ splitmix64(i)); trial 0 seed = {}",
        trial_seed(cfg.base_seed, 0)
    );
    let start = Instant::now();
    let mut r = run_mc_with(&cfg, a.workers)?;
    if a.timing {
        r.runtime_s = Some(start.elapsed().as_secs_f64());
    }
    if let Some(e) = &r.kac_rice_error {
        eprintln!("warning: Kac-Rice value unavailable: {e}");
    }
    eprintln!(
        "mc: mean={} se={} degenerate={} kac_rice={} z={}",
        r.mean,
        r.se.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        r.degenerate,
        r.kac_rice_value.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        r.z_score.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
    );
    experiment::write_report(&cfg, &r)
}

#[derive(Serialize)]
struct CountSummary {
    l: usize,
    field: String,
    seed: u64,
    density: usize,
    count: usize,
    seeded_cells: usize,
    diverged: usize,
    excluded_in_caps: usize,
    merged: usize,
}

fn count(mut a: CountArgs, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        match k.as_str() {
            "l" => a.l = Some(parse_value(k, v)?),
            "field" => a.field = v.clone(),
            "density" => a.density = parse_value(k, v)?,
            "output" => a.output = Some(PathBuf::from(v)),
            _ => ignored("count", k),
        }
    }
    let l = require_l(a.l)?;
    let field: FieldSpec = a.field.parse()?;
    eprintln!(
        "count: l={l} field={field} seed={} density={} output={}",
        a.seed,
        a.density,
        shown(a.output.as_deref())
    );
    let s = sample_harmonic(l, a.seed)?;
    let r = find_tangent_points(&s, &field, a.density)?;
    if let Some(path) = &a.emit_points {
        let mut csv = String::from("theta,phi,residual,jacobian_det\n");
        for p in &r.points {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                format_sig17(p.location.theta()),
                format_sig17(p.location.phi()),
                format_sig17(p.residual),
                format_sig17(p.jacobian_det)
            ));
        }
        std::fs::write(path, csv)?;
    }
    let summary = CountSummary {
        l,
        field: field.to_string(),
        seed: a.seed,
        density: a.density,
        count: r.count,
        seeded_cells: r.seeded_cells,
        diverged: r.diverged,
        excluded_in_caps: r.excluded_in_caps,
        merged: r.merged,
    };
    write_text(a.output.as_deref(), &to_json_line(&summary)?)
}

#[derive(Serialize)]
struct ExpectSummary {
    l: usize,
    field: String,
    alpha: f64,
    value: f64,
    error_estimate: f64,
    leading_term: f64,
}

fn expect(mut a: ExpectArgs, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        match k.as_str() {
            "l" => a.l = Some(parse_value(k, v)?),
            "field" => a.field = v.clone(),
            "output" => a.output = Some(PathBuf::from(v)),
            _ => {
                if !a.quad.set(k, v)? {
                    ignored("expect", k)
                }
            }
        }
    }
    let l = require_l(a.l)?;
    let field: FieldSpec = a.field.parse()?;
    let q = a.quad.spec()?;
    eprintln!(
        "expect: l={l} field={field} n_phi={} n_theta={} alpha={} policy={} output={}",
        q.n_phi,
        q.n_theta,
        q.excision_alpha,
        q.policy,
        shown(a.output.as_deref())
    );
    let e = expected_count(l, &field, &q)?;
    eprintln!("expect: converged at n_phi={} n_theta={}", e.n_phi, e.n_theta);
    let summary = ExpectSummary {
        l,
        field: field.to_string(),
        alpha: q.excision_alpha,
        value: e.value,
        error_estimate: e.error_estimate,
        leading_term: crate::leading_term(l),
    };
    write_text(a.output.as_deref(), &to_json_line(&summary)?)
}

fn intensity(mut a: IntensityArgs, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        match k.as_str() {
            "l" => a.l = Some(parse_value(k, v)?),
            "field" => a.field = v.clone(),
            "n_phi" => a.n_phi = parse_value(k, v)?,
            "n_theta" => a.n_theta = parse_value(k, v)?,
            "output" => a.output = Some(PathBuf::from(v)),
            _ => ignored("intensity", k),
        }
    }
    let l = require_l(a.l)?;
    let field: FieldSpec = a.field.parse()?;
    if a.n_phi == 0 || a.n_theta == 0 {
        return Err(Error::arg("grid sizes must be positive"));
    }
    eprintln!(
        "intensity: l={l} field={field} n_phi={} n_theta={} output={}",
        a.n_phi,
        a.n_theta,
        shown(a.output.as_deref())
    );
    let mut csv = String::from("theta,phi,k_v,rho,det_delta\n");
    let mut skipped = 0;
    for j in 0..a.n_phi {
        let phi = std::f64::consts::PI * (j as f64 + 0.5) / a.n_phi as f64;
        for i in 0..a.n_theta {
            let theta = std::f64::consts::TAU * i as f64 / a.n_theta as f64;
            let p = SpherePoint::new(theta, phi)?;
            let (t, ph) = (format_sig17(theta), format_sig17(phi));
            match first_intensity(l, &field, &p) {
                Ok(k) => csv.push_str(&format!(
                    "{t},{ph},{},{},{}\n",
                    format_sig17(k.value),
                    format_sig17(k.rho),
                    format_sig17(k.det_delta)
                )),
                // the intensity is undefined where V vanishes or the
                // conditioning degenerates; keep the grid shape
                Err(Error::DegeneratePoint { .. } | Error::DegenerateConditioning(_)) => {
                    skipped += 1;
                    csv.push_str(&format!("{t},{ph},,,\n"));
                }
                Err(e) => return Err(e),
            }
        }
    }
    if skipped > 0 {
        eprintln!("intensity: {skipped} grid points left empty (degenerate)");
    }
    write_text(a.output.as_deref(), &csv)
}

fn verify(mut a: VerifyArgs, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        match k.as_str() {
            "l" => a.l = vec![parse_value(k, v)?],
            "output" => a.output = Some(PathBuf::from(v)),
            _ => ignored("verify-cov", k),
        }
    }
    if a.l.is_empty() || a.samples == 0 {
        return Err(Error::arg("need at least one degree and one sample"));
    }
    let ls = a.l.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
    eprintln!("verify-cov: l={ls} samples={} seed={} output={}", a.samples, a.seed, shown(a.output.as_deref()));
    let rows = verify_covariance(&a.l, a.samples, a.seed)?;
    write_text(a.output.as_deref(), &cov_check_csv(&rows))?;
    let failed = rows.iter().filter(|r| !r.passed()).count();
    let worst = rows.iter().filter(|r| !r.absolute).map(|r| r.error).fold(0.0, f64::max);
    eprintln!("verify-cov: {} rows, {failed} failed, max relative error {worst:e}", rows.len());
    if failed > 0 {
        return Err(Error::Experiment(format!("{failed} covariance entries exceed tolerance")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::OutputFormat;

    #[test]
    fn exit_codes() {
        assert_eq!(run(["nodal-tangent", "frobnicate"]), 2);
        assert_eq!(run(["nodal-tangent", "mc", "--bogus"]), 2);
        assert_eq!(run(["nodal-tangent", "mc", "--field", "rotation"]), 2);
        assert_eq!(run(["nodal-tangent", "expect", "--l", "3", "--alpha", "0.5"]), 2);
        assert_eq!(run(["nodal-tangent", "count", "--l", "3", "--field", "spiral"]), 2);
        assert_eq!(run(["nodal-tangent", "--config", "/nonexistent/cfg", "count", "--l", "3"]), 2);
    }

    #[test]
    fn output_format_round_trip() {
        for f in [OutputFormat::Json, OutputFormat::Csv] {
            assert_eq!(f.to_string().parse::<OutputFormat>().unwrap(), f);
        }
    }
}
