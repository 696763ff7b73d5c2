//! Reproducible Monte Carlo experiments and their reports.
//!
//! Trial `i` of an experiment samples the harmonic with seed
//! [`trial_seed`]`(base_seed, i)`, so every count is a pure function of the
//! configuration and the trial index. Trials are spread over a worker pool
//! and folded back in index order, which makes the report byte-identical for
//! any number of workers.

use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{covariance_closed_form, covariance_fd_oracle, LABELS};
use crate::ensemble::{sample_harmonic, trial_seed};
use crate::error::{Error, Result};
use crate::geometry::{field_jet, FieldSpec, SpherePoint};
use crate::kac_rice::{expected_count, QuadratureSpec};
use crate::nodal::{find_tangent_points, DEFAULT_DENSITY, MIN_DENSITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::arg(format!("unknown output format {other:?}, expected json or csv"))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        })
    }
}

/// Keys accepted in a config file.
pub const CONFIG_KEYS: [&str; 11] =
    ["l", "field", "trials", "base_seed", "density", "n_phi", "n_theta", "alpha", "policy", "output", "format"];

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; unknown keys are rejected. Later lines win.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::arg(format!("config line {}: expected 'key = value'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::arg(format!("config line {}: unknown key {k:?}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses a config value, naming the key on failure.
pub fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::arg(format!("invalid value {v:?} for {key}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub l: usize,
    pub field: FieldSpec,
    pub trials: usize,
    pub base_seed: u64,
    pub grid_density: usize,
    pub quadrature: QuadratureSpec,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl ExperimentConfig {
    pub fn new(l: usize, field: FieldSpec, trials: usize, base_seed: u64) -> Self {
        ExperimentConfig {
            l,
            field,
            trials,
            base_seed,
            grid_density: DEFAULT_DENSITY,
            quadrature: QuadratureSpec::default(),
            output: None,
            format: OutputFormat::Json,
        }
    }

    /// Applies one config-file entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "l" => self.l = parse_value(key, value)?,
            "field" => self.field = value.parse()?,
            "trials" => self.trials = parse_value(key, value)?,
            "base_seed" => self.base_seed = parse_value(key, value)?,
            "density" => self.grid_density = parse_value(key, value)?,
            "n_phi" => self.quadrature.n_phi = parse_value(key, value)?,
            "n_theta" => self.quadrature.n_theta = parse_value(key, value)?,
            "alpha" => self.quadrature.excision_alpha = parse_value(key, value)?,
            "policy" => self.quadrature.policy = value.parse()?,
            "output" => self.output = Some(PathBuf::from(value)),
            "format" => self.format = value.parse()?,
            _ => return Err(Error::arg(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::arg("degree must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::arg("trials must be at least 1"));
        }
        if self.grid_density < MIN_DENSITY {
            return Err(Error::arg(format!("grid density must be at least {MIN_DENSITY}")));
        }
        self.quadrature.validate()
    }
}

/// Outcome of one trial; `count` is `None` for a degenerate sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub seed: u64,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCResult {
    pub per_trial: Vec<TrialOutcome>,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`, `n` the non-degenerate
    /// trials; `None` when fewer than two trials count.
    pub se: Option<f64>,
    pub degenerate: usize,
    /// `None` when the intensity integral itself failed; the reason is kept
    /// in `kac_rice_error`.
    pub kac_rice_value: Option<f64>,
    pub kac_rice_error: Option<String>,
    pub leading_term: f64,
    pub z_score: Option<f64>,
    pub runtime_s: Option<f64>,
}

/// Count for one trial.
pub fn run_trial(cfg: &ExperimentConfig, index: usize) -> Result<TrialOutcome> {
    let seed = trial_seed(cfg.base_seed, index as u64);
    let s = sample_harmonic(cfg.l, seed)?;
    let count = match find_tangent_points(&s, &cfg.field, cfg.grid_density) {
        Ok(r) => Some(r.count),
        Err(Error::DegenerateSample(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(TrialOutcome { index, seed, count })
}

/// [`run_mc_with`] on the global rayon pool.
pub fn run_mc(cfg: &ExperimentConfig) -> Result<MCResult> {
    cfg.validate()?;
    let per_trial = (0..cfg.trials).into_par_iter().map(|i| run_trial(cfg, i)).collect::<Result<Vec<_>>>()?;
    summarize(cfg, per_trial)
}

/// Runs the experiment on a dedicated pool of `workers` threads.
pub fn run_mc_with(cfg: &ExperimentConfig, workers: usize) -> Result<MCResult> {
    cfg.validate()?;
    if workers == 0 {
        return Err(Error::arg("workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Experiment(format!("cannot start worker pool: {e}")))?;
    let per_trial =
        pool.install(|| (0..cfg.trials).into_par_iter().map(|i| run_trial(cfg, i)).collect::<Result<Vec<_>>>())?;
    summarize(cfg, per_trial)
}

fn summarize(cfg: &ExperimentConfig, per_trial: Vec<TrialOutcome>) -> Result<MCResult> {
    let counts: Vec<f64> = per_trial.iter().filter_map(|t| t.count.map(|c| c as f64)).collect();
    let degenerate = per_trial.len() - counts.len();
    if counts.is_empty() {
        return Err(Error::Experiment(format!("all {} trials were degenerate", per_trial.len())));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let se = (counts.len() > 1).then(|| {
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    let (kac_rice_value, kac_rice_error) = match expected_count(cfg.l, &cfg.field, &cfg.quadrature) {
        Ok(e) => (Some(e.value), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let z_score = match (kac_rice_value, se) {
        (Some(k), Some(se)) if se > 0.0 => Some((mean - k) / se),
        _ => None,
    };
    Ok(MCResult {
        per_trial,
        mean,
        se,
        degenerate,
        kac_rice_value,
        kac_rice_error,
        leading_term: crate::leading_term(cfg.l),
        z_score,
        runtime_s: None,
    })
}

/// Formats `v` with 17 significant digits, positionally for moderate
/// exponents and in scientific notation otherwise.
pub fn format_sig17(v: f64) -> String {
    if !v.is_finite() {
        return "null".into();
    }
    if v == 0.0 {
        return "0.0".into();
    }
    let s = format!("{v:.16e}");
    let (mant, exp) = s.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..=16).contains(&exp) {
        return format!("{mant}e{exp}");
    }
    let sign = if v < 0.0 { "-" } else { "" };
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    if exp >= 0 {
        let (int, frac) = digits.split_at(exp as usize + 1);
        let frac = if frac.is_empty() { "0" } else { frac };
        format!("{sign}{int}.{frac}")
    } else {
        format!("{sign}0.{}{digits}", "0".repeat((-exp - 1) as usize))
    }
}

struct Sig17;

impl serde_json::ser::Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(format_sig17(v).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
}

/// Serializes `value` as one line of JSON with 17-digit floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17);
    value.serialize(&mut ser).map_err(|e| Error::Experiment(format!("serialization failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[derive(Serialize)]
struct ConfigRecord {
    l: usize,
    field: String,
    trials: usize,
    base_seed: u64,
    density: usize,
    n_phi: usize,
    n_theta: usize,
    alpha: f64,
    policy: String,
    format: String,
}

impl From<&ExperimentConfig> for ConfigRecord {
    fn from(c: &ExperimentConfig) -> Self {
        ConfigRecord {
            l: c.l,
            field: c.field.to_string(),
            trials: c.trials,
            base_seed: c.base_seed,
            density: c.grid_density,
            n_phi: c.quadrature.n_phi,
            n_theta: c.quadrature.n_theta,
            alpha: c.quadrature.excision_alpha,
            policy: c.quadrature.policy.to_string(),
            format: c.format.to_string(),
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    config: ConfigRecord,
    per_trial: &'a [TrialOutcome],
    mean: f64,
    se: Option<f64>,
    degenerate: usize,
    kac_rice_value: Option<f64>,
    leading_term: f64,
    z_score: Option<f64>,
    runtime_s: Option<f64>,
}

/// The JSON report. The output path is not part of it, so the bytes depend
/// only on what determines the counts.
pub fn report_json(cfg: &ExperimentConfig, r: &MCResult) -> Result<String> {
    to_json_line(&Report {
        config: cfg.into(),
        per_trial: &r.per_trial,
        mean: r.mean,
        se: r.se,
        degenerate: r.degenerate,
        kac_rice_value: r.kac_rice_value,
        leading_term: r.leading_term,
        z_score: r.z_score,
        runtime_s: r.runtime_s,
    })
}

/// Long-format CSV: one `count` row per trial, then one row per summary
/// quantity. Missing values are empty fields.
pub fn report_csv(r: &MCResult) -> String {
    let opt = |v: Option<f64>| v.map(format_sig17).unwrap_or_default();
    let mut out = String::from("quantity,index,seed,value\n");
    for t in &r.per_trial {
        let c = t.count.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!("count,{},{},{c}\n", t.index, t.seed));
    }
    let summary = [
        ("mean", Some(r.mean)),
        ("se", r.se),
        ("degenerate", Some(r.degenerate as f64)),
        ("kac_rice_value", r.kac_rice_value),
        ("leading_term", Some(r.leading_term)),
        ("z_score", r.z_score),
        ("runtime_s", r.runtime_s),
    ];
    for (k, v) in summary {
        out.push_str(&format!("{k},,,{}\n", opt(v)));
    }
    out
}

/// The report in the configured format.
pub fn render_report(cfg: &ExperimentConfig, r: &MCResult) -> Result<String> {
    match cfg.format {
        OutputFormat::Json => report_json(cfg, r),
        OutputFormat::Csv => Ok(report_csv(r)),
    }
}

/// Writes the report to `cfg.output`, or stdout when unset. The result stays
/// with the caller if this fails.
pub fn write_report(cfg: &ExperimentConfig, r: &MCResult) -> Result<()> {
    let text = render_report(cfg, r)?;
    match &cfg.output {
        Some(path) => std::fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Tolerances of [`verify_covariance`]: relative for entries that do not
/// vanish, absolute for `a_12`, `a_13`, `a_23` and for entries that vanish
/// for the field at hand (`a_24` of a Killing field, `a_34` of a gradient).
pub const COV_REL_TOL: f64 = 1e-4;
pub const COV_ABS_TOL: f64 = 1e-6;

/// Finite-difference step used by [`verify_covariance`].
pub const COV_FD_STEP: f64 = 1e-3;

/// One entry of one configuration in a covariance check.
#[derive(Debug, Clone, PartialEq)]
pub struct CovCheckRow {
    pub config: usize,
    pub l: usize,
    pub field: String,
    pub theta: f64,
    pub phi: f64,
    pub entry: (usize, usize),
    pub closed: f64,
    pub oracle: f64,
    /// Relative error, or absolute error for vanishing entries.
    pub error: f64,
    pub absolute: bool,
    pub tolerance: f64,
}

impl CovCheckRow {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

fn identically_zero(i: usize, j: usize) -> bool {
    matches!((i.min(j), i.max(j)), (0, 1) | (0, 2) | (1, 2))
}

/// Closed-form entries below this fraction of the largest one are zeros up
/// to rounding.
const VANISHING: f64 = 1e-12;

/// Random `(field, point)` configurations for [`verify_covariance`]: fields
/// cycle through the catalog, points are uniform on the sphere but kept
/// `0.3` away from the poles and from the field's zeros.
pub fn random_configurations(samples: usize, seed: u64) -> Vec<(FieldSpec, SpherePoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let catalog = FieldSpec::catalog();
    let mut out = Vec::with_capacity(samples);
    while out.len() < samples {
        let field = catalog[out.len() % catalog.len()].clone();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let phi = rng.random_range(-1.0f64..1.0).acos();
        let Ok(p) = SpherePoint::new(theta, phi) else { continue };
        let clear = phi > 0.3
            && phi < std::f64::consts::PI - 0.3
            && field.zeros.points().iter().all(|z| p.distance_to(&z.unit) > 0.3);
        if clear {
            out.push((field, p));
        }
    }
    out
}

/// Compares the closed-form covariance with the finite-difference oracle
/// on `samples` random configurations for every degree in `ls`. Rows come
/// per (configuration, degree), upper-triangle entries in row-major order.
pub fn verify_covariance(ls: &[usize], samples: usize, seed: u64) -> Result<Vec<CovCheckRow>> {
    let configs = random_configurations(samples, seed);
    let mut rows = Vec::new();
    for &l in ls {
        for (k, (field, p)) in configs.iter().enumerate() {
            let fj = field_jet(field, p)?;
            let closed = covariance_closed_form(l, &fj, p)?;
            let oracle = covariance_fd_oracle(l, field, p, COV_FD_STEP)?;
            let scale = closed.entries.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            for i in 0..4 {
                for j in i..4 {
                    let (c, o) = (closed.get(i, j), oracle.get(i, j));
                    let absolute = identically_zero(i, j) || c.abs() <= VANISHING * scale;
                    let (error, tolerance) = if absolute {
                        ((c - o).abs(), COV_ABS_TOL)
                    } else {
                        ((c - o).abs() / o.abs(), COV_REL_TOL)
                    };
                    rows.push(CovCheckRow {
                        config: k,
                        l,
                        field: field.to_string(),
                        theta: p.theta(),
                        phi: p.phi(),
                        entry: (i, j),
                        closed: c,
                        oracle: o,
                        error,
                        absolute,
                        tolerance,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn cov_check_csv(rows: &[CovCheckRow]) -> String {
    let mut out = String::from("config,l,field,theta,phi,entry,closed,oracle,error,measure,tolerance,pass\n");
    for r in rows {
        let (i, j) = r.entry;
        out.push_str(&format!(
            "{},{},{},{},{},a{}{}:{}|{},{},{},{},{},{},{}\n",
            r.config,
            r.l,
            r.field,
            format_sig17(r.theta),
            format_sig17(r.phi),
            i + 1,
            j + 1,
            LABELS[i],
            LABELS[j],
            format_sig17(r.closed),
            format_sig17(r.oracle),
            format_sig17(r.error),
            if r.absolute { "abs" } else { "rel" },
            format_sig17(r.tolerance),
            r.passed()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kac_rice::ExcisionPolicy;
    use crate::nodal::count;

    #[test]
    fn sig17_formatting() {
        assert_eq!(format_sig17(52.45), "52.450000000000003");
        assert_eq!(format_sig17(-0.125), "-0.12500000000000000");
        assert_eq!(format_sig17(1e-7), "9.9999999999999995e-8");
        assert_eq!(format_sig17(3.0), "3.0000000000000000");
        assert_eq!(format_sig17(1e20), "1.0000000000000000e20");
        assert_eq!(format_sig17(0.0), "0.0");
        for v in [52.45, -0.125, 1e-7, 0.1 + 0.2, 1e20, 123456.789, 7e-5] {
            assert_eq!(format_sig17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn config_file_parsing() {
        let text = "# comment\nl = 12\nfield = tilted\n\ntrials=3\npolicy = clamp\nformat = csv\n";
        let mut cfg = ExperimentConfig::new(10, FieldSpec::rotation(), 100, 0);
        for (k, v) in parse_config(text).unwrap() {
            cfg.set(&k, &v).unwrap();
        }
        assert_eq!(cfg.l, 12);
        assert_eq!(cfg.field, FieldSpec::tilted());
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.quadrature.policy, ExcisionPolicy::Clamp);
        assert_eq!(cfg.format, OutputFormat::Csv);
        assert!(parse_config("workers = 3").unwrap_err().is_argument());
        assert!(parse_config("l 3").unwrap_err().is_argument());
        assert!(cfg.set("trials", "many").unwrap_err().is_argument());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ExperimentConfig::new(10, FieldSpec::rotation(), 0, 0);
        assert!(run_mc(&cfg).unwrap_err().is_argument());
        cfg.trials = 1;
        cfg.grid_density = 2;
        assert!(run_mc(&cfg).unwrap_err().is_argument());
        cfg.grid_density = 8;
        cfg.quadrature.excision_alpha = 0.5;
        assert!(run_mc(&cfg).unwrap_err().is_argument());
    }

    #[test]
    fn single_trial_matches_direct_count() {
        let cfg = ExperimentConfig::new(6, FieldSpec::rotation(), 1, 42);
        let r = run_mc(&cfg).unwrap();
        let s = sample_harmonic(6, trial_seed(42, 0)).unwrap();
        assert_eq!(r.per_trial[0].count, Some(count(&s, &FieldSpec::rotation()).unwrap()));
        assert_eq!(r.mean, r.per_trial[0].count.unwrap() as f64);
        assert_eq!(r.se, None);
        assert_eq!(r.z_score, None);
    }

    #[test]
    fn workers_do_not_change_the_report() {
        let cfg = ExperimentConfig::new(5, FieldSpec::tilted(), 12, 7);
        let a = report_json(&cfg, &run_mc_with(&cfg, 1).unwrap()).unwrap();
        let b = report_json(&cfg, &run_mc_with(&cfg, 4).unwrap()).unwrap();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "config",
                "degenerate",
                "kac_rice_value",
                "leading_term",
                "mean",
                "per_trial",
                "runtime_s",
                "se",
                "z_score"
            ]
        );
        assert!(v["runtime_s"].is_null());
    }

    #[test]
    fn all_degenerate_is_an_experiment_error() {
        // Vf vanishes identically for the zero field
        let zero = FieldSpec::custom("0", "0").unwrap();
        let cfg = ExperimentConfig::new(3, zero, 3, 1);
        assert!(matches!(run_mc(&cfg), Err(Error::Experiment(_))));
    }

    #[test]
    fn csv_report_layout() {
        let cfg = ExperimentConfig::new(4, FieldSpec::rotation(), 3, 11);
        let r = run_mc(&cfg).unwrap();
        let csv = report_csv(&r);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "quantity,index,seed,value");
        assert_eq!(lines.len(), 1 + 3 + 7);
        assert!(lines[1].starts_with(&format!("count,0,{},", trial_seed(11, 0))));
        assert_eq!(*lines.last().unwrap(), "runtime_s,,,");
    }

    #[test]
    fn covariance_rows_pass_at_low_degree() {
        let rows = verify_covariance(&[3], 4, 9).unwrap();
        assert_eq!(rows.len(), 4 * 10);
        assert!(rows.iter().all(CovCheckRow::passed));
        let csv = cov_check_csv(&rows);
        assert!(csv.lines().nth(1).unwrap().contains("a11:f|f"));
    }
}
