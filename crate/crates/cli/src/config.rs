//! Experiment configuration: TOML or JSON, resolved to a concrete problem,
//! schedule and smoothing radii before any oracle call.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use zo_bilevel::linalg::sym_spectral_norm;
use zo_bilevel::problems::{
    coupled_problem, decoupled_problem, linear_upper_problem, prescribed_curvature_problem, random_problem, ProblemDocument,
};
use zo_bilevel::szhia::mean_square_gamma;
use zo_bilevel::zdsba::{ScheduleOverrides, WarmStart};
use zo_bilevel::{Error, FeasibleSet, NoiseModel, QuadraticBilevel, Regime, Schedule, SmoothingParams, ZdsbaConfig};

/// A configuration problem, anchored to the line of the offending key when
/// it can be located.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = self.path.as_ref().map_or("<config>".to_string(), |p| p.display().to_string());
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{path}:{l}:{c}: {}", self.message),
            (Some(l), None) => write!(f, "{path}:{l}: {}", self.message),
            _ => write!(f, "{path}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn of(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Toml,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu2: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn no_noise() -> NoiseModel {
    NoiseModel::None
}

/// Generated fixtures take an optional feasible set; `explicit` embeds every
/// coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    Random {
        n: usize,
        m: usize,
        #[serde(default = "one")]
        lambda_g: f64,
        #[serde(default = "no_noise")]
        noise: NoiseModel,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        set: Option<FeasibleSet>,
    },
    Decoupled {
        n: usize,
        m: usize,
        #[serde(default = "no_noise")]
        noise: NoiseModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        set: Option<FeasibleSet>,
    },
    PrescribedCurvature {
        n: usize,
        m: usize,
        #[serde(default = "one")]
        lambda_g: f64,
        curvature: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_star: Option<Vec<f64>>,
        #[serde(default = "no_noise")]
        noise: NoiseModel,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        set: Option<FeasibleSet>,
    },
    Coupled {
        n: usize,
        m: usize,
        #[serde(default = "one")]
        lambda_g: f64,
        curvature: f64,
        coupling: f64,
        #[serde(default)]
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_star: Option<Vec<f64>>,
        #[serde(default = "no_noise")]
        noise: NoiseModel,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        set: Option<FeasibleSet>,
    },
    LinearUpper {
        n: usize,
        m: usize,
        #[serde(default = "one")]
        lambda_g: f64,
        #[serde(default = "no_noise")]
        noise: NoiseModel,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        set: Option<FeasibleSet>,
    },
    Explicit(ProblemDocument),
}

impl ProblemSpec {
    pub fn build(&self) -> zo_bilevel::Result<QuadraticBilevel> {
        let star = |x: &Option<Vec<f64>>, n: usize| x.as_ref().map_or(DVector::zeros(n), |v| DVector::from_column_slice(v));
        let (prob, set) = match self {
            ProblemSpec::Random { n, m, lambda_g, noise, seed, set } => (random_problem(*n, *m, *lambda_g, *noise, *seed)?, set),
            ProblemSpec::Decoupled { n, m, noise, set } => (decoupled_problem(*n, *m, *noise)?, set),
            ProblemSpec::PrescribedCurvature { n, m, lambda_g, curvature, x_star, noise, seed, set } => {
                if let Some(v) = x_star {
                    zo_bilevel::error::check_dim("x_star", *n, v.len())?;
                }
                (prescribed_curvature_problem(*n, *m, *lambda_g, *curvature, &star(x_star, *n), *noise, *seed)?, set)
            }
            ProblemSpec::Coupled { n, m, lambda_g, curvature, coupling, q, x_star, noise, seed, set } => {
                if let Some(v) = x_star {
                    zo_bilevel::error::check_dim("x_star", *n, v.len())?;
                }
                (coupled_problem(*n, *m, *lambda_g, *curvature, *coupling, *q, &star(x_star, *n), *noise, *seed)?, set)
            }
            ProblemSpec::LinearUpper { n, m, lambda_g, noise, seed, set } => {
                (linear_upper_problem(*n, *m, *lambda_g, *noise, *seed)?, set)
            }
            ProblemSpec::Explicit(document) => return document.build(),
        };
        match set {
            Some(s) => prob.with_set(s.clone()),
            None => Ok(prob),
        }
    }

    fn noise_mut(&mut self) -> Option<&mut NoiseModel> {
        match self {
            ProblemSpec::Random { noise, .. }
            | ProblemSpec::Decoupled { noise, .. }
            | ProblemSpec::PrescribedCurvature { noise, .. }
            | ProblemSpec::Coupled { noise, .. }
            | ProblemSpec::LinearUpper { noise, .. } => Some(noise),
            ProblemSpec::Explicit(document) => Some(&mut document.noise),
        }
    }

    fn dims_mut(&mut self) -> Option<(&mut usize, &mut usize)> {
        match self {
            ProblemSpec::Random { n, m, .. }
            | ProblemSpec::Decoupled { n, m, .. }
            | ProblemSpec::PrescribedCurvature { n, m, .. }
            | ProblemSpec::Coupled { n, m, .. }
            | ProblemSpec::LinearUpper { n, m, .. } => Some((n, m)),
            ProblemSpec::Explicit(_) => None,
        }
    }

    fn lambda_g_mut(&mut self) -> Option<&mut f64> {
        match self {
            ProblemSpec::Random { lambda_g, .. }
            | ProblemSpec::PrescribedCurvature { lambda_g, .. }
            | ProblemSpec::Coupled { lambda_g, .. }
            | ProblemSpec::LinearUpper { lambda_g, .. } => Some(lambda_g),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `strongly-convex`, `convex`, `nonconvex`, or a preset name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    /// `cor4.3a` (strongly convex), `cor4.3b` (convex), `cor4.3c` (nonconvex).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(rename = "N", alias = "outer_iterations")]
    pub outer_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub problem: ProblemSpec,
    /// SZHIA step; defaults to the mean-square-stable step of the lower level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Strong convexity of `ψ`; defaults to its closed-form value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_psi: Option<f64>,
    /// Smoothness of `ψ`; defaults to its closed-form value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1_psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<WarmStart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub schedule: ScheduleOverrides,
    #[serde(default, skip_serializing_if = "is_default")]
    pub smoothing: SmoothingOverrides,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// A loaded config with its source, for line-anchored messages.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub text: String,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Tagged enums are deserialized from a buffered table, so their errors span
/// the whole table; narrow to the line holding the offending key or literal.
fn narrow(text: &str, start: usize, message: &str) -> usize {
    let quoted = |open: &str, close: char| {
        message.find(open).and_then(|i| {
            let rest = &message[i + open.len()..];
            rest.find(close).map(|j| rest[..j].to_string())
        })
    };
    let needle = if let Some(key) = quoted("unknown field `", '`').or_else(|| quoted("unknown variant `", '`')) {
        Some(key)
    } else if let Some(s) = quoted("invalid type: string \"", '"') {
        Some(format!("\"{s}\""))
    } else {
        quoted("invalid type: integer `", '`').or_else(|| quoted("invalid type: floating point `", '`'))
    };
    let Some(needle) = needle else { return start };
    let mut offset = start;
    for line in text[start.min(text.len())..].split_inclusive('\n') {
        if offset > start && line.trim_start().starts_with('[') {
            break;
        }
        if line.contains(needle.as_str()) {
            return offset;
        }
        offset += line.len();
    }
    start
}

pub fn parse(text: &str, format: Format, path: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.map(Path::to_path_buf);
    match format {
        Format::Toml => toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, narrow(text, s.start, e.message()))).unzip();
            ConfigError { path, line, column, message: e.message().trim().to_string() }
        }),
        Format::Json => serde_json::from_str(text).map_err(|e| ConfigError {
            path,
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
        }),
    }
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: Some(path.to_path_buf()),
        line: None,
        column: None,
        message: format!("cannot read: {e}"),
    })?;
    let config = parse(&text, Format::of(path), Some(path))?;
    Ok(Loaded { config, path: path.to_path_buf(), text })
}

impl Loaded {
    /// A semantic error anchored to the first line mentioning one of `keys`.
    pub fn error(&self, keys: &[&str], message: impl Into<String>) -> ConfigError {
        let line = self.text.lines().position(|l| {
            let t = l.trim_start().trim_start_matches('"');
            keys.iter().any(|k| t.starts_with(k) && t[k.len()..].trim_start_matches('"').trim_start().starts_with(['=', ':']))
        });
        ConfigError { path: Some(self.path.clone()), line: line.map(|l| l + 1), column: None, message: message.into() }
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        self.config.resolve().map_err(|(keys, msg)| self.error(keys, msg))
    }
}

/// Everything a run needs, fully concrete.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub regime: Regime,
    pub problem: QuadraticBilevel,
    pub run: ZdsbaConfig,
}

type Keyed = (&'static [&'static str], String);

fn keyed(keys: &'static [&'static str]) -> impl Fn(Error) -> Keyed {
    move |e| (keys, e.to_string())
}

impl ExperimentConfig {
    pub fn regime(&self) -> Result<Regime, Keyed> {
        match (&self.regime, &self.preset) {
            (Some(r), None) | (None, Some(r)) => r.parse().map_err(keyed(&["regime", "preset"])),
            (Some(r), Some(p)) => {
                let (a, b): (Regime, Regime) = (r.parse().map_err(keyed(&["regime"]))?, p.parse().map_err(keyed(&["preset"]))?);
                if a != b {
                    return Err((&["regime", "preset"], format!("regime '{r}' contradicts preset '{p}'")));
                }
                Ok(a)
            }
            (None, None) => Err((&["N", "problem"], "missing regime (or preset cor4.3a/b/c)".into())),
        }
    }

    pub fn resolve(&self) -> Result<Resolved, Keyed> {
        let regime = self.regime()?;
        let problem = self.problem.build().map_err(keyed(&["kind", "problem"]))?;
        let (n, m) = (problem.n(), problem.m());
        if regime == Regime::Convex && !problem.set().is_bounded() {
            return Err((
                &["regime", "preset"],
                "bounded X required: the convex schedule needs a box or ball feasible set".into(),
            ));
        }
        let vec_or_zero = |v: &Option<Vec<f64>>, len: usize, key: &'static [&'static str]| -> Result<DVector<f64>, Keyed> {
            match v {
                None => Ok(DVector::zeros(len)),
                Some(v) if v.len() == len => Ok(DVector::from_column_slice(v)),
                Some(v) => Err((key, format!("{}: expected {len} entries, got {}", key[0], v.len()))),
            }
        };
        let x0 = match &self.x0 {
            None => problem.set().project(&DVector::zeros(n)),
            v => vec_or_zero(v, n, &["x0"])?,
        };
        let y0 = vec_or_zero(&self.y0, m, &["y0"])?;
        let x_star_norm = problem.upper_minimizer().map(|x| x.norm()).unwrap_or(0.0);
        let region_radius = self.region_radius.unwrap_or(1.0 + x0.norm() + x_star_norm);
        let constants = problem.constants(region_radius);
        let gamma = self.gamma.unwrap_or_else(|| mean_square_gamma(constants.lambda_g, sym_spectral_norm(&problem.parts().a), m));
        let (lo, hi) = problem.psi_curvature();
        let lambda_psi = match (regime, self.lambda_psi) {
            (_, Some(v)) => Some(v),
            (Regime::StronglyConvex, None) if lo > 0.0 => Some(lo),
            (Regime::StronglyConvex, None) => {
                return Err((&["regime", "preset"], format!("psi is not strongly convex (lambda_min = {lo}); set lambda_psi")))
            }
            _ => None,
        };
        let l1_psi = match (self.l1_psi, hi.abs().max(lo.abs())) {
            (Some(v), _) => Some(v),
            (None, h) if h > 0.0 => Some(h),
            (None, _) if regime == Regime::StronglyConvex => None,
            _ => return Err((&["regime", "preset"], "psi is linear; set l1_psi to any positive bound".into())),
        };
        let schedule = Schedule::new(regime, n, m, self.outer_iterations, gamma, &constants, lambda_psi, l1_psi)
            .and_then(|s| s.with_overrides(self.schedule.clone()))
            .map_err(keyed(&["gamma", "lambda_psi", "l1_psi", "alpha", "beta"]))?;
        let base = SmoothingParams::for_budget(n, m, self.outer_iterations);
        let o = &self.smoothing;
        let params = SmoothingParams {
            eta1: o.eta1.unwrap_or(base.eta1),
            mu1: o.mu1.unwrap_or(base.mu1),
            eta2: o.eta2.unwrap_or(base.eta2),
            mu2: o.mu2.unwrap_or(base.mu2),
        };
        params.validate().map_err(keyed(&["eta1", "mu1", "eta2", "mu2"]))?;
        let run = ZdsbaConfig { schedule, params, x0, y0, warm_start: self.warm_start.unwrap_or(WarmStart::Warm), region_radius };
        Ok(Resolved { regime, problem, run })
    }

    /// The fully explicit single-seed config that reproduces one run.
    pub fn replay(resolved: &Resolved, seed: u64) -> ExperimentConfig {
        let r = &resolved.run;
        let s = &r.schedule;
        ExperimentConfig {
            regime: Some(resolved.regime.name().to_string()),
            preset: Some(resolved.regime.preset().to_string()),
            outer_iterations: s.outer_iterations,
            seeds: Some(vec![seed]),
            out: None,
            problem: ProblemSpec::Explicit(ProblemDocument::from(&resolved.problem)),
            gamma: Some(s.gamma),
            lambda_psi: s.lambda_psi,
            l1_psi: s.l1_psi,
            x0: Some(r.x0.as_slice().to_vec()),
            y0: Some(r.y0.as_slice().to_vec()),
            warm_start: Some(r.warm_start),
            region_radius: Some(r.region_radius),
            schedule: s.overrides.clone(),
            smoothing: SmoothingOverrides {
                eta1: Some(r.params.eta1),
                mu1: Some(r.params.mu1),
                eta2: Some(r.params.eta2),
                mu2: Some(r.params.mu2),
            },
        }
    }

    /// Set a named field from a sweep value.
    pub fn set_axis(&mut self, axis: &str, value: &str) -> Result<(), String> {
        let float = || value.parse::<f64>().map_err(|_| format!("{axis}: '{value}' is not a number"));
        let count = || value.parse::<usize>().map_err(|_| format!("{axis}: '{value}' is not a non-negative integer"));
        match axis {
            "N" => self.outer_iterations = count()?,
            "gamma" => self.gamma = Some(float()?),
            "lambda_psi" => self.lambda_psi = Some(float()?),
            "l1_psi" => self.l1_psi = Some(float()?),
            "alpha" => self.schedule.alpha = Some(float()?),
            "beta" => self.schedule.beta = Some(float()?),
            "inner_iterations" => self.schedule.inner_iterations = Some(count()?),
            "szhia_iterations" => self.schedule.szhia_iterations = Some(count()?),
            "sigma" => {
                let s = float()?;
                let noise = self.problem.noise_mut().ok_or("sigma: problem has no noise model")?;
                *noise = match *noise {
                    NoiseModel::AdditiveValue { .. } => NoiseModel::AdditiveValue { sigma: s },
                    _ => NoiseModel::LinearTerm { sigma: s },
                };
            }
            "lambda_g" => *self.problem.lambda_g_mut().ok_or("lambda_g: not a parameter of this problem kind")? = float()?,
            "n" | "m" => {
                let v = count()?;
                let (n, m) = self.problem.dims_mut().ok_or("dimension sweeps need a generated problem kind")?;
                *(if axis == "n" { n } else { m }) = v;
                // dimension-bound vectors no longer fit
                self.x0 = None;
                self.y0 = None;
            }
            _ => {
                return Err(format!(
                    "unknown sweep axis '{axis}' (expected N, gamma, sigma, n, m, lambda_g, lambda_psi, l1_psi, alpha, beta, inner_iterations, szhia_iterations)"
                ))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SC: &str = r#"
preset = "cor4.3a"
N = 50

[problem]
kind = "coupled"
n = 2
m = 2
curvature = 1.0
coupling = 0.5
x_star = [0.5, 0.5]
noise = { kind = "linear-term", sigma = 0.1 }
seed = 3
"#;

    #[test]
    fn toml_preset_resolves() {
        let c = parse(SC, Format::Toml, None).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.regime, Regime::StronglyConvex);
        assert_eq!(r.run.schedule.lambda_psi, Some(1.0));
        assert!((r.run.schedule.gamma - 1.0 / 76.0).abs() < 1e-12);
        assert_eq!(r.run.params, SmoothingParams::for_budget(2, 2, 50));
    }

    #[test]
    fn json_equals_toml() {
        let c = parse(SC, Format::Toml, None).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(parse(&json, Format::Json, None).unwrap(), c);
    }

    #[test]
    fn replay_config_round_trips_exactly() {
        let c = parse(SC, Format::Toml, None).unwrap();
        let r = c.resolve().unwrap();
        let replay = ExperimentConfig::replay(&r, 9);
        let text = serde_json::to_string_pretty(&replay).unwrap();
        let back = parse(&text, Format::Json, None).unwrap().resolve().unwrap();
        assert_eq!(back.run, r.run);
        assert_eq!(back.problem.parts(), r.problem.parts());
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let e = parse("N = 5\nregime = \n", Format::Toml, Some(Path::new("c.toml"))).unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.to_string().starts_with("c.toml:2:"));
        let e = parse("{\n \"N\": 5,\n \"bogus\": 1\n}", Format::Json, None).unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn errors_inside_the_problem_table_point_at_the_key() {
        let text = "preset = \"cor4.3a\"\nN = 5\n[problem]\nkind = \"coupled\"\nn = 2\nm = \"two\"\n";
        assert_eq!(parse(text, Format::Toml, None).unwrap_err().line, Some(6));
        let text = "preset = \"cor4.3a\"\nN = 5\n[problem]\nkind = \"decoupled\"\nn = 2\nm = 2\nbogus = 1\n";
        assert_eq!(parse(text, Format::Toml, None).unwrap_err().line, Some(7));
    }

    #[test]
    fn convex_on_whole_space_is_rejected_at_the_regime_line() {
        let text = SC.replace("cor4.3a", "cor4.3b");
        let loaded = Loaded { config: parse(&text, Format::Toml, None).unwrap(), path: "c.toml".into(), text: text.clone() };
        let e = loaded.resolve().unwrap_err();
        assert!(e.message.contains("bounded X required"));
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn sweep_axes() {
        let mut c = parse(SC, Format::Toml, None).unwrap();
        c.set_axis("N", "7").unwrap();
        c.set_axis("sigma", "0.2").unwrap();
        c.set_axis("n", "3").unwrap();
        assert_eq!(c.outer_iterations, 7);
        assert!(c.set_axis("bogus", "1").is_err());
        assert!(c.set_axis("N", "x").is_err());
        // x_star no longer matches n = 3
        assert!(c.resolve().is_err());
    }
}
