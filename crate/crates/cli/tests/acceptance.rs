//! Acceptance criteria at full budgets, one line per criterion.
//!
//! Runs without the libtest harness so the verdicts always print.

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use zo_bilevel::verify::{self, CheckReport, RatesConfig};
use zo_bilevel::Regime;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn of(reports: &[&CheckReport]) -> Self {
        let failures: Vec<String> = reports.iter().flat_map(|r| r.failures()).collect();
        let checks: usize = reports.iter().map(|r| r.bundles.len() + r.fits.len()).sum();
        let detail = if failures.is_empty() {
            format!("{checks} checks")
        } else {
            format!("{} of {checks} checks failed: {}", failures.len(), failures.join("; "))
        };
        Verdict { pass: failures.is_empty(), detail }
    }

    fn and(mut self, pass: bool, detail: String) -> Self {
        self.pass &= pass;
        self.detail = format!("{}; {detail}", self.detail);
        self
    }
}

type Check = fn() -> Result<Verdict, String>;

fn stein() -> Result<Verdict, String> {
    let t = Instant::now();
    let r = verify::check_stein_suite(2_000_000, 1).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    Ok(Verdict::of(&[&r]).and(elapsed < Duration::from_secs(10), format!("{:.1}s (limit 10s)", elapsed.as_secs_f64())))
}

fn estimators() -> Result<Verdict, String> {
    let r = verify::check_unbiasedness(&verify::UnbiasednessConfig::default()).map_err(|e| e.to_string())?;
    Ok(Verdict::of(&[&r]))
}

fn bound_grid() -> Result<Verdict, String> {
    let a = verify::check_smoothing_bounds(&verify::SmoothingBoundsConfig::default()).map_err(|e| e.to_string())?;
    let b = verify::check_moment_bounds(&verify::MomentConfig::default()).map_err(|e| e.to_string())?;
    Ok(Verdict::of(&[&a, &b]))
}

fn szhia() -> Result<Verdict, String> {
    let c = verify::SzhiaCheckConfig::default();
    let r = verify::check_szhia(&c).map_err(|e| e.to_string())?;
    // Recovery must hold for the point estimate itself, without standard-error slack.
    let worst = r.bundles.iter().filter(|b| b.name.starts_with("recovery")).map(|b| b.lhs_estimate).fold(f64::NAN, f64::max);
    Ok(Verdict::of(&[&r]).and(worst <= 1e-2, format!("recovery error {worst:.2e} (limit 1e-2)")))
}

fn inner() -> Result<Verdict, String> {
    let r = verify::check_inner_sgd(&verify::InnerConfig::default()).map_err(|e| e.to_string())?;
    Ok(Verdict::of(&[&r]))
}

fn hypergrad() -> Result<Verdict, String> {
    let r = verify::check_hypergradient(&verify::HypergradConfig::default()).map_err(|e| e.to_string())?;
    Ok(Verdict::of(&[&r]))
}

fn rates() -> Result<Verdict, String> {
    let mut reports = Vec::new();
    let mut slopes = Vec::new();
    for regime in Regime::ALL {
        let o = verify::check_rates(&RatesConfig::new(regime)).map_err(|e| e.to_string())?;
        slopes.push(format!("{regime} slope {:.3} r2 {:.3}", o.fit.slope, o.fit.r_squared));
        reports.push(o.report());
    }
    let refs: Vec<&CheckReport> = reports.iter().collect();
    let v = Verdict::of(&refs);
    Ok(Verdict { detail: format!("{}; {}", v.detail, slopes.join(", ")), ..v })
}

const REPLAY_CONFIG: &str = r#"preset = "cor4.3c"
N = 200

[problem]
kind = "coupled"
n = 3
m = 2
curvature = 1.0
coupling = 1.5
q = 1.0
x_star = [2.0, 2.0, 2.0]
seed = 3
noise = { kind = "linear-term", sigma = 0.1 }
"#;

fn replay() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("nc.toml");
    fs::write(&cfg, REPLAY_CONFIG).map_err(|e| e.to_string())?;
    let run = |config: &std::path::Path, out: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(out);
        let o = Command::new(env!("CARGO_BIN_EXE_zo-bilevel"))
            .arg("run")
            .arg("--config")
            .arg(config)
            .args(["--seeds", "11", "--jobs", "1", "--out"])
            .arg(&out)
            .env_remove("ZO_BILEVEL_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        fs::read(out.join("run_seed11.csv")).map_err(|e| e.to_string())
    };
    let first = run(&cfg, "a")?;
    let again = run(&cfg, "b")?;
    let replayed = run(&dir.path().join("a").join("run_seed11.json"), "c")?;
    let pass = first == again && first == replayed;
    Ok(Verdict {
        pass,
        detail: format!("{} bytes; rerun identical {}, replay identical {}", first.len(), first == again, first == replayed),
    })
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("Stein identities", stein),
        ("estimator unbiasedness", estimators),
        ("bound suites over the (eta, mu) grid", bound_grid),
        ("SZHIA bias, plateau and recovery", szhia),
        ("inner SGD bound", inner),
        ("hypergradient error slope and gap", hypergrad),
        ("convergence rates", rates),
        ("byte-exact CSV replay", replay),
    ];
    let start = Instant::now();
    let mut all = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check().unwrap_or_else(|e| Verdict { pass: false, detail: format!("error: {e}") });
        all &= v.pass;
        println!(
            "criterion {}: {} — {name} ({:.1}s): {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} in {:.1}s", if all { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
