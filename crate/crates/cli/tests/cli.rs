use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const STRONGLY_CONVEX: &str = r#"preset = "cor4.3a"
N = 40
seeds = [1, 2]

[problem]
kind = "coupled"
n = 2
m = 2
curvature = 1.0
coupling = 0.5
x_star = [0.5, 0.5]
noise = { kind = "linear-term", sigma = 0.1 }
"#;

fn zo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zo-bilevel")).args(args).env_remove("ZO_BILEVEL_SEED").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn verify_stein_writes_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let o = zo(&["verify", "stein", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("stein.csv")).unwrap();
    assert!(csv.starts_with("suite,name,lhs_estimate,lhs_se,rhs_bound,margin,pass\n"));
    assert!(csv.lines().count() > 3);
}

#[test]
fn unknown_selector_is_a_usage_error() {
    assert_eq!(zo(&["verify", "bogus"]).status.code(), Some(2));
}

#[test]
fn rates_take_dimensions_and_report_a_slope() {
    let dir = tempfile::tempdir().unwrap();
    let o = zo(&[
        "verify",
        "rates",
        "--regime",
        "strongly-convex",
        "--n",
        "5",
        "--m",
        "5",
        "--grid",
        "20,40,80",
        "--seeds",
        "1,2",
        "--out",
        path(dir.path()),
    ]);
    // Tiny budgets need not pass the fit; the artifact must exist either way.
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("rates_strongly-convex.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert!(header.contains(&"slope"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn run_writes_records_and_replays_byte_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sc.toml", STRONGLY_CONVEX);
    let first = dir.path().join("first");
    let o = zo(&["run", "--config", &cfg, "--out", path(&first)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains(" ± "));
    let csv = fs::read(first.join("run_seed2.csv")).unwrap();
    assert!(csv.starts_with(b"k,x_0,x_1,dist_sq,psi,grad_norm_sq,t_k,b_k,draws_f,draws_g\n"));
    assert_eq!(csv.iter().filter(|&&b| b == b'\n').count(), 41);

    let replay = dir.path().join("replay");
    let o = zo(&["run", "--config", path(&first.join("run_seed2.json")), "--out", path(&replay)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(replay.join("run_seed2.csv")).unwrap(), csv);
    assert_eq!(fs::read(replay.join("run_seed2.json")).unwrap(), fs::read(first.join("run_seed2.json")).unwrap());
}

#[test]
fn seeds_flag_and_environment_select_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sc.toml", &STRONGLY_CONVEX.replace("seeds = [1, 2]\n", ""));
    let a = dir.path().join("a");
    assert_eq!(zo(&["run", "--config", &cfg, "--seeds", "7", "--out", path(&a)]).status.code(), Some(0));
    let b = dir.path().join("b");
    let o = Command::new(env!("CARGO_BIN_EXE_zo-bilevel"))
        .args(["run", "--config", &cfg, "--out", path(&b)])
        .env("ZO_BILEVEL_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(a.join("run_seed7.csv")).unwrap(), fs::read(b.join("run_seed7.csv")).unwrap());
}

#[test]
fn zero_outer_iterations_give_a_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "z.toml", &STRONGLY_CONVEX.replace("N = 40", "N = 0"));
    let o = zo(&["run", "--config", &cfg, "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("run_seed1.csv")).unwrap(),
        "k,x_0,x_1,dist_sq,psi,grad_norm_sq,t_k,b_k,draws_f,draws_g\n"
    );
}

#[test]
fn convex_on_the_whole_space_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &STRONGLY_CONVEX.replace("cor4.3a", "cor4.3b"));
    let o = zo(&["run", "--config", &cfg, "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bounded X required"));
    assert!(!dir.path().join("run_seed1.csv").exists());
}

#[test]
fn bad_configs_exit_2_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &STRONGLY_CONVEX.replace("m = 2", "m = \"two\""));
    let o = zo(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).lines().any(|l| l.contains("bad.toml:8:")), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "bad.json", "{\n  \"N\": 5,\n  \"nonsense\": true\n}\n");
    let o = zo(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "d.toml", &format!("{STRONGLY_CONVEX}\n[schedule]\nalpha = 50.0\n"));
    let o = zo(&["run", "--config", &cfg, "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("divergence"));
}

#[test]
fn single_value_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sc.toml", STRONGLY_CONVEX);
    let run = dir.path().join("run");
    assert_eq!(zo(&["run", "--config", &cfg, "--out", path(&run)]).status.code(), Some(0));
    let sweep = dir.path().join("sweep");
    let o = zo(&["sweep", "--config", &cfg, "--axis", "N", "--values", "40", "--out", path(&sweep)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let swept = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    for seed in [1, 2] {
        let prefix = format!("40,{seed},");
        let rows: Vec<&str> = swept.lines().filter_map(|l| l.strip_prefix(prefix.as_str())).collect();
        let run_csv = fs::read_to_string(run.join(format!("run_seed{seed}.csv"))).unwrap();
        assert_eq!(rows, run_csv.lines().skip(1).collect::<Vec<_>>());
    }
}

#[test]
fn json_config_matches_toml() {
    let dir = tempfile::tempdir().unwrap();
    let toml = write_config(dir.path(), "sc.toml", STRONGLY_CONVEX);
    let value: toml::Value = toml::from_str(STRONGLY_CONVEX).unwrap();
    let json = write_config(dir.path(), "sc.json", &serde_json::to_string(&value).unwrap());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(zo(&["run", "--config", &toml, "--out", path(&a)]).status.code(), Some(0));
    assert_eq!(zo(&["run", "--config", &json, "--out", path(&b)]).status.code(), Some(0));
    assert_eq!(fs::read(a.join("run_seed1.csv")).unwrap(), fs::read(b.join("run_seed1.csv")).unwrap());
}

#[test]
fn szhia_demo_and_gamma_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = zo(&["szhia-demo", "--iterations", "200", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("szhia_demo.csv")).unwrap();
    assert_eq!(trace.lines().count(), 202);

    let o = zo(&[
        "sweep",
        "szhia-demo",
        "--noisy",
        "--axis",
        "gamma",
        "--values",
        "0.002,0.008",
        "--replications",
        "50",
        "--iterations",
        "2000",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("szhia_sweep.csv")).unwrap();
    let plateaus: Vec<f64> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(plateaus.len(), 2);
    // The variance floor grows with the step.
    assert!(plateaus[1] > 2.0 * plateaus[0], "{plateaus:?}");
}

#[test]
fn shipped_presets_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for preset in ["cor4.3a", "cor4.3b", "cor4.3c"] {
        let dir = tempfile::tempdir().unwrap();
        let text = fs::read_to_string(configs.join(format!("{preset}.toml"))).unwrap().replace("N = 800", "N = 20");
        let cfg = write_config(dir.path(), "p.toml", &text);
        let o = zo(&["run", "--config", &cfg, "--seeds", "1", "--out", path(dir.path())]);
        assert_eq!(o.status.code(), Some(0), "{preset}: {}", stderr(&o));
        assert_eq!(fs::read_to_string(dir.path().join("run_seed1.csv")).unwrap().lines().count(), 21);
    }
}
