//! Flat-file artifacts: CSV with shortest round-trip floats, written
//! atomically (temp file in the target directory, then rename).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::verify::{CheckReport, RatesOutcome};
use crate::zdsba::RunRecord;

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::Io(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path, e)
    })
}

fn to_csv(header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(format!("csv: {e}")))
}

pub fn run_record_header(n: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((0..n).map(|i| format!("x_{i}")));
    h.extend(["dist_sq", "psi", "grad_norm_sq", "t_k", "b_k", "draws_f", "draws_g"].map(String::from));
    h
}

fn run_record_rows(record: &RunRecord) -> impl Iterator<Item = Vec<String>> + '_ {
    record.rows.iter().map(|r| {
        let mut row = vec![r.k.to_string()];
        row.extend(r.x.iter().map(|&v| fmt_f64(v)));
        row.extend([fmt_opt(r.dist_sq), fmt_opt(r.psi), fmt_opt(r.grad_norm_sq)]);
        row.extend([r.t_k.to_string(), r.b_k.to_string(), r.draws_f.to_string(), r.draws_g.to_string()]);
        row
    })
}

/// One row per outer iteration; header only when `N = 0`.
pub fn run_record_csv(record: &RunRecord) -> Result<Vec<u8>> {
    to_csv(run_record_header(record.x0.len()), run_record_rows(record))
}

/// Long format: the run-record columns prefixed by `key` (e.g. a sweep axis)
/// and `seed`; runs with fewer than the widest `n` leave the extra `x_i` empty.
pub fn keyed_run_records_csv(key: &str, runs: &[(String, u64, &RunRecord)]) -> Result<Vec<u8>> {
    let n = runs.iter().map(|r| r.2.x0.len()).max().unwrap_or(0);
    let mut header = vec![key.to_string(), "seed".to_string()];
    header.extend(run_record_header(n));
    let rows = runs.iter().flat_map(|(value, seed, rec)| {
        let pad = n - rec.x0.len();
        let at = 1 + rec.x0.len();
        run_record_rows(rec).map(move |r| {
            let mut row = vec![value.clone(), seed.to_string()];
            row.extend_from_slice(&r[..at]);
            row.extend(std::iter::repeat_n(String::new(), pad));
            row.extend_from_slice(&r[at..]);
            row
        })
    });
    to_csv(header, rows)
}

pub fn bundles_csv(reports: &[&CheckReport]) -> Result<Vec<u8>> {
    let header = ["suite", "name", "lhs_estimate", "lhs_se", "rhs_bound", "margin", "pass"].map(String::from).to_vec();
    let rows = reports.iter().flat_map(|r| {
        r.bundles.iter().map(move |b| {
            vec![
                r.suite.clone(),
                b.name.clone(),
                fmt_f64(b.lhs_estimate),
                fmt_f64(b.lhs_se),
                fmt_f64(b.rhs_bound),
                fmt_f64(b.margin),
                b.pass.to_string(),
            ]
        })
    });
    to_csv(header, rows)
}

/// One row per fitted point, repeating the fit summary.
pub fn fits_csv(reports: &[&CheckReport]) -> Result<Vec<u8>> {
    let header = ["suite", "name", "scale", "value", "slope", "intercept", "r_squared", "accept_lo", "accept_hi", "pass"]
        .map(String::from)
        .to_vec();
    let rows = reports.iter().flat_map(|r| {
        r.fits.iter().flat_map(move |f| {
            f.xs.iter().map(move |&(s, v)| {
                vec![
                    r.suite.clone(),
                    f.name.clone(),
                    fmt_f64(s),
                    fmt_f64(v),
                    fmt_f64(f.slope),
                    fmt_f64(f.intercept),
                    fmt_f64(f.r_squared),
                    fmt_f64(f.accept.0),
                    fmt_f64(f.accept.1),
                    f.pass.to_string(),
                ]
            })
        })
    });
    to_csv(header, rows)
}

/// One row per `N` of each rate experiment, with its fit summary.
pub fn rates_csv(outcomes: &[&RatesOutcome]) -> Result<Vec<u8>> {
    let header = ["regime", "N", "mean", "std_error", "slope", "intercept", "r_squared", "accept_lo", "accept_hi", "pass"]
        .map(String::from)
        .to_vec();
    let rows = outcomes.iter().flat_map(|o| {
        let f = &o.fit;
        o.points.iter().map(move |p| {
            vec![
                o.fixture.regime.to_string(),
                p.outer.to_string(),
                fmt_f64(p.mean),
                fmt_f64(p.std_error),
                fmt_f64(f.slope),
                fmt_f64(f.intercept),
                fmt_f64(f.r_squared),
                fmt_f64(f.accept.0),
                fmt_f64(f.accept.1),
                f.pass.to_string(),
            ]
        })
    });
    to_csv(header, rows)
}

/// Generic numeric table.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    to_csv(header.iter().map(|s| s.to_string()).collect(), rows.iter().map(|r| r.iter().map(|&v| fmt_f64(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{BoundBundle, RateFit};
    use nalgebra::DVector;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn shortest_forms() {
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1.0), "1.0");
        assert_eq!(fmt_f64(1e-7), "1e-7");
    }

    #[test]
    fn empty_record_is_header_only() {
        let rec = RunRecord { x0: DVector::zeros(2), rows: vec![], x_hat: DVector::zeros(2), r_index: None, x_star: None };
        let s = String::from_utf8(run_record_csv(&rec).unwrap()).unwrap();
        assert_eq!(s, "k,x_0,x_1,dist_sq,psi,grad_norm_sq,t_k,b_k,draws_f,draws_g\n");
    }

    #[test]
    fn report_tables() {
        let mut r = CheckReport::new("s");
        r.bundles.push(BoundBundle::upper("b, with comma", 1.0, 0.5, 2.0));
        r.fits.push(RateFit::log_log("f", vec![(1.0, 1.0), (2.0, 0.5)], (-1.1, -0.9), 0.8));
        let b = String::from_utf8(bundles_csv(&[&r]).unwrap()).unwrap();
        assert_eq!(b.lines().nth(1).unwrap(), "s,\"b, with comma\",1.0,0.5,2.0,1.0,true");
        let f = String::from_utf8(fits_csv(&[&r]).unwrap()).unwrap();
        assert_eq!(f.lines().count(), 3);
        assert!(f.lines().next().unwrap().contains("slope"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = std::env::temp_dir().join(format!("zo-out-{}", std::process::id()));
        let p = dir.join("sub").join("a.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
        fs::remove_dir_all(dir).unwrap();
    }
}
