//! Hessian-inverse SGD on closed-form fixtures.
//!
//! * deterministic — `A = diag(2, 1)`, `∇_y f = (1, 1)`, so `z̄ = (0.5, 1)`;
//! * noisy — `A = I`, `∇_y f = (0.5, −0.25)` with linear-term noise `0.3`.

use std::path::Path;

use clap::Args;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use zo_bilevel::problems::QuadraticParts;
use zo_bilevel::rng::{child_seed, stream, Phase};
use zo_bilevel::stats::{Moments, VecMoments};
use zo_bilevel::szhia::{mean_square_gamma, run_szhia_observed, SzhiaConfig};
use zo_bilevel::{NoiseModel, QuadraticBilevel, SmoothingParams};

use crate::{write_table, Failure};

const DEFAULT_SEED: u64 = 31;

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    /// Step; defaults to the mean-square-stable step of the fixture.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 3000)]
    pub iterations: usize,
    /// Samples averaged per step.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Independent runs averaged per step.
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
    /// Use the noisy fixture instead of the deterministic one.
    #[arg(long)]
    pub noisy: bool,
}

fn fixture(noisy: bool) -> zo_bilevel::Result<QuadraticBilevel> {
    let mut parts = QuadraticParts::zeros(1, 2);
    if noisy {
        parts.s = DVector::from_vec(vec![0.5, -0.25]);
        parts.noise = NoiseModel::LinearTerm { sigma: 0.3 };
    } else {
        parts.a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        parts.s = DVector::from_vec(vec![1.0, 1.0]);
    }
    QuadraticBilevel::new(parts)
}

struct Trace {
    per_step: Vec<Moments>,
    mean_final: DVector<f64>,
    zbar: DVector<f64>,
}

/// Per-step `‖z_τ − z̄‖²` over replications, plus the mean final iterate.
fn trace(args: &DemoArgs, seed: u64) -> Result<Trace, Failure> {
    if args.replications == 0 || args.batch == 0 {
        return Err(Failure::Usage("replications and batch must be >= 1".into()));
    }
    let prob = fixture(args.noisy)?;
    let zbar = prob.hessian_inverse_product(&DVector::zeros(2));
    let params = SmoothingParams::new(0.0, 1e-3, 0.0, 1e-3)?;
    let constants = prob.constants(1.0);
    let (lo, hi) = zo_bilevel::linalg::eig_range(&prob.parts().a);
    let gamma = args.gamma.unwrap_or_else(|| mean_square_gamma(lo, hi, 2));
    let mut cfg = SzhiaConfig::new(gamma, args.iterations);
    cfg.batch = args.batch;
    cfg.z_scale = zbar.norm();
    let (x, y) = (DVector::zeros(1), DVector::zeros(2));
    let runs: Vec<zo_bilevel::Result<(Vec<f64>, DVector<f64>)>> = (0..args.replications)
        .into_par_iter()
        .map(|r| {
            let mut errs = Vec::with_capacity(args.iterations + 1);
            let mut rng = stream(seed, Phase::Szhia, r as u64);
            let res = run_szhia_observed(&prob.upper(), &prob.lower(), &x, &y, &params, &cfg, &constants, &mut rng, |_, z| {
                errs.push((z - &zbar).norm_squared())
            })?;
            Ok((errs, res.z))
        })
        .collect();
    let mut per_step = vec![Moments::default(); args.iterations + 1];
    let mut last = VecMoments::new(2);
    for run in runs {
        let (errs, z) = run?;
        for (acc, e) in per_step.iter_mut().zip(errs) {
            acc.push(e);
        }
        last.push(&z);
    }
    Ok(Trace { per_step, mean_final: last.mean, zbar })
}

fn seed_of(master: Option<u64>) -> u64 {
    child_seed(master.unwrap_or(DEFAULT_SEED), 0)
}

pub fn run(args: &DemoArgs, master: Option<u64>, out: &Path) -> Result<bool, Failure> {
    let Trace { per_step, mean_final: z, zbar } = trace(args, seed_of(master))?;
    // A single run has no spread to report.
    let spread = args.replications > 1;
    let rows: Vec<Vec<f64>> = per_step
        .iter()
        .enumerate()
        .map(|(t, m)| if spread { vec![t as f64, m.mean, m.std_error()] } else { vec![t as f64, m.mean] })
        .collect();
    let header: &[&str] = if spread { &["tau", "err_sq", "std_error"] } else { &["tau", "err_sq"] };
    write_table(&out.join("szhia_demo.csv"), header, &rows)?;
    println!("zbar = {:?}", zbar.as_slice());
    println!("mean z_T = {:?} (T = {}, {} run(s))", z.as_slice(), args.iterations, args.replications);
    println!("final err_sq = {:e}", per_step.last().map_or(f64::NAN, |m| m.mean));
    Ok(true)
}

/// Variance floor: mean of `‖z_τ − z̄‖²` over the second half of the run.
pub fn sweep(args: &DemoArgs, axis: &str, values: &[String], master: Option<u64>, out: &Path) -> Result<bool, Failure> {
    let mut rows = Vec::new();
    for v in values {
        let mut a = args.clone();
        let bad = || Failure::Usage(format!("{axis}: cannot parse '{v}'"));
        match axis {
            "gamma" => a.gamma = Some(v.parse().map_err(|_| bad())?),
            "iterations" => a.iterations = v.parse().map_err(|_| bad())?,
            "batch" => a.batch = v.parse().map_err(|_| bad())?,
            _ => return Err(Failure::Usage(format!("unknown szhia-demo axis '{axis}' (expected gamma, iterations or batch)"))),
        }
        let per_step = trace(&a, seed_of(master))?.per_step;
        let half = per_step.len() / 2;
        let plateau: Moments = per_step[half..].iter().map(|m| m.mean).collect();
        let value: f64 = v.parse().map_err(|_| bad())?;
        println!("{axis} = {v}: plateau {:e}", plateau.mean);
        rows.push(vec![value, plateau.mean, plateau.std_error()]);
    }
    write_table(&out.join("szhia_sweep.csv"), &[axis, "plateau", "std_error"], &rows)?;
    Ok(true)
}
