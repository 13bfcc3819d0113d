//! Step sizes and loop budgets for the three convexity regimes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    StronglyConvex,
    Convex,
    Nonconvex,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::StronglyConvex, Regime::Convex, Regime::Nonconvex];

    pub fn name(self) -> &'static str {
        match self {
            Regime::StronglyConvex => "strongly-convex",
            Regime::Convex => "convex",
            Regime::Nonconvex => "nonconvex",
        }
    }

    /// Named schedule presets, one per regime.
    pub fn preset(self) -> &'static str {
        match self {
            Regime::StronglyConvex => "cor4.3a",
            Regime::Convex => "cor4.3b",
            Regime::Nonconvex => "cor4.3c",
        }
    }

    pub fn from_preset(name: &str) -> Option<Regime> {
        Regime::ALL.into_iter().find(|r| r.preset() == name)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s || r.preset() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime '{s}' (expected strongly-convex, convex or nonconvex)")))
    }
}

/// Fixed values replacing the formula-driven sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub szhia_iterations: Option<usize>,
}

/// Fully resolved schedule of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub regime: Regime,
    pub n: usize,
    pub m: usize,
    pub outer_iterations: usize,
    pub gamma: f64,
    pub lambda_g: f64,
    pub l1_big_g: f64,
    pub lambda_psi: Option<f64>,
    pub l1_psi: Option<f64>,
    #[serde(default)]
    pub overrides: ScheduleOverrides,
}

/// `β(ε) = min{1/(8(m+4)L_{1,G}), ελ_g, 1/λ_g}`.
pub fn inner_step(eps: f64, m: usize, l1_big_g: f64, lambda_g: f64) -> f64 {
    let a = 1.0 / (8.0 * (m as f64 + 4.0) * l1_big_g);
    a.min(eps * lambda_g).min(1.0 / lambda_g)
}

/// `T = ⌈log(1/ε)/(βλ_g)⌉`, the inner budget for accuracy `ε`.
pub fn inner_length(eps: f64, beta: f64, lambda_g: f64) -> usize {
    ceil_count((1.0 / eps).ln() / (beta * lambda_g))
}

/// `t_k = ⌈max{8(m+4)L_{1,G}/λ_g, 1/(ε λ_g²), 1} log(1/ε)⌉`, at least 1.
pub fn inner_budget(eps: f64, m: usize, l1_big_g: f64, lambda_g: f64) -> usize {
    let lead = (8.0 * (m as f64 + 4.0) * l1_big_g / lambda_g).max(1.0 / (eps * lambda_g * lambda_g)).max(1.0);
    ceil_count(lead * (1.0 / eps).ln()).max(1)
}

/// `⌈log_{1−γλ_g} target⌉` for `target ∈ (0, 1]`, at least 1.
pub fn szhia_budget(target: f64, gamma: f64, lambda_g: f64) -> usize {
    let rate = (1.0 - gamma * lambda_g).ln();
    ceil_count(target.ln() / rate).max(1)
}

fn ceil_count(v: f64) -> usize {
    if v.is_finite() && v > 0.0 {
        // guard against 2.0000000000000004 style round-up
        let r = v.round();
        if (v - r).abs() <= 1e-9 * r.max(1.0) {
            r as usize
        } else {
            v.ceil() as usize
        }
    } else {
        0
    }
}

impl Schedule {
    /// Build and validate a schedule. Strongly convex runs need `λ_ψ`,
    /// the other regimes `L_{1,ψ}`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        regime: Regime,
        n: usize,
        m: usize,
        outer_iterations: usize,
        gamma: f64,
        constants: &ProblemConstants,
        lambda_psi: Option<f64>,
        l1_psi: Option<f64>,
    ) -> Result<Self> {
        let s = Self {
            regime,
            n,
            m,
            outer_iterations,
            gamma,
            lambda_g: constants.lambda_g,
            l1_big_g: constants.l1_big_g,
            lambda_psi,
            l1_psi,
            overrides: ScheduleOverrides::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_overrides(mut self, overrides: ScheduleOverrides) -> Result<Self> {
        self.overrides = overrides;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("both blocks need dimension >= 1".into()));
        }
        positive("gamma", self.gamma)?;
        positive("lambda_g", self.lambda_g)?;
        positive("L1_G", self.l1_big_g)?;
        if self.gamma * self.lambda_g >= 1.0 {
            return Err(Error::Config(format!("gamma * lambda_g must be < 1, got {}", self.gamma * self.lambda_g)));
        }
        match self.regime {
            Regime::StronglyConvex if self.overrides.alpha.is_none() => {
                positive(
                    "lambda_psi",
                    self.lambda_psi
                        .ok_or_else(|| Error::Config("lambda_psi is required for the strongly-convex schedule".into()))?,
                )?;
            }
            Regime::Convex | Regime::Nonconvex if self.overrides.alpha.is_none() => {
                positive(
                    "l1_psi",
                    self.l1_psi.ok_or_else(|| Error::Config(format!("l1_psi is required for the {} schedule", self.regime)))?,
                )?;
            }
            _ => {}
        }
        if let Some(a) = self.overrides.alpha {
            positive("alpha override", a)?;
        }
        if let Some(b) = self.overrides.beta {
            positive("beta override", b)?;
        }
        Ok(())
    }

    fn dim(&self) -> f64 {
        (self.n + self.m) as f64
    }

    pub fn alpha(&self, k: usize) -> f64 {
        if let Some(a) = self.overrides.alpha {
            return a;
        }
        match self.regime {
            Regime::StronglyConvex => 4.0 / (self.lambda_psi.unwrap_or(f64::NAN) * (k as f64 + 3.0)),
            Regime::Convex | Regime::Nonconvex => {
                let np1 = self.outer_iterations as f64 + 1.0;
                1.0 / (2.0 * self.l1_psi.unwrap_or(f64::NAN) * (self.dim().powi(3) * np1).sqrt())
            }
        }
    }

    /// Inner accuracy target `ε_k`.
    pub fn eps(&self, k: usize) -> f64 {
        let kp1 = k as f64 + 1.0;
        match self.regime {
            Regime::StronglyConvex | Regime::Convex => self.dim().powi(2) / kp1,
            Regime::Nonconvex => (self.dim() / kp1).sqrt(),
        }
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.overrides.beta.unwrap_or_else(|| inner_step(self.eps(k), self.m, self.l1_big_g, self.lambda_g))
    }

    pub fn inner_iterations(&self, k: usize) -> usize {
        self.overrides.inner_iterations.unwrap_or_else(|| inner_budget(self.eps(k), self.m, self.l1_big_g, self.lambda_g))
    }

    pub fn szhia_iterations(&self, k: usize) -> usize {
        if let Some(b) = self.overrides.szhia_iterations {
            return b;
        }
        let kp1 = k as f64 + 1.0;
        let target = match self.regime {
            Regime::StronglyConvex | Regime::Convex => 1.0 / kp1,
            Regime::Nonconvex => 1.0 / kp1.sqrt(),
        };
        szhia_budget(target, self.gamma, self.lambda_g)
    }

    /// Total oracle cost of outer iterations `0..k_end`: `(draws_F, draws_G)`.
    pub fn draws_through(&self, k_end: usize) -> (u64, u64) {
        (0..k_end).fold((0, 0), |(f, g), k| {
            let (t, b) = (self.inner_iterations(k) as u64, self.szhia_iterations(k) as u64);
            (f + 2 + 2 * b, g + 2 * t + 3 + 3 * b)
        })
    }
}
