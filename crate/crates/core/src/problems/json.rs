//! JSON form of a quadratic fixture.
//!
//! Matrices are written as arrays of rows; on input a flat row-major array is
//! accepted as well. Omitted coefficients default to zero, noise to `none`
//! and the feasible set to all of ℝⁿ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quadratic::{QuadraticBilevel, QuadraticParts};
use super::{FeasibleSet, NoiseModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixRepr {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixRepr {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixRepr::Rows((0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect())
    }

    fn to_matrix(&self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let bad = |got: usize| Error::Config(format!("{name}: expected {rows}x{cols} entries, got {got}"));
        match self {
            MatrixRepr::Rows(data) => {
                if data.len() != rows || data.iter().any(|r| r.len() != cols) {
                    return Err(bad(data.iter().map(Vec::len).sum()));
                }
                Ok(DMatrix::from_fn(rows, cols, |i, j| data[i][j]))
            }
            MatrixRepr::Flat(data) => {
                if data.len() != rows * cols {
                    return Err(bad(data.len()));
                }
                Ok(DMatrix::from_row_slice(rows, cols, data))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: MatrixRepr,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b_mat: Option<MatrixRepr>,
    #[serde(rename = "b", default, skip_serializing_if = "Option::is_none")]
    pub b_vec: Option<Vec<f64>>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<MatrixRepr>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<MatrixRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    #[serde(default)]
    pub c: f64,
    #[serde(default = "no_noise")]
    pub noise: NoiseModel,
    #[serde(default = "whole_space")]
    pub set: FeasibleSet,
}

fn no_noise() -> NoiseModel {
    NoiseModel::None
}

fn whole_space() -> FeasibleSet {
    FeasibleSet::Whole
}

fn vector(name: &str, data: &Option<Vec<f64>>, len: usize) -> Result<DVector<f64>> {
    match data {
        None => Ok(DVector::zeros(len)),
        Some(v) if v.len() == len => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Error::Config(format!("{name}: expected {len} entries, got {}", v.len()))),
    }
}

fn matrix(name: &str, data: &Option<MatrixRepr>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    match data {
        None => Ok(DMatrix::zeros(rows, cols)),
        Some(m) => m.to_matrix(name, rows, cols),
    }
}

impl ProblemDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("problem JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem document serializes")
    }

    pub fn build(&self) -> Result<QuadraticBilevel> {
        let (n, m) = (self.n, self.m);
        let parts = QuadraticParts {
            a: self.a.to_matrix("A", m, m)?,
            b_mat: matrix("B", &self.b_mat, m, n)?,
            b_vec: vector("b", &self.b_vec, m)?,
            p: matrix("P", &self.p, n, n)?,
            q: matrix("Q", &self.q, m, m)?,
            r: vector("r", &self.r, n)?,
            s: vector("s", &self.s, m)?,
            c: self.c,
            noise: self.noise,
            set: self.set.clone(),
        };
        QuadraticBilevel::new(parts)
    }
}

impl From<&QuadraticBilevel> for ProblemDocument {
    fn from(prob: &QuadraticBilevel) -> Self {
        let p = prob.parts();
        Self {
            n: prob.n(),
            m: prob.m(),
            a: MatrixRepr::from_matrix(&p.a),
            b_mat: Some(MatrixRepr::from_matrix(&p.b_mat)),
            b_vec: Some(p.b_vec.iter().cloned().collect()),
            p: Some(MatrixRepr::from_matrix(&p.p)),
            q: Some(MatrixRepr::from_matrix(&p.q)),
            r: Some(p.r.iter().cloned().collect()),
            s: Some(p.s.iter().cloned().collect()),
            c: p.c,
            noise: p.noise,
            set: p.set.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::random_problem;

    #[test]
    fn round_trip() {
        let prob = random_problem(3, 2, 1.0, NoiseModel::LinearTerm { sigma: 0.25 }, 4)
            .unwrap()
            .with_set(FeasibleSet::Ball { center: vec![0.0; 3], radius: 2.0 })
            .unwrap();
        let doc = ProblemDocument::from(&prob);
        let back = ProblemDocument::from_json(&doc.to_json()).unwrap().build().unwrap();
        assert_eq!(back.parts(), prob.parts());
    }

    #[test]
    fn flat_rows_and_defaults() {
        let text = r#"{"n": 1, "m": 2, "A": [2, 0, 0, 1], "b": [1, 1],
                       "noise": {"kind": "additive-value", "sigma": 0.5},
                       "set": {"kind": "box", "lower": [-1], "upper": [1]}}"#;
        let prob = ProblemDocument::from_json(text).unwrap().build().unwrap();
        let y = prob.lower_solution(&DVector::zeros(1));
        assert!((y - DVector::from_vec(vec![0.5, 1.0])).amax() < 1e-15);
        assert_eq!(prob.noise(), NoiseModel::AdditiveValue { sigma: 0.5 });
    }

    #[test]
    fn shape_errors_are_reported() {
        let text = r#"{"n": 1, "m": 2, "A": [[1, 0]]}"#;
        let err = ProblemDocument::from_json(text).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("A"));
        let text = r#"{"n": 1, "m": 1, "A": [[1]], "set": {"kind": "all-of-Rn"}, "bogus": 1}"#;
        assert!(ProblemDocument::from_json(text).is_err());
    }
}
