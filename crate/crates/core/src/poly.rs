//! Polynomial matrices in the differential operator `p`.
//!
//! A `PolyMatrix` stores its coefficients in ascending powers, so
//! `M(p) = M_0 + M_1 p + ... + M_d p^d`.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{arg_err, dim_err, Error, Result};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    coeffs: Vec<DMatrix<f64>>,
}

impl PolyMatrix {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = coeffs.first() else {
            return arg_err("polynomial matrix needs at least one coefficient");
        };
        let (r, c) = first.shape();
        for (i, m) in coeffs.iter().enumerate() {
            if m.shape() != (r, c) {
                return dim_err(format!(
                    "coefficient {i} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                ));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("coefficient {i}")));
            }
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            coeffs: vec![DMatrix::zeros(rows, cols)],
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { coeffs: vec![m] }
    }

    /// 1x1 polynomial from ascending coefficients.
    pub fn scalar(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect())
    }

    /// `(p + root)^multiplicity` as a 1x1 polynomial.
    pub fn repeated_root(root: f64, multiplicity: usize) -> Self {
        let mut c = vec![1.0];
        for _ in 0..multiplicity {
            let mut next = vec![0.0; c.len() + 1];
            for (k, &v) in c.iter().enumerate() {
                next[k] += root * v;
                next[k + 1] += v;
            }
            c = next;
        }
        Self::scalar(&c).expect("finite coefficients")
    }

    pub fn rows(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.coeffs[0].ncols()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, k: usize) -> &DMatrix<f64> {
        &self.coeffs[k]
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// Ascending coefficients of a 1x1 polynomial.
    pub fn scalar_coeffs(&self) -> Result<Vec<f64>> {
        if self.rows() != 1 || self.cols() != 1 {
            return dim_err(format!(
                "expected a scalar polynomial, got {}x{}",
                self.rows(),
                self.cols()
            ));
        }
        Ok(self.coeffs.iter().map(|m| m[(0, 0)]).collect())
    }

    /// Drops trailing all-zero coefficients (the constant term is always kept).
    pub fn trimmed(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        while coeffs.len() > 1 && coeffs.last().is_some_and(|m| m.iter().all(|&v| v == 0.0)) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    /// Evaluates at a complex point by Horner's rule.
    pub fn eval(&self, s: C64) -> DMatrix<C64> {
        let mut acc: DMatrix<C64> = self.coeffs[self.degree()].map(|v| C64::new(v, 0.0));
        for k in (0..self.degree()).rev() {
            acc = acc * s + self.coeffs[k].map(|v| C64::new(v, 0.0));
        }
        acc
    }

    pub fn column(&self, j: usize) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|m| m.columns(j, 1).into_owned()).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|m| m.select_columns(cols)).collect(),
        }
    }

    fn padded(&self, degree: usize) -> Vec<DMatrix<f64>> {
        let mut c = self.coeffs.clone();
        c.resize(degree + 1, DMatrix::zeros(self.rows(), self.cols()));
        c
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&PolyMatrix]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return arg_err("nothing to concatenate");
        };
        let rows = first.rows();
        if parts.iter().any(|p| p.rows() != rows) {
            return dim_err("hcat: row counts differ");
        }
        let deg = parts.iter().map(|p| p.degree()).max().unwrap_or(0);
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let padded: Vec<_> = parts.iter().map(|p| p.padded(deg)).collect();
        let coeffs = (0..=deg)
            .map(|k| {
                let mut m = DMatrix::zeros(rows, cols);
                let mut at = 0;
                for p in &padded {
                    let c = &p[k];
                    m.view_mut((0, at), c.shape()).copy_from(c);
                    at += c.ncols();
                }
                m
            })
            .collect();
        Self::new(coeffs)
    }

    /// Vertical concatenation.
    pub fn vcat(parts: &[&PolyMatrix]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return arg_err("nothing to concatenate");
        };
        let cols = first.cols();
        if parts.iter().any(|p| p.cols() != cols) {
            return dim_err("vcat: column counts differ");
        }
        let deg = parts.iter().map(|p| p.degree()).max().unwrap_or(0);
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        let padded: Vec<_> = parts.iter().map(|p| p.padded(deg)).collect();
        let coeffs = (0..=deg)
            .map(|k| {
                let mut m = DMatrix::zeros(rows, cols);
                let mut at = 0;
                for p in &padded {
                    let c = &p[k];
                    m.view_mut((at, 0), c.shape()).copy_from(c);
                    at += c.nrows();
                }
                m
            })
            .collect();
        Self::new(coeffs)
    }

    pub fn mul(&self, rhs: &PolyMatrix) -> Result<Self> {
        if self.cols() != rhs.rows() {
            return dim_err(format!(
                "product of {}x{} and {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            ));
        }
        let deg = self.degree() + rhs.degree();
        let mut coeffs = vec![DMatrix::zeros(self.rows(), rhs.cols()); deg + 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Self::new(coeffs)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|m| m * k).collect(),
        }
    }

    /// Rows as nested vectors, one matrix per power.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        self.coeffs
            .iter()
            .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
            .collect()
    }

    pub fn from_nested(nested: &[Vec<Vec<f64>>], rows: usize, cols: usize) -> Result<Self> {
        if nested.is_empty() {
            return Ok(Self::zeros(rows, cols));
        }
        let coeffs = nested
            .iter()
            .map(|m| matrix_from_rows(m, rows, cols))
            .collect::<Result<Vec<_>>>()?;
        Self::new(coeffs)
    }
}

/// Builds a dense matrix from row vectors; an empty list yields a zero matrix of the given shape.
pub fn matrix_from_rows(rows_data: &[Vec<f64>], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if rows_data.is_empty() && (rows == 0 || cols == 0) {
        return Ok(DMatrix::zeros(rows, cols));
    }
    if rows_data.len() != rows {
        return dim_err(format!("expected {rows} rows, found {}", rows_data.len()));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (i, r) in rows_data.iter().enumerate() {
        if r.len() != cols {
            return dim_err(format!("row {i} has {} entries, expected {cols}", r.len()));
        }
        for (j, &v) in r.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    rows: usize,
    cols: usize,
    coeffs: Vec<Vec<Vec<f64>>>,
}

impl Serialize for PolyMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyRepr {
            rows: self.rows(),
            cols: self.cols(),
            coeffs: self.to_nested(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolyMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PolyRepr::deserialize(d)?;
        PolyMatrix::from_nested(&r.coeffs, r.rows, r.cols).map_err(serde::de::Error::custom)
    }
}

/// Roots of a real polynomial given in ascending coefficients.
pub fn roots(coeffs: &[f64]) -> Result<Vec<C64>> {
    let mut c = coeffs.to_vec();
    while c.len() > 1 && c.last() == Some(&0.0) {
        c.pop();
    }
    let n = c.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let lead = c[n];
    let mut comp = DMatrix::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        comp[(i, n - 1)] = -c[i] / lead;
    }
    Ok(comp.complex_eigenvalues().iter().copied().collect())
}

/// Fails unless every root of the scalar polynomial lies in the open left half plane.
pub fn check_stable(a: &PolyMatrix) -> Result<()> {
    let c = a.trimmed().scalar_coeffs()?;
    let r = roots(&c)?;
    let max_real = r.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if !r.is_empty() && max_real >= 0.0 {
        return Err(Error::UnstableDenominator { max_real });
    }
    if c.iter().all(|&v| v == 0.0) {
        return arg_err("denominator is identically zero");
    }
    Ok(())
}
