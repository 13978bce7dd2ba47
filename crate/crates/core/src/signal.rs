//! Uniformly sampled multichannel signals and quadrature.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, dim_err, Error, Result};

/// Samples on the grid `t0 + k dt`; rows are samples, columns are channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    t0: f64,
    dt: f64,
    values: DMatrix<f64>,
}

impl SampledSignal {
    pub fn new(t0: f64, dt: f64, values: DMatrix<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return arg_err(format!("sample step must be positive, got {dt}"));
        }
        if !t0.is_finite() {
            return arg_err("start time must be finite");
        }
        Ok(Self { t0, dt, values })
    }

    /// Samples `f(t)` on `n` points starting at `t0`.
    pub fn from_fn(t0: f64, dt: f64, n: usize, channels: usize, mut f: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let mut values = DMatrix::zeros(n, channels);
        let mut buf = vec![0.0; channels];
        for k in 0..n {
            f(t0 + k as f64 * dt, &mut buf);
            for (c, &v) in buf.iter().enumerate() {
                values[(k, c)] = v;
            }
        }
        Self::new(t0, dt, values)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> DVector<f64> {
        self.values.column(c).into_owned()
    }

    pub fn sample(&self, k: usize) -> DVector<f64> {
        self.values.row(k).transpose()
    }

    /// L2 norm over the whole record, all channels together.
    pub fn l2_norm(&self) -> f64 {
        let w = simpson_weights(self.len(), self.dt);
        let mut acc = 0.0;
        for c in 0..self.channels() {
            let col = self.values.column(c);
            acc += col.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>();
        }
        acc.max(0.0).sqrt()
    }

    pub fn to_csv(&self, header: &[&str]) -> Result<String> {
        if header.len() != self.channels() {
            return dim_err(format!(
                "{} header names for {} channels",
                header.len(),
                self.channels()
            ));
        }
        let mut out = String::from("t");
        for h in header {
            out.push(',');
            out.push_str(h);
        }
        out.push('\n');
        for k in 0..self.len() {
            write!(out, "{}", self.time(k)).unwrap();
            for c in 0..self.channels() {
                write!(out, ",{}", self.values[(k, c)]).unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses CSV whose first column is time on a uniform, strictly increasing grid.
    pub fn from_csv(text: &str) -> Result<(Vec<String>, Self)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let names: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: {e}", i + 2)))
                })
                .collect::<Result<_>>()?;
            if fields.len() != names.len() + 1 {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    i + 2,
                    fields.len(),
                    names.len() + 1
                )));
            }
            times.push(fields[0]);
            rows.push(fields[1..].to_vec());
        }
        if times.len() < 2 {
            return Err(Error::Parse("need at least two samples".into()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        for w in times.windows(2) {
            let step = w[1] - w[0];
            if step <= 0.0 {
                return Err(Error::Parse("time column is not strictly increasing".into()));
            }
            if (step - dt).abs() > 1e-6 * dt {
                return Err(Error::Parse("time grid is not uniform".into()));
            }
        }
        let mut values = DMatrix::zeros(rows.len(), names.len());
        for (k, r) in rows.iter().enumerate() {
            for (c, &v) in r.iter().enumerate() {
                values[(k, c)] = v;
            }
        }
        Ok((names, Self::new(times[0], dt, values)?))
    }

    pub fn write_csv(&self, path: &Path, header: &[&str]) -> Result<()> {
        std::fs::write(path, self.to_csv(header)?)?;
        Ok(())
    }
}

/// Composite quadrature weights on `n` equally spaced samples.
///
/// Simpson's rule when the interval count is even; otherwise Simpson on all
/// but the last three intervals and the 3/8 rule on those.
pub fn simpson_weights(n: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    match n {
        0 | 1 => return w,
        2 => {
            w[0] = dt / 2.0;
            w[1] = dt / 2.0;
            return w;
        }
        _ => {}
    }
    let intervals = n - 1;
    let simpson_end = if intervals % 2 == 0 { intervals } else { intervals - 3 };
    let mut k = 0;
    while k < simpson_end {
        w[k] += dt / 3.0;
        w[k + 1] += 4.0 * dt / 3.0;
        w[k + 2] += dt / 3.0;
        k += 2;
    }
    if simpson_end < intervals {
        let s = simpson_end;
        let c = 3.0 * dt / 8.0;
        w[s] += c;
        w[s + 1] += 3.0 * c;
        w[s + 2] += 3.0 * c;
        w[s + 3] += c;
    }
    w
}

pub fn simpson(values: &[f64], dt: f64) -> f64 {
    simpson_weights(values.len(), dt)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// `X^T W X` with Simpson weights, for sample-major `x`.
pub fn weighted_gram(x: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let w = simpson_weights(x.nrows(), dt);
    let mut wx = x.clone();
    for (k, wk) in w.iter().enumerate() {
        wx.row_mut(k).scale_mut(*wk);
    }
    let g = x.transpose() * wx;
    crate::linalg::symmetrize(&g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_exact_on_cubics_both_parities() {
        for n in [5usize, 6, 7, 10, 11] {
            let dt = 0.1;
            let v: Vec<f64> = (0..n)
                .map(|k| {
                    let t = k as f64 * dt;
                    t * t * t - 2.0 * t + 1.0
                })
                .collect();
            let t1 = (n - 1) as f64 * dt;
            let exact = t1.powi(4) / 4.0 - t1 * t1 + t1;
            assert_relative_eq!(simpson(&v, dt), exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = SampledSignal::from_fn(0.0, 0.25, 5, 2, |t, out| {
            out[0] = t.sin();
            out[1] = 1.0 / 3.0 + t;
        })
        .unwrap();
        let text = s.to_csv(&["a", "b"]).unwrap();
        let (names, back) = SampledSignal::from_csv(&text).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(back.values(), s.values());
        assert_eq!(back.dt(), s.dt());
    }

    #[test]
    fn csv_rejects_non_monotone_time() {
        let text = "t,a\n0,1\n0.5,2\n0.4,3\n";
        assert!(SampledSignal::from_csv(text).is_err());
    }

    #[test]
    fn l2_norm_of_constant() {
        let s = SampledSignal::from_fn(0.0, 0.01, 101, 1, |_, o| o[0] = 2.0).unwrap();
        assert_relative_eq!(s.l2_norm(), 2.0, epsilon = 1e-12);
    }
}
