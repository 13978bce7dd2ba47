//! Residual generator synthesis on the stacked coefficient form.
//!
//! Every program works in the coordinates `nbar = Z y`, where the columns of
//! `Z` span the left null space of `hbar`. Decoupling of the unknowns is then
//! automatic, and the sensitivity components become `c_j^T y` with
//! `c_j = Z^T fbar e_j`.

mod solver;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dae::{stack_system, NonlinearDaeModel, StackedSystem};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{inf_norm, left_null_space, min_eigenvalue, psd_split, quad_form, spectral_norm, symmetrize};
use crate::poly::{check_stable, PolyMatrix};
use solver::{Cone, ConeOutcome, ConeProgram};

const NULL_TOL: f64 = 1e-10;
const EIG_TOL: f64 = 1e-12;
const BRANCH_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-8;
const CERT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

/// One of the `2m` pieces of the constraint `||nbar fbar||_inf >= 1`:
/// `sign * (nbar fbar)_column >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub column: usize,
    pub sign: Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    Feasible,
    MaxSensitivity,
    Robust,
    Average,
    Chance,
}

/// Cost applied to the residual norm `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payoff {
    /// `alpha^2`
    Quadratic,
    /// `alpha`; no convex reformulation is provided.
    Linear,
}

/// Filter `a(p)^{-1} N(p)` with `N(p) = sum_i N_i p^i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub n_r: usize,
    pub d_n: usize,
    /// `[N_0 N_1 ... N_dN]`, each block `n_r` wide.
    pub nbar: Vec<f64>,
    /// Ascending coefficients of `a(p)`.
    pub denominator: Vec<f64>,
}

impl FilterCoefficients {
    pub fn new(n_r: usize, d_n: usize, nbar: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if nbar.len() != n_r * (d_n + 1) {
            return dim_err(format!("nbar has {} entries, expected {}", nbar.len(), n_r * (d_n + 1)));
        }
        if denominator.len() < 2 {
            return arg_err("denominator must have degree at least one");
        }
        Ok(Self {
            n_r,
            d_n,
            nbar,
            denominator,
        })
    }

    pub fn nbar_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.nbar)
    }

    pub fn numerator(&self) -> PolyMatrix {
        let coeffs = (0..=self.d_n)
            .map(|i| DMatrix::from_row_slice(1, self.n_r, &self.nbar[i * self.n_r..(i + 1) * self.n_r]))
            .collect();
        PolyMatrix::new(coeffs).expect("consistent blocks")
    }

    pub fn denominator_poly(&self) -> PolyMatrix {
        PolyMatrix::scalar(&self.denominator).expect("finite coefficients")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChanceCertificate {
    pub epsilon: f64,
    pub beta: f64,
    pub required: u64,
    pub supplied: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub scenario_count: usize,
    pub null_space_dim: usize,
    /// Some direction decouples every scenario exactly, so the stage one optimum is zero.
    pub decoupled: bool,
    /// Stage two could not be solved reliably and the stage one filter was kept.
    pub fallback: bool,
    pub stage1_value: Option<f64>,
    pub stage2_objective: Option<f64>,
    /// Factor that brought `||nbar fbar||_inf` to one.
    pub sensitivity_scale: f64,
    /// `||nbar hbar||_inf` of the returned filter.
    pub decoupling_residual: f64,
    pub branch_values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub perspective: Perspective,
    pub filter: FilterCoefficients,
    /// Threshold on `||r||^2`; absent for programs without a payoff.
    pub gamma_star: Option<f64>,
    pub stage1_gamma: Option<f64>,
    pub active_branch: Branch,
    pub certificate: Option<ChanceCertificate>,
    pub diagnostics: Diagnostics,
}

/// Inputs of the scenario sample size bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub epsilon: f64,
    pub beta: f64,
    pub n_r: usize,
    pub n_f: usize,
    pub d_n: usize,
    pub d_f: usize,
}

/// Smallest `n` with `n >= (2/eps) (ln(m/beta) + n_r (d_N + 1) + 1)`, `m = n_f (d_F + d_N + 1)`.
pub fn sample_complexity(p: &ScenarioParams) -> Result<u64> {
    if !(p.epsilon > 0.0 && p.epsilon < 1.0) {
        return arg_err(format!("epsilon must lie in (0, 1), got {}", p.epsilon));
    }
    if !(p.beta > 0.0 && p.beta < 1.0) {
        return arg_err(format!("beta must lie in (0, 1), got {}", p.beta));
    }
    if p.n_r == 0 || p.n_f == 0 {
        return arg_err("n_r and n_f must be positive");
    }
    let m = (p.n_f * (p.d_f + p.d_n + 1)) as f64;
    let bound = 2.0 / p.epsilon * ((m / p.beta).ln() + (p.n_r * (p.d_n + 1)) as f64 + 1.0);
    Ok(bound.ceil() as u64)
}

/// The branch list in fixed order: `(0,+), (0,-), (1,+), ...`.
pub fn lp_branches(stacked: &StackedSystem) -> Vec<Branch> {
    (0..stacked.sensitivity_len())
        .flat_map(|column| {
            [Sign::Plus, Sign::Minus]
                .into_iter()
                .map(move |sign| Branch { column, sign })
        })
        .collect()
}

/// Index of the best value; ties within a relative `TIE_TOL` go to the lowest index.
fn pick_best(values: &[Option<f64>], maximize: bool) -> Option<usize> {
    let best = values
        .iter()
        .flatten()
        .copied()
        .fold(None, |acc: Option<f64>, v| match acc {
            None => Some(v),
            Some(b) if (maximize && v > b) || (!maximize && v < b) => Some(v),
            keep => keep,
        })?;
    let tol = TIE_TOL * best.abs().max(f64::MIN_POSITIVE);
    values.iter().position(|v| v.is_some_and(|v| (v - best).abs() <= tol))
}

struct Stage1 {
    column: usize,
    y: DVector<f64>,
    decoupled: bool,
    values: Vec<Option<f64>>,
}

enum Aggregate {
    Average,
    Worst,
}

/// A stacked system reduced to the null-space coordinates, plus the filter denominator.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    stacked: StackedSystem,
    denominator: Vec<f64>,
    z: DMatrix<f64>,
    sens: DMatrix<f64>,
    feasible: Vec<bool>,
}

/// Filter numerator and objective of one sensitivity branch, if feasible.
type BranchSolution = Option<(DVector<f64>, f64)>;

impl SynthesisProblem {
    pub fn new(h: &PolyMatrix, f: &PolyMatrix, d_n: usize, a: &PolyMatrix) -> Result<Self> {
        check_stable(a)?;
        let denominator = a.trimmed().scalar_coeffs()?;
        let stacked = stack_system(h, f, d_n)?;
        if stacked.hbar.iter().chain(stacked.fbar.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model coefficients".into()));
        }
        let z = left_null_space(&stacked.hbar, NULL_TOL);
        let sens = z.transpose() * &stacked.fbar;
        let scale = (0..stacked.fbar.ncols())
            .map(|j| stacked.fbar.column(j).norm())
            .fold(0.0, f64::max);
        let feasible = (0..sens.ncols())
            .map(|j| scale > 0.0 && sens.column(j).norm() > BRANCH_TOL * scale)
            .collect();
        Ok(Self {
            stacked,
            denominator,
            z,
            sens,
            feasible,
        })
    }

    pub fn from_model(model: &NonlinearDaeModel, d_n: usize, a: &PolyMatrix) -> Result<Self> {
        Self::new(model.h(), model.f(), d_n, a)
    }

    pub fn stacked(&self) -> &StackedSystem {
        &self.stacked
    }

    pub fn null_space_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn numerator_len(&self) -> usize {
        self.stacked.numerator_len()
    }

    fn sens_col(&self, j: usize) -> DVector<f64> {
        self.sens.column(j).into_owned()
    }

    fn any_feasible(&self) -> Result<()> {
        if self.feasible.iter().any(|&b| b) {
            Ok(())
        } else {
            Err(Error::AllBranchesInfeasible {
                branches: 2 * self.sens.ncols(),
            })
        }
    }

    fn check_matrix(&self, q: &DMatrix<f64>) -> Result<()> {
        let n = self.numerator_len();
        if q.shape() != (n, n) {
            return dim_err(format!(
                "scenario matrix is {}x{}, expected {n}x{n}",
                q.nrows(),
                q.ncols()
            ));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scenario matrix".into()));
        }
        let norm = spectral_norm(q);
        let min_eig = min_eigenvalue(q);
        if min_eig < -PSD_TOL * norm {
            return Err(Error::NonPsdInput { min_eig, norm });
        }
        Ok(())
    }

    fn reduce(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(self.z.transpose() * q * &self.z))
    }

    /// Scales `y` so the filter has unit sensitivity and packages it.
    fn finish(&self, y: &DVector<f64>) -> (FilterCoefficients, DVector<f64>, f64) {
        let nbar = &self.z * y;
        let s = inf_norm(&(self.stacked.fbar.transpose() * &nbar));
        let nbar = if s > 0.0 { nbar / s } else { nbar };
        let filter = FilterCoefficients {
            n_r: self.stacked.n_r,
            d_n: self.stacked.d_n,
            nbar: nbar.iter().copied().collect(),
            denominator: self.denominator.clone(),
        };
        (filter, nbar, s)
    }

    fn diagnostics(&self, nbar: &DVector<f64>, scale: f64, values: Vec<Option<f64>>) -> Diagnostics {
        Diagnostics {
            null_space_dim: self.z.ncols(),
            sensitivity_scale: scale,
            decoupling_residual: inf_norm(&(self.stacked.hbar.transpose() * nbar)),
            branch_values: values,
            ..Diagnostics::default()
        }
    }

    /// Any decoupling filter with unit sensitivity: the first branch with a nonzero component.
    pub fn feasible_filter(&self) -> Result<SynthesisResult> {
        self.any_feasible()?;
        let j = self.feasible.iter().position(|&b| b).expect("checked");
        let c = self.sens_col(j);
        let y = &c / c.norm_squared();
        let (filter, nbar, scale) = self.finish(&y);
        let values = self.feasible.iter().map(|&b| b.then_some(1.0)).collect();
        Ok(SynthesisResult {
            perspective: Perspective::Feasible,
            filter,
            gamma_star: None,
            stage1_gamma: None,
            active_branch: Branch {
                column: j,
                sign: Sign::Plus,
            },
            certificate: None,
            diagnostics: self.diagnostics(&nbar, scale, values),
        })
    }

    /// Box LP `max c^T y` subject to `||Z y||_inf <= 1` for one sensitivity vector.
    fn box_lp(&self, basis: &DMatrix<f64>, c: &DVector<f64>, socs: &[DMatrix<f64>]) -> Result<BranchSolution> {
        let zb = &self.z * basis;
        let k = basis.ncols();
        let mut prog = ConeProgram::new(-c);
        let mut a = DMatrix::zeros(2 * zb.nrows(), k);
        a.view_mut((0, 0), zb.shape()).copy_from(&zb);
        a.view_mut((zb.nrows(), 0), zb.shape()).copy_from(&(-&zb));
        prog.push(Cone::NonNegative, a, DVector::from_element(2 * zb.nrows(), 1.0));
        for l in socs {
            let r = l.ncols();
            let mut a = DMatrix::zeros(r + 1, k);
            a.view_mut((1, 0), (r, k)).copy_from(&(-l.transpose()));
            let mut b = DVector::zeros(r + 1);
            b[0] = 1.0;
            prog.push(Cone::SecondOrder, a, b);
        }
        match prog.solve()? {
            ConeOutcome::Solved(s) => Ok(Some((basis * &s.x, -s.objective))),
            ConeOutcome::Infeasible => Ok(None),
        }
    }

    /// Approach I: the decoupling filter with the largest sensitivity inside the unit box.
    pub fn max_sensitivity_filter(&self) -> Result<SynthesisResult> {
        self.any_feasible()?;
        let identity = DMatrix::identity(self.z.ncols(), self.z.ncols());
        let results: Vec<Result<BranchSolution>> = (0..self.sens.ncols())
            .into_par_iter()
            .map(|j| {
                if !self.feasible[j] {
                    return Ok(None);
                }
                self.box_lp(&identity, &self.sens_col(j), &[])
            })
            .collect();
        let mut sols = Vec::with_capacity(results.len());
        for r in results {
            sols.push(r?);
        }
        let values: Vec<Option<f64>> = sols.iter().map(|s| s.as_ref().map(|(_, v)| *v)).collect();
        let j = pick_best(&values, true).ok_or(Error::AllBranchesInfeasible {
            branches: 2 * self.sens.ncols(),
        })?;
        let (y, obj) = sols[j].clone().expect("picked a solved branch");
        let (filter, nbar, scale) = self.finish(&y);
        let mut diagnostics = self.diagnostics(&nbar, scale, values);
        diagnostics.stage2_objective = Some(obj);
        Ok(SynthesisResult {
            perspective: Perspective::MaxSensitivity,
            filter,
            gamma_star: None,
            stage1_gamma: None,
            active_branch: Branch {
                column: j,
                sign: Sign::Plus,
            },
            certificate: None,
            diagnostics,
        })
    }

    /// `min y^T Qt y` subject to `c_j^T y >= 1`, solved in closed form per branch.
    fn stage1_quadratic(&self, qt: &DMatrix<f64>) -> Result<Stage1> {
        self.any_feasible()?;
        let q = qt.nrows();
        let eig = SymmetricEigen::new(symmetrize(qt));
        let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let tol = EIG_TOL * lmax;
        let null: Vec<usize> = (0..q).filter(|&i| lmax == 0.0 || eig.eigenvalues[i] <= tol).collect();
        let range: Vec<usize> = (0..q).filter(|&i| lmax > 0.0 && eig.eigenvalues[i] > tol).collect();
        let v0 = eig.eigenvectors.select_columns(&null);
        let vr = eig.eigenvectors.select_columns(&range);
        let lam: Vec<f64> = range.iter().map(|&i| eig.eigenvalues[i]).collect();

        let mut ys = Vec::with_capacity(self.sens.ncols());
        let mut values = Vec::with_capacity(self.sens.ncols());
        let mut decoupled = Vec::with_capacity(self.sens.ncols());
        for j in 0..self.sens.ncols() {
            if !self.feasible[j] {
                ys.push(None);
                values.push(None);
                decoupled.push(false);
                continue;
            }
            let c = self.sens_col(j);
            let c0 = v0.transpose() * &c;
            if c0.norm() > BRANCH_TOL * c.norm() {
                ys.push(Some(&v0 * &c0 / c0.norm_squared()));
                values.push(Some(0.0));
                decoupled.push(true);
                continue;
            }
            let cr = vr.transpose() * &c;
            let denom: f64 = cr.iter().zip(&lam).map(|(c, l)| c * c / l).sum();
            if !(denom > 0.0) {
                ys.push(None);
                values.push(None);
                decoupled.push(false);
                continue;
            }
            let value = 1.0 / denom;
            let w = DVector::from_iterator(cr.len(), cr.iter().zip(&lam).map(|(c, l)| c / l * value));
            ys.push(Some(&vr * w));
            values.push(Some(value));
            decoupled.push(false);
        }
        let j = pick_best(&values, false).ok_or(Error::AllBranchesInfeasible {
            branches: 2 * self.sens.ncols(),
        })?;
        Ok(Stage1 {
            column: j,
            y: ys[j].clone().expect("picked"),
            decoupled: decoupled[j],
            values,
        })
    }

    /// Minimizes `nbar Q nbar^T` over decoupling filters with `||nbar fbar||_inf >= 1`.
    pub fn robust_filter_qp(&self, q: &DMatrix<f64>) -> Result<SynthesisResult> {
        self.check_matrix(q)?;
        let qt = self.reduce(q);
        let s1 = self.stage1_quadratic(&qt)?;
        let (filter, nbar, scale) = self.finish(&s1.y);
        let gamma = quad_form(q, &nbar);
        let mut diagnostics = self.diagnostics(&nbar, scale, s1.values);
        diagnostics.decoupled = s1.decoupled;
        diagnostics.stage1_value = Some(gamma);
        diagnostics.scenario_count = 1;
        Ok(SynthesisResult {
            perspective: Perspective::Robust,
            filter,
            gamma_star: Some(gamma),
            stage1_gamma: Some(gamma),
            active_branch: Branch {
                column: s1.column,
                sign: Sign::Plus,
            },
            certificate: None,
            diagnostics,
        })
    }

    fn payoff(reduced: &[DMatrix<f64>], qbar: &DMatrix<f64>, y: &DVector<f64>, agg: &Aggregate) -> f64 {
        match agg {
            Aggregate::Average => quad_form(qbar, y),
            Aggregate::Worst => reduced.iter().map(|q| quad_form(q, y)).fold(0.0, f64::max),
        }
    }

    /// Stage one of the chance program: `min t` with `||L_i^T y|| <= t`, `c_j^T y >= 1`.
    fn stage1_worst_case(
        &self,
        factors: &[DMatrix<f64>],
        reduced: &[DMatrix<f64>],
        qbar: &DMatrix<f64>,
    ) -> Result<Stage1> {
        self.any_feasible()?;
        let q = self.z.ncols();
        let results: Vec<Result<Option<DVector<f64>>>> = (0..self.sens.ncols())
            .into_par_iter()
            .map(|j| {
                if !self.feasible[j] {
                    return Ok(None);
                }
                let c = self.sens_col(j);
                let mut obj = DVector::zeros(q + 1);
                obj[q] = 1.0;
                let mut prog = ConeProgram::new(obj);
                let mut a = DMatrix::zeros(1, q + 1);
                a.view_mut((0, 0), (1, q)).copy_from(&(-c.transpose()));
                prog.push(Cone::NonNegative, a, DVector::from_element(1, -1.0));
                for l in factors {
                    let r = l.ncols();
                    let mut a = DMatrix::zeros(r + 1, q + 1);
                    a[(0, q)] = -1.0;
                    a.view_mut((1, 0), (r, q)).copy_from(&(-l.transpose()));
                    prog.push(Cone::SecondOrder, a, DVector::zeros(r + 1));
                }
                match prog.solve()? {
                    ConeOutcome::Solved(s) => {
                        let y = s.x.rows(0, q).into_owned();
                        let cy = c.dot(&y);
                        Ok((cy > 0.0).then(|| y / cy))
                    }
                    ConeOutcome::Infeasible => Ok(None),
                }
            })
            .collect();
        let mut ys = Vec::with_capacity(results.len());
        for r in results {
            ys.push(r?);
        }
        let values: Vec<Option<f64>> = ys
            .iter()
            .map(|y| y.as_ref().map(|y| Self::payoff(reduced, qbar, y, &Aggregate::Worst)))
            .collect();
        let j = pick_best(&values, false).ok_or(Error::AllBranchesInfeasible {
            branches: 2 * self.sens.ncols(),
        })?;
        Ok(Stage1 {
            column: j,
            y: ys[j].clone().expect("picked"),
            decoupled: false,
            values,
        })
    }

    fn two_stage(&self, scenarios: &[DMatrix<f64>], agg: Aggregate) -> Result<SynthesisResult> {
        if scenarios.is_empty() {
            return arg_err("scenario set is empty");
        }
        for q in scenarios {
            self.check_matrix(q)?;
        }
        let reduced: Vec<DMatrix<f64>> = scenarios.par_iter().map(|q| self.reduce(q)).collect();
        let mut qbar = DMatrix::zeros(self.z.ncols(), self.z.ncols());
        for q in &reduced {
            qbar += q;
        }
        qbar /= reduced.len() as f64;

        // A direction in the common null space decouples every scenario exactly.
        let common = psd_split(&qbar, EIG_TOL, 0.0);
        let decoupled = (0..self.sens.ncols()).any(|j| {
            self.feasible[j] && {
                let c = self.sens_col(j);
                (common.null_basis.transpose() * &c).norm() > BRANCH_TOL * c.norm()
            }
        });

        let scale = reduced
            .iter()
            .map(|q| q.iter().fold(0.0_f64, |a, v| a.max(v.abs())))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let s1 = match (&agg, decoupled) {
            (Aggregate::Average, _) | (Aggregate::Worst, true) => self.stage1_quadratic(&qbar)?,
            (Aggregate::Worst, false) => {
                let factors: Vec<DMatrix<f64>> = reduced
                    .iter()
                    .map(|q| psd_split(&(q / scale), EIG_TOL, 0.0).factor)
                    .filter(|f| f.ncols() > 0)
                    .collect();
                self.stage1_worst_case(&factors, &reduced, &qbar)?
            }
        };
        let gamma1 = Self::payoff(&reduced, &qbar, &s1.y, &agg);
        let nbar1_inf = inf_norm(&(&self.z * &s1.y));

        // Stage two: most sensitive filter that keeps the stage one payoff.
        let stage2: Result<Vec<BranchSolution>> = if decoupled {
            let basis = &common.null_basis;
            (0..self.sens.ncols())
                .into_par_iter()
                .map(|j| {
                    if !self.feasible[j] {
                        return Ok(None);
                    }
                    let c = basis.transpose() * self.sens_col(j);
                    if c.norm() <= BRANCH_TOL * self.sens_col(j).norm() {
                        return Ok(None);
                    }
                    self.box_lp(basis, &c, &[])
                })
                .collect()
        } else {
            let radius = gamma1.sqrt() / nbar1_inf;
            let socs: Vec<DMatrix<f64>> = match agg {
                Aggregate::Average => vec![psd_split(&qbar, EIG_TOL, 0.0).factor / radius],
                Aggregate::Worst => reduced
                    .iter()
                    .map(|q| psd_split(q, EIG_TOL, 0.0).factor / radius)
                    .filter(|f| f.ncols() > 0)
                    .collect(),
            };
            let identity = DMatrix::identity(self.z.ncols(), self.z.ncols());
            (0..self.sens.ncols())
                .into_par_iter()
                .map(|j| {
                    if !self.feasible[j] {
                        return Ok(None);
                    }
                    self.box_lp(&identity, &self.sens_col(j), &socs)
                })
                .collect()
        };

        let mut fallback = false;
        let mut stage2_objective = None;
        let mut y_final = s1.y.clone();
        let mut column = s1.column;
        match stage2 {
            Ok(sols) => {
                let values: Vec<Option<f64>> = sols.iter().map(|s| s.as_ref().map(|(_, v)| *v)).collect();
                match pick_best(&values, true) {
                    Some(j) => {
                        let (y2, obj) = sols[j].clone().expect("picked");
                        let (_, nbar2, _) = self.finish(&y2);
                        let y2n = self.z.transpose() * &nbar2;
                        let gamma2 = Self::payoff(&reduced, &qbar, &y2n, &agg);
                        if decoupled || gamma2 <= gamma1 * (1.0 + CERT_TOL) {
                            y_final = y2;
                            column = j;
                            stage2_objective = Some(obj);
                        } else {
                            fallback = true;
                        }
                    }
                    None => fallback = true,
                }
            }
            Err(_) => fallback = true,
        }

        let (filter, nbar, sscale) = self.finish(&y_final);
        let y_norm = self.z.transpose() * &nbar;
        let gamma_final = Self::payoff(&reduced, &qbar, &y_norm, &agg);
        // With exact decoupling both stage values are rounding noise around zero.
        let gamma_star = if decoupled { gamma1.max(gamma_final) } else { gamma1 };
        let mut diagnostics = self.diagnostics(&nbar, sscale, s1.values);
        diagnostics.scenario_count = scenarios.len();
        diagnostics.decoupled = decoupled;
        diagnostics.fallback = fallback;
        diagnostics.stage1_value = Some(gamma1);
        diagnostics.stage2_objective = stage2_objective;
        Ok(SynthesisResult {
            perspective: match agg {
                Aggregate::Average => Perspective::Average,
                Aggregate::Worst => Perspective::Chance,
            },
            filter,
            gamma_star: Some(gamma_star),
            stage1_gamma: Some(gamma1),
            active_branch: Branch {
                column,
                sign: Sign::Plus,
            },
            certificate: None,
            diagnostics,
        })
    }

    /// Two-stage average-performance program.
    pub fn two_stage_average(&self, scenarios: &[DMatrix<f64>], payoff: Payoff) -> Result<SynthesisResult> {
        match payoff {
            Payoff::Quadratic => self.two_stage(scenarios, Aggregate::Average),
            Payoff::Linear => Err(Error::UnsupportedPayoff("linear".into())),
        }
    }

    /// Two-stage worst-case (scenario) program.
    pub fn two_stage_chance(&self, scenarios: &[DMatrix<f64>]) -> Result<SynthesisResult> {
        self.two_stage(scenarios, Aggregate::Worst)
    }

    /// Stage one of the average program posed with one epigraph cone per
    /// scenario instead of the pre-averaged matrix. Returns the optimal value.
    pub fn average_stage1_epigraph(&self, scenarios: &[DMatrix<f64>]) -> Result<f64> {
        if scenarios.is_empty() {
            return arg_err("scenario set is empty");
        }
        self.any_feasible()?;
        let reduced: Vec<DMatrix<f64>> = scenarios.iter().map(|q| self.reduce(q)).collect();
        let scale = reduced
            .iter()
            .map(|q| q.iter().fold(0.0_f64, |a, v| a.max(v.abs())))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let factors: Vec<DMatrix<f64>> = reduced
            .iter()
            .map(|q| psd_split(&(q / scale), EIG_TOL, 0.0).factor)
            .collect();
        let q = self.z.ncols();
        let n = factors.len();
        let nv = q + n;
        let values: Vec<Option<f64>> = (0..self.sens.ncols())
            .into_par_iter()
            .map(|j| -> Result<Option<f64>> {
                if !self.feasible[j] {
                    return Ok(None);
                }
                let c = self.sens_col(j);
                let mut obj = DVector::zeros(nv);
                for i in 0..n {
                    obj[q + i] = 1.0 / n as f64;
                }
                let mut prog = ConeProgram::new(obj);
                let mut a = DMatrix::zeros(1, nv);
                a.view_mut((0, 0), (1, q)).copy_from(&(-c.transpose()));
                prog.push(Cone::NonNegative, a, DVector::from_element(1, -1.0));
                for (i, l) in factors.iter().enumerate() {
                    let r = l.ncols();
                    let mut a = DMatrix::zeros(r + 2, nv);
                    let mut b = DVector::zeros(r + 2);
                    a[(0, q + i)] = -1.0;
                    b[0] = 1.0;
                    a[(1, q + i)] = -1.0;
                    b[1] = -1.0;
                    a.view_mut((2, 0), (r, q)).copy_from(&(l.transpose() * -2.0));
                    prog.push(Cone::SecondOrder, a, b);
                }
                match prog.solve()? {
                    ConeOutcome::Solved(s) => Ok(Some(s.objective * scale)),
                    ConeOutcome::Infeasible => Ok(None),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        values
            .iter()
            .flatten()
            .copied()
            .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v))))
            .ok_or(Error::AllBranchesInfeasible {
                branches: 2 * self.sens.ncols(),
            })
    }
}

/// Any decoupling filter of numerator degree `d_n`.
pub fn feasible_filter(model: &NonlinearDaeModel, d_n: usize, a: &PolyMatrix) -> Result<SynthesisResult> {
    SynthesisProblem::from_model(model, d_n, a)?.feasible_filter()
}

/// Approach I.
pub fn max_sensitivity_filter(model: &NonlinearDaeModel, d_n: usize, a: &PolyMatrix) -> Result<SynthesisResult> {
    SynthesisProblem::from_model(model, d_n, a)?.max_sensitivity_filter()
}

pub fn robust_filter_qp(
    model: &NonlinearDaeModel,
    d_n: usize,
    a: &PolyMatrix,
    q: &DMatrix<f64>,
) -> Result<SynthesisResult> {
    SynthesisProblem::from_model(model, d_n, a)?.robust_filter_qp(q)
}

pub fn two_stage_average(
    model: &NonlinearDaeModel,
    d_n: usize,
    a: &PolyMatrix,
    scenarios: &[DMatrix<f64>],
    payoff: Payoff,
) -> Result<SynthesisResult> {
    SynthesisProblem::from_model(model, d_n, a)?.two_stage_average(scenarios, payoff)
}

pub fn two_stage_chance(
    model: &NonlinearDaeModel,
    d_n: usize,
    a: &PolyMatrix,
    scenarios: &[DMatrix<f64>],
) -> Result<SynthesisResult> {
    SynthesisProblem::from_model(model, d_n, a)?.two_stage_chance(scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_break_prefers_lowest_index() {
        let v = vec![None, Some(1.0), Some(1.0 + 1e-12), Some(0.5)];
        assert_eq!(pick_best(&v, true), Some(1));
        assert_eq!(pick_best(&v, false), Some(3));
        assert_eq!(pick_best(&[None, None], true), None);
    }

    #[test]
    fn branch_order() {
        let h = PolyMatrix::constant(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        let f = PolyMatrix::constant(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        let st = stack_system(&h, &f, 1).unwrap();
        let b = lp_branches(&st);
        assert_eq!(b.len(), 4);
        assert_eq!(
            b[0],
            Branch {
                column: 0,
                sign: Sign::Plus
            }
        );
        assert_eq!(
            b[1],
            Branch {
                column: 0,
                sign: Sign::Minus
            }
        );
        assert_eq!(
            b[2],
            Branch {
                column: 1,
                sign: Sign::Plus
            }
        );
    }

    #[test]
    fn sample_size_matches_hand_value() {
        let p = ScenarioParams {
            epsilon: 0.1,
            beta: 0.01,
            n_r: 4,
            n_f: 1,
            d_n: 3,
            d_f: 0,
        };
        // (2 / 0.1) (ln 400 + 17) = 459.83...
        let expect = (20.0 * ((400.0_f64).ln() + 17.0)).ceil() as u64;
        assert_eq!(sample_complexity(&p).unwrap(), expect);
        assert_eq!(expect, 460);
    }
}
