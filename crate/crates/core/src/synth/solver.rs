//! Thin dense front end over the Clarabel interior point solver.
//!
//! Problems are stated as `minimize q^T x` subject to `A x + s = b`, `s` in a
//! product of cones, one block of rows per cone.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cone {
    NonNegative,
    SecondOrder,
}

#[derive(Debug, Default)]
pub(crate) struct ConeProgram {
    n: usize,
    q: Vec<f64>,
    blocks: Vec<(Cone, DMatrix<f64>, DVector<f64>)>,
}

#[derive(Debug, Clone)]
pub(crate) struct ConeSolution {
    pub x: DVector<f64>,
    pub objective: f64,
}

#[derive(Debug)]
pub(crate) enum ConeOutcome {
    Solved(ConeSolution),
    Infeasible,
}

impl ConeProgram {
    pub fn new(q: DVector<f64>) -> Self {
        Self {
            n: q.len(),
            q: q.iter().copied().collect(),
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, cone: Cone, a: DMatrix<f64>, b: DVector<f64>) {
        debug_assert_eq!(a.ncols(), self.n);
        debug_assert_eq!(a.nrows(), b.len());
        if a.nrows() > 0 {
            self.blocks.push((cone, a, b));
        }
    }

    pub fn solve(&self) -> Result<ConeOutcome> {
        let m: usize = self.blocks.iter().map(|(_, a, _)| a.nrows()).sum();
        let (mut ri, mut ci, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(m);
        let mut cones = Vec::with_capacity(self.blocks.len());
        let mut row0 = 0;
        for (cone, a, rhs) in &self.blocks {
            for j in 0..a.ncols() {
                for i in 0..a.nrows() {
                    let v = a[(i, j)];
                    if v != 0.0 {
                        ri.push(row0 + i);
                        ci.push(j);
                        vals.push(v);
                    }
                }
            }
            b.extend(rhs.iter().copied());
            cones.push(match cone {
                Cone::NonNegative => SupportedConeT::NonnegativeConeT(a.nrows()),
                Cone::SecondOrder => SupportedConeT::SecondOrderConeT(a.nrows()),
            });
            row0 += a.nrows();
        }
        let a = CscMatrix::new_from_triplets(m, self.n, ri, ci, vals);
        let p = CscMatrix::<f64>::zeros((self.n, self.n));
        let settings = DefaultSettings {
            verbose: false,
            max_iter: 300,
            tol_gap_abs: 1e-9,
            tol_gap_rel: 1e-9,
            tol_feas: 1e-9,
            max_threads: 1,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &self.q, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("setup: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(ConeOutcome::Solved(ConeSolution {
                x: DVector::from_vec(sol.x.clone()),
                objective: sol.obj_val,
            })),
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Ok(ConeOutcome::Infeasible),
            other => Err(Error::Solver(format!("{other:?}"))),
        }
    }
}
