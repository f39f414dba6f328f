//! Certainty-equivalence LQG: a discounted LQR gain applied to the EKF mean.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::filter::InformationState;
use crate::linalg::{eigenvalue_moduli, spd_solve, symmetrize};

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// Cost-to-go matrix.
    pub p: DMatrix<f64>,
    /// Feedback gain with the `u = K x` convention.
    pub k: DMatrix<f64>,
    /// Max-norm gap between the last two iterates.
    pub residual: f64,
    pub iterations: usize,
}

pub struct RiccatiProblem<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub q: &'a DMatrix<f64>,
    pub r: &'a DMatrix<f64>,
    pub gamma: f64,
}

impl RiccatiProblem<'_> {
    fn check(&self) -> Result<()> {
        let n = self.a.nrows();
        check_dim("A columns", n, self.a.ncols())?;
        check_dim("B rows", n, self.b.nrows())?;
        check_dim("Q rows", n, self.q.nrows())?;
        check_dim("Q columns", n, self.q.ncols())?;
        check_dim("R rows", self.b.ncols(), self.r.nrows())?;
        check_dim("R columns", self.b.ncols(), self.r.ncols())?;
        Ok(())
    }

    /// `K = -γ (R + γBᵀPB)⁻¹ BᵀPA`.
    pub fn gain(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let bt_p = self.b.transpose() * p;
        let s = symmetrize(&(self.r + &bt_p * self.b * self.gamma));
        let rhs = &bt_p * self.a * self.gamma;
        Ok(-spd_solve(&s, &rhs)?)
    }

    /// One application of the discounted Riccati operator.
    pub fn apply(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = self.gain(p)?;
        let at_p_b = self.a.transpose() * p * self.b;
        // γ²AᵀPB(R+γBᵀPB)⁻¹BᵀPA == -γ AᵀPB K
        let next = self.q + self.a.transpose() * p * self.a * self.gamma + at_p_b * &k * self.gamma;
        Ok(symmetrize(&next))
    }
}

/// Fixed-point iteration of the discounted Riccati equation from `P₀ = Q`.
pub fn solve_discounted_riccati(
    problem: &RiccatiProblem<'_>,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    problem.check()?;
    if !(tol > 0.0) {
        return Err(Error::Config("Riccati tolerance must be positive".into()));
    }
    if !(problem.gamma > 0.0 && problem.gamma <= 1.0) {
        return Err(Error::Config(format!("discount {} not in (0, 1]", problem.gamma)));
    }
    let mut p = problem.q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = problem.apply(&p)?;
        residual = (&next - &p).amax();
        p = next;
        if !residual.is_finite() {
            return Err(Error::numerical("Riccati iteration diverged"));
        }
        if residual < tol {
            let k = problem.gain(&p)?;
            return Ok(RiccatiSolution {
                p,
                k,
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
    })
}

impl RiccatiSolution {
    /// Eigenvalue moduli of the discounted closed loop `√γ (A + BK)`.
    pub fn closed_loop_moduli(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64) -> Vec<f64> {
        let cl = (a + b * &self.k) * gamma.sqrt();
        eigenvalue_moduli(&cl)
    }
}

/// `clamp(K x̂)`; the covariance is ignored.
pub fn lqg_policy(
    sol: &RiccatiSolution,
    state: &InformationState,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    let u = &sol.k * &state.mean;
    DVector::from_iterator(
        u.len(),
        u.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn no_dynamics_means_no_feedback() {
        let (a, b, q, r) = (scalar(0.0), scalar(1.0), scalar(1.0), scalar(1.0));
        for gamma in [0.3, 0.95] {
            let pr = RiccatiProblem { a: &a, b: &b, q: &q, r: &r, gamma };
            let sol = solve_discounted_riccati(&pr, 1e-12, 100).unwrap();
            assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-15);
            assert!(sol.k[(0, 0)].abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_golden_ratio() {
        let (a, b, q, r) = (scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0));
        // P = 1 + P - P²/(1+P)  =>  P² - P - 1 = 0
        let pr = RiccatiProblem { a: &a, b: &b, q: &q, r: &r, gamma: 1.0 };
        let sol = solve_discounted_riccati(&pr, 1e-13, 10_000).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - golden).abs() < 1e-10);
        assert!((sol.k[(0, 0)] + golden / (1.0 + golden)).abs() < 1e-10);
    }

    #[test]
    fn reports_non_convergence() {
        let (a, b, q, r) = (scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0));
        let pr = RiccatiProblem { a: &a, b: &b, q: &q, r: &r, gamma: 0.9 };
        let err = solve_discounted_riccati(&pr, 1e-14, 2).unwrap_err();
        assert!(matches!(err, Error::Convergence { iterations: 2, .. }));
    }

    #[test]
    fn lqg_saturates_and_ignores_covariance() {
        let sol = RiccatiSolution {
            p: DMatrix::identity(2, 2),
            k: DMatrix::from_row_slice(1, 2, &[-1.0, -2.0]),
            residual: 0.0,
            iterations: 1,
        };
        let lo = DVector::from_element(1, -5.0);
        let hi = DVector::from_element(1, 5.0);
        let s0 = InformationState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(lqg_policy(&sol, &s0, &lo, &hi)[0], 0.0);
        let s1 = InformationState::new(DVector::from_vec(vec![-3.0, -2.0]), DMatrix::identity(2, 2))
            .unwrap();
        assert_eq!(lqg_policy(&sol, &s1, &lo, &hi)[0], 5.0);
        let mut s2 = s1.clone();
        s2.cov *= 40.0;
        assert_eq!(lqg_policy(&sol, &s1, &lo, &hi), lqg_policy(&sol, &s2, &lo, &hi));
    }
}
