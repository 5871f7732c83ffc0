//! Coupled algebraic Riccati equations of a Markov jump linear system
//!
//! ```text
//! A_i' P_i + P_i A_i - P_i B_i R^-1 B_i' P_i + sum_j pi_ij P_j + Q = 0
//! ```
//!
//! solved by an outer fixed point over the coupling term with an inner
//! Newton–Kleinman iteration per mode, plus the pairwise gain-spread
//! condition under which the certainty-equivalent law stabilizes the loop.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, serde_matrix_vec};
use crate::markov_chain::GeneratorMatrix;
use crate::model::{CostSpec, ModeSet, ModelError};

/// Candidate matrices are accepted when the inequality slack is at most this.
pub const CANDIDATE_TOL: f64 = 1e-9;

const NEWTON_MAX_ITER: usize = 60;

/// `(P_i, K_i)` from one decoupled solve.
type ModeUpdate = Result<(DMatrix<f64>, DMatrix<f64>), RiccatiError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error("matrix is not Hurwitz (spectral abscissa {0:e})")]
    NotHurwitz(f64),
    #[error("Lyapunov operator is singular")]
    SingularLyapunov,
    #[error("no stabilizing initial gain found for mode {mode}")]
    NoStabilizingInit { mode: usize },
    #[error("no convergence after {iterations} outer iterations (max residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Solves `A' X + X A + S = 0` for Hurwitz `A` by a Kronecker-product
/// linear solve.
pub fn solve_lyapunov(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
    let n = a.nrows();
    if !a.is_square() || s.shape() != (n, n) {
        return Err(RiccatiError::DimensionMismatch(format!(
            "A is {}, S is {}",
            crate::model::dims(a),
            crate::model::dims(s)
        )));
    }
    let abscissa = linalg::spectral_abscissa(a);
    if abscissa.is_nan() || abscissa >= 0.0 {
        return Err(RiccatiError::NotHurwitz(abscissa));
    }
    lyapunov_kron(a, s)
}

/// Kronecker solve without the eigenvalue pre-check.
fn lyapunov_kron(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
    let n = a.nrows();
    let at = a.transpose();
    // Column-major vec: vec(A'X) = (I ⊗ A') vec X, vec(XA) = (A' ⊗ I) vec X.
    let mut op = DMatrix::zeros(n * n, n * n);
    for col in 0..n {
        for row in 0..n {
            let r = col * n + row;
            for k in 0..n {
                op[(r, col * n + k)] += at[(row, k)];
                op[(r, k * n + row)] += at[(col, k)];
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(n * n, s.iter().map(|v| -v));
    let lu = op.lu();
    let mut x = lu.solve(&rhs).ok_or(RiccatiError::SingularLyapunov)?;
    // One step of iterative refinement.
    let resid = &rhs - lu_apply(a, &x, n);
    if let Some(dx) = lu.solve(&resid) {
        x += dx;
    }
    Ok(linalg::symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

fn lu_apply(a: &DMatrix<f64>, x: &nalgebra::DVector<f64>, n: usize) -> nalgebra::DVector<f64> {
    let xm = DMatrix::from_column_slice(n, n, x.as_slice());
    let y = a.transpose() * &xm + &xm * a;
    nalgebra::DVector::from_column_slice(y.as_slice())
}

/// Residual of the single-mode equation `A'P + PA - P S P + Q`, with
/// `S = B R^-1 B'`.
fn are_residual(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p + p * a - p * s * p + q
}

/// Newton–Kleinman from a stabilizing gain `k` (d x n). Returns `(P, K)`.
fn newton_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    mut k: DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let s = b * r_inv * b.transpose();
    let mut p_prev: Option<DMatrix<f64>> = None;
    for _ in 0..NEWTON_MAX_ITER {
        let closed = a - b * &k;
        if !linalg::is_hurwitz(&closed) {
            return None;
        }
        let weight = q + k.transpose() * r * &k;
        let p = lyapunov_kron(&closed, &weight).ok()?;
        if !linalg::all_finite(&p) {
            return None;
        }
        k = r_inv * b.transpose() * &p;
        let scale = 1.0 + p.amax();
        if let Some(prev) = &p_prev {
            let step = (&p - prev).amax();
            if step <= 1e-15 * scale {
                return Some((p, k));
            }
        }
        let resid = linalg::symmetrize(&are_residual(a, &s, q, &p)).amax();
        if resid <= 1e-14 * scale * (1.0 + q.amax()) {
            return Some((p, k));
        }
        p_prev = Some(p);
    }
    let p = p_prev?;
    let resid = linalg::symmetrize(&are_residual(a, &s, q, &p)).amax();
    (resid <= 1e-9 * (1.0 + p.amax())).then_some((p, k))
}

/// Stabilizing solution of one ARE. If `warm` does not stabilize `A`, a
/// shifted problem `A - sigma I` (stabilized by the zero gain) is solved
/// and `sigma` is walked back to zero, warm-starting each solve.
pub fn solve_are(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    warm: Option<&DMatrix<f64>>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let zero_gain = DMatrix::zeros(b.ncols(), n);
    if let Some(k) = warm {
        if linalg::is_hurwitz(&(a - b * k)) {
            if let Some(sol) = newton_kleinman(a, b, q, r, r_inv, k.clone()) {
                return Some(sol);
            }
        }
    }
    if linalg::is_hurwitz(a) {
        return newton_kleinman(a, b, q, r, r_inv, zero_gain);
    }
    let identity = DMatrix::<f64>::identity(n, n);
    let sigma0 = linalg::spectral_abscissa(a).max(0.0) + 1.0;
    let mut sigma = sigma0;
    let (_, mut k) = newton_kleinman(&(a - &identity * sigma), b, q, r, r_inv, zero_gain)?;
    let mut step = sigma;
    while sigma > 0.0 {
        let target = (sigma - step).max(0.0);
        let shifted = a - &identity * target;
        let attempt = if linalg::is_hurwitz(&(&shifted - b * &k)) {
            newton_kleinman(&shifted, b, q, r, r_inv, k.clone())
        } else {
            None
        };
        match attempt {
            Some((p, k_new)) => {
                if target == 0.0 {
                    return Some((p, k_new));
                }
                sigma = target;
                k = k_new;
                step = (step * 2.0).min(sigma);
            }
            None => {
                step *= 0.5;
                if step < 1e-10 * sigma0 {
                    return None;
                }
            }
        }
    }
    None
}

/// The coupled solution `{P_i}` with per-mode residual spectral norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    #[serde(with = "serde_matrix_vec")]
    pub p: Vec<DMatrix<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl RiccatiSolution {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `sum_i tr(P_i)`.
    pub fn trace_sum(&self) -> f64 {
        self.p.iter().map(|p| p.trace()).sum()
    }
}

/// Left side of the coupled equation for mode `i` at candidate `{P_j}`.
pub fn coupled_lhs(
    modes: &ModeSet,
    cost: &CostSpec,
    gen: &GeneratorMatrix,
    p: &[DMatrix<f64>],
    i: usize,
) -> DMatrix<f64> {
    let a = modes.a(i);
    let b = modes.b(i);
    let pb = &p[i] * b;
    let mut lhs = a.transpose() * &p[i] + &p[i] * a - &pb * cost.r_inv() * pb.transpose() + cost.q();
    for (j, pj) in p.iter().enumerate() {
        lhs += pj * gen.rate(i, j);
    }
    lhs
}

/// Spectral norms of the coupled-equation residuals.
pub fn coupled_residuals(modes: &ModeSet, cost: &CostSpec, gen: &GeneratorMatrix, p: &[DMatrix<f64>]) -> Vec<f64> {
    (0..modes.m())
        .map(|i| linalg::spectral_norm(&linalg::symmetrize(&coupled_lhs(modes, cost, gen, p, i))))
        .collect()
}

fn check_problem(modes: &ModeSet, cost: &CostSpec, gen: &GeneratorMatrix) -> Result<(), RiccatiError> {
    cost.check_dims(modes)?;
    if gen.num_modes() != modes.m() {
        return Err(RiccatiError::DimensionMismatch(format!(
            "generator has {} modes, mode set has {}",
            gen.num_modes(),
            modes.m()
        )));
    }
    Ok(())
}

/// Outer fixed point: mode `i` sees drift `A_i + (pi_ii/2) I` and weight
/// `Q + sum_{j != i} pi_ij P_j` from the previous iterate; each decoupled
/// ARE is solved by Newton–Kleinman.
pub fn solve_coupled_riccati(
    modes: &ModeSet,
    cost: &CostSpec,
    gen: &GeneratorMatrix,
    tol: f64,
    max_outer: usize,
) -> Result<RiccatiSolution, RiccatiError> {
    check_problem(modes, cost, gen)?;
    let (n, m) = (modes.n(), modes.m());
    let identity = DMatrix::<f64>::identity(n, n);
    let mut p: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); m];
    let mut gains: Vec<Option<DMatrix<f64>>> = vec![None; m];
    let mut residual = f64::INFINITY;
    for iteration in 0..=max_outer {
        let residuals = coupled_residuals(modes, cost, gen, &p);
        residual = residuals.iter().copied().fold(0.0, f64::max);
        if iteration > 0 && residual <= tol {
            return Ok(RiccatiSolution {
                p,
                residuals,
                iterations: iteration,
            });
        }
        if iteration == max_outer {
            break;
        }
        let updated: Vec<ModeUpdate> = (0..m)
            .into_par_iter()
            .map(|i| {
                let a_tilde = modes.a(i) + &identity * (0.5 * gen.rate(i, i));
                let mut q_tilde = cost.q().clone();
                for (j, pj) in p.iter().enumerate() {
                    if j != i {
                        q_tilde += pj * gen.rate(i, j);
                    }
                }
                solve_are(
                    &a_tilde,
                    modes.b(i),
                    &q_tilde,
                    cost.r(),
                    cost.r_inv(),
                    gains[i].as_ref(),
                )
                .map(|(pi, ki)| (linalg::symmetrize(&pi), ki))
                .ok_or(RiccatiError::NoStabilizingInit { mode: i })
            })
            .collect();
        for (i, res) in updated.into_iter().enumerate() {
            let (pi, ki) = res?;
            p[i] = pi;
            gains[i] = Some(ki);
        }
    }
    Err(RiccatiError::MaxIterations {
        iterations: max_outer,
        residual,
    })
}

/// Outcome of checking a candidate against the relaxed coupled inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateCheck {
    pub satisfied: bool,
    /// Largest eigenvalue over all modes of the inequality matrix.
    pub max_slack: f64,
}

/// Checks `A_i' P_i + P_i A_i - P_i B_i R^-1 B_i' P_i + sum_j pi_ij P_j + Q <= 0`
/// for every mode.
pub fn verify_candidate(
    modes: &ModeSet,
    cost: &CostSpec,
    gen: &GeneratorMatrix,
    candidate: &[DMatrix<f64>],
) -> Result<CandidateCheck, RiccatiError> {
    check_problem(modes, cost, gen)?;
    if candidate.len() != modes.m() {
        return Err(RiccatiError::DimensionMismatch(format!(
            "{} candidate matrices for {} modes",
            candidate.len(),
            modes.m()
        )));
    }
    let n = modes.n();
    if let Some((i, c)) = candidate.iter().enumerate().find(|(_, c)| c.shape() != (n, n)) {
        return Err(RiccatiError::DimensionMismatch(format!(
            "candidate {i} is {}, expected {n}x{n}",
            crate::model::dims(c)
        )));
    }
    let max_slack = (0..modes.m())
        .map(|i| linalg::max_sym_eigenvalue(&coupled_lhs(modes, cost, gen, candidate, i)))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CandidateCheck {
        satisfied: max_slack <= CANDIDATE_TOL,
        max_slack,
    })
}

/// Pairwise gain-spread condition on a Riccati solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `[i][j]`: smallest eigenvalue of `Q - (P_iB_i - P_jB_j) R^-1 (P_iB_i - P_jB_j)' / 2`.
    pub pairwise_min_eig: Vec<Vec<f64>>,
    pub satisfied: bool,
    /// `sum_i tr(P_i)`.
    pub gamma: f64,
}

pub fn pairwise_matrix(sol: &RiccatiSolution, modes: &ModeSet, cost: &CostSpec, i: usize, j: usize) -> DMatrix<f64> {
    let diff = &sol.p[i] * modes.b(i) - &sol.p[j] * modes.b(j);
    cost.q() - &diff * cost.r_inv() * diff.transpose() * 0.5
}

pub fn check_pairwise_condition(sol: &RiccatiSolution, modes: &ModeSet, cost: &CostSpec) -> ConditionReport {
    let m = modes.m();
    let pairwise_min_eig: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| linalg::min_sym_eigenvalue(&pairwise_matrix(sol, modes, cost, i, j)))
                .collect()
        })
        .collect();
    let satisfied = pairwise_min_eig.iter().flatten().all(|&v| v > 0.0);
    ConditionReport {
        pairwise_min_eig,
        satisfied,
        gamma: sol.trace_sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_problem(a: &[f64], b: &[f64], q: f64, r: f64) -> (ModeSet, CostSpec) {
        let modes = ModeSet::new(
            a.iter().map(|&v| scalar(v)).collect(),
            b.iter().map(|&v| scalar(v)).collect(),
        )
        .unwrap();
        (modes, CostSpec::new(scalar(q), scalar(r)).unwrap())
    }

    #[test]
    fn lyapunov_scalar() {
        let x = solve_lyapunov(&scalar(-1.0), &scalar(2.0)).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let x = solve_lyapunov(&a, &DMatrix::identity(2, 2)).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((x[(1, 1)] - 0.25).abs() < 1e-14);
        assert!(x[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -2.0]);
        assert!(matches!(
            solve_lyapunov(&a, &DMatrix::identity(2, 2)),
            Err(RiccatiError::NotHurwitz(_))
        ));
    }

    #[test]
    fn scalar_are_root() {
        // -p^2 + 1 = 0.
        let (modes, cost) = scalar_problem(&[0.0], &[1.0], 1.0, 1.0);
        let gen = GeneratorMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        let sol = solve_coupled_riccati(&modes, &cost, &gen, 1e-12, 50).unwrap();
        assert!((sol.p[0][(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_scalar_needs_continuation() {
        // 2ap - p^2 + 1 = 0 with a = 3: p = a + sqrt(a^2 + 1).
        let (modes, cost) = scalar_problem(&[3.0], &[1.0], 1.0, 1.0);
        let gen = GeneratorMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        let sol = solve_coupled_riccati(&modes, &cost, &gen, 1e-12, 50).unwrap();
        assert!((sol.p[0][(0, 0)] - (3.0 + 10.0_f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn unstabilizable_mode_is_reported() {
        let (modes, cost) = scalar_problem(&[1.0], &[0.0], 1.0, 1.0);
        let gen = GeneratorMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            solve_coupled_riccati(&modes, &cost, &gen, 1e-10, 20),
            Err(RiccatiError::NoStabilizingInit { mode: 0 })
        ));
    }

    #[test]
    fn max_iterations_reports_residual() {
        let (modes, cost) = scalar_problem(&[0.5, -1.0], &[1.0, 1.0], 1.0, 1.0);
        let gen = GeneratorMatrix::two_state(1.0, 1.0).unwrap();
        match solve_coupled_riccati(&modes, &cost, &gen, 1e-14, 1) {
            Err(RiccatiError::MaxIterations {
                iterations: 1,
                residual,
            }) => assert!(residual > 1e-14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_candidate_violates_with_q_slack() {
        let (modes, cost) = scalar_problem(&[0.5, -1.0], &[1.0, 1.0], 2.0, 1.0);
        let gen = GeneratorMatrix::two_state(1.0, 1.0).unwrap();
        let zero = vec![scalar(0.0), scalar(0.0)];
        let check = verify_candidate(&modes, &cost, &gen, &zero).unwrap();
        assert!(!check.satisfied);
        assert!((check.max_slack - 2.0).abs() < 1e-14);
        assert!(matches!(
            verify_candidate(&modes, &cost, &gen, &zero[..1]),
            Err(RiccatiError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn diagonal_pairs_reduce_to_q() {
        let (modes, cost) = scalar_problem(&[0.5, -1.0], &[1.0, 1.0], 1.5, 1.0);
        let gen = GeneratorMatrix::two_state(1.0, 1.0).unwrap();
        let sol = solve_coupled_riccati(&modes, &cost, &gen, 1e-12, 200).unwrap();
        let rep = check_pairwise_condition(&sol, &modes, &cost);
        assert_eq!(rep.pairwise_min_eig[0][0], 1.5);
        assert_eq!(rep.pairwise_min_eig[1][1], 1.5);
        assert_eq!(rep.gamma, sol.p[0].trace() + sol.p[1].trace());
    }
}
