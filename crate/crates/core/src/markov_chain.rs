//! The hidden continuous-time Markov chain: generator validation, stationary
//! law, transition matrices, exact path sampling and mixing-rate estimation.
//!
//! Transition matrices follow the row convention
//! `M(t)[i][j] = P(alpha(t) = j | alpha(0) = i)`, so `dM/dt = M Pi` and
//! `M(t) -> 1 nu'` for an irreducible chain.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, serde_matrix};

/// Tolerance on the input row sums before the diagonal is recomputed.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("generator must be a non-empty square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("generator entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("negative off-diagonal rate {value} at ({row}, {col})")]
    NegativeRate { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum:e}, beyond tolerance {ROW_SUM_TOL:e}")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("chain is not irreducible: {closed_classes} closed communicating classes")]
    NotIrreducible { closed_classes: usize },
    #[error("single-mode chain has no spectral gap")]
    SingleMode,
    #[error("mode index {index} out of range for {modes} modes")]
    InvalidMode { index: usize, modes: usize },
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error("transition matrix overflowed at t = {0}")]
    Overflow(f64),
}

/// Validated transition-rate matrix `Pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGenerator", into = "RawGenerator")]
pub struct GeneratorMatrix {
    rates: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGenerator(#[serde(with = "serde_matrix")] DMatrix<f64>);

impl TryFrom<RawGenerator> for GeneratorMatrix {
    type Error = ChainError;
    fn try_from(raw: RawGenerator) -> Result<Self, ChainError> {
        GeneratorMatrix::new(raw.0)
    }
}

impl From<GeneratorMatrix> for RawGenerator {
    fn from(g: GeneratorMatrix) -> Self {
        RawGenerator(g.rates)
    }
}

/// Stationary law `nu` with `Pi' nu = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    #[serde(with = "crate::linalg::serde_vector")]
    pub nu: DVector<f64>,
}

/// One exact sample of the chain on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPath {
    pub jump_times: Vec<f64>,
    /// `states[k]` is occupied on `[jump_times[k-1], jump_times[k])`.
    pub states: Vec<usize>,
    pub horizon: f64,
}

/// Exponential decay bound `sup|M(t) - 1 nu'| <= k exp(-lambda t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub lambda: f64,
    pub k: f64,
}

impl GeneratorMatrix {
    /// Validates a raw rate matrix. The diagonal is replaced by the negative
    /// sum of the off-diagonal rates in its row.
    pub fn new(raw: DMatrix<f64>) -> Result<Self, ChainError> {
        let (rows, cols) = raw.shape();
        if rows == 0 || rows != cols {
            return Err(ChainError::NotSquare { rows, cols });
        }
        for i in 0..rows {
            for j in 0..cols {
                let v = raw[(i, j)];
                if !v.is_finite() {
                    return Err(ChainError::NonFinite { row: i, col: j });
                }
                if i != j && v < 0.0 {
                    return Err(ChainError::NegativeRate {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        let mut rates = raw;
        for i in 0..rows {
            let sum: f64 = rates.row(i).iter().sum();
            if sum.abs() > ROW_SUM_TOL {
                return Err(ChainError::RowSumViolation { row: i, sum });
            }
            let off: f64 = (0..cols).filter(|&j| j != i).map(|j| rates[(i, j)]).sum();
            rates[(i, i)] = -off;
        }
        Ok(Self { rates })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ChainError> {
        let m = linalg::matrix_from_rows(rows).ok_or(ChainError::NotSquare {
            rows: rows.len(),
            cols: 0,
        })?;
        Self::new(m)
    }

    /// Two-state chain with rates `a` (0 -> 1) and `b` (1 -> 0).
    pub fn two_state(a: f64, b: f64) -> Result<Self, ChainError> {
        Self::new(DMatrix::from_row_slice(2, 2, &[-a, a, b, -b]))
    }

    pub fn num_modes(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[(i, j)]
    }

    /// Total exit rate `-pi_ii`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rates[(i, i)]
    }

    /// `Pi' phi`.
    pub fn drift(&self, phi: &DVector<f64>) -> DVector<f64> {
        self.rates.tr_mul(phi)
    }

    fn reachable_from(&self, start: usize) -> Vec<bool> {
        let m = self.num_modes();
        let mut seen = vec![false; m];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for (j, s) in seen.iter_mut().enumerate() {
                if j != i && !*s && self.rates[(i, j)] > 0.0 {
                    *s = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// Number of closed communicating classes of the rate graph.
    pub fn closed_classes(&self) -> usize {
        let m = self.num_modes();
        let reach: Vec<Vec<bool>> = (0..m).map(|i| self.reachable_from(i)).collect();
        // i lies in a closed class iff everything it reaches reaches back.
        let mut class_rep = vec![None; m];
        let mut count = 0;
        for i in 0..m {
            let closed = (0..m).all(|j| !reach[i][j] || reach[j][i]);
            if !closed || class_rep[i].is_some() {
                continue;
            }
            for j in 0..m {
                if reach[i][j] {
                    class_rep[j] = Some(i);
                }
            }
            count += 1;
        }
        count
    }

    /// A single communicating class covering every state.
    pub fn is_irreducible(&self) -> bool {
        (0..self.num_modes()).all(|i| self.reachable_from(i).iter().all(|&r| r))
    }

    /// Unique `nu` with `Pi' nu = 0`, `sum nu = 1`. Requires exactly one
    /// closed class (transient states get zero mass).
    pub fn stationary_distribution(&self) -> Result<StationaryDistribution, ChainError> {
        let classes = self.closed_classes();
        if classes != 1 {
            return Err(ChainError::NotIrreducible {
                closed_classes: classes,
            });
        }
        let m = self.num_modes();
        let mut a = self.rates.transpose();
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(m);
        rhs[m - 1] = 1.0;
        let mut nu = a.lu().solve(&rhs).ok_or(ChainError::NotIrreducible {
            closed_classes: classes,
        })?;
        nu.iter_mut().for_each(|v| *v = v.max(0.0));
        let total = nu.sum();
        nu /= total;
        Ok(StationaryDistribution { nu })
    }

    /// `M(t) = exp(Pi t)` by scaling-and-squaring Padé.
    pub fn transition_matrix(&self, t: f64) -> Result<DMatrix<f64>, ChainError> {
        if !t.is_finite() || t < 0.0 {
            return Err(ChainError::InvalidTime(t));
        }
        if t == 0.0 {
            return Ok(DMatrix::identity(self.num_modes(), self.num_modes()));
        }
        let m = (&self.rates * t).exp();
        if !linalg::all_finite(&m) {
            return Err(ChainError::Overflow(t));
        }
        Ok(m)
    }

    /// Law at time `t` from initial law `p0`: `p(t) = M(t)' p0`.
    pub fn propagate(&self, p0: &DVector<f64>, t: f64) -> Result<DVector<f64>, ChainError> {
        Ok(self.transition_matrix(t)?.tr_mul(p0))
    }

    /// Exact path: exponential holding times with rate `-pi_ii`, next state
    /// proportional to the off-diagonal rates.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        initial: usize,
        horizon: f64,
        rng: &mut R,
    ) -> Result<ChainPath, ChainError> {
        let m = self.num_modes();
        if initial >= m {
            return Err(ChainError::InvalidMode {
                index: initial,
                modes: m,
            });
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(ChainError::InvalidTime(horizon));
        }
        let mut jump_times = Vec::new();
        let mut states = vec![initial];
        let mut t = 0.0;
        let mut state = initial;
        loop {
            let exit = self.exit_rate(state);
            if exit <= 0.0 {
                break;
            }
            let hold: f64 = Exp1.sample(rng);
            t += hold / exit;
            if t >= horizon {
                break;
            }
            let mut target = rng.random::<f64>() * exit;
            let mut next = None;
            for j in (0..m).filter(|&j| j != state) {
                let r = self.rates[(state, j)];
                if r <= 0.0 {
                    continue;
                }
                next = Some(j);
                if target < r {
                    break;
                }
                target -= r;
            }
            // `next` is the last positive-rate state if roundoff exhausted `target`.
            let Some(next) = next else { break };
            jump_times.push(t);
            states.push(next);
            state = next;
        }
        Ok(ChainPath {
            jump_times,
            states,
            horizon,
        })
    }

    /// Spectral gap and a prefactor fitted on a geometric time grid.
    pub fn estimate_mixing(&self) -> Result<MixingEstimate, ChainError> {
        let m = self.num_modes();
        if m == 1 {
            return Err(ChainError::SingleMode);
        }
        let nu = self.stationary_distribution()?.nu;
        let mut eig: Vec<f64> = self.rates.complex_eigenvalues().iter().map(|z| -z.re).collect();
        eig.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        // eig[0] is the simple zero eigenvalue (one closed class).
        let lambda = eig[1..].iter().copied().fold(f64::INFINITY, f64::min);
        if lambda.is_nan() || lambda <= 1e-12 {
            return Err(ChainError::NotIrreducible {
                closed_classes: self.closed_classes(),
            });
        }
        let limit = DMatrix::from_fn(m, m, |_, j| nu[j]);
        let gap_at = |t: f64| -> Result<f64, ChainError> { Ok((self.transition_matrix(t)? - &limit).amax()) };
        // Distances at roundoff level carry no information and exp(lambda t)
        // would only amplify them.
        let floor = 1e-10;
        let t_max = 20.0 / lambda;
        let grid = geometric_grid(1e-3 / lambda, t_max, 120);
        let mut k = gap_at(0.0)?;
        for &t in &grid {
            let gap = gap_at(t)?;
            if gap > floor {
                k = k.max(gap * (lambda * t).exp());
            }
        }
        // Re-verify on the midpoints of the fitting grid.
        for w in grid.windows(2) {
            let t = (w[0] * w[1]).sqrt();
            let gap = gap_at(t)?;
            if gap > floor {
                k = k.max(gap * (lambda * t).exp());
            }
        }
        Ok(MixingEstimate { lambda, k })
    }
}

/// `count` log-spaced points in `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|k| lo * (ratio * k as f64).exp()).collect()
}

impl StationaryDistribution {
    /// `|Pi' nu|_2`.
    pub fn balance_residual(&self, gen: &GeneratorMatrix) -> f64 {
        gen.drift(&self.nu).norm()
    }
}

impl MixingEstimate {
    pub fn bound(&self, t: f64) -> f64 {
        self.k * (-self.lambda * t).exp()
    }
}

impl ChainPath {
    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }

    pub fn num_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Time spent in each of `m` states on `[0, horizon]`.
    pub fn occupation_times(&self, m: usize) -> Vec<f64> {
        let mut occ = vec![0.0; m];
        let mut start = 0.0;
        for (k, &s) in self.states.iter().enumerate() {
            let end = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            occ[s] += end - start;
            start = end;
        }
        occ
    }

    /// CSV with columns `jump_time,state`; the first row is the initial state at t = 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("jump_time,state\n");
        let _ = writeln!(out, "0,{}", self.states[0]);
        for (t, s) in self.jump_times.iter().zip(&self.states[1..]) {
            let _ = writeln!(out, "{t},{s}");
        }
        out
    }
}
