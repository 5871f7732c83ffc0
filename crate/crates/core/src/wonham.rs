//! Wonham filter for the hidden mode, driven by the observed state increment.
//!
//! `dphi = Pi' phi dt + D(phi) C(x)' dV`, `dV = dx - C(x) phi dt`, with
//! `C(x) = (A_1 x + B_1 u, ..., A_m x + B_m u)` and
//! `D(phi) = diag(phi) - phi phi'`. Discretized by Euler–Maruyama and
//! projected back onto the probability simplex after each step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov_chain::GeneratorMatrix;
use crate::model::{ModeSet, ModelError};

pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("filter update is not finite (step too large for |x| = {state_norm:e})")]
    NonFiniteUpdate { state_norm: f64 },
    #[error("not a probability vector: {0}")]
    NotSimplex(String),
    #[error(transparent)]
    Dimension(#[from] ModelError),
}

/// Conditional mode distribution; a point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FilterState(DVector<f64>);

impl TryFrom<Vec<f64>> for FilterState {
    type Error = FilterError;
    fn try_from(v: Vec<f64>) -> Result<Self, FilterError> {
        FilterState::new(DVector::from_vec(v))
    }
}

impl From<FilterState> for Vec<f64> {
    fn from(s: FilterState) -> Self {
        s.0.as_slice().to_vec()
    }
}

impl FilterState {
    pub fn new(phi: DVector<f64>) -> Result<Self, FilterError> {
        if phi.is_empty() {
            return Err(FilterError::NotSimplex("empty vector".into()));
        }
        if let Some(v) = phi.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(FilterError::NotSimplex(format!("entry {v}")));
        }
        let sum = phi.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(FilterError::NotSimplex(format!("entries sum to {sum}")));
        }
        Ok(Self(phi))
    }

    /// Vertex `e_i` of the m-simplex.
    pub fn vertex(m: usize, i: usize) -> Self {
        let mut v = DVector::zeros(m);
        v[i] = 1.0;
        Self(v)
    }

    pub fn uniform(m: usize) -> Self {
        Self(DVector::from_element(m, 1.0 / m as f64))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// `C(x)`: column `i` is `A_i x + B_i u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftStack {
    pub c: DMatrix<f64>,
}

pub fn build_c(modes: &ModeSet, x: &DVector<f64>, u: &DVector<f64>) -> Result<DriftStack, FilterError> {
    if x.len() != modes.n() || u.len() != modes.d() {
        return Err(ModelError::DimensionMismatch {
            what: "state/control".into(),
            expected: format!("n={}, d={}", modes.n(), modes.d()),
            got: format!("n={}, d={}", x.len(), u.len()),
        }
        .into());
    }
    let mut c = DMatrix::zeros(modes.n(), modes.m());
    for i in 0..modes.m() {
        let mut col = c.column_mut(i);
        col.gemv(1.0, modes.a(i), x, 0.0);
        col.gemv(1.0, modes.b(i), u, 1.0);
    }
    Ok(DriftStack { c })
}

/// `D(phi) = diag(phi) - phi phi'`.
pub fn build_d(phi: &FilterState) -> DMatrix<f64> {
    let v = phi.as_vector();
    let mut d = -(v * v.transpose());
    for i in 0..v.len() {
        d[(i, i)] += v[i];
    }
    d
}

/// Euler–Maruyama increment before projection:
/// `phi + Pi' phi dt + D(phi) C' (dx - C phi dt)`.
pub fn filter_increment(
    gen: &GeneratorMatrix,
    phi: &FilterState,
    drift: &DriftStack,
    dx: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, FilterError> {
    let v = phi.as_vector();
    let c = &drift.c;
    let mut innovation = dx.clone();
    innovation.gemv(-dt, c, v, 1.0);
    // D(phi) C' dV = diag(phi) w - phi (phi' w), w = C' dV.
    let w = c.tr_mul(&innovation);
    let mean = v.dot(&w);
    let mut raw = gen.rates().tr_mul(v) * dt + v;
    for i in 0..v.len() {
        raw[i] += v[i] * (w[i] - mean);
    }
    if raw.iter().all(|e| e.is_finite()) {
        Ok(raw)
    } else {
        Err(FilterError::NonFiniteUpdate {
            state_norm: dx.norm() / dt.sqrt(),
        })
    }
}

pub fn filter_step(
    gen: &GeneratorMatrix,
    phi: &FilterState,
    drift: &DriftStack,
    dx: &DVector<f64>,
    dt: f64,
) -> Result<FilterState, FilterError> {
    Ok(project_simplex(&filter_increment(gen, phi, drift, dx, dt)?))
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &DVector<f64>) -> FilterState {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if s - candidate > 0.0 {
            tau = candidate;
        }
    }
    let mut out = v.map(|x| (x - tau).max(0.0));
    // Renormalize away the last-ulp drift of the threshold.
    let total = out.sum();
    if total > 0.0 {
        out /= total;
    }
    FilterState(out)
}
