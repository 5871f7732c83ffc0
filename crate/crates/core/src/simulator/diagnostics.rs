use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::Trajectory;

/// Smallest `|X|` fed to the logarithm.
const LOG_FLOOR: f64 = 1e-300;

/// Pathwise bound `|N(t)|_inf <= 1 + t`, valid when every exit rate is at
/// most 1. In the Euclidean norm the drift `Pi' phi` of a filter sitting on
/// a vertex of a unit-rate chain already has length `sqrt(2)`.
pub fn martingale_bound(t: f64) -> f64 {
    1.0 + t
}

/// Streaming `(1/T) log|X(T)|` and its supremum over the tail of the grid.
#[derive(Debug, Clone)]
pub struct ExponentTracker {
    tail_start: f64,
    terminal: f64,
    tail_sup: f64,
}

impl ExponentTracker {
    pub fn new(horizon: f64, tail_fraction: f64) -> Self {
        Self {
            tail_start: horizon * (1.0 - tail_fraction.clamp(0.0, 1.0)),
            terminal: f64::NAN,
            tail_sup: f64::NEG_INFINITY,
        }
    }

    pub fn update(&mut self, t: f64, x_norm: f64) {
        if t <= 0.0 {
            return;
        }
        let rate = x_norm.max(LOG_FLOOR).ln() / t;
        self.terminal = rate;
        if t >= self.tail_start {
            self.tail_sup = self.tail_sup.max(rate);
        }
    }

    /// `(terminal, tail_sup)`.
    pub fn finish(&self) -> (f64, f64) {
        (self.terminal, self.tail_sup)
    }
}

/// Streaming bound slack, quadratic variation and terminal `|N|`.
#[derive(Debug, Clone)]
pub struct MartingaleTracker {
    max_bound_slack: f64,
    max_euclidean_slack: f64,
    last_t: f64,
    last_qv: f64,
    last_norm: f64,
}

impl Default for MartingaleTracker {
    fn default() -> Self {
        Self {
            max_bound_slack: f64::NEG_INFINITY,
            max_euclidean_slack: f64::NEG_INFINITY,
            last_t: 0.0,
            last_qv: 0.0,
            last_norm: 0.0,
        }
    }
}

impl MartingaleTracker {
    pub fn update(&mut self, t: f64, n: &DVector<f64>, qv: f64) {
        let n_norm = n.norm();
        self.max_bound_slack = self.max_bound_slack.max(n.amax() - martingale_bound(t));
        self.max_euclidean_slack = self.max_euclidean_slack.max(n_norm - martingale_bound(t));
        self.last_t = t;
        self.last_qv = qv;
        self.last_norm = n_norm;
    }

    pub fn finish(&self) -> MartingaleDiagnostics {
        let (qv_slope, n_over_t) = if self.last_t > 0.0 {
            (self.last_qv / self.last_t, self.last_norm / self.last_t)
        } else {
            (0.0, 0.0)
        };
        MartingaleDiagnostics {
            max_bound_slack: self.max_bound_slack,
            max_euclidean_slack: self.max_euclidean_slack,
            qv_slope,
            n_over_t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDiagnostics {
    /// `max_t |N(t)|_inf - (1 + t)`; non-positive when the bound holds.
    pub max_bound_slack: f64,
    /// Same with the Euclidean norm (informational).
    pub max_euclidean_slack: f64,
    /// Realized `<N,N>_T / T`.
    pub qv_slope: f64,
    /// Euclidean `|N(T)| / T`.
    pub n_over_t: f64,
}

/// `(1/T) log|X(T)|` and `max (1/t) log|X(t)|` over the last
/// `tail_fraction` of the time grid.
pub fn lyapunov_exponent(traj: &Trajectory, tail_fraction: f64) -> (f64, f64) {
    let mut tracker = ExponentTracker::new(traj.horizon(), tail_fraction);
    for (k, &t) in traj.grid.iter().enumerate() {
        tracker.update(t, traj.state_norm(k));
    }
    tracker.finish()
}

pub fn martingale_diagnostics(traj: &Trajectory) -> MartingaleDiagnostics {
    let mut tracker = MartingaleTracker::default();
    for (k, &t) in traj.grid.iter().enumerate() {
        tracker.update(t, &DVector::from_row_slice(&traj.n[k]), traj.qv_running[k]);
    }
    tracker.finish()
}
