//! Closed-loop simulation: hidden chain, truth SDE, Wonham filter and
//! certainty-equivalent control, plus the stability, martingale and
//! recurrence diagnostics computed from the resulting paths.

mod diagnostics;
mod engine;
mod ensemble;
mod recurrence;
mod trajectory;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControlLaw;
use crate::linalg::serde_vector;
use crate::markov_chain::{ChainError, GeneratorMatrix};
use crate::model::{CostSpec, ModeSet};
use crate::wonham::{FilterError, FilterState};

pub use diagnostics::{
    lyapunov_exponent, martingale_bound, martingale_diagnostics, ExponentTracker, MartingaleDiagnostics,
    MartingaleTracker,
};
pub use ensemble::{
    least_squares_slope, quantile, run_ensemble, Calibration, EnsembleOptions, EnsembleReport, PathSummary,
};
pub use recurrence::{recurrence_stats, RecurrenceStats};
pub use trajectory::{simulate_closed_loop, simulate_path, Trajectory};

pub const DEFAULT_EXPLOSION_RADIUS: f64 = 1e9;
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("explosion at t = {time}: |Y| = {y_norm:e}")]
    Explosion { time: f64, y_norm: f64 },
    #[error("filter failed at t = {time}: {source}")]
    Filter { time: f64, source: FilterError },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("all {num_paths} paths were censored before returning")]
    AllCensored { num_paths: usize },
    #[error("path {index}: {source}")]
    Path { index: usize, source: Box<SimError> },
}

/// How the initial hidden mode is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    Fixed(usize),
    /// Drawn from `phi0`, so the filter starts calibrated.
    SampleFromPhi0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPolicy {
    CertaintyEquivalent(ControlLaw),
    /// `u = 0`; open-loop reference runs.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub modes: ModeSet,
    pub cost: CostSpec,
    pub gen: GeneratorMatrix,
    pub control: ControlPolicy,
    #[serde(with = "serde_vector")]
    pub x0: DVector<f64>,
    pub phi0: FilterState,
    pub alpha0: InitialMode,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub explosion_radius: f64,
    /// Multiplies `dW`; 1 for the model, 0 for deterministic checks.
    pub noise_scale: f64,
}

impl SimConfig {
    /// Config with the default step, explosion radius and unit noise.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        modes: ModeSet,
        cost: CostSpec,
        gen: GeneratorMatrix,
        control: ControlPolicy,
        x0: DVector<f64>,
        phi0: FilterState,
        horizon: f64,
        seed: u64,
    ) -> Self {
        Self {
            modes,
            cost,
            gen,
            control,
            x0,
            phi0,
            alpha0: InitialMode::SampleFromPhi0,
            horizon,
            dt: DEFAULT_DT,
            seed,
            explosion_radius: DEFAULT_EXPLOSION_RADIUS,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !self.horizon.is_finite() || self.horizon < self.dt {
            return bad(format!("horizon {} must be at least dt {}", self.horizon, self.dt));
        }
        if self.x0.len() != self.modes.n() || self.x0.iter().any(|v| !v.is_finite()) {
            return bad(format!("x0 must be a finite {}-vector", self.modes.n()));
        }
        if self.phi0.len() != self.modes.m() || self.gen.num_modes() != self.modes.m() {
            return bad(format!("phi0 and generator must have {} modes", self.modes.m()));
        }
        if let InitialMode::Fixed(i) = self.alpha0 {
            if i >= self.modes.m() {
                return bad(format!("alpha0 = {i} out of range"));
            }
        }
        if let ControlPolicy::CertaintyEquivalent(law) = &self.control {
            if law.num_modes() != self.modes.m() || law.gains[0].shape() != (self.modes.d(), self.modes.n()) {
                return bad("control law does not match the mode set".into());
            }
        }
        if self.explosion_radius.is_nan() || self.explosion_radius <= 0.0 {
            return bad("explosion_radius must be positive".into());
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return bad("noise_scale must be non-negative".into());
        }
        self.cost
            .check_dims(&self.modes)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    /// Law of the initial hidden mode.
    pub fn initial_law(&self) -> DVector<f64> {
        match self.alpha0 {
            InitialMode::Fixed(i) => FilterState::vertex(self.modes.m(), i).into_vector(),
            InitialMode::SampleFromPhi0 => self.phi0.as_vector().clone(),
        }
    }
}

/// Random stream of path `index`: ChaCha8 keyed by the master seed, with the
/// path index as stream id. Independent of execution order.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
