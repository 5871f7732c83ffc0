use std::fmt::Write as _;
use std::ops::ControlFlow;

use nalgebra::DVector;
use serde::Serialize;

use super::engine::{run_path, Observer, StepView};
use super::{SimConfig, SimError};
use crate::markov_chain::ChainPath;
use crate::wonham::FilterState;

/// Every grid point of one closed-loop path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub alpha: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// Filter martingale `N(t)` per grid point.
    pub n: Vec<Vec<f64>>,
    pub qv_running: Vec<f64>,
    pub y_norm: Vec<f64>,
    /// Accumulated quadratic cost at the horizon.
    pub cost: f64,
    pub chain: ChainPath,
}

#[derive(Default)]
struct Recorder {
    grid: Vec<f64>,
    alpha: Vec<usize>,
    x: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    qv: Vec<f64>,
    y_norm: Vec<f64>,
    cost: f64,
}

impl Observer for Recorder {
    fn observe(&mut self, s: &StepView<'_>) -> ControlFlow<()> {
        self.grid.push(s.t);
        self.alpha.push(s.alpha);
        self.x.push(s.x.as_slice().to_vec());
        self.phi.push(s.phi.as_vector().as_slice().to_vec());
        self.u.push(s.u.as_slice().to_vec());
        self.n.push(s.n_vec.as_slice().to_vec());
        self.qv.push(s.qv);
        self.y_norm.push(s.y_norm);
        self.cost = s.cost;
        ControlFlow::Continue(())
    }
}

/// Simulates path 0 of `cfg` and records it.
pub fn simulate_closed_loop(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    simulate_path(cfg, 0)
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.last().copied().unwrap_or(0.0)
    }

    pub fn state_norm(&self, k: usize) -> f64 {
        DVector::from_row_slice(&self.x[k]).norm()
    }

    pub fn filter_state(&self, k: usize) -> FilterState {
        FilterState::new(DVector::from_row_slice(&self.phi[k])).expect("recorded filter states are on the simplex")
    }

    /// `t, alpha, x_1..x_n, phi_1..phi_m, u_1..u_d, N_norm, qv, Ynorm`.
    pub fn to_csv(&self) -> String {
        let n = self.x.first().map_or(0, Vec::len);
        let m = self.phi.first().map_or(0, Vec::len);
        let d = self.u.first().map_or(0, Vec::len);
        let mut out = String::from("t,alpha");
        for (prefix, count) in [("x", n), ("phi", m), ("u", d)] {
            for k in 1..=count {
                let _ = write!(out, ",{prefix}_{k}");
            }
        }
        out.push_str(",N_norm,qv,Ynorm\n");
        for k in 0..self.len() {
            let _ = write!(out, "{},{}", self.grid[k], self.alpha[k]);
            for v in self.x[k].iter().chain(&self.phi[k]).chain(&self.u[k]) {
                let _ = write!(out, ",{v}");
            }
            let n_norm = DVector::from_row_slice(&self.n[k]).norm();
            let _ = writeln!(out, ",{n_norm},{},{}", self.qv_running[k], self.y_norm[k]);
        }
        out
    }
}

/// Records path `index` of the ensemble defined by `cfg`.
pub fn simulate_path(cfg: &SimConfig, index: u64) -> Result<Trajectory, SimError> {
    let mut rec = Recorder::default();
    let end = run_path(cfg, index, &mut rec)?;
    Ok(Trajectory {
        grid: rec.grid,
        alpha: rec.alpha,
        x: rec.x,
        phi: rec.phi,
        u: rec.u,
        n: rec.n,
        qv_running: rec.qv,
        y_norm: rec.y_norm,
        cost: rec.cost,
        chain: end.chain,
    })
}
