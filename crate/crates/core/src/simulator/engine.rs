use std::ops::ControlFlow;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{path_rng, ControlPolicy, InitialMode, SimConfig, SimError};
use crate::controller::feedback_control;
use crate::markov_chain::ChainPath;
use crate::wonham::{build_c, filter_step, FilterState};

/// State of one path at a grid point, with the control applied on the
/// following interval.
pub(crate) struct StepView<'a> {
    pub t: f64,
    pub alpha: usize,
    pub x: &'a DVector<f64>,
    pub phi: &'a FilterState,
    pub u: &'a DVector<f64>,
    /// `N(t) = phi(t) - phi(0) - int_0^t Pi' phi ds`.
    pub n_vec: &'a DVector<f64>,
    /// Realized quadratic variation of `N`.
    pub qv: f64,
    pub y_norm: f64,
    /// Accumulated `(1/2) int x'Qx + u'Ru dt`.
    pub cost: f64,
}

pub(crate) trait Observer {
    fn observe(&mut self, step: &StepView<'_>) -> ControlFlow<()>;
}

pub(crate) struct PathEnd {
    pub chain: ChainPath,
}

/// Grid of `k * dt` points plus every jump time, ending exactly at the horizon.
struct Grid<'a> {
    dt: f64,
    horizon: f64,
    next_base: u64,
    jumps: &'a [f64],
    next_jump: usize,
    done: bool,
}

impl<'a> Grid<'a> {
    fn new(dt: f64, horizon: f64, jumps: &'a [f64]) -> Self {
        Self {
            dt,
            horizon,
            next_base: 1,
            jumps,
            next_jump: 0,
            done: false,
        }
    }

    /// Next grid time and whether a jump happens there.
    fn next(&mut self) -> Option<(f64, bool)> {
        if self.done {
            return None;
        }
        let base = (self.next_base as f64 * self.dt).min(self.horizon);
        let base = if self.horizon - base <= 1e-9 * self.dt {
            self.horizon
        } else {
            base
        };
        match self.jumps.get(self.next_jump) {
            Some(&tj) if tj <= base => {
                self.next_jump += 1;
                if tj == base {
                    self.advance_base(base);
                }
                Some((tj, true))
            }
            _ => {
                self.advance_base(base);
                Some((base, false))
            }
        }
    }

    fn advance_base(&mut self, base: f64) {
        self.next_base += 1;
        if base >= self.horizon {
            self.done = true;
        }
    }
}

/// Simulates path `index` of `cfg`, reporting every grid point to `obs`.
pub(crate) fn run_path<O: Observer>(cfg: &SimConfig, stream: u64, obs: &mut O) -> Result<PathEnd, SimError> {
    cfg.validate()?;
    let mut rng = path_rng(cfg.seed, stream);
    let m = cfg.modes.m();
    let alpha0 = match cfg.alpha0 {
        InitialMode::Fixed(i) => i,
        InitialMode::SampleFromPhi0 => {
            let mut target: f64 = rng.random();
            let mut chosen = m - 1;
            for i in 0..m {
                let w = cfg.phi0.get(i);
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        }
    };
    let chain = cfg.gen.sample_path(alpha0, cfg.horizon, &mut rng)?;

    let n = cfg.modes.n();
    let control = |phi: &FilterState, x: &DVector<f64>| match &cfg.control {
        ControlPolicy::CertaintyEquivalent(law) => feedback_control(law, phi, x),
        ControlPolicy::Zero => DVector::zeros(cfg.modes.d()),
    };
    let quad_cost = |x: &DVector<f64>, u: &DVector<f64>| x.dot(&(cfg.cost.q() * x)) + u.dot(&(cfg.cost.r() * u));

    let phi0 = cfg.phi0.as_vector().clone();
    let mut t = 0.0;
    let mut state_idx = 0;
    let mut alpha = chain.states[0];
    let mut x = cfg.x0.clone();
    let mut phi = cfg.phi0.clone();
    let mut drift_phi = cfg.gen.drift(&phi0);
    let mut integral = DVector::zeros(m);
    let mut n_vec = DVector::zeros(m);
    let mut qv = 0.0;
    let mut cost = 0.0;
    let mut u = control(&phi, &x);
    let mut grid = Grid::new(cfg.dt, cfg.horizon, &chain.jump_times);
    let y_norm_of = |x: &DVector<f64>, phi: &FilterState| (x.norm_squared() + phi.as_vector().norm_squared()).sqrt();

    let y0 = y_norm_of(&x, &phi);
    if y0 > cfg.explosion_radius {
        return Err(SimError::Explosion { time: 0.0, y_norm: y0 });
    }
    let first = StepView {
        t,
        alpha,
        x: &x,
        phi: &phi,
        u: &u,
        n_vec: &n_vec,
        qv,
        y_norm: y0,
        cost,
    };
    if obs.observe(&first).is_break() {
        return Ok(PathEnd { chain });
    }

    let mut noise = DVector::zeros(n);
    while let Some((t_next, jump)) = grid.next() {
        let h = t_next - t;
        let drift = build_c(&cfg.modes, &x, &u).map_err(|source| SimError::Filter { time: t, source })?;
        let scale = cfg.noise_scale * h.sqrt();
        for w in noise.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = scale * z;
        }
        // Truth uses the hidden mode; the filter only sees dx.
        let dx = drift.c.column(alpha) * h + &noise;
        let phi_next =
            filter_step(&cfg.gen, &phi, &drift, &dx, h).map_err(|source| SimError::Filter { time: t, source })?;
        let cost_left = quad_cost(&x, &u);
        x += dx;

        let drift_next = cfg.gen.drift(phi_next.as_vector());
        integral += (&drift_phi + &drift_next) * (0.5 * h);
        let n_next = phi_next.as_vector() - &phi0 - &integral;
        qv += (&n_next - &n_vec).norm_squared();
        n_vec = n_next;
        drift_phi = drift_next;
        phi = phi_next;
        t = t_next;
        if jump {
            state_idx += 1;
            alpha = chain.states[state_idx];
        }
        u = control(&phi, &x);
        cost += 0.25 * h * (cost_left + quad_cost(&x, &u));

        let y_norm = y_norm_of(&x, &phi);
        if y_norm.is_nan() || y_norm > cfg.explosion_radius {
            return Err(SimError::Explosion { time: t, y_norm });
        }
        let view = StepView {
            t,
            alpha,
            x: &x,
            phi: &phi,
            u: &u,
            n_vec: &n_vec,
            qv,
            y_norm,
            cost,
        };
        if obs.observe(&view).is_break() {
            break;
        }
    }
    Ok(PathEnd { chain })
}
