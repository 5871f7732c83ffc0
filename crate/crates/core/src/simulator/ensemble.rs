use std::ops::ControlFlow;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{ExponentTracker, MartingaleTracker};
use super::engine::{run_path, Observer, StepView};
use super::{SimConfig, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub num_paths: usize,
    /// Times at which `|N|^2 / t` and the filter mean are sampled.
    pub checkpoints: Vec<f64>,
    /// Tail of the grid over which the exponent supremum is taken.
    pub tail_fraction: f64,
    /// Record the first entrance time into `|Y| <= radius`.
    pub return_radius: Option<f64>,
    /// Give every path the same random stream (degenerate, for testing).
    pub shared_stream: bool,
}

impl EnsembleOptions {
    pub fn new(num_paths: usize, checkpoints: Vec<f64>) -> Self {
        Self {
            num_paths,
            checkpoints,
            tail_fraction: 0.5,
            return_radius: None,
            shared_stream: false,
        }
    }
}

/// Per-path values kept in the report; every aggregate is recomputable from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub lyap_terminal: f64,
    pub lyap_tail_sup: f64,
    pub max_bound_slack: f64,
    pub max_euclidean_slack: f64,
    pub qv_slope: f64,
    pub n_over_t: f64,
    /// `|N(t_c)|^2` at each checkpoint.
    pub n_sq: Vec<f64>,
    /// Filter state at each checkpoint.
    pub phi: Vec<Vec<f64>>,
    pub return_time: Option<f64>,
    pub max_y_norm: f64,
    pub cost: f64,
    pub jumps: usize,
}

/// Ensemble mean of the filter against the propagated initial law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub t: f64,
    pub mean_phi: Vec<f64>,
    pub law: Vec<f64>,
    /// Zero for a single path.
    pub std_err: Vec<f64>,
    /// `max_i |mean_phi_i - law_i|`.
    pub max_abs_gap: f64,
    /// `max_i |mean_phi_i - law_i| / std_err_i` (0 where the spread vanishes).
    pub max_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub num_paths: usize,
    pub checkpoints: Vec<f64>,
    pub lyap_terminal: Vec<f64>,
    pub lyap_tail_sup: Vec<f64>,
    pub n_over_t: Vec<f64>,
    /// Largest `|N(t)|_inf - (1 + t)` over all paths and grid points.
    pub max_bound_slack: f64,
    pub max_euclidean_slack: f64,
    /// Mean of `|N(t)|^2 / t` at each checkpoint.
    pub second_moment_n: Vec<f64>,
    pub second_moment_slope: f64,
    pub mean_phi_error: Vec<f64>,
    pub calibration: Vec<Calibration>,
    pub return_times: Vec<Option<f64>>,
    pub paths: Vec<PathSummary>,
    pub config: SimConfig,
    pub options: EnsembleOptions,
}

struct SummaryObserver<'a> {
    checkpoints: &'a [f64],
    next_checkpoint: usize,
    exponent: ExponentTracker,
    martingale: MartingaleTracker,
    n_sq: Vec<f64>,
    phi: Vec<Vec<f64>>,
    return_radius: Option<f64>,
    return_time: Option<f64>,
    max_y_norm: f64,
    cost: f64,
}

impl Observer for SummaryObserver<'_> {
    fn observe(&mut self, s: &StepView<'_>) -> ControlFlow<()> {
        let n_norm_sq = s.n_vec.norm_squared();
        self.exponent.update(s.t, s.x.norm());
        self.martingale.update(s.t, s.n_vec, s.qv);
        while let Some(&tc) = self.checkpoints.get(self.next_checkpoint) {
            if s.t < tc - 1e-9 * tc.max(1.0) {
                break;
            }
            self.n_sq.push(n_norm_sq);
            self.phi.push(s.phi.as_vector().as_slice().to_vec());
            self.next_checkpoint += 1;
        }
        if let Some(r) = self.return_radius {
            if self.return_time.is_none() && s.y_norm <= r {
                self.return_time = Some(s.t);
            }
        }
        self.max_y_norm = self.max_y_norm.max(s.y_norm);
        self.cost = s.cost;
        ControlFlow::Continue(())
    }
}

fn summarize(cfg: &SimConfig, opts: &EnsembleOptions, index: usize) -> Result<PathSummary, SimError> {
    let stream = if opts.shared_stream { 0 } else { index as u64 };
    let mut obs = SummaryObserver {
        checkpoints: &opts.checkpoints,
        next_checkpoint: 0,
        exponent: ExponentTracker::new(cfg.horizon, opts.tail_fraction),
        martingale: MartingaleTracker::default(),
        n_sq: Vec::with_capacity(opts.checkpoints.len()),
        phi: Vec::with_capacity(opts.checkpoints.len()),
        return_radius: opts.return_radius,
        return_time: None,
        max_y_norm: 0.0,
        cost: 0.0,
    };
    let end = run_path(cfg, stream, &mut obs)?;
    let (lyap_terminal, lyap_tail_sup) = obs.exponent.finish();
    let mg = obs.martingale.finish();
    Ok(PathSummary {
        lyap_terminal,
        lyap_tail_sup,
        max_bound_slack: mg.max_bound_slack,
        max_euclidean_slack: mg.max_euclidean_slack,
        qv_slope: mg.qv_slope,
        n_over_t: mg.n_over_t,
        n_sq: obs.n_sq,
        phi: obs.phi,
        return_time: obs.return_time,
        max_y_norm: obs.max_y_norm,
        cost: obs.cost,
        jumps: end.chain.num_jumps(),
    })
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Runs `num_paths` independent paths in parallel on the current rayon pool.
/// Each path draws from its own stream, so the result does not depend on the
/// thread count.
pub fn run_ensemble(cfg: &SimConfig, opts: &EnsembleOptions) -> Result<EnsembleReport, SimError> {
    cfg.validate()?;
    if opts.num_paths == 0 {
        return Err(SimError::InvalidConfig("an ensemble needs at least 1 path".into()));
    }
    let mut checkpoints = opts.checkpoints.clone();
    if checkpoints
        .iter()
        .any(|&t| t.is_nan() || t <= 0.0 || t > cfg.horizon * (1.0 + 1e-12))
    {
        return Err(SimError::InvalidConfig(format!(
            "checkpoints must lie in (0, {}]",
            cfg.horizon
        )));
    }
    checkpoints.sort_by(f64::total_cmp);
    let opts = EnsembleOptions {
        checkpoints,
        ..opts.clone()
    };
    let paths = (0..opts.num_paths)
        .into_par_iter()
        .map(|i| {
            summarize(cfg, &opts, i).map_err(|e| SimError::Path {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    EnsembleReport::from_paths(cfg.clone(), opts, paths)
}

impl EnsembleReport {
    /// Aggregates per-path summaries.
    pub fn from_paths(config: SimConfig, options: EnsembleOptions, paths: Vec<PathSummary>) -> Result<Self, SimError> {
        if paths.is_empty() {
            return Err(SimError::InvalidConfig("no paths to aggregate".into()));
        }
        let count = paths.len() as f64;
        let checkpoints = options.checkpoints.clone();
        let second_moment_n: Vec<f64> = checkpoints
            .iter()
            .enumerate()
            .map(|(c, &t)| paths.iter().map(|p| p.n_sq[c] / t).sum::<f64>() / count)
            .collect();
        let second_moment_slope = least_squares_slope(&checkpoints, &second_moment_n);

        let p0 = config.initial_law();
        let m = p0.len();
        let mut calibration = Vec::with_capacity(checkpoints.len());
        for (c, &t) in checkpoints.iter().enumerate() {
            let law = config.gen.propagate(&p0, t)?;
            let mut mean = DVector::zeros(m);
            for p in &paths {
                mean += DVector::from_row_slice(&p.phi[c]);
            }
            mean /= count;
            let mut var = DVector::zeros(m);
            for p in &paths {
                let dev = DVector::from_row_slice(&p.phi[c]) - &mean;
                var += dev.component_mul(&dev);
            }
            var /= (count - 1.0).max(1.0);
            let std_err = var.map(|v| (v / count).sqrt());
            let gap = &mean - &law;
            let max_abs_gap = gap.amax();
            let max_z = gap
                .iter()
                .zip(std_err.iter())
                .map(|(g, s)| if *s > 0.0 { g.abs() / s } else { 0.0 })
                .fold(0.0, f64::max);
            calibration.push(Calibration {
                t,
                mean_phi: mean.as_slice().to_vec(),
                law: law.as_slice().to_vec(),
                std_err: std_err.as_slice().to_vec(),
                max_abs_gap,
                max_z,
            });
        }

        Ok(Self {
            num_paths: paths.len(),
            lyap_terminal: paths.iter().map(|p| p.lyap_terminal).collect(),
            lyap_tail_sup: paths.iter().map(|p| p.lyap_tail_sup).collect(),
            n_over_t: paths.iter().map(|p| p.n_over_t).collect(),
            max_bound_slack: paths
                .iter()
                .map(|p| p.max_bound_slack)
                .fold(f64::NEG_INFINITY, f64::max),
            max_euclidean_slack: paths
                .iter()
                .map(|p| p.max_euclidean_slack)
                .fold(f64::NEG_INFINITY, f64::max),
            second_moment_n,
            second_moment_slope,
            mean_phi_error: calibration.iter().map(|c| c.max_abs_gap).collect(),
            calibration,
            return_times: paths.iter().map(|p| p.return_time).collect(),
            checkpoints,
            paths,
            config,
            options,
        })
    }

    /// `q`-quantile of the terminal exponents (linear interpolation).
    pub fn exponent_quantile(&self, q: f64) -> f64 {
        quantile(&self.lyap_terminal, q)
    }

    pub fn censored_returns(&self) -> usize {
        self.return_times.iter().filter(|r| r.is_none()).count()
    }
}

/// `q`-quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
