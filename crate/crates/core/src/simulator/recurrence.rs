use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{run_path, Observer, StepView};
use super::{SimConfig, SimError};

/// First-entrance times into `{|(X, phi)| <= radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceStats {
    pub radius: f64,
    pub num_paths: usize,
    /// Entrance times of the paths that returned before the horizon.
    pub samples: Vec<f64>,
    /// Paths still outside the ball at the horizon.
    pub censored: usize,
    pub mean: f64,
    pub std_err: f64,
}

impl RecurrenceStats {
    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.num_paths as f64
    }
}

struct EntranceObserver {
    radius: f64,
    hit: Option<f64>,
}

impl Observer for EntranceObserver {
    fn observe(&mut self, s: &StepView<'_>) -> ControlFlow<()> {
        if s.y_norm <= self.radius {
            self.hit = Some(s.t);
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    }
}

/// Simulates `num_paths` paths (same streams as [`super::run_ensemble`]),
/// each stopped at its first entrance into the ball or at the horizon.
pub fn recurrence_stats(cfg: &SimConfig, radius: f64, num_paths: usize) -> Result<RecurrenceStats, SimError> {
    if radius.is_nan() || radius <= 0.0 || num_paths == 0 {
        return Err(SimError::InvalidConfig(
            "radius must be positive and num_paths >= 1".into(),
        ));
    }
    let hits = (0..num_paths)
        .into_par_iter()
        .map(|i| {
            let mut obs = EntranceObserver { radius, hit: None };
            run_path(cfg, i as u64, &mut obs)
                .map(|_| obs.hit)
                .map_err(|e| SimError::Path {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let samples: Vec<f64> = hits.iter().flatten().copied().collect();
    if samples.is_empty() {
        return Err(SimError::AllCensored { num_paths });
    }
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let std_err = if samples.len() > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    Ok(RecurrenceStats {
        radius,
        num_paths,
        censored: num_paths - samples.len(),
        samples,
        mean,
        std_err,
    })
}
