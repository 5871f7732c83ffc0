//! Certainty-equivalent feedback and the infinitesimal generator of the
//! filtered closed loop acting on Lyapunov-type functions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, serde_matrix, serde_matrix_vec};
use crate::markov_chain::GeneratorMatrix;
use crate::model::{CostSpec, ModeSet};
use crate::riccati::RiccatiSolution;
use crate::wonham::{build_c, build_d, FilterState};

/// Default relative finite-difference step for [`generator_apply_numeric`].
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// `u = -R^-1 sum_i phi_i B_i' P_i x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLaw {
    #[serde(with = "serde_matrix_vec")]
    pub p: Vec<DMatrix<f64>>,
    #[serde(with = "serde_matrix")]
    pub r_inv: DMatrix<f64>,
    #[serde(with = "serde_matrix_vec")]
    pub b: Vec<DMatrix<f64>>,
    /// Per-mode gains `R^-1 B_i' P_i` (d x n).
    #[serde(with = "serde_matrix_vec")]
    pub gains: Vec<DMatrix<f64>>,
}

impl ControlLaw {
    pub fn new(sol: &RiccatiSolution, modes: &ModeSet, cost: &CostSpec) -> Self {
        let gains = (0..modes.m())
            .map(|i| cost.r_inv() * modes.b(i).transpose() * &sol.p[i])
            .collect();
        Self {
            p: sol.p.clone(),
            r_inv: cost.r_inv().clone(),
            b: modes.b_all().to_vec(),
            gains,
        }
    }

    pub fn num_modes(&self) -> usize {
        self.p.len()
    }

    /// Feedback gains `-R^-1 B_i' P_i`, as applied to the state.
    pub fn feedback_gains(&self) -> Vec<DMatrix<f64>> {
        self.gains.iter().map(|g| -g).collect()
    }

    /// `L = |R^-1| max_i |B_i' P_i|` so that `|u| <= L |x|`.
    pub fn linear_growth_constant(&self) -> f64 {
        let worst = self
            .b
            .iter()
            .zip(&self.p)
            .map(|(b, p)| linalg::spectral_norm(&(b.transpose() * p)))
            .fold(0.0, f64::max);
        linalg::spectral_norm(&self.r_inv) * worst
    }

    /// Same law with ambient (not necessarily simplex) weights.
    pub fn control_for_weights(&self, weights: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let d = self.gains[0].nrows();
        let mut u = DVector::zeros(d);
        for (g, &w) in self.gains.iter().zip(weights.iter()) {
            if w != 0.0 {
                u.gemv(-w, g, x, 1.0);
            }
        }
        u
    }
}

pub fn feedback_control(law: &ControlLaw, phi: &FilterState, x: &DVector<f64>) -> DVector<f64> {
    law.control_for_weights(phi.as_vector(), x)
}

/// `V_theta(x, phi) = log(theta + x' P(phi) x)`, `P(phi) = sum_i phi_i P_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSpec {
    pub theta: f64,
    pub p: Vec<DMatrix<f64>>,
}

impl LyapunovSpec {
    pub fn new(theta: f64, p: Vec<DMatrix<f64>>) -> Option<Self> {
        (theta > 0.0 && theta.is_finite()).then_some(Self { theta, p })
    }

    /// `P(phi)` for any weight vector.
    pub fn blend(&self, weights: &DVector<f64>) -> DMatrix<f64> {
        let n = self.p[0].nrows();
        self.p
            .iter()
            .zip(weights.iter())
            .fold(DMatrix::zeros(n, n), |acc, (p, &w)| acc + p * w)
    }

    /// `V_theta` at ambient weights; used by finite-difference evaluation.
    pub fn value_at(&self, x: &DVector<f64>, weights: &DVector<f64>) -> f64 {
        let quad: f64 = self
            .p
            .iter()
            .zip(weights.iter())
            .map(|(p, &w)| w * p.dot_quadratic(x))
            .sum();
        (self.theta + quad).ln()
    }
}

trait QuadraticForm {
    fn dot_quadratic(&self, x: &DVector<f64>) -> f64;
}

impl QuadraticForm for DMatrix<f64> {
    fn dot_quadratic(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(self * x))
    }
}

pub fn lyapunov_value(spec: &LyapunovSpec, x: &DVector<f64>, phi: &FilterState) -> f64 {
    spec.value_at(x, phi.as_vector())
}

/// Closed form of `L V_theta`:
///
/// ```text
/// [2 x'P(phi) C phi + (x'P~x)' Pi' phi] / w
///   + tr(P(phi) + 2 C D (P~x)') / w
///   - |2 P(phi) x + C D (x'P~x)|^2 / (2 w^2),      w = theta + x'P(phi)x
/// ```
///
/// where `x'P~x = (x'P_1x, ..., x'P_mx)'` and `P~x = (P_1x, ..., P_mx)`.
pub fn generator_apply_closed_form(
    spec: &LyapunovSpec,
    modes: &ModeSet,
    gen: &GeneratorMatrix,
    law: &ControlLaw,
    x: &DVector<f64>,
    phi: &FilterState,
) -> f64 {
    let v = phi.as_vector();
    let u = feedback_control(law, phi, x);
    let c = build_c(modes, x, &u).expect("dimensions checked by ModeSet").c;
    let d = build_d(phi);
    let p_phi = spec.blend(v);
    let p_phi_x = &p_phi * x;
    let w = spec.theta + x.dot(&p_phi_x);
    let m = spec.p.len();
    let mut px = DMatrix::zeros(x.len(), m);
    let mut quad = DVector::zeros(m);
    for (i, p) in spec.p.iter().enumerate() {
        let pix = p * x;
        quad[i] = x.dot(&pix);
        px.set_column(i, &pix);
    }
    let cd = &c * &d;
    let first = 2.0 * p_phi_x.dot(&(&c * v)) + quad.dot(&gen.drift(v));
    let second = p_phi.trace() + 2.0 * cd.component_mul(&px).sum();
    let grad_dir = p_phi_x * 2.0 + &cd * &quad;
    (first + second) / w - grad_dir.norm_squared() / (2.0 * w * w)
}

/// Finite-difference evaluation of
/// `L h = grad h . (C phi, Pi' phi) + tr(G Hess(h) G') / 2`, `G = (I_n, C D')`.
///
/// `rel_step` scales per coordinate as `rel_step * (1 + |y_k|)`.
pub fn generator_apply_numeric<F>(
    h: F,
    modes: &ModeSet,
    gen: &GeneratorMatrix,
    law: &ControlLaw,
    x: &DVector<f64>,
    phi: &FilterState,
    rel_step: f64,
) -> f64
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let n = x.len();
    let m = phi.len();
    let dim = n + m;
    let v = phi.as_vector();
    let u = feedback_control(law, phi, x);
    let c = build_c(modes, x, &u).expect("dimensions checked by ModeSet").c;
    let d = build_d(phi);

    let mut y = DVector::zeros(dim);
    y.rows_mut(0, n).copy_from(x);
    y.rows_mut(n, m).copy_from(v);
    let eval = |pt: &DVector<f64>| h(&pt.rows(0, n).into_owned(), &pt.rows(n, m).into_owned());
    let steps: Vec<f64> = y.iter().map(|yk| rel_step * (1.0 + yk.abs())).collect();
    let shifted = |moves: &[(usize, f64)]| {
        let mut pt = y.clone();
        for &(k, s) in moves {
            pt[k] += s;
        }
        eval(&pt)
    };

    let center = eval(&y);
    let mut grad = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let hk = steps[k];
        let fp = shifted(&[(k, hk)]);
        let fm = shifted(&[(k, -hk)]);
        grad[k] = (fp - fm) / (2.0 * hk);
        hess[(k, k)] = (fp - 2.0 * center + fm) / (hk * hk);
        for l in 0..k {
            let hl = steps[l];
            let val = (shifted(&[(k, hk), (l, hl)]) - shifted(&[(k, hk), (l, -hl)]) - shifted(&[(k, -hk), (l, hl)])
                + shifted(&[(k, -hk), (l, -hl)]))
                / (4.0 * hk * hl);
            hess[(k, l)] = val;
            hess[(l, k)] = val;
        }
    }

    let mut drift = DVector::zeros(dim);
    drift.rows_mut(0, n).copy_from(&(&c * v));
    drift.rows_mut(n, m).copy_from(&gen.drift(v));
    let mut g = DMatrix::zeros(n, dim);
    g.view_mut((0, 0), (n, n)).fill_with_identity();
    g.view_mut((0, n), (n, m)).copy_from(&(&c * d.transpose()));
    grad.dot(&drift) + 0.5 * (&g * hess * g.transpose()).trace()
}

/// One closed-form vs finite-difference comparison of `L V_theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCheck {
    pub theta: f64,
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub closed_form: f64,
    pub numeric: f64,
    /// `|closed - numeric| / max(|closed|, 1e-2)`.
    pub rel_gap: f64,
}

/// Compares both evaluations at `num_points` random states: `x` with
/// log-uniform magnitude in `[0.1, 100]`, `phi` uniform on the open simplex,
/// `theta` cycling through `thetas`.
pub fn cross_check_generator(
    modes: &ModeSet,
    gen: &GeneratorMatrix,
    law: &ControlLaw,
    thetas: &[f64],
    num_points: usize,
    seed: u64,
) -> Vec<GeneratorCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_points)
        .map(|k| {
            let theta = thetas[k % thetas.len()];
            let spec = LyapunovSpec::new(theta, law.p.clone()).expect("theta is positive");
            let radius = 10f64.powf(3.0 * rng.random::<f64>() - 1.0);
            let dir = DVector::from_fn(modes.n(), |_, _| 2.0 * rng.random::<f64>() - 1.0);
            let x = dir.normalize() * radius;
            let phi = FilterState::new(crate::instances::interior_point(&mut rng, modes.m()))
                .expect("interior point lies on the simplex");
            let closed_form = generator_apply_closed_form(&spec, modes, gen, law, &x, &phi);
            let numeric =
                generator_apply_numeric(|x, w| spec.value_at(x, w), modes, gen, law, &x, &phi, DEFAULT_FD_STEP);
            GeneratorCheck {
                theta,
                x: x.as_slice().to_vec(),
                phi: phi.as_vector().as_slice().to_vec(),
                closed_form,
                numeric,
                rel_gap: (closed_form - numeric).abs() / closed_form.abs().max(1e-2),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn two_mode_law() -> (ModeSet, CostSpec, ControlLaw) {
        let modes = ModeSet::new(vec![scalar(0.5), scalar(-1.0)], vec![scalar(1.0), scalar(2.0)]).unwrap();
        let cost = CostSpec::new(scalar(1.0), scalar(2.0)).unwrap();
        let sol = RiccatiSolution {
            p: vec![scalar(3.0), scalar(0.5)],
            residuals: vec![0.0; 2],
            iterations: 0,
        };
        let law = ControlLaw::new(&sol, &modes, &cost);
        (modes, cost, law)
    }

    #[test]
    fn control_vanishes_at_origin_and_collapses_at_vertex() {
        let (_, _, law) = two_mode_law();
        let zero = DVector::zeros(1);
        assert_eq!(feedback_control(&law, &FilterState::uniform(2), &zero)[0], 0.0);
        let x = DVector::from_element(1, 2.0);
        // -R^-1 B_2 P_2 x = -(1/2)(2)(0.5)(2).
        let u = feedback_control(&law, &FilterState::vertex(2, 1), &x);
        assert!((u[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_value_examples() {
        let spec = LyapunovSpec::new(2.5, vec![scalar(1.0), scalar(1.0)]).unwrap();
        let phi = FilterState::uniform(2);
        assert_eq!(lyapunov_value(&spec, &DVector::zeros(1), &phi), 2.5_f64.ln());
        let spec = LyapunovSpec::new(1.0, vec![DMatrix::identity(2, 2)]).unwrap();
        let r = (std::f64::consts::E - 1.0).sqrt() / 2.0_f64.sqrt();
        let x = DVector::from_row_slice(&[r, r]);
        assert!((lyapunov_value(&spec, &x, &FilterState::vertex(1, 0)) - 1.0).abs() < 1e-15);
        assert!(LyapunovSpec::new(0.0, vec![]).is_none());
    }

    #[test]
    fn generator_at_origin_is_trace_term() {
        let (modes, _, law) = two_mode_law();
        let gen = GeneratorMatrix::two_state(1.0, 1.0).unwrap();
        let spec = LyapunovSpec::new(4.0, law.p.clone()).unwrap();
        let phi = FilterState::new(DVector::from_row_slice(&[0.3, 0.7])).unwrap();
        let val = generator_apply_closed_form(&spec, &modes, &gen, &law, &DVector::zeros(1), &phi);
        // tr(P(phi)) / theta with P(phi) = 0.3*3 + 0.7*0.5.
        assert!((val - 1.25 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_generator_annihilates_constants() {
        let (modes, _, law) = two_mode_law();
        let gen = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
        let phi = FilterState::new(DVector::from_row_slice(&[0.4, 0.6])).unwrap();
        let x = DVector::from_element(1, 3.0);
        let val = generator_apply_numeric(|_, _| 7.0, &modes, &gen, &law, &x, &phi, DEFAULT_FD_STEP);
        assert!(val.abs() < 1e-9);
    }

    #[test]
    fn growth_constant() {
        let (_, _, law) = two_mode_law();
        // max(|1*3|, |2*0.5|) / 2.
        assert!((law.linear_growth_constant() - 1.5).abs() < 1e-14);
    }
}
