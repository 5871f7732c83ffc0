use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use switchstab_core::linalg::min_sym_eigenvalue;
use switchstab_core::wonham::filter_increment;
use switchstab_core::{
    build_c, build_d, filter_step, project_simplex, DMatrix, DVector, DriftStack, FilterState, GeneratorMatrix, ModeSet,
};

fn simplex_point(m: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(0.001f64..1.0, m).prop_map(|v| {
        let v = DVector::from_vec(v);
        &v / v.sum()
    })
}

/// Projection by enumerating supports: on support `S` the KKT point is
/// `v_S - (sum v_S - 1)/|S|`; keep the closest feasible one.
fn projection_oracle(v: &DVector<f64>) -> DVector<f64> {
    let m = v.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let shift = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut x = DVector::zeros(m);
        for &i in &support {
            x[i] = v[i] - shift;
        }
        if x.iter().any(|&e| e < 0.0) {
            continue;
        }
        let dist = (&x - v).norm_squared();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.unwrap().1
}

#[test]
fn drift_stack_examples() {
    let modes = ModeSet::new(
        vec![DMatrix::from_element(2, 2, 1.0), DMatrix::from_element(2, 2, -1.0)],
        vec![DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)],
    )
    .unwrap();
    let zero = build_c(&modes, &DVector::zeros(2), &DVector::zeros(1)).unwrap();
    assert_eq!(zero.c, DMatrix::zeros(2, 2));
    let single = ModeSet::new(vec![DMatrix::identity(2, 2)], vec![DMatrix::from_element(2, 1, 2.0)]).unwrap();
    let c = build_c(
        &single,
        &DVector::from_vec(vec![1.0, -1.0]),
        &DVector::from_vec(vec![0.5]),
    )
    .unwrap();
    assert_eq!(c.c, DMatrix::from_column_slice(2, 1, &[2.0, 0.0]));
    assert!(build_c(&single, &DVector::zeros(3), &DVector::zeros(1)).is_err());
}

#[test]
fn d_examples() {
    assert_eq!(build_d(&FilterState::vertex(2, 0)), DMatrix::zeros(2, 2));
    let d = build_d(&FilterState::uniform(2));
    assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]));
}

#[test]
fn projection_examples() {
    let p = project_simplex(&DVector::from_vec(vec![1.1, -0.1]));
    assert_eq!(p.as_vector(), &DVector::from_vec(vec![1.0, 0.0]));
    let feasible = DVector::from_vec(vec![0.2, 0.3, 0.5]);
    assert!((project_simplex(&feasible).as_vector() - &feasible).amax() < 1e-15);
}

#[test]
fn vertex_is_absorbing_without_switching() {
    let gen = GeneratorMatrix::new(DMatrix::zeros(3, 3)).unwrap();
    let drift = DriftStack {
        c: DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut phi = FilterState::vertex(3, 1);
    for _ in 0..1000 {
        let dx = DVector::from_fn(2, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.03 * z
        });
        phi = filter_step(&gen, &phi, &drift, &dx, 1e-3).unwrap();
        assert_eq!(phi, FilterState::vertex(3, 1));
    }
}

#[test]
fn non_finite_update_is_reported() {
    let gen = GeneratorMatrix::two_state(1.0, 1.0).unwrap();
    let drift = DriftStack {
        c: DMatrix::from_element(1, 2, f64::MAX),
    };
    let dx = DVector::from_element(1, f64::MAX);
    assert!(filter_step(&gen, &FilterState::uniform(2), &drift, &dx, 1e-3).is_err());
}

/// Two-mode chain observed through `dy = b_alpha dt + dW`, filtered at step
/// `dt` and at a much finer reference step with the same Brownian path.
fn terminal_gaps(dts: &[f64], fine: f64, paths: usize) -> Vec<f64> {
    let gen = GeneratorMatrix::two_state(1.0, 1.5).unwrap();
    let drift = DriftStack {
        c: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
    };
    let horizon = 1.0;
    let steps = (horizon / fine).round() as usize;
    let mut sq = vec![0.0; dts.len()];
    for p in 0..paths {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + p as u64);
        let chain = gen.sample_path(0, horizon, &mut rng).unwrap();
        let dy: Vec<f64> = (0..steps)
            .map(|k| {
                let alpha = chain.state_at(k as f64 * fine);
                let noise: f64 = StandardNormal.sample(&mut rng);
                drift.c[(0, alpha)] * fine + fine.sqrt() * noise
            })
            .collect();
        let run = |dt: f64| {
            let ratio = (dt / fine).round() as usize;
            let mut phi = FilterState::uniform(2);
            for chunk in dy.chunks(ratio) {
                let dx = DVector::from_element(1, chunk.iter().sum::<f64>());
                phi = filter_step(&gen, &phi, &drift, &dx, dt).unwrap();
            }
            phi.into_vector()
        };
        let reference = run(fine);
        for (k, &dt) in dts.iter().enumerate() {
            sq[k] += (run(dt) - &reference).norm_squared();
        }
    }
    sq.iter().map(|s| (s / paths as f64).sqrt()).collect()
}

#[test]
fn strong_error_shrinks_like_sqrt_dt() {
    let dts: Vec<f64> = (4..=9).map(|k| 2f64.powi(-k)).collect();
    let gaps = terminal_gaps(&dts, 2f64.powi(-15), 200);
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let order = switchstab_core::simulator::least_squares_slope(&xs, &ys);
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!((0.35..=1.2).contains(&order), "order {order}, gaps {gaps:?}");
}

proptest! {
    #[test]
    fn d_is_psd_and_annihilates_ones(v in simplex_point(3)) {
        let d = build_d(&FilterState::new(v).unwrap());
        prop_assert!((&d * DVector::from_element(3, 1.0)).amax() <= 1e-15);
        prop_assert!(min_sym_eigenvalue(&d) >= -1e-14);
        prop_assert_eq!(&d, &d.transpose());
    }

    #[test]
    fn projection_matches_enumeration(v in prop::collection::vec(-2.0f64..2.0, 4)) {
        let v = DVector::from_vec(v);
        let p = project_simplex(&v);
        prop_assert!((p.as_vector() - projection_oracle(&v)).amax() <= 1e-9);
        prop_assert!(p.as_vector().iter().all(|&e| e >= 0.0));
        prop_assert!((p.as_vector().sum() - 1.0).abs() <= 1e-12);
        let again = project_simplex(p.as_vector());
        prop_assert!((again.as_vector() - p.as_vector()).amax() <= 1e-15);
    }

    #[test]
    fn increment_conserves_mass(
        v in simplex_point(3),
        c in prop::collection::vec(-10.0f64..10.0, 6),
        dx in prop::collection::vec(-0.5f64..0.5, 2),
    ) {
        let gen = GeneratorMatrix::from_rows(&[
            vec![-1.0, 0.7, 0.3],
            vec![0.5, -0.5, 0.0],
            vec![1.0, 1.0, -2.0],
        ]).unwrap();
        let drift = DriftStack { c: DMatrix::from_row_slice(2, 3, &c) };
        let phi = FilterState::new(v).unwrap();
        let raw = filter_increment(&gen, &phi, &drift, &DVector::from_vec(dx), 1e-3).unwrap();
        prop_assert!((raw.sum() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn steps_stay_on_simplex(
        v in simplex_point(3),
        c in prop::collection::vec(-10.0f64..10.0, 6),
        dx in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        // Third mode absorbing.
        let gen = GeneratorMatrix::from_rows(&[
            vec![-1.0, 1.0, 0.0],
            vec![1.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ]).unwrap();
        let drift = DriftStack { c: DMatrix::from_row_slice(2, 3, &c) };
        let out = filter_step(&gen, &FilterState::new(v).unwrap(), &drift, &DVector::from_vec(dx), 1e-2).unwrap();
        prop_assert!(out.as_vector().iter().all(|&e| e >= 0.0));
        prop_assert!((out.as_vector().sum() - 1.0).abs() <= 1e-12);
    }
}
