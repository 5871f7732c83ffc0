use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchstab_core::controller::DEFAULT_FD_STEP;
use switchstab_core::instances::{self, Instance};
use switchstab_core::{
    check_pairwise_condition, feedback_control, generator_apply_closed_form, generator_apply_numeric, lyapunov_value,
    solve_coupled_riccati, ControlLaw, CostSpec, DMatrix, DVector, FilterState, GeneratorMatrix, LyapunovSpec, ModeSet,
    RiccatiSolution,
};

fn solved(inst: &Instance) -> (RiccatiSolution, ControlLaw) {
    let sol = solve_coupled_riccati(&inst.modes, &inst.cost, &inst.gen, 1e-11, 1000).unwrap();
    let law = ControlLaw::new(&sol, &inst.modes, &inst.cost);
    (sol, law)
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn scalar_instance() -> Instance {
    Instance {
        modes: ModeSet::new(vec![scalar(0.5), scalar(-1.0)], vec![scalar(1.0), scalar(1.0)]).unwrap(),
        cost: CostSpec::new(scalar(1.0), scalar(1.0)).unwrap(),
        gen: GeneratorMatrix::two_state(1.0, 1.0).unwrap(),
    }
}

fn phi(v: &[f64]) -> FilterState {
    FilterState::new(DVector::from_row_slice(v)).unwrap()
}

#[test]
fn control_examples() {
    let inst = instances::desk();
    let (sol, law) = solved(&inst);
    assert_eq!(
        feedback_control(&law, &FilterState::uniform(2), &DVector::zeros(2)),
        DVector::zeros(1)
    );
    let x = DVector::from_vec(vec![0.7, -1.3]);
    for j in 0..2 {
        let u = feedback_control(&law, &FilterState::vertex(2, j), &x);
        let single = -(inst.cost.r().clone().try_inverse().unwrap() * inst.modes.b(j).transpose() * &sol.p[j] * &x);
        assert!((u - single).amax() < 1e-14);
    }
}

#[test]
fn scalar_convex_combination() {
    let inst = scalar_instance();
    let (sol, law) = solved(&inst);
    let (p1, p2) = (sol.p[0][(0, 0)], sol.p[1][(0, 0)]);
    let x = DVector::from_element(1, 2.5);
    let u = feedback_control(&law, &phi(&[0.3, 0.7]), &x);
    assert!((u[0] + (0.3 * p1 + 0.7 * p2) * 2.5).abs() < 1e-14);
}

#[test]
fn lyapunov_value_examples() {
    let spec = LyapunovSpec::new(3.0, vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)]).unwrap();
    assert_eq!(
        lyapunov_value(&spec, &DVector::zeros(2), &FilterState::uniform(2)),
        3.0f64.ln()
    );
    let spec = LyapunovSpec::new(1.0, spec.p).unwrap();
    let r = (std::f64::consts::E - 1.0).sqrt();
    let x = DVector::from_vec(vec![r / 2f64.sqrt(), r / 2f64.sqrt()]);
    assert!((lyapunov_value(&spec, &x, &phi(&[0.2, 0.8])) - 1.0).abs() < 1e-15);
    assert!(LyapunovSpec::new(0.0, vec![]).is_none());
}

#[test]
fn lyapunov_value_matches_direct_quadratic_form() {
    let inst = instances::desk();
    let (sol, _) = solved(&inst);
    let spec = LyapunovSpec::new(2.0, sol.p.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let x = DVector::from_fn(2, |_, _| 10.0 * (rng.random::<f64>() - 0.5));
        let w = instances::interior_point(&mut rng, 2);
        let mut quad = 0.0;
        for i in 0..2 {
            for r in 0..2 {
                for c in 0..2 {
                    quad += w[i] * x[r] * sol.p[i][(r, c)] * x[c];
                }
            }
        }
        let value = lyapunov_value(&spec, &x, &FilterState::new(w).unwrap());
        assert!((value - (2.0 + quad).ln()).abs() < 1e-12);
    }
}

#[test]
fn closed_form_at_origin_is_trace_over_theta() {
    let inst = instances::desk();
    let (sol, law) = solved(&inst);
    let spec = LyapunovSpec::new(4.0, sol.p.clone()).unwrap();
    let f = phi(&[0.25, 0.75]);
    let value = generator_apply_closed_form(&spec, &inst.modes, &inst.gen, &law, &DVector::zeros(2), &f);
    let expected = (0.25 * sol.p[0].trace() + 0.75 * sol.p[1].trace()) / 4.0;
    assert!((value - expected).abs() < 1e-15);
}

#[test]
fn numeric_generator_annihilates_constants() {
    let inst = instances::desk();
    let (_, law) = solved(&inst);
    let x = DVector::from_vec(vec![1.5, -0.5]);
    let value = generator_apply_numeric(
        |_, _| 7.0,
        &inst.modes,
        &inst.gen,
        &law,
        &x,
        &phi(&[0.4, 0.6]),
        DEFAULT_FD_STEP,
    );
    assert!(value.abs() < 1e-9);
}

#[test]
fn numeric_generator_on_linear_function_at_vertex() {
    let inst = instances::desk();
    let (_, law) = solved(&inst);
    let frozen = GeneratorMatrix::new(DMatrix::zeros(2, 2)).unwrap();
    let a = DVector::from_vec(vec![2.0, -1.0]);
    let x = DVector::from_vec(vec![0.3, 0.9]);
    let vertex = FilterState::vertex(2, 0);
    let value = generator_apply_numeric(
        |x, _| a.dot(x),
        &inst.modes,
        &frozen,
        &law,
        &x,
        &vertex,
        DEFAULT_FD_STEP,
    );
    let u = feedback_control(&law, &vertex, &x);
    let expected = a.dot(&(inst.modes.a(0) * &x + inst.modes.b(0) * u));
    assert!((value - expected).abs() < 1e-8, "{value} vs {expected}");
}

#[test]
fn closed_form_agrees_with_finite_differences() {
    for inst in [instances::desk(), instances::random(21, 3, 2, 3)] {
        let (sol, law) = solved(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for k in 0..100 {
            let scale = [0.1, 1.0, 10.0, 100.0][k % 4];
            let x = DVector::from_fn(inst.modes.n(), |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
            let f = FilterState::new(instances::interior_point(&mut rng, inst.modes.m())).unwrap();
            let spec = LyapunovSpec::new([0.5, 1.0, 10.0][k % 3], sol.p.clone()).unwrap();
            let closed = generator_apply_closed_form(&spec, &inst.modes, &inst.gen, &law, &x, &f);
            let numeric = generator_apply_numeric(
                |x, w| spec.value_at(x, w),
                &inst.modes,
                &inst.gen,
                &law,
                &x,
                &f,
                DEFAULT_FD_STEP,
            );
            assert!(
                (closed - numeric).abs() <= (1e-4 * closed.abs()).max(1e-6),
                "point {k}: {closed} vs {numeric}"
            );
        }
    }
}

#[test]
fn generator_bound_on_random_certified_instance() {
    let (inst, sol, law) = (0..)
        .map(|seed| instances::random(seed, 3, 1, 3))
        .find_map(|inst| {
            let sol = solve_coupled_riccati(&inst.modes, &inst.cost, &inst.gen, 1e-11, 1000).ok()?;
            check_pairwise_condition(&sol, &inst.modes, &inst.cost)
                .satisfied
                .then(|| {
                    let law = ControlLaw::new(&sol, &inst.modes, &inst.cost);
                    (inst, sol, law)
                })
        })
        .unwrap();
    let gamma = sol.trace_sum();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &theta in &[1.0, 10.0, 100.0] {
        let spec = LyapunovSpec::new(theta, sol.p.clone()).unwrap();
        for _ in 0..2000 {
            let radius = 10f64.powf(6.0 * rng.random::<f64>() - 3.0);
            let dir = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
            let x = dir.normalize() * radius;
            let f = FilterState::new(instances::interior_point(&mut rng, 3)).unwrap();
            let value = generator_apply_closed_form(&spec, &inst.modes, &inst.gen, &law, &x, &f);
            assert!(value <= gamma / theta + 1e-8, "{value} > {}", gamma / theta);
        }
    }
}

fn desk_law() -> ControlLaw {
    solved(&instances::desk()).1
}

proptest! {
    #[test]
    fn control_is_homogeneous_in_x(
        x in prop::collection::vec(-100.0f64..100.0, 2),
        c in -10.0f64..10.0,
        w in 0.0f64..1.0,
    ) {
        let law = desk_law();
        let x = DVector::from_vec(x);
        let f = phi(&[w, 1.0 - w]);
        let scaled = feedback_control(&law, &f, &(&x * c));
        let expected = feedback_control(&law, &f, &x) * c;
        prop_assert!((scaled - &expected).amax() <= 1e-12 * (1.0 + expected.amax()));
    }

    #[test]
    fn control_is_linear_in_weights(x in prop::collection::vec(-100.0f64..100.0, 2), w in 0.0f64..1.0) {
        let law = desk_law();
        let x = DVector::from_vec(x);
        let blended = feedback_control(&law, &phi(&[w, 1.0 - w]), &x);
        let combined = feedback_control(&law, &FilterState::vertex(2, 0), &x) * w
            + feedback_control(&law, &FilterState::vertex(2, 1), &x) * (1.0 - w);
        prop_assert!((blended - &combined).amax() <= 1e-12 * (1.0 + combined.amax()));
    }

    #[test]
    fn control_grows_at_most_linearly(x in prop::collection::vec(-1e3f64..1e3, 2), w in 0.0f64..1.0) {
        let law = desk_law();
        let x = DVector::from_vec(x);
        let u = feedback_control(&law, &phi(&[w, 1.0 - w]), &x);
        prop_assert!(u.norm() <= law.linear_growth_constant() * x.norm() * (1.0 + 1e-12));
    }
}
