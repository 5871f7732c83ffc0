//! Reference problem instances: the two-mode desk instance and a seeded
//! generator of random well-posed instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::markov_chain::GeneratorMatrix;
use crate::model::{CostSpec, ModeSet};

/// Modes, weights and generator of one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub modes: ModeSet,
    pub cost: CostSpec,
    pub gen: GeneratorMatrix,
}

/// Two modes, n = 2, d = 1: mode 0 has an eigenvalue at +0.5, mode 1 is
/// Hurwitz, `B = (0, 1)'` in both, `Q = I`, `R = 1`, unit switching rates.
pub fn desk() -> Instance {
    let a1 = DMatrix::from_row_slice(2, 2, &[0.5, 2.0, 0.0, -2.0]);
    let a2 = DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 0.0, -2.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    Instance {
        modes: ModeSet::new(vec![a1, a2], vec![b.clone(), b]).expect("static dimensions"),
        cost: CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).expect("static weights"),
        gen: GeneratorMatrix::two_state(1.0, 1.0).expect("static generator"),
    }
}

/// Random instance with `n` states, `d` inputs and `m` modes: entries of
/// `A_i` uniform in `[-1, 1]` shifted towards stability, `B_i` uniform in
/// `[-1, 1]`, rates uniform in `[0.2, 1.5]`, `Q = I`, `R = I`.
pub fn random(seed: u64, n: usize, d: usize, m: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| rng.random::<f64>() * (hi - lo) + lo;
    let a = (0..m)
        .map(|_| {
            let mut a = DMatrix::from_fn(n, n, |_, _| uniform(-1.0, 1.0));
            for k in 0..n {
                a[(k, k)] -= 0.5;
            }
            a
        })
        .collect();
    let b = (0..m)
        .map(|_| DMatrix::from_fn(n, d, |_, _| uniform(-1.0, 1.0)))
        .collect();
    let rates = DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { uniform(0.2, 1.5) });
    let mut rates = rates;
    for i in 0..m {
        let off: f64 = rates.row(i).sum();
        rates[(i, i)] = -off;
    }
    Instance {
        modes: ModeSet::new(a, b).expect("consistent dimensions"),
        cost: CostSpec::new(DMatrix::identity(n, n), DMatrix::identity(d, d)).expect("identity weights"),
        gen: GeneratorMatrix::new(rates).expect("valid rates"),
    }
}

/// Uniform random point strictly inside the `m`-simplex.
pub fn interior_point<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    loop {
        let e = DVector::from_fn(m, |_, _| -(1.0 - rng.random::<f64>()).ln());
        let p = &e / e.sum();
        if p.iter().all(|&v| v > 1e-3) {
            return p;
        }
    }
}
