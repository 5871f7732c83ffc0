//! Fixtures shared by the benchmarks.

use switchstab_core::instances::{self, Instance};
use switchstab_core::{
    solve_coupled_riccati, ControlLaw, ControlPolicy, DVector, FilterState, RiccatiSolution, SimConfig,
};

pub const TOL: f64 = 1e-10;
pub const MAX_OUTER: usize = 500;

pub fn solve(inst: &Instance) -> RiccatiSolution {
    solve_coupled_riccati(&inst.modes, &inst.cost, &inst.gen, TOL, MAX_OUTER).expect("benchmark instance solves")
}

pub fn desk_law() -> (Instance, ControlLaw) {
    let inst = instances::desk();
    let law = ControlLaw::new(&solve(&inst), &inst.modes, &inst.cost);
    (inst, law)
}

/// Closed-loop desk configuration over `horizon`.
pub fn desk_config(horizon: f64, seed: u64) -> SimConfig {
    let (inst, law) = desk_law();
    let n = inst.modes.n();
    let m = inst.modes.m();
    SimConfig::new(
        inst.modes,
        inst.cost,
        inst.gen,
        ControlPolicy::CertaintyEquivalent(law),
        DVector::from_element(n, 1.0),
        FilterState::uniform(m),
        horizon,
        seed,
    )
}
