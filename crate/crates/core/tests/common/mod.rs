//! Shared desk-scale transfer fixture: a 2.5-revolution Cartesian-chart
//! rendezvous with a known bang-bang solution. Tests seed the event-locked
//! solve from a frozen coarse costate so the fixture is fast and
//! deterministic; the full continuation from random starts is exercised by
//! the acceptance suite.

use nog_core::boundary::FixedComponents;
use nog_core::dynamics::{Chart, EngineParams, Model, V7};
use nog_core::extremal::{ControlLaw, ExtremalTrajectory};
use nog_core::ode::Integrator;
use nog_core::shooting::{solve_shooting, BoundaryProblem, ShootingOptions};
use nog_core::units::{coe_to_cartesian, ClassicalElements};
use std::sync::{Arc, OnceLock};

pub const DESK_TF: f64 = 12.0;

/// Coarse initial costate near the desk-scale fuel-optimal solution
/// (obtained offline by the energy-to-fuel continuation; truncated digits so
/// the fixture still has to perform a genuine solve).
pub const DESK_P0_SEED: [f64; 7] = [-21.633, -3.0697, 0.8995, -1.6445, -11.5427, -5.9865, -3.1577];

pub fn desk_engine() -> EngineParams {
    EngineParams {
        u_max: 0.1,
        beta: 0.15,
        m_dry: 0.3,
    }
}

pub fn desk_problem() -> BoundaryProblem {
    let model = Model::new(Chart::Cartesian, desk_engine());
    let el0 = ClassicalElements {
        a: 0.75,
        e: 0.2,
        i: 0.1,
        argp: 0.0,
        raan: 0.0,
        true_anomaly: 0.0,
    };
    let (r0, v0) = coe_to_cartesian(&el0, 1.0).unwrap();
    let mut x0 = V7::zeros();
    for i in 0..3 {
        x0[i] = r0[i];
        x0[3 + i] = v0[i];
    }
    x0[6] = 1.0;
    BoundaryProblem {
        model,
        t0: 0.0,
        tf: DESK_TF,
        x0,
        constraint: Arc::new(FixedComponents::new(vec![
            (0, 1.0),
            (1, 0.0),
            (2, 0.0),
            (3, 0.0),
            (4, 1.0),
            (5, 0.0),
        ])),
    }
}

pub struct DeskNominal {
    pub bp: BoundaryProblem,
    pub p0: V7,
    pub trajectory: ExtremalTrajectory,
}

static DESK: OnceLock<DeskNominal> = OnceLock::new();

pub fn desk_nominal() -> &'static DeskNominal {
    DESK.get_or_init(|| {
        let bp = desk_problem();
        let opts = ShootingOptions {
            tol: 1e-11,
            max_iters: 40,
            fd_step: 1e-8,
            integ: Integrator::with_tol(1e-12, 1e-12),
        };
        let (p0, trajectory, log) = solve_shooting(
            &bp,
            ControlLaw::BangBang,
            &V7::from(DESK_P0_SEED),
            &opts,
        )
        .expect("desk-scale bang-bang solve from the frozen seed");
        assert!(log.final_residual() < 1e-11);
        assert!(trajectory.all_switchings_regular());
        assert!(trajectory.switches.len() >= 2);
        DeskNominal { bp, p0, trajectory }
    })
}
