//! Scratch driver for the desk-scale transfer: solves the energy problem
//! from random starts and continues to the fuel problem, printing the path.

use nog_core::boundary::FixedComponents;
use nog_core::dynamics::{Chart, EngineParams, Model, V7};
use nog_core::extremal::Regime;
use nog_core::ode::Integrator;
use nog_core::shooting::{
    continue_to_fuel, solve_smoothed_multistart, BoundaryProblem, ContinuationOptions,
    MultiStartOptions, ShootingOptions,
};
use nog_core::units::{coe_to_cartesian, ClassicalElements};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let tf: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(14.0);
    let f0: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(std::f64::consts::PI);
    let e0: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let umax: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let engine = EngineParams {
        u_max: umax,
        beta: 0.15,
        m_dry: 0.3,
    };
    let model = Model::new(Chart::Cartesian, engine);

    // initial orbit: mildly elliptic, slightly inclined, at apogee
    let el0 = ClassicalElements {
        a: 0.75,
        e: e0,
        i: 0.1,
        argp: 0.0,
        raan: 0.0,
        true_anomaly: f0,
    };
    let (r0, v0) = coe_to_cartesian(&el0, 1.0).unwrap();
    let mut x0 = V7::zeros();
    for i in 0..3 {
        x0[i] = r0[i];
        x0[3 + i] = v0[i];
    }
    x0[6] = 1.0;

    // target: rendezvous on the unit circular equatorial orbit at longitude 0
    let targets = vec![
        (0usize, 1.0),
        (1usize, 0.0),
        (2usize, 0.0),
        (3usize, 0.0),
        (4usize, 1.0),
        (5usize, 0.0),
    ];
    let bp = BoundaryProblem {
        model,
        t0: 0.0,
        tf,
        x0,
        constraint: Arc::new(FixedComponents::new(targets)),
    };

    let shooting = ShootingOptions {
        tol: 1e-10,
        max_iters: 60,
        fd_step: 1e-8,
        integ: Integrator::with_tol(1e-12, 1e-12),
    };

    let t_start = Instant::now();
    println!("solving energy problem (lambda = 0), tf = {tf}, u_max = {umax}");
    let ms = MultiStartOptions::default();
    match solve_smoothed_multistart(&bp, 0.0, &ms, &shooting) {
        Ok((p0, traj, log)) => {
            println!(
                "  converged: residual = {:.3e}, iters = {}, switches = {}, fuel = {:.4}, {:.2?}",
                log.final_residual(),
                log.n_steps(),
                traj.switches.len(),
                traj.fuel_cost(),
                t_start.elapsed()
            );
            println!("  p0 = {:?}", p0.as_slice());
            let energy_fuel = traj.fuel_cost();

            let copts = ContinuationOptions {
                shooting,
                ..Default::default()
            };
            let t_cont = Instant::now();
            match continue_to_fuel(&bp, &p0, 0.0, &copts) {
                Ok(res) => {
                    println!("continuation path:");
                    for s in &res.path {
                        println!(
                            "  lambda = {:<8.4} residual = {:.2e}  switches = {:>2}  newton steps = {}",
                            s.lambda, s.residual, s.switches, s.accepted_steps
                        );
                    }
                    let traj = &res.trajectory;
                    println!(
                        "fuel-optimal: switches = {}, burn arcs = {}, fuel = {:.4} (energy sol: {:.4}), drift = {:.2e}, {:.2?}",
                        traj.switches.len(),
                        traj.arcs.iter().filter(|a| a.regime == Regime::Full).count(),
                        traj.fuel_cost(),
                        energy_fuel,
                        traj.hamiltonian_drift(),
                        t_cont.elapsed()
                    );
                    println!("  regular switchings: {}", traj.all_switchings_regular());
                    println!("  p0 = {:?}", res.p0.as_slice());
                    for s in &traj.switches {
                        println!(
                            "    t = {:<10.5} drho = {:+.0} H1dot = {:+.3e}",
                            s.t, s.delta_rho, s.h1_dot
                        );
                    }
                }
                Err(e) => println!("continuation failed: {e}"),
            }
        }
        Err(e) => println!("energy solve failed: {e}"),
    }
}
