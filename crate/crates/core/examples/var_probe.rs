//! Probe: flow-perturbation error scaling and symplectic defect structure.

use nalgebra::DVector;
use nog_core::boundary::FixedComponents;
use nog_core::dynamics::{Chart, EngineParams, Model, V7};
use nog_core::extremal::{propagate, ControlLaw};
use nog_core::ode::Integrator;
use nog_core::shooting::{solve_shooting, BoundaryProblem, ShootingOptions};
use nog_core::units::{coe_to_cartesian, ClassicalElements};
use nog_core::variational::{
    propagate_variational, terminal_values, NominalStructure, OrbitalSystem, Side,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() {
    let model = Model::new(
        Chart::Cartesian,
        EngineParams {
            u_max: 0.1,
            beta: 0.15,
            m_dry: 0.3,
        },
    );
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
    let bp = BoundaryProblem {
        model,
        t0: 0.0,
        tf: 12.0,
        x0,
        constraint: Arc::new(FixedComponents::new(vec![
            (0, 1.0),
            (1, 0.0),
            (2, 0.0),
            (3, 0.0),
            (4, 1.0),
            (5, 0.0),
        ])),
    };
    let opts = ShootingOptions {
        tol: 1e-11,
        max_iters: 40,
        fd_step: 1e-8,
        integ: Integrator::with_tol(1e-12, 1e-12),
    };
    let seed = V7::from([-21.633, -3.0697, 0.8995, -1.6445, -11.5427, -5.9865, -3.1577]);
    let (_, traj, _) = solve_shooting(&bp, ControlLaw::BangBang, &seed, &opts).unwrap();
    println!("switches: {:?}", traj.switches.iter().map(|s| s.t).collect::<Vec<_>>());

    let zf = traj.point_at_hi();
    let grad = bp.constraint.gradient(&zf.x);
    let nu = bp.multipliers(&zf.x, &zf.p);
    let terminal = terminal_values(&grad, &[], nu.as_slice(), traj.t_hi).unwrap();
    let nominal = NominalStructure::from_trajectory(&traj);
    let sys = OrbitalSystem(model);
    let integ = Integrator::with_tol(1e-12, 1e-12);
    let hist = propagate_variational(&sys, &nominal, &terminal, &integ).unwrap();

    // per-arc symplectic defect detail
    for (k, arc) in hist.arcs.iter().enumerate() {
        let mut reference: Option<nalgebra::DMatrix<f64>> = None;
        let mut worst = 0.0_f64;
        for step in &arc.steps {
            let t = step.t0.clamp(arc.t_start, arc.t_end);
            let s = hist.sample(t, Side::Right).unwrap();
            let form = s.xq.transpose() * &s.pq - s.pq.transpose() * &s.xq;
            match &reference {
                None => reference = Some(form),
                Some(r) => worst = worst.max((form - r).norm() / r.norm().max(1.0)),
            }
        }
        println!(
            "arc {k}: [{:.4}, {:.4}] rho-regime steps = {:<4} defect = {:.3e}",
            arc.t_start,
            arc.t_end,
            arc.steps.len(),
            worst
        );
    }

    // flow-perturbation error vs scale at a few probes
    let zf_packed = traj.point_at_hi().packed();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut dirv = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
    dirv /= dirv.norm();
    for &scale in &[1e-5, 1e-6, 3e-7, 1e-7, 1e-8] {
        let dq = scale * &dirv;
        let dx: DVector<f64> = &terminal.xq * &dq;
        let dp: DVector<f64> = &terminal.pq * &dq;
        let mut zp = zf_packed;
        for i in 0..7 {
            zp[i] += dx[i];
            zp[7 + i] += dp[i];
        }
        let pert = propagate(&model, ControlLaw::BangBang, traj.t_hi, &zp, traj.t_lo, &integ).unwrap();
        print!("scale {scale:.0e}: ");
        for &t in &[0.202, 1.0, 4.33, 6.0, 9.0, 11.0, 11.9] {
            let s = hist.sample(t, Side::Right).unwrap();
            let z_bar = traj.sample(t).unwrap().packed();
            let z_p = pert.sample(t).unwrap().packed();
            let pdx: DVector<f64> = &s.xq * &dq;
            let pdp: DVector<f64> = &s.pq * &dq;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..7 {
                num += (z_p[i] - z_bar[i] - pdx[i]).powi(2) + (z_p[7 + i] - z_bar[7 + i] - pdp[i]).powi(2);
                den += pdx[i].powi(2) + pdp[i].powi(2);
            }
            print!(" {t}:{:.1e}", (num / den).sqrt());
        }
        println!();
    }

    // magnitude of the variational matrices near t0 and dt/dq rows
    for s in &hist.switches {
        println!(
            "switch t = {:<9.5} |dt_dq| = {:.3e}  H1dot = {:+.3e}  consistency = {:.1e}",
            s.t,
            s.sensitivity.dt_dq.norm(),
            s.sensitivity.h1_dot,
            s.dt_dq_consistency
        );
    }
    let s0 = hist.sample(0.19, Side::Right).unwrap();
    println!("|Xq(0.19)| = {:.3e}  |Pq(0.19)| = {:.3e}", s0.xq.norm(), s0.pq.norm());

    for &t in &[0.2, 2.0, 5.0, 8.0, 9.0, 9.9, 10.5, 11.0, 11.3, 11.5, 11.7, 11.9, 11.95, 11.99, 11.999] {
        let sxx = hist.sample(t, Side::Right).unwrap();
        let svd = sxx.xq.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        println!("t = {t:<8} det = {:+.3e}  inv_cond = {:.3e}", sxx.xq.determinant(), smin / smax);
    }
    for s in &hist.switches {
        let d = &s.sensitivity.dt_dq;
        let gp = &s.sensitivity.grad_p;
        let lu_l = s.xq_left.clone().lu();
        let lu_r = s.xq_right.clone().lu();
        let fl = 1.0 - s.delta_rho * (d * lu_l.solve(gp).unwrap())[0];
        let fr = 1.0 + s.delta_rho * (d * lu_r.solve(gp).unwrap())[0];
        let dl = s.xq_left.determinant();
        let dr = s.xq_right.determinant();
        println!(
            "switch {:.4}: det_l = {:+.3e} det_r = {:+.3e}  factor_l = {:+.6e} factor_r = {:+.6e}  det_r/det_l = {:+.3e}",
            s.t, dl, dr, fl, fr, dr / dl
        );
    }
    let report = nog_core::conditions::evaluate_conditions(&hist).unwrap();
    println!("jc = {}, tc = {}", report.jc_pass, report.tc_pass);
    {
        use rand::prelude::*;
        let mut rng2 = ChaCha8Rng::seed_from_u64(91);
        let raw = nalgebra::DMatrix::<f64>::from_fn(7, 7, |_, _| rng2.gen_range(-1.0..1.0));
        let q = raw.qr().q();
        let dsc = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_fn(7, |_, _| rng2.gen_range(0.5..2.0)));
        let m = q * dsc;
        let rp = nog_core::variational::VariationalPair { t: terminal.t, xq: &terminal.xq * &m, pq: &terminal.pq * &m };
        let h2 = propagate_variational(&sys, &nominal, &rp, &integ).unwrap();
        let r2 = nog_core::conditions::evaluate_conditions(&h2).unwrap();
        println!("reparam jc = {}, tc = {}", r2.jc_pass, r2.tc_pass);
        for sp in &r2.switch_products {
            println!("  rp switch {:.4}: factor = {:+.6e} certified = {} product = {:+.3e}", sp.t, sp.factor, sp.certified, sp.product);
        }
        for iv in &r2.intervals {
            println!("  rp interval [{:.4}, {:.4}] crossings = {:?} dips = {:?} pockets = {:?} layer = {:?} min_ic = {:.2e}",
                iv.t_start, iv.t_end, iv.crossings, iv.floor_dips, iv.indeterminate_pockets, iv.terminal_layer, iv.min_inv_cond);
        }
    }
    for iv in &report.intervals {
        println!(
            "  interval [{:.4}, {:.4}] min|det| = {:.3e} @ {:.4}  max|det| = {:.3e}  crossings = {:?} pockets = {:?}",
            iv.t_start, iv.t_end, iv.min_abs_det, iv.argmin, iv.max_abs_det, iv.crossings, iv.indeterminate_pockets
        );
    }
    for sp in &report.switch_products {
        println!("  switch t = {:.4}: det_l = {:+.3e} det_r = {:+.3e} product = {:+.3e}", sp.t, sp.det_left, sp.det_right, sp.product);
    }
}
// appended: condition-report dump
