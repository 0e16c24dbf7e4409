//! Two-body-plus-thrust fields and Hamiltonian pieces in the Cartesian chart,
//! generic over the scalar so dual numbers can flow through.
//!
//! State layout: [rx, ry, rz, vx, vy, vz, m]; costate [p_r, p_v, p_m].

use crate::dynamics::EngineParams;
use crate::scalar::{norm3, Real};
use nalgebra::{Matrix3, SMatrix, Vector3};

pub fn drift<S: Real>(x: &[S; 7], mu: S) -> [S; 7] {
    let r = [x[0], x[1], x[2]];
    let rn = norm3(&r);
    let c = -mu / (rn * rn * rn);
    [
        x[3],
        x[4],
        x[5],
        c * r[0],
        c * r[1],
        c * r[2],
        S::zero(),
    ]
}

/// Thrust field for a unit inertial direction `tau`, full throttle.
pub fn thrust<S: Real>(x: &[S; 7], tau: &[S; 3], eng: &EngineParams) -> [S; 7] {
    let umax = S::from_f64(eng.u_max);
    let a = umax / x[6];
    [
        S::zero(),
        S::zero(),
        S::zero(),
        a * tau[0],
        a * tau[1],
        a * tau[2],
        -S::from_f64(eng.beta) * umax,
    ]
}

/// Switching function H1 = (|p_v|/m) u_max - beta p_m u_max - 1 with the
/// maximizing direction already substituted.
pub fn switching_function<S: Real>(x: &[S; 7], p: &[S; 7], eng: &EngineParams) -> S {
    let pv = [p[3], p[4], p[5]];
    let umax = S::from_f64(eng.u_max);
    umax * (norm3(&pv) / x[6] - S::from_f64(eng.beta) * p[6]) - S::one()
}

/// Maximized Hamiltonian at frozen throttle: H0 + rho H1.
pub fn hamiltonian<S: Real>(x: &[S; 7], p: &[S; 7], rho: f64, eng: &EngineParams, mu: S) -> S {
    let f0 = drift(x, mu);
    let mut h0 = S::zero();
    for i in 0..7 {
        h0 = h0 + p[i] * f0[i];
    }
    h0 + S::from_f64(rho) * switching_function(x, p, eng)
}

/// Analytic canonical right-hand side (state and costate) at frozen throttle.
pub fn canonical_rhs(x: &[f64; 7], p: &[f64; 7], rho: f64, eng: &EngineParams, mu: f64) -> [f64; 14] {
    let r = Vector3::new(x[0], x[1], x[2]);
    let v = Vector3::new(x[3], x[4], x[5]);
    let m = x[6];
    let pr = Vector3::new(p[0], p[1], p[2]);
    let pv = Vector3::new(p[3], p[4], p[5]);
    let rn = r.norm();
    let pvn = pv.norm();

    let mut acc = -mu / rn.powi(3) * r;
    let mut mdot = 0.0;
    if rho != 0.0 && pvn > 0.0 {
        acc += (rho * eng.u_max / (m * pvn)) * pv;
        mdot = -rho * eng.beta * eng.u_max;
    }

    // p_r' = mu [ p_v/|r|^3 - 3 (p_v . r) r / |r|^5 ]
    let prdot = mu * (pv / rn.powi(3) - 3.0 * pv.dot(&r) / rn.powi(5) * r);
    let pvdot = -pr;
    let pmdot = rho * eng.u_max * pvn / (m * m);

    [
        v[0], v[1], v[2], acc[0], acc[1], acc[2], mdot, prdot[0], prdot[1], prdot[2], pvdot[0],
        pvdot[1], pvdot[2], pmdot,
    ]
}

/// Analytic second-derivative blocks of the maximized Hamiltonian, as printed
/// forms corrected against the finite-difference oracle (see module tests):
/// H_xx is the symmetric Hessian, and the (vdot, m) column of H_px carries
/// the thrust magnitude factor.
pub fn hessian_blocks_analytic(
    x: &[f64; 7],
    p: &[f64; 7],
    rho: f64,
    eng: &EngineParams,
    mu: f64,
) -> (SMatrix<f64, 7, 7>, SMatrix<f64, 7, 7>, SMatrix<f64, 7, 7>) {
    let r = Vector3::new(x[0], x[1], x[2]);
    let m = x[6];
    let pv = Vector3::new(p[3], p[4], p[5]);
    let rn = r.norm();
    let pvn = pv.norm();
    let eye = Matrix3::identity();

    let mut h_px = SMatrix::<f64, 7, 7>::zeros();
    let mut h_pp = SMatrix::<f64, 7, 7>::zeros();
    let mut h_xx = SMatrix::<f64, 7, 7>::zeros();

    // d(rdot)/dv = I
    h_px.fixed_view_mut::<3, 3>(0, 3).copy_from(&eye);
    // gravity gradient d(vdot)/dr
    let grav = -mu * (eye / rn.powi(3) - 3.0 / rn.powi(5) * r * r.transpose());
    h_px.fixed_view_mut::<3, 3>(3, 0).copy_from(&grav);

    if rho != 0.0 && pvn > 0.0 {
        // d(vdot)/dm
        let col = -rho * eng.u_max / (m * m * pvn) * pv;
        h_px.fixed_view_mut::<3, 1>(3, 6).copy_from(&col);

        // d(vdot)/dpv: projector orthogonal to the primer direction
        let proj = (eye * pvn * pvn - pv * pv.transpose()) * (rho * eng.u_max / (m * pvn.powi(3)));
        h_pp.fixed_view_mut::<3, 3>(3, 3).copy_from(&proj);

        // d^2H/dm^2 and the mixed (r,.) thrust terms vanish; mass curvature:
        h_xx[(6, 6)] = 2.0 * rho * eng.u_max * pvn / m.powi(3);
    }

    // Hessian of -mu p_v . r / |r|^3 with respect to r (symmetric form)
    let pr_outer = pv * r.transpose() + r * pv.transpose();
    let hxx_rr = 3.0 * mu / rn.powi(5) * (pr_outer + pv.dot(&r) * eye)
        - 15.0 * mu * pv.dot(&r) / rn.powi(7) * r * r.transpose();
    h_xx.fixed_view_mut::<3, 3>(0, 0).copy_from(&hxx_rr);

    (h_px, h_pp, h_xx)
}

/// Orthonormal radial/transverse/normal basis at a Cartesian state.
pub fn rtn_basis(r: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let rhat = r / r.norm();
    let n = r.cross(v);
    let nhat = n / n.norm();
    let that = nhat.cross(&rhat);
    Matrix3::from_columns(&[rhat, that, nhat])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eng() -> EngineParams {
        EngineParams {
            u_max: 0.1,
            beta: 0.15,
            m_dry: 0.1,
        }
    }

    #[test]
    fn drift_circular_case() {
        let x = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let d = drift(&x, 1.0);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 1.0);
        assert_relative_eq!(d[3], -1.0, epsilon = 1e-15);
        assert_eq!(d[6], 0.0);
    }

    #[test]
    fn thrust_direct_formula() {
        let x = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let tau = [0.0, 1.0, 0.0];
        let d = thrust(&x, &tau, &eng());
        assert_eq!(d[3], 0.0);
        assert_relative_eq!(d[4], 0.1, epsilon = 1e-15);
        assert_relative_eq!(d[6], -0.15 * 0.1, epsilon = 1e-15);
    }

    #[test]
    fn switching_function_cancellation() {
        // |p_v| = m = u_max = 1, beta p_m = 0 -> H1 = 0
        let e = EngineParams {
            u_max: 1.0,
            beta: 0.0,
            m_dry: 0.1,
        };
        let x = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let p = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.3];
        assert_relative_eq!(switching_function(&x, &p, &e), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn hamiltonian_affine_in_rho() {
        let x = [1.2, -0.3, 0.4, 0.1, 0.9, -0.2, 0.8];
        let p = [0.3, 0.2, -0.1, 0.5, -0.4, 0.6, -0.2];
        let e = eng();
        let h0 = hamiltonian(&x, &p, 0.0, &e, 1.0);
        let h1 = switching_function(&x, &p, &e);
        for &rho in &[0.25, 0.5, 1.0] {
            let h = hamiltonian(&x, &p, rho, &e, 1.0);
            assert_relative_eq!(h - h0, rho * h1, epsilon = 1e-15);
        }
    }
}
