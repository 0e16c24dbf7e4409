//! Gauss variational equations in modified equinoctial-type elements, generic
//! over the scalar.
//!
//! State layout: [p, ex, ey, hx, hy, l, m]. Thrust directions live in the
//! radial/transverse/normal frame; the 6x3 control-influence matrix `B`
//! resolves them onto element rates. The chart keeps multi-revolution
//! longitudes cumulative, which is what makes it numerically comfortable for
//! long spirals.

use crate::dynamics::EngineParams;
use crate::scalar::{norm3, Real};

/// Drift field: only the true longitude advances on a coast.
pub fn drift<S: Real>(x: &[S; 7], mu: S) -> [S; 7] {
    let p = x[0];
    let w = S::one() + x[1] * x[5].cos() + x[2] * x[5].sin();
    let ldot = (mu * p).sqrt() * (w / p) * (w / p);
    [
        S::zero(),
        S::zero(),
        S::zero(),
        S::zero(),
        S::zero(),
        ldot,
        S::zero(),
    ]
}

/// Control-influence matrix mapping RTN acceleration to element rates.
pub fn control_matrix<S: Real>(x: &[S; 7], mu: S) -> [[S; 3]; 6] {
    let p = x[0];
    let (ex, ey, hx, hy, l) = (x[1], x[2], x[3], x[4], x[5]);
    let (sl, cl) = (l.sin(), l.cos());
    let w = S::one() + ex * cl + ey * sl;
    let s2 = S::one() + hx * hx + hy * hy;
    let k = (p / mu).sqrt();
    let zero = S::zero();
    let one = S::one();
    let two = S::from_f64(2.0);
    let hfac = hx * sl - hy * cl;

    [
        [zero, two * p * k / w, zero],
        [
            k * sl,
            k * ((w + one) * cl + ex) / w,
            -k * ey * hfac / w,
        ],
        [
            -k * cl,
            k * ((w + one) * sl + ey) / w,
            k * ex * hfac / w,
        ],
        [zero, zero, k * s2 * cl / (two * w)],
        [zero, zero, k * s2 * sl / (two * w)],
        [zero, zero, k * hfac / w],
    ]
}

/// Thrust field for a unit RTN direction, full throttle.
pub fn thrust<S: Real>(x: &[S; 7], tau: &[S; 3], eng: &EngineParams, mu: S) -> [S; 7] {
    let b = control_matrix(x, mu);
    let umax = S::from_f64(eng.u_max);
    let a = umax / x[6];
    let mut out = [S::zero(); 7];
    for i in 0..6 {
        out[i] = a * (b[i][0] * tau[0] + b[i][1] * tau[1] + b[i][2] * tau[2]);
    }
    out[6] = -S::from_f64(eng.beta) * umax;
    out
}

/// Primer-equivalent vector B^T p, whose unit vector is the maximizing RTN
/// thrust direction.
pub fn primer_rtn<S: Real>(x: &[S; 7], p: &[S; 7], mu: S) -> [S; 3] {
    let b = control_matrix(x, mu);
    let mut d = [S::zero(); 3];
    for j in 0..3 {
        for i in 0..6 {
            d[j] = d[j] + b[i][j] * p[i];
        }
    }
    d
}

/// Switching function with the maximizing direction substituted:
/// H1 = (u_max/m) |B^T p| - beta u_max p_m - 1.
pub fn switching_function<S: Real>(x: &[S; 7], p: &[S; 7], eng: &EngineParams, mu: S) -> S {
    let d = primer_rtn(x, p, mu);
    let umax = S::from_f64(eng.u_max);
    umax * (norm3(&d) / x[6] - S::from_f64(eng.beta) * p[6]) - S::one()
}

pub fn hamiltonian<S: Real>(x: &[S; 7], p: &[S; 7], rho: f64, eng: &EngineParams, mu: S) -> S {
    let f0 = drift(x, mu);
    let mut h0 = S::zero();
    for i in 0..7 {
        h0 = h0 + p[i] * f0[i];
    }
    h0 + S::from_f64(rho) * switching_function(x, p, eng, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{coe_to_cartesian, coe_to_meoe, ClassicalElements};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn coast_rate_matches_angular_momentum() {
        // On a coast only l moves, at rate sqrt(mu p) (w/p)^2 = h / r^2.
        let el = ClassicalElements {
            a: 1.3,
            e: 0.2,
            i: 0.4,
            argp: 0.7,
            raan: 1.9,
            true_anomaly: 2.4,
        };
        let eq = coe_to_meoe(&el, 1.0).unwrap();
        let x = [eq.p, eq.ex, eq.ey, eq.hx, eq.hy, eq.true_longitude, 1.0];
        let d = drift(&x, 1.0);
        for i in 0..5 {
            assert_eq!(d[i], 0.0);
        }
        let (r, v) = coe_to_cartesian(&el, 1.0).unwrap();
        let h = r.cross(&v).norm();
        assert_relative_eq!(d[5], h / r.norm_squared(), max_relative = 1e-12);
    }

    #[test]
    fn transverse_thrust_raises_p_only_through_row_one() {
        let el = ClassicalElements {
            a: 1.0,
            e: 0.1,
            i: 0.2,
            argp: 0.0,
            raan: 0.0,
            true_anomaly: 0.0,
        };
        let eq = coe_to_meoe(&el, 1.0).unwrap();
        let x = [eq.p, eq.ex, eq.ey, eq.hx, eq.hy, eq.true_longitude, 1.0];
        let b = control_matrix(&x, 1.0);
        // radial and normal accelerations do not change p
        assert_eq!(b[0][0], 0.0);
        assert_eq!(b[0][2], 0.0);
        assert!(b[0][1] > 0.0);
        // normal-only rows
        assert_eq!(b[3][0], 0.0);
        assert_eq!(b[3][1], 0.0);
    }

    #[test]
    fn element_rates_match_cartesian_acceleration() {
        // Push the same physical acceleration through the Gauss matrix and
        // through a Cartesian finite difference of the osculating elements.
        let el = ClassicalElements {
            a: 1.4,
            e: 0.25,
            i: 0.5,
            argp: 0.3,
            raan: 1.1,
            true_anomaly: 0.8,
        };
        let mu = 1.0;
        let eq = coe_to_meoe(&el, 1.0).unwrap();
        let x = [eq.p, eq.ex, eq.ey, eq.hx, eq.hy, eq.true_longitude, 1.0];
        let (r, v) = coe_to_cartesian(&el, mu).unwrap();
        let basis = crate::dynamics::cartesian::rtn_basis(&r, &v);
        let a_rtn = Vector3::new(0.6, -0.3, 0.74);
        let a_inertial = basis * a_rtn;

        let b = control_matrix(&x, mu);
        let mut rates = [0.0; 6];
        for i in 0..6 {
            for j in 0..3 {
                rates[i] += b[i][j] * a_rtn[j];
            }
        }

        // finite-difference osculating-element rates under the perturbation
        let dt = 1e-6;
        let acc_kepler = -mu / r.norm().powi(3) * r;
        let r2 = r + v * dt + 0.5 * (acc_kepler + a_inertial) * dt * dt;
        let v2 = v + (acc_kepler + a_inertial) * dt;
        let q2 = crate::units::rv_to_meoe_orbit(&r2, &v2, mu).unwrap();
        let q1 = [eq.p, eq.ex, eq.ey, eq.hx, eq.hy, eq.true_longitude];
        let drift_l = drift(&x, mu)[5];
        for i in 0..5 {
            let fd = (q2[i] - q1[i]) / dt;
            assert_relative_eq!(fd, rates[i], max_relative = 2e-5, epsilon = 2e-6);
        }
        let fd_l = (crate::units::wrap_angle(q2[5] - q1[5])) / dt;
        assert_relative_eq!(fd_l, rates[5] + drift_l, max_relative = 2e-5);
    }
}
