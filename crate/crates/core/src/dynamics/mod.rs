//! Vector fields, Hamiltonians, the pointwise maximum-condition control law,
//! and second-derivative blocks of the maximized Hamiltonian, in two charts.
//!
//! The Cartesian chart carries fully analytic costate dynamics and Hessian
//! blocks. The equinoctial chart gets its costate equations and Hessian
//! blocks from dual-number differentiation of the same scalar-generic
//! Hamiltonian, which keeps the two charts consistent by construction.

pub mod cartesian;
pub mod meoe;

use crate::scalar::{Dual, Real};
use crate::units;
use nalgebra::{Matrix6, SMatrix, SVector, Vector3, Vector6};
use thiserror::Error;

pub type V7 = SVector<f64, 7>;
pub type M7 = SMatrix<f64, 7, 7>;
pub type Z14 = SVector<f64, 14>;

type D7 = Dual<f64, 7>;
type DD7 = Dual<Dual<f64, 7>, 7>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("fuel exhausted: m = {m} at dry mass {m_dry}")]
    FuelExhausted { m: f64, m_dry: f64 },
    #[error("primer vector is zero; thrust direction undefined")]
    SingularPrimer,
    #[error("state left the admissible set: {0}")]
    Inadmissible(&'static str),
}

/// Coordinate chart for states and costates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    /// [rx, ry, rz, vx, vy, vz, m]
    Cartesian,
    /// [p, ex, ey, hx, hy, l, m]
    Meoe,
}

impl Chart {
    pub fn component_names(&self) -> [&'static str; 7] {
        match self {
            Chart::Cartesian => ["rx", "ry", "rz", "vx", "vy", "vz", "m"],
            Chart::Meoe => ["p", "ex", "ey", "hx", "hy", "l", "m"],
        }
    }
}

/// Engine constants in canonical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineParams {
    /// Maximum thrust, MU DU / TU^2.
    pub u_max: f64,
    /// Mass-flow coefficient 1/(Isp g0), TU/DU.
    pub beta: f64,
    /// Dry mass, MU.
    pub m_dry: f64,
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.u_max > 0.0 && self.beta > 0.0 && self.m_dry > 0.0 {
            Ok(())
        } else {
            Err(DynamicsError::Inadmissible("engine parameters must be positive"))
        }
    }
}

/// State tagged with its chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacecraftState {
    pub chart: Chart,
    pub coords: V7,
}

impl SpacecraftState {
    pub fn mass(&self) -> f64 {
        self.coords[6]
    }

    pub fn position(&self) -> Vector3<f64> {
        match self.chart {
            Chart::Cartesian => Vector3::new(self.coords[0], self.coords[1], self.coords[2]),
            Chart::Meoe => {
                let q = [
                    self.coords[0],
                    self.coords[1],
                    self.coords[2],
                    self.coords[3],
                    self.coords[4],
                    self.coords[5],
                ];
                let (r, _) = units::meoe_orbit_to_rv(&q, 1.0);
                Vector3::new(r[0], r[1], r[2])
            }
        }
    }
}

/// Costate tagged with its chart; components pair with the state layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Costate {
    pub chart: Chart,
    pub coords: V7,
}

/// A point of an extremal: epoch plus (state, costate) in one chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremalPoint {
    pub t: f64,
    pub chart: Chart,
    pub x: V7,
    pub p: V7,
}

impl ExtremalPoint {
    pub fn packed(&self) -> Z14 {
        let mut z = Z14::zeros();
        z.fixed_rows_mut::<7>(0).copy_from(&self.x);
        z.fixed_rows_mut::<7>(7).copy_from(&self.p);
        z
    }

    pub fn from_packed(t: f64, chart: Chart, z: &Z14) -> Self {
        ExtremalPoint {
            t,
            chart,
            x: z.fixed_rows::<7>(0).into_owned(),
            p: z.fixed_rows::<7>(7).into_owned(),
        }
    }
}

/// Bang-bang control sample: throttle in {0, 1} plus a unit direction.
///
/// The direction is inertial in the Cartesian chart and radial/transverse/
/// normal in the equinoctial chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSample {
    pub rho: f64,
    pub tau: Vector3<f64>,
}

/// Dynamics context: chart, engine, gravitational parameter, admissibility
/// floor on the radius (Cartesian) or semi-latus rectum (equinoctial).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub chart: Chart,
    pub engine: EngineParams,
    pub mu: f64,
    pub r_min: f64,
}

impl Model {
    pub fn new(chart: Chart, engine: EngineParams) -> Self {
        Model {
            chart,
            engine,
            mu: 1.0,
            r_min: 0.0,
        }
    }

    pub fn admissible(&self, x: &V7) -> Result<(), DynamicsError> {
        if x[6] <= self.engine.m_dry {
            return Err(DynamicsError::FuelExhausted {
                m: x[6],
                m_dry: self.engine.m_dry,
            });
        }
        match self.chart {
            Chart::Cartesian => {
                let rn = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                if rn <= self.r_min || rn == 0.0 {
                    return Err(DynamicsError::Inadmissible("radius at or below floor"));
                }
            }
            Chart::Meoe => {
                if x[0] <= self.r_min.max(0.0) {
                    return Err(DynamicsError::Inadmissible("semi-latus rectum non-positive"));
                }
                let w = 1.0 + x[1] * x[5].cos() + x[2] * x[5].sin();
                if w <= 0.0 {
                    return Err(DynamicsError::Inadmissible("non-elliptic local geometry"));
                }
            }
        }
        Ok(())
    }

    pub fn drift_field(&self, x: &V7) -> Result<V7, DynamicsError> {
        self.admissible(x)?;
        let xa: [f64; 7] = (*x).into();
        let d = match self.chart {
            Chart::Cartesian => cartesian::drift(&xa, self.mu),
            Chart::Meoe => meoe::drift(&xa, self.mu),
        };
        Ok(V7::from(d))
    }

    pub fn thrust_field(&self, x: &V7, tau: &Vector3<f64>) -> Result<V7, DynamicsError> {
        self.admissible(x)?;
        let xa: [f64; 7] = (*x).into();
        let ta = [tau[0], tau[1], tau[2]];
        let d = match self.chart {
            Chart::Cartesian => cartesian::thrust(&xa, &ta, &self.engine),
            Chart::Meoe => meoe::thrust(&xa, &ta, &self.engine, self.mu),
        };
        Ok(V7::from(d))
    }

    /// Primer-equivalent vector whose unit vector maximizes p^T f1 over the
    /// direction sphere.
    pub fn primer(&self, x: &V7, p: &V7) -> Vector3<f64> {
        match self.chart {
            Chart::Cartesian => Vector3::new(p[3], p[4], p[5]),
            Chart::Meoe => {
                let xa: [f64; 7] = (*x).into();
                let pa: [f64; 7] = (*p).into();
                let d = meoe::primer_rtn(&xa, &pa, self.mu);
                Vector3::new(d[0], d[1], d[2])
            }
        }
    }

    /// Switching function H1(x, p) with the maximizing direction substituted.
    pub fn switching_function(&self, x: &V7, p: &V7) -> f64 {
        let xa: [f64; 7] = (*x).into();
        let pa: [f64; 7] = (*p).into();
        match self.chart {
            Chart::Cartesian => cartesian::switching_function(&xa, &pa, &self.engine),
            Chart::Meoe => meoe::switching_function(&xa, &pa, &self.engine, self.mu),
        }
    }

    /// Pointwise maximum-condition control. At |H1| below the caller's
    /// switching tolerance the sign here is arbitrary; switching logic in the
    /// propagator owns that band.
    pub fn optimal_control(&self, x: &V7, p: &V7) -> Result<ControlSample, DynamicsError> {
        let d = self.primer(x, p);
        let n = d.norm();
        if n == 0.0 {
            return Err(DynamicsError::SingularPrimer);
        }
        let h1 = self.switching_function(x, p);
        Ok(ControlSample {
            rho: if h1 > 0.0 { 1.0 } else { 0.0 },
            tau: d / n,
        })
    }

    /// Maximized Hamiltonian at frozen throttle: H0 + rho H1.
    pub fn hamiltonian(&self, x: &V7, p: &V7, rho: f64) -> f64 {
        let xa: [f64; 7] = (*x).into();
        let pa: [f64; 7] = (*p).into();
        match self.chart {
            Chart::Cartesian => cartesian::hamiltonian(&xa, &pa, rho, &self.engine, self.mu),
            Chart::Meoe => meoe::hamiltonian(&xa, &pa, rho, &self.engine, self.mu),
        }
    }

    /// Running Hamiltonian of the smoothed-cost problem at the maximizing
    /// throttle, for conservation diagnostics during continuation.
    pub fn smoothed_hamiltonian(&self, x: &V7, p: &V7, lambda: f64) -> f64 {
        let h1 = self.switching_function(x, p);
        let rho = smoothed_throttle(h1, lambda);
        let h0 = self.hamiltonian(x, p, 0.0);
        h0 + rho * (h1 + 1.0 - lambda) - (1.0 - lambda) * rho * rho
    }

    fn generic_h<S: Real>(&self, x: &[S; 7], p: &[S; 7], rho: f64) -> S {
        let mu = S::from_f64(self.mu);
        match self.chart {
            Chart::Cartesian => cartesian::hamiltonian(x, p, rho, &self.engine, mu),
            Chart::Meoe => meoe::hamiltonian(x, p, rho, &self.engine, mu),
        }
    }

    fn generic_h1<S: Real>(&self, x: &[S; 7], p: &[S; 7]) -> S {
        let mu = S::from_f64(self.mu);
        match self.chart {
            Chart::Cartesian => cartesian::switching_function(x, p, &self.engine),
            Chart::Meoe => meoe::switching_function(x, p, &self.engine, mu),
        }
    }

    /// Canonical right-hand side zdot = (dH/dp, -dH/dx) at frozen throttle.
    pub fn canonical_rhs(&self, z: &Z14, rho: f64) -> Z14 {
        let mut xa = [0.0; 7];
        let mut pa = [0.0; 7];
        for i in 0..7 {
            xa[i] = z[i];
            pa[i] = z[7 + i];
        }
        match self.chart {
            Chart::Cartesian => {
                Z14::from(cartesian::canonical_rhs(&xa, &pa, rho, &self.engine, self.mu))
            }
            Chart::Meoe => {
                let mu = self.mu;
                // state part: drift + throttle * thrust along the maximizer
                let mut out = [0.0; 14];
                let f0 = meoe::drift(&xa, mu);
                for i in 0..7 {
                    out[i] = f0[i];
                }
                if rho != 0.0 {
                    let d = meoe::primer_rtn(&xa, &pa, mu);
                    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    let tau = [d[0] / n, d[1] / n, d[2] / n];
                    let f1 = meoe::thrust(&xa, &tau, &self.engine, mu);
                    for i in 0..7 {
                        out[i] += rho * f1[i];
                    }
                }
                // costate part by differentiating H in the state lanes
                let mut xd = [D7::constant(0.0); 7];
                let mut pd = [D7::constant(0.0); 7];
                for i in 0..7 {
                    xd[i] = D7::variable(xa[i], i);
                    pd[i] = D7::constant(pa[i]);
                }
                let h = self.generic_h(&xd, &pd, rho);
                for i in 0..7 {
                    out[7 + i] = -h.eps[i];
                }
                Z14::from(out)
            }
        }
    }

    /// Second-derivative blocks (H_px, H_pp, H_xx) of the maximized
    /// Hamiltonian at frozen throttle. Analytic in the Cartesian chart,
    /// dual-number differentiation in the equinoctial chart.
    pub fn hessian_blocks(&self, x: &V7, p: &V7, rho: f64) -> (M7, M7, M7) {
        match self.chart {
            Chart::Cartesian => {
                let xa: [f64; 7] = (*x).into();
                let pa: [f64; 7] = (*p).into();
                cartesian::hessian_blocks_analytic(&xa, &pa, rho, &self.engine, self.mu)
            }
            Chart::Meoe => self.hessian_blocks_ad(x, p, rho),
        }
    }

    /// Hessian blocks by nested dual numbers; works in any chart and serves
    /// as the cross-check for the analytic Cartesian forms.
    pub fn hessian_blocks_ad(&self, x: &V7, p: &V7, rho: f64) -> (M7, M7, M7) {
        let xa: [f64; 7] = (*x).into();
        let pa: [f64; 7] = (*p).into();

        let seed =
            |v: f64, inner: Option<usize>, outer: Option<usize>| -> DD7 {
                let re = match inner {
                    Some(k) => D7::variable(v, k),
                    None => D7::constant(v),
                };
                let mut eps = [D7::constant(0.0); 7];
                if let Some(k) = outer {
                    eps[k] = D7::constant(1.0);
                }
                Dual { re, eps }
            };

        let eval = |xs: &[DD7; 7], ps: &[DD7; 7]| -> DD7 { self.generic_h(xs, ps, rho) };

        let mut xs = [DD7::constant(D7::constant(0.0)); 7];
        let mut ps = [DD7::constant(D7::constant(0.0)); 7];

        // H_xx: x seeded in both levels
        for i in 0..7 {
            xs[i] = seed(xa[i], Some(i), Some(i));
            ps[i] = seed(pa[i], None, None);
        }
        let h = eval(&xs, &ps);
        let mut h_xx = M7::zeros();
        for i in 0..7 {
            for j in 0..7 {
                h_xx[(i, j)] = h.eps[j].eps[i];
            }
        }

        // H_pp: p seeded in both levels
        for i in 0..7 {
            xs[i] = seed(xa[i], None, None);
            ps[i] = seed(pa[i], Some(i), Some(i));
        }
        let h = eval(&xs, &ps);
        let mut h_pp = M7::zeros();
        for i in 0..7 {
            for j in 0..7 {
                h_pp[(i, j)] = h.eps[j].eps[i];
            }
        }

        // H_px[i][j] = d2H / dp_i dx_j: x inner, p outer
        for i in 0..7 {
            xs[i] = seed(xa[i], Some(i), None);
            ps[i] = seed(pa[i], None, Some(i));
        }
        let h = eval(&xs, &ps);
        let mut h_px = M7::zeros();
        for i in 0..7 {
            for j in 0..7 {
                h_px[(i, j)] = h.eps[i].eps[j];
            }
        }

        h_xx = 0.5 * (h_xx + h_xx.transpose());
        h_pp = 0.5 * (h_pp + h_pp.transpose());
        (h_px, h_pp, h_xx)
    }

    /// Jacobian of the canonical right-hand side with respect to z = (x, p),
    /// assembled from the Hessian blocks so it is exactly Hamiltonian-
    /// structured.
    pub fn rhs_jacobian(&self, z: &Z14, rho: f64) -> SMatrix<f64, 14, 14> {
        let x = z.fixed_rows::<7>(0).into_owned();
        let p = z.fixed_rows::<7>(7).into_owned();
        let (h_px, h_pp, h_xx) = self.hessian_blocks(&x, &p, rho);
        let mut j = SMatrix::<f64, 14, 14>::zeros();
        j.fixed_view_mut::<7, 7>(0, 0).copy_from(&h_px);
        j.fixed_view_mut::<7, 7>(0, 7).copy_from(&h_pp);
        j.fixed_view_mut::<7, 7>(7, 0).copy_from(&(-h_xx));
        j.fixed_view_mut::<7, 7>(7, 7).copy_from(&(-h_px.transpose()));
        j
    }

    /// Gradients of the switching function: (dH1/dx, dH1/dp) as columns.
    pub fn h1_gradients(&self, x: &V7, p: &V7) -> (V7, V7) {
        let xa: [f64; 7] = (*x).into();
        let pa: [f64; 7] = (*p).into();
        let mut xd = [D7::constant(0.0); 7];
        let mut pd = [D7::constant(0.0); 7];
        for i in 0..7 {
            xd[i] = D7::variable(xa[i], i);
            pd[i] = D7::constant(pa[i]);
        }
        let hx = self.generic_h1(&xd, &pd);
        for i in 0..7 {
            xd[i] = D7::constant(xa[i]);
            pd[i] = D7::variable(pa[i], i);
        }
        let hp = self.generic_h1(&xd, &pd);
        (V7::from(hx.eps), V7::from(hp.eps))
    }

    /// Time derivative of H1 along the flow. Independent of the throttle
    /// since {H1, H1} = 0, so any arc value of rho gives the same number.
    pub fn h1_time_derivative(&self, z: &Z14, rho: f64) -> f64 {
        let x = z.fixed_rows::<7>(0).into_owned();
        let p = z.fixed_rows::<7>(7).into_owned();
        let (gx, gp) = self.h1_gradients(&x, &p);
        let zdot = self.canonical_rhs(z, rho);
        let mut d = 0.0;
        for i in 0..7 {
            d += gx[i] * zdot[i] + gp[i] * zdot[7 + i];
        }
        d
    }
}

/// Interior maximizer of the smoothed (energy-to-fuel) throttle law,
/// clamped to the admissible range.
pub fn smoothed_throttle(h1: f64, lambda: f64) -> f64 {
    (h1 / (2.0 * (1.0 - lambda)) + 0.5).clamp(0.0, 1.0)
}

/// Chart Jacobian d(cartesian)/d(equinoctial) of the orbit components, 6x6.
pub fn meoe_chart_jacobian(q: &[f64; 6], mu: f64) -> Matrix6<f64> {
    type D6 = Dual<f64, 6>;
    let mut qd = [D6::constant(0.0); 6];
    for i in 0..6 {
        qd[i] = D6::variable(q[i], i);
    }
    let (r, v) = units::meoe_orbit_to_rv(&qd, D6::constant(mu));
    let mut j = Matrix6::zeros();
    for col in 0..6 {
        for row in 0..3 {
            j[(row, col)] = r[row].eps[col];
            j[(row + 3, col)] = v[row].eps[col];
        }
    }
    j
}

/// Convert a full canonical point from the equinoctial chart to Cartesian:
/// states map through the chart, costates through the inverse-transpose
/// chart Jacobian.
pub fn meoe_point_to_cartesian(x: &V7, p: &V7, mu: f64) -> (V7, V7) {
    let q = [x[0], x[1], x[2], x[3], x[4], x[5]];
    let (r, v) = units::meoe_orbit_to_rv(&q, mu);
    let xc = V7::from([r[0], r[1], r[2], v[0], v[1], v[2], x[6]]);

    let j = meoe_chart_jacobian(&q, mu);
    let jt_inv = j
        .transpose()
        .try_inverse()
        .expect("equinoctial chart Jacobian is invertible on its domain");
    let p6 = Vector6::new(p[0], p[1], p[2], p[3], p[4], p[5]);
    let pc6 = jt_inv * p6;
    let mut pc = V7::zeros();
    for i in 0..6 {
        pc[i] = pc6[i];
    }
    pc[6] = p[6];
    (xc, pc)
}

/// Inverse of [`meoe_point_to_cartesian`]. The true longitude comes back in
/// [0, 2pi); cumulative revolution counts cannot be recovered pointwise.
pub fn cartesian_point_to_meoe(
    x: &V7,
    p: &V7,
    mu: f64,
) -> Result<(V7, V7), units::FrameError> {
    let r = Vector3::new(x[0], x[1], x[2]);
    let v = Vector3::new(x[3], x[4], x[5]);
    let q = units::rv_to_meoe_orbit(&r, &v, mu)?;
    let xm = V7::from([q[0], q[1], q[2], q[3], q[4], q[5], x[6]]);

    let j = meoe_chart_jacobian(&q, mu);
    let p6 = Vector6::new(p[0], p[1], p[2], p[3], p[4], p[5]);
    let pm6 = j.transpose() * p6;
    let mut pm = V7::zeros();
    for i in 0..6 {
        pm[i] = pm6[i];
    }
    pm[6] = p[6];
    Ok((xm, pm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn engine() -> EngineParams {
        EngineParams {
            u_max: 0.12,
            beta: 0.2,
            m_dry: 0.1,
        }
    }

    fn random_cart_point(rng: &mut ChaCha8Rng) -> (V7, V7) {
        let mut x = V7::zeros();
        let mut p = V7::zeros();
        for i in 0..3 {
            x[i] = rng.gen_range(-1.5..1.5);
            x[3 + i] = rng.gen_range(-1.0..1.0);
            p[i] = rng.gen_range(-1.0..1.0);
            p[3 + i] = rng.gen_range(-1.0..1.0);
        }
        // keep radius and primer away from zero
        x[0] += 2.0;
        p[3] += 2.0;
        x[6] = rng.gen_range(0.5..1.0);
        p[6] = rng.gen_range(-1.0..1.0);
        (x, p)
    }

    #[test]
    fn optimal_direction_normalizes_primer() {
        let model = Model::new(Chart::Cartesian, engine());
        let x = V7::from([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let p = V7::from([0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let u = model.optimal_control(&x, &p).unwrap();
        assert_relative_eq!(u.tau[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn throttle_follows_h1_sign() {
        let model = Model::new(Chart::Cartesian, engine());
        let x = V7::from([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        // H1 = u_max |p_v| / m - u_max beta p_m - 1; pick |p_v| for each sign
        let mut p = V7::zeros();
        p[3] = (1.0 + 0.3) / 0.12; // H1 = +0.3
        let u = model.optimal_control(&x, &p).unwrap();
        assert_eq!(u.rho, 1.0);
        assert_relative_eq!(model.switching_function(&x, &p), 0.3, epsilon = 1e-12);
        p[3] = (1.0 - 0.3) / 0.12; // H1 = -0.3
        let u = model.optimal_control(&x, &p).unwrap();
        assert_eq!(u.rho, 0.0);
        assert_relative_eq!(model.switching_function(&x, &p), -0.3, epsilon = 1e-12);
    }

    #[test]
    fn singular_primer_rejected() {
        let model = Model::new(Chart::Cartesian, engine());
        let x = V7::from([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let p = V7::from([0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
        assert_eq!(
            model.optimal_control(&x, &p),
            Err(DynamicsError::SingularPrimer)
        );
    }

    #[test]
    fn chosen_throttle_maximizes_h_over_candidates() {
        let model = Model::new(Chart::Cartesian, engine());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (x, p) = random_cart_point(&mut rng);
            let u = model.optimal_control(&x, &p).unwrap();
            let best = model.hamiltonian(&x, &p, u.rho);
            for &rho in &[0.0, 1.0] {
                assert!(model.hamiltonian(&x, &p, rho) <= best + 1e-14);
            }
        }
    }

    #[test]
    fn direction_maximizes_over_sphere_samples() {
        let model = Model::new(Chart::Cartesian, engine());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, p) = random_cart_point(&mut rng);
        let u = model.optimal_control(&x, &p).unwrap();
        let f1 = model.thrust_field(&x, &u.tau).unwrap();
        let best = p.dot(&f1);
        for _ in 0..500 {
            let raw = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if raw.norm() < 1e-3 {
                continue;
            }
            let tau = raw / raw.norm();
            let f = model.thrust_field(&x, &tau).unwrap();
            assert!(p.dot(&f) <= best + 1e-12);
        }
    }

    #[test]
    fn cartesian_rhs_matches_ad_gradient() {
        // the analytic costate equations against -dH/dx from dual numbers
        let model = Model::new(Chart::Cartesian, engine());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (x, p) = random_cart_point(&mut rng);
            let mut z = Z14::zeros();
            z.fixed_rows_mut::<7>(0).copy_from(&x);
            z.fixed_rows_mut::<7>(7).copy_from(&p);
            for &rho in &[0.0, 1.0] {
                let rhs = model.canonical_rhs(&z, rho);
                let xa: [f64; 7] = x.into();
                let pa: [f64; 7] = p.into();
                let mut xd = [D7::constant(0.0); 7];
                let mut pd = [D7::constant(0.0); 7];
                for i in 0..7 {
                    xd[i] = D7::variable(xa[i], i);
                    pd[i] = D7::constant(pa[i]);
                }
                let h = model.generic_h(&xd, &pd, rho);
                for i in 0..7 {
                    assert_relative_eq!(rhs[7 + i], -h.eps[i], max_relative = 1e-12, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn analytic_hessians_match_ad() {
        let model = Model::new(Chart::Cartesian, engine());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..25 {
            let (x, p) = random_cart_point(&mut rng);
            for &rho in &[0.0, 1.0] {
                let (apx, app, axx) = model.hessian_blocks(&x, &p, rho);
                let (dpx, dpp, dxx) = model.hessian_blocks_ad(&x, &p, rho);
                assert!((apx - dpx).norm() < 1e-11 * (1.0 + apx.norm()));
                assert!((app - dpp).norm() < 1e-11 * (1.0 + app.norm()));
                assert!((axx - dxx).norm() < 1e-11 * (1.0 + axx.norm()));
            }
        }
    }

    #[test]
    fn coast_hessians_reduce_to_gravity_gradient() {
        let model = Model::new(Chart::Cartesian, engine());
        let x = V7::from([1.1, -0.2, 0.3, 0.0, 0.9, 0.1, 0.8]);
        let p = V7::from([0.2, 0.1, -0.3, 0.4, 0.5, -0.2, 0.1]);
        let (h_px, h_pp, _h_xx) = model.hessian_blocks(&x, &p, 0.0);
        assert_eq!(h_pp.norm(), 0.0);
        // thrust column vanishes on a coast
        for i in 0..7 {
            assert_eq!(h_px[(i, 6)], 0.0);
        }
    }

    #[test]
    fn h_pp_projector_spectrum() {
        let model = Model::new(Chart::Cartesian, engine());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, p) = random_cart_point(&mut rng);
        let (_, h_pp, _) = model.hessian_blocks(&x, &p, 1.0);
        let eig = h_pp.symmetric_eigenvalues();
        let mut eig: Vec<f64> = eig.iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // PSD with a 5-dimensional null space (r and m directions plus the
        // primer direction inside the velocity block)
        assert!(eig[0] > -1e-13);
        for v in eig.iter().take(5) {
            assert!(v.abs() < 1e-12);
        }
        assert!(eig[5] > 1e-6);
        assert!(eig[6] > 1e-6);
    }

    #[test]
    fn meoe_point_conversion_preserves_hamiltonians() {
        let e = engine();
        let meoe_model = Model::new(Chart::Meoe, e);
        let cart_model = Model::new(Chart::Cartesian, e);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..40 {
            let x = V7::from([
                rng.gen_range(0.6..1.8),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.0..12.0),
                rng.gen_range(0.5..1.0),
            ]);
            let mut p = V7::zeros();
            for i in 0..7 {
                p[i] = rng.gen_range(-1.0..1.0);
            }
            let (xc, pc) = meoe_point_to_cartesian(&x, &p, 1.0);
            // invariance of the scalar Hamiltonian pieces under the chart map
            for &rho in &[0.0, 1.0] {
                assert_relative_eq!(
                    meoe_model.hamiltonian(&x, &p, rho),
                    cart_model.hamiltonian(&xc, &pc, rho),
                    max_relative = 1e-9,
                    epsilon = 1e-11
                );
            }
            // and the round trip restores the point (l modulo 2 pi)
            let (xm, pm) = cartesian_point_to_meoe(&xc, &pc, 1.0).unwrap();
            for i in 0..7 {
                if i == 5 {
                    assert!(crate::units::angle_distance(xm[5], x[5]) < 1e-9);
                } else {
                    assert_relative_eq!(xm[i], x[i], max_relative = 1e-9, epsilon = 1e-11);
                }
                assert_relative_eq!(pm[i], p[i], max_relative = 1e-8, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn smoothed_throttle_limits() {
        assert_eq!(smoothed_throttle(-2.0, 0.0), 0.0);
        assert_eq!(smoothed_throttle(2.1, 0.0), 1.0);
        assert_relative_eq!(smoothed_throttle(0.0, 0.0), 0.5);
        // near the fuel end the band collapses around H1 = 0
        assert_eq!(smoothed_throttle(0.1, 0.99), 1.0);
        assert_eq!(smoothed_throttle(-0.1, 0.99), 0.0);
    }
}
