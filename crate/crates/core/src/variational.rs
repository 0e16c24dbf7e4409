//! Backward propagation of the variational matrices dx/dq and dp/dq along a
//! nominal extremal, with jump updates at switching times and switching-time
//! sensitivity rows.
//!
//! The machinery is dimension-generic over a [`CanonicalSystem`] so that
//! non-orbital canonical flows (the linear-quadratic oscillator used as a
//! conjugate-point oracle) run through the identical code path. The sweep
//! integrates the nominal state together with the matrices, so coefficient
//! evaluations sit on the flow rather than on an interpolant.

use crate::dynamics::{Model, Z14};
use crate::extremal::{ExtremalTrajectory, Regime, REGULARITY_FLOOR};
use crate::ode::{Integrator, StepRecord};
use nalgebra::{DMatrix, DVector, RowDVector};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VariationalError {
    #[error("switching at t = {t} violates the regularity floor: |H1dot| = {h1_dot:.3e}")]
    IrregularSwitch { t: f64, h1_dot: f64 },
    #[error("integration failed during the variational sweep: {0}")]
    Integration(#[from] crate::ode::OdeError),
    #[error("epoch {0} outside the variational history")]
    OutsideHistory(f64),
    #[error("terminal constraint gradient is rank deficient")]
    RankDeficientConstraint,
}

/// Canonical flow interface for the variational machinery.
pub trait CanonicalSystem: Sync {
    /// State dimension n (the canonical flow lives in R^{2n}).
    fn dim(&self) -> usize;
    /// Canonical right-hand side at frozen throttle.
    fn rhs(&self, z: &[f64], rho: f64) -> Vec<f64>;
    /// 2n x 2n Jacobian of the canonical right-hand side.
    fn rhs_jacobian(&self, z: &[f64], rho: f64) -> DMatrix<f64>;
    /// Gradients (dH1/dx, dH1/dp) of the switching function.
    fn switching_gradients(&self, _z: &[f64]) -> (DVector<f64>, DVector<f64>) {
        unimplemented!("system has no switching structure")
    }
    /// Time derivative of H1 along the flow (throttle-independent).
    fn h1_dot(&self, _z: &[f64], _rho: f64) -> f64 {
        unimplemented!("system has no switching structure")
    }
}

/// Orbital canonical system in either chart.
pub struct OrbitalSystem(pub Model);

impl OrbitalSystem {
    fn pack(z: &[f64]) -> Z14 {
        let mut out = Z14::zeros();
        for i in 0..14 {
            out[i] = z[i];
        }
        out
    }
}

impl CanonicalSystem for OrbitalSystem {
    fn dim(&self) -> usize {
        7
    }

    fn rhs(&self, z: &[f64], rho: f64) -> Vec<f64> {
        self.0.canonical_rhs(&Self::pack(z), rho).as_slice().to_vec()
    }

    fn rhs_jacobian(&self, z: &[f64], rho: f64) -> DMatrix<f64> {
        let j = self.0.rhs_jacobian(&Self::pack(z), rho);
        DMatrix::from_fn(14, 14, |r, c| j[(r, c)])
    }

    fn switching_gradients(&self, z: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let zz = Self::pack(z);
        let x = zz.fixed_rows::<7>(0).into_owned();
        let p = zz.fixed_rows::<7>(7).into_owned();
        let (gx, gp) = self.0.h1_gradients(&x, &p);
        (
            DVector::from_column_slice(gx.as_slice()),
            DVector::from_column_slice(gp.as_slice()),
        )
    }

    fn h1_dot(&self, z: &[f64], rho: f64) -> f64 {
        self.0.h1_time_derivative(&Self::pack(z), rho)
    }
}

/// Switching-structure skeleton of a nominal extremal, enough to drive the
/// backward sweep without re-detecting events.
#[derive(Debug, Clone)]
pub struct NominalStructure {
    pub t0: f64,
    pub tf: f64,
    /// Canonical state at tf (length 2n).
    pub z_f: Vec<f64>,
    /// Ascending arcs (t_start, t_end, rho).
    pub arcs: Vec<(f64, f64, f64)>,
    /// Ascending switching times with delta_rho = rho(t+) - rho(t-).
    pub switches: Vec<(f64, f64)>,
}

impl NominalStructure {
    pub fn from_trajectory(traj: &ExtremalTrajectory) -> Self {
        let arcs = traj
            .arcs
            .iter()
            .map(|a| {
                let rho = match a.regime {
                    Regime::Coast => 0.0,
                    Regime::Full => 1.0,
                    Regime::Interior => {
                        panic!("variational sweep requires a bang-bang nominal")
                    }
                };
                (a.t_start, a.t_end, rho)
            })
            .collect();
        NominalStructure {
            t0: traj.t_lo,
            tf: traj.t_hi,
            z_f: traj.point_at_hi().packed().as_slice().to_vec(),
            arcs,
            switches: traj.switches.iter().map(|s| (s.t, s.delta_rho)).collect(),
        }
    }
}

/// The pair (dx/dq, dp/dq) at one epoch.
#[derive(Debug, Clone)]
pub struct VariationalPair {
    pub t: f64,
    pub xq: DMatrix<f64>,
    pub pq: DMatrix<f64>,
}

/// Terminal values of the variational pair.
///
/// For a fully fixed endpoint (l = n) the parameterization is q = p(tf), so
/// dx/dq = 0 and dp/dq = I. For 0 < l < n the parameter splits into the l
/// Lagrange multipliers and n - l tangential coordinates; with B an
/// orthonormal basis of ker(grad phi) the terminal pair is
/// dx/dq = [0 | B] and dp/dq = [grad phi^T | sum_i nu_i hess(phi_i) B].
pub fn terminal_values(
    grad: &DMatrix<f64>,
    hessians: &[DMatrix<f64>],
    multipliers: &[f64],
    tf: f64,
) -> Result<VariationalPair, VariationalError> {
    let l = grad.nrows();
    let n = grad.ncols();
    assert!(l >= 1 && l <= n);
    if l == n {
        return Ok(VariationalPair {
            t: tf,
            xq: DMatrix::zeros(n, n),
            pq: DMatrix::identity(n, n),
        });
    }
    // rank check via the Gram matrix of the constraint rows
    let gram = grad * grad.transpose();
    if gram.determinant().abs() < 1e-12 {
        return Err(VariationalError::RankDeficientConstraint);
    }
    let basis = crate::boundary::kernel_basis(grad);

    let mut xq = DMatrix::zeros(n, n);
    xq.view_mut((0, l), (n, n - l)).copy_from(&basis);

    let mut pq = DMatrix::zeros(n, n);
    pq.view_mut((0, 0), (n, l)).copy_from(&grad.transpose());
    if !hessians.is_empty() {
        let mut weighted = DMatrix::zeros(n, n);
        for (i, h) in hessians.iter().enumerate() {
            weighted += multipliers[i] * h;
        }
        let block = weighted * &basis;
        pq.view_mut((0, l), (n, n - l)).copy_from(&block);
    }
    Ok(VariationalPair { t: tf, xq, pq })
}

/// Switching-time sensitivity row dt_i/dq and the gradient data behind it.
#[derive(Debug, Clone)]
pub struct SwitchSensitivity {
    pub dt_dq: RowDVector<f64>,
    pub grad_x: DVector<f64>,
    pub grad_p: DVector<f64>,
    pub h1_dot: f64,
}

/// dt_i/dq = -(dH1/dx^T Xq + dH1/dp^T Pq) / H1dot, from one-sided values.
pub fn switch_sensitivity(
    sys: &dyn CanonicalSystem,
    z: &[f64],
    pair: (&DMatrix<f64>, &DMatrix<f64>),
    rho_side: f64,
) -> Result<SwitchSensitivity, VariationalError> {
    let (gx, gp) = sys.switching_gradients(z);
    let h1_dot = sys.h1_dot(z, rho_side);
    if h1_dot.abs() < REGULARITY_FLOOR {
        return Err(VariationalError::IrregularSwitch { t: f64::NAN, h1_dot });
    }
    let row = -(gx.transpose() * pair.0 + gp.transpose() * pair.1) / h1_dot;
    Ok(SwitchSensitivity {
        dt_dq: row,
        grad_x: gx,
        grad_p: gp,
        h1_dot,
    })
}

/// One switching crossed by the sweep, with both one-sided pairs.
#[derive(Debug, Clone)]
pub struct SwitchRecord {
    pub t: f64,
    pub delta_rho: f64,
    pub z: Vec<f64>,
    pub xq_left: DMatrix<f64>,
    pub pq_left: DMatrix<f64>,
    pub xq_right: DMatrix<f64>,
    pub pq_right: DMatrix<f64>,
    pub sensitivity: SwitchSensitivity,
    /// Relative disagreement between the right- and left-limit evaluations of
    /// dt_i/dq (an identity; recorded as a numerical diagnostic).
    pub dt_dq_consistency: f64,
}

/// One smooth stretch of the variational sweep with its dense steps.
#[derive(Debug, Clone)]
pub struct VarArc {
    pub t_start: f64,
    pub t_end: f64,
    pub rho: f64,
    /// Dense steps of the augmented system [z | vec(Xq) | vec(Pq)],
    /// ascending in time.
    pub steps: Vec<StepRecord>,
}

/// Sampled variational data at an epoch.
#[derive(Debug, Clone)]
pub struct VariationalSample {
    pub t: f64,
    pub z: Vec<f64>,
    pub xq: DMatrix<f64>,
    pub pq: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct VariationalHistory {
    pub n: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub arcs: Vec<VarArc>,
    pub switches: Vec<SwitchRecord>,
}

fn unpack(n: usize, y: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let z = y[..2 * n].to_vec();
    let xq = DMatrix::from_column_slice(n, n, &y[2 * n..2 * n + n * n]);
    let pq = DMatrix::from_column_slice(n, n, &y[2 * n + n * n..]);
    (z, xq, pq)
}

fn pack(z: &[f64], xq: &DMatrix<f64>, pq: &DMatrix<f64>) -> Vec<f64> {
    let mut y = Vec::with_capacity(z.len() + 2 * xq.len());
    y.extend_from_slice(z);
    y.extend_from_slice(xq.as_slice());
    y.extend_from_slice(pq.as_slice());
    y
}

impl VariationalHistory {
    pub fn sample(&self, t: f64, side: Side) -> Result<VariationalSample, VariationalError> {
        if t < self.t_lo - 1e-12 || t > self.t_hi + 1e-12 {
            return Err(VariationalError::OutsideHistory(t));
        }
        // at a switching, the one-sided values are stored exactly
        for s in &self.switches {
            if (t - s.t).abs() <= 1e-13 * s.t.abs().max(1.0) {
                let (xq, pq) = match side {
                    Side::Left => (s.xq_left.clone(), s.pq_left.clone()),
                    Side::Right => (s.xq_right.clone(), s.pq_right.clone()),
                };
                return Ok(VariationalSample {
                    t,
                    z: s.z.clone(),
                    xq,
                    pq,
                });
            }
        }
        let arc = self
            .arcs
            .iter()
            .find(|a| t >= a.t_start - 1e-14 && t <= a.t_end + 1e-14)
            .ok_or(VariationalError::OutsideHistory(t))?;
        let t_eval = t.clamp(arc.t_start, arc.t_end);
        let step = arc
            .steps
            .iter()
            .find(|s| s.contains(t_eval))
            .ok_or(VariationalError::OutsideHistory(t))?;
        let y = step.eval(t_eval);
        let (z, xq, pq) = unpack(self.n, &y);
        Ok(VariationalSample { t, z, xq, pq })
    }

    pub fn det_xq(&self, t: f64, side: Side) -> Result<f64, VariationalError> {
        Ok(self.sample(t, side)?.xq.determinant())
    }

    /// Largest drift of the symplectic bilinear form Xq^T Pq - Pq^T Xq
    /// within arcs, relative to the magnitude of Xq^T Pq itself (the form is
    /// often structurally zero, so its own norm is no scale).
    pub fn symplectic_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for arc in &self.arcs {
            let mut reference: Option<(DMatrix<f64>, f64)> = None;
            for step in &arc.steps {
                for &t in &[step.t0.clamp(arc.t_start, arc.t_end), step.t1()] {
                    if let Ok(s) = self.sample(t.clamp(arc.t_start, arc.t_end), Side::Right) {
                        let sym = (s.xq.transpose() * &s.pq).norm();
                        let form = s.xq.transpose() * &s.pq - s.pq.transpose() * &s.xq;
                        match &reference {
                            None => reference = Some((form, sym.max(1.0))),
                            Some((r, scale)) => {
                                worst = worst.max((form - r).norm() / scale.max(sym));
                            }
                        }
                    }
                }
            }
        }
        worst
    }

    /// CSV rows (t, side, det, vec(Xq), vec(Pq)) at dense nodes and both
    /// sides of every switching.
    pub fn write_csv(&self, mut w: impl Write, header_lines: &[String]) -> std::io::Result<()> {
        for line in header_lines {
            writeln!(w, "# {line}")?;
        }
        let n = self.n;
        write!(w, "t,side,det_xq")?;
        for c in 0..n {
            for r in 0..n {
                write!(w, ",xq_{r}{c}")?;
            }
        }
        for c in 0..n {
            for r in 0..n {
                write!(w, ",pq_{r}{c}")?;
            }
        }
        writeln!(w)?;
        let mut emit = |t: f64, side: &str, xq: &DMatrix<f64>, pq: &DMatrix<f64>| -> std::io::Result<()> {
            write!(w, "{t},{side},{}", xq.determinant())?;
            for v in xq.iter() {
                write!(w, ",{v}")?;
            }
            for v in pq.iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)
        };
        for arc in &self.arcs {
            for step in &arc.steps {
                let t = step.t0.clamp(arc.t_start, arc.t_end);
                let y = step.eval(t);
                let (_, xq, pq) = unpack(n, &y);
                emit(t, "interior", &xq, &pq)?;
            }
        }
        for s in &self.switches {
            emit(s.t, "left", &s.xq_left, &s.pq_left)?;
            emit(s.t, "right", &s.xq_right, &s.pq_right)?;
        }
        Ok(())
    }
}

/// Backward sweep of the homogeneous variational equations from `terminal`
/// at tf down to the nominal's start, applying the inverse jump updates at
/// each switching (the forward formulas are written t- to t+; the sweep
/// inverts them).
pub fn propagate_variational(
    sys: &dyn CanonicalSystem,
    nominal: &NominalStructure,
    terminal: &VariationalPair,
    integ: &Integrator,
) -> Result<VariationalHistory, VariationalError> {
    let n = sys.dim();
    assert_eq!(terminal.xq.nrows(), n);
    assert_eq!(nominal.z_f.len(), 2 * n);

    let mut arcs_out: Vec<VarArc> = Vec::new();
    let mut switches_out: Vec<SwitchRecord> = Vec::new();

    let mut y = pack(&nominal.z_f, &terminal.xq, &terminal.pq);
    let mut t_right = nominal.tf;

    // walk arcs from the last backward
    for &(t_start, t_end, rho) in nominal.arcs.iter().rev() {
        let rhs = |_t: f64, yy: &[f64], dy: &mut [f64]| -> Result<(), String> {
            let (z, xq, pq) = unpack(n, yy);
            let zdot = sys.rhs(&z, rho);
            let jac = sys.rhs_jacobian(&z, rho);
            // stacked matrix ODE: d/dt [Xq; Pq] = J [Xq; Pq]
            let mut stacked = DMatrix::zeros(2 * n, n);
            stacked.view_mut((0, 0), (n, n)).copy_from(&xq);
            stacked.view_mut((n, 0), (n, n)).copy_from(&pq);
            let mdot = jac * stacked;
            dy[..2 * n].copy_from_slice(&zdot);
            for c in 0..n {
                for r in 0..n {
                    dy[2 * n + c * n + r] = mdot[(r, c)];
                    dy[2 * n + n * n + c * n + r] = mdot[(n + r, c)];
                }
            }
            Ok(())
        };

        debug_assert!((t_end - t_right).abs() < 1e-9 * t_right.abs().max(1.0));
        let mut steps = Vec::new();
        let sol = integ.integrate_dense(rhs, t_right, &y, t_start, &mut steps)?;
        steps.reverse();
        arcs_out.push(VarArc {
            t_start,
            t_end: t_right,
            rho,
            steps,
        });
        y = sol.y;
        t_right = t_start;

        // apply the inverse jump if a switching bounds this arc on the left
        if let Some(&(t_sw, delta_rho)) = nominal
            .switches
            .iter()
            .rev()
            .find(|(ts, _)| (ts - t_start).abs() < 1e-9 * t_start.abs().max(1.0))
        {
            let (z, xq_right, pq_right) = unpack(n, &y);
            let sens = switch_sensitivity(sys, &z, (&xq_right, &pq_right), rho).map_err(|e| {
                match e {
                    VariationalError::IrregularSwitch { h1_dot, .. } => {
                        VariationalError::IrregularSwitch { t: t_sw, h1_dot }
                    }
                    other => other,
                }
            })?;

            // inverse jumps: Xq(t-) = Xq(t+) + drho (dH1/dp) (dt/dq),
            //                Pq(t-) = Pq(t+) - drho (dH1/dx) (dt/dq)
            let xq_left = &xq_right + delta_rho * (&sens.grad_p * &sens.dt_dq);
            let pq_left = &pq_right - delta_rho * (&sens.grad_x * &sens.dt_dq);

            // left-limit evaluation of the sensitivity is the same row
            let row_left =
                -(sens.grad_x.transpose() * &xq_left + sens.grad_p.transpose() * &pq_left)
                    / sens.h1_dot;
            let consistency =
                (&row_left - &sens.dt_dq).norm() / sens.dt_dq.norm().max(1e-300);

            switches_out.push(SwitchRecord {
                t: t_sw,
                delta_rho,
                z: z.clone(),
                xq_left: xq_left.clone(),
                pq_left: pq_left.clone(),
                xq_right,
                pq_right,
                sensitivity: sens,
                dt_dq_consistency: consistency,
            });

            y = pack(&z, &xq_left, &pq_left);
        }
    }

    arcs_out.reverse();
    switches_out.reverse();
    Ok(VariationalHistory {
        n,
        t_lo: nominal.t0,
        t_hi: nominal.tf,
        arcs: arcs_out,
        switches: switches_out,
    })
}
