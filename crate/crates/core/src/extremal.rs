//! Propagation of the canonical system with switching detection.
//!
//! Between switchings the flow is smooth, so the integrator runs freely; the
//! observer scans every accepted step's dense polynomial for zero crossings
//! of the switching function (or of the throttle-saturation boundaries in
//! smoothed mode), refines the crossing with a safeguarded root-finder,
//! polishes it against re-integrated values, and restarts the integration at
//! the event with the throttle flipped. No step ever integrates across a
//! control discontinuity.

use crate::dynamics::{
    smoothed_throttle, Chart, DynamicsError, ExtremalPoint, Model, Z14,
};
use crate::ode::{Integrator, OdeError, StepOutcome, StepRecord};
use crate::roots::brent;
use std::io::Write;
use thiserror::Error;

/// Treat |H1| below this as "at a switching" (canonical units).
pub const SWITCH_TOL: f64 = 1e-12;
/// |H1dot| below this at a switching violates the regularity assumption.
pub const REGULARITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("dynamics failure at t = {t}: {source}")]
    Dynamics { t: f64, source: DynamicsError },
    #[error(transparent)]
    Integration(#[from] OdeError),
    #[error("epoch {0} outside the trajectory horizon")]
    OutsideHorizon(f64),
    #[error("no sign change of H1 in the bracket [{0}, {1}]")]
    NoSignChange(f64, f64),
}

/// Throttle law under which an extremal is propagated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlLaw {
    /// Fuel-optimal law: throttle in {0, 1} switching on the sign of H1.
    BangBang,
    /// Energy-to-fuel continuation law with interior throttle
    /// clamp(H1 / (2 (1 - lambda)) + 1/2, 0, 1).
    Smoothed { lambda: f64 },
}

/// Throttle regime of one smooth arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Coast,
    Interior,
    Full,
}

impl ControlLaw {
    /// Throttle on an arc of the given regime at switching-function value h1.
    pub fn throttle(&self, regime: Regime, h1: f64) -> f64 {
        match regime {
            Regime::Coast => 0.0,
            Regime::Full => 1.0,
            Regime::Interior => match self {
                ControlLaw::Smoothed { lambda } => smoothed_throttle(h1, *lambda),
                ControlLaw::BangBang => unreachable!("bang-bang law has no interior regime"),
            },
        }
    }

    /// Event functions whose zeros bound the regimes, paired with the regime
    /// on the side where the function is negative / positive.
    fn thresholds(&self) -> Vec<f64> {
        match self {
            ControlLaw::BangBang => vec![0.0],
            ControlLaw::Smoothed { lambda } => {
                let band = 1.0 - lambda;
                vec![-band, band]
            }
        }
    }

    fn regime_for(&self, h1: f64) -> Regime {
        match self {
            ControlLaw::BangBang => {
                if h1 > 0.0 {
                    Regime::Full
                } else {
                    Regime::Coast
                }
            }
            ControlLaw::Smoothed { lambda } => {
                let band = 1.0 - lambda;
                if h1 <= -band {
                    Regime::Coast
                } else if h1 >= band {
                    Regime::Full
                } else {
                    Regime::Interior
                }
            }
        }
    }
}

/// One regular crossing of a throttle boundary, time-ascending convention.
#[derive(Debug, Clone, Copy)]
pub struct SwitchPoint {
    pub t: f64,
    /// rho(t+) - rho(t-); +-1 for bang-bang switchings, 0 at smoothed kinks.
    pub delta_rho: f64,
    pub h1_dot: f64,
    pub regular: bool,
}

/// A smooth arc between consecutive events, with its dense steps stored in
/// ascending time order.
#[derive(Debug, Clone)]
pub struct Arc {
    pub t_start: f64,
    pub t_end: f64,
    pub regime: Regime,
    pub steps: Vec<StepRecord>,
}

impl Arc {
    fn find_step(&self, t: f64) -> Option<&StepRecord> {
        // steps are ascending and contiguous
        let idx = self
            .steps
            .partition_point(|s| s.t0.min(s.t1()) <= t)
            .saturating_sub(1);
        let lo = idx.saturating_sub(1);
        self.steps[lo..(idx + 2).min(self.steps.len())]
            .iter()
            .find(|s| s.contains(t))
    }
}

#[derive(Debug, Clone)]
pub struct ExtremalTrajectory {
    pub model: Model,
    pub law: ControlLaw,
    /// Ascending horizon; equals the propagation span regardless of direction.
    pub t_lo: f64,
    pub t_hi: f64,
    pub arcs: Vec<Arc>,
    pub switches: Vec<SwitchPoint>,
    pub n_rhs: usize,
}

/// Side selector for one-sided limits at switching times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl ExtremalTrajectory {
    pub fn chart(&self) -> Chart {
        self.model.chart
    }

    pub fn point_at_lo(&self) -> ExtremalPoint {
        self.sample(self.t_lo).expect("horizon start is sampleable")
    }

    pub fn point_at_hi(&self) -> ExtremalPoint {
        self.sample(self.t_hi).expect("horizon end is sampleable")
    }

    fn arc_index_for(&self, t: f64, side: Side) -> Option<usize> {
        if t < self.t_lo - 1e-12 || t > self.t_hi + 1e-12 {
            return None;
        }
        let mut idx = None;
        for (i, arc) in self.arcs.iter().enumerate() {
            if t >= arc.t_start - 1e-14 && t <= arc.t_end + 1e-14 {
                idx = Some(i);
                if side == Side::Left || t < arc.t_end - 1e-14 {
                    return idx;
                }
                // at the arc boundary and Right requested: prefer next arc
                if i + 1 < self.arcs.len() {
                    return Some(i + 1);
                }
                return idx;
            }
        }
        idx
    }

    /// Interpolated extremal point; at switching times the right limit.
    pub fn sample(&self, t: f64) -> Result<ExtremalPoint, PropagationError> {
        self.sample_sided(t, Side::Right)
    }

    pub fn sample_sided(&self, t: f64, side: Side) -> Result<ExtremalPoint, PropagationError> {
        let idx = self
            .arc_index_for(t, side)
            .ok_or(PropagationError::OutsideHorizon(t))?;
        let arc = &self.arcs[idx];
        let t_eval = t.clamp(arc.t_start, arc.t_end);
        let step = arc
            .find_step(t_eval)
            .ok_or(PropagationError::OutsideHorizon(t))?;
        let y = step.eval(t_eval);
        let mut z = Z14::zeros();
        for i in 0..14 {
            z[i] = y[i];
        }
        Ok(ExtremalPoint::from_packed(t, self.model.chart, &z))
    }

    /// Throttle at an epoch (one-sided at switchings).
    pub fn throttle_at(&self, t: f64, side: Side) -> Result<f64, PropagationError> {
        let idx = self
            .arc_index_for(t, side)
            .ok_or(PropagationError::OutsideHorizon(t))?;
        let arc = &self.arcs[idx];
        let pt = self.sample_sided(t, side)?;
        let h1 = self.model.switching_function(&pt.x, &pt.p);
        Ok(self.law.throttle(arc.regime, h1))
    }

    /// Running Hamiltonian (arc-consistent throttle) at an epoch.
    pub fn hamiltonian_at(&self, t: f64, side: Side) -> Result<f64, PropagationError> {
        let pt = self.sample_sided(t, side)?;
        let rho = self.throttle_at(t, side)?;
        Ok(self.model.hamiltonian(&pt.x, &pt.p, rho))
    }

    /// Largest relative drift of the running Hamiltonian over all dense
    /// nodes, measured against the initial value.
    pub fn hamiltonian_drift(&self) -> f64 {
        let h0 = self
            .hamiltonian_at(self.t_lo, Side::Right)
            .expect("horizon start");
        let scale = h0.abs().max(1e-300);
        let mut worst = 0.0_f64;
        for arc in &self.arcs {
            for step in &arc.steps {
                for &t in &[step.t0, step.t1()] {
                    let t = t.clamp(arc.t_start, arc.t_end);
                    let pt = self.sample_sided(t, Side::Right).unwrap();
                    let h1 = self.model.switching_function(&pt.x, &pt.p);
                    let h = self
                        .model
                        .hamiltonian(&pt.x, &pt.p, self.law.throttle(arc.regime, h1));
                    worst = worst.max((h - h0).abs() / scale);
                }
            }
        }
        worst
    }

    /// Fuel cost \int rho dt recovered from the mass history.
    pub fn fuel_cost(&self) -> f64 {
        let m0 = self.point_at_lo().x[6];
        let mf = self.point_at_hi().x[6];
        (m0 - mf) / (self.model.engine.beta * self.model.engine.u_max)
    }

    /// All switchings regular per the crossing-regularity assumption.
    pub fn all_switchings_regular(&self) -> bool {
        self.switches.iter().all(|s| s.regular)
    }

    /// Refine a switching time inside a bracket against the trajectory's
    /// dense output. Returns (t*, H1(t*), H1dot(t*)).
    pub fn refine_switching(
        &self,
        t_lo: f64,
        t_hi: f64,
    ) -> Result<(f64, f64, f64), PropagationError> {
        let h1_of = |t: f64| -> Result<f64, PropagationError> {
            let pt = self.sample_sided(t, if t >= t_hi { Side::Left } else { Side::Right })?;
            Ok(self.model.switching_function(&pt.x, &pt.p))
        };
        let fa = h1_of(t_lo)?;
        let fb = h1_of(t_hi)?;
        if fa * fb > 0.0 {
            return Err(PropagationError::NoSignChange(t_lo, t_hi));
        }
        let (t_star, h1) = brent(
            |t| h1_of(t).unwrap_or(f64::NAN),
            t_lo,
            t_hi,
            fa,
            fb,
            1e-15 * t_hi.abs().max(1.0),
            200,
        );
        let pt = self.sample_sided(t_star, Side::Left)?;
        let h1_dot = self.model.h1_time_derivative(&pt.packed(), 0.0);
        Ok((t_star, h1, h1_dot))
    }

    /// Dense-node CSV: one row per node with state, costate, throttle,
    /// switching function, Hamiltonian.
    pub fn write_csv(&self, mut w: impl Write, header_lines: &[String]) -> std::io::Result<()> {
        for line in header_lines {
            writeln!(w, "# {line}")?;
        }
        let names = self.model.chart.component_names();
        write!(w, "t")?;
        for n in names {
            write!(w, ",{n}")?;
        }
        for n in names {
            write!(w, ",p_{n}")?;
        }
        writeln!(w, ",rho,H1,H")?;
        for arc in &self.arcs {
            // steps of backward-propagated arcs run t1 < t0; emit ascending
            let mut nodes: Vec<f64> = arc
                .steps
                .iter()
                .map(|s| s.t0.min(s.t1()).clamp(arc.t_start, arc.t_end))
                .collect();
            nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            nodes.push(arc.t_end);
            for t in nodes {
                let pt = self.sample_sided(t, if t >= arc.t_end { Side::Left } else { Side::Right })?;
                let h1 = self.model.switching_function(&pt.x, &pt.p);
                let rho = self.law.throttle(arc.regime, h1);
                let h = self.model.hamiltonian(&pt.x, &pt.p, rho);
                write!(w, "{t}")?;
                for i in 0..7 {
                    write!(w, ",{}", pt.x[i])?;
                }
                for i in 0..7 {
                    write!(w, ",{}", pt.p[i])?;
                }
                writeln!(w, ",{rho},{h1},{h}")?;
            }
        }
        Ok(())
    }

    /// Switching-table CSV: (index, t_i, delta_rho_i, H1dot(t_i)).
    pub fn write_switching_csv(
        &self,
        mut w: impl Write,
        header_lines: &[String],
    ) -> std::io::Result<()> {
        for line in header_lines {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "i,t,delta_rho,h1_dot,regular")?;
        for (i, s) in self.switches.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", i, s.t, s.delta_rho, s.h1_dot, s.regular)?;
        }
        Ok(())
    }
}

impl From<std::io::Error> for PropagationError {
    fn from(_: std::io::Error) -> Self {
        unreachable!("io errors do not convert into propagation errors")
    }
}

impl From<PropagationError> for std::io::Error {
    fn from(e: PropagationError) -> Self {
        std::io::Error::other(e.to_string())
    }
}

/// Propagate the canonical system from `(t0, z0)` to `tf` (either direction)
/// under the given control law, locating every throttle-boundary crossing.
pub fn propagate(
    model: &Model,
    law: ControlLaw,
    t0: f64,
    z0: &Z14,
    tf: f64,
    integ: &Integrator,
) -> Result<ExtremalTrajectory, PropagationError> {
    let dir = if tf >= t0 { 1.0 } else { -1.0 };
    let thresholds = law.thresholds();

    let x0 = z0.fixed_rows::<7>(0).into_owned();
    let p0 = z0.fixed_rows::<7>(7).into_owned();
    model
        .admissible(&x0)
        .map_err(|source| PropagationError::Dynamics { t: t0, source })?;

    // initial regime; at a boundary the propagation-direction derivative of
    // H1 picks the side the flow is entering
    let h1_0 = model.switching_function(&x0, &p0);
    let mut regime = {
        let on_boundary = thresholds.iter().any(|&c| (h1_0 - c).abs() <= SWITCH_TOL);
        if on_boundary {
            let h1dot = model.h1_time_derivative(z0, 0.0);
            law.regime_for(h1_0 + dir * h1dot * 1e-9)
        } else {
            law.regime_for(h1_0)
        }
    };

    let mut arcs: Vec<Arc> = Vec::new();
    let mut switches: Vec<SwitchPoint> = Vec::new();
    let mut t = t0;
    let mut z = *z0;
    let mut n_rhs_total = 0usize;

    while (tf - t) * dir > 0.0 {
        let rho_of = {
            let law = law;
            let model = *model;
            let reg = regime;
            move |zz: &Z14| -> f64 {
                match reg {
                    Regime::Coast => 0.0,
                    Regime::Full => 1.0,
                    Regime::Interior => {
                        let x = zz.fixed_rows::<7>(0).into_owned();
                        let p = zz.fixed_rows::<7>(7).into_owned();
                        law.throttle(reg, model.switching_function(&x, &p))
                    }
                }
            }
        };

        let rhs = |tt: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
            let mut zz = Z14::zeros();
            for i in 0..14 {
                zz[i] = y[i];
            }
            let x = zz.fixed_rows::<7>(0).into_owned();
            model
                .admissible(&x)
                .map_err(|e| format!("{e} (t = {tt})"))?;
            let out = model.canonical_rhs(&zz, rho_of(&zz));
            for i in 0..14 {
                dy[i] = out[i];
            }
            Ok(())
        };

        // dense H1 relative to each threshold, scanned per accepted step
        let h1_on = |step: &StepRecord, tt: f64| -> f64 {
            let y = step.eval(tt);
            let mut zz = Z14::zeros();
            for i in 0..14 {
                zz[i] = y[i];
            }
            let x = zz.fixed_rows::<7>(0).into_owned();
            let p = zz.fixed_rows::<7>(7).into_owned();
            model.switching_function(&x, &p)
        };

        let mut armed = vec![false; thresholds.len()];
        {
            // arm only boundaries we are safely away from
            for (k, &c) in thresholds.iter().enumerate() {
                armed[k] = (h1_on_z(model, &z) - c).abs() > 10.0 * SWITCH_TOL;
            }
        }
        let mut steps: Vec<StepRecord> = Vec::new();
        let mut event: Option<(f64, usize)> = None;

        let sol = integ.integrate(
            rhs,
            t,
            z.as_slice(),
            tf,
            |rec: &StepRecord| {
                const SUB: usize = 8;
                let mut ts = [0.0; SUB + 1];
                for (j, tj) in ts.iter_mut().enumerate() {
                    *tj = rec.t0 + rec.h * (j as f64) / (SUB as f64);
                }
                let vals: Vec<f64> = ts.iter().map(|&tt| h1_on(rec, tt)).collect();

                let mut best: Option<(f64, usize)> = None;
                for (k, &c) in thresholds.iter().enumerate() {
                    for j in 0..SUB {
                        let ga = vals[j] - c;
                        let gb = vals[j + 1] - c;
                        if !armed[k] {
                            if ga.abs() > 10.0 * SWITCH_TOL {
                                armed[k] = true;
                            } else {
                                continue;
                            }
                        }
                        if ga == 0.0 || ga * gb < 0.0 {
                            let (t_cross, _) = brent(
                                |tt| h1_on(rec, tt) - c,
                                ts[j],
                                ts[j + 1],
                                ga,
                                gb,
                                1e-15 * ts[j + 1].abs().max(1.0),
                                200,
                            );
                            let better = match best {
                                None => true,
                                Some((tb, _)) => (t_cross - tb) * dir < 0.0,
                            };
                            if better {
                                best = Some((t_cross, k));
                            }
                            break;
                        }
                    }
                }
                if let Some((t_cross, k)) = best {
                    event = Some((t_cross, k));
                    // keep the straddling step; it is truncated at the
                    // polished event time below
                    steps.push(rec.clone());
                    StepOutcome::StopAt(t_cross)
                } else {
                    steps.push(rec.clone());
                    StepOutcome::Continue
                }
            },
        );

        let sol = match sol {
            Ok(s) => s,
            Err(OdeError::RhsAbort { t: te, reason }) => {
                return Err(PropagationError::Dynamics {
                    t: te,
                    source: DynamicsError::Inadmissible(Box::leak(
                        reason.into_boxed_str(),
                    )),
                })
            }
            Err(e) => return Err(e.into()),
        };
        n_rhs_total += sol.n_rhs;

        if let Some((t_dense, k)) = event {
            // polish the event against re-integrated values: Newton on
            // g(t) = H1(z(t)) - c with z(t) from a fresh sub-integration of
            // the bracketing step
            let c = thresholds[k];
            let (step_t0, step_y0) = last_partial_start(&steps, t, &z, t_dense, dir);
            let sub = Integrator {
                rtol: integ.rtol,
                atol: integ.atol,
                h_max: integ.h_max,
                max_steps: 10_000,
            };
            let mut t_star = t_dense;
            let mut z_star = Z14::zeros();
            let mut h1 = 0.0;
            let mut h1dot = 0.0;
            for _ in 0..6 {
                let rhs2 = |tt: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
                    let mut zz = Z14::zeros();
                    for i in 0..14 {
                        zz[i] = y[i];
                    }
                    let x = zz.fixed_rows::<7>(0).into_owned();
                    model.admissible(&x).map_err(|e| format!("{e} (t = {tt})"))?;
                    let out = model.canonical_rhs(&zz, rho_of(&zz));
                    for i in 0..14 {
                        dy[i] = out[i];
                    }
                    Ok(())
                };
                let s2 = sub
                    .integrate(rhs2, step_t0, step_y0.as_slice(), t_star, |_| {
                        StepOutcome::Continue
                    })
                    .map_err(PropagationError::Integration)?;
                n_rhs_total += s2.n_rhs;
                for i in 0..14 {
                    z_star[i] = s2.y[i];
                }
                let x = z_star.fixed_rows::<7>(0).into_owned();
                let p = z_star.fixed_rows::<7>(7).into_owned();
                h1 = model.switching_function(&x, &p) - c;
                h1dot = model.h1_time_derivative(&z_star, rho_of(&z_star));
                if h1.abs() < SWITCH_TOL * 0.5 || h1dot == 0.0 {
                    break;
                }
                t_star -= h1 / h1dot;
            }

            // close the arc at the event
            push_partial_steps(&mut steps, t_star, dir);
            let regime_old = regime;
            let h1_probe = h1 + c + dir * h1dot * 1e-9;
            let regime_new = law.regime_for(h1_probe);
            let rho_old = law.throttle(regime_old, c);
            let rho_new = law.throttle(regime_new, c);
            let delta_rho = if dir > 0.0 {
                rho_new - rho_old
            } else {
                rho_old - rho_new
            };
            switches.push(SwitchPoint {
                t: t_star,
                delta_rho,
                h1_dot: h1dot,
                regular: h1dot.abs() > REGULARITY_FLOOR,
            });
            arcs.push(close_arc(t, t_star, regime_old, steps, dir));
            t = t_star;
            z = z_star;
            regime = regime_new;
        } else {
            for i in 0..14 {
                z[i] = sol.y[i];
            }
            arcs.push(close_arc(t, tf, regime, steps, dir));
            t = tf;
        }
    }

    if dir < 0.0 {
        arcs.reverse();
        switches.reverse();
    }
    let (t_lo, t_hi) = if dir > 0.0 { (t0, tf) } else { (tf, t0) };
    Ok(ExtremalTrajectory {
        model: *model,
        law,
        t_lo,
        t_hi,
        arcs,
        switches,
        n_rhs: n_rhs_total,
    })
}

/// Extend a trajectory backward past its start by propagating the canonical
/// system under the same control law, and splice the pieces into one
/// trajectory covering [t_ext, t_hi]. Focal-point scans on extended horizons
/// assume the feedback law keeps selecting the control before t0.
pub fn extend_backward(
    traj: &ExtremalTrajectory,
    t_ext: f64,
    integ: &Integrator,
) -> Result<ExtremalTrajectory, PropagationError> {
    assert!(t_ext < traj.t_lo);
    let z0 = traj.point_at_lo().packed();
    let ext = propagate(&traj.model, traj.law, traj.t_lo, &z0, t_ext, integ)?;

    let mut arcs = ext.arcs;
    // the seam is not an event: regimes agree across it in the generic case
    if let (Some(last), Some(first)) = (arcs.last(), traj.arcs.first()) {
        debug_assert_eq!(last.regime, first.regime);
    }
    arcs.extend(traj.arcs.iter().cloned());
    let mut switches = ext.switches;
    switches.extend(traj.switches.iter().cloned());

    Ok(ExtremalTrajectory {
        model: traj.model,
        law: traj.law,
        t_lo: t_ext,
        t_hi: traj.t_hi,
        arcs,
        switches,
        n_rhs: traj.n_rhs + ext.n_rhs,
    })
}

fn h1_on_z(model: &Model, z: &Z14) -> f64 {
    let x = z.fixed_rows::<7>(0).into_owned();
    let p = z.fixed_rows::<7>(7).into_owned();
    model.switching_function(&x, &p)
}

/// Starting data for the event-polishing sub-integration: the last stored
/// full step start, or the arc start when the event fell in the first step.
fn last_partial_start(
    steps: &[StepRecord],
    arc_t0: f64,
    arc_z0: &Z14,
    t_event: f64,
    dir: f64,
) -> (f64, Vec<f64>) {
    for s in steps.iter().rev() {
        if (t_event - s.t0) * dir > 0.0 {
            return (s.t0, s.y0.clone());
        }
    }
    let _ = t_event;
    (arc_t0, arc_z0.as_slice().to_vec())
}

/// Drop stored steps beyond the event and truncate the straddling one.
fn push_partial_steps(steps: &mut Vec<StepRecord>, t_star: f64, dir: f64) {
    steps.retain(|s| (s.t0 - t_star) * dir < 0.0);
    if let Some(last) = steps.last_mut() {
        if (last.t1() - t_star) * dir > 0.0 {
            *last = last.truncated(t_star);
        }
    }
}

fn close_arc(t_start: f64, t_end: f64, regime: Regime, mut steps: Vec<StepRecord>, dir: f64) -> Arc {
    if dir < 0.0 {
        steps.reverse();
        Arc {
            t_start: t_end,
            t_end: t_start,
            regime,
            steps,
        }
    } else {
        Arc {
            t_start,
            t_end,
            regime,
            steps,
        }
    }
}
