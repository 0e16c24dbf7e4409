//! Embedded Dormand-Prince 5(4) integration with dense output.
//!
//! Hand-rolled rather than pulled in as a dependency because the propagation
//! layer needs tight control over step acceptance: switching detection scans
//! every accepted step's dense polynomial, truncates the step at a refined
//! event time, and restarts integration there. Works in either time
//! direction; the caller passes `tf < t0` for backward sweeps.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size collapsed at t = {t} (|h| = {h})")]
    StepSizeCollapse { t: f64, h: f64 },
    #[error("step budget exhausted after {0} steps")]
    TooManySteps(usize),
    #[error("right-hand side returned a non-finite value at t = {0}")]
    NonFiniteRhs(f64),
    #[error("integration aborted by the right-hand side at t = {t}: {reason}")]
    RhsAbort { t: f64, reason: String },
}

/// One accepted step with its quartic dense-output polynomial.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t0: f64,
    /// Signed step actually taken; the dense polynomial is parameterized by
    /// theta = (t - t0)/h, so `h` stays fixed even when the span is truncated.
    pub h: f64,
    /// End of the validity span (equals t0 + h unless truncated at an event).
    pub t_end: f64,
    pub y0: Vec<f64>,
    cont: [Vec<f64>; 5],
}

impl StepRecord {
    pub fn t1(&self) -> f64 {
        self.t_end
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    /// True when `t` lies within the (possibly truncated) step span,
    /// regardless of integration direction.
    pub fn contains(&self, t: f64) -> bool {
        let lo = self.t0.min(self.t_end);
        let hi = self.t0.max(self.t_end);
        t >= lo && t <= hi
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        for i in 0..self.y0.len() {
            out[i] = self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + theta1
                            * (self.cont[2][i]
                                + theta * (self.cont[3][i] + theta1 * self.cont[4][i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.y0.len()];
        self.eval_into(t, &mut out);
        out
    }

    /// Truncate the step at `t_stop` (keeps the polynomial, shortens the span).
    pub fn truncated(&self, t_stop: f64) -> StepRecord {
        let mut s = self.clone();
        s.t_end = t_stop;
        s
    }
}

/// Observer verdict after each accepted step.
pub enum StepOutcome {
    Continue,
    /// Truncate the just-accepted step at the given epoch and return.
    StopAt(f64),
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub t: f64,
    pub y: Vec<f64>,
    pub n_steps: usize,
    pub n_rhs: usize,
    /// Set when the observer requested an early stop.
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator {
            rtol: 1e-12,
            atol: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 4_000_000,
        }
    }
}

impl Integrator {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        Integrator {
            rtol,
            atol,
            ..Default::default()
        }
    }

    /// Integrate `y' = f(t, y)` from `t0` to `tf`, invoking `observer` on
    /// every accepted step. The right-hand side may return `Err` to abort
    /// (fuel exhaustion, admissibility exit).
    pub fn integrate<F, O>(
        &self,
        mut rhs: F,
        t0: f64,
        y0: &[f64],
        tf: f64,
        mut observer: O,
    ) -> Result<Solution, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), String>,
        O: FnMut(&StepRecord) -> StepOutcome,
    {
        let n = y0.len();
        let mut y = y0.to_vec();
        let mut t = t0;
        if t0 == tf {
            return Ok(Solution {
                t,
                y,
                n_steps: 0,
                n_rhs: 0,
                stopped_early: false,
            });
        }
        let dir = (tf - t0).signum();
        let mut n_rhs = 0usize;
        let mut n_steps = 0usize;

        let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
        let mut ytmp = vec![0.0; n];
        let mut ynew = vec![0.0; n];
        let mut yerr = vec![0.0; n];

        let mut call = |t: f64, y: &[f64], out: &mut [f64], n_rhs: &mut usize| -> Result<(), OdeError> {
            *n_rhs += 1;
            rhs(t, y, out).map_err(|reason| OdeError::RhsAbort { t, reason })?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFiniteRhs(t));
            }
            Ok(())
        };

        call(t, &y, &mut k[0], &mut n_rhs)?;
        let mut h = dir * self.initial_step(&mut |t, y, out| call(t, y, out, &mut n_rhs), t, &y, &k[0].clone(), dir)?;
        let mut err_old: f64 = 1e-4;

        loop {
            if n_steps > self.max_steps {
                return Err(OdeError::TooManySteps(n_steps));
            }
            if h.abs() > self.h_max {
                h = dir * self.h_max;
            }
            // land exactly on tf
            let mut last = false;
            if (t + h - tf) * dir >= 0.0 {
                h = tf - t;
                last = true;
            }
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::StepSizeCollapse { t, h });
            }

            // six fresh stages (k1 carried over, FSAL)
            for (stage, (ai, ci)) in A_COEF.iter().zip(C_COEF.iter()).enumerate() {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, &aij) in ai.iter().enumerate() {
                        acc += aij * k[j][i];
                    }
                    ytmp[i] = y[i] + h * acc;
                }
                call(t + ci * h, &ytmp, &mut k[stage + 1], &mut n_rhs)?;
            }
            // 5th-order solution is stage 7's argument (a7 row equals b)
            ynew.copy_from_slice(&ytmp);
            for i in 0..n {
                let mut e = 0.0;
                for (j, &ej) in E_COEF.iter().enumerate() {
                    e += ej * k[j][i];
                }
                yerr[i] = h * e;
            }

            // weighted RMS error
            let mut err = 0.0;
            for i in 0..n {
                let sc = self.atol + self.rtol * y[i].abs().max(ynew[i].abs());
                let q = yerr[i] / sc;
                err += q * q;
            }
            err = (err / n as f64).sqrt();

            if err <= 1.0 {
                // accept: build dense output
                let mut cont = [
                    y.clone(),
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                ];
                for i in 0..n {
                    let ydiff = ynew[i] - y[i];
                    let bspl = h * k[0][i] - ydiff;
                    cont[1][i] = ydiff;
                    cont[2][i] = bspl;
                    cont[3][i] = ydiff - h * k[6][i] - bspl;
                    cont[4][i] = h
                        * (D_COEF[0] * k[0][i]
                            + D_COEF[2] * k[2][i]
                            + D_COEF[3] * k[3][i]
                            + D_COEF[4] * k[4][i]
                            + D_COEF[5] * k[5][i]
                            + D_COEF[6] * k[6][i]);
                }
                let record = StepRecord {
                    t0: t,
                    h,
                    t_end: t + h,
                    y0: std::mem::take(&mut cont[0]),
                    cont: [
                        Vec::new(),
                        std::mem::take(&mut cont[1]),
                        std::mem::take(&mut cont[2]),
                        std::mem::take(&mut cont[3]),
                        std::mem::take(&mut cont[4]),
                    ],
                };
                // rcont1 duplicates y0; store it once
                let record = {
                    let mut r = record;
                    r.cont[0] = r.y0.clone();
                    r
                };

                n_steps += 1;
                t += h;
                std::mem::swap(&mut y, &mut ynew);
                k.swap(0, 6); // FSAL

                match observer(&record) {
                    StepOutcome::Continue => {}
                    StepOutcome::StopAt(t_stop) => {
                        let rec = record.truncated(t_stop);
                        let mut ystop = vec![0.0; n];
                        rec.eval_into(t_stop, &mut ystop);
                        return Ok(Solution {
                            t: t_stop,
                            y: ystop,
                            n_steps,
                            n_rhs,
                            stopped_early: true,
                        });
                    }
                }

                if last {
                    return Ok(Solution {
                        t: tf,
                        y,
                        n_steps,
                        n_rhs,
                        stopped_early: false,
                    });
                }

                // PI step-size control
                let fac = 0.9 * err.powf(-0.7 / 5.0) * err_old.powf(0.4 / 5.0);
                let fac = fac.clamp(0.2, 10.0);
                err_old = err.max(1e-4);
                h *= fac;
            } else {
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                h *= fac;
            }
        }
    }

    /// Convenience wrapper storing every accepted step.
    pub fn integrate_dense<F>(
        &self,
        rhs: F,
        t0: f64,
        y0: &[f64],
        tf: f64,
        steps: &mut Vec<StepRecord>,
    ) -> Result<Solution, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), String>,
    {
        self.integrate(rhs, t0, y0, tf, |rec| {
            steps.push(rec.clone());
            StepOutcome::Continue
        })
    }

    /// Hairer-style starting step selection.
    fn initial_step<F>(
        &self,
        call: &mut F,
        t: f64,
        y: &[f64],
        f0: &[f64],
        dir: f64,
    ) -> Result<f64, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), OdeError>,
    {
        let n = y.len();
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..n {
            let sc = self.atol + self.rtol * y[i].abs();
            d0 += (y[i] / sc).powi(2);
            d1 += (f0[i] / sc).powi(2);
        }
        d0 = (d0 / n as f64).sqrt();
        d1 = (d1 / n as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };

        let mut y1 = vec![0.0; n];
        for i in 0..n {
            y1[i] = y[i] + dir * h0 * f0[i];
        }
        let mut f1 = vec![0.0; n];
        call(t + dir * h0, &y1, &mut f1)?;
        let mut d2 = 0.0;
        for i in 0..n {
            let sc = self.atol + self.rtol * y[i].abs();
            d2 += ((f1[i] - f0[i]) / sc).powi(2);
        }
        d2 = (d2 / n as f64).sqrt() / h0;

        let h1 = if d1.max(d2) < 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        Ok(h1.min(100.0 * h0).min(self.h_max))
    }
}

// Butcher tableau for the Dormand-Prince 5(4) pair.
const C_COEF: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A_COEF: [&[f64]; 6] = [
    &[0.2],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E_COEF: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D_COEF: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_growth_and_dense_output() {
        let integ = Integrator::with_tol(1e-12, 1e-12);
        let mut steps = Vec::new();
        let sol = integ
            .integrate_dense(
                |_t, y, dy| {
                    dy[0] = y[0];
                    Ok(())
                },
                0.0,
                &[1.0],
                2.0,
                &mut steps,
            )
            .unwrap();
        assert_relative_eq!(sol.y[0], 2.0_f64.exp(), max_relative = 1e-11);
        // dense output at off-node epochs
        for t in [0.137, 0.5, 1.113, 1.731] {
            let rec = steps.iter().find(|s| s.contains(t)).unwrap();
            assert_relative_eq!(rec.eval(t)[0], t.exp(), max_relative = 1e-9);
        }
    }

    #[test]
    fn harmonic_oscillator_backward_recovers_start() {
        let integ = Integrator::with_tol(1e-12, 1e-12);
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        };
        let fwd = integ
            .integrate(rhs, 0.0, &[1.0, 0.0], 10.0, |_| StepOutcome::Continue)
            .unwrap();
        let back = integ
            .integrate(rhs, 10.0, &fwd.y, 0.0, |_| StepOutcome::Continue)
            .unwrap();
        assert_relative_eq!(back.y[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(back.y[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn observer_stop_truncates_step() {
        let integ = Integrator::with_tol(1e-10, 1e-10);
        let sol = integ
            .integrate(
                |_t, y, dy| {
                    dy[0] = y[0];
                    Ok(())
                },
                0.0,
                &[1.0],
                5.0,
                |rec| {
                    if rec.t1() > 1.0 {
                        StepOutcome::StopAt(1.0)
                    } else {
                        StepOutcome::Continue
                    }
                },
            )
            .unwrap();
        assert!(sol.stopped_early);
        assert_relative_eq!(sol.t, 1.0);
        assert_relative_eq!(sol.y[0], 1.0_f64.exp(), max_relative = 1e-8);
    }

    #[test]
    fn rhs_abort_surfaces_epoch() {
        let integ = Integrator::default();
        let err = integ
            .integrate(
                |t, _y, dy| {
                    if t > 0.5 {
                        return Err("boom".into());
                    }
                    dy[0] = 1.0;
                    Ok(())
                },
                0.0,
                &[0.0],
                2.0,
                |_| StepOutcome::Continue,
            )
            .unwrap_err();
        match err {
            OdeError::RhsAbort { t, reason } => {
                assert!(t > 0.5);
                assert_eq!(reason, "boom");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn kepler_period_closure() {
        // circular orbit, one period, tight tolerance
        let integ = Integrator::with_tol(1e-12, 1e-12);
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
            let r2 = y[0] * y[0] + y[1] * y[1];
            let r3 = r2 * r2.sqrt();
            dy[0] = y[2];
            dy[1] = y[3];
            dy[2] = -y[0] / r3;
            dy[3] = -y[1] / r3;
            Ok(())
        };
        let period = 2.0 * std::f64::consts::PI;
        let sol = integ
            .integrate(rhs, 0.0, &[1.0, 0.0, 0.0, 1.0], period, |_| {
                StepOutcome::Continue
            })
            .unwrap();
        assert!((sol.y[0] - 1.0).abs() < 1e-10);
        assert!(sol.y[1].abs() < 1e-10);
        assert!(sol.y[2].abs() < 1e-10);
        assert!((sol.y[3] - 1.0).abs() < 1e-10);
    }
}
