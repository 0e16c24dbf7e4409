//! Canonical unit scaling and conversions among classical orbital elements,
//! Cartesian states, and modified equinoctial-type elements.
//!
//! All internal computation runs in canonical units: the length unit is the
//! target orbit radius, the time unit makes the gravitational parameter
//! exactly one, and the mass unit is the initial spacecraft mass. Angles are
//! radians internally; degree conversions happen at the CLI boundary.

use crate::scalar::Real;
use nalgebra::Vector3;
use thiserror::Error;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("degenerate orbit: a(1-e^2) = {0} must be positive")]
    DegenerateOrbit(f64),
    #[error("rectilinear orbit: r x v = 0")]
    Rectilinear,
    #[error("retrograde-equatorial singularity: i = pi has undefined (hx, hy)")]
    InclinationPi,
    #[error("non-positive unit scale: {0}")]
    BadScale(&'static str),
}

/// Scale factors tying canonical (DU, TU, MU) units to physical ones.
///
/// The time unit is derived so the gravitational parameter is exactly 1 in
/// DU^3/TU^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalUnits {
    length_km: f64,
    time_s: f64,
    mass_kg: f64,
}

impl CanonicalUnits {
    /// Build scales from a reference length, the physical gravitational
    /// parameter, and a reference mass.
    pub fn new(length_km: f64, mu_km3_s2: f64, mass_kg: f64) -> Result<Self, FrameError> {
        if !(length_km > 0.0) {
            return Err(FrameError::BadScale("length"));
        }
        if !(mu_km3_s2 > 0.0) {
            return Err(FrameError::BadScale("mu"));
        }
        if !(mass_kg > 0.0) {
            return Err(FrameError::BadScale("mass"));
        }
        let time_s = (length_km.powi(3) / mu_km3_s2).sqrt();
        Ok(CanonicalUnits {
            length_km,
            time_s,
            mass_kg,
        })
    }

    pub fn length_km(&self) -> f64 {
        self.length_km
    }
    pub fn time_s(&self) -> f64 {
        self.time_s
    }
    pub fn mass_kg(&self) -> f64 {
        self.mass_kg
    }

    /// Gravitational parameter in canonical units; 1 by construction.
    pub fn mu(&self) -> f64 {
        1.0
    }

    pub fn km_to_du(&self, km: f64) -> f64 {
        km / self.length_km
    }
    pub fn du_to_km(&self, du: f64) -> f64 {
        du * self.length_km
    }
    pub fn s_to_tu(&self, s: f64) -> f64 {
        s / self.time_s
    }
    pub fn tu_to_s(&self, tu: f64) -> f64 {
        tu * self.time_s
    }
    pub fn hours_to_tu(&self, h: f64) -> f64 {
        self.s_to_tu(h * 3600.0)
    }
    pub fn tu_to_hours(&self, tu: f64) -> f64 {
        self.tu_to_s(tu) / 3600.0
    }
    pub fn kg_to_mu(&self, kg: f64) -> f64 {
        kg / self.mass_kg
    }

    /// Thrust in newtons to canonical MU DU/TU^2.
    pub fn newton_to_canonical(&self, f_newton: f64) -> f64 {
        // N = kg m / s^2; DU is stored in km.
        f_newton * self.time_s * self.time_s / (self.mass_kg * self.length_km * 1000.0)
    }

    /// Mass-flow coefficient 1/(Isp g0) in s/m to canonical TU/DU.
    pub fn beta_si_to_canonical(&self, beta_s_per_m: f64) -> f64 {
        beta_s_per_m * self.length_km * 1000.0 / self.time_s
    }
}

/// Classical orbital elements in canonical length units and radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalElements {
    pub a: f64,
    pub e: f64,
    pub i: f64,
    pub argp: f64,
    pub raan: f64,
    pub true_anomaly: f64,
}

impl ClassicalElements {
    pub fn semi_latus_rectum(&self) -> f64 {
        self.a * (1.0 - self.e * self.e)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.e < 0.0 || self.semi_latus_rectum() <= 0.0 {
            return Err(FrameError::DegenerateOrbit(self.semi_latus_rectum()));
        }
        Ok(())
    }
}

/// Modified equinoctial-type elements plus mass.
///
/// `true_longitude` is cumulative (not reduced mod 2pi) so the revolution
/// count of a multi-rev transfer lives in the element itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquinoctialElements {
    pub p: f64,
    pub ex: f64,
    pub ey: f64,
    pub hx: f64,
    pub hy: f64,
    pub true_longitude: f64,
    pub m: f64,
}

/// Wrap an angle to [0, 2pi).
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TWO_PI);
    if w == TWO_PI {
        0.0
    } else {
        w
    }
}

/// Smallest absolute difference between two angles (mod 2pi).
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TWO_PI - d)
}

pub fn coe_to_cartesian(
    el: &ClassicalElements,
    mu: f64,
) -> Result<(Vector3<f64>, Vector3<f64>), FrameError> {
    el.validate()?;
    if !(mu > 0.0) {
        return Err(FrameError::BadScale("mu"));
    }
    let p = el.semi_latus_rectum();
    let f = el.true_anomaly;
    let r = p / (1.0 + el.e * f.cos());
    let r_pf = Vector3::new(r * f.cos(), r * f.sin(), 0.0);
    let v_pf = (mu / p).sqrt() * Vector3::new(-f.sin(), el.e + f.cos(), 0.0);

    let (so, co) = (el.raan.sin(), el.raan.cos());
    let (si, ci) = (el.i.sin(), el.i.cos());
    let (sw, cw) = (el.argp.sin(), el.argp.cos());
    // Rz(raan) Rx(i) Rz(argp), applied to perifocal coordinates.
    let rot = nalgebra::Matrix3::new(
        co * cw - so * sw * ci,
        -co * sw - so * cw * ci,
        so * si,
        so * cw + co * sw * ci,
        -so * sw + co * cw * ci,
        -co * si,
        sw * si,
        cw * si,
        ci,
    );
    Ok((rot * r_pf, rot * v_pf))
}

pub fn cartesian_to_coe(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    mu: f64,
) -> Result<ClassicalElements, FrameError> {
    let h = r.cross(v);
    if h.norm() < 1e-14 || r.norm() == 0.0 {
        return Err(FrameError::Rectilinear);
    }
    let rn = r.norm();
    let e_vec = ((v.norm_squared() - mu / rn) * r - r.dot(v) * v) / mu;
    let e = e_vec.norm();
    let energy = 0.5 * v.norm_squared() - mu / rn;
    let a = -mu / (2.0 * energy);
    let i = (h.z / h.norm()).clamp(-1.0, 1.0).acos();

    let node = Vector3::new(-h.y, h.x, 0.0);
    let circ = e < 1e-11;
    let equat = node.norm() < 1e-11;

    let raan = if equat { 0.0 } else { wrap_angle(node.y.atan2(node.x)) };

    let (argp, f) = match (circ, equat) {
        (false, false) => {
            let mut w = (node.dot(&e_vec) / (node.norm() * e)).clamp(-1.0, 1.0).acos();
            if e_vec.z < 0.0 {
                w = TWO_PI - w;
            }
            let mut nu = (e_vec.dot(r) / (e * rn)).clamp(-1.0, 1.0).acos();
            if r.dot(v) < 0.0 {
                nu = TWO_PI - nu;
            }
            (w, nu)
        }
        (false, true) => {
            // longitude of periapsis folded into argp
            let mut w = e_vec.y.atan2(e_vec.x);
            if h.z < 0.0 {
                w = -w;
            }
            let mut nu = (e_vec.dot(r) / (e * rn)).clamp(-1.0, 1.0).acos();
            if r.dot(v) < 0.0 {
                nu = TWO_PI - nu;
            }
            (wrap_angle(w), nu)
        }
        (true, false) => {
            // argument of latitude as the anomaly
            let mut u = (node.dot(r) / (node.norm() * rn)).clamp(-1.0, 1.0).acos();
            if r.z < 0.0 {
                u = TWO_PI - u;
            }
            (0.0, u)
        }
        (true, true) => {
            let mut lt = r.y.atan2(r.x);
            if h.z < 0.0 {
                lt = -lt;
            }
            (0.0, wrap_angle(lt))
        }
    };

    Ok(ClassicalElements {
        a,
        e,
        i,
        argp,
        raan,
        true_anomaly: f,
    })
}

pub fn coe_to_meoe(el: &ClassicalElements, mass: f64) -> Result<EquinoctialElements, FrameError> {
    el.validate()?;
    if (el.i - std::f64::consts::PI).abs() < 1e-12 {
        return Err(FrameError::InclinationPi);
    }
    let t = (el.i / 2.0).tan();
    Ok(EquinoctialElements {
        p: el.semi_latus_rectum(),
        ex: el.e * (el.argp + el.raan).cos(),
        ey: el.e * (el.argp + el.raan).sin(),
        hx: t * el.raan.cos(),
        hy: t * el.raan.sin(),
        true_longitude: el.true_anomaly + el.argp + el.raan,
        m: mass,
    })
}

pub fn meoe_to_coe(eq: &EquinoctialElements) -> Result<ClassicalElements, FrameError> {
    let e = (eq.ex * eq.ex + eq.ey * eq.ey).sqrt();
    if 1.0 - e * e <= 0.0 || eq.p <= 0.0 {
        return Err(FrameError::DegenerateOrbit(eq.p));
    }
    let tan_half = (eq.hx * eq.hx + eq.hy * eq.hy).sqrt();
    let i = 2.0 * tan_half.atan();
    let raan = if tan_half < 1e-12 {
        0.0
    } else {
        wrap_angle(eq.hy.atan2(eq.hx))
    };
    let lon_peri = if e < 1e-12 { 0.0 } else { eq.ey.atan2(eq.ex) };
    let argp = wrap_angle(lon_peri - raan);
    let f = eq.true_longitude - lon_peri;
    Ok(ClassicalElements {
        a: eq.p / (1.0 - e * e),
        e,
        i,
        argp,
        raan,
        true_anomaly: f,
    })
}

/// Position/velocity from equinoctial orbit components, generic over the
/// scalar so chart Jacobians can be taken with dual numbers.
///
/// Input layout: [p, ex, ey, hx, hy, l]; the retrograde case i = pi is
/// outside the chart domain.
pub fn meoe_orbit_to_rv<S: Real>(q: &[S; 6], mu: S) -> ([S; 3], [S; 3]) {
    let (p, ex, ey, hx, hy, l) = (q[0], q[1], q[2], q[3], q[4], q[5]);
    let one = S::one();
    let two = S::from_f64(2.0);
    let s2 = one + hx * hx + hy * hy;
    let (sl, cl) = (l.sin(), l.cos());
    let w = one + ex * cl + ey * sl;
    let r = p / w;

    // Equinoctial basis vectors expressed in the inertial frame.
    let fhat = [
        (one + hx * hx - hy * hy) / s2,
        (two * hx * hy) / s2,
        (-(two) * hy) / s2,
    ];
    let ghat = [
        (two * hx * hy) / s2,
        (one - hx * hx + hy * hy) / s2,
        (two * hx) / s2,
    ];

    let mut pos = [S::zero(); 3];
    let mut vel = [S::zero(); 3];
    let vs = (mu / p).sqrt();
    for k in 0..3 {
        pos[k] = r * cl * fhat[k] + r * sl * ghat[k];
        vel[k] = -(vs) * (sl + ey) * fhat[k] + vs * (cl + ex) * ghat[k];
    }
    (pos, vel)
}

/// Cartesian state to equinoctial orbit components (true longitude in
/// [0, 2pi); cumulative revolution count cannot be recovered pointwise).
pub fn rv_to_meoe_orbit(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    mu: f64,
) -> Result<[f64; 6], FrameError> {
    let coe = cartesian_to_coe(r, v, mu)?;
    let eq = coe_to_meoe(&coe, 1.0)?;
    Ok([
        eq.p,
        eq.ex,
        eq.ey,
        eq.hx,
        eq.hy,
        wrap_angle(eq.true_longitude),
    ])
}
