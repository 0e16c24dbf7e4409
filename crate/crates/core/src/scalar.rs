//! Forward-mode dual numbers for exact derivatives of the chart dynamics.
//!
//! The canonical right-hand side needs `-∂H/∂x` in charts where the costate
//! equations are impractical to write out by hand, and the variational
//! equations need the second-derivative blocks of the maximized Hamiltonian.
//! Both come from evaluating the (scalar-generic) Hamiltonian on `Dual`
//! numbers: one level of nesting per derivative order. Derivatives are exact
//! to machine precision, unlike finite differences, which matters at the
//! integration tolerances used here (1e-12).

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar field the dynamics are written over: `f64` or a dual tower.
pub trait Real:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal (zeroth-order) part.
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Dual number with `N` independent derivative lanes over scalar `S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S, const N: usize> {
    pub re: S,
    pub eps: [S; N],
}

impl<S: Real, const N: usize> Dual<S, N> {
    pub fn constant(re: S) -> Self {
        Dual {
            re,
            eps: [S::zero(); N],
        }
    }

    /// Variable seeded in derivative lane `lane`.
    pub fn variable(re: S, lane: usize) -> Self {
        let mut eps = [S::zero(); N];
        eps[lane] = S::one();
        Dual { re, eps }
    }
}

impl<S: Real, const N: usize> Add for Dual<S, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e = *e + *r;
        }
        Dual {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl<S: Real, const N: usize> Sub for Dual<S, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e = *e - *r;
        }
        Dual {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl<S: Real, const N: usize> Mul for Dual<S, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [S::zero(); N];
        for i in 0..N {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Dual {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<S: Real, const N: usize> Div for Dual<S, N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        let mut eps = [S::zero(); N];
        for i in 0..N {
            eps[i] = (self.eps[i] - q * rhs.eps[i]) / rhs.re;
        }
        Dual { re: q, eps }
    }
}

impl<S: Real, const N: usize> Neg for Dual<S, N> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Dual { re: -self.re, eps }
    }
}

impl<S: Real, const N: usize> Real for Dual<S, N> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(S::from_f64(v))
    }

    fn value(self) -> f64 {
        self.re.value()
    }

    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        let half = S::from_f64(0.5);
        let mut eps = [S::zero(); N];
        for i in 0..N {
            eps[i] = half * self.eps[i] / r;
        }
        Dual { re: r, eps }
    }

    fn sin(self) -> Self {
        let c = self.re.cos();
        let mut eps = [S::zero(); N];
        for i in 0..N {
            eps[i] = c * self.eps[i];
        }
        Dual {
            re: self.re.sin(),
            eps,
        }
    }

    fn cos(self) -> Self {
        let s = -self.re.sin();
        let mut eps = [S::zero(); N];
        for i in 0..N {
            eps[i] = s * self.eps[i];
        }
        Dual {
            re: self.re.cos(),
            eps,
        }
    }

    fn powi(self, n: i32) -> Self {
        let d = S::from_f64(n as f64) * self.re.powi(n - 1);
        let mut eps = [S::zero(); N];
        for i in 0..N {
            eps[i] = d * self.eps[i];
        }
        Dual {
            re: self.re.powi(n),
            eps,
        }
    }
}

/// Euclidean norm of a 3-vector, generic over the scalar.
pub fn norm3<S: Real>(v: &[S; 3]) -> S {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dot3<S: Real>(a: &[S; 3], b: &[S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Gradient of a scalar function of `n` variables (n <= N lanes) at `x`.
///
/// Lanes beyond `n` stay unused; callers pick `N` to fit the largest use.
pub fn gradient<const N: usize>(f: impl Fn(&[Dual<f64, N>]) -> Dual<f64, N>, x: &[f64]) -> Vec<f64> {
    assert!(x.len() <= N);
    let args: Vec<Dual<f64, N>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::variable(v, i))
        .collect();
    let out = f(&args);
    out.eps[..x.len()].to_vec()
}
