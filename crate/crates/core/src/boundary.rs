//! Terminal constraint manifolds phi(x) = 0 and their tangent-space bases.

use crate::dynamics::{M7, V7};
use nalgebra::{DMatrix, DVector};

/// Twice continuously differentiable terminal constraint phi: X -> R^l with
/// full-rank gradient on the constraint manifold.
pub trait TerminalConstraint: Send + Sync {
    fn l(&self) -> usize;
    fn value(&self, x: &V7) -> DVector<f64>;
    /// l x 7 gradient rows.
    fn gradient(&self, x: &V7) -> DMatrix<f64>;
    /// Hessian of the i-th component; zero for constraints linear in the
    /// chart coordinates.
    fn hessian(&self, _x: &V7, _i: usize) -> M7 {
        M7::zeros()
    }
}

/// phi fixes a subset of state components to target values; the workhorse
/// for both the equinoctial six-element endpoint (free mass) and Cartesian
/// rendezvous endpoints.
#[derive(Debug, Clone)]
pub struct FixedComponents {
    /// (component index, target value) pairs, one per constraint row.
    pub targets: Vec<(usize, f64)>,
}

impl FixedComponents {
    pub fn new(targets: Vec<(usize, f64)>) -> Self {
        let mut seen = [false; 7];
        for &(i, _) in &targets {
            assert!(i < 7, "component index out of range");
            assert!(!seen[i], "duplicate component in terminal constraint");
            seen[i] = true;
        }
        FixedComponents { targets }
    }

    /// Indices not fixed by the constraint.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..7)
            .filter(|i| !self.targets.iter().any(|(j, _)| j == i))
            .collect()
    }
}

impl TerminalConstraint for FixedComponents {
    fn l(&self) -> usize {
        self.targets.len()
    }

    fn value(&self, x: &V7) -> DVector<f64> {
        DVector::from_iterator(self.targets.len(), self.targets.iter().map(|&(i, v)| x[i] - v))
    }

    fn gradient(&self, _x: &V7) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.targets.len(), 7);
        for (row, &(i, _)) in self.targets.iter().enumerate() {
            g[(row, i)] = 1.0;
        }
        g
    }
}

/// Orthonormal basis of ker(grad) as columns (n x (n - l)), via modified
/// Gram-Schmidt over the coordinate directions after projecting out the
/// constraint rows.
pub fn kernel_basis(grad: &DMatrix<f64>) -> DMatrix<f64> {
    let n = grad.ncols();
    let l = grad.nrows();
    assert!(l <= n);

    // orthonormalize the constraint rows first
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    for i in 0..l {
        let mut v: DVector<f64> = grad.row(i).transpose();
        for b in &basis {
            let c = b.dot(&v);
            v -= c * b;
        }
        let norm = v.norm();
        assert!(norm > 1e-12, "terminal constraint gradient is rank deficient");
        basis.push(v / norm);
    }

    // extend with coordinate directions; the survivors span the kernel
    let mut kernel: Vec<DVector<f64>> = Vec::with_capacity(n - l);
    for j in 0..n {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        for b in basis.iter().chain(kernel.iter()) {
            let c = b.dot(&v);
            v -= c * b;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            kernel.push(v / norm);
        }
        if kernel.len() == n - l {
            break;
        }
    }
    assert_eq!(kernel.len(), n - l, "failed to complete the kernel basis");

    let mut out = DMatrix::zeros(n, n - l);
    for (j, v) in kernel.iter().enumerate() {
        out.set_column(j, v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fixed_components_residual_and_gradient() {
        let c = FixedComponents::new(vec![(0, 1.0), (2, -0.5)]);
        let mut x = V7::zeros();
        x[0] = 1.25;
        x[2] = -0.5;
        let v = c.value(&x);
        assert_eq!(v.len(), 2);
        assert!((v[0] - 0.25).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        let g = c.gradient(&x);
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 2)], 1.0);
        assert_eq!(c.free_indices(), vec![1, 3, 4, 5, 6]);
    }

    #[test]
    fn kernel_basis_is_orthonormal_and_annihilated() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for l in 1..7 {
            let grad = DMatrix::from_fn(l, 7, |_, _| rng.gen_range(-1.0..1.0));
            let b = kernel_basis(&grad);
            assert_eq!(b.ncols(), 7 - l);
            let prod = &grad * &b;
            assert!(prod.norm() < 1e-12, "grad * B = {}", prod.norm());
            let gram = b.transpose() * &b;
            assert!((gram - DMatrix::identity(7 - l, 7 - l)).norm() < 1e-12);
        }
    }
}
