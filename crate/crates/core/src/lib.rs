//! Indirect-method trajectory optimization and neighboring optimal guidance
//! for fixed-time low-thrust multi-burn orbital transfers.
//!
//! The pipeline: solve the fuel-optimal two-point boundary value problem by
//! single shooting under an energy-to-fuel continuation, propagate the
//! variational matrices backward along the bang-bang nominal, verify the
//! Jacobi and transversal existence conditions, build the feedback gain
//! schedule (state-transition ratio and Riccati routes), and fly the
//! closed-loop guidance against perturbed initial states.

pub mod scalar;
pub mod units;
pub mod dynamics;
pub mod ode;
pub mod roots;
pub mod extremal;
pub mod boundary;
pub mod shooting;
pub mod variational;
pub mod conditions;
