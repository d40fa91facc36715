//! Macroscopic lane dynamics: the second-order density/velocity-offset
//! conservation system, its interface Riemann solver, the finite-volume
//! update built on top, and analytical derivatives of all of it.

pub mod constitutive;
pub mod fvm;
pub mod riemann;
pub mod riemann_grad;

pub use constitutive::{eigenvalues, flux, flux_jacobian, flux_u_max_partial};
pub use fvm::{
    fvm_step, fvm_step_adjoint, fvm_step_jacobians, ghost_states, interface_profile, verify_cases,
    CellClamp, FvmError, FvmJacobians, FvmStepOutput, LaneAdjoint,
};
pub use riemann::{case_margin, solve_riemann, RiemannBranch, RiemannCase, RiemannSolution};
pub use riemann_grad::{riemann_gradients, RiemannGradients};
