//! Small dense linear algebra, Newton iteration and adaptive ODE integration.

pub mod eigen;
pub mod linalg;
pub mod matrix;
pub mod newton;
pub mod ode;
pub mod quadrature;
pub mod variational;

pub use eigen::{eigenvalues, real_eigenvector, Spectrum};
pub use linalg::{determinant, inverse, solve_linear, Lu};
pub use matrix::{dot, norm2, norm_inf, SmallMatrix};
pub use newton::{finite_difference_jacobian, newton, NewtonOptions};
pub use ode::{integrate_final, integrate_ode, DenseOutput, Dopri5, IntegratorOptions, OdeSolution};
pub use variational::{monodromy, variational_flow, FlowDerivative};
