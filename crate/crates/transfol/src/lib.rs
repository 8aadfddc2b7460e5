//! Transverse linearized dynamics for two-degree-of-freedom mechanical
//! Hamiltonian systems.
//!
//! The crate studies Hamiltonians of the form `H = |y|^2 / 2 + V(x)` on a
//! four-dimensional phase space.  Away from velocity-zero points, a
//! quaternion-style orthonormal frame attached to the normalized gradient of
//! `H` splits the linearized flow along any trajectory into a planar
//! "transverse" part governed by a 2x2 symmetric matrix built from curvature
//! coefficients of the potential.  On top of that splitting the crate
//! provides:
//!
//! * a model zoo of concrete potentials ([`model`]), with capping and
//!   saddle-rescaling transforms;
//! * critical points, zero-velocity curves, and bounded Hill components
//!   ([`hill`]);
//! * trajectory and variational integration with event location
//!   ([`dynamics`], [`ode`]);
//! * the transverse frame, its curvature coefficients, and the induced
//!   angular dynamics ([`frame`]);
//! * rotation (Conley–Zehnder–style) indices of periodic orbits, iteration
//!   asymptotics, and a neck-passage winding experiment ([`index`]);
//! * Lyapunov orbits near saddle-center equilibria, refinement, actions, and
//!   action rankings ([`orbits`]);
//! * explicit transverse-foliation leaves for decoupled potentials
//!   ([`foliation`]);
//! * the explicit profile curve for a holomorphic plane asymptotic to a
//!   Lyapunov orbit in the saddle-rescaled limit ([`plane`]);
//! * a self-auditing report that re-derives the headline quantitative
//!   claims with independent numerics ([`report`]).
//!
//! The `transfol` binary exposes the same functionality as a CLI.

pub mod dynamics;
pub mod error;
pub mod export;
pub mod foliation;
pub mod frame;
pub mod hill;
pub mod index;
pub mod model;
pub mod ode;
pub mod orbits;
pub mod plane;
pub mod report;

pub use error::{Error, Result};
