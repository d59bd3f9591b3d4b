//! Classical and adapted Lie splitting for convection-diffusion problems
//! whose convective field is unbounded but small in weak-L^N.
//!
//! The crate is organised bottom-up: [`mesh`] and [`operators`] build the
//! semi-discrete system, [`flows`] propagates its linear subproblems,
//! [`splitting`] composes them, [`reference`] provides the unsplit ground
//! truth and [`experiments`] runs convergence sweeps. [`lorentz`] holds the
//! weak-norm toolkit used to choose the truncation level.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiments;
pub mod flows;
pub mod lorentz;
pub mod mesh;
pub mod operators;
pub mod reference;
pub mod splitting;

pub use experiments::{builtin, run_sweep, ErrorReport, ExperimentSpec, SweepOptions};
pub use mesh::{GridField, Mesh};
pub use splitting::{build_scheme, integrate, lie_step, KPolicy, Problem, SchemeKind, SplitScheme};
