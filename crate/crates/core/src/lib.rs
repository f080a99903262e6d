//! Free and interacting scalar field algebras on a finite 1+1-dimensional
//! lattice: Klein-Gordon kernels, the Wick algebra with its on-shell quotient,
//! compression of observables into time slabs, and perturbative S-matrices.

pub mod error;
pub mod field_solver;
pub mod kernel_cache;
pub mod lattice;
pub mod perturbation;
pub mod timeslice;
pub mod wick_algebra;

pub use error::{Error, Result};
pub use field_solver::{FreeField, Kernel, KernelKind, KleinGordonOperator};
pub use lattice::{Direction, LatticeSpacetime, Point, Region, Slab, Topology};
pub use num_complex::Complex64 as C64;
pub use wick_algebra::{OnShellSymbol, SymTensor, WickElement};
