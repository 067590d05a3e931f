//! Pseudospectral toolkit for nonlinear kinetic and fractional Fokker-Planck
//! equations with singular convolution drifts.
//!
//! The crate is organised around a periodic phase-space lattice
//! ([`grid::PhaseGrid`]) on which fields are transformed, filtered into
//! anisotropic dyadic blocks ([`besov`]), propagated by the kinetic semigroup
//! ([`semigroup`]) and driven by singular interaction kernels ([`kernels`]).
//! [`fpe`] solves the nonlinear mild formulation and [`mckv`] simulates the
//! matching McKean-Vlasov particle system.

pub mod error;
mod fft;
pub mod besov;
pub mod fit;
pub mod fpe;
pub mod grid;
pub mod kernels;
pub mod mckv;
pub mod semigroup;

pub use error::{Error, Result};
pub use grid::{Integrability, PhaseField, PhaseGrid};

// The guide's chapters, compiled so their listings run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/blocks.md")]
    mod blocks {}
    #[doc = include_str!("../../../book/src/semigroup.md")]
    mod semigroup {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/particles.md")]
    mod particles {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
