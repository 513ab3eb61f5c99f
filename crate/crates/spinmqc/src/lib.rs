//! Multiple-quantum coherence simulation for dipolar spin chains.

pub mod analytic;
pub mod bathlab;
pub mod error;
pub mod hamiltonian;
pub mod lattice;
pub mod linalg;
pub mod mqc;
pub mod propagator;
pub mod states;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/conventions.md")]
    mod conventions {}
    #[doc = include_str!("../../../book/src/analytic.md")]
    mod analytic {}
    #[doc = include_str!("../../../book/src/mqc.md")]
    mod mqc {}
    #[doc = include_str!("../../../book/src/pulses.md")]
    mod pulses {}
    #[doc = include_str!("../../../book/src/baths.md")]
    mod baths {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
