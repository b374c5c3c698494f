//! Concentrating solutions of `−ε²Δu + Vu = uᵖ` along curves.
//!
//! See the [`guide`] for a walk through the modules.

pub mod ansatz;
pub mod error;
pub mod geom;
pub mod k_ops;
pub mod numeric;
pub mod linop;
pub mod norms;
pub mod potential;
pub mod profile;

pub use error::{Error, ParseError, Result};

/// The guide under `book/`; its code blocks run as doctests.
pub mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod chapter1 {}
    #[doc = include_str!("../../../book/src/ground_state.md")]
    pub mod chapter2 {}
    #[doc = include_str!("../../../book/src/linearized.md")]
    pub mod chapter3 {}
    #[doc = include_str!("../../../book/src/fermi.md")]
    pub mod chapter4 {}
    #[doc = include_str!("../../../book/src/stationary.md")]
    pub mod chapter5 {}
    #[doc = include_str!("../../../book/src/operators.md")]
    pub mod chapter6 {}
    #[doc = include_str!("../../../book/src/ansatz.md")]
    pub mod chapter7 {}
    #[doc = include_str!("../../../book/src/reduced.md")]
    pub mod chapter8 {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod chapter9 {}
}
