pub mod algebra;
pub mod autodiff;
pub mod cvae;
pub mod distributions;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod info_measures;
pub mod linalg;
pub mod metrics;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/algebra.md")]
    mod algebra {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/info_measures.md")]
    mod info_measures {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/cvae.md")]
    mod cvae {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
