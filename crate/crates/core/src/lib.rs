//! Weyl quantization and a normal-form workbench for `i∂tψ = (−Δ_g + V(t))ψ`
//! on flat tori, at finite Fourier truncation.

pub mod cli;
pub mod clusters;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod homological;
pub mod normal_form;
pub mod resonance;
pub mod symbols;
pub mod union_find;
pub mod weyl;

pub use error::{Error, Result};
