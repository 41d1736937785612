//! Spectral-Galerkin simulator for the nonlinear viscoelastic wave
//! equation with hereditary memory, plus the verification functionals
//! (energies, Lyapunov functions, kernel certification) used to check its
//! qualitative theory numerically.

pub mod diagnostics;
pub mod equilibria;
pub mod error;
pub mod history;
pub mod integrator;
pub mod kernel;
pub mod nonlin;
pub mod runner;
pub mod scenario;
pub mod spectral;

pub use error::{Error, Result};
