// SPDX-License-Identifier: Apache-2.0

//! Positive-P phase-space simulation of driven-dissipative Kerr lattices fed
//! by cascade-coupled quantum sources, plus the pieces needed to use such a
//! lattice as a quantum reservoir computer:
//!
//! * [`model`]: reservoir parameterization (lattice, random hopping, drives).
//! * [`sampler`]: positive-P samples of coherent, thermal, squeezed and cat inputs.
//! * [`dynamics`]: the exponential semi-implicit midpoint integrator and ensembles.
//! * [`observables`]: steady states and time-integrated feature vectors.
//! * [`oracle`]: exact truncated-Fock Lindblad solver used for validation.
//! * [`learn`]: linear softmax / least-squares readouts trained with Adam.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel fan-out live in the `pqrc` companion crate.

#![no_std]
// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod dynamics;
pub mod error;
pub mod learn;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
