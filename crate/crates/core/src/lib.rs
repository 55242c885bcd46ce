//! Phase-space Monte Carlo simulation of linear bosonic networks.
//!
//! Gaussian inputs are sampled in the positive-P (normally ordered) or
//! Wigner (symmetrically ordered) representation, propagated through a
//! transmission matrix, and reduced to grouped click-count distributions
//! or quadrature entanglement witnesses, each with a sampling error taken
//! from independent sub-ensembles.
//!
//! ```
//! use phasenet::{
//!     counting::{grouped_probability, GroupedSpec},
//!     model::{ModeSpec, Ordering, SubEnsembleLayout},
//!     pipeline::Experiment,
//!     sampler::InputSpec,
//!     stats::{chi_square, exact_thermal_total},
//! };
//!
//! let input = InputSpec::uniform(ModeSpec::thermal(1.0)?, 4, Ordering::PositiveP)?;
//! let layout = SubEnsembleLayout::new(20, 500)?;
//! let exp = Experiment::new(input, None, layout, 7)?;
//! let dist = grouped_probability(&exp, &GroupedSpec::total(4)?)?;
//! let report = chi_square(&dist, &exact_thermal_total(4, 1.0)?)?;
//! assert!(report.chi2_per_k < 5.0);
//! # Ok::<(), phasenet::Error>(())
//! ```

pub mod counting;
pub mod entanglement;
mod error;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/orderings.md")]
mod book_orderings {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/sampling.md")]
mod book_sampling {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/networks.md")]
mod book_networks {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/counting.md")]
mod book_counting {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/validation.md")]
mod book_validation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/entanglement.md")]
mod book_entanglement {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
