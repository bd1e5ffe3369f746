//! Stationary random signals on simplicial complexes.
//!
//! The crate is organised bottom-up:
//!
//! * [`complex`] holds the combinatorial domain (simplices, incidence matrices, SCF files).
//! * [`spectral`] builds Hodge Laplacians and the Dirac operator and diagonalizes them.
//! * [`signals`] generates stationary ensembles from white noise and topological filters.
//! * [`estimation`] recovers power spectral densities and covariances, nonparametrically
//!   and through MA/AR/kernel models.
//! * [`recovery`] uses those second-order statistics for Wiener denoising and interpolation.
//! * [`cli`] wires everything into a command-line tool and seeded experiment runners.

pub mod cli;
pub mod complex;
pub mod error;
pub mod estimation;
mod linalg;
pub mod recovery;
pub mod rng;
pub mod signals;
pub mod spectral;

pub use complex::{IncidenceMatrix, Simplex, SimplicialComplex};
pub use error::{Error, Result};
pub use estimation::{CovarianceEstimate, Method, Psd};
pub use signals::{FilterSpec, SignalEnsemble, SpectralModel};
pub use spectral::{OperatorKind, SpectralBasis, Subspace, TopologicalOperator};
