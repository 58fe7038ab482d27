//! Rank inference for noisily observed functional data.
//!
//! Given `n` curves observed with measurement error on a common grid of `L`
//! points, this crate tests hypotheses about the rank of the underlying
//! covariance kernel. The corrupted diagonal of the empirical covariance is
//! discarded entirely: each candidate rank `q` is scored by the best
//! off-diagonal fit achievable with a rank-`q` matrix, the fit is calibrated
//! by a model-conforming bootstrap, and a stepwise scan over `q = 1, 2, ...`
//! turns the per-rank p-values into a rank estimate with family-wise control
//! of over-estimation.
//!
//! The crate is organized as a library; see the `examples/` directory for a
//! runnable tour (simulation, scree plots, single fits, bootstrap p-values,
//! the sequential procedure, and benchmark tables). A thin `covrank` binary
//! exposes the same functionality on the command line.
//!
//! ```
//! use covrank::fit::{fit_rank, FitOptions};
//! use covrank::linalg::CovMatrix;
//! use nalgebra::{DMatrix, DVector};
//!
//! // A rank-1 matrix is recovered exactly from its off-diagonal entries.
//! let c = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
//! let k = CovMatrix::new(&c * c.transpose()).unwrap();
//! let fit = fit_rank(&k, 1, &FitOptions::default()).unwrap();
//! assert!(fit.statistic < 1e-10);
//! ```

pub mod bench;
pub mod bootstrap;
pub mod cli;
pub mod error;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod rank;
pub mod sim;

mod seedstream;

pub use error::{Error, Result};
