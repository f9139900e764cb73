//! Learned energy-efficient beamforming for multi-user MISO downlinks.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small tape-based reverse-mode AD engine.
//! - [`sysmodel`]: channels, rates, weighted energy efficiency, the power
//!   budget projection and the dataset file format.
//! - [`model`]: the transformer-encoder / KAN-decoder network and the
//!   GAT, MLP-decoder and flat-MLP baselines.
//! - [`training`]: the unsupervised objective, He init, Adam and the
//!   epoch loop with best-validation selection.
//! - [`oracle`]: numerical reference solvers used for optimality ratios.
//! - [`experiment`]: evaluation, transfer, ablation and latency protocols.

pub mod autodiff;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod sysmodel;
pub mod training;
