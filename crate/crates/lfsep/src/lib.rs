//! Light-field layer separation: recover a transmitted scene layer, a
//! superimposed secondary layer (reflection or translucency), and a refined
//! disparity map from one multi-view capture.
//!
//! All sub-aperture views are backward-warped to the central reference view
//! under a per-pixel disparity map and stacked row-wise into a matrix. When
//! the disparity is right, the transmitted content lines up across rows and
//! the stack is nearly rank-one, while the secondary layer (moving with a
//! different parallax) stays incoherent. A convex surrogate — nuclear norm
//! on the transmitted stack, sparsity on the secondary layer and on both
//! layers' gradients, an l1-TV prior on disparity — is minimized with an
//! inexact augmented-Lagrangian scheme that alternates layer updates with
//! a linearized disparity refinement and periodic re-warping.
//!
//! Modules follow the pipeline:
//! - [`lf_model`]: light fields, disparity maps, stacks, and their I/O
//! - [`warp`]: backward warping, finite differences, warp linearization
//! - [`init_flow`]: block-matching correspondences and the initial disparity
//! - [`prox`]: closed-form sub-problem solvers (SVT, shrinkage, CG)
//! - [`solver`]: the alternating scheme and its configuration
//! - [`synth`]: synthetic scenes with ground truth
//! - [`metrics`]: layer and disparity error measures
//! - [`refocus`]: depth-guided refocusing of the recovered layer

pub mod chart;
pub mod cli;
pub mod error;
pub mod img;
pub mod init_flow;
pub mod io;
pub mod lf_model;
pub mod metrics;
pub mod prox;
pub mod refocus;
pub mod solver;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
pub use img::Image;
pub use lf_model::{grid_offsets, DisparityMap, GridOffset, LayerStack, LightField};
pub use solver::{separate, SeparationResult, SolveStatus, SolverConfig};
