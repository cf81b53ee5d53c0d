//! Supervised graph contrastive pretraining for few-shot node classification.
//!
//! The pipeline:
//!
//! 1. [`connectivity`] ranks every node's strongest structural partners
//!    (node algebraic distance or personalized PageRank) and cuts a small
//!    subgraph around it.
//! 2. [`encoder`] runs one graph-convolution layer over each subgraph and
//!    produces a centric-node embedding plus a score-weighted readout.
//! 3. [`contrast`] assembles balanced duo-view batches and evaluates the
//!    supervised contrastive loss (or the SimCLR / cross-entropy baselines).
//! 4. [`train`] optimizes the encoder with Adam on base classes.
//! 5. [`fewshot`] freezes the encoder and fits a logistic-regression head on
//!    N-way K-shot episodes drawn from novel classes.

pub mod autodiff;
pub mod connectivity;
pub mod contrast;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod fewshot;
pub mod graph;
pub mod train;

pub use error::{Error, Result};
