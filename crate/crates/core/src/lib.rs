//! Bayesian inference for the latent position cluster model with the
//! mixture parameters integrated out.
//!
//! The sampler explores latent positions, cluster labels, the number of
//! clusters and the abundance parameter jointly. See the guide in `book/`
//! for a walk through the model and the moves.

pub mod bic;
pub mod datasets;
pub mod error;
pub mod model;
pub mod netdata;
pub mod postprocess;
pub mod sampler;
pub mod simstudy;

pub use error::{Error, Result};
pub use model::{Allocation, HyperParams, LatentConfig, Positions};
pub use netdata::Network;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/sampler.md")]
    mod sampler {}
    #[doc = include_str!("../../../book/src/summaries.md")]
    mod summaries {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/bic.md")]
    mod bic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
