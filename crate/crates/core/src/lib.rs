//! Distributional route planning on small road networks.
//!
//! A quantile-regression agent learns the return distribution of every
//! action on a directed road graph with stochastic crosswalk penalties.
//! Execution policies then pick actions from those distributions: greedy
//! on the mean, or by second-order stochastic dominance between the two
//! best actions.

pub mod checkpoint;
pub mod env;
pub mod learner;
pub mod nn;
pub mod oracle;
pub mod policies;
pub mod quantdist;
pub mod report;
pub mod rng;
pub mod roadnet;
pub mod trainer;

pub use env::{Env, EnvConfig};
pub use learner::{Agent, AgentConfig};
pub use policies::ExecPolicy;
pub use quantdist::QuantileDist;
pub use roadnet::GraphMap;
pub use trainer::RunConfig;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/roadnet.md")]
    mod roadnet {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/quantiles.md")]
    mod quantiles {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/trials.md")]
    mod trials {}
}
