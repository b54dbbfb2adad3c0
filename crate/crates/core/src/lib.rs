pub mod alm;
pub mod base_gen;
pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod knowledge;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod penalties;
pub mod rng;
pub mod scm;
pub mod tv;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/knowledge.md")]
    mod knowledge {}
    #[doc = include_str!("../../../book/src/penalties.md")]
    mod penalties {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
