//! Gender-bias auditing for occupation classification from online biographies.
//!
//! The pipeline: extract biographies from raw text ([`corpus`]), optionally
//! scrub or swap explicit gender indicators ([`scrub`]), encode them
//! ([`represent`]) and fit one of three classifier stacks ([`linear`],
//! [`rnn`], glued together in [`stack`]), then measure true-positive-rate
//! gender gaps and related statistics ([`audit`]), simulate how the gaps
//! compound over repeated selection ([`simulate`]), and look for proxy words
//! through attention weights ([`proxy`]).

pub mod audit;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod linear;
pub mod proxy;
pub mod report;
pub mod represent;
pub mod rnn;
pub mod scrub;
pub mod simulate;
pub mod stack;
pub mod synth;

pub use error::{Error, Result};
