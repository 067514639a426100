//! Step-wise value probing, group-normalized advantages with error-step
//! pruning, and a GRPO baseline, all on a toy linear-softmax policy over
//! synthetic multi-step arithmetic and recall tasks.

pub mod advantage;
pub mod error;
pub mod harness;
pub mod seeding;
pub mod seqmodel;
pub mod taskgen;
pub mod trace;
pub mod vvp;

pub use error::{Error, Result};
pub use seqmodel::{Matrix, PolicyParams, TokenDist, TokenId, Vocabulary};
