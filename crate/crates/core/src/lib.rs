//! Few-shot domain adaptation lab: a small encoder-decoder transformer with
//! adapters, first-order meta-learning, and the baselines to compare against.

pub mod autodiff;
pub mod baselines;
pub mod corpus;
pub mod model;
pub mod optim;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod meta;
pub mod seed;
pub mod tasks;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, Scalar};
