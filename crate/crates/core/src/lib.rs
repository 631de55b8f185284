pub mod baselines;
pub mod checks;
pub mod data;
pub mod error;
pub mod eval;
pub mod estimators;
pub mod inference;
pub mod modelfile;
pub mod oracle;
pub mod pipeline;
pub mod rbm;
pub mod smoother;
pub mod synth;

pub use error::{Error, Result};
