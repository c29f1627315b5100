//! Semi-supervised learning by label gradient alignment.
//!
//! Imputed labels for unlabeled inputs are trained by gradient descent so
//! that the parameter gradient they induce matches the gradient of the
//! labeled data, while the model itself trains on the imputed labels.

pub mod bridge;
pub mod error;
pub mod gradcheck;
pub mod lga;
pub mod linreg_lab;
pub mod metrics;
pub mod models;
pub mod ndcore;
pub mod optim;
pub mod synthdata;

pub use error::{Error, Result};
