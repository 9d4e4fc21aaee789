//! Dense matrices, the feed-forward classifier and its gradients.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
mod matrix;
mod model;

pub use gradcheck::{check_gradients, finite_diff_input_grad, finite_diff_param_grad, GradcheckReport};
pub use matrix::{argmax, Matrix};
pub use model::{Activation, Gradients, Layer, Model};
