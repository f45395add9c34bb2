//! Small dense linear algebra, seeded randomness, and finite-difference
//! gradient checking for the trainable layers.
//!
//! Training math runs in `f64`; stored and served embeddings are `f32`
//! (see [`crate::embedding_io`]). There is no autograd graph: each composite
//! operation ships its own hand-derived backward pass.

mod gradcheck;
mod linear;
mod matrix;
mod rng;

pub use gradcheck::{check_gradients, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use linear::{LinearGrads, LinearLayer};
pub use matrix::{dot, l2_normalize_rows, l2_normalize_rows_backward, softmax_rows, Matrix};
pub use rng::Rng;
