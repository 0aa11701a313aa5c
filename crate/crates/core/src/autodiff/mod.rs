//! Tape-based reverse-mode differentiation over the numerics kernels, a
//! central-difference gradient checker and the Adam update.

mod adam;
mod gradcheck;
mod graph;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, gradcheck_graph, relative_error, GradCheckConfig, GradCheckReport};
pub use graph::{gather_rows, mul_channel_map, Gradients, Graph, Var};
