//! Reverse-mode differentiation over a tape of dense tensor ops.

mod gradcheck;
mod graph;
mod lstm;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Node, NodeId, Op, SparseRows};
pub use lstm::{lstm_step, LstmCell};
