//! Minimal reverse-mode differentiation engine, LSTM cell, Adam and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod lstm;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use graph::{inject_tanh_backward_fault, Graph, Var};
pub use lstm::{lstm_cell, run_bilstm, run_lstm, BoundLstm, LstmParams};
pub use params::{init_uniform, Param, ParamGrads, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};
