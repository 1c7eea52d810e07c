#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod biomarker;
pub mod causal_net;
pub mod cli;
pub mod config;
pub mod counterfactual;
pub mod eval;
pub mod grounding;
pub mod knowledge;
pub mod pipeline;
pub mod service;
pub mod signal_io;
pub mod synthetic;
pub mod text;
