//! Minimal neural-network toolkit: parameters, a differentiable graph,
//! layers, AdamW and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Gradients, Graph, Reduction, Var};
pub use params::{Mat, ParamId, ParamStore};
