//! Max-cut QAOA on rings: graph utilities, circuits, noisy simulation,
//! transpilation to hardware-like devices and parameter optimization.

pub mod channel;
pub mod circuit;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod noise;
pub mod qaoa;
pub mod sim;
pub mod transpile;
