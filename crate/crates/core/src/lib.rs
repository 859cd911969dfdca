//! Phase-set prediction over composition-temperature space.
//!
//! A small GATv2 network over the element graph predicts which of a fixed
//! vocabulary of phases coexist at a state point. Physics penalties during
//! training and a deterministic decoding projection keep predictions within
//! the Gibbs phase rule, and a grid-based convex-hull oracle supplies
//! equilibrium labels for training and verification.

pub mod dataio;
pub mod fsutil;
pub mod thermo_oracle;
pub mod elemgraph;
pub mod gatcore;
pub mod losses;
pub mod neighbors;
pub mod decode;
pub mod prediction;
pub mod eval;
pub mod train;
