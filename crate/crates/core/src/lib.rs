//! Mixture-of-generators adversarial purification for MNIST.

pub mod attacks;
pub mod data;
pub mod defense;
pub mod eval;
pub mod models;
pub mod nn;
