//! Physics-informed neural networks for the Yajima-Oikawa long-wave/short-wave
//! system: rogue-wave forward solves and coefficient discovery.

pub mod autodiff;
pub mod datagen;
pub mod exact_yo;
pub mod experiment;
pub mod loss;
pub mod network;
pub mod optim;
pub mod residuals;
