//! Core library of the neuroedge toolkit: tensors, models, conversion to
//! spiking networks, simulation, hardware mapping, cost modelling and
//! architecture search.

pub mod convert;
pub mod cost;
pub mod imaging;
pub mod map;
pub mod model;
pub mod nas;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;
