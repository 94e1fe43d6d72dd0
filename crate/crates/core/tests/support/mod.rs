//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod neuron_oracle;
