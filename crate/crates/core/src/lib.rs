pub mod atoms;
pub mod config;
pub mod error;
pub mod generate;
pub mod linops;
pub mod objectives;
pub mod retrieval;
pub mod solvers;
pub mod spectral;
pub mod testkit;
