pub mod algebra;
pub mod cli;
pub mod error;
pub mod homogeneous;
pub mod kernel;
pub mod lattice;
pub mod limit;
pub mod mixing;
pub mod random;
pub mod site;
pub mod state;
