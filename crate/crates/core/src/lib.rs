pub mod chaos;
pub mod config;
pub mod error;
pub mod factorization;
pub mod fem;
pub mod fourier;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod mesh;
pub mod monotonicity;
pub mod ntd;
pub mod pipeline;
pub mod quadrature;
pub mod random_field;
pub mod sfem;
pub mod sparse;

pub use error::{Error, Result};
