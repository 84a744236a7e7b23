pub mod closed_forms;
pub mod commutator;
pub mod dyson;
pub mod error;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod reservoir;
pub mod tensor;
pub mod wick;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
