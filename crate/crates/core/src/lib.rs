pub mod autodiff;
pub mod data;
pub mod error;
pub mod fdfd;
pub mod field;
pub mod grid;
pub mod model;
pub mod spectral;
pub mod spectrum;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use grid::ComplexGrid2D;
pub use tensor::{ActivationTensor, ComplexArray, RealArray};
