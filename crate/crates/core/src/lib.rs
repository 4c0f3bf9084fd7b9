pub mod assembly;
pub mod block;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod local;
pub mod lu;
pub mod oracle;
pub mod oras;
pub mod partition;
pub mod raw;
pub mod scalar;
pub mod sparse;
pub mod stencil;

pub use block::Block;
pub use error::{Error, Result};
pub use scalar::{Precision, Real};

pub type C32 = num_complex::Complex<f32>;
pub type C64 = num_complex::Complex<f64>;
pub type Block32 = Block<f32>;
pub type Block64 = Block<f64>;
pub type Operator32 = sparse::SparseOperator<f32>;
pub type Operator64 = sparse::SparseOperator<f64>;
