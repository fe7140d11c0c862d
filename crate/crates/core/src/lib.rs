pub mod apps;
pub mod autodiff;
pub mod error;
pub mod geodesics;
pub mod linalg;
pub mod losses;
pub mod mesh;
pub mod model;
pub mod operators;
pub mod trainer;

pub use error::{Error, Result};
