pub mod error;
pub mod integrate;
pub mod linalg;
pub mod models;
pub mod poly;
pub mod spline;

pub use error::{Error, Result};
pub mod dynamics;
pub mod metaplectic;
pub mod oracle;
pub mod states;
pub mod propagator;
pub mod experiments;
pub mod validate;
