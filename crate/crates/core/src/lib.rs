pub mod bounds;
pub mod error;
pub mod lp;
pub mod marginals;
pub mod owl;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
