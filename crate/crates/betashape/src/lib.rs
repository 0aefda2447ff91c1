//! Shape testing for the coefficient function of generalized
//! scalar-on-function regression models.

pub mod bases;
pub mod cli;
pub mod data;
pub mod design;
pub mod error;
pub mod family;
pub mod fpca;
pub mod harness;
pub mod linalg;
pub mod pql;
pub mod vctest;

pub use data::{read_dataset, FunctionalDataset, Subject};
pub use design::Hypothesis;
pub use error::{Error, Result};
pub use family::Family;
