//! Desk-scale simulator of a residual-monitored linear-system solver for
//! elliptic PDEs.

pub mod cases;
pub mod cert;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod relax;

pub use error::{Error, Result};
