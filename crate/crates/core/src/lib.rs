pub mod amp;
pub mod bp;
pub mod channel;
pub mod codebook;
pub mod config;
pub mod error;
pub mod ldpc;
pub mod seed;
pub mod sic;
pub mod sim;

pub use error::{Error, Result};
