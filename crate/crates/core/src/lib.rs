pub mod cli;
pub mod error;
pub mod exact;
pub mod format;
pub mod infer;
pub mod pe;
pub mod perf;
pub mod quant;

pub use error::{Error, Result};
pub use exact::ExactReal;
pub use format::{Encoder, LpfpCode, LpfpFormat};
