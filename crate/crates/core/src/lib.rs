//! Two-path encoder-decoder network for smoke segmentation, trained from
//! scratch on synthetic composites, with the small autodiff engine, data
//! synthesis, metrics and persistence it needs.

pub mod autograd;
pub mod compositor;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod metrics;
pub mod net;
pub mod par;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use net::{NetConfig, Network};
pub use tensor::{Scalar, Shape, Tensor};
