//! Minimal differentiable-computation core: tensors, a reverse-mode tape,
//! convolution / transposed convolution / LSTM layers, Adam, and a binary
//! checkpoint format.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
mod error;
pub mod layers;
pub mod optim;
mod param;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use layers::{BiLstm, Conv2d, ConvTranspose2d, Linear, Lstm};
pub use optim::{Adam, AdamConfig};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;
