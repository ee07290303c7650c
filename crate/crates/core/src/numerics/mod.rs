//! Tensor substrate: dense real/complex tensors, Fourier transforms along
//! an axis, a reverse-mode tape, parameter storage and seeded randomness.

pub mod fft;
pub mod graph;
pub mod params;
pub mod rng;
pub mod tensor;

pub use fft::{dft, idft, irdft, rdft};
pub use graph::{CVar, Graph, NodeGrads, Var};
pub use params::{Adam, Gradients, Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::{TensorC, TensorF};
