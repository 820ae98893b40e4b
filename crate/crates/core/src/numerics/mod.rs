//! Shared numeric kernel: dense tensors, vector algebra, DFT/FFT and a
//! seeded random stream. Everything is `f64`.

mod fft;
mod rng;
mod tensor;
mod vector;

pub use fft::{dft, idft, ComplexSpectrum};
pub use rng::Rng;
pub use tensor::Tensor3;
pub use vector::{cosine_similarity, l2_normalize, VectorK};
