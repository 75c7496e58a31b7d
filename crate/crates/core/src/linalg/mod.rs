//! Dense tensor arithmetic and seeded randomness.

mod rng;
mod spectral;
mod tensor;

pub use rng::{gauss_init, Rng};
pub use spectral::{cosine, norm2, spectral_norm, spectral_radius, RADIUS_SQUARINGS};
pub use tensor::{matvec, matvec_transposed, Tensor};

pub(crate) use spectral::cosine_slices;
pub(crate) use tensor::{axpy, dot, matmul_into, matvec_into, read_u16, read_u32};
