//! Seeded randomness, dense matrices and the chi-square tail.

pub mod linalg;
pub mod rng;
pub mod special;

pub use linalg::{dot, norm2, random_orthogonal, Matrix};
pub use rng::{derive_index_seed, derive_seed, Rng};
pub use special::{chi_square_sf, gamma_q};
