//! Dense tensors, reverse-mode autodiff and the Adam optimizer.
//!
//! Every network layer in the crate is composed from the kernels on [`Graph`].
//! All arithmetic is `f64`; any non-finite forward value aborts with
//! [`Error::NonFinite`](crate::Error::NonFinite) naming the kernel.

mod graph;
pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamConfig, AdamState};
pub use params::{NamedParam, ParamId, ParamStore};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Uniform(−a, a) with `a = sqrt(6 / (fan_in + fan_out))`, shape `fan_out × fan_in`.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, fan_out: usize, fan_in: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..fan_out * fan_in).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::matrix(fan_out, fan_in, data).expect("shape")
}

/// Normal(0, std) entries.
pub fn normal_init<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be positive");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

pub const EMBEDDING_INIT_STD: f64 = 0.02;

/// Independent RNG stream for a named component, so that adding or removing
/// one component never shifts the initialization of the others.
pub fn component_rng(seed: u64, component: &str) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(component.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    rand_chacha::ChaCha8Rng::from_seed(key)
}
