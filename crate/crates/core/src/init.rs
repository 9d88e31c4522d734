//! Seeded parameter initialization.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights uniform in `[-1/√fan_in, 1/√fan_in]`, biases zero.
    #[default]
    UniformFanIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitSpec {
    pub fn new(seed: u64) -> Self {
        InitSpec {
            scheme: InitScheme::UniformFanIn,
            seed,
        }
    }

    pub fn initializer(&self) -> Initializer {
        Initializer {
            scheme: self.scheme,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }
}

/// A single deterministic draw stream; successive fills consume it in order.
pub struct Initializer {
    scheme: InitScheme,
    rng: ChaCha8Rng,
}

impl Initializer {
    /// Fills `out` with weights for an operator whose fan-in is `fan_in`.
    pub fn fill_weights(&mut self, out: &mut [f64], fan_in: usize) {
        match self.scheme {
            InitScheme::UniformFanIn => {
                let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                for v in out {
                    *v = dist.sample(&mut self.rng);
                }
            }
        }
    }
}

pub fn init_matrix(rows: usize, cols: usize, spec: InitSpec) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    spec.initializer().fill_weights(m.as_mut_slice(), cols);
    m
}

pub fn init_bias(len: usize, _spec: InitSpec) -> Vector {
    Vector::zeros(len)
}
