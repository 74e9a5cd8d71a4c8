use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Weight matrix `[d_out, d_in]` plus bias `[d_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Weights uniform in `[-scale, scale]`, every bias set to `bias`.
    pub fn init<R: Rng>(rng: &mut R, d_out: usize, d_in: usize, scale: f64, bias: f64) -> Self {
        let w = (0..d_out * d_in).map(|_| rng.gen_range(-scale..=scale)).collect();
        Linear {
            weight: Tensor::from_parts(vec![d_out, d_in], w),
            bias: Tensor::filled(vec![d_out], bias),
        }
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BoundLinear {
        BoundLinear {
            weight: tape.leaf_ref(&self.weight),
            bias: tape.leaf_ref(&self.bias),
        }
    }
}

impl BoundLinear {
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.affine(self.weight, x, self.bias)
    }
}
