//! Parameterized layers shared by the encoder and the tagging heads.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use seqtag_tensor::{Real, Tensor};

use crate::error::Result;

/// Standard deviation of the weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Whether dropout is active, and the generator driving it.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub fn dropout<F: Real>(&mut self, x: &Tensor<F>, p: f64) -> Result<Tensor<F>> {
        match self {
            Mode::Eval => Ok(x.clone()),
            Mode::Train(rng) => Ok(x.dropout(p, true, &mut **rng)?),
        }
    }
}

/// Draws from normal(0, `std`) truncated to ±2σ by rejection.
pub fn truncated_normal<F: Real>(rng: &mut dyn RngCore, len: usize, std: f64) -> Vec<F> {
    (0..len)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break F::from_f64c(z * std);
            }
        })
        .collect()
}

pub fn init_weight<F: Real>(rng: &mut dyn RngCore, shape: &[usize]) -> Tensor<F> {
    let n = shape.iter().product();
    Tensor::parameter(truncated_normal(rng, n, INIT_STD), shape).expect("positive extents")
}

pub fn init_zeros<F: Real>(shape: &[usize]) -> Tensor<F> {
    Tensor::parameter(vec![F::zero(); shape.iter().product()], shape).expect("positive extents")
}

pub fn init_ones<F: Real>(shape: &[usize]) -> Tensor<F> {
    Tensor::parameter(vec![F::one(); shape.iter().product()], shape).expect("positive extents")
}

/// Something owning named trainable tensors.
pub trait Params<F: Real> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>);

    fn parameters(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Real = f32> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Real> Linear<F> {
    pub fn new(rng: &mut dyn RngCore, input: usize, output: usize) -> Self {
        Linear {
            weight: init_weight(rng, &[input, output]),
            bias: Some(init_zeros(&[output])),
        }
    }

    pub fn without_bias(rng: &mut dyn RngCore, input: usize, output: usize) -> Self {
        Linear {
            weight: init_weight(rng, &[input, output]),
            bias: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = x.matmul(&self.weight)?;
        Ok(match &self.bias {
            Some(b) => y.add(b)?,
            None => y,
        })
    }
}

impl<F: Real> Params<F> for Linear<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((format!("{prefix}weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}bias"), b.clone()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<F: Real = f32> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub eps: f64,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(dim: usize, eps: f64) -> Self {
        LayerNorm {
            gamma: init_ones(&[dim]),
            beta: init_zeros(&[dim]),
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.layer_norm(&self.gamma, &self.beta, self.eps)?)
    }
}

impl<F: Real> Params<F> for LayerNorm<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((format!("{prefix}gamma"), self.gamma.clone()));
        out.push((format!("{prefix}beta"), self.beta.clone()));
    }
}
