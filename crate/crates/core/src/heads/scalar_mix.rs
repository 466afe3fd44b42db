use seqtag_tensor::{softmax_vec, Real, Tensor};

use crate::error::{Error, Result};
use crate::nn::{init_ones, init_zeros, Params};

/// `γ · Σᵢ softmax(w)ᵢ · layerᵢ` over the embedding output and every
/// encoder layer.
#[derive(Debug, Clone)]
pub struct ScalarMix<F: Real = f32> {
    /// Raw (unnormalized) layer weights, one per layer including index 0.
    pub weights: Tensor<F>,
    pub gamma: Tensor<F>,
}

impl<F: Real> ScalarMix<F> {
    /// Equal weights over `num_layers` representations (embedding output
    /// included) and γ = 1.
    pub fn new(num_layers: usize) -> Self {
        ScalarMix {
            weights: init_zeros(&[num_layers]),
            gamma: init_ones(&[1]),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.numel()
    }

    pub fn normalized_weights(&self) -> Vec<F> {
        softmax_vec(&self.weights.to_vec()).expect("at least one layer")
    }

    pub fn forward(&self, layers: &[Tensor<F>]) -> Result<Tensor<F>> {
        if layers.len() != self.num_layers() {
            return Err(Error::Contract(format!(
                "scalar mix has {} weights but got {} layers",
                self.num_layers(),
                layers.len()
            )));
        }
        let s = self.weights.softmax();
        let mut acc: Option<Tensor<F>> = None;
        for (i, layer) in layers.iter().enumerate() {
            let term = layer.mul(&s.slice(0, i, i + 1)?)?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?,
            });
        }
        Ok(acc.expect("non-empty").mul(&self.gamma)?)
    }
}

impl<F: Real> Params<F> for ScalarMix<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((format!("{prefix}weights"), self.weights.clone()));
        out.push((format!("{prefix}gamma"), self.gamma.clone()));
    }
}
