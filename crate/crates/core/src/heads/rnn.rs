use rand::RngCore;
use seqtag_tensor::{Real, Tensor};

use crate::error::{Error, Result};
use crate::nn::{Linear, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// One direction of a recurrent layer.
///
/// LSTM gates are ordered input, forget, cell, output; GRU gates reset,
/// update, candidate, with the hidden-side bias kept separate so the reset
/// gate scales it (`n = tanh(Wₙx + bₙ + r ⊙ (Uₙh + b_hn))`).
#[derive(Debug, Clone)]
pub struct RnnDirection<F: Real = f32> {
    pub kind: CellKind,
    pub input: Linear<F>,
    pub recurrent: Linear<F>,
    pub hidden_size: usize,
}

impl<F: Real> RnnDirection<F> {
    pub fn new(rng: &mut dyn RngCore, kind: CellKind, input: usize, hidden: usize) -> Self {
        let g = kind.gates() * hidden;
        RnnDirection {
            kind,
            input: Linear::new(rng, input, g),
            recurrent: match kind {
                CellKind::Lstm => Linear::without_bias(rng, hidden, g),
                CellKind::Gru => Linear::new(rng, hidden, g),
            },
            hidden_size: hidden,
        }
    }

    /// Runs left to right over `[batch, seq, input]`, returning `[batch, seq, hidden]`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (b, s) = (x.shape()[0], x.shape()[1]);
        let h_size = self.hidden_size;
        let g = self.kind.gates() * h_size;
        let xp = self.input.forward(x)?;
        let mut h = Tensor::zeros(&[b, h_size])?;
        let mut c = Tensor::zeros(&[b, h_size])?;
        let gate = |t: &Tensor<F>, i: usize| t.slice(-1, i * h_size, (i + 1) * h_size);
        let mut outputs = Vec::with_capacity(s);
        for t in 0..s {
            let xt = xp.slice(1, t, t + 1)?.reshape(&[b, g])?;
            let hp = self.recurrent.forward(&h)?;
            h = match self.kind {
                CellKind::Lstm => {
                    let z = xt.add(&hp)?;
                    let i = gate(&z, 0)?.sigmoid();
                    let f = gate(&z, 1)?.sigmoid();
                    let cand = gate(&z, 2)?.tanh();
                    let o = gate(&z, 3)?.sigmoid();
                    c = f.mul(&c)?.add(&i.mul(&cand)?)?;
                    o.mul(&c.tanh())?
                }
                CellKind::Gru => {
                    let r = gate(&xt, 0)?.add(&gate(&hp, 0)?)?.sigmoid();
                    let u = gate(&xt, 1)?.add(&gate(&hp, 1)?)?.sigmoid();
                    let n = gate(&xt, 2)?.add(&r.mul(&gate(&hp, 2)?)?)?.tanh();
                    n.add(&u.mul(&h.sub(&n)?)?)?
                }
            };
            outputs.push(h.reshape(&[b, 1, h_size])?);
        }
        Ok(Tensor::concat(&outputs, 1)?)
    }
}

impl<F: Real> Params<F> for RnnDirection<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.input.collect_params(&format!("{prefix}input."), out);
        self.recurrent.collect_params(&format!("{prefix}recurrent."), out);
    }
}

/// Per-row index map reversing the first `len` positions of each row and
/// leaving padding in place. It is its own inverse.
pub fn reversal_index(lengths: &[usize], seq: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(lengths.len() * seq);
    for (b, &len) in lengths.iter().enumerate() {
        for t in 0..seq {
            let src = if t < len { len - 1 - t } else { t };
            idx.push(b * seq + src);
        }
    }
    idx
}

/// Stacked bidirectional RNN; directions are concatenated per layer.
#[derive(Debug, Clone)]
pub struct BiRnn<F: Real = f32> {
    pub layers: Vec<(RnnDirection<F>, RnnDirection<F>)>,
}

impl<F: Real> BiRnn<F> {
    pub fn new(rng: &mut dyn RngCore, kind: CellKind, input: usize, hidden: usize, num_layers: usize) -> Self {
        let layers = (0..num_layers.max(1))
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (
                    RnnDirection::new(rng, kind, inp, hidden),
                    RnnDirection::new(rng, kind, inp, hidden),
                )
            })
            .collect();
        BiRnn { layers }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.layers[0].0.hidden_size
    }

    /// `[batch, seq, input]` → `[batch, seq, 2·hidden]`. The backward
    /// direction reads each row's real positions in reverse, so padding
    /// never reaches a real position.
    pub fn forward(&self, x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        let (b, s) = (x.shape()[0], x.shape()[1]);
        if lengths.len() != b || lengths.iter().any(|&l| l == 0 || l > s) {
            return Err(Error::Contract(format!("row lengths {lengths:?} do not fit a {b}×{s} batch")));
        }
        let rev = reversal_index(lengths, s);
        let reverse = |t: &Tensor<F>| -> Result<Tensor<F>> {
            let d = t.shape()[2];
            Ok(t.reshape(&[b * s, d])?.embedding(&rev)?.reshape(&[b, s, d])?)
        };
        let mut x = x.clone();
        for (fwd, bwd) in &self.layers {
            let f = fwd.forward(&x)?;
            let r = reverse(&bwd.forward(&reverse(&x)?)?)?;
            x = Tensor::concat(&[f, r], -1)?;
        }
        Ok(x)
    }
}

impl<F: Real> Params<F> for BiRnn<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        for (i, (f, b)) in self.layers.iter().enumerate() {
            f.collect_params(&format!("{prefix}{i}.forward."), out);
            b.collect_params(&format!("{prefix}{i}.backward."), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reversal_keeps_padding() {
        assert_eq!(reversal_index(&[3, 1], 4), [2, 1, 0, 3, 4, 5, 6, 7]);
    }
}
