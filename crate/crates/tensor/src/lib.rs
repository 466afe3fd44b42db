//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The op set is deliberately small: matrix products, elementwise arithmetic,
//! `tanh`/`sigmoid`/GELU, softmax and log-softmax, layer normalization,
//! embedding lookup, dropout, concatenation, slicing, reshaping, and the two
//! classification losses. Models are composed from these.
//!
//! ```
//! use seqtag_tensor::Tensor;
//!
//! let x = Tensor::<f64>::parameter(vec![3.0], &[1]).unwrap();
//! let y = x.mul(&x).unwrap();
//! y.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![6.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
mod optim;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{softmax_vec, IGNORE_INDEX};
pub use optim::{adam_step, Adam, AdamState, OptimizerGroup, ParamGroup};
pub use real::Real;
pub use tensor::{no_grad, Tensor};
