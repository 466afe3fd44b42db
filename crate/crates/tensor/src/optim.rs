//! Adam with decoupled weight decay and per-group hyperparameters.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Hyperparameters shared by one group of parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerGroup {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerGroup {
    /// Pretraining defaults: betas (0.9, 0.999), epsilon 1e-6, weight decay 0.01.
    pub fn pretraining(learning_rate: f64) -> Self {
        OptimizerGroup {
            learning_rate,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
        }
    }

    /// Fine-tuning group for encoder parameters: lr 2e-5, epsilon 1e-8, no decay.
    pub fn finetune_encoder() -> Self {
        OptimizerGroup {
            learning_rate: 2e-5,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Fine-tuning group for tagging-head parameters: lr 1e-3, epsilon 1e-8, no decay.
    pub fn finetune_head() -> Self {
        OptimizerGroup {
            learning_rate: 1e-3,
            ..Self::finetune_encoder()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::Domain {
                op: "optimizer",
                msg: format!("invalid hyperparameters {self:?}"),
            })
        }
    }
}

/// Moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F: Real = f32> {
    pub step: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Real> AdamState<F> {
    pub fn new(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
///
/// The decay term `lr * wd * param` is subtracted from the parameter directly
/// rather than added to the gradient.
pub fn adam_step<F: Real>(
    name: &str,
    param: &mut [F],
    grad: &[F],
    state: &mut AdamState<F>,
    group: &OptimizerGroup,
) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(TensorError::Shape {
            op: "adam_step",
            lhs: vec![param.len()],
            rhs: vec![grad.len(), state.m.len(), state.v.len()],
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(TensorError::NonFiniteGradient { name: name.to_string() });
    }
    state.step += 1;
    let t = state.step as i32;
    let f = F::from_f64c;
    let (b1, b2) = (f(group.beta1), f(group.beta2));
    let bc1 = f(1.0 - group.beta1.powi(t));
    let bc2 = f(1.0 - group.beta2.powi(t));
    let lr = f(group.learning_rate);
    let decay = f(group.learning_rate * group.weight_decay);
    let eps = f(group.epsilon);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (F::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (F::one() - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        if group.weight_decay != 0.0 {
            param[i] -= decay * param[i];
        }
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Named parameters sharing one [`OptimizerGroup`].
#[derive(Debug, Clone)]
pub struct ParamGroup<F: Real = f32> {
    pub config: OptimizerGroup,
    pub params: Vec<(String, Tensor<F>)>,
}

/// Adam over several parameter groups.
///
/// Parameters without a gradient at step time are skipped (their state does
/// not advance).
#[derive(Debug)]
pub struct Adam<F: Real = f32> {
    groups: Vec<ParamGroup<F>>,
    states: Vec<Vec<AdamState<F>>>,
}

impl<F: Real> Adam<F> {
    pub fn new(groups: Vec<ParamGroup<F>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for g in &groups {
            g.config.validate()?;
            for (name, t) in &g.params {
                if !seen.insert(t.id()) {
                    return Err(TensorError::Contract(format!(
                        "parameter `{name}` registered twice with the optimizer"
                    )));
                }
            }
        }
        let states = groups
            .iter()
            .map(|g| g.params.iter().map(|(_, t)| AdamState::new(t.numel())).collect())
            .collect();
        Ok(Adam { groups, states })
    }

    pub fn groups(&self) -> &[ParamGroup<F>] {
        &self.groups
    }

    /// Applies one update to every parameter holding a gradient.
    ///
    /// All gradients are validated before any parameter changes, so a
    /// non-finite gradient leaves the model untouched.
    pub fn step(&mut self) -> Result<()> {
        let mut grads = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let mut per = Vec::with_capacity(g.params.len());
            for (name, t) in &g.params {
                let grad = t.grad();
                if let Some(gr) = &grad {
                    if gr.iter().any(|x| !x.is_finite()) {
                        return Err(TensorError::NonFiniteGradient { name: name.clone() });
                    }
                }
                per.push(grad);
            }
            grads.push(per);
        }
        for ((group, states), grads) in self.groups.iter().zip(&mut self.states).zip(grads) {
            for (((name, t), state), grad) in group.params.iter().zip(states).zip(grads) {
                let Some(grad) = grad else { continue };
                let mut res = Ok(());
                t.update_data(|p| res = adam_step(name, p, &grad, state, &group.config));
                res?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for g in &self.groups {
            for (_, t) in &g.params {
                t.zero_grad();
            }
        }
    }

    /// Optimizer state by parameter name.
    pub fn states(&self) -> Vec<(&str, &AdamState<F>)> {
        self.groups
            .iter()
            .zip(&self.states)
            .flat_map(|(g, s)| g.params.iter().map(|(n, _)| n.as_str()).zip(s.iter()))
            .collect()
    }

    /// Restores state for the parameter called `name`.
    pub fn set_state(&mut self, name: &str, state: AdamState<F>) -> Result<()> {
        for (g, states) in self.groups.iter().zip(&mut self.states) {
            if let Some(i) = g.params.iter().position(|(n, _)| n == name) {
                if state.m.len() != g.params[i].1.numel() || state.v.len() != state.m.len() {
                    return Err(TensorError::Shape {
                        op: "set_state",
                        lhs: g.params[i].1.shape().to_vec(),
                        rhs: vec![state.m.len()],
                    });
                }
                states[i] = state;
                return Ok(());
            }
        }
        Err(TensorError::Contract(format!("no parameter named `{name}`")))
    }
}
