use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard};

use crate::error::{Result, TensorError};
use crate::real::Real;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operation for differentiation.
///
/// Tensors created inside never require gradients, so inference does not pay
/// for graph construction.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Computes the gradient of every parent from the output gradient.
///
/// Arguments: output gradient, output values, parents. Entries may be `None`
/// for parents that do not require a gradient.
pub(crate) type BackwardFn<F> =
    Box<dyn Fn(&[F], &[F], &[Tensor<F>]) -> Vec<Option<Vec<F>>> + Send + Sync>;

pub(crate) struct GradFn<F: Real> {
    pub(crate) name: &'static str,
    pub(crate) parents: Vec<Tensor<F>>,
    pub(crate) backward: BackwardFn<F>,
}

pub(crate) struct Node<F: Real> {
    id: usize,
    shape: Vec<usize>,
    data: RwLock<Vec<F>>,
    grad: Mutex<Option<Vec<F>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<F>>,
}

impl<F: Real> Drop for Node<F> {
    // Long recurrent chains would otherwise overflow the stack on drop.
    fn drop(&mut self) {
        let Some(gf) = self.grad_fn.take() else {
            return;
        };
        let mut stack: Vec<Arc<Node<F>>> = gf.parents.into_iter().map(|t| t.node).collect();
        while let Some(mut node) = stack.pop() {
            if let Some(inner) = Arc::get_mut(&mut node) {
                if let Some(gf) = inner.grad_fn.take() {
                    stack.extend(gf.parents.into_iter().map(|t| t.node));
                }
            }
        }
    }
}

/// A dense row-major tensor that participates in reverse-mode differentiation.
///
/// Cloning is cheap and yields a handle to the same storage: mutating the data
/// through one handle is visible through every other. Shared (tied) parameters
/// rely on this.
pub struct Tensor<F: Real = f32> {
    pub(crate) node: Arc<Node<F>>,
}

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<F> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.grad_fn.as_ref().map(|g| g.name))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn validate_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(TensorError::Contract(format!(
            "tensor extents must be positive, got {shape:?}"
        )));
    }
    if numel(shape) != len {
        return Err(TensorError::Contract(format!(
            "shape {shape:?} holds {} elements but {len} were given",
            numel(shape)
        )));
    }
    Ok(())
}

impl<F: Real> Tensor<F> {
    fn make(data: Vec<F>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<F>>) -> Self {
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// A constant tensor (no gradient).
    pub fn from_vec(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        validate_shape(shape, data.len())?;
        Ok(Self::make(data, shape.to_vec(), false, None))
    }

    /// A trainable leaf tensor.
    pub fn parameter(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        validate_shape(shape, data.len())?;
        Ok(Self::make(data, shape.to_vec(), true, None))
    }

    pub fn scalar(value: F) -> Self {
        Self::make(vec![value], vec![1], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::from_vec(vec![F::zero(); numel(shape)], shape)
    }

    pub fn full(shape: &[usize], value: F) -> Result<Self> {
        Self::from_vec(vec![value; numel(shape)], shape)
    }

    /// Builds the result of a differentiable operation.
    ///
    /// The graph edge is recorded only if gradients are enabled and some
    /// parent requires one.
    pub(crate) fn from_op(
        data: Vec<F>,
        shape: Vec<usize>,
        name: &'static str,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{name} produced a bad buffer");
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::make(
                data,
                shape,
                true,
                Some(GradFn {
                    name,
                    parents,
                    backward,
                }),
            )
        } else {
            Self::make(data, shape, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// True for tensors not produced by a recorded operation.
    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Name of the recorded operation that produced this tensor, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.name)
    }

    /// Identity of the underlying storage.
    pub fn id(&self) -> usize {
        self.node.id
    }

    pub fn same_storage(&self, other: &Tensor<F>) -> bool {
        Arc::ptr_eq(&self.node, &other.node)
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<F>> {
        self.node.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.data().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> F {
        let data = self.data();
        assert_eq!(data.len(), 1, "item() on a tensor of shape {:?}", self.shape());
        data[0]
    }

    /// Mutates the stored values in place (optimizer updates, weight surgery).
    pub fn update_data(&self, f: impl FnOnce(&mut [F])) {
        let mut guard = self.node.data.write().expect("tensor data lock poisoned");
        f(&mut guard);
    }

    pub fn set_data(&self, values: &[F]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(TensorError::Shape {
                op: "set_data",
                lhs: self.shape().to_vec(),
                rhs: vec![values.len()],
            });
        }
        self.update_data(|d| d.copy_from_slice(values));
        Ok(())
    }

    /// Accumulated gradient, if a backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.grad_lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.grad_lock() = None;
    }

    fn grad_lock(&self) -> MutexGuard<'_, Option<Vec<F>>> {
        self.node.grad.lock().expect("tensor grad lock poisoned")
    }

    /// A constant copy of the current values, cut from the graph.
    pub fn detach(&self) -> Tensor<F> {
        Self::make(self.to_vec(), self.shape().to_vec(), false, None)
    }

    /// Converts element type, producing a constant.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        let data = self
            .data()
            .iter()
            .map(|x| G::from_f64c(x.to_f64().unwrap_or(f64::NAN)))
            .collect();
        Tensor::<G>::make(data, self.shape().to_vec(), false, None)
    }

    /// Back-propagates from this scalar into every leaf that requires a
    /// gradient. Gradients accumulate across calls until
    /// [`zero_grad`](Self::zero_grad).
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Parents are always created before children, so descending id order
        // is a valid reverse topological order.
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            if let Some(gf) = &t.node.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && seen.insert(p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<usize, Vec<F>> = HashMap::new();
        pending.insert(self.id(), vec![F::one()]);
        for t in order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.node.grad_fn {
                None => {
                    let mut slot = t.grad_lock();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let grads = {
                        let out = t.data();
                        (gf.backward)(&g, &out, &gf.parents)
                    };
                    debug_assert_eq!(grads.len(), gf.parents.len(), "{}", gf.name);
                    for (p, pg) in gf.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "{} gradient size", gf.name);
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
