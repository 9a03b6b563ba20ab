//! Reverse-mode automatic differentiation over dense N-d arrays.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Tape`] through [`Var`] handles. The tape is an append-only list, so
//! every node is pushed after the nodes it reads from and a single reverse
//! sweep visits each node once.
//!
//! ```
//! use dcomp::tensor::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let w = tape.param(&Tensor::from_vec(vec![2], vec![1.0, -2.0]).unwrap());
//! let loss = w.mul(&w).unwrap().sum().unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&w).unwrap().data(), &[2.0, -4.0]);
//! ```

mod conv;
mod elementwise;
pub mod gradcheck;
mod pool;
mod real;
mod reduce;
mod shape_ops;
mod tape;

pub use conv::{check_conv_shapes, col2im_add, im2col, ConvGeometry};
pub use elementwise::stable_sigmoid;
pub use gradcheck::{finite_difference_check, finite_difference_check_many, GradCheck};
pub use pool::max_pool_mask;
pub use real::Real;
pub use reduce::ReduceKind;
pub use tape::{BackwardFn, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength { op: &'static str, len: usize, shape: Vec<usize> },
    #[error("{op}: channel mismatch, input has {input} channels, weight expects {weight}")]
    ChannelMismatch { op: &'static str, input: usize, weight: usize },
    #[error("{op}: invalid axis {axis} for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },
    #[error("{op}: empty reduction set")]
    EmptyReduction { op: &'static str },
    #[error("{op}: spatial size {height}x{width} too small")]
    SpatialTooSmall { op: &'static str, height: usize, width: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::DataLength {
                op: "from_vec",
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Interprets the trailing dims as `N×C×H×W`, padding leading ones.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        let s = &self.shape;
        match s.len() {
            4 => Ok([s[0], s[1], s[2], s[3]]),
            3 => Ok([1, s[0], s[1], s[2]]),
            2 => Ok([1, 1, s[0], s[1]]),
            _ => Err(TensorError::Invalid(format!("expected an image-shaped tensor, got {:?}", s))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::DataLength {
                op: "reshape",
                len: self.data.len(),
                shape: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(TensorError::DataLength {
                op: "accumulate_grad",
                len: g.len(),
                shape: self.shape.clone(),
            });
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    /// Value at an `N×C×H×W` index.
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let [_, cc, h, w] = self.dims4().expect("image tensor");
        self.data[((n * cc + c) * h + y) * w + x]
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
