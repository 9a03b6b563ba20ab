//! Elementwise primitives with same-rank broadcasting of size-1 dims
//! (or a one-element operand).
//!
//! Subgradient conventions: `abs` has derivative 0 at 0, `relu` has
//! derivative 0 at 0, and `minimum` routes to the first operand on ties.

use std::rc::Rc;

use super::{numel, Real, Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Min => "minimum",
            Binary::Max => "maximum",
        }
    }
}

/// Index plan for broadcasting two operands onto a common shape.
struct Broadcast {
    out_shape: Vec<usize>,
    a_idx: Option<Vec<usize>>,
    b_idx: Option<Vec<usize>>,
}

fn broadcast_plan(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast {
            out_shape: a.to_vec(),
            a_idx: None,
            b_idx: None,
        });
    }
    let na = numel(a);
    let nb = numel(b);
    if nb == 1 {
        return Ok(Broadcast {
            out_shape: a.to_vec(),
            a_idx: None,
            b_idx: Some(vec![0; na]),
        });
    }
    if na == 1 {
        return Ok(Broadcast {
            out_shape: b.to_vec(),
            a_idx: Some(vec![0; nb]),
            b_idx: None,
        });
    }
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    let mut out = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        if x == y || y == 1 {
            out.push(x);
        } else if x == 1 {
            out.push(y);
        } else {
            return Err(mismatch());
        }
    }
    let index_map = |src: &[usize]| -> Option<Vec<usize>> {
        if src == out.as_slice() {
            return None;
        }
        let rank = src.len();
        let mut strides = vec![0usize; rank];
        let mut s = 1;
        for d in (0..rank).rev() {
            strides[d] = if src[d] == 1 { 0 } else { s };
            s *= src[d];
        }
        let n = numel(&out);
        let mut idx = Vec::with_capacity(n);
        let mut counter = vec![0usize; rank];
        for _ in 0..n {
            idx.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
            for d in (0..rank).rev() {
                counter[d] += 1;
                if counter[d] < out[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        Some(idx)
    };
    let a_idx = index_map(a);
    let b_idx = index_map(b);
    Ok(Broadcast {
        out_shape: out,
        a_idx,
        b_idx,
    })
}

#[inline]
fn pick(idx: &Option<Vec<usize>>, i: usize) -> usize {
    match idx {
        Some(v) => v[i],
        None => i,
    }
}

fn scatter<T: Real>(idx: &Option<Vec<usize>>, len: usize, contrib: Vec<T>) -> Vec<T> {
    match idx {
        None => contrib,
        Some(map) => {
            let mut out = vec![T::zero(); len];
            for (i, c) in contrib.into_iter().enumerate() {
                out[map[i]] += c;
            }
            out
        }
    }
}

fn binary<'t, T: Real>(op: Binary, a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    let av = a.value();
    let bv = b.value();
    let plan = Rc::new(broadcast_plan(op.name(), av.shape(), bv.shape())?);
    let n = numel(&plan.out_shape);
    let (ad, bd) = (av.data(), bv.data());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x = ad[pick(&plan.a_idx, i)];
        let y = bd[pick(&plan.b_idx, i)];
        out.push(match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
            Binary::Min => {
                if y < x {
                    y
                } else {
                    x
                }
            }
            Binary::Max => {
                if y > x {
                    y
                } else {
                    x
                }
            }
        });
    }
    let value = Tensor::from_vec(plan.out_shape.clone(), out)?;
    let (na, nb) = (av.len(), bv.len());
    let backward = Box::new(move |g: &[T]| {
        let ad = av.data();
        let bd = bv.data();
        let mut ga = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        for (i, &gi) in g.iter().enumerate() {
            let x = ad[pick(&plan.a_idx, i)];
            let y = bd[pick(&plan.b_idx, i)];
            let (da, db) = match op {
                Binary::Add => (gi, gi),
                Binary::Sub => (gi, -gi),
                Binary::Mul => (gi * y, gi * x),
                Binary::Div => (gi / y, -gi * x / (y * y)),
                Binary::Min => {
                    if y < x {
                        (T::zero(), gi)
                    } else {
                        (gi, T::zero())
                    }
                }
                Binary::Max => {
                    if y > x {
                        (T::zero(), gi)
                    } else {
                        (gi, T::zero())
                    }
                }
            };
            ga.push(da);
            gb.push(db);
        }
        vec![Some(scatter(&plan.a_idx, na, ga)), Some(scatter(&plan.b_idx, nb, gb))]
    });
    Ok(a.tape.record(&[*a, *b], value, backward))
}

fn unary<'t, T: Real>(
    x: &Var<'t, T>,
    f: impl Fn(T) -> T,
    // derivative given (input, output)
    df: impl Fn(T, T) -> T + 'static,
) -> Var<'t, T> {
    let xv = x.value();
    let out: Vec<T> = xv.data().iter().map(|&v| f(v)).collect();
    let value = Tensor::from_vec(xv.shape().to_vec(), out).unwrap();
    let yv = Rc::new(value.clone());
    let backward = Box::new(move |g: &[T]| {
        let grad = g
            .iter()
            .zip(xv.data())
            .zip(yv.data())
            .map(|((&gi, &xi), &yi)| gi * df(xi, yi))
            .collect();
        vec![Some(grad)]
    });
    x.tape.record(&[*x], value, backward)
}

/// Numerically stable logistic function.
pub fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        binary(Binary::Div, self, other)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        binary(Binary::Min, self, other)
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        binary(Binary::Max, self, other)
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        unary(self, move |x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, c: T) -> Var<'t, T> {
        unary(self, move |x| x * c, move |_, _| c)
    }

    /// `c - self`
    pub fn rsub_scalar(&self, c: T) -> Var<'t, T> {
        unary(self, move |x| c - x, |_, _| -T::one())
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.mul_scalar(-T::one())
    }

    pub fn abs(&self) -> Var<'t, T> {
        unary(
            self,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn exp(&self) -> Var<'t, T> {
        unary(self, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<'t, T> {
        unary(self, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self) -> Var<'t, T> {
        unary(self, |x| x.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn square(&self) -> Var<'t, T> {
        unary(self, |x| x * x, |x, _| T::lit(2.0) * x)
    }

    pub fn recip(&self) -> Var<'t, T> {
        unary(self, |x| T::one() / x, |_, y| -y * y)
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        unary(self, stable_sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn relu(&self) -> Var<'t, T> {
        unary(
            self,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// `1` where `self < other`, else `0`; not differentiable.
    pub fn lt(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let av = self.value();
        let bv = other.value();
        let plan = broadcast_plan("lt", av.shape(), bv.shape())?;
        let n = numel(&plan.out_shape);
        let out = (0..n)
            .map(|i| {
                if av.data()[pick(&plan.a_idx, i)] < bv.data()[pick(&plan.b_idx, i)] {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(self.tape.constant(Tensor::from_vec(plan.out_shape, out)?))
    }
}

impl<T: Real> Tape<T> {
    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(v))
    }
}
