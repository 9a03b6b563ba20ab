use super::{numel, Real, Result, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Splits `shape` around the reduced axes into (outer, reduced, inner)
/// iteration spaces; the reduced axes must be contiguous.
fn reduce_layout(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<(usize, usize, usize)> {
    if axes.is_empty() {
        return Err(TensorError::EmptyReduction { op });
    }
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &a in &sorted {
        if a >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op,
                axis: a,
                rank: shape.len(),
            });
        }
    }
    if sorted.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(TensorError::Invalid(format!("{op}: reduced axes {axes:?} must be contiguous")));
    }
    let first = sorted[0];
    let last = *sorted.last().unwrap();
    let outer = numel(&shape[..first]);
    let red = numel(&shape[first..=last]);
    let inner = numel(&shape[last + 1..]);
    if red == 0 {
        return Err(TensorError::EmptyReduction { op });
    }
    Ok((outer, red, inner))
}

impl<'t, T: Real> Var<'t, T> {
    /// Reduces all elements to a one-element tensor.
    pub fn reduce_all(&self, kind: ReduceKind) -> Result<Var<'t, T>> {
        let xv = self.value();
        let n = xv.len();
        if n == 0 {
            return Err(TensorError::EmptyReduction { op: "reduce_all" });
        }
        let s: T = xv.data().iter().copied().sum();
        let scale = match kind {
            ReduceKind::Sum => T::one(),
            ReduceKind::Mean => T::one() / T::lit(n as f64),
        };
        let value = Tensor::scalar(s * scale);
        let backward = Box::new(move |g: &[T]| vec![Some(vec![g[0] * scale; n])]);
        Ok(self.tape.record(&[*self], value, backward))
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        self.reduce_all(ReduceKind::Sum)
    }

    pub fn mean(&self) -> Result<Var<'t, T>> {
        self.reduce_all(ReduceKind::Mean)
    }

    /// Reduces over a contiguous run of axes, keeping them as size-1 dims.
    pub fn reduce_axes(&self, kind: ReduceKind, axes: &[usize]) -> Result<Var<'t, T>> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        let (outer, red, inner) = reduce_layout("reduce_axes", &shape, axes)?;
        let scale = match kind {
            ReduceKind::Sum => T::one(),
            ReduceKind::Mean => T::one() / T::lit(red as f64),
        };
        let d = xv.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for r in 0..red {
                let base = (o * red + r) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (acc, &x) in dst.iter_mut().zip(&d[base..base + inner]) {
                    *acc += x;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let mut out_shape = shape.clone();
        for &a in axes {
            out_shape[a] = 1;
        }
        let value = Tensor::from_vec(out_shape, out)?;
        let n = xv.len();
        let backward = Box::new(move |g: &[T]| {
            let mut gx = vec![T::zero(); n];
            for o in 0..outer {
                for r in 0..red {
                    let base = (o * red + r) * inner;
                    for i in 0..inner {
                        gx[base + i] = g[o * inner + i] * scale;
                    }
                }
            }
            vec![Some(gx)]
        });
        Ok(self.tape.record(&[*self], value, backward))
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce_axes(ReduceKind::Sum, axes)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce_axes(ReduceKind::Mean, axes)
    }

    /// `Σ(x·m) / Σm` for a constant mask (broadcast over `x`); errors when
    /// the mask is empty.
    pub fn masked_mean(&self, mask: &Var<'t, T>) -> Result<Var<'t, T>> {
        let m = mask.value();
        let fan = T::lit((self.value().len() / m.len().max(1)) as f64);
        let count: T = m.data().iter().copied().sum::<T>() * fan;
        if count <= T::zero() {
            return Err(TensorError::EmptyReduction { op: "masked_mean" });
        }
        let weighted = self.mul(mask)?.sum()?;
        Ok(weighted.mul_scalar(T::one() / count))
    }
}
