use super::{numel, Real, Result, Tape, Tensor, TensorError, Var};

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let xv = self.value();
        let value = (*xv).clone().reshape(shape)?;
        let backward = Box::new(|g: &[T]| vec![Some(g.to_vec())]);
        Ok(self.tape.record(&[*self], value, backward))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(TensorError::Invalid(format!(
                "narrow: range {}..{} exceeds dim {} of {:?}",
                start,
                start + len,
                axis,
                shape
            )));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let full = shape[axis];
        let d = xv.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let n = xv.len();
        let backward = Box::new(move |g: &[T]| {
            let mut gx = vec![T::zero(); n];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        });
        Ok(self.tape.record(&[*self], Tensor::from_vec(out_shape, out)?, backward))
    }

    /// Nearest-neighbour ×2 upsampling of an `N×C×H×W` tensor.
    pub fn upsample_nearest2x(&self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let [n, c, h, w] = xv.dims4()?;
        let (h2, w2) = (2 * h, 2 * w);
        let d = xv.data();
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let src = &d[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for y in 0..h2 {
                let row = &src[(y / 2) * w..(y / 2 + 1) * w];
                for x in 0..w2 {
                    dst[y * w2 + x] = row[x / 2];
                }
            }
        }
        let len = xv.len();
        let backward = Box::new(move |g: &[T]| {
            let mut gx = vec![T::zero(); len];
            for p in 0..n * c {
                let src = &g[p * h2 * w2..(p + 1) * h2 * w2];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for y in 0..h2 {
                    for x in 0..w2 {
                        dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                    }
                }
            }
            vec![Some(gx)]
        });
        Ok(self.tape.record(&[*self], Tensor::from_vec(vec![n, c, h2, w2], out)?, backward))
    }
}

impl<T: Real> Tape<T> {
    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let first = values
            .first()
            .ok_or_else(|| TensorError::Invalid("concat: no inputs".into()))?
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        for v in &values[1..] {
            let s = v.shape();
            let compatible = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &sz) in values.iter().zip(&sizes) {
                out.extend_from_slice(&v.data()[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let backward = Box::new(move |g: &[T]| {
            let mut grads: Vec<Vec<T>> = sizes.iter().map(|&sz| Vec::with_capacity(outer * sz * inner)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gi, &sz) in grads.iter_mut().zip(&sizes) {
                    gi.extend_from_slice(&g[offset..offset + sz * inner]);
                    offset += sz * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        });
        Ok(self.record(parts, Tensor::from_vec(shape, out)?, backward))
    }
}
