//! Dense 5-D tensor with NCTHW layout.
//!
//! Shapes are `(N, C, T, H, W)` — batch, channel, time, height, width — with
//! row-major strides (W fastest). Tensors are immutable from the caller's
//! perspective once constructed; operators allocate fresh outputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents `(N, C, T, H, W)`.
pub type Shape5 = [usize; 5];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<S> {
    shape: Shape5,
    data: Vec<S>,
}

/// Debug-mode sentinel: finite operands must never produce a non-finite
/// result. Scans operands only on the failure path.
#[inline]
pub(crate) fn sentinel<S: Scalar>(op: &str, operands: &[&[S]], out: &[S]) {
    if cfg!(debug_assertions) {
        if out.iter().any(|v| !v.is_finite())
            && operands.iter().all(|o| o.iter().all(|v| v.is_finite()))
        {
            panic!("{op}: non-finite output from finite inputs");
        }
    }
}

fn checked_numel(shape: Shape5) -> Result<usize> {
    let mut n: usize = 1;
    for &e in &shape {
        n = n
            .checked_mul(e)
            .ok_or_else(|| Error::Alloc(format!("extent product overflows: {shape:?}")))?;
    }
    // Reject sizes whose byte count cannot be addressed.
    n.checked_mul(std::mem::size_of::<f64>())
        .ok_or_else(|| Error::Alloc(format!("tensor too large: {shape:?}")))?;
    Ok(n)
}

impl<S: Scalar> Tensor5<S> {
    pub fn zeros(shape: Shape5) -> Result<Self> {
        let n = checked_numel(shape)?;
        Ok(Self { shape, data: vec![S::zero(); n] })
    }

    pub fn full(shape: Shape5, value: S) -> Result<Self> {
        let n = checked_numel(shape)?;
        Ok(Self { shape, data: vec![value; n] })
    }

    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape, data: vec![S::zero(); self.data.len()] }
    }

    pub fn from_vec(shape: Shape5, data: Vec<S>) -> Result<Self> {
        let n = checked_numel(shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Fill from a generator in storage order (W fastest).
    pub fn from_fn(shape: Shape5, mut f: impl FnMut(usize, usize, usize, usize, usize) -> S) -> Result<Self> {
        let n = checked_numel(shape)?;
        let mut data = Vec::with_capacity(n);
        let [nn, c, t, h, w] = shape;
        for i in 0..nn {
            for j in 0..c {
                for k in 0..t {
                    for l in 0..h {
                        for m in 0..w {
                            data.push(f(i, j, k, l, m));
                        }
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row-major strides, W fastest.
    #[inline]
    pub fn strides(&self) -> [usize; 5] {
        let [_, c, t, h, w] = self.shape;
        [c * t * h * w, t * h * w, h * w, w, 1]
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
        let [_, cc, tt, hh, ww] = self.shape;
        debug_assert!(n < self.shape[0] && c < cc && t < tt && h < hh && w < ww);
        (((n * cc + c) * tt + t) * hh + h) * ww + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> S {
        self.data[self.idx(n, c, t, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, t: usize, h: usize, w: usize) -> &mut S {
        let i = self.idx(n, c, t, h, w);
        &mut self.data[i]
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// One (n, c) plane of `T*H*W` contiguous elements.
    #[inline]
    pub fn chan(&self, n: usize, c: usize) -> &[S] {
        let [_, cc, t, h, w] = self.shape;
        let plane = t * h * w;
        let start = (n * cc + c) * plane;
        &self.data[start..start + plane]
    }

    #[inline]
    pub fn chan_mut(&mut self, n: usize, c: usize) -> &mut [S] {
        let [_, cc, t, h, w] = self.shape;
        let plane = t * h * w;
        let start = (n * cc + c) * plane;
        &mut self.data[start..start + plane]
    }

    /// Reinterpret the buffer under new extents with the same element count.
    pub fn reshape(self, shape: Shape5) -> Result<Self> {
        let n = checked_numel(shape)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, mut f: impl FnMut(S) -> S) -> Self {
        let data: Vec<S> = self.data.iter().map(|&v| f(v)).collect();
        sentinel("map", &[&self.data], &data);
        Self { shape: self.shape, data }
    }

    pub fn zip_map(&self, other: &Self, mut f: impl FnMut(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "operand shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<S> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        sentinel("zip_map", &[&self.data, &other.data], &data);
        Ok(Self { shape: self.shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    /// In-place accumulate; used by backward passes.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "operand shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `(Σ|a_i|) / numel`; fixed left-to-right summation order.
    pub fn reduce_mean_abs(&self) -> Result<S> {
        if self.data.is_empty() {
            return Err(Error::Domain("reduce_mean_abs of empty tensor".into()));
        }
        let mut acc = S::zero();
        for &v in &self.data {
            acc += v.abs();
        }
        Ok(acc / S::of_usize(self.data.len()))
    }

    pub fn clamp(&self, lo: S, hi: S) -> Self {
        self.map(|v| if v < lo { lo } else if v > hi { hi } else { v })
    }

    /// Reorder channels: output channel `q` takes input channel `perm[q]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        let [n, c, t, h, w] = self.shape;
        if perm.len() != c {
            return Err(Error::Shape(format!(
                "permutation length {} != channel count {c}",
                perm.len()
            )));
        }
        let mut seen = vec![false; c];
        for &p in perm {
            if p >= c || seen[p] {
                return Err(Error::Shape("not a permutation".into()));
            }
            seen[p] = true;
        }
        let mut out = self.zeros_like();
        for i in 0..n {
            for q in 0..c {
                let src = self.chan(i, perm[q]).to_vec();
                out.chan_mut(i, q).copy_from_slice(&src);
            }
        }
        let _ = (t, h, w);
        Ok(out)
    }

    /// Remove the first `k` frames along T.
    pub fn drop_leading_frames(&self, k: usize) -> Result<Self> {
        let [n, c, t, h, w] = self.shape;
        if k >= t {
            return Err(Error::Shape(format!("cannot drop {k} of {t} frames")));
        }
        let mut out = Self::zeros([n, c, t - k, h, w])?;
        let frame = h * w;
        for i in 0..n {
            for j in 0..c {
                let src = self.chan(i, j);
                out.chan_mut(i, j).copy_from_slice(&src[k * frame..]);
            }
        }
        Ok(out)
    }

    /// Prepend `k` zero frames along T (adjoint of `drop_leading_frames`).
    pub fn pad_leading_frames(&self, k: usize) -> Result<Self> {
        let [n, c, t, h, w] = self.shape;
        let mut out = Self::zeros([n, c, t + k, h, w])?;
        let frame = h * w;
        for i in 0..n {
            for j in 0..c {
                let src = self.chan(i, j);
                out.chan_mut(i, j)[k * frame..].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor5<T> {
        Tensor5 {
            shape: self.shape,
            data: self.data.iter().map(|&v| T::of_f64(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_shapes() {
        let t = Tensor5::<f32>::zeros([1, 1, 1, 1, 1]).unwrap();
        assert_eq!(t.numel(), 1);
        assert_eq!(t.at(0, 0, 0, 0, 0), 0.0);

        let t = Tensor5::<f32>::zeros([0, 3, 1, 1, 1]).unwrap();
        assert_eq!(t.numel(), 0);

        let t = Tensor5::<f32>::zeros([2, 3, 4, 5, 6]).unwrap();
        assert_eq!(t.numel(), 720);
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeros_overflow_rejected() {
        let huge = usize::MAX / 2;
        assert!(matches!(
            Tensor5::<f32>::zeros([huge, huge, 1, 1, 1]),
            Err(Error::Alloc(_))
        ));
    }

    #[test]
    fn elementwise_identities() {
        let x = Tensor5::from_vec([1, 2, 1, 1, 3], vec![1.0f32, -2.0, 3.5, 0.0, 4.0, -0.5]).unwrap();
        assert_eq!(x.add(&x.zeros_like()).unwrap(), x);
        assert_eq!(x.scale(1.0), x);
        assert!(x.sub(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor5::<f32>::zeros([1, 1, 1, 1, 2]).unwrap();
        let b = Tensor5::<f32>::zeros([1, 1, 1, 2, 1]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_abs_values() {
        let t = Tensor5::full([2, 1, 3, 1, 1], -2.0f64).unwrap();
        assert_eq!(t.reduce_mean_abs().unwrap(), 2.0);

        // Hand sum: (1 + 1 + 0 + 0) / 4.
        let t = Tensor5::from_vec([1, 1, 1, 1, 4], vec![1.0f32, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.reduce_mean_abs().unwrap(), 0.5);

        let t = Tensor5::<f32>::zeros([1, 2, 2, 1, 1]).unwrap();
        assert_eq!(t.reduce_mean_abs().unwrap(), 0.0);

        let t = Tensor5::<f32>::zeros([0, 1, 1, 1, 1]).unwrap();
        assert!(matches!(t.reduce_mean_abs(), Err(Error::Domain(_))));
    }

    #[test]
    fn strides_are_row_major() {
        let t = Tensor5::<f32>::zeros([2, 3, 4, 5, 6]).unwrap();
        assert_eq!(t.strides(), [360, 120, 30, 6, 1]);
        assert_eq!(t.idx(1, 2, 3, 4, 5), 360 + 240 + 90 + 24 + 5);
    }

    #[test]
    fn frame_ops_round_trip() {
        let x = Tensor5::from_fn([1, 2, 4, 2, 2], |_, c, t, h, w| {
            (c * 100 + t * 10 + h * 2 + w) as f32
        })
        .unwrap();
        let dropped = x.drop_leading_frames(1).unwrap();
        assert_eq!(dropped.shape(), [1, 2, 3, 2, 2]);
        assert_eq!(dropped.at(0, 1, 0, 1, 1), x.at(0, 1, 1, 1, 1));
        let padded = dropped.pad_leading_frames(1).unwrap();
        assert_eq!(padded.shape(), x.shape());
        assert_eq!(padded.at(0, 0, 0, 0, 0), 0.0);
        assert_eq!(padded.at(0, 1, 2, 1, 0), x.at(0, 1, 2, 1, 0));
    }

    #[test]
    fn permute_channels_roundtrip() {
        let x = Tensor5::from_fn([2, 4, 1, 2, 2], |n, c, _, h, w| {
            (n * 1000 + c * 100 + h * 2 + w) as f32
        })
        .unwrap();
        let perm = [2usize, 0, 3, 1];
        let y = x.permute_channels(&perm).unwrap();
        for n in 0..2 {
            for q in 0..4 {
                assert_eq!(y.chan(n, q), x.chan(n, perm[q]));
            }
        }
        // Invert.
        let mut inv = [0usize; 4];
        for (q, &p) in perm.iter().enumerate() {
            inv[p] = q;
        }
        assert_eq!(y.permute_channels(&inv).unwrap(), x);
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "non-finite output")]
    fn sentinel_trips_on_bad_kernel() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 1], vec![2.0f32]).unwrap();
        // A deliberately broken op: finite input, NaN output.
        let _ = x.map(|_| f32::NAN);
    }
}
